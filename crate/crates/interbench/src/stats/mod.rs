//! Statistics over per-task pass/fail outcomes.
//!
//! Everything downstream of execution is computed here: pass rates, deltas
//! against direct generation, phi correlations between outcome columns,
//! ground-truth-intermediate improvements, improvement counts, and cross-model
//! averages. Excluded cells (infrastructure trouble, skipped toolchains)
//! never enter a numerator or denominator.

mod render;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::bench::LanguageId;
use crate::prompting::Strategy;
use crate::sandbox::VerdictStatus;
pub use render::{render_csv, render_markdown, CellKind, CellValue, RateTable, TableFamily};
pub(crate) use render::csv_escape;

/// Full-granularity outcome class persisted per record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordStatus {
    Pass,
    Fail,
    CompileError,
    RuntimeError,
    Timeout,
    InfraError,
    /// Job never ran because the target's toolchain is unavailable.
    SkippedToolchain,
}

impl RecordStatus {
    pub fn from_verdict(status: VerdictStatus) -> RecordStatus {
        match status {
            VerdictStatus::Pass => RecordStatus::Pass,
            VerdictStatus::Fail => RecordStatus::Fail,
            VerdictStatus::CompileError => RecordStatus::CompileError,
            VerdictStatus::RuntimeError => RecordStatus::RuntimeError,
            VerdictStatus::Timeout => RecordStatus::Timeout,
            VerdictStatus::InfraError => RecordStatus::InfraError,
        }
    }

    pub fn passed(self) -> bool {
        self == RecordStatus::Pass
    }

    /// Excluded outcomes reflect harness trouble, not model quality, and are
    /// dropped from every statistic.
    pub fn excluded(self) -> bool {
        matches!(self, RecordStatus::InfraError | RecordStatus::SkippedToolchain)
    }
}

/// One scored (or skipped) generation attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRecord {
    pub task_number: u32,
    pub model_id: String,
    pub target: LanguageId,
    pub strategy: Strategy,
    /// 1 except for repeat strategies, which record each round.
    pub round: u32,
    pub passed: bool,
    pub status: RecordStatus,
    /// Key of the transcript that produced this outcome; empty for skips.
    #[serde(default)]
    pub transcript_ref: String,
}

/// Identifies one outcome column: a (target, strategy, round) configuration
/// for a single model.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ColumnKey {
    pub target: LanguageId,
    pub strategy: Strategy,
    pub round: u32,
}

impl ColumnKey {
    pub fn new(target: LanguageId, strategy: Strategy, round: u32) -> ColumnKey {
        ColumnKey {
            target,
            strategy,
            round,
        }
    }

    /// Single-stage baseline for `target`.
    pub fn direct(target: LanguageId) -> ColumnKey {
        ColumnKey::new(target, Strategy::Direct, 1)
    }

    /// Pipeline with intermediate language `x` into `target`.
    pub fn intermediate(x: LanguageId, target: LanguageId) -> ColumnKey {
        ColumnKey::new(target, Strategy::IntermediateLang(x), 1)
    }

    /// Pipeline seeded with the dataset's own solution in `x`.
    pub fn ground_truth(x: LanguageId, target: LanguageId) -> ColumnKey {
        ColumnKey::new(target, Strategy::GroundTruth(x), 1)
    }

    /// Round `round` of a k-round repeat run.
    pub fn repeat_round(target: LanguageId, k: u32, round: u32) -> ColumnKey {
        ColumnKey::new(target, Strategy::Repeat(k), round)
    }
}

/// Tri-state outcome for one task in one column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cell {
    Pass,
    Fail,
    Excluded,
}

impl Cell {
    fn from_status(status: RecordStatus) -> Cell {
        if status.excluded() {
            Cell::Excluded
        } else if status.passed() {
            Cell::Pass
        } else {
            Cell::Fail
        }
    }
}

/// Outcomes of one model arranged as tasks × columns; rows are sorted by
/// task number and all columns have equal length. Tasks a column never saw
/// are excluded cells.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OutcomeMatrix {
    tasks: Vec<u32>,
    columns: BTreeMap<ColumnKey, Vec<Cell>>,
}

impl OutcomeMatrix {
    pub fn from_records<'a, I>(records: I) -> OutcomeMatrix
    where
        I: IntoIterator<Item = &'a OutcomeRecord>,
    {
        let mut raw: BTreeMap<ColumnKey, BTreeMap<u32, Cell>> = BTreeMap::new();
        let mut tasks: BTreeSet<u32> = BTreeSet::new();
        for record in records {
            tasks.insert(record.task_number);
            let key = ColumnKey::new(record.target, record.strategy, record.round);
            raw.entry(key)
                .or_default()
                .insert(record.task_number, Cell::from_status(record.status));
        }
        let tasks: Vec<u32> = tasks.into_iter().collect();
        let columns = raw
            .into_iter()
            .map(|(key, by_task)| {
                let cells = tasks
                    .iter()
                    .map(|t| by_task.get(t).copied().unwrap_or(Cell::Excluded))
                    .collect();
                (key, cells)
            })
            .collect();
        OutcomeMatrix { tasks, columns }
    }

    /// Split a record stream into one matrix per model.
    pub fn per_model<'a, I>(records: I) -> BTreeMap<String, OutcomeMatrix>
    where
        I: IntoIterator<Item = &'a OutcomeRecord>,
    {
        let mut by_model: BTreeMap<String, Vec<&OutcomeRecord>> = BTreeMap::new();
        for record in records {
            by_model
                .entry(record.model_id.clone())
                .or_default()
                .push(record);
        }
        by_model
            .into_iter()
            .map(|(model, records)| (model, OutcomeMatrix::from_records(records)))
            .collect()
    }

    pub fn tasks(&self) -> &[u32] {
        &self.tasks
    }

    pub fn column_keys(&self) -> impl Iterator<Item = &ColumnKey> {
        self.columns.keys()
    }

    pub fn column(&self, key: &ColumnKey) -> Result<&[Cell], StatsError> {
        self.columns
            .get(key)
            .map(Vec::as_slice)
            .ok_or_else(|| StatsError::MissingColumn {
                column: describe_column(key),
            })
    }

    pub fn has_column(&self, key: &ColumnKey) -> bool {
        self.columns.contains_key(key)
    }
}

fn describe_column(key: &ColumnKey) -> String {
    format!("{} {} round {}", key.target, key.strategy, key.round)
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum StatsError {
    #[error("every cell in the column is excluded")]
    AllExcluded,
    #[error("vectors have different lengths ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },
    #[error("need at least 2 pairs, got {got}")]
    TooFewPairs { got: usize },
    #[error("matrix has no column `{column}`")]
    MissingColumn { column: String },
    #[error("tables disagree on labels: {reason}")]
    LabelMismatch { reason: String },
    #[error("no input tables")]
    NoTables,
}

/// A pass rate together with the counts it came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateSummary {
    pub rate: f64,
    pub passes: usize,
    /// Judged cells (pass + fail).
    pub n: usize,
    pub excluded: usize,
}

/// Passes over judged cells; excluded cells leave both numerator and
/// denominator.
pub fn rate_summary(cells: &[Cell]) -> Result<RateSummary, StatsError> {
    let mut passes = 0usize;
    let mut fails = 0usize;
    let mut excluded = 0usize;
    for cell in cells {
        match cell {
            Cell::Pass => passes += 1,
            Cell::Fail => fails += 1,
            Cell::Excluded => excluded += 1,
        }
    }
    let n = passes + fails;
    if n == 0 {
        return Err(StatsError::AllExcluded);
    }
    Ok(RateSummary {
        rate: passes as f64 / n as f64,
        passes,
        n,
        excluded,
    })
}

pub fn pass_rate(cells: &[Cell]) -> Result<f64, StatsError> {
    rate_summary(cells).map(|s| s.rate)
}

/// Rate difference of a strategy column against the direct column for the
/// same target.
pub fn delta_vs_direct(
    matrix: &OutcomeMatrix,
    key: &ColumnKey,
) -> Result<f64, StatsError> {
    let strategy_rate = pass_rate(matrix.column(key)?)?;
    let direct_rate = pass_rate(matrix.column(&ColumnKey::direct(key.target))?)?;
    Ok(strategy_rate - direct_rate)
}

/// Phi coefficient of two paired boolean vectors:
/// (n11·n00 − n10·n01) / sqrt(n1•·n0•·n•1·n•0).
///
/// `Ok(None)` when a marginal is zero (one vector is constant), where the
/// estimator is undefined.
pub fn phi_correlation(x: &[bool], y: &[bool]) -> Result<Option<f64>, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(StatsError::TooFewPairs { got: x.len() });
    }
    let mut n11 = 0f64;
    let mut n10 = 0f64;
    let mut n01 = 0f64;
    let mut n00 = 0f64;
    for (&a, &b) in x.iter().zip(y) {
        match (a, b) {
            (true, true) => n11 += 1.0,
            (true, false) => n10 += 1.0,
            (false, true) => n01 += 1.0,
            (false, false) => n00 += 1.0,
        }
    }
    let row1 = n11 + n10;
    let row0 = n01 + n00;
    let col1 = n11 + n01;
    let col0 = n10 + n00;
    if row1 == 0.0 || row0 == 0.0 || col1 == 0.0 || col0 == 0.0 {
        return Ok(None);
    }
    Ok(Some((n11 * n00 - n10 * n01) / (row1 * row0 * col1 * col0).sqrt()))
}

/// Both correlations describing how predictive direct generation in `x` is:
/// against the x-into-target pipeline, and against direct target generation
/// as a task-difficulty control.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub intermediate: LanguageId,
    pub target: LanguageId,
    /// phi(direct-x, x→target), `None` when undefined.
    pub inter_vs_pipeline: Option<f64>,
    /// phi(direct-x, direct-target).
    pub inter_vs_direct: Option<f64>,
    /// Pairwise-complete task counts backing each correlation.
    pub n_pipeline: usize,
    pub n_direct: usize,
}

/// Pairwise-complete boolean projections of two columns.
fn paired(a: &[Cell], b: &[Cell]) -> (Vec<bool>, Vec<bool>) {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (&ca, &cb) in a.iter().zip(b) {
        if let (pass_a @ (Cell::Pass | Cell::Fail), pass_b @ (Cell::Pass | Cell::Fail)) = (ca, cb)
        {
            xs.push(pass_a == Cell::Pass);
            ys.push(pass_b == Cell::Pass);
        }
    }
    (xs, ys)
}

pub fn correlation_report(
    matrix: &OutcomeMatrix,
    intermediate: LanguageId,
    target: LanguageId,
) -> Result<CorrelationReport, StatsError> {
    let direct_x = matrix.column(&ColumnKey::direct(intermediate))?;
    let direct_y = matrix.column(&ColumnKey::direct(target))?;
    let pipeline = matrix.column(&ColumnKey::intermediate(intermediate, target))?;

    let (px, py) = paired(direct_x, pipeline);
    let (dx, dy) = paired(direct_x, direct_y);
    Ok(CorrelationReport {
        intermediate,
        target,
        inter_vs_pipeline: phi_correlation(&px, &py)?,
        inter_vs_direct: phi_correlation(&dx, &dy)?,
        n_pipeline: px.len(),
        n_direct: dx.len(),
    })
}

/// Mean, over (x, target) pairs, of how much seeding the pipeline with the
/// dataset's own x-solution beats the model-generated x-intermediate.
pub fn gt_improvement(
    matrix: &OutcomeMatrix,
    pairs: &[(LanguageId, LanguageId)],
) -> Result<f64, StatsError> {
    if pairs.is_empty() {
        return Err(StatsError::TooFewPairs { got: 0 });
    }
    let mut total = 0f64;
    for &(x, target) in pairs {
        let gt = pass_rate(matrix.column(&ColumnKey::ground_truth(x, target))?)?;
        let generated = pass_rate(matrix.column(&ColumnKey::intermediate(x, target))?)?;
        total += gt - generated;
    }
    Ok(total / pairs.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImprovementMode {
    /// Count only tasks where direct generation in the intermediate language
    /// itself passed: (1,0) → (1,1).
    Conditioned,
    /// Count every task direct target generation failed but the pipeline
    /// passed: (·,0) → (·,1).
    Unconditioned,
}

/// Number of tasks rescued by going through intermediate `x`: direct target
/// generation failed, the x-pipeline passed. Tasks with any required cell
/// excluded are skipped.
pub fn improvement_counts(
    matrix: &OutcomeMatrix,
    mode: ImprovementMode,
    x: LanguageId,
    target: LanguageId,
) -> Result<usize, StatsError> {
    let direct_y = matrix.column(&ColumnKey::direct(target))?;
    let pipeline = matrix.column(&ColumnKey::intermediate(x, target))?;
    let direct_x = match mode {
        ImprovementMode::Conditioned => Some(matrix.column(&ColumnKey::direct(x))?),
        ImprovementMode::Unconditioned => None,
    };

    let mut count = 0usize;
    for i in 0..direct_y.len() {
        let rescued = direct_y[i] == Cell::Fail && pipeline[i] == Cell::Pass;
        if !rescued {
            // Excluded cells fail both equality tests, so they drop out here.
            continue;
        }
        match direct_x {
            Some(dx) => {
                if dx[i] == Cell::Pass {
                    count += 1;
                }
            }
            None => count += 1,
        }
    }
    Ok(count)
}

/// Cell-wise unweighted mean over per-model tables sharing one layout.
/// Empty cells stay empty; a cell's mean covers the models where it has a
/// value; undefined cells are skipped (and stay undefined if no model
/// defines them).
pub fn aggregate_average(tables: &[RateTable]) -> Result<RateTable, StatsError> {
    let first = tables.first().ok_or(StatsError::NoTables)?;
    for table in &tables[1..] {
        if table.row_labels != first.row_labels || table.col_labels != first.col_labels {
            return Err(StatsError::LabelMismatch {
                reason: format!("`{}` vs `{}`", table.title, first.title),
            });
        }
    }

    let mut out = RateTable::new(
        format!("Average over {} models", tables.len()),
        first.row_labels.clone(),
        first.col_labels.clone(),
    );
    for r in 0..first.row_labels.len() {
        for c in 0..first.col_labels.len() {
            let mut values: Vec<(f64, CellKind)> = Vec::new();
            let mut n_total = 0usize;
            let mut excluded_total = 0usize;
            let mut saw_undefined = false;
            let mut saw_any = false;
            for table in tables {
                match table.cell(r, c) {
                    CellValue::Empty => {}
                    CellValue::Undefined => {
                        saw_any = true;
                        saw_undefined = true;
                    }
                    CellValue::Val {
                        value,
                        kind,
                        n,
                        excluded,
                    } => {
                        saw_any = true;
                        values.push((*value, *kind));
                        n_total += n;
                        excluded_total += excluded;
                    }
                }
            }
            let cell = if !saw_any {
                CellValue::Empty
            } else if values.is_empty() {
                debug_assert!(saw_undefined);
                CellValue::Undefined
            } else {
                let mean = values.iter().map(|(v, _)| v).sum::<f64>() / values.len() as f64;
                CellValue::Val {
                    value: mean,
                    kind: values[0].1,
                    n: n_total,
                    excluded: excluded_total,
                }
            };
            out.set(r, c, cell);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompting::Strategy;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn record(
        task: u32,
        target: LanguageId,
        strategy: Strategy,
        round: u32,
        status: RecordStatus,
    ) -> OutcomeRecord {
        OutcomeRecord {
            task_number: task,
            model_id: "m".into(),
            target,
            strategy,
            round,
            passed: status.passed(),
            status,
            transcript_ref: String::new(),
        }
    }

    fn bool_col(values: &[Option<bool>]) -> Vec<Cell> {
        values
            .iter()
            .map(|v| match v {
                Some(true) => Cell::Pass,
                Some(false) => Cell::Fail,
                None => Cell::Excluded,
            })
            .collect()
    }

    /// Pearson correlation on 0/1 encodings, written naively as an
    /// independent check.
    fn pearson01(x: &[bool], y: &[bool]) -> Option<f64> {
        let n = x.len() as f64;
        let xs: Vec<f64> = x.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        let ys: Vec<f64> = y.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let cov: f64 = xs
            .iter()
            .zip(&ys)
            .map(|(a, b)| (a - mx) * (b - my))
            .sum();
        let vx: f64 = xs.iter().map(|a| (a - mx).powi(2)).sum();
        let vy: f64 = ys.iter().map(|b| (b - my).powi(2)).sum();
        if vx == 0.0 || vy == 0.0 {
            return None;
        }
        Some(cov / (vx.sqrt() * vy.sqrt()))
    }

    #[test]
    fn pass_rate_counts_and_excludes() {
        let cells = bool_col(&[Some(true), Some(true), Some(false), None, Some(true)]);
        let s = rate_summary(&cells).unwrap();
        assert_eq!(s.passes, 3);
        assert_eq!(s.n, 4);
        assert_eq!(s.excluded, 1);
        assert!((s.rate - 0.75).abs() < 1e-15);
    }

    #[test]
    fn all_pass_is_one_and_all_excluded_errors() {
        assert_eq!(pass_rate(&bool_col(&[Some(true); 5])).unwrap(), 1.0);
        assert_eq!(
            pass_rate(&bool_col(&[None, None])).unwrap_err(),
            StatsError::AllExcluded
        );
    }

    #[test]
    fn pass_rate_matches_counting_oracle_on_random_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let cells: Vec<Cell> = (0..164)
                .map(|_| match rng.gen_range(0..10) {
                    0 => Cell::Excluded,
                    n if n < 5 => Cell::Pass,
                    _ => Cell::Fail,
                })
                .collect();
            let passes = cells.iter().filter(|c| **c == Cell::Pass).count();
            let judged = cells.iter().filter(|c| **c != Cell::Excluded).count();
            match pass_rate(&cells) {
                Ok(rate) => {
                    assert!(judged > 0);
                    assert_eq!(rate, passes as f64 / judged as f64);
                }
                Err(StatsError::AllExcluded) => assert_eq!(judged, 0),
                Err(other) => panic!("{other}"),
            }
        }
    }

    #[test]
    fn delta_between_observed_rates() {
        // 0.311 vs 0.268 is the worked example for sign and rounding.
        assert_eq!(format!("{:+.1}%", (0.311 - 0.268) * 100.0), "+4.3%");
        assert_eq!(format!("{:+.1}%", 0.0 * 100.0), "+0.0%");
        assert_eq!(format!("{:+.1}%", (0.0f64 - 1.0) * 100.0), "-100.0%");
    }

    #[test]
    fn phi_agrees_with_independent_pearson() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut defined = 0;
        for _ in 0..300 {
            let x: Vec<bool> = (0..164).map(|_| rng.gen_bool(0.4)).collect();
            let y: Vec<bool> = (0..164).map(|_| rng.gen_bool(0.6)).collect();
            let ours = phi_correlation(&x, &y).unwrap();
            let oracle = pearson01(&x, &y);
            match (ours, oracle) {
                (Some(a), Some(b)) => {
                    defined += 1;
                    assert!((a - b).abs() < 1e-12, "{a} vs {b}");
                }
                (None, None) => {}
                other => panic!("definedness disagreement: {other:?}"),
            }
        }
        assert!(defined > 250, "random vectors should mostly be non-constant");
    }

    #[test]
    fn phi_errors() {
        assert_eq!(
            phi_correlation(&[true], &[true, false]).unwrap_err(),
            StatsError::LengthMismatch { left: 1, right: 2 }
        );
        assert_eq!(
            phi_correlation(&[true], &[false]).unwrap_err(),
            StatsError::TooFewPairs { got: 1 }
        );
    }

    #[test]
    fn phi_constant_vector_is_undefined() {
        let x = vec![true, true, true, true];
        let y = vec![true, false, true, false];
        assert_eq!(phi_correlation(&x, &y).unwrap(), None);
        assert_eq!(phi_correlation(&y, &x).unwrap(), None);
    }

    proptest! {
        #[test]
        fn phi_properties(pairs in proptest::collection::vec((any::<bool>(), any::<bool>()), 2..60)) {
            let x: Vec<bool> = pairs.iter().map(|p| p.0).collect();
            let y: Vec<bool> = pairs.iter().map(|p| p.1).collect();
            let not_x: Vec<bool> = x.iter().map(|b| !b).collect();
            let not_y: Vec<bool> = y.iter().map(|b| !b).collect();

            // Self-correlation and anti-correlation whenever defined.
            if let Some(v) = phi_correlation(&x, &x).unwrap() {
                prop_assert!((v - 1.0).abs() < 1e-12);
            }
            if let Some(v) = phi_correlation(&x, &not_x).unwrap() {
                prop_assert!((v + 1.0).abs() < 1e-12);
            }
            // Symmetry.
            let ab = phi_correlation(&x, &y).unwrap();
            let ba = phi_correlation(&y, &x).unwrap();
            match (ab, ba) {
                (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-12),
                (None, None) => {}
                other => prop_assert!(false, "symmetry broke definedness: {other:?}"),
            }
            // Relabeling pass/fail in both vectors leaves phi unchanged.
            let relabeled = phi_correlation(&not_x, &not_y).unwrap();
            match (ab, relabeled) {
                (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-12),
                (None, None) => {}
                other => prop_assert!(false, "relabeling broke definedness: {other:?}"),
            }
        }
    }

    fn six_task_matrix() -> OutcomeMatrix {
        // direct-cpp:  P P F F P F
        // direct-go:   P F P F F F
        // cpp→go:      P P F F P F   (equals direct-cpp's pattern)
        let mut records = Vec::new();
        let cpp_direct = [true, true, false, false, true, false];
        let go_direct = [true, false, true, false, false, false];
        let pipeline = [true, true, false, false, true, false];
        for t in 0..6u32 {
            let s = |b: bool| if b { RecordStatus::Pass } else { RecordStatus::Fail };
            records.push(record(t, LanguageId::Cpp, Strategy::Direct, 1, s(cpp_direct[t as usize])));
            records.push(record(t, LanguageId::Go, Strategy::Direct, 1, s(go_direct[t as usize])));
            records.push(record(
                t,
                LanguageId::Go,
                Strategy::IntermediateLang(LanguageId::Cpp),
                1,
                s(pipeline[t as usize]),
            ));
        }
        OutcomeMatrix::from_records(&records)
    }

    #[test]
    fn correlation_report_matches_hand_contingency() {
        let matrix = six_task_matrix();
        let report =
            correlation_report(&matrix, LanguageId::Cpp, LanguageId::Go).unwrap();
        // x vs pipeline: identical vectors → 1.
        assert!((report.inter_vs_pipeline.unwrap() - 1.0).abs() < 1e-12);
        // x vs direct-go contingency: n11=1 n10=2 n01=1 n00=2 →
        // (1·2 − 2·1)/sqrt(3·3·2·4) = 0.
        assert!((report.inter_vs_direct.unwrap() - 0.0).abs() < 1e-12);
        assert_eq!(report.n_pipeline, 6);
        assert_eq!(report.n_direct, 6);
    }

    #[test]
    fn correlation_report_drops_pairs_with_excluded_cells() {
        let mut records = Vec::new();
        let s = |b: bool| if b { RecordStatus::Pass } else { RecordStatus::Fail };
        for t in 0..5u32 {
            let st = if t == 0 {
                RecordStatus::InfraError
            } else {
                s(t % 2 == 0)
            };
            records.push(record(t, LanguageId::Cpp, Strategy::Direct, 1, st));
            records.push(record(t, LanguageId::Go, Strategy::Direct, 1, s(t % 2 == 1)));
            records.push(record(
                t,
                LanguageId::Go,
                Strategy::IntermediateLang(LanguageId::Cpp),
                1,
                s(t < 3),
            ));
        }
        let matrix = OutcomeMatrix::from_records(&records);
        let report = correlation_report(&matrix, LanguageId::Cpp, LanguageId::Go).unwrap();
        assert_eq!(report.n_pipeline, 4, "excluded pair dropped");
        assert_eq!(report.n_direct, 4);
    }

    #[test]
    fn missing_column_is_reported_with_its_name() {
        let matrix = six_task_matrix();
        let err = correlation_report(&matrix, LanguageId::Rust, LanguageId::Go).unwrap_err();
        match err {
            StatsError::MissingColumn { column } => assert!(column.contains("direct")),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn gt_improvement_zero_when_identical_and_mean_otherwise() {
        let mut records = Vec::new();
        let s = |b: bool| if b { RecordStatus::Pass } else { RecordStatus::Fail };
        // Pair 1 (cpp→go): gt 4/5, generated 3/5 → +0.2
        // Pair 2 (cpp→rust): gt 2/5, generated 2/5 → 0.0
        for t in 0..5u32 {
            records.push(record(
                t,
                LanguageId::Go,
                Strategy::GroundTruth(LanguageId::Cpp),
                1,
                s(t != 0),
            ));
            records.push(record(
                t,
                LanguageId::Go,
                Strategy::IntermediateLang(LanguageId::Cpp),
                1,
                s(t > 1),
            ));
            records.push(record(
                t,
                LanguageId::Rust,
                Strategy::GroundTruth(LanguageId::Cpp),
                1,
                s(t < 2),
            ));
            records.push(record(
                t,
                LanguageId::Rust,
                Strategy::IntermediateLang(LanguageId::Cpp),
                1,
                s(t >= 3),
            ));
        }
        let matrix = OutcomeMatrix::from_records(&records);
        let pairs = [
            (LanguageId::Cpp, LanguageId::Go),
            (LanguageId::Cpp, LanguageId::Rust),
        ];
        let avg = gt_improvement(&matrix, &pairs).unwrap();
        assert!((avg - 0.1).abs() < 1e-12, "{avg}");

        let one_pair = [(LanguageId::Cpp, LanguageId::Rust)];
        assert!((gt_improvement(&matrix, &one_pair).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn improvement_counts_by_hand() {
        // task:        0  1  2  3  4
        // direct-cpp:  P  F  P  P  F
        // direct-go:   F  F  F  P  F
        // cpp→go:      P  P  F  P  P
        // unconditioned rescues: tasks 0,1,4 → 3
        // conditioned (direct-cpp must pass): task 0 only → 1
        let mut records = Vec::new();
        let s = |b: bool| if b { RecordStatus::Pass } else { RecordStatus::Fail };
        let dx = [true, false, true, true, false];
        let dy = [false, false, false, true, false];
        let py = [true, true, false, true, true];
        for t in 0..5u32 {
            records.push(record(t, LanguageId::Cpp, Strategy::Direct, 1, s(dx[t as usize])));
            records.push(record(t, LanguageId::Go, Strategy::Direct, 1, s(dy[t as usize])));
            records.push(record(
                t,
                LanguageId::Go,
                Strategy::IntermediateLang(LanguageId::Cpp),
                1,
                s(py[t as usize]),
            ));
        }
        let matrix = OutcomeMatrix::from_records(&records);
        assert_eq!(
            improvement_counts(&matrix, ImprovementMode::Unconditioned, LanguageId::Cpp, LanguageId::Go)
                .unwrap(),
            3
        );
        assert_eq!(
            improvement_counts(&matrix, ImprovementMode::Conditioned, LanguageId::Cpp, LanguageId::Go)
                .unwrap(),
            1
        );
    }

    #[test]
    fn pipeline_equal_to_direct_rescues_nothing() {
        let matrix = six_task_matrix();
        // Rebuild with pipeline == direct-go.
        let mut records = Vec::new();
        let s = |b: bool| if b { RecordStatus::Pass } else { RecordStatus::Fail };
        let go_direct = [true, false, true, false, false, false];
        for t in 0..6u32 {
            records.push(record(t, LanguageId::Cpp, Strategy::Direct, 1, s(true)));
            records.push(record(t, LanguageId::Go, Strategy::Direct, 1, s(go_direct[t as usize])));
            records.push(record(
                t,
                LanguageId::Go,
                Strategy::IntermediateLang(LanguageId::Cpp),
                1,
                s(go_direct[t as usize]),
            ));
        }
        let same = OutcomeMatrix::from_records(&records);
        for mode in [ImprovementMode::Conditioned, ImprovementMode::Unconditioned] {
            assert_eq!(
                improvement_counts(&same, mode, LanguageId::Cpp, LanguageId::Go).unwrap(),
                0
            );
        }
        drop(matrix);
    }

    proptest! {
        #[test]
        fn conditioned_never_exceeds_unconditioned(
            cells in proptest::collection::vec((0u8..3, 0u8..3, 0u8..3), 1..30)
        ) {
            let to_status = |v: u8| match v {
                0 => RecordStatus::Pass,
                1 => RecordStatus::Fail,
                _ => RecordStatus::InfraError,
            };
            let mut records = Vec::new();
            for (t, (a, b, c)) in cells.iter().enumerate() {
                let t = t as u32;
                records.push(record(t, LanguageId::Cpp, Strategy::Direct, 1, to_status(*a)));
                records.push(record(t, LanguageId::Go, Strategy::Direct, 1, to_status(*b)));
                records.push(record(
                    t,
                    LanguageId::Go,
                    Strategy::IntermediateLang(LanguageId::Cpp),
                    1,
                    to_status(*c),
                ));
            }
            let matrix = OutcomeMatrix::from_records(&records);
            let c = improvement_counts(&matrix, ImprovementMode::Conditioned, LanguageId::Cpp, LanguageId::Go).unwrap();
            let u = improvement_counts(&matrix, ImprovementMode::Unconditioned, LanguageId::Cpp, LanguageId::Go).unwrap();
            prop_assert!(c <= u);
        }
    }

    #[test]
    fn matrix_fills_unseen_tasks_with_excluded() {
        let records = vec![
            record(0, LanguageId::Go, Strategy::Direct, 1, RecordStatus::Pass),
            record(5, LanguageId::Go, Strategy::Direct, 1, RecordStatus::Fail),
            record(
                5,
                LanguageId::Go,
                Strategy::IntermediateLang(LanguageId::Cpp),
                1,
                RecordStatus::Pass,
            ),
        ];
        let matrix = OutcomeMatrix::from_records(&records);
        assert_eq!(matrix.tasks(), &[0, 5]);
        let pipeline = matrix
            .column(&ColumnKey::intermediate(LanguageId::Cpp, LanguageId::Go))
            .unwrap();
        assert_eq!(pipeline, &[Cell::Excluded, Cell::Pass]);
    }

    #[test]
    fn excluding_one_task_shrinks_n_by_one() {
        let cells = bool_col(&[Some(true), Some(false), Some(true), Some(true)]);
        let with_exclusion = bool_col(&[Some(true), Some(false), None, Some(true)]);
        let a = rate_summary(&cells).unwrap();
        let b = rate_summary(&with_exclusion).unwrap();
        assert_eq!(a.n - 1, b.n);
    }

    #[test]
    fn per_model_splits_records() {
        let mut r1 = record(0, LanguageId::Go, Strategy::Direct, 1, RecordStatus::Pass);
        r1.model_id = "alpha".into();
        let mut r2 = record(0, LanguageId::Go, Strategy::Direct, 1, RecordStatus::Fail);
        r2.model_id = "beta".into();
        let matrices = OutcomeMatrix::per_model([&r1, &r2].into_iter().cloned().collect::<Vec<_>>().iter());
        assert_eq!(matrices.len(), 2);
        assert!(matrices["alpha"].has_column(&ColumnKey::direct(LanguageId::Go)));
    }
}
