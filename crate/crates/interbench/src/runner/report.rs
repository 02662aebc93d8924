//! Turns stored outcome records into the report tables, one family of
//! tables per file pair (`<stem>.csv` + `<stem>.md`).
//!
//! Every builder works from the same per-model pass/fail matrix. Cells the
//! data cannot support are rendered as undefined ("—"); column combinations
//! that were never run stay empty ("-"). A family whose inputs are entirely
//! absent is an [`ReportError::InsufficientData`] error naming the columns it
//! looked for.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use crate::bench::LanguageId;
use crate::prompting::Strategy;
use crate::stats::{
    aggregate_average, correlation_report, csv_escape, delta_vs_direct, improvement_counts,
    rate_summary, render_csv, render_markdown, CellKind, CellValue, ColumnKey, ImprovementMode,
    OutcomeMatrix, OutcomeRecord, RateTable, StatsError, TableFamily,
};

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("insufficient data for `{}`: no usable columns; looked for [{}]", .family.file_stem(), .missing.join(", "))]
    InsufficientData {
        family: TableFamily,
        missing: Vec<String>,
    },
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("report i/o at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Human-readable name of a column for "missing data" messages.
fn col_name(key: &ColumnKey) -> String {
    if key.round > 1 || matches!(key.strategy, Strategy::Repeat(_)) {
        format!("{}@{} round {}", key.strategy, key.target, key.round)
    } else {
        format!("{}@{}", key.strategy, key.target)
    }
}

/// Tracks which columns a builder reached for but did not find.
#[derive(Default)]
struct Missing(BTreeSet<String>);

impl Missing {
    fn note(&mut self, key: &ColumnKey) {
        self.0.insert(col_name(key));
    }

    /// For families with no rows to enumerate: name the column pattern that
    /// would have been needed.
    fn note_pattern(&mut self, pattern: String) {
        self.0.insert(pattern);
    }

    fn into_vec(self) -> Vec<String> {
        self.0.into_iter().collect()
    }
}

fn targets_of(matrix: &OutcomeMatrix) -> Vec<LanguageId> {
    matrix
        .column_keys()
        .map(|k| k.target)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

fn strategies_of(matrix: &OutcomeMatrix) -> BTreeSet<Strategy> {
    matrix.column_keys().map(|k| k.strategy).collect()
}

/// Languages that appear as the intermediate of the given strategy shape.
fn intermediates_of(
    strategies: &BTreeSet<Strategy>,
    pick: impl Fn(Strategy) -> Option<LanguageId>,
) -> Vec<LanguageId> {
    LanguageId::ALL
        .into_iter()
        .filter(|&l| strategies.iter().any(|&s| pick(s) == Some(l)))
        .collect()
}

/// Absolute pass rate of one column as a table cell.
fn rate_cell(matrix: &OutcomeMatrix, key: &ColumnKey, missing: &mut Missing) -> CellValue {
    match matrix.column(key) {
        Ok(cells) => match rate_summary(cells) {
            Ok(s) => CellValue::val(s.rate, CellKind::Rate, s.n, s.excluded),
            Err(_) => CellValue::Undefined,
        },
        Err(_) => {
            missing.note(key);
            CellValue::Empty
        }
    }
}

/// Rate difference of one column against its target's direct column.
fn delta_cell(matrix: &OutcomeMatrix, key: &ColumnKey, missing: &mut Missing) -> CellValue {
    if !matrix.has_column(key) {
        missing.note(key);
        return CellValue::Empty;
    }
    let direct_key = ColumnKey::direct(key.target);
    if !matrix.has_column(&direct_key) {
        missing.note(&direct_key);
        return CellValue::Undefined;
    }
    match delta_vs_direct(matrix, key) {
        Ok(delta) => {
            let summary = matrix
                .column(key)
                .ok()
                .and_then(|cells| rate_summary(cells).ok());
            match summary {
                Some(s) => CellValue::val(delta, CellKind::Delta, s.n, s.excluded),
                None => CellValue::Undefined,
            }
        }
        Err(_) => CellValue::Undefined,
    }
}

/// Whether a table holds at least one value of the kind its family is about.
/// A direct-generation reference row alone does not make a gt or delta table
/// worth emitting.
fn has_family_val(table: &RateTable, family: TableFamily) -> bool {
    let mut cells = (0..table.row_labels.len())
        .flat_map(|r| (0..table.col_labels.len()).map(move |c| (r, c)));
    cells.any(|(r, c)| match table.cell(r, c) {
        CellValue::Val { kind, .. } => match family {
            TableFamily::Delta | TableFamily::Avg | TableFamily::Repeat => *kind == CellKind::Delta,
            TableFamily::Gt => *kind == CellKind::Rate && r > 0,
            TableFamily::Corr => *kind == CellKind::Correlation,
            TableFamily::Improve => *kind == CellKind::Count,
        },
        _ => false,
    })
}

const DIRECT_ROW: &str = "Direct generation";

/// Representation rows present in a matrix, in a fixed presentation order:
/// concrete languages first, then natural language, then pseudo code.
fn representation_rows(strategies: &BTreeSet<Strategy>) -> Vec<Strategy> {
    let mut rows: Vec<Strategy> = intermediates_of(strategies, |s| match s {
        Strategy::IntermediateLang(l) => Some(l),
        _ => None,
    })
    .into_iter()
    .map(Strategy::IntermediateLang)
    .collect();
    if strategies.contains(&Strategy::NaturalLanguage) {
        rows.push(Strategy::NaturalLanguage);
    }
    if strategies.contains(&Strategy::PseudoCode) {
        rows.push(Strategy::PseudoCode);
    }
    rows
}

/// The headline table: a direct-generation row of absolute pass rates, then
/// one row per intermediate representation holding deltas against direct.
fn build_delta_table(
    model: &str,
    matrix: &OutcomeMatrix,
    missing: &mut Missing,
) -> RateTable {
    build_delta_shaped(model, matrix, missing, &targets_of(matrix), None)
}

/// Same layout as the delta table over an explicit column/row universe, so
/// tables from different models can be averaged cell-wise.
fn build_delta_shaped(
    model: &str,
    matrix: &OutcomeMatrix,
    missing: &mut Missing,
    targets: &[LanguageId],
    rows_universe: Option<&[Strategy]>,
) -> RateTable {
    let strategies = strategies_of(matrix);
    let rows: Vec<Strategy> = match rows_universe {
        Some(u) => u.to_vec(),
        None => representation_rows(&strategies),
    };
    if rows.is_empty() {
        for &t in targets {
            missing.note_pattern(format!("inter:<x>@{t}"));
        }
    }
    let mut labels = vec![DIRECT_ROW.to_string()];
    labels.extend(rows.iter().map(|s| s.representation_label()));
    let col_labels: Vec<String> = targets.iter().map(|t| t.display_name().to_string()).collect();
    let mut table = RateTable::new(
        format!("Pass rates and deltas vs direct — {model}"),
        labels,
        col_labels,
    );
    for (ci, &target) in targets.iter().enumerate() {
        table.set(0, ci, rate_cell(matrix, &ColumnKey::direct(target), missing));
        for (ri, &strategy) in rows.iter().enumerate() {
            let cell = if strategy.intermediate_language() == Some(target) {
                CellValue::Empty // an intermediate is never its own target
            } else {
                delta_cell(matrix, &ColumnKey::new(target, strategy, 1), missing)
            };
            table.set(ri + 1, ci, cell);
        }
    }
    table
}

/// Absolute pass rates when the pipeline is seeded with the dataset's own
/// intermediate-language solutions, next to the direct baseline.
fn build_gt_table(model: &str, matrix: &OutcomeMatrix, missing: &mut Missing) -> RateTable {
    let targets = targets_of(matrix);
    let strategies = strategies_of(matrix);
    let gt_langs = intermediates_of(&strategies, |s| match s {
        Strategy::GroundTruth(l) => Some(l),
        _ => None,
    });
    if gt_langs.is_empty() {
        for &t in &targets {
            missing.note_pattern(format!("gt:<x>@{t}"));
        }
    }
    let mut labels = vec![DIRECT_ROW.to_string()];
    labels.extend(gt_langs.iter().map(|l| l.display_name().to_string()));
    let col_labels: Vec<String> = targets.iter().map(|t| t.display_name().to_string()).collect();
    let mut table = RateTable::new(
        format!("Pass rates with canonical intermediates — {model}"),
        labels,
        col_labels,
    );
    for (ci, &target) in targets.iter().enumerate() {
        table.set(0, ci, rate_cell(matrix, &ColumnKey::direct(target), missing));
        for (ri, &x) in gt_langs.iter().enumerate() {
            let cell = if x == target {
                CellValue::Empty
            } else {
                rate_cell(matrix, &ColumnKey::ground_truth(x, target), missing)
            };
            table.set(ri + 1, ci, cell);
        }
    }
    table
}

/// Phi correlations: does succeeding at the intermediate language directly
/// line up with pipeline success into each target (and with direct success
/// at the target)?
fn build_corr_table(model: &str, matrix: &OutcomeMatrix, missing: &mut Missing) -> RateTable {
    let targets = targets_of(matrix);
    let strategies = strategies_of(matrix);
    let xs = intermediates_of(&strategies, |s| match s {
        Strategy::IntermediateLang(l) => Some(l),
        _ => None,
    });
    if xs.is_empty() {
        for &t in &targets {
            missing.note_pattern(format!("inter:<x>@{t}"));
        }
    }
    let row_labels: Vec<String> = xs.iter().map(|l| l.display_name().to_string()).collect();
    let mut col_labels = Vec::new();
    for &t in &targets {
        col_labels.push(format!("{} (pipeline)", t.display_name()));
        col_labels.push(format!("{} (direct)", t.display_name()));
    }
    let mut table = RateTable::new(
        format!("Phi correlation with direct success in the intermediate — {model}"),
        row_labels,
        col_labels,
    )
    .with_row_header("Intermediate");
    for (ri, &x) in xs.iter().enumerate() {
        for (ti, &target) in targets.iter().enumerate() {
            if x == target {
                continue; // both cells stay empty on the diagonal
            }
            match correlation_report(matrix, x, target) {
                Ok(rep) => {
                    let as_cell = |phi: Option<f64>, n: usize| match phi {
                        Some(v) => CellValue::val(v, CellKind::Correlation, n, 0),
                        None => CellValue::Undefined,
                    };
                    table.set(ri, 2 * ti, as_cell(rep.inter_vs_pipeline, rep.n_pipeline));
                    table.set(ri, 2 * ti + 1, as_cell(rep.inter_vs_direct, rep.n_direct));
                }
                Err(StatsError::MissingColumn { .. }) => {
                    for key in [
                        ColumnKey::direct(x),
                        ColumnKey::direct(target),
                        ColumnKey::intermediate(x, target),
                    ] {
                        if !matrix.has_column(&key) {
                            missing.note(&key);
                        }
                    }
                }
                Err(_) => {
                    table.set(ri, 2 * ti, CellValue::Undefined);
                    table.set(ri, 2 * ti + 1, CellValue::Undefined);
                }
            }
        }
    }
    table
}

/// How many tasks each pipeline rescued: direct target generation failed,
/// the pipeline passed. The conditioned variant additionally requires direct
/// success in the intermediate language itself.
fn build_improve_table(
    model: &str,
    matrix: &OutcomeMatrix,
    mode: ImprovementMode,
    missing: &mut Missing,
    shape: Option<(&[LanguageId], &[LanguageId])>,
) -> RateTable {
    let (xs, targets): (Vec<LanguageId>, Vec<LanguageId>) = match shape {
        Some((xs, ts)) => (xs.to_vec(), ts.to_vec()),
        None => {
            let strategies = strategies_of(matrix);
            (
                intermediates_of(&strategies, |s| match s {
                    Strategy::IntermediateLang(l) => Some(l),
                    _ => None,
                }),
                targets_of(matrix),
            )
        }
    };
    if xs.is_empty() {
        for &t in &targets {
            missing.note_pattern(format!("inter:<x>@{t}"));
        }
    }
    let mode_name = match mode {
        ImprovementMode::Conditioned => "conditioned",
        ImprovementMode::Unconditioned => "unconditioned",
    };
    let row_labels: Vec<String> = xs.iter().map(|l| l.display_name().to_string()).collect();
    let col_labels: Vec<String> = targets.iter().map(|t| t.display_name().to_string()).collect();
    let mut table = RateTable::new(
        format!("Tasks rescued by the pipeline ({mode_name}) — {model}"),
        row_labels,
        col_labels,
    )
    .with_row_header("Intermediate");
    let n_tasks = matrix.tasks().len();
    for (ri, &x) in xs.iter().enumerate() {
        for (ci, &target) in targets.iter().enumerate() {
            if x == target {
                continue;
            }
            match improvement_counts(matrix, mode, x, target) {
                Ok(count) => {
                    table.set(ri, ci, CellValue::val(count as f64, CellKind::Count, n_tasks, 0));
                }
                Err(StatsError::MissingColumn { .. }) => {
                    let key = ColumnKey::intermediate(x, target);
                    if !matrix.has_column(&key) {
                        missing.note(&key);
                    } else {
                        missing.note(&ColumnKey::direct(target));
                    }
                }
                Err(_) => table.set(ri, ci, CellValue::Undefined),
            }
        }
    }
    table
}

/// Deltas of asking the same direct question k times (keeping history)
/// against asking once.
fn build_repeat_table(model: &str, matrix: &OutcomeMatrix, missing: &mut Missing) -> RateTable {
    let targets = targets_of(matrix);
    let strategies = strategies_of(matrix);
    let mut ks: Vec<u32> = strategies
        .iter()
        .filter_map(|s| match s {
            Strategy::Repeat(k) => Some(*k),
            _ => None,
        })
        .collect();
    ks.sort_unstable();
    if ks.is_empty() {
        for &t in &targets {
            missing.note_pattern(format!("repeat:<k>@{t}"));
        }
    }
    let row_labels: Vec<String> = ks
        .iter()
        .map(|k| Strategy::Repeat(*k).representation_label())
        .collect();
    let col_labels: Vec<String> = targets.iter().map(|t| t.display_name().to_string()).collect();
    let mut table = RateTable::new(
        format!("Repeated asking vs direct — {model}"),
        row_labels,
        col_labels,
    );
    for (ri, &k) in ks.iter().enumerate() {
        for (ci, &target) in targets.iter().enumerate() {
            let last = ColumnKey::repeat_round(target, k, k);
            if !matrix.has_column(&last) {
                missing.note(&last);
                continue;
            }
            // Direct is the natural baseline; round one of the repeat run is
            // the same question and stands in when direct was not run.
            let baseline = if matrix.has_column(&ColumnKey::direct(target)) {
                ColumnKey::direct(target)
            } else {
                ColumnKey::repeat_round(target, k, 1)
            };
            let rates = (
                matrix.column(&last).ok().and_then(|c| rate_summary(c).ok()),
                matrix
                    .column(&baseline)
                    .ok()
                    .and_then(|c| rate_summary(c).ok()),
            );
            let cell = match rates {
                (Some(last_rate), Some(base_rate)) => CellValue::val(
                    last_rate.rate - base_rate.rate,
                    CellKind::Delta,
                    last_rate.n,
                    last_rate.excluded,
                ),
                _ => CellValue::Undefined,
            };
            table.set(ri, ci, cell);
        }
    }
    table
}

/// Build every table of one family across models. The returned labels key
/// the CSV `model` column; layout and ordering depend only on the records,
/// never on wall-clock state, so identical stores render identical bytes.
pub fn build_family(
    records: &[OutcomeRecord],
    family: TableFamily,
) -> Result<Vec<(String, RateTable)>, ReportError> {
    let per_model = OutcomeMatrix::per_model(records.iter());
    let mut missing = Missing::default();
    let mut tables: Vec<(String, RateTable)> = Vec::new();
    match family {
        TableFamily::Delta => {
            for (model, matrix) in &per_model {
                tables.push((model.clone(), build_delta_table(model, matrix, &mut missing)));
            }
        }
        TableFamily::Gt => {
            for (model, matrix) in &per_model {
                tables.push((model.clone(), build_gt_table(model, matrix, &mut missing)));
            }
        }
        TableFamily::Corr => {
            for (model, matrix) in &per_model {
                tables.push((model.clone(), build_corr_table(model, matrix, &mut missing)));
            }
        }
        TableFamily::Avg => {
            // Cell-wise mean over per-model delta-shaped tables on the union
            // layout, so every model contributes to the same grid.
            let mut all_targets: BTreeSet<LanguageId> = BTreeSet::new();
            let mut all_strategies: BTreeSet<Strategy> = BTreeSet::new();
            for matrix in per_model.values() {
                all_targets.extend(targets_of(matrix));
                all_strategies.extend(strategies_of(matrix));
            }
            let targets: Vec<LanguageId> = all_targets.into_iter().collect();
            let rows = representation_rows(&all_strategies);
            let shaped: Vec<RateTable> = per_model
                .iter()
                .map(|(model, matrix)| {
                    build_delta_shaped(model, matrix, &mut missing, &targets, Some(&rows))
                })
                .collect();
            if !shaped.is_empty() {
                let mut avg = aggregate_average(&shaped)?;
                avg.title = format!(
                    "Average pass rates and deltas over {} models",
                    shaped.len()
                );
                tables.push(("average".to_string(), avg));
            }
        }
        TableFamily::Improve => {
            for (model, matrix) in &per_model {
                for mode in [ImprovementMode::Unconditioned, ImprovementMode::Conditioned] {
                    let label = match mode {
                        ImprovementMode::Unconditioned => format!("{model} (unconditioned)"),
                        ImprovementMode::Conditioned => format!("{model} (conditioned)"),
                    };
                    tables.push((
                        label,
                        build_improve_table(model, matrix, mode, &mut missing, None),
                    ));
                }
            }
            if per_model.len() > 1 {
                let mut all_targets: BTreeSet<LanguageId> = BTreeSet::new();
                let mut all_strategies: BTreeSet<Strategy> = BTreeSet::new();
                for matrix in per_model.values() {
                    all_targets.extend(targets_of(matrix));
                    all_strategies.extend(strategies_of(matrix));
                }
                let targets: Vec<LanguageId> = all_targets.into_iter().collect();
                let xs = intermediates_of(&all_strategies, |s| match s {
                    Strategy::IntermediateLang(l) => Some(l),
                    _ => None,
                });
                for mode in [ImprovementMode::Unconditioned, ImprovementMode::Conditioned] {
                    let shaped: Vec<RateTable> = per_model
                        .iter()
                        .map(|(model, matrix)| {
                            build_improve_table(
                                model,
                                matrix,
                                mode,
                                &mut missing,
                                Some((&xs, &targets)),
                            )
                        })
                        .collect();
                    let mut avg = aggregate_average(&shaped)?;
                    let mode_name = match mode {
                        ImprovementMode::Unconditioned => "unconditioned",
                        ImprovementMode::Conditioned => "conditioned",
                    };
                    avg.title = format!(
                        "Average tasks rescued ({mode_name}) over {} models",
                        shaped.len()
                    );
                    avg.row_header = "Intermediate".to_string();
                    tables.push((format!("average ({mode_name})"), avg));
                }
            }
        }
        TableFamily::Repeat => {
            for (model, matrix) in &per_model {
                tables.push((model.clone(), build_repeat_table(model, matrix, &mut missing)));
            }
        }
    }
    if tables.iter().all(|(_, t)| !has_family_val(t, family)) {
        return Err(ReportError::InsufficientData {
            family,
            missing: missing.into_vec(),
        });
    }
    Ok(tables)
}

/// Families the given records can actually populate.
pub fn applicable_families(records: &[OutcomeRecord]) -> Vec<TableFamily> {
    TableFamily::ALL
        .into_iter()
        .filter(|&family| build_family(records, family).is_ok())
        .collect()
}

/// Write one family as `<stem>.csv` and `<stem>.md` under `out_dir` and
/// return both paths.
pub fn write_family(
    out_dir: &Path,
    family: TableFamily,
    tables: &[(String, RateTable)],
) -> Result<(PathBuf, PathBuf), ReportError> {
    std::fs::create_dir_all(out_dir).map_err(|source| ReportError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let stem = family.file_stem();

    let mut md = String::new();
    for (i, (_, table)) in tables.iter().enumerate() {
        if i > 0 {
            md.push('\n');
        }
        md.push_str(&render_markdown(table, family));
    }
    let md_path = out_dir.join(format!("{stem}.md"));
    std::fs::write(&md_path, &md).map_err(|source| ReportError::Io {
        path: md_path.clone(),
        source,
    })?;

    let mut csv = String::from("model,table,row,column,kind,value,n,excluded\n");
    for (model, table) in tables {
        let rendered = render_csv(table, family);
        for line in rendered.lines().skip(1) {
            csv.push_str(&csv_escape(model));
            csv.push(',');
            csv.push_str(line);
            csv.push('\n');
        }
    }
    let csv_path = out_dir.join(format!("{stem}.csv"));
    std::fs::write(&csv_path, &csv).map_err(|source| ReportError::Io {
        path: csv_path.clone(),
        source,
    })?;

    Ok((csv_path, md_path))
}

/// Build and write the requested families; with `families` empty, write
/// every family the records support.
pub fn write_reports(
    records: &[OutcomeRecord],
    families: &[TableFamily],
    out_dir: &Path,
) -> Result<Vec<PathBuf>, ReportError> {
    let chosen: Vec<TableFamily> = if families.is_empty() {
        applicable_families(records)
    } else {
        families.to_vec()
    };
    let mut written = Vec::new();
    for family in chosen {
        let tables = build_family(records, family)?;
        let (csv_path, md_path) = write_family(out_dir, family, &tables)?;
        written.push(csv_path);
        written.push(md_path);
    }
    Ok(written)
}

