//! Table layout and rendering: markdown for humans, long-form CSV for
//! machines.
//!
//! Each table family fixes how many decimals its percentages carry; values
//! are kept at full precision until the moment a string is produced, and the
//! CSV always carries full precision.

use serde::{Deserialize, Serialize};

/// What a numeric cell means, which controls its formatting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellKind {
    /// Fraction in [0,1], shown as a percentage.
    Rate,
    /// Signed difference of two rates, shown as a signed percentage.
    Delta,
    /// Correlation in [−1,1], shown as a bare fraction.
    Correlation,
    /// Plain (possibly averaged) count.
    Count,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CellValue {
    /// Structurally absent, e.g. the intermediate==target diagonal.
    Empty,
    /// The statistic exists but is undefined (zero-variance correlation).
    Undefined,
    Val {
        value: f64,
        kind: CellKind,
        /// Judged outcomes behind the value.
        n: usize,
        excluded: usize,
    },
}

impl CellValue {
    pub fn val(value: f64, kind: CellKind, n: usize, excluded: usize) -> CellValue {
        CellValue::Val {
            value,
            kind,
            n,
            excluded,
        }
    }
}

/// A rows × columns grid of statistics with one label per row and column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateTable {
    pub title: String,
    /// Header over the row-label column.
    pub row_header: String,
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    cells: Vec<Vec<CellValue>>,
}

impl RateTable {
    pub fn new(
        title: impl Into<String>,
        row_labels: Vec<String>,
        col_labels: Vec<String>,
    ) -> RateTable {
        let cells = vec![vec![CellValue::Empty; col_labels.len()]; row_labels.len()];
        RateTable {
            title: title.into(),
            row_header: "Representation".into(),
            row_labels,
            col_labels,
            cells,
        }
    }

    pub fn with_row_header(mut self, header: impl Into<String>) -> RateTable {
        self.row_header = header.into();
        self
    }

    pub fn set(&mut self, row: usize, col: usize, value: CellValue) {
        self.cells[row][col] = value;
    }

    pub fn cell(&self, row: usize, col: usize) -> &CellValue {
        &self.cells[row][col]
    }

    pub fn row_index(&self, label: &str) -> Option<usize> {
        self.row_labels.iter().position(|l| l == label)
    }

    pub fn col_index(&self, label: &str) -> Option<usize> {
        self.col_labels.iter().position(|l| l == label)
    }
}

/// The report families, named after what they tabulate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TableFamily {
    /// Per-target deltas of each representation against direct generation,
    /// with the direct row shown as absolute rates.
    Delta,
    /// Absolute rates when the intermediate is the dataset's own solution.
    Gt,
    /// Phi correlations between outcome columns.
    Corr,
    /// Cross-model averages of rates.
    Avg,
    /// Counts of tasks rescued by an intermediate.
    Improve,
    /// Deltas of repeated prompting against a single ask.
    Repeat,
}

impl TableFamily {
    pub const ALL: [TableFamily; 6] = [
        TableFamily::Delta,
        TableFamily::Gt,
        TableFamily::Corr,
        TableFamily::Avg,
        TableFamily::Improve,
        TableFamily::Repeat,
    ];

    /// Output file stem (`<stem>.csv` / `<stem>.md`).
    pub fn file_stem(self) -> &'static str {
        match self {
            TableFamily::Delta => "delta-table",
            TableFamily::Gt => "gt-table",
            TableFamily::Corr => "corr-table",
            TableFamily::Avg => "avg-table",
            TableFamily::Improve => "improve-table",
            TableFamily::Repeat => "repeat-table",
        }
    }

    pub fn parse(s: &str) -> Option<TableFamily> {
        TableFamily::ALL
            .into_iter()
            .find(|f| f.file_stem() == s || f.file_stem().trim_end_matches("-table") == s)
    }

    /// Decimal places for this family's rendered numbers.
    fn decimals(self) -> usize {
        match self {
            TableFamily::Delta | TableFamily::Avg => 1,
            TableFamily::Gt | TableFamily::Corr | TableFamily::Improve | TableFamily::Repeat => 2,
        }
    }
}

fn format_value(value: f64, kind: CellKind, family: TableFamily) -> String {
    let d = family.decimals();
    match kind {
        CellKind::Rate => format!("{:.d$}%", value * 100.0, d = d),
        CellKind::Delta => format!("{:+.d$}%", value * 100.0, d = d),
        CellKind::Correlation => format!("{:.2}", value),
        CellKind::Count => format!("{:.d$}", value, d = d),
    }
}

/// Markdown grid in the familiar benchmark-table shape. Positive deltas are
/// bold; structurally empty cells show "-", undefined statistics "—".
pub fn render_markdown(table: &RateTable, family: TableFamily) -> String {
    let mut out = String::new();
    out.push_str(&format!("### {}\n\n", table.title));
    out.push_str(&format!("| {} |", table.row_header));
    for col in &table.col_labels {
        out.push_str(&format!(" {col} |"));
    }
    out.push('\n');
    out.push_str("| --- |");
    for _ in &table.col_labels {
        out.push_str(" --- |");
    }
    out.push('\n');
    for (r, row_label) in table.row_labels.iter().enumerate() {
        out.push_str(&format!("| {row_label} |"));
        for c in 0..table.col_labels.len() {
            let text = match table.cell(r, c) {
                CellValue::Empty => "-".to_string(),
                CellValue::Undefined => "—".to_string(),
                CellValue::Val { value, kind, .. } => {
                    let text = format_value(*value, *kind, family);
                    if *kind == CellKind::Delta && *value > 0.0 {
                        format!("**{text}**")
                    } else {
                        text
                    }
                }
            };
            out.push_str(&format!(" {text} |"));
        }
        out.push('\n');
    }
    out
}

pub(crate) fn csv_escape(field: &str) -> String {
    if field.contains(',') || field.contains('"') || field.contains('\n') {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

/// Long-form CSV: one data row per non-empty cell, full-precision values,
/// judged-count and exclusion metadata alongside.
pub fn render_csv(table: &RateTable, family: TableFamily) -> String {
    let mut out = String::from("table,row,column,kind,value,n,excluded\n");
    let stem = family.file_stem();
    for (r, row_label) in table.row_labels.iter().enumerate() {
        for (c, col_label) in table.col_labels.iter().enumerate() {
            match table.cell(r, c) {
                CellValue::Empty => {}
                CellValue::Undefined => {
                    out.push_str(&format!(
                        "{stem},{},{},undefined,,,\n",
                        csv_escape(row_label),
                        csv_escape(col_label)
                    ));
                }
                CellValue::Val {
                    value,
                    kind,
                    n,
                    excluded,
                } => {
                    let kind = match kind {
                        CellKind::Rate => "rate",
                        CellKind::Delta => "delta",
                        CellKind::Correlation => "correlation",
                        CellKind::Count => "count",
                    };
                    out.push_str(&format!(
                        "{stem},{},{},{kind},{value},{n},{excluded}\n",
                        csv_escape(row_label),
                        csv_escape(col_label)
                    ));
                }
            }
        }
    }
    out
}
