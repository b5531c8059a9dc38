//! Tabular report output as CSV or JSON.

use serde::Serialize;

use crate::analyzer::{ErrorReport, LayerDiff, ParamStats};
use crate::archive::AblationRow;
use crate::dedup::{DupRow, DupTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            _ => Err(format!("unknown report format `{s}`")),
        }
    }
}

/// A titled table of string cells.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    pub title: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(title: impl Into<String>, columns: &[&str]) -> Self {
        Table { title: title.into(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 cells")
    }
}

/// Renders tables one after another. CSV output separates tables with a
/// `# title` line; JSON output is an array of table objects.
pub fn render(tables: &[Table], format: Format) -> String {
    match format {
        Format::Json => serde_json::to_string_pretty(tables).expect("tables serialize") + "\n",
        Format::Csv => tables.iter().map(|t| format!("# {}\n{}", t.title, t.to_csv())).collect::<Vec<_>>().join("\n"),
    }
}

fn f(v: f64) -> String {
    format!("{v:.4}")
}

fn dup_row(r: &DupRow) -> Vec<String> {
    vec![
        r.dtype.clone(),
        r.count.to_string(),
        r.dup_count.to_string(),
        f(r.dup_count_pct()),
        r.total_bytes.to_string(),
        r.dup_bytes.to_string(),
        f(r.dup_bytes_pct()),
    ]
}

pub fn dup_table(title: &str, t: &DupTable) -> Table {
    let mut out = Table::new(title, &["dtype", "count", "dup_count", "dup_pct", "bytes", "dup_bytes", "dup_bytes_pct"]);
    for r in t.rows.iter().chain(std::iter::once(&t.overall)) {
        out.push(dup_row(r));
    }
    out
}

pub fn param_stats(stats: &[(String, ParamStats)]) -> Table {
    let mut out = Table::new(
        "parameter values",
        &["model", "dtype", "params", "frac_neg1_0", "frac_0_1", "frac_out", "dup_ratio"],
    );
    for (id, s) in stats {
        for (d, h) in s.per_dtype.iter().map(|(d, h)| (d.name(), h)).chain(std::iter::once(("all", &s.overall))) {
            out.push(vec![
                id.clone(),
                d.to_owned(),
                h.total().to_string(),
                f(h.non_positive_fraction()),
                f(h.positive_fraction()),
                f(h.out_of_range_fraction()),
                f(s.duplication_ratio),
            ]);
        }
    }
    out
}

pub fn ablation(rows: &[AblationRow]) -> Table {
    let mut out = Table::new("ablation", &["stages", "original_bytes", "archive_bytes", "cr"]);
    for r in rows {
        out.push(vec![
            r.stages.to_string(),
            r.original_bytes.to_string(),
            r.archive_bytes.to_string(),
            f(r.compression_ratio),
        ]);
    }
    out
}

pub fn error_report(reports: &[ErrorReport]) -> Table {
    let mut out = Table::new(
        "reconstruction error",
        &["model", "layer", "dtype", "max_abs_error", "mean_abs_error", "exact", "within_bound"],
    );
    for r in reports {
        for l in &r.layers {
            let (dtype, max, mean, exact) = match &l.diff {
                LayerDiff::Float { dtype, count, max_abs_error, mean_abs_error, exact_count } => (
                    dtype.name().to_owned(),
                    format!("{max_abs_error:e}"),
                    format!("{mean_abs_error:e}"),
                    format!("{exact_count}/{count}"),
                ),
                LayerDiff::Exact { matches } => ("-".into(), "-".into(), "-".into(), matches.to_string()),
            };
            out.push(vec![
                r.model_id.clone(),
                l.name.clone(),
                dtype,
                max,
                mean,
                exact,
                (!l.violates_bound()).to_string(),
            ]);
        }
    }
    out
}
