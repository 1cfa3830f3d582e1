//! LM-by-method tables, CSV output and column correlation.

use std::collections::BTreeMap;
use std::path::Path;

use claimdecomp::metrics::{pearson, LmScores, MethodReport};

use crate::error::{CliError, Result};
use crate::io::write_atomic;

pub const KEY_COLUMN: &str = "lm";
pub const MACRO_ROW: &str = "macro";

/// Rows keyed by LM, one column per method, plus the macro row.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: BTreeMap<String, BTreeMap<String, f64>>,
}

impl Table {
    /// Collect one metric from each report. FActScore values are scaled
    /// to percentages by `scale`.
    pub fn from_reports(reports: &[MethodReport], scale: f64, pick: impl Fn(&LmScores) -> Option<f64>) -> Table {
        let mut table = Table::default();
        for report in reports {
            table.columns.push(report.method.clone());
            for (lm, scores) in &report.per_lm {
                if let Some(v) = pick(scores) {
                    table.rows.entry(lm.clone()).or_default().insert(report.method.clone(), v * scale);
                }
            }
            if let Some(v) = pick(&report.macro_avg) {
                table
                    .rows
                    .entry(MACRO_ROW.to_string())
                    .or_default()
                    .insert(report.method.clone(), v * scale);
            }
        }
        table
    }

    fn ordered_keys(&self) -> impl Iterator<Item = &String> {
        self.rows
            .keys()
            .filter(|k| *k != MACRO_ROW)
            .chain(self.rows.keys().filter(|k| *k == MACRO_ROW))
    }

    /// CSV text; `decimals` rounds values, `None` writes them in full.
    pub fn to_csv(&self, decimals: Option<usize>) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec![KEY_COLUMN.to_string()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header).expect("in-memory write");
        for key in self.ordered_keys() {
            let row = &self.rows[key];
            let mut record = vec![key.clone()];
            for c in &self.columns {
                record.push(match (row.get(c), decimals) {
                    (Some(v), Some(d)) => format!("{v:.d$}"),
                    (Some(v), None) => format!("{v}"),
                    (None, _) => String::new(),
                });
            }
            w.write_record(&record).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
    }

    /// Write `{stem}.csv` (one decimal) and `{stem}.raw.csv`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        write_atomic(&dir.join(format!("{stem}.csv")), self.to_csv(Some(1)).as_bytes())?;
        write_atomic(&dir.join(format!("{stem}.raw.csv")), self.to_csv(None).as_bytes())
    }

    pub fn parse_csv(origin: &str, text: &str) -> Result<Table> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let bad = |message: String| CliError::Record {
            path: origin.to_string(),
            line: 1,
            message,
        };
        let header = r.headers().map_err(|e| bad(e.to_string()))?.clone();
        if header.get(0) != Some(KEY_COLUMN) {
            return Err(bad(format!("first column must be `{KEY_COLUMN}`")));
        }
        let columns: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut rows = BTreeMap::new();
        for (i, record) in r.records().enumerate() {
            let record = record.map_err(|e| bad(e.to_string()))?;
            let key = record.get(0).unwrap_or("").to_string();
            let mut row = BTreeMap::new();
            for (c, cell) in columns.iter().zip(record.iter().skip(1)) {
                if cell.trim().is_empty() {
                    continue;
                }
                let v: f64 = cell.trim().parse().map_err(|_| CliError::Record {
                    path: origin.to_string(),
                    line: i + 2,
                    message: format!("not a number: {cell:?}"),
                })?;
                row.insert(c.clone(), v);
            }
            if rows.insert(key.clone(), row).is_some() {
                return Err(CliError::Record {
                    path: origin.to_string(),
                    line: i + 2,
                    message: format!("duplicate row {key:?}"),
                });
            }
        }
        Ok(Table { columns, rows })
    }

    pub fn load(path: &Path) -> Result<Table> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse_csv(&path.display().to_string(), &text)
    }

    /// Values of `column` for every non-macro row, in key order.
    pub fn column(&self, column: &str) -> Result<BTreeMap<String, f64>> {
        if !self.columns.iter().any(|c| c == column) {
            return Err(CliError::Config(format!("no column `{column}`")));
        }
        self.rows
            .iter()
            .filter(|(k, _)| *k != MACRO_ROW)
            .map(|(k, row)| {
                row.get(column)
                    .map(|v| (k.clone(), *v))
                    .ok_or_else(|| CliError::Config(format!("row {k:?} has no value for `{column}`")))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Correlation {
    pub column_a: String,
    pub column_b: String,
    pub n: usize,
    pub pearson: f64,
}

/// Pearson per column pair over rows aligned by LM. Both tables must have
/// the same row keys.
pub fn correlate(a: &Table, b: &Table, pairs: &[(String, String)]) -> Result<Vec<Correlation>> {
    let keys = |t: &Table| t.rows.keys().filter(|k| *k != MACRO_ROW).cloned().collect::<Vec<_>>();
    if keys(a) != keys(b) {
        return Err(CliError::Config("tables do not have the same LM rows".into()));
    }
    pairs
        .iter()
        .map(|(ca, cb)| {
            let xs: Vec<f64> = a.column(ca)?.into_values().collect();
            let ys: Vec<f64> = b.column(cb)?.into_values().collect();
            Ok(Correlation {
                column_a: ca.clone(),
                column_b: cb.clone(),
                n: xs.len(),
                pearson: pearson(&xs, &ys)?,
            })
        })
        .collect()
}

/// Same-named columns present in both tables.
pub fn shared_columns(a: &Table, b: &Table) -> Vec<(String, String)> {
    a.columns
        .iter()
        .filter(|c| b.columns.contains(c))
        .map(|c| (c.clone(), c.clone()))
        .collect()
}

pub fn correlations_csv(rows: &[Correlation]) -> String {
    let mut out = String::from("column_a,column_b,n,pearson\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{:.4}\n", r.column_a, r.column_b, r.n, r.pearson));
    }
    out
}
