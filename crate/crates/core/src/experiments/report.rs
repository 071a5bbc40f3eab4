//! CSV and JSON result tables.
//!
//! Column order is fixed. Accuracies are rendered with four decimals,
//! rounded half-up on their shortest decimal representation, so `0.97935`
//! becomes `0.9794`. Wall-clock times are kept out of these files, which
//! stay byte-identical across reruns, and go to a separate timings file.

use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde_json::json;

use super::{Aggregation, SweepResult, SweepRow};
use crate::error::{Error, Result};
use crate::fusion::{AggregateMode, FusionMethod, InputRef};

pub const CSV_COLUMNS: [&str; 10] = [
    "dataset",
    "inputs",
    "method",
    "residual",
    "aggregation",
    "k",
    "accuracy",
    "fused_dim",
    "memory_bytes",
    "error",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::InvalidConfig(format!("unknown report format '{other}' (expected csv, json)"))),
        }
    }
}

/// Four decimals, half-up, applied to the shortest round-trip decimal.
pub fn format_accuracy(x: f64) -> String {
    let text = format!("{}", x.abs());
    let (int_part, frac_part) = text.split_once('.').unwrap_or((&text, ""));
    let mut digits: Vec<u8> = int_part.bytes().map(|b| b - b'0').collect();
    let n_int = digits.len();
    let mut frac: Vec<u8> = frac_part.bytes().map(|b| b - b'0').collect();
    let round_up = frac.get(4).is_some_and(|&d| d >= 5);
    frac.resize(4, 0);
    digits.extend(frac);
    if round_up {
        let mut i = digits.len();
        loop {
            if i == 0 {
                digits.insert(0, 1);
                break;
            }
            i -= 1;
            if digits[i] == 9 {
                digits[i] = 0;
            } else {
                digits[i] += 1;
                break;
            }
        }
    }
    let split = digits.len() - 4;
    debug_assert!(split >= n_int);
    let s = |ds: &[u8]| ds.iter().map(|d| (b'0' + d) as char).collect::<String>();
    let sign = if x.is_sign_negative() && digits.iter().any(|&d| d != 0) { "-" } else { "" };
    format!("{sign}{}.{}", s(&digits[..split]), s(&digits[split..]))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Report(format!("csv: {e}"))
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(T::to_string).unwrap_or_default()
}

pub fn render_csv(result: &SweepResult) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_COLUMNS).map_err(csv_err)?;
    for row in &result.rows {
        w.write_record([
            row.dataset.clone(),
            row.inputs_label(),
            row.method.to_string(),
            row.residual.to_string(),
            row.aggregation.map(|a| a.mode.to_string()).unwrap_or_default(),
            row.aggregation.map(|a| a.k.to_string()).unwrap_or_default(),
            row.accuracy.map(format_accuracy).unwrap_or_default(),
            opt(&row.fused_dim),
            opt(&row.memory_bytes),
            row.error.clone().unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Report(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn render_json(result: &SweepResult) -> Result<String> {
    let rows: Vec<serde_json::Value> = result
        .rows
        .iter()
        .map(|row| {
            let accuracy = row
                .accuracy
                .map(|a| format_accuracy(a).parse::<f64>().expect("formatted accuracy parses"));
            json!({
                "dataset": row.dataset,
                "inputs": row.inputs,
                "method": row.method,
                "residual": row.residual,
                "aggregation": row.aggregation,
                "accuracy": accuracy,
                "fused_dim": row.fused_dim,
                "memory_bytes": row.memory_bytes,
                "error": row.error,
            })
        })
        .collect();
    let doc = json!({ "rows": rows, "best": result.best() });
    let mut text = serde_json::to_string_pretty(&doc)?;
    text.push('\n');
    Ok(text)
}

pub fn emit_report(result: &SweepResult, format: ReportFormat, path: impl AsRef<Path>) -> Result<()> {
    if result.rows.is_empty() {
        return Err(Error::InvalidConfig("cannot emit an empty report".into()));
    }
    let text = match format {
        ReportFormat::Csv => render_csv(result)?,
        ReportFormat::Json => render_json(result)?,
    };
    let path = path.as_ref();
    crate::store::write_atomic(path, |w: &mut dyn Write| w.write_all(text.as_bytes()))
}

/// Per-row wall-clock seconds, in row order.
pub fn write_timings(result: &SweepResult, path: impl AsRef<Path>) -> Result<()> {
    let mut text = String::from("inputs,method,wall_time_s\n");
    for row in &result.rows {
        text.push_str(&format!("{},{},{:.3}\n", row.inputs_label(), row.method_label(), row.wall_time_s));
    }
    let path = path.as_ref();
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn parse_field<T: FromStr>(field: &str, name: &str, line: usize) -> Result<Option<T>> {
    if field.is_empty() {
        return Ok(None);
    }
    field
        .parse()
        .map(Some)
        .map_err(|_| Error::Report(format!("line {line}: bad {name} '{field}'")))
}

/// Parses a table produced by [`render_csv`].
pub fn parse_csv(text: &str) -> Result<SweepResult> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().map_err(csv_err)?.clone();
    if header.iter().ne(CSV_COLUMNS) {
        return Err(Error::Report(format!(
            "unexpected columns {:?}, expected {:?}",
            header.iter().collect::<Vec<_>>(),
            CSV_COLUMNS
        )));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let line = i + 2;
        let f = |j: usize| rec.get(j).unwrap_or("");
        let inputs = f(1)
            .split('+')
            .map(InputRef::from_str)
            .collect::<Result<Vec<_>>>()?;
        let method: FusionMethod = f(2).parse()?;
        let residual = parse_field::<bool>(f(3), "residual", line)?.unwrap_or(false);
        let mode: Option<AggregateMode> = parse_field(f(4), "aggregation", line)?;
        let k: Option<usize> = parse_field(f(5), "k", line)?;
        let aggregation = match (mode, k) {
            (Some(mode), Some(k)) => Some(Aggregation { mode, k }),
            (None, None) => None,
            _ => return Err(Error::Report(format!("line {line}: aggregation and k go together"))),
        };
        let accuracy: Option<f64> = parse_field(f(6), "accuracy", line)?;
        if let Some(a) = accuracy {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::Report(format!("line {line}: accuracy {a} outside [0, 1]")));
            }
        }
        rows.push(SweepRow {
            dataset: f(0).to_string(),
            inputs,
            method,
            residual,
            aggregation,
            accuracy,
            fused_dim: parse_field(f(7), "fused_dim", line)?,
            memory_bytes: parse_field(f(8), "memory_bytes", line)?,
            wall_time_s: 0.0,
            error: (!f(9).is_empty()).then(|| f(9).to_string()),
        });
    }
    Ok(SweepResult { rows })
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<SweepResult> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text)
}
