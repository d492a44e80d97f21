//! Streaming CSV and JSON writers for metrics rows.

use std::io::Write;

use anyhow::{bail, Context, Result};
use desloc::metrics::MetricsRow;

use crate::config::Format;

/// Shortest representation that parses back to the same `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

pub fn csv_header() -> String {
    MetricsRow::COLUMNS.join(",")
}

pub fn csv_fields(row: &MetricsRow) -> Vec<String> {
    vec![
        row.step.to_string(),
        row.round.to_string(),
        row.worker_count.to_string(),
        fmt_f64(row.loss_mean),
        fmt_f64(row.grad_norm_mean),
        fmt_f64(row.param_norm_mean),
        fmt_opt(row.dist_to_opt),
        fmt_opt(row.rel_change_u),
        fmt_opt(row.rel_change_v),
        fmt_opt(row.drift_u_observed),
        fmt_opt(row.drift_u_bound),
        fmt_opt(row.drift_v_observed),
        fmt_opt(row.drift_v_bound),
        row.cum_payload_units.to_string(),
        fmt_f64(row.eta),
    ]
}

/// Parses one data line produced by [`csv_fields`].
pub fn parse_csv_row(line: &str) -> Result<MetricsRow> {
    let f: Vec<&str> = line.split(',').collect();
    if f.len() != MetricsRow::COLUMNS.len() {
        bail!("expected {} fields, got {}", MetricsRow::COLUMNS.len(), f.len());
    }
    let real = |i: usize| -> Result<f64> {
        f[i].parse().with_context(|| format!("column {}", MetricsRow::COLUMNS[i]))
    };
    let opt = |i: usize| -> Result<Option<f64>> {
        if f[i].is_empty() {
            Ok(None)
        } else {
            real(i).map(Some)
        }
    };
    Ok(MetricsRow {
        step: f[0].parse()?,
        round: f[1].parse()?,
        worker_count: f[2].parse()?,
        loss_mean: real(3)?,
        grad_norm_mean: real(4)?,
        param_norm_mean: real(5)?,
        dist_to_opt: opt(6)?,
        rel_change_u: opt(7)?,
        rel_change_v: opt(8)?,
        drift_u_observed: opt(9)?,
        drift_u_bound: opt(10)?,
        drift_v_observed: opt(11)?,
        drift_v_bound: opt(12)?,
        cum_payload_units: f[13].parse()?,
        eta: real(14)?,
    })
}

/// Writes rows as they arrive. Extra leading columns (such as a method name)
/// can be attached to every row.
pub struct RowWriter<W: Write> {
    out: W,
    format: Format,
    rows_written: usize,
    prefix: Vec<String>,
}

impl<W: Write> RowWriter<W> {
    /// Starts a stream. `prefix_columns` names extra CSV columns, or extra
    /// JSON keys, placed before the metrics fields.
    pub fn new(mut out: W, format: Format, prefix_columns: &[&str]) -> Result<Self> {
        match format {
            Format::Csv => {
                let mut header: Vec<String> = prefix_columns.iter().map(|c| c.to_string()).collect();
                header.push(csv_header());
                writeln!(out, "{}", header.join(","))?;
            }
            Format::Json => write!(out, "[")?,
        }
        Ok(RowWriter {
            out,
            format,
            rows_written: 0,
            prefix: prefix_columns.iter().map(|c| c.to_string()).collect(),
        })
    }

    pub fn write(&mut self, prefix_values: &[&str], row: &MetricsRow) -> Result<()> {
        debug_assert_eq!(prefix_values.len(), self.prefix.len());
        match self.format {
            Format::Csv => {
                let mut fields: Vec<String> = prefix_values.iter().map(|v| v.to_string()).collect();
                fields.extend(csv_fields(row));
                writeln!(self.out, "{}", fields.join(","))?;
            }
            Format::Json => {
                if self.rows_written > 0 {
                    write!(self.out, ",")?;
                }
                writeln!(self.out)?;
                let mut value = serde_json::to_value(row)?;
                if !self.prefix.is_empty() {
                    let mut obj = serde_json::Map::new();
                    for (k, v) in self.prefix.iter().zip(prefix_values) {
                        obj.insert(k.clone(), serde_json::Value::String(v.to_string()));
                    }
                    if let serde_json::Value::Object(fields) = value {
                        obj.extend(fields);
                    }
                    value = serde_json::Value::Object(obj);
                }
                serde_json::to_writer(&mut self.out, &value)?;
            }
        }
        self.rows_written += 1;
        Ok(())
    }

    /// Closes the stream so the output is well-formed even after a failed run.
    pub fn finish(mut self) -> Result<W> {
        if self.format == Format::Json {
            writeln!(self.out, "\n]")?;
        }
        self.out.flush()?;
        Ok(self.out)
    }
}
