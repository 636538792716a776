// SPDX-License-Identifier: Apache-2.0

//! CSV and JSON result tables.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use dfsim_core::scenario::ResultRow;

use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

/// `x` rounded to six significant digits, printed without trailing zeros.
pub fn format_float(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x.is_nan() {
            "NaN".into()
        } else if x == 0.0 {
            "0".into()
        } else {
            format!("{x}")
        };
    }
    let exp = x.abs().log10().floor() as i32;
    if exp >= 6 {
        let scale = 10f64.powi(exp - 5);
        return format!("{:.0}", (x / scale).round() * scale);
    }
    let s = format!("{:.*}", (5 - exp) as usize, x);
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn round6(x: f64) -> f64 {
    format_float(x).parse().unwrap_or(x)
}

#[derive(Serialize)]
struct JsonRow<'a> {
    run: u32,
    algo: &'a str,
    inter_pe_delay_ms: f64,
    bum_rate_mbps: f64,
    offered: u64,
    received_total: u64,
    received_unique: u64,
    duplicates: u64,
    lost: u64,
    loss_pct: f64,
    df_change_count: u64,
    df_change_times: Vec<f64>,
}

fn csv_record(r: &ResultRow) -> [String; 12] {
    [
        r.run.to_string(),
        r.algo.name().to_string(),
        format_float(r.inter_pe_delay_ms),
        format_float(r.bum_rate_mbps),
        r.offered.to_string(),
        r.received_total.to_string(),
        r.received_unique.to_string(),
        r.duplicates.to_string(),
        r.lost.to_string(),
        format_float(r.loss_pct),
        r.df_change_count.to_string(),
        r.df_change_times
            .iter()
            .map(|t| format_float(*t))
            .collect::<Vec<_>>()
            .join(";"),
    ]
}

pub fn write_results<W: Write>(rows: &[ResultRow], format: Format, out: W) -> Result<(), Error> {
    match format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(out);
            w.write_record(ResultRow::COLUMNS)?;
            for r in rows {
                w.write_record(csv_record(r))?;
            }
            w.flush().map_err(csv::Error::from)?;
        }
        Format::Json => {
            let json: Vec<JsonRow> = rows
                .iter()
                .map(|r| JsonRow {
                    run: r.run,
                    algo: r.algo.name(),
                    inter_pe_delay_ms: round6(r.inter_pe_delay_ms),
                    bum_rate_mbps: round6(r.bum_rate_mbps),
                    offered: r.offered,
                    received_total: r.received_total,
                    received_unique: r.received_unique,
                    duplicates: r.duplicates,
                    lost: r.lost,
                    loss_pct: round6(r.loss_pct),
                    df_change_count: r.df_change_count,
                    df_change_times: r.df_change_times.iter().map(|t| round6(*t)).collect(),
                })
                .collect();
            let mut out = out;
            serde_json::to_writer_pretty(&mut out, &json)?;
            out.write_all(b"\n").map_err(|source| Error::Io {
                path: "<output>".into(),
                source,
            })?;
        }
    }
    Ok(())
}

/// Writes `rows` to `path`.
pub fn emit_results(rows: &[ResultRow], path: &Path, format: Format) -> Result<(), Error> {
    if rows.is_empty() {
        return Err(Error::NoRows);
    }
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = std::fs::File::create(path).map_err(io)?;
    let mut buf = std::io::BufWriter::new(file);
    write_results(rows, format, &mut buf)?;
    buf.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(format_float(0.0), "0");
        assert_eq!(format_float(75.0), "75");
        assert_eq!(format_float(0.001371431706129614), "0.00137143");
        assert_eq!(format_float(45.002), "45.002");
        assert_eq!(format_float(1.0 / 3.0), "0.333333");
        assert_eq!(format_float(9.9999999), "10");
        assert_eq!(format_float(-2.5), "-2.5");
        assert_eq!(format_float(123456789.0), "123457000");
    }
}
