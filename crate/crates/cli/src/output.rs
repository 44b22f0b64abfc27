use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use mcbf_core::distributed::ConvergenceTrace;
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::sweep::{Record, SummaryRow, TraceEntry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

/// Nine significant digits.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.8e}")
    } else {
        x.to_string()
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

fn record_fields(r: &Record) -> Vec<String> {
    vec![
        r.point.to_string(),
        r.trial.to_string(),
        fmt_f64(r.gamma_db),
        fmt_f64(r.d_db),
        fmt_f64(r.p_max),
        r.scheme.to_string(),
        opt(r.theta),
        r.status.as_str().to_string(),
        opt(r.objective),
        opt(r.bound),
        r.rank_one.map(|b| b.to_string()).unwrap_or_default(),
        opt(r.avg_rank),
        r.randomized.to_string(),
        r.iterations.to_string(),
        r.converged.to_string(),
        r.signaling.to_string(),
        fmt_f64(r.wall_ms),
        r.message.clone(),
    ]
}

/// Writes one CSV row per record, or a JSON array, to `w`.
pub fn write_records<W: Write>(records: &[Record], format: Format, mut w: W) -> Result<(), CliError> {
    match format {
        Format::Csv => {
            let mut csv = csv::Writer::from_writer(w);
            csv.write_record(Record::CSV_HEADER)?;
            for r in records {
                csv.write_record(record_fields(r))?;
            }
            csv.flush()?;
        }
        Format::Json => {
            serde_json::to_writer_pretty(&mut w, records)?;
            writeln!(w)?;
        }
    }
    Ok(())
}

pub fn emit_results(records: &[Record], path: &Path, format: Format) -> Result<(), CliError> {
    let file = BufWriter::new(File::create(path)?);
    write_records(records, format, file)
}

pub fn read_json(path: &Path) -> Result<Vec<Record>, CliError> {
    Ok(serde_json::from_reader(std::io::BufReader::new(File::open(path)?))?)
}

pub fn write_summary<W: Write>(rows: &[SummaryRow], w: W) -> Result<(), CliError> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(SummaryRow::CSV_HEADER)?;
    for s in rows {
        csv.write_record([
            s.point.to_string(),
            fmt_f64(s.gamma_db),
            fmt_f64(s.d_db),
            fmt_f64(s.p_max),
            s.scheme.to_string(),
            opt(s.theta),
            s.trials.to_string(),
            s.feasible.to_string(),
            s.infeasible.to_string(),
            s.errors.to_string(),
            opt(s.mean_objective),
            s.rank_one.to_string(),
            opt(s.mean_higher_rank),
            opt(s.mean_signaling),
            fmt_f64(s.mean_wall_ms),
        ])?;
    }
    csv.flush()?;
    Ok(())
}

pub const TRACE_KEY_COLUMNS: &str = "point,trial,scheme,theta";

/// Per-iteration rows of every distributed run: the key columns followed by
/// the convergence trace columns.
pub fn write_traces<W: Write>(traces: &[TraceEntry], w: W) -> Result<(), CliError> {
    let mut w = BufWriter::new(w);
    writeln!(w, "{TRACE_KEY_COLUMNS},{}", ConvergenceTrace::CSV_HEADER)?;
    for t in traces {
        let mut body = Vec::new();
        t.trace.write_csv(&mut body)?;
        let body = String::from_utf8(body).expect("trace CSV is UTF-8");
        for line in body.lines().skip(1) {
            writeln!(w, "{},{},{},{},{line}", t.point, t.trial, t.scheme, opt(t.theta))?;
        }
    }
    w.flush()?;
    Ok(())
}
