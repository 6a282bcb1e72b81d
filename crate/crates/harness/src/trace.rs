//! Per-step CSV traces with a versioned header line.

use std::io::{BufRead, Write};

use instructmpc_core::sims::{EpisodeOutcome, StepRecord};

pub const TRACE_VERSION: u32 = 1;

pub fn version_line() -> String {
    format!("# instructmpc-trace v{TRACE_VERSION}")
}

/// Column names for an episode with `n` states and `m` inputs.
pub fn columns(n: usize, m: usize) -> Vec<String> {
    let mut cols = vec!["t".to_string()];
    cols.extend((0..n).map(|i| format!("x{i}")));
    cols.extend((0..m).map(|i| format!("u{i}")));
    cols.extend((0..n).map(|i| format!("w{i}")));
    cols.extend((0..n).map(|i| format!("what0_{i}")));
    for c in ["stage_cost", "cum_cost", "psi_norm", "loss", "eta", "theta_norm", "context_id"] {
        cols.push(c.to_string());
    }
    cols
}

fn num(v: f64) -> String {
    format!("{v:?}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn row(r: &StepRecord, psi_norm: f64, n: usize) -> Vec<String> {
    let mut out = vec![r.t.to_string()];
    out.extend(r.x.iter().copied().map(num));
    out.extend(r.u.iter().copied().map(num));
    out.extend(r.w.iter().copied().map(num));
    let first = r.what.first();
    out.extend((0..n).map(|i| num(first.map_or(0.0, |row| row[i]))));
    out.push(num(r.stage_cost));
    out.push(num(r.cum_cost));
    out.push(num(psi_norm));
    out.push(opt(r.loss));
    out.push(opt(r.eta));
    out.push(num(r.theta_norm));
    out.push(r.context_id.clone());
    out
}

/// Writes the trace; numbers use the shortest representation that parses
/// back to the same bits.
pub fn write_trace<W: Write>(mut out: W, outcome: &EpisodeOutcome) -> csv::Result<()> {
    let n = outcome.records.first().map_or(0, |r| r.x.len());
    let m = outcome.records.first().map_or(0, |r| r.u.len());
    writeln!(out, "{}", version_line())?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(columns(n, m))?;
    for (i, r) in outcome.records.iter().enumerate() {
        w.write_record(row(r, outcome.psi_norms.get(i).copied().unwrap_or(0.0), n))?;
    }
    w.flush()?;
    Ok(())
}

pub fn trace_bytes(outcome: &EpisodeOutcome) -> Vec<u8> {
    let mut buf = Vec::new();
    write_trace(&mut buf, outcome).expect("in-memory write");
    buf
}

/// A trace read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceTable {
    pub version: u32,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl TraceTable {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn values(&self, name: &str) -> anyhow::Result<Vec<f64>> {
        let i = self.column(name).ok_or_else(|| anyhow::anyhow!("no column `{name}`"))?;
        self.rows.iter().map(|r| Ok(r[i].parse::<f64>()?)).collect()
    }
}

pub fn read_trace<R: BufRead>(mut input: R) -> anyhow::Result<TraceTable> {
    let mut first = String::new();
    input.read_line(&mut first)?;
    let version = first
        .trim()
        .strip_prefix("# instructmpc-trace v")
        .ok_or_else(|| anyhow::anyhow!("missing trace version line"))?
        .parse()?;
    let mut reader = csv::Reader::from_reader(input);
    let columns = reader.headers()?.iter().map(str::to_string).collect();
    let rows = reader
        .records()
        .map(|r| r.map(|r| r.iter().map(str::to_string).collect()))
        .collect::<csv::Result<Vec<Vec<String>>>>()?;
    Ok(TraceTable { version, columns, rows })
}
