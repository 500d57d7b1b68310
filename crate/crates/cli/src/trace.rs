//! Iteration trace as a fixed-column text table.
//!
//! ```text
//! # iter         residual        objective               mu stage             psnr              sam
//!      1  1.234567890e-1  4.567890123e0  1.000000000e-1     1                -                -
//! ```
//!
//! Columns are 6 characters for `iter`, 5 for `stage` and 16 for the rest,
//! separated by single spaces. Missing PSNR/SAM values are `-`.

use anyhow::{bail, Context, Result};
use pandenoise::admm::IterationTrace;
use pandenoise::weighting::WeightStage;

fn header() -> String {
    format!(
        "{:<6} {:>16} {:>16} {:>16} {:>5} {:>16} {:>16}",
        "# iter", "residual", "objective", "mu", "stage", "psnr", "sam"
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub residual: f64,
    pub objective: f64,
    pub mu: f64,
    pub stage: u8,
    pub psnr: Option<f64>,
    pub sam: Option<f64>,
}

fn num(v: f64) -> String {
    if v.is_infinite() {
        format!("{:>16}", if v > 0.0 { "inf" } else { "-inf" })
    } else {
        format!("{v:>16.9e}")
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| format!("{:>16}", "-"), num)
}

pub fn format(trace: &IterationTrace) -> String {
    let mut out = header();
    out.push('\n');
    for r in &trace.records {
        let stage = match r.stage {
            WeightStage::Stage1 => 1,
            WeightStage::Stage2 => 2,
        };
        out.push_str(&format!(
            "{:>6} {} {} {} {:>5} {} {}\n",
            r.iter,
            num(r.residual),
            num(r.objective),
            num(r.mu),
            stage,
            opt(r.psnr),
            opt(r.sam)
        ));
    }
    out
}

fn field(s: &str) -> Result<Option<f64>> {
    match s.trim() {
        "-" => Ok(None),
        "inf" => Ok(Some(f64::INFINITY)),
        "-inf" => Ok(Some(f64::NEG_INFINITY)),
        t => Ok(Some(t.parse().with_context(|| format!("bad number {t:?}"))?)),
    }
}

pub fn parse(text: &str) -> Result<Vec<TraceRow>> {
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 7 {
            bail!("line {}: expected 7 columns, found {}", n + 1, cols.len());
        }
        let need = |i: usize| -> Result<f64> {
            field(cols[i])?.with_context(|| format!("line {}: column {} is empty", n + 1, i + 1))
        };
        rows.push(TraceRow {
            iter: cols[0].parse().with_context(|| format!("line {}: bad iteration", n + 1))?,
            residual: need(1)?,
            objective: need(2)?,
            mu: need(3)?,
            stage: cols[4].parse().with_context(|| format!("line {}: bad stage", n + 1))?,
            psnr: field(cols[5])?,
            sam: field(cols[6])?,
        });
    }
    Ok(rows)
}
