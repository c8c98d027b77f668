use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Losses and timing of one optimization iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct IterRecord {
    pub iter: usize,
    pub lr: f64,
    pub loss_sr: f64,
    pub loss_trans: f64,
    pub loss_total: f64,
    pub ms: f64,
}

/// Per-iteration record of an optimization run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimTrace {
    pub records: Vec<IterRecord>,
    pub large_kernel_fraction: f64,
}

pub const TRACE_HEADER: &str = "iter,lr,loss_sr,loss_trans,loss_total,ms";

impl OptimTrace {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(TRACE_HEADER);
        s.push('\n');
        for r in &self.records {
            let _ = writeln!(s, "{},{},{},{},{},{:.3}", r.iter, r.lr, r.loss_sr, r.loss_trans, r.loss_total, r.ms);
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(TRACE_HEADER) {
            return Err(Error::Parse { what: "trace".into(), detail: "unexpected header".into() });
        }
        let bad = |l: &str| Error::Parse { what: "trace".into(), detail: format!("bad row `{l}`") };
        let mut records = Vec::new();
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(bad(line));
            }
            let num = |i: usize| f[i].trim().parse::<f64>().map_err(|_| bad(line));
            records.push(IterRecord {
                iter: f[0].trim().parse().map_err(|_| bad(line))?,
                lr: num(1)?,
                loss_sr: num(2)?,
                loss_trans: num(3)?,
                loss_total: num(4)?,
                ms: num(5)?,
            });
        }
        Ok(Self { records, large_kernel_fraction: 0.0 })
    }

    pub fn total_ms(&self) -> f64 {
        self.records.iter().map(|r| r.ms).sum()
    }
}
