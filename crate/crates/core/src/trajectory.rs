//! Per-iteration benchmark records and their CSV form.

use std::fmt::Write as _;
use std::time::Instant;

use crate::error::{OtError, Result};

pub const CSV_HEADER: &str =
    "outer_k,inner_total,cg_total,wall_seconds,objective,kkt,grad_norm,gap";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Record {
    pub outer_k: usize,
    pub inner_total: usize,
    pub cg_total: usize,
    pub wall_seconds: f64,
    pub objective: f64,
    pub kkt: f64,
    pub grad_norm: f64,
    pub gap: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    records: Vec<Record>,
}

impl Trajectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&Record> {
        self.records.last()
    }

    /// Appends a record; wall time and `outer_k` may not go backwards.
    pub fn record(&mut self, snapshot: Record) -> Result<()> {
        let finite = [
            snapshot.wall_seconds,
            snapshot.objective,
            snapshot.kkt,
            snapshot.grad_norm,
        ]
        .iter()
        .chain(snapshot.gap.as_ref())
        .all(|v| v.is_finite());
        if !finite {
            return Err(OtError::NumericalFailure(format!(
                "non-finite trajectory record {snapshot:?}"
            )));
        }
        if let Some(prev) = self.records.last() {
            if snapshot.wall_seconds < prev.wall_seconds {
                return Err(OtError::ClockError {
                    previous: prev.wall_seconds,
                    next: snapshot.wall_seconds,
                });
            }
            if snapshot.outer_k < prev.outer_k {
                return Err(OtError::NumericalFailure(format!(
                    "outer_k went from {} to {}",
                    prev.outer_k, snapshot.outer_k
                )));
            }
        }
        self.records.push(snapshot);
        Ok(())
    }

    /// CSV text with the fixed header; reals carry 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let _ = write!(
                out,
                "{},{},{},{:.16e},{:.16e},{:.16e},{:.16e},",
                r.outer_k,
                r.inner_total,
                r.cg_total,
                r.wall_seconds,
                r.objective,
                r.kkt,
                r.grad_norm
            );
            if let Some(g) = r.gap {
                let _ = write!(out, "{g:.16e}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: &str| {
            OtError::NumericalFailure(format!("trajectory CSV line {line}: {msg}"))
        };
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(CSV_HEADER) {
            return Err(bad(1, "missing or wrong header"));
        }
        let mut t = Trajectory::new();
        for (k, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let f: Vec<&str> = line.trim().split(',').collect();
            if f.len() != 8 {
                return Err(bad(k + 2, "expected 8 fields"));
            }
            let int = |s: &str| s.parse::<usize>().map_err(|e| bad(k + 2, &e.to_string()));
            let real = |s: &str| s.parse::<f64>().map_err(|e| bad(k + 2, &e.to_string()));
            t.record(Record {
                outer_k: int(f[0])?,
                inner_total: int(f[1])?,
                cg_total: int(f[2])?,
                wall_seconds: real(f[3])?,
                objective: real(f[4])?,
                kkt: real(f[5])?,
                grad_norm: real(f[6])?,
                gap: if f[7].is_empty() {
                    None
                } else {
                    Some(real(f[7])?)
                },
            })?;
        }
        Ok(t)
    }
}

/// Monotonic seconds since the start of a solve, or always zero when frozen.
#[derive(Debug, Clone, Copy)]
pub struct SolveClock {
    start: Instant,
    frozen: bool,
}

impl SolveClock {
    pub fn start(frozen: bool) -> Self {
        Self {
            start: Instant::now(),
            frozen,
        }
    }

    pub fn seconds(&self) -> f64 {
        if self.frozen {
            0.0
        } else {
            self.start.elapsed().as_secs_f64()
        }
    }

    /// Real elapsed time regardless of freezing, for budgets.
    pub fn elapsed(&self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }
}
