//! Per-iteration solver records and their CSV form.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::problem::OracleCounters;

pub const CSV_HEADER: &str =
    "iter,time_s,objective,violation,lambda_norm,calls_f0,calls_gx,calls_gz,calls_h,calls_proj";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    /// Cumulative solver time, excluding reporting.
    pub time_s: f64,
    pub objective: f64,
    pub violation: f64,
    pub lambda_norm: f64,
    /// Cumulative oracle calls.
    pub counters: OracleCounters,
}

/// Diagnostics for one outer iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub iter: usize,
    /// Constraints with a positive multiplier during the inner solve.
    pub active: usize,
    pub inner_iterations: usize,
    /// Pessimization steps per constraint; `None` where `z` was reused.
    pub pessimize_iterations: Vec<Option<usize>>,
    pub budget_limited: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
    pub stats: Vec<IterationStats>,
    pub warnings: Vec<String>,
}

impl Trace {
    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    /// CSV with 17 significant digits per float. With `timing = false` the
    /// time column is written as zero so that repeated runs are byte-identical.
    pub fn to_csv(&self, timing: bool) -> String {
        let mut s = String::with_capacity(64 * (self.rows.len() + 1));
        s.push_str(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let t = if timing { r.time_s } else { 0.0 };
            let c = &r.counters;
            writeln!(
                s,
                "{},{:.16e},{:.16e},{:.16e},{:.16e},{},{},{},{},{}",
                r.iter,
                t,
                r.objective,
                r.violation,
                r.lambda_norm,
                c.f0,
                c.gx,
                c.gz,
                c.h,
                c.proj()
            )
            .expect("writing to a String cannot fail");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let trace = Trace {
            rows: vec![TraceRow {
                iter: 1,
                time_s: 0.5,
                objective: -1.0,
                violation: 0.0,
                lambda_norm: 0.25,
                counters: OracleCounters {
                    f0: 3,
                    gx: 4,
                    gz: 5,
                    h: 6,
                    proj_x: 7,
                    proj_z: 8,
                },
            }],
            ..Default::default()
        };
        let csv = trace.to_csv(true);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(
            lines[1],
            "1,5.0000000000000000e-1,-1.0000000000000000e0,0.0000000000000000e0,2.5000000000000000e-1,3,4,5,6,15"
        );
        assert!(trace.to_csv(false).contains("\n1,0.0000000000000000e0,"));
    }

    #[test]
    fn floats_round_trip() {
        let x = 0.1f64 + 0.2;
        let s = format!("{x:.16e}");
        assert_eq!(s.parse::<f64>().unwrap(), x);
    }
}
