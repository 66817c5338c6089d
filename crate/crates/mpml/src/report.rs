//! CSV and JSON serialization of run results and experiment tables.
//!
//! Every CSV starts with a schema-version header comment. Floating point
//! values are written with Rust's shortest round-trip formatting, so a
//! given result always serializes to the same bytes.

use crate::cost::CostReceipt;
use crate::engine::{LevelSampleAverage, Method, Moments, MseRow, RunResult};

pub const CSV_SCHEMA: &str = "# mpml-csv v1";

/// `tol_sq,method,mse,ci_low,ci_high,total_cost,n0,n1,...` — the
/// per-level average sample counts are padded to the widest hierarchy.
pub fn mse_table_csv(rows: &[MseRow]) -> String {
    let max_levels = rows.iter().map(|r| r.avg_n.len()).max().unwrap_or(0);
    let mut out = String::new();
    out.push_str(CSV_SCHEMA);
    out.push('\n');
    out.push_str("tol_sq,method,mse,ci_low,ci_high,total_cost");
    for l in 0..max_levels {
        out.push_str(&format!(",n{l}"));
    }
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}",
            r.tol_sq,
            r.method.name(),
            r.summary.mse,
            r.summary.ci_low,
            r.summary.ci_high,
            r.summary.mean_cost
        ));
        for l in 0..max_levels {
            match r.avg_n.get(l) {
                Some(n) => out.push_str(&format!(",{n}")),
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    out
}

/// `level,method,flops,mem_bits,factor_nnz,samples` per level of a run.
pub fn cost_report_csv(entries: &[(Method, RunResult)]) -> String {
    let mut out = String::new();
    out.push_str(CSV_SCHEMA);
    out.push('\n');
    out.push_str("level,method,flops,mem_bits,factor_nnz,samples\n");
    for (method, run) in entries {
        for s in &run.levels {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                s.level, method.name(), s.cost.flops, s.cost.mem_bits, s.cost.factor_nnz, s.n
            ));
        }
    }
    out
}

/// `level,eps,var,bias,ci` rows of the decay-vs-precision study.
pub fn decay_csv(rows: &[(Moments, f64, f64, f64)]) -> String {
    let mut out = String::new();
    out.push_str(CSV_SCHEMA);
    out.push('\n');
    out.push_str("level,eps,var,bias,ci\n");
    for (m, eps, bias, ci) in rows {
        out.push_str(&format!("{},{},{},{},{}\n", m.level, eps, m.var_y, bias, ci));
    }
    out
}

/// `tol_sq,metric,mlmc_cost,mpml_cost,gain` comparison rows.
pub fn gain_csv(rows: &[(f64, &str, f64, f64)]) -> String {
    let mut out = String::new();
    out.push_str(CSV_SCHEMA);
    out.push('\n');
    out.push_str("tol_sq,metric,mlmc_cost,mpml_cost,gain\n");
    for (tol_sq, metric, mlmc, mpml) in rows {
        out.push_str(&format!("{},{},{},{},{}\n", tol_sq, metric, mlmc, mpml, mlmc / mpml));
    }
    out
}

/// `level,method,mean_n,ci_half,reached` average sample-count rows.
pub fn samples_csv(entries: &[(Method, Vec<LevelSampleAverage>)]) -> String {
    let mut out = String::new();
    out.push_str(CSV_SCHEMA);
    out.push('\n');
    out.push_str("level,method,mean_n,ci_half,reached\n");
    for (method, avgs) in entries {
        for a in avgs {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                a.level, method.name(), a.mean_n, a.ci_half, a.reached
            ));
        }
    }
    out
}

/// `step,rel_res` rows of an iterative-refinement residual trace.
pub fn ir_trace_csv(history: &[f64]) -> String {
    let mut out = String::new();
    out.push_str(CSV_SCHEMA);
    out.push('\n');
    out.push_str("step,rel_res\n");
    for (i, r) in history.iter().enumerate() {
        out.push_str(&format!("{i},{r}\n"));
    }
    out
}

/// Effective-precision schedule table: one row per hierarchy depth.
pub fn schedule_csv(table: &[(usize, Vec<f64>)]) -> String {
    let max_levels = table.iter().map(|(_, eps)| eps.len()).max().unwrap_or(0);
    let mut out = String::new();
    out.push_str(CSV_SCHEMA);
    out.push('\n');
    out.push('L');
    for l in 0..max_levels {
        out.push_str(&format!(",eps{l}"));
    }
    out.push('\n');
    for (levels, eps) in table {
        out.push_str(&format!("{levels}"));
        for l in 0..max_levels {
            match eps.get(l) {
                // two significant digits, as conventionally printed
                Some(e) => out.push_str(&format!(",{:.1e}", e)),
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    out
}

pub fn run_result_json(run: &RunResult) -> String {
    serde_json::to_string_pretty(run).expect("run results serialize")
}

pub fn mse_rows_json(rows: &[MseRow]) -> String {
    serde_json::to_string_pretty(rows).expect("rows serialize")
}

/// Total cost receipt as a single JSON object (reference caching).
pub fn receipt_json(receipt: &CostReceipt) -> String {
    serde_json::to_string(receipt).expect("receipts serialize")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{MseSummary, SolverKind};

    fn dummy_summary() -> MseSummary {
        MseSummary {
            replicates: 4,
            mse: 1.5e-6,
            ci_low: 1.0e-6,
            ci_high: 2.0e-6,
            mean_cost: 123456.0,
        }
    }

    #[test]
    fn mse_csv_has_schema_and_padding() {
        let rows = vec![
            MseRow {
                tol_sq: 2e-6,
                method: Method::Mlmc,
                solver: SolverKind::Minres,
                summary: dummy_summary(),
                avg_n: vec![100.0, 10.0],
            },
            MseRow {
                tol_sq: 2e-6,
                method: Method::Mpml,
                solver: SolverKind::Minres,
                summary: dummy_summary(),
                avg_n: vec![100.0, 10.0, 2.0],
            },
        ];
        let csv = mse_table_csv(&rows);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), CSV_SCHEMA);
        assert_eq!(
            lines.next().unwrap(),
            "tol_sq,method,mse,ci_low,ci_high,total_cost,n0,n1,n2"
        );
        let first = lines.next().unwrap();
        assert!(first.starts_with("0.000002,mlmc,"));
        assert!(first.ends_with(",100,10,")); // padded short row
        assert_eq!(lines.next().unwrap().matches(',').count(), 8);
    }

    #[test]
    fn schedule_csv_formats_two_significant_digits() {
        let table = vec![(1usize, vec![3.4939e-3, 1.953e-4])];
        let csv = schedule_csv(&table);
        assert!(csv.contains("3.49e-3") == false);
        assert!(csv.contains("3.5e-3"), "csv was: {csv}");
    }

    #[test]
    fn ir_trace_lists_steps() {
        let csv = ir_trace_csv(&[0.5, 0.01, 1e-4]);
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.ends_with("2,0.0001\n"));
    }
}
