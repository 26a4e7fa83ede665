//! Trace aggregation into comparison tables.
//!
//! Every number here is a pure fold over trace files: runtime statistics,
//! convergence counts, relative gaps against a reference method,
//! assignment-mode frequencies, and per-iteration median-gap curves
//! evaluated over the instances that share the method's median iteration
//! count.

use crate::engine::GbdTrace;
use crate::verifier::AssignmentMode;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub instances: usize,
    pub converged: usize,
    pub master_time_mean: f64,
    pub master_time_std: f64,
    pub total_time_mean: f64,
    pub total_time_std: f64,
    /// Relative objective gap to the reference method (NaN-free: failed
    /// runs count as the worst observed gap plus one).
    pub relative_gap_mean: f64,
    pub relative_gap_std: f64,
    pub iterations_total: usize,
    pub full_master_solves: usize,
    pub mode_counts: BTreeMap<String, usize>,
    /// Fraction of iterations whose assignment was fully produced by the
    /// agent and accepted without any solver call.
    pub full_acceptance_frequency: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64;
    (mean, var.sqrt())
}

/// Per-instance relative objective gap against a reference objective.
pub fn relative_gaps(traces: &[GbdTrace], reference: &[Option<f64>]) -> Vec<f64> {
    traces
        .iter()
        .zip(reference)
        .map(|(t, r)| match (t.terminal.objective, r) {
            (Some(v), Some(r)) if t.terminal.converged => (v - r).abs() / r.abs().max(1.0),
            _ => f64::INFINITY,
        })
        .collect()
}

/// Folds one method's traces. `reference` carries the per-instance
/// objective of the baseline method (classical GBD), aligned by index.
pub fn summarize_method(
    method: &str,
    traces: &[GbdTrace],
    reference: Option<&[Option<f64>]>,
) -> MethodSummary {
    let master_times: Vec<f64> = traces
        .iter()
        .map(|t| t.rows.iter().map(|r| r.master_time_s).sum())
        .collect();
    let total_times: Vec<f64> = traces.iter().map(|t| t.terminal.total_time_s).collect();
    let gaps: Vec<f64> = match reference {
        Some(r) => relative_gaps(traces, r)
            .into_iter()
            .map(|g| if g.is_finite() { g } else { 1.0 })
            .collect(),
        None => vec![0.0; traces.len()],
    };
    let mut mode_counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut accepted = 0usize;
    let mut iterations = 0usize;
    let mut full_solves = 0usize;
    for t in traces {
        for row in &t.rows {
            *mode_counts.entry(format!("{:?}", row.mode)).or_insert(0) += 1;
            iterations += 1;
            if row.mode == AssignmentMode::FullAccepted {
                accepted += 1;
            }
            if row.solver_invoked {
                full_solves += 1;
            }
        }
    }
    let (mtm, mts) = mean_std(&master_times);
    let (ttm, tts) = mean_std(&total_times);
    let (gm, gs) = mean_std(&gaps);
    MethodSummary {
        method: method.to_string(),
        instances: traces.len(),
        converged: traces.iter().filter(|t| t.terminal.converged).count(),
        master_time_mean: mtm,
        master_time_std: mts,
        total_time_mean: ttm,
        total_time_std: tts,
        relative_gap_mean: gm,
        relative_gap_std: gs,
        iterations_total: iterations,
        full_master_solves: full_solves,
        mode_counts,
        full_acceptance_frequency: if iterations > 0 {
            accepted as f64 / iterations as f64
        } else {
            0.0
        },
    }
}

/// Bound gap of a trace row, +inf while either bound is still open.
fn row_gap(row: &crate::engine::TraceRow) -> f64 {
    row.ubd.gap(row.lbd)
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Per-iteration median bound gap over the converged instances that share
/// the method's median iteration count.
pub fn median_gap_curve(traces: &[GbdTrace]) -> Vec<f64> {
    let mut counts: Vec<f64> = traces
        .iter()
        .filter(|t| t.terminal.converged)
        .map(|t| t.rows.len() as f64)
        .collect();
    if counts.is_empty() {
        return Vec::new();
    }
    let med = median(&mut counts);
    // even-sized sets can have a fractional median; take the nearest count
    // actually attained
    let target = traces
        .iter()
        .filter(|t| t.terminal.converged)
        .map(|t| t.rows.len())
        .min_by_key(|&n| ((n as f64 - med).abs() * 1e6) as u64)
        .unwrap();
    let selected: Vec<&GbdTrace> = traces
        .iter()
        .filter(|t| t.terminal.converged && t.rows.len() == target)
        .collect();
    (0..target)
        .map(|k| {
            let mut gaps: Vec<f64> = selected.iter().map(|t| row_gap(&t.rows[k])).collect();
            median(&mut gaps)
        })
        .collect()
}

fn open_csv(path: &Path, manifest_digest: Option<&str>) -> std::io::Result<std::fs::File> {
    let mut f = std::fs::File::create(path)?;
    if let Some(d) = manifest_digest {
        writeln!(f, "# manifest_digest={d}")?;
    }
    Ok(f)
}

/// Comparison table, one row per method; percentages are improvements
/// relative to the first (reference) row.
pub fn write_metrics_csv(
    summaries: &[MethodSummary],
    path: &Path,
    manifest_digest: Option<&str>,
) -> std::io::Result<()> {
    let mut f = open_csv(path, manifest_digest)?;
    writeln!(
        f,
        "method,instances,converged,master_time_mean_s,master_time_std_s,master_improvement_pct,\
         total_time_mean_s,total_time_std_s,total_improvement_pct,relative_gap_mean,relative_gap_std,\
         iterations_total,full_master_solves,full_acceptance_frequency"
    )?;
    let base = summaries.first();
    for s in summaries {
        let (mi, ti) = match base {
            Some(b) if b.master_time_mean > 0.0 && b.total_time_mean > 0.0 => (
                100.0 * (b.master_time_mean - s.master_time_mean) / b.master_time_mean,
                100.0 * (b.total_time_mean - s.total_time_mean) / b.total_time_mean,
            ),
            _ => (0.0, 0.0),
        };
        writeln!(
            f,
            "{},{},{},{:.6},{:.6},{:.1},{:.6},{:.6},{:.1},{:.3e},{:.3e},{},{},{:.4}",
            s.method,
            s.instances,
            s.converged,
            s.master_time_mean,
            s.master_time_std,
            mi,
            s.total_time_mean,
            s.total_time_std,
            ti,
            s.relative_gap_mean,
            s.relative_gap_std,
            s.iterations_total,
            s.full_master_solves,
            s.full_acceptance_frequency,
        )?;
    }
    Ok(())
}

/// Assignment-mode frequency table (Figure-4 analogue).
pub fn write_modes_csv(
    summaries: &[MethodSummary],
    path: &Path,
    manifest_digest: Option<&str>,
) -> std::io::Result<()> {
    let mut modes: Vec<String> = Vec::new();
    for s in summaries {
        for k in s.mode_counts.keys() {
            if !modes.contains(k) {
                modes.push(k.clone());
            }
        }
    }
    modes.sort();
    let mut f = open_csv(path, manifest_digest)?;
    writeln!(f, "method,{}", modes.join(","))?;
    for s in summaries {
        let cells: Vec<String> = modes
            .iter()
            .map(|m| s.mode_counts.get(m).copied().unwrap_or(0).to_string())
            .collect();
        writeln!(f, "{},{}", s.method, cells.join(","))?;
    }
    Ok(())
}

/// Median-gap curves (Figure-5 analogue): one column per method, one row
/// per iteration.
pub fn write_curves_csv(
    curves: &[(String, Vec<f64>)],
    path: &Path,
    manifest_digest: Option<&str>,
) -> std::io::Result<()> {
    let mut f = open_csv(path, manifest_digest)?;
    let names: Vec<&str> = curves.iter().map(|(n, _)| n.as_str()).collect();
    writeln!(f, "iteration,{}", names.join(","))?;
    let depth = curves.iter().map(|(_, c)| c.len()).max().unwrap_or(0);
    for k in 0..depth {
        let cells: Vec<String> = curves
            .iter()
            .map(|(_, c)| c.get(k).map_or(String::new(), |v| format!("{v:.6e}")))
            .collect();
        writeln!(f, "{},{}", k, cells.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bound::Bound;
    use crate::engine::{CutKind, GbdVerdict, TraceFinal, TraceRow};
    use crate::nlp::SubproblemStatus;

    fn trace(n: usize, converged: bool, objective: f64, accepted_every: usize) -> GbdTrace {
        let rows = (0..n)
            .map(|i| TraceRow {
                iter: i,
                y: vec![0, 1],
                subproblem: SubproblemStatus::Feasible,
                cut: CutKind::Optimality,
                ubd: Bound::finite(objective + (n - i) as f64),
                lbd: Bound::finite(objective - (n - i) as f64),
                mode: if accepted_every > 0 && i % accepted_every == 0 {
                    AssignmentMode::FullAccepted
                } else {
                    AssignmentMode::Solver
                },
                fixed_count: 2,
                solver_invoked: !(accepted_every > 0 && i % accepted_every == 0),
                master_time_s: 0.01,
                subproblem_time_s: 0.02,
            })
            .collect::<Vec<_>>();
        GbdTrace {
            terminal: TraceFinal {
                converged,
                verdict: if converged { GbdVerdict::Converged } else { GbdVerdict::IterationLimit },
                objective: Some(objective),
                iterations: n,
                total_time_s: 0.03 * n as f64,
            },
            rows,
        }
    }

    #[test]
    fn summary_counts_and_acceptance() {
        let traces = vec![trace(4, true, 10.0, 2), trace(4, true, 12.0, 2)];
        let s = summarize_method("test", &traces, None);
        assert_eq!(s.instances, 2);
        assert_eq!(s.converged, 2);
        assert_eq!(s.iterations_total, 8);
        assert_eq!(s.full_master_solves, 4);
        assert!((s.full_acceptance_frequency - 0.5).abs() < 1e-12);
        assert!((s.master_time_mean - 0.04).abs() < 1e-12);
    }

    #[test]
    fn self_comparison_zero_gap() {
        let traces = vec![trace(3, true, 10.0, 0), trace(5, true, 20.0, 0)];
        let refs: Vec<Option<f64>> = traces.iter().map(|t| t.terminal.objective).collect();
        let s = summarize_method("classical", &traces, Some(&refs));
        assert_eq!(s.relative_gap_mean, 0.0);
        assert_eq!(s.relative_gap_std, 0.0);
    }

    #[test]
    fn gap_curve_uses_median_iteration_count() {
        let traces = vec![
            trace(3, true, 10.0, 0),
            trace(5, true, 10.0, 0),
            trace(5, true, 14.0, 0),
            trace(9, true, 10.0, 0),
            trace(5, false, 10.0, 0), // non-converged runs excluded
        ];
        let curve = median_gap_curve(&traces);
        assert_eq!(curve.len(), 5);
        // gap at iteration k is 2*(n-k) for both selected traces
        for (k, g) in curve.iter().enumerate() {
            assert!((g - 2.0 * (5 - k) as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn csv_writers_produce_headers() {
        let dir = tempfile::tempdir().unwrap();
        let traces = vec![trace(3, true, 10.0, 2)];
        let s = summarize_method("classical", &traces, None);
        let metrics = dir.path().join("metrics.csv");
        write_metrics_csv(&[s.clone()], &metrics, Some("digest")).unwrap();
        let text = std::fs::read_to_string(&metrics).unwrap();
        assert!(text.starts_with("# manifest_digest=digest\nmethod,"));

        let modes = dir.path().join("modes.csv");
        write_modes_csv(&[s], &modes, None).unwrap();
        let text = std::fs::read_to_string(&modes).unwrap();
        assert!(text.contains("FullAccepted"));

        let curves = dir.path().join("curves.csv");
        write_curves_csv(&[("classical".into(), vec![3.0, 1.0])], &curves, None).unwrap();
        let text = std::fs::read_to_string(&curves).unwrap();
        assert!(text.starts_with("iteration,classical"));
    }
}
