//! Classical and agent-augmented GBD drivers.
//!
//! Both alternate subproblem solves with master assignments until the bound
//! gap closes. The classical driver solves the master exactly every
//! iteration and takes its value as the lower bound. The hybrid driver
//! encodes the master as a bipartite graph, queries the actor for
//! probabilities (deterministic deployment: thresholded, never sampled),
//! runs the confidence-based assignment, and folds the returned cost through
//! a monotone max. Every run produces a structured trace.

use crate::bound::Bound;
use crate::graph::{encode, normalize, BipartiteGraph};
use crate::master::{MasterError, MasterSolve, MasterState};
use crate::nlp::{
    solve_feasibility, solve_subproblem, NlpError, NlpOptions, SubproblemSolution,
    SubproblemStatus,
};
use crate::nn::{actor_probabilities, NetError, NetParams};
use crate::problem::{BinaryVec, ProblemInstance};
use crate::verifier::{confidence_based_assignment, monotone_lbd, AssignmentMode, ConfidenceConfig};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use std::time::Instant;

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("subproblem solver failed at iteration {iter}, y={y:?}: {source}")]
    Subproblem {
        iter: usize,
        y: BinaryVec,
        source: NlpError,
    },
    #[error("subproblem reported numerical failure at iteration {iter}, y={y:?}")]
    SubproblemNumerical { iter: usize, y: BinaryVec },
    #[error("master: {0}")]
    Master(#[from] MasterError),
    #[error("actor: {0}")]
    Actor(#[from] NetError),
    #[error("initial assignment violates the pure-binary rows")]
    BadStart,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GbdLimits {
    pub eps: f64,
    pub max_iterations: usize,
    pub max_wall_s: f64,
}

impl Default for GbdLimits {
    fn default() -> Self {
        GbdLimits { eps: 1e-4, max_iterations: 100, max_wall_s: 300.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CutKind {
    Optimality,
    Feasibility,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GbdVerdict {
    Converged,
    IterationLimit,
    TimeLimit,
    /// The master became infeasible: no remaining binary assignment admits a
    /// feasible subproblem, so the original problem is infeasible.
    Infeasible,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    /// Assignment evaluated by the subproblem this iteration.
    pub y: BinaryVec,
    pub subproblem: SubproblemStatus,
    pub cut: CutKind,
    pub ubd: Bound,
    pub lbd: Bound,
    pub mode: AssignmentMode,
    pub fixed_count: usize,
    pub solver_invoked: bool,
    pub master_time_s: f64,
    pub subproblem_time_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceFinal {
    pub converged: bool,
    pub verdict: GbdVerdict,
    pub objective: Option<f64>,
    pub iterations: usize,
    pub total_time_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GbdTrace {
    pub rows: Vec<TraceRow>,
    pub terminal: TraceFinal,
}

impl GbdTrace {
    /// Checks the bound bookkeeping every trace must satisfy: UBD
    /// nonincreasing, LBD nondecreasing, LBD <= UBD + eps, converged implies
    /// closed gap, and exactly one cut per iteration (row indices dense).
    pub fn check_invariants(&self, eps: f64) -> Result<(), String> {
        let mut prev_ubd = Bound::POS_INF;
        let mut prev_lbd = Bound::NEG_INF;
        for (i, row) in self.rows.iter().enumerate() {
            if row.iter != i {
                return Err(format!("row {i} has iter {}", row.iter));
            }
            if row.ubd > prev_ubd {
                return Err(format!("UBD increased at iteration {i}"));
            }
            if row.lbd < prev_lbd {
                return Err(format!("LBD decreased at iteration {i}"));
            }
            if row.lbd.gap(row.ubd) > eps {
                return Err(format!(
                    "LBD {} exceeds UBD {} + eps at iteration {i}",
                    row.lbd, row.ubd
                ));
            }
            prev_ubd = row.ubd;
            prev_lbd = row.lbd;
        }
        if self.terminal.iterations != self.rows.len() {
            return Err("terminal iteration count mismatch".to_string());
        }
        if self.terminal.converged && prev_ubd.gap(prev_lbd) > eps {
            return Err("converged flag with open gap".to_string());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Incumbent {
    pub y: BinaryVec,
    pub x: DVector<f64>,
    pub objective: f64,
}

#[derive(Debug, Clone)]
pub struct GbdResult {
    pub verdict: GbdVerdict,
    pub incumbent: Option<Incumbent>,
    pub ubd: Bound,
    pub lbd: Bound,
    pub iterations: usize,
    pub total_time_s: f64,
}

/// Lexicographically smallest assignment satisfying the pure-binary rows;
/// the default GBD start.
pub fn default_y0(inst: &ProblemInstance) -> Result<Option<BinaryVec>, EngineError> {
    let state = MasterState::new(inst, vec![0; inst.m]);
    Ok(match state.solve_exact()? {
        MasterSolve::Optimal { y, .. } => Some(y),
        MasterSolve::Infeasible => None,
    })
}

/// Solves `S(y)`, falls through to `F(y)` on infeasibility, appends the
/// corresponding cut, and updates `y_prev`. Returns the cut kind and the
/// solution whose multipliers generated it.
pub(crate) fn subproblem_step(
    inst: &ProblemInstance,
    master: &mut MasterState,
    y: &[u8],
    nlp: &NlpOptions,
    iter: usize,
) -> Result<(CutKind, SubproblemSolution), EngineError> {
    let wrap = |source: NlpError, y: &[u8]| EngineError::Subproblem {
        iter,
        y: y.to_vec(),
        source,
    };
    let sol = solve_subproblem(inst, y, nlp).map_err(|e| wrap(e, y))?;
    master.y_prev = y.to_vec();
    match sol.status {
        SubproblemStatus::Feasible => {
            master.add_optimality_cut(&sol, inst)?;
            Ok((CutKind::Optimality, sol))
        }
        SubproblemStatus::Infeasible => {
            let mut fsol = solve_feasibility(inst, y, nlp).map_err(|e| wrap(e, y))?;
            fsol.iterations += sol.iterations;
            fsol.wall_time += sol.wall_time;
            master.add_feasibility_cut(&fsol, inst, nlp.tol_feas)?;
            Ok((CutKind::Feasibility, fsol))
        }
        SubproblemStatus::NumericalFailure => Err(EngineError::SubproblemNumerical {
            iter,
            y: y.to_vec(),
        }),
    }
}

fn update_incumbent(
    incumbent: &mut Option<Incumbent>,
    sol: &SubproblemSolution,
    y: &[u8],
) -> Bound {
    let better = incumbent
        .as_ref()
        .map_or(true, |inc| sol.objective < inc.objective);
    if better {
        *incumbent = Some(Incumbent {
            y: y.to_vec(),
            x: sol.x.clone(),
            objective: sol.objective,
        });
    }
    Bound::finite(incumbent.as_ref().unwrap().objective)
}

/// Deterministic master-time proxy used in deterministic-time mode: the
/// number of candidate assignments the exact solver would enumerate.
fn master_work_proxy(m: usize, mode: AssignmentMode, fixed_count: usize) -> f64 {
    let units: u64 = match mode {
        AssignmentMode::FullAccepted => m as u64,
        AssignmentMode::PartialAccepted => 1u64 << (m - fixed_count).min(40),
        _ => 1u64 << m.min(40),
    };
    units as f64 * 1e-6
}

/// Classical GBD (exact master every iteration).
pub fn solve_classical(
    inst: &ProblemInstance,
    y0: &[u8],
    limits: &GbdLimits,
    nlp: &NlpOptions,
) -> Result<(GbdResult, GbdTrace), EngineError> {
    if !inst.pure_binary_ok(y0, 1e-9) {
        return Err(EngineError::BadStart);
    }
    let started = Instant::now();
    let deterministic = nlp.deterministic_time.is_some();
    let mut master = MasterState::new(inst, y0.to_vec());
    let mut ubd = Bound::POS_INF;
    let mut lbd = Bound::NEG_INF;
    let mut incumbent: Option<Incumbent> = None;
    let mut rows = Vec::new();
    let mut y = y0.to_vec();
    let mut verdict = GbdVerdict::IterationLimit;

    let mut iter = 0usize;
    while ubd.gap(lbd) > limits.eps {
        if iter >= limits.max_iterations {
            verdict = GbdVerdict::IterationLimit;
            break;
        }
        if started.elapsed().as_secs_f64() > limits.max_wall_s {
            verdict = GbdVerdict::TimeLimit;
            break;
        }
        let (cut, sol) = subproblem_step(inst, &mut master, &y, nlp, iter)?;
        if cut == CutKind::Optimality {
            ubd = ubd.min(update_incumbent(&mut incumbent, &sol, &y));
        }
        let master_started = Instant::now();
        let solve = master.solve_exact()?;
        let master_time = if deterministic {
            master_work_proxy(inst.m, AssignmentMode::Solver, 0)
        } else {
            master_started.elapsed().as_secs_f64()
        };
        let (y_next, mu_b) = match solve {
            MasterSolve::Optimal { y, mu_b } => (y, Bound::finite(mu_b)),
            MasterSolve::Infeasible => {
                rows.push(TraceRow {
                    iter,
                    y: y.clone(),
                    subproblem: sol.status,
                    cut,
                    ubd,
                    lbd,
                    mode: AssignmentMode::MasterInfeasible,
                    fixed_count: 0,
                    solver_invoked: true,
                    master_time_s: master_time,
                    subproblem_time_s: sol.wall_time,
                });
                verdict = GbdVerdict::Infeasible;
                iter += 1;
                break;
            }
        };
        lbd = mu_b;
        rows.push(TraceRow {
            iter,
            y: y.clone(),
            subproblem: sol.status,
            cut,
            ubd,
            lbd,
            mode: AssignmentMode::Solver,
            fixed_count: 0,
            solver_invoked: true,
            master_time_s: master_time,
            subproblem_time_s: sol.wall_time,
        });
        y = y_next;
        iter += 1;
        if ubd.gap(lbd) <= limits.eps {
            verdict = GbdVerdict::Converged;
        }
    }
    if ubd.gap(lbd) <= limits.eps {
        verdict = GbdVerdict::Converged;
    }
    finish(verdict, incumbent, ubd, lbd, rows, started, deterministic)
}

/// Agent-augmented GBD with a trained actor.
pub fn solve_hybrid(
    inst: &ProblemInstance,
    y0: &[u8],
    actor: &NetParams,
    cfg: &ConfidenceConfig,
    limits: &GbdLimits,
    nlp: &NlpOptions,
) -> Result<(GbdResult, GbdTrace), EngineError> {
    if actor.head_out() != inst.m {
        return Err(EngineError::Actor(NetError::Shape(format!(
            "actor has {} heads, instance has m={}",
            actor.head_out(),
            inst.m
        ))));
    }
    let mut policy = |graph: &BipartiteGraph, _state: &MasterState| actor_probabilities(actor, graph);
    solve_hybrid_with(inst, y0, &mut policy, cfg, limits, nlp)
}

/// Hybrid driver with an injectable policy (tests use an oracle policy that
/// replays the exact master solution).
pub fn solve_hybrid_with(
    inst: &ProblemInstance,
    y0: &[u8],
    policy: &mut dyn FnMut(&BipartiteGraph, &MasterState) -> Result<DVector<f64>, NetError>,
    cfg: &ConfidenceConfig,
    limits: &GbdLimits,
    nlp: &NlpOptions,
) -> Result<(GbdResult, GbdTrace), EngineError> {
    if !inst.pure_binary_ok(y0, 1e-9) {
        return Err(EngineError::BadStart);
    }
    let started = Instant::now();
    let deterministic = nlp.deterministic_time.is_some();
    let mut master = MasterState::new(inst, y0.to_vec());
    let mut ubd = Bound::POS_INF;
    let mut lbd = Bound::NEG_INF;
    let mut incumbent: Option<Incumbent> = None;
    let mut rows = Vec::new();
    let mut y = y0.to_vec();
    let mut verdict = GbdVerdict::IterationLimit;

    let mut iter = 0usize;
    while ubd.gap(lbd) > limits.eps {
        if iter >= limits.max_iterations {
            verdict = GbdVerdict::IterationLimit;
            break;
        }
        if started.elapsed().as_secs_f64() > limits.max_wall_s {
            verdict = GbdVerdict::TimeLimit;
            break;
        }
        let (cut, sol) = subproblem_step(inst, &mut master, &y, nlp, iter)?;
        if cut == CutKind::Optimality {
            ubd = ubd.min(update_incumbent(&mut incumbent, &sol, &y));
        }
        let master_started = Instant::now();
        let graph = normalize(encode(&master));
        let p = policy(&graph, &master)?;
        let outcome = confidence_based_assignment(&p, &master, ubd, cfg)?;
        let master_time = if deterministic {
            master_work_proxy(inst.m, outcome.mode, outcome.fixed_count)
        } else {
            master_started.elapsed().as_secs_f64()
        };
        if outcome.mode == AssignmentMode::MasterInfeasible {
            rows.push(TraceRow {
                iter,
                y: y.clone(),
                subproblem: sol.status,
                cut,
                ubd,
                lbd,
                mode: outcome.mode,
                fixed_count: outcome.fixed_count,
                solver_invoked: true,
                master_time_s: master_time,
                subproblem_time_s: sol.wall_time,
            });
            verdict = GbdVerdict::Infeasible;
            iter += 1;
            break;
        }
        lbd = monotone_lbd(lbd, outcome.mu_b);
        rows.push(TraceRow {
            iter,
            y: y.clone(),
            subproblem: sol.status,
            cut,
            ubd,
            lbd,
            mode: outcome.mode,
            fixed_count: outcome.fixed_count,
            solver_invoked: outcome.mode.full_solver_invoked(),
            master_time_s: master_time,
            subproblem_time_s: sol.wall_time,
        });
        y = outcome.y;
        iter += 1;
        if ubd.gap(lbd) <= limits.eps {
            verdict = GbdVerdict::Converged;
        }
    }
    if ubd.gap(lbd) <= limits.eps {
        verdict = GbdVerdict::Converged;
    }
    finish(verdict, incumbent, ubd, lbd, rows, started, deterministic)
}

#[allow(clippy::too_many_arguments)]
fn finish(
    verdict: GbdVerdict,
    incumbent: Option<Incumbent>,
    ubd: Bound,
    lbd: Bound,
    rows: Vec<TraceRow>,
    started: Instant,
    deterministic: bool,
) -> Result<(GbdResult, GbdTrace), EngineError> {
    let total = if deterministic {
        rows.iter().map(|r| r.master_time_s + r.subproblem_time_s).sum()
    } else {
        started.elapsed().as_secs_f64()
    };
    let result = GbdResult {
        verdict,
        ubd,
        lbd,
        iterations: rows.len(),
        total_time_s: total,
        incumbent,
    };
    let trace = GbdTrace {
        terminal: TraceFinal {
            converged: verdict == GbdVerdict::Converged,
            verdict,
            objective: result.incumbent.as_ref().map(|i| i.objective),
            iterations: rows.len(),
            total_time_s: total,
        },
        rows,
    };
    Ok((result, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{build_case_study1, CaseStudyCoefficients};

    #[test]
    fn default_start_is_lex_smallest_feasible() {
        let inst = build_case_study1(CaseStudyCoefficients::NOMINAL).unwrap();
        let y0 = default_y0(&inst).unwrap().unwrap();
        assert_eq!(y0, vec![0, 1, 0, 0, 0]);
    }

    #[test]
    fn classical_converges_on_nominal_instance() {
        let inst = build_case_study1(CaseStudyCoefficients::NOMINAL).unwrap();
        let y0 = default_y0(&inst).unwrap().unwrap();
        let (result, trace) =
            solve_classical(&inst, &y0, &GbdLimits::default(), &NlpOptions::default()).unwrap();
        assert_eq!(result.verdict, GbdVerdict::Converged);
        trace.check_invariants(GbdLimits::default().eps).unwrap();
        assert!(result.incumbent.is_some());
        // one cut per iteration
        assert_eq!(trace.rows.len(), result.iterations);
    }

    #[test]
    fn huge_eps_converges_in_one_iteration() {
        let inst = build_case_study1(CaseStudyCoefficients::NOMINAL).unwrap();
        let y0 = default_y0(&inst).unwrap().unwrap();
        let limits = GbdLimits { eps: 1e9, ..GbdLimits::default() };
        let (result, trace) =
            solve_classical(&inst, &y0, &limits, &NlpOptions::default()).unwrap();
        assert_eq!(result.verdict, GbdVerdict::Converged);
        assert_eq!(trace.rows.len(), 1);
    }

    #[test]
    fn hybrid_with_uninformative_actor_matches_classical() {
        use rand::SeedableRng;
        let inst = build_case_study1(CaseStudyCoefficients::NOMINAL).unwrap();
        let y0 = default_y0(&inst).unwrap().unwrap();
        let limits = GbdLimits::default();
        let nlp = NlpOptions::default();
        let (classical, ct) = solve_classical(&inst, &y0, &limits, &nlp).unwrap();

        // zeroed weights put every probability at exactly 0.5: always the
        // NoAssignment branch, i.e. a pure solver fallback
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let actor = NetParams::actor(inst.m, &mut rng).zeros_like();
        let (hybrid, ht) = solve_hybrid(
            &inst,
            &y0,
            &actor,
            &ConfidenceConfig::default(),
            &limits,
            &nlp,
        )
        .unwrap();
        assert_eq!(hybrid.verdict, GbdVerdict::Converged);
        assert_eq!(ct.rows.len(), ht.rows.len());
        for (a, b) in ct.rows.iter().zip(&ht.rows) {
            assert_eq!(a.y, b.y);
            assert_eq!(a.ubd, b.ubd);
            assert_eq!(b.mode, AssignmentMode::NoAssignment);
        }
        let (co, ho) = (
            classical.incumbent.unwrap().objective,
            hybrid.incumbent.unwrap().objective,
        );
        assert!((co - ho).abs() < 1e-9);
        ht.check_invariants(limits.eps).unwrap();
    }

    #[test]
    fn hybrid_with_oracle_policy_reproduces_classical_bounds() {
        let inst = build_case_study1(CaseStudyCoefficients::NOMINAL).unwrap();
        let y0 = default_y0(&inst).unwrap().unwrap();
        let limits = GbdLimits::default();
        let nlp = NlpOptions::default();
        let (_, ct) = solve_classical(&inst, &y0, &limits, &nlp).unwrap();

        // oracle: output the exact master optimum as 0/1 probabilities
        let mut policy = |_: &BipartiteGraph, state: &MasterState| {
            match state.solve_exact().unwrap() {
                MasterSolve::Optimal { y, .. } => {
                    Ok(DVector::from_fn(y.len(), |i, _| f64::from(y[i])))
                }
                MasterSolve::Infeasible => Ok(DVector::from_element(state.m, 0.5)),
            }
        };
        let (_, ht) = solve_hybrid_with(
            &inst,
            &y0,
            &mut policy,
            &ConfidenceConfig::default(),
            &limits,
            &nlp,
        )
        .unwrap();
        assert_eq!(ct.rows.len(), ht.rows.len());
        for (a, b) in ct.rows.iter().zip(&ht.rows) {
            assert_eq!(a.y, b.y);
            assert_eq!(a.ubd, b.ubd);
            // oracle assignments are always accepted without a solver call
            assert_eq!(b.mode, AssignmentMode::FullAccepted);
            assert!(a.lbd.gap(b.lbd).abs() < 1e-9);
        }
    }

    #[test]
    fn bad_start_rejected() {
        let inst = build_case_study1(CaseStudyCoefficients::NOMINAL).unwrap();
        let err = solve_classical(
            &inst,
            &[0, 0, 0, 0, 0],
            &GbdLimits::default(),
            &NlpOptions::default(),
        );
        assert!(matches!(err, Err(EngineError::BadStart)));
    }
}
