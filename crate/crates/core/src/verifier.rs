//! Deployment-time verification of agent assignments.
//!
//! Probabilities in the high-confidence region `[0, delta1] ∪ [delta2, 1]`
//! fix their variables; the rest stay free. A full assignment is accepted
//! only if it passes the master feasibility check and its candidate cost
//! does not exceed the incumbent upper bound; partial assignments go through
//! a reduced master solve with the same cost check; everything else falls
//! back to an exact master solve. The lower bound is folded through `max` to
//! stay nondecreasing.

use crate::bound::Bound;
use crate::master::{MasterSolve, MasterState};
use crate::problem::BinaryVec;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ConfidenceConfig {
    pub delta1: f64,
    pub delta2: f64,
}

impl Default for ConfidenceConfig {
    fn default() -> Self {
        ConfidenceConfig { delta1: 0.10, delta2: 0.90 }
    }
}

impl ConfidenceConfig {
    pub fn validated(self) -> Result<Self, String> {
        if !(0.0 <= self.delta1 && self.delta1 <= self.delta2 && self.delta2 <= 1.0) {
            return Err(format!(
                "require 0 <= delta1 <= delta2 <= 1, got ({}, {})",
                self.delta1, self.delta2
            ));
        }
        Ok(self)
    }
}

/// How an iteration's assignment was produced. The mode fully determines
/// which solver calls occurred.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AssignmentMode {
    /// All bits confident, feasible, cost-consistent: no solver call.
    FullAccepted,
    /// All bits confident but master-infeasible: exact solve.
    FullRejectedFeasibility,
    /// All bits confident, feasible, but candidate cost above UBD: exact solve.
    FullRejectedCost,
    /// Some bits confident; reduced solve accepted.
    PartialAccepted,
    /// Some bits confident; reduced solve infeasible or cost-rejected: exact solve.
    PartialFallback,
    /// No confident bits: exact solve.
    NoAssignment,
    /// Exact solve found no feasible assignment; GBD terminates.
    MasterInfeasible,
    /// Classical GBD: master solved exactly every iteration.
    Solver,
}

impl AssignmentMode {
    /// Whether the mode implies a full (unreduced) exact master solve.
    pub fn full_solver_invoked(self) -> bool {
        matches!(
            self,
            AssignmentMode::FullRejectedFeasibility
                | AssignmentMode::FullRejectedCost
                | AssignmentMode::PartialFallback
                | AssignmentMode::NoAssignment
                | AssignmentMode::MasterInfeasible
                | AssignmentMode::Solver
        )
    }
}

#[derive(Debug, Clone)]
pub struct AssignmentOutcome {
    pub y: BinaryVec,
    pub mu_b: Bound,
    pub mode: AssignmentMode,
    pub fixed_count: usize,
}

/// Splits probabilities into fixed bits (boundaries inclusive) and free
/// indices.
pub fn threshold(p: &DVector<f64>, cfg: &ConfidenceConfig) -> (Vec<(usize, u8)>, Vec<usize>) {
    let mut fixed = Vec::new();
    let mut free = Vec::new();
    for (i, &pi) in p.iter().enumerate() {
        if pi <= cfg.delta1 {
            fixed.push((i, 0));
        } else if pi >= cfg.delta2 {
            fixed.push((i, 1));
        } else {
            free.push(i);
        }
    }
    (fixed, free)
}

/// Nondecreasing lower-bound fold.
pub fn monotone_lbd(lbd_prev: Bound, mu_b: Bound) -> Bound {
    lbd_prev.max(mu_b)
}

/// The confidence-based assignment decision. Pure with respect to `state`;
/// deterministic in all inputs.
pub fn confidence_based_assignment(
    p: &DVector<f64>,
    state: &MasterState,
    ubd: Bound,
    cfg: &ConfidenceConfig,
) -> Result<AssignmentOutcome, crate::master::MasterError> {
    let m = state.m;
    let (fixed, free) = threshold(p, cfg);
    let fixed_count = fixed.len();

    let exact = |mode: AssignmentMode| -> Result<AssignmentOutcome, crate::master::MasterError> {
        Ok(match state.solve_exact()? {
            MasterSolve::Optimal { y, mu_b } => AssignmentOutcome {
                y,
                mu_b: Bound::finite(mu_b),
                mode,
                fixed_count,
            },
            MasterSolve::Infeasible => AssignmentOutcome {
                y: vec![0; m],
                mu_b: Bound::NEG_INF,
                mode: AssignmentMode::MasterInfeasible,
                fixed_count,
            },
        })
    };

    if free.is_empty() {
        // full assignment
        let mut y = vec![0u8; m];
        for &(i, v) in &fixed {
            y[i] = v;
        }
        if !state.check_feasible(&y) {
            return exact(AssignmentMode::FullRejectedFeasibility);
        }
        let mu_hat = state.eval_candidate_cost(&y);
        if mu_hat <= ubd {
            Ok(AssignmentOutcome {
                y,
                mu_b: mu_hat,
                mode: AssignmentMode::FullAccepted,
                fixed_count,
            })
        } else {
            exact(AssignmentMode::FullRejectedCost)
        }
    } else if !fixed.is_empty() {
        // partial assignment
        match state.solve_reduced(&fixed)? {
            MasterSolve::Optimal { y, mu_b } => {
                if Bound::finite(mu_b) <= ubd {
                    Ok(AssignmentOutcome {
                        y,
                        mu_b: Bound::finite(mu_b),
                        mode: AssignmentMode::PartialAccepted,
                        fixed_count,
                    })
                } else {
                    exact(AssignmentMode::PartialFallback)
                }
            }
            MasterSolve::Infeasible => exact(AssignmentMode::PartialFallback),
        }
    } else {
        exact(AssignmentMode::NoAssignment)
    }
}
