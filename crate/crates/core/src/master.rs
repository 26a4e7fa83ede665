//! Benders master problem: cut storage, feasibility checks, and exact
//! solving.
//!
//! The master minimizes the epigraph variable `mu_b` over binary `y` subject
//! to accumulated optimality cuts `mu_b >= w'y + beta`, feasibility cuts
//! `v'y + gamma <= 0`, and the pure-binary rows `K y <= b`. Because `mu_b`
//! appears only in the epigraph, the problem reduces to minimizing a
//! max-of-affine over the binary lattice; it is solved exactly by enumeration
//! (default up to [`ENUMERATION_MAX_M`] variables) or by best-first
//! branch-and-bound with interval bounds on the unfixed bits. Ties break to
//! the lexicographically smallest assignment so traces are reproducible.

use crate::bound::Bound;
use crate::nlp::{SubproblemSolution, SubproblemStatus};
use crate::problem::{BinaryVec, ProblemInstance};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::BinaryHeap;

/// Constraint-satisfaction tolerance for binary rows and cuts.
pub const CHECK_TOL: f64 = 1e-9;
/// Enumeration is the default exact method up to this many binaries.
pub const ENUMERATION_MAX_M: usize = 20;
/// Branch-and-bound guard (bits are packed in a u64 path key).
pub const BNB_MAX_M: usize = 64;
/// Default floor for `mu_b` while no optimality cut exists; stands in for
/// the initial lower bound of minus infinity.
pub const DEFAULT_MU_LO: f64 = -1e6;

#[derive(Debug, thiserror::Error)]
pub enum MasterError {
    #[error("cut built from wrong subproblem status: expected {expected}")]
    WrongStatus { expected: &'static str },
    #[error("degenerate feasibility cut (all-zero coefficients and nonpositive constant)")]
    DegenerateCut,
    #[error("zero-slack feasibility solution: no cut needed")]
    ZeroSlack,
    #[error("m={0} exceeds branch-and-bound guard {BNB_MAX_M}")]
    TooManyBinaries(usize),
}

/// `mu_b >= w'y + beta`, built from a feasible subproblem solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalityCut {
    pub w: Vec<f64>,
    pub beta: f64,
}

impl OptimalityCut {
    pub fn value_at(&self, y: &[u8]) -> f64 {
        dot_binary(&self.w, y) + self.beta
    }
}

/// `v'y + gamma <= 0`, built from an infeasible-`y` slack solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityCut {
    pub v: Vec<f64>,
    pub gamma: f64,
}

impl FeasibilityCut {
    pub fn lhs_at(&self, y: &[u8]) -> f64 {
        dot_binary(&self.v, y) + self.gamma
    }
}

fn dot_binary(coef: &[f64], y: &[u8]) -> f64 {
    coef.iter()
        .zip(y)
        .map(|(&c, &yj)| c * f64::from(yj))
        .sum()
}

/// Accumulated master-problem state. Single-writer: the GBD loop owns it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MasterState {
    pub opt_cuts: Vec<OptimalityCut>,
    pub feas_cuts: Vec<FeasibilityCut>,
    pub k_rows: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    /// Last assignment sent to the subproblem.
    pub y_prev: BinaryVec,
    /// Floor for `mu_b` when no optimality cut exists.
    pub mu_lo: f64,
    pub m: usize,
}

/// Result of an exact master solve.
#[derive(Debug, Clone, PartialEq)]
pub enum MasterSolve {
    Optimal { y: BinaryVec, mu_b: f64 },
    Infeasible,
}

impl MasterState {
    pub fn new(inst: &ProblemInstance, y0: BinaryVec) -> Self {
        let k_rows = (0..inst.s)
            .map(|t| (0..inst.m).map(|j| inst.k_mat[(t, j)]).collect())
            .collect();
        MasterState {
            opt_cuts: Vec::new(),
            feas_cuts: Vec::new(),
            k_rows,
            b: inst.b.iter().copied().collect(),
            y_prev: y0,
            mu_lo: DEFAULT_MU_LO,
            m: inst.m,
        }
    }

    /// Appends the optimality cut derived from a feasible subproblem
    /// solution: `w_j = e_j + (A'lambda)_j + (B'mu)_j`,
    /// `beta = f(x) + lambda'h(x) + mu'g(x)`. Returns the cut index.
    pub fn add_optimality_cut(
        &mut self,
        sol: &SubproblemSolution,
        inst: &ProblemInstance,
    ) -> Result<usize, MasterError> {
        if sol.status != SubproblemStatus::Feasible {
            return Err(MasterError::WrongStatus { expected: "Feasible" });
        }
        let (w, beta) = cut_coefficients(sol, inst, true);
        self.opt_cuts.push(OptimalityCut { w, beta });
        Ok(self.opt_cuts.len() - 1)
    }

    /// Appends the feasibility cut derived from a positive-slack `F(y)`
    /// solution: `v_j = (A'lambda)_j + (B'mu)_j`,
    /// `gamma = lambda'h(x) + mu'g(x)`. Returns the cut index.
    pub fn add_feasibility_cut(
        &mut self,
        sol: &SubproblemSolution,
        inst: &ProblemInstance,
        tol_feas: f64,
    ) -> Result<usize, MasterError> {
        if sol.status == SubproblemStatus::NumericalFailure {
            return Err(MasterError::WrongStatus { expected: "Infeasible" });
        }
        if sol.objective <= tol_feas {
            return Err(MasterError::ZeroSlack);
        }
        let (v, gamma) = cut_coefficients(sol, inst, false);
        if v.iter().all(|&c| c.abs() < 1e-12) && gamma <= CHECK_TOL {
            return Err(MasterError::DegenerateCut);
        }
        self.feas_cuts.push(FeasibilityCut { v, gamma });
        Ok(self.feas_cuts.len() - 1)
    }

    /// True iff `y` satisfies the pure-binary rows and every feasibility
    /// cut. Optimality cuts are never checked: they are always satisfiable
    /// through `mu_b`.
    pub fn check_feasible(&self, y: &[u8]) -> bool {
        for (row, &bt) in self.k_rows.iter().zip(&self.b) {
            if dot_binary(row, y) > bt + CHECK_TOL {
                return false;
            }
        }
        self.feas_cuts.iter().all(|c| c.lhs_at(y) <= CHECK_TOL)
    }

    /// Max over the optimality cuts at `y`; the tagged -inf sentinel when no
    /// optimality cut exists.
    pub fn eval_candidate_cost(&self, y: &[u8]) -> Bound {
        self.opt_cuts
            .iter()
            .map(|c| c.value_at(y))
            .fold(None, |acc: Option<f64>, v| {
                Some(match acc {
                    None => v,
                    Some(a) => a.max(v),
                })
            })
            .map_or(Bound::NEG_INF, Bound::finite)
    }

    /// Exact master solve; enumeration for small `m`, branch-and-bound
    /// beyond. Ties break lexicographically.
    pub fn solve_exact(&self) -> Result<MasterSolve, MasterError> {
        self.solve_with_fixed(&[])
    }

    /// Exact master solve over assignments extending `fixed`
    /// (index, value) pairs.
    pub fn solve_reduced(&self, fixed: &[(usize, u8)]) -> Result<MasterSolve, MasterError> {
        self.solve_with_fixed(fixed)
    }

    fn solve_with_fixed(&self, fixed: &[(usize, u8)]) -> Result<MasterSolve, MasterError> {
        if self.m <= ENUMERATION_MAX_M {
            Ok(self.solve_enumerate(fixed))
        } else {
            self.solve_bnb(fixed)
        }
    }

    /// Objective value of a (master-feasible) complete assignment.
    fn assignment_cost(&self, y: &[u8]) -> f64 {
        match self.eval_candidate_cost(y) {
            Bound::Finite(v) => v,
            _ => self.mu_lo,
        }
    }

    fn solve_enumerate(&self, fixed: &[(usize, u8)]) -> MasterSolve {
        let m = self.m;
        let mut best: Option<(BinaryVec, f64)> = None;
        'outer: for code in 0..(1u64 << m) {
            let y = binary_vector(code, m);
            for &(idx, val) in fixed {
                if y[idx] != val {
                    continue 'outer;
                }
            }
            if !self.check_feasible(&y) {
                continue;
            }
            let cost = self.assignment_cost(&y);
            // lex order of enumeration: replace only on strict improvement
            let better = match &best {
                None => true,
                Some((_, c)) => cost < *c,
            };
            if better {
                best = Some((y, cost));
            }
        }
        match best {
            Some((y, mu_b)) => MasterSolve::Optimal { y, mu_b },
            None => MasterSolve::Infeasible,
        }
    }

    /// Best-first branch-and-bound on the bits in index order, with an
    /// interval lower bound on the unfixed tail. Among equal bounds the heap
    /// prefers lexicographically smaller prefixes, so the first complete
    /// node popped is the lexicographically smallest optimum.
    pub fn solve_bnb(&self, fixed: &[(usize, u8)]) -> Result<MasterSolve, MasterError> {
        let m = self.m;
        if m > BNB_MAX_M {
            return Err(MasterError::TooManyBinaries(m));
        }
        let mut forced: Vec<Option<u8>> = vec![None; m];
        for &(idx, val) in fixed {
            forced[idx] = Some(val);
        }

        let root = Node { depth: 0, bits: 0 };
        let mut heap = BinaryHeap::new();
        if let Some(bound) = self.node_bound(&root, &forced) {
            heap.push(HeapEntry { bound, node: root });
        }
        while let Some(HeapEntry { node, .. }) = heap.pop() {
            if node.depth == m {
                let y = node.assignment(m);
                let mu_b = self.assignment_cost(&y);
                return Ok(MasterSolve::Optimal { y, mu_b });
            }
            for val in [0u8, 1u8] {
                if let Some(want) = forced[node.depth] {
                    if want != val {
                        continue;
                    }
                }
                let child = node.child(val);
                if let Some(bound) = self.node_bound(&child, &forced) {
                    heap.push(HeapEntry { bound, node: child });
                }
            }
        }
        Ok(MasterSolve::Infeasible)
    }

    /// Lower bound over completions of a partial assignment, or None when
    /// no completion can be master-feasible.
    fn node_bound(&self, node: &Node, forced: &[Option<u8>]) -> Option<f64> {
        let m = self.m;
        let depth = node.depth;
        // interval minimum of an affine form over the free tail, honoring
        // forced bits
        let min_tail = |coef: &[f64]| -> f64 {
            let mut v = 0.0;
            for j in depth..m {
                match forced[j] {
                    Some(1) => v += coef[j],
                    Some(0) => {}
                    None => v += coef[j].min(0.0),
                    Some(_) => unreachable!(),
                }
            }
            v
        };
        let prefix = |coef: &[f64]| -> f64 {
            (0..depth)
                .map(|j| coef[j] * f64::from(node.bit(j)))
                .sum::<f64>()
        };
        for (row, &bt) in self.k_rows.iter().zip(&self.b) {
            if prefix(row) + min_tail(row) > bt + CHECK_TOL {
                return None;
            }
        }
        for cut in &self.feas_cuts {
            if prefix(&cut.v) + min_tail(&cut.v) + cut.gamma > CHECK_TOL {
                return None;
            }
        }
        if self.opt_cuts.is_empty() {
            return Some(self.mu_lo);
        }
        let bound = self
            .opt_cuts
            .iter()
            .map(|c| prefix(&c.w) + min_tail(&c.w) + c.beta)
            .fold(f64::NEG_INFINITY, f64::max);
        Some(bound)
    }
}

/// Shared cut algebra: `coef_j = [e_j] + (A'lambda)_j + (B'mu)_j` and
/// `constant = [f(x)] + lambda'h(x) + mu'g(x)`.
fn cut_coefficients(
    sol: &SubproblemSolution,
    inst: &ProblemInstance,
    with_objective: bool,
) -> (Vec<f64>, f64) {
    let mut coef = DVector::zeros(inst.m);
    if with_objective {
        coef += &inst.e;
    }
    if inst.p > 0 {
        coef += inst.a_mat.transpose() * &sol.lambda;
    }
    if inst.q > 0 {
        coef += inst.b_mat.transpose() * &sol.mu;
    }
    let g = inst.convex.ineq(&sol.x);
    let mut constant = sol.mu.dot(&g);
    if inst.p > 0 {
        constant += sol.lambda.dot(&inst.convex.eq(&sol.x));
    }
    if with_objective {
        constant += inst.convex.objective(&sol.x);
    }
    (coef.iter().copied().collect(), constant)
}

/// Bits of `code` as a binary vector, index 0 most significant, so that
/// ascending codes enumerate assignments in lexicographic order.
pub fn binary_vector(code: u64, m: usize) -> BinaryVec {
    (0..m)
        .map(|j| ((code >> (m - 1 - j)) & 1) as u8)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Node {
    depth: usize,
    /// Prefix bits, bit j in position (63 - j).
    bits: u64,
}

impl Node {
    fn bit(&self, j: usize) -> u8 {
        ((self.bits >> (63 - j)) & 1) as u8
    }
    fn child(&self, val: u8) -> Node {
        let mut bits = self.bits;
        if val == 1 {
            bits |= 1u64 << (63 - self.depth);
        }
        Node { depth: self.depth + 1, bits }
    }
    fn assignment(&self, m: usize) -> BinaryVec {
        (0..m).map(|j| self.bit(j)).collect()
    }
}

struct HeapEntry {
    bound: f64,
    node: Node,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // max-heap: smaller bound pops first, then lexicographically smaller
        // prefix; a prefix pops before its extensions
        other
            .bound
            .partial_cmp(&self.bound)
            .unwrap_or(Ordering::Equal)
            .then_with(|| {
                // MSB-aligned bits compare lexicographically as integers
                other.node.bits.cmp(&self.node.bits)
            })
            .then_with(|| other.node.depth.cmp(&self.node.depth))
    }
}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
