//! Fixed-binary subproblem solver: log-barrier Newton path-following with
//! Lagrange multiplier recovery.
//!
//! [`solve_subproblem`] solves `S(y)`: the instance with `y` fixed, over the
//! inequality rows, the polyhedral part of `X`, and the box, with equality
//! rows handled by a bordered (KKT) Newton system. [`solve_feasibility`]
//! solves the slack relaxation `F(y)` minimizing total violation; it doubles
//! as the phase-1 problem that supplies a strictly feasible warm start.
//!
//! Multipliers are recovered from the final barrier stage as
//! `mu_i = 1 / (t * slack_i)` and `lambda = nu / t`. The subproblem feasible
//! set can have an empty interior when a switching variable pins a continuous
//! variable against its bound, so phase 2 relaxes every inequality by a tiny
//! margin (`NlpOptions::relax`); the margin is far inside every reported
//! tolerance.

use crate::problem::{BinaryVec, ProblemInstance};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::io::Write as _;
use std::path::PathBuf;
use std::time::Instant;

#[derive(Debug, thiserror::Error)]
pub enum NlpError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("numerical failure in {phase}: {detail}")]
    Numerical { phase: &'static str, detail: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SubproblemStatus {
    Feasible,
    Infeasible,
    NumericalFailure,
}

/// Solution of `S(y)` or `F(y)` with recovered multipliers.
#[derive(Debug, Clone)]
pub struct SubproblemSolution {
    pub status: SubproblemStatus,
    pub x: DVector<f64>,
    /// `Z(y) = f(x) + e'y` when feasible, total slack when infeasible.
    pub objective: f64,
    /// Equality-row multipliers, length `p`.
    pub lambda: DVector<f64>,
    /// Inequality-row multipliers, length `q`, nonnegative.
    pub mu: DVector<f64>,
    /// Total Newton iterations across phases.
    pub iterations: usize,
    /// Seconds; in deterministic-time mode, iterations times a fixed constant.
    pub wall_time: f64,
}

#[derive(Debug, Clone)]
pub struct NlpOptions {
    pub tol_feas: f64,
    pub tol_comp: f64,
    /// Newton iteration budget per barrier stage.
    pub max_newton: usize,
    pub barrier_t0: f64,
    pub barrier_mult: f64,
    /// Stop the schedule once `n_slacks / t` drops below this.
    pub gap_target: f64,
    /// Phase-2 inequality relaxation; keeps a strict interior when the true
    /// feasible set touches its boundary.
    pub relax: f64,
    /// Armijo parameter for the residual-norm backtracking line search.
    pub armijo: f64,
    pub backtrack: f64,
    /// When set, `wall_time = iterations * constant` instead of clock time.
    pub deterministic_time: Option<f64>,
    /// Append per-stage iterate records as JSON lines.
    pub iterate_log: Option<PathBuf>,
}

impl Default for NlpOptions {
    fn default() -> Self {
        NlpOptions {
            tol_feas: 1e-6,
            tol_comp: 1e-5,
            max_newton: 200,
            barrier_t0: 1.0,
            barrier_mult: 10.0,
            gap_target: 1e-8,
            relax: 1e-7,
            armijo: 1e-4,
            backtrack: 0.5,
            deterministic_time: None,
            iterate_log: None,
        }
    }
}

/// Per-iteration wall time used by deterministic-time mode.
pub const DETERMINISTIC_SECONDS_PER_NEWTON: f64 = 1e-3;

/// Smooth convex problem in barrier form:
/// `min t*c(z) - sum_k log s_k(z)` subject to `J_eq z = rhs_eq`,
/// with every `s_k` concave (so `-log s_k` is convex).
trait BarrierProblem {
    fn dim(&self) -> usize;
    fn n_slacks(&self) -> usize;
    fn objective_grad(&self, z: &DVector<f64>) -> DVector<f64>;
    fn slacks(&self, z: &DVector<f64>) -> DVector<f64>;
    /// `d s_k / d z`, `n_slacks x dim`.
    fn slack_jacobian(&self, z: &DVector<f64>) -> DMatrix<f64>;
    /// `w_obj * Hess(c) + sum_k w[k] * Hess(-s_k)`.
    fn curvature(&self, z: &DVector<f64>, w_obj: f64, w: &DVector<f64>) -> DMatrix<f64>;
    fn eq_jacobian(&self) -> &DMatrix<f64>;
    fn eq_rhs(&self) -> &DVector<f64>;
}

struct BarrierOutcome {
    z: DVector<f64>,
    /// True-scale equality multipliers (`nu / t`).
    eq_mult: DVector<f64>,
    slacks: DVector<f64>,
    t_final: f64,
    newton_iters: usize,
}

#[derive(Serialize)]
struct IterateRecord<'a> {
    phase: &'a str,
    stage_t: f64,
    newton_steps: usize,
    dual_residual: f64,
    primal_residual: f64,
}

/// Path-following over the barrier schedule. `z0` must have all slacks
/// strictly positive.
fn path_follow(
    prob: &dyn BarrierProblem,
    z0: DVector<f64>,
    opts: &NlpOptions,
    phase: &'static str,
) -> Result<BarrierOutcome, NlpError> {
    let p = prob.eq_jacobian().nrows();
    let mut z = z0;
    let s0 = prob.slacks(&z);
    if s0.iter().any(|&s| !(s > 0.0)) {
        return Err(NlpError::Numerical {
            phase,
            detail: "start point is not strictly feasible".to_string(),
        });
    }

    let mut nu = DVector::<f64>::zeros(p);
    let mut t = opts.barrier_t0;
    let mut total_iters = 0usize;
    let n_slacks = prob.n_slacks() as f64;

    loop {
        let (steps, dual_res, pri_res, converged) =
            newton_stage(prob, &mut z, &mut nu, t, opts, phase)?;
        total_iters += steps;
        log_iterate(opts, &IterateRecord { phase, stage_t: t, newton_steps: steps, dual_residual: dual_res, primal_residual: pri_res });

        let last_stage = n_slacks / t <= opts.gap_target;
        if last_stage {
            if !converged {
                return Err(NlpError::Numerical {
                    phase,
                    detail: format!(
                        "Newton budget exhausted at final barrier stage t={t:.1e} (residual {dual_res:.3e})"
                    ),
                });
            }
            let slacks = prob.slacks(&z);
            return Ok(BarrierOutcome {
                eq_mult: &nu / t,
                z,
                slacks,
                t_final: t,
                newton_iters: total_iters,
            });
        }
        // rescale carried multipliers along with the objective weight
        nu *= opts.barrier_mult;
        t *= opts.barrier_mult;
    }
}

/// Newton iterations for one barrier stage. Returns (steps, dual residual,
/// primal residual, converged).
fn newton_stage(
    prob: &dyn BarrierProblem,
    z: &mut DVector<f64>,
    nu: &mut DVector<f64>,
    t: f64,
    opts: &NlpOptions,
    phase: &'static str,
) -> Result<(usize, f64, f64, bool), NlpError> {
    let dim = prob.dim();
    let j_eq = prob.eq_jacobian();
    let p = j_eq.nrows();

    // Barrier gradient without the equality term: t*grad c - sum (1/s) grad s.
    // Returns None when any slack is nonpositive (trial left the domain).
    let grad_phi = |z: &DVector<f64>| -> Option<DVector<f64>> {
        let s = prob.slacks(z);
        if s.iter().any(|&v| !(v > 0.0)) {
            return None;
        }
        let sj = prob.slack_jacobian(z);
        let inv_s = s.map(|v| 1.0 / v);
        Some(prob.objective_grad(z) * t - sj.transpose() * inv_s)
    };

    // true-scale KKT residual components at (z, nu)
    let residual = |z: &DVector<f64>, nu: &DVector<f64>| -> Option<(DVector<f64>, DVector<f64>)> {
        let mut r_dual = grad_phi(z)?;
        if p > 0 {
            r_dual += j_eq.transpose() * nu;
        }
        let r_pri = if p > 0 {
            j_eq * z - prob.eq_rhs()
        } else {
            DVector::zeros(0)
        };
        Some((r_dual / t, r_pri))
    };

    let merit = |rd: &DVector<f64>, rp: &DVector<f64>| -> f64 {
        (rd.norm_squared() + rp.norm_squared()).sqrt()
    };

    let mut steps = 0usize;
    loop {
        let (r_dual, r_pri) = residual(z, nu).ok_or(NlpError::Numerical {
            phase,
            detail: "iterate left the domain".to_string(),
        })?;
        let grad_scale = 1.0 + prob.objective_grad(z).amax();

        let s = prob.slacks(z);
        let sj = prob.slack_jacobian(z);
        let inv_s = s.map(|v| 1.0 / v);

        // The dual residual is a cancellation of terms whose magnitudes can
        // dwarf it near the boundary; accept the stage once it reaches the
        // representable floor of that cancellation.
        let mut term_scale: f64 = 0.0;
        {
            let gc = prob.objective_grad(z);
            for i in 0..dim {
                let mut sum = (gc[i] * t).abs();
                for k in 0..prob.n_slacks() {
                    sum += (inv_s[k] * sj[(k, i)]).abs();
                }
                term_scale = term_scale.max(sum);
            }
        }
        let tol_dual = (1e-8 * grad_scale).max(64.0 * f64::EPSILON * term_scale / t);
        let tol_ok = r_dual.amax() <= tol_dual && r_pri.amax() <= 1e-8;
        if tol_ok {
            return Ok((steps, r_dual.amax(), r_pri.amax(), true));
        }
        if steps >= opts.max_newton {
            return Ok((steps, r_dual.amax(), r_pri.amax(), false));
        }
        // Hess Phi = t*Hess c + sum (1/s^2) grad s grad s' + sum (1/s) Hess(-s)
        let mut h = prob.curvature(z, t, &inv_s);
        for k in 0..prob.n_slacks() {
            let row = sj.row(k).transpose();
            let w = inv_s[k] * inv_s[k];
            h.ger(w, &row, &row, 1.0);
        }

        // bordered KKT system; solving for (dz, nu_new) directly
        let nk = dim + p;
        let mut kkt = DMatrix::zeros(nk, nk);
        kkt.view_mut((0, 0), (dim, dim)).copy_from(&h);
        let mut rhs = DVector::zeros(nk);
        rhs.rows_mut(0, dim)
            .copy_from(&(-(prob.objective_grad(z) * t - sj.transpose() * &inv_s)));
        if p > 0 {
            kkt.view_mut((dim, 0), (p, dim)).copy_from(j_eq);
            kkt.view_mut((0, dim), (dim, p)).copy_from(&j_eq.transpose());
            rhs.rows_mut(dim, p).copy_from(&(prob.eq_rhs() - j_eq * &*z));
        }

        let step = solve_damped(&kkt, &rhs).ok_or(NlpError::Numerical {
            phase,
            detail: format!("singular KKT system at t={t:.1e}"),
        })?;
        let dz = step.rows(0, dim).into_owned();
        let nu_new = step.rows(dim, p).into_owned();
        let dnu = &nu_new - &*nu;

        // backtracking on the true-scale residual norm, rejecting any trial
        // that leaves the domain
        let m0 = merit(&r_dual, &r_pri);
        let mut alpha = 1.0f64;
        let mut accepted = false;
        for _ in 0..80 {
            let z_try = &*z + &dz * alpha;
            let nu_try = &*nu + &dnu * alpha;
            if let Some((rd, rp)) = residual(&z_try, &nu_try) {
                if merit(&rd, &rp) <= (1.0 - opts.armijo * alpha) * m0 {
                    *z = z_try;
                    *nu = nu_try;
                    accepted = true;
                    break;
                }
            }
            alpha *= opts.backtrack;
        }
        steps += 1;
        if !accepted {
            // stalled; report unconverged so the caller can decide
            let (rd, rp) = residual(z, nu).unwrap();
            return Ok((steps, rd.amax(), rp.amax(), false));
        }
    }
}

/// LU solve with escalating Tikhonov damping on the leading block.
fn solve_damped(kkt: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    let mut damping = 0.0;
    for _ in 0..8 {
        let mut mat = kkt.clone();
        if damping > 0.0 {
            for i in 0..mat.nrows() {
                mat[(i, i)] += damping;
            }
        }
        if let Some(sol) = mat.lu().solve(rhs) {
            if sol.iter().all(|v| v.is_finite()) {
                return Some(sol);
            }
        }
        damping = if damping == 0.0 { 1e-12 } else { damping * 100.0 };
    }
    None
}

fn log_iterate(opts: &NlpOptions, rec: &IterateRecord<'_>) {
    if let Some(path) = &opts.iterate_log {
        if let Ok(mut f) = std::fs::OpenOptions::new().create(true).append(true).open(path) {
            let _ = writeln!(f, "{}", serde_json::to_string(rec).unwrap());
        }
    }
}

// ---------------------------------------------------------------------------
// Phase 2: S(y) with fixed binaries, inequalities relaxed by `relax`.
// ---------------------------------------------------------------------------

struct FixedBinaryProblem<'a> {
    inst: &'a ProblemInstance,
    by: DVector<f64>,
    relax: f64,
    eq_j: DMatrix<f64>,
    eq_rhs: DVector<f64>,
}

impl<'a> FixedBinaryProblem<'a> {
    fn new(inst: &'a ProblemInstance, y: &[u8], relax: f64) -> Self {
        let by = inst.b_times(y);
        let (eq_j, eq_rhs) = affine_equalities(inst, y);
        FixedBinaryProblem { inst, by, relax, eq_j, eq_rhs }
    }
}

/// `h(x) + A y = 0` with affine `h` as `J x = rhs`.
fn affine_equalities(inst: &ProblemInstance, y: &[u8]) -> (DMatrix<f64>, DVector<f64>) {
    if inst.p == 0 {
        return (DMatrix::zeros(0, inst.n), DVector::zeros(0));
    }
    let x_ref = (&inst.x_lo + &inst.x_hi) * 0.5;
    let j = inst.convex.eq_jacobian(&x_ref);
    let rhs = &j * &x_ref - inst.convex.eq(&x_ref) - inst.a_times(y);
    (j, rhs)
}

impl BarrierProblem for FixedBinaryProblem<'_> {
    fn dim(&self) -> usize {
        self.inst.n
    }
    fn n_slacks(&self) -> usize {
        self.inst.q + self.inst.e_mat.nrows() + 2 * self.inst.n
    }
    fn objective_grad(&self, z: &DVector<f64>) -> DVector<f64> {
        self.inst.convex.objective_grad(z)
    }
    fn slacks(&self, z: &DVector<f64>) -> DVector<f64> {
        let inst = self.inst;
        let l = inst.e_mat.nrows();
        let mut s = DVector::zeros(self.n_slacks());
        let g = inst.convex.ineq(z);
        for i in 0..inst.q {
            s[i] = self.relax - g[i] - self.by[i];
        }
        if l > 0 {
            let ex = &inst.e_mat * z;
            for r in 0..l {
                s[inst.q + r] = self.relax + inst.d[r] - ex[r];
            }
        }
        for j in 0..inst.n {
            s[inst.q + l + j] = z[j] - inst.x_lo[j] + self.relax;
            s[inst.q + l + inst.n + j] = inst.x_hi[j] + self.relax - z[j];
        }
        s
    }
    fn slack_jacobian(&self, z: &DVector<f64>) -> DMatrix<f64> {
        let inst = self.inst;
        let l = inst.e_mat.nrows();
        let mut sj = DMatrix::zeros(self.n_slacks(), inst.n);
        let jg = inst.convex.ineq_jacobian(z);
        sj.view_mut((0, 0), (inst.q, inst.n)).copy_from(&(-&jg));
        if l > 0 {
            sj.view_mut((inst.q, 0), (l, inst.n)).copy_from(&(-&inst.e_mat));
        }
        for j in 0..inst.n {
            sj[(inst.q + l + j, j)] = 1.0;
            sj[(inst.q + l + inst.n + j, j)] = -1.0;
        }
        sj
    }
    fn curvature(&self, z: &DVector<f64>, w_obj: f64, w: &DVector<f64>) -> DMatrix<f64> {
        let w_g = DVector::from_fn(self.inst.q, |i, _| w[i]);
        self.inst.convex.weighted_hessian(z, w_obj, &w_g)
    }
    fn eq_jacobian(&self) -> &DMatrix<f64> {
        &self.eq_j
    }
    fn eq_rhs(&self) -> &DVector<f64> {
        &self.eq_rhs
    }
}

// ---------------------------------------------------------------------------
// Phase 1: F(y) over (x, alpha), minimizing total slack.
// ---------------------------------------------------------------------------

struct SlackProblem<'a> {
    inst: &'a ProblemInstance,
    by: DVector<f64>,
    eq_j: DMatrix<f64>,
    eq_rhs: DVector<f64>,
}

impl<'a> SlackProblem<'a> {
    fn new(inst: &'a ProblemInstance, y: &[u8]) -> Self {
        let by = inst.b_times(y);
        let (j_x, rhs) = affine_equalities(inst, y);
        let mut eq_j = DMatrix::zeros(inst.p, inst.n + inst.q);
        if inst.p > 0 {
            eq_j.view_mut((0, 0), (inst.p, inst.n)).copy_from(&j_x);
        }
        SlackProblem { inst, by, eq_j, eq_rhs: rhs }
    }
}

impl BarrierProblem for SlackProblem<'_> {
    fn dim(&self) -> usize {
        self.inst.n + self.inst.q
    }
    fn n_slacks(&self) -> usize {
        // relaxed g rows, alpha >= 0, E rows, box
        2 * self.inst.q + self.inst.e_mat.nrows() + 2 * self.inst.n
    }
    fn objective_grad(&self, _z: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(self.dim());
        for i in 0..self.inst.q {
            g[self.inst.n + i] = 1.0;
        }
        g
    }
    fn slacks(&self, z: &DVector<f64>) -> DVector<f64> {
        let inst = self.inst;
        let (n, q) = (inst.n, inst.q);
        let l = inst.e_mat.nrows();
        let x = z.rows(0, n).into_owned();
        let g = inst.convex.ineq(&x);
        let mut s = DVector::zeros(self.n_slacks());
        for i in 0..q {
            s[i] = z[n + i] - g[i] - self.by[i];
            s[q + i] = z[n + i];
        }
        if l > 0 {
            let ex = &inst.e_mat * &x;
            for r in 0..l {
                s[2 * q + r] = inst.d[r] - ex[r];
            }
        }
        for j in 0..n {
            s[2 * q + l + j] = x[j] - inst.x_lo[j];
            s[2 * q + l + n + j] = inst.x_hi[j] - x[j];
        }
        s
    }
    fn slack_jacobian(&self, z: &DVector<f64>) -> DMatrix<f64> {
        let inst = self.inst;
        let (n, q) = (inst.n, inst.q);
        let l = inst.e_mat.nrows();
        let x = z.rows(0, n).into_owned();
        let jg = inst.convex.ineq_jacobian(&x);
        let mut sj = DMatrix::zeros(self.n_slacks(), self.dim());
        for i in 0..q {
            for j in 0..n {
                sj[(i, j)] = -jg[(i, j)];
            }
            sj[(i, n + i)] = 1.0;
            sj[(q + i, n + i)] = 1.0;
        }
        if l > 0 {
            for r in 0..l {
                for j in 0..n {
                    sj[(2 * q + r, j)] = -inst.e_mat[(r, j)];
                }
            }
        }
        for j in 0..n {
            sj[(2 * q + l + j, j)] = 1.0;
            sj[(2 * q + l + n + j, j)] = -1.0;
        }
        sj
    }
    fn curvature(&self, z: &DVector<f64>, _w_obj: f64, w: &DVector<f64>) -> DMatrix<f64> {
        // only the relaxed g rows carry curvature, and only in the x block
        let inst = self.inst;
        let x = z.rows(0, inst.n).into_owned();
        let w_g = DVector::from_fn(inst.q, |i, _| w[i]);
        let hx = inst.convex.weighted_hessian(&x, 0.0, &w_g);
        let mut h = DMatrix::zeros(self.dim(), self.dim());
        h.view_mut((0, 0), (inst.n, inst.n)).copy_from(&hx);
        h
    }
    fn eq_jacobian(&self) -> &DMatrix<f64> {
        &self.eq_j
    }
    fn eq_rhs(&self) -> &DVector<f64> {
        &self.eq_rhs
    }
}

// ---------------------------------------------------------------------------
// Phase 0: strictly feasible point of { E x <= d, box } when the box
// midpoint violates the polyhedral rows.
// ---------------------------------------------------------------------------

struct PolytopePhase<'a> {
    inst: &'a ProblemInstance,
    empty_eq: (DMatrix<f64>, DVector<f64>),
}

impl BarrierProblem for PolytopePhase<'_> {
    fn dim(&self) -> usize {
        self.inst.n + 1
    }
    fn n_slacks(&self) -> usize {
        self.inst.e_mat.nrows() + 2 * self.inst.n
    }
    fn objective_grad(&self, _z: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(self.dim());
        g[self.inst.n] = 1.0;
        g
    }
    fn slacks(&self, z: &DVector<f64>) -> DVector<f64> {
        let inst = self.inst;
        let n = inst.n;
        let l = inst.e_mat.nrows();
        let x = z.rows(0, n).into_owned();
        let w = z[n];
        let mut s = DVector::zeros(self.n_slacks());
        let ex = &inst.e_mat * &x;
        for r in 0..l {
            s[r] = w + inst.d[r] - ex[r];
        }
        for j in 0..n {
            s[l + j] = x[j] - inst.x_lo[j];
            s[l + n + j] = inst.x_hi[j] - x[j];
        }
        s
    }
    fn slack_jacobian(&self, _z: &DVector<f64>) -> DMatrix<f64> {
        let inst = self.inst;
        let n = inst.n;
        let l = inst.e_mat.nrows();
        let mut sj = DMatrix::zeros(self.n_slacks(), self.dim());
        for r in 0..l {
            for j in 0..n {
                sj[(r, j)] = -inst.e_mat[(r, j)];
            }
            sj[(r, n)] = 1.0;
        }
        for j in 0..n {
            sj[(l + j, j)] = 1.0;
            sj[(l + n + j, j)] = -1.0;
        }
        sj
    }
    fn curvature(&self, _z: &DVector<f64>, _w_obj: f64, _w: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(self.dim(), self.dim())
    }
    fn eq_jacobian(&self) -> &DMatrix<f64> {
        &self.empty_eq.0
    }
    fn eq_rhs(&self) -> &DVector<f64> {
        &self.empty_eq.1
    }
}

/// A point strictly inside `{ E x <= d } ∩ box`, or an error if none exists.
fn strict_interior_point(inst: &ProblemInstance, opts: &NlpOptions) -> Result<DVector<f64>, NlpError> {
    let mid = (&inst.x_lo + &inst.x_hi) * 0.5;
    let l = inst.e_mat.nrows();
    if l == 0 {
        return Ok(mid);
    }
    let margin = 1e-6;
    let ex = &inst.e_mat * &mid;
    if (0..l).all(|r| inst.d[r] - ex[r] > margin) {
        return Ok(mid);
    }
    let prob = PolytopePhase {
        inst,
        empty_eq: (DMatrix::zeros(0, inst.n + 1), DVector::zeros(0)),
    };
    let mut z0 = DVector::zeros(inst.n + 1);
    z0.rows_mut(0, inst.n).copy_from(&mid);
    z0[inst.n] = (0..l).map(|r| ex[r] - inst.d[r]).fold(0.0, f64::max) + 1.0;
    let mut phase_opts = opts.clone();
    phase_opts.gap_target = 1e-4; // coarse centering is enough here
    let out = path_follow(&prob, z0, &phase_opts, "phase0")?;
    if out.z[inst.n] >= -margin {
        return Err(NlpError::Numerical {
            phase: "phase0",
            detail: "polyhedral part of X has no strict interior".to_string(),
        });
    }
    Ok(out.z.rows(0, inst.n).into_owned())
}

fn check_binary(inst: &ProblemInstance, y: &[u8]) -> Result<(), NlpError> {
    if y.len() != inst.m {
        return Err(NlpError::Contract(format!(
            "y length {} != m {}",
            y.len(),
            inst.m
        )));
    }
    if y.iter().any(|&v| v > 1) {
        return Err(NlpError::Contract("y entries must be 0 or 1".to_string()));
    }
    Ok(())
}

/// Solves the slack feasibility subproblem `F(y)`.
///
/// Always solvable; the reported objective is the minimum total violation.
/// `status` reflects what the result says about `S(y)`: `Feasible` when the
/// slack is within tolerance, `Infeasible` otherwise (the multipliers then
/// generate a feasibility cut).
pub fn solve_feasibility(
    inst: &ProblemInstance,
    y: &[u8],
    opts: &NlpOptions,
) -> Result<SubproblemSolution, NlpError> {
    check_binary(inst, y)?;
    let started = Instant::now();
    let x0 = strict_interior_point(inst, opts)?;
    let prob = SlackProblem::new(inst, y);
    let g0 = inst.convex.ineq(&x0);
    let by = inst.b_times(y);
    let mut z0 = DVector::zeros(inst.n + inst.q);
    z0.rows_mut(0, inst.n).copy_from(&x0);
    for i in 0..inst.q {
        z0[inst.n + i] = (g0[i] + by[i]).max(0.0) + 1.0;
    }
    let out = path_follow(&prob, z0, opts, "feasibility")?;
    let x = out.z.rows(0, inst.n).into_owned();
    let total_slack: f64 = (0..inst.q).map(|i| out.z[inst.n + i]).sum();
    let mu = DVector::from_fn(inst.q, |i, _| 1.0 / (out.t_final * out.slacks[i]));
    let status = if total_slack > opts.tol_feas {
        SubproblemStatus::Infeasible
    } else {
        SubproblemStatus::Feasible
    };
    Ok(SubproblemSolution {
        status,
        x,
        objective: total_slack,
        lambda: out.eq_mult,
        mu,
        iterations: out.newton_iters,
        wall_time: elapsed(started, out.newton_iters, opts),
    })
}

/// Solves the fixed-binary subproblem `S(y)`.
///
/// Runs the feasibility phase first; if its residual slack exceeds
/// `tol_feas` the result is `Infeasible` and the caller should obtain cut
/// multipliers from [`solve_feasibility`]. Otherwise the phase-1 point warm
/// starts the barrier path on the (slightly relaxed) original constraints.
pub fn solve_subproblem(
    inst: &ProblemInstance,
    y: &[u8],
    opts: &NlpOptions,
) -> Result<SubproblemSolution, NlpError> {
    check_binary(inst, y)?;
    let started = Instant::now();

    let phase1 = solve_feasibility(inst, y, opts)?;
    if phase1.status != SubproblemStatus::Feasible {
        return Ok(SubproblemSolution {
            status: SubproblemStatus::Infeasible,
            wall_time: elapsed(started, phase1.iterations, opts),
            ..phase1
        });
    }

    // widen the relaxation if the warm start sits closer to the boundary
    // than the configured margin
    let by = inst.b_times(y);
    let g1 = inst.convex.ineq(&phase1.x);
    let worst = (0..inst.q).map(|i| g1[i] + by[i]).fold(f64::NEG_INFINITY, f64::max);
    let relax = opts.relax.max(2.0 * worst.max(0.0));

    let prob = FixedBinaryProblem::new(inst, y, relax);
    let out = path_follow(&prob, phase1.x.clone(), opts, "subproblem")?;
    let x = out.z;
    let mu = DVector::from_fn(inst.q, |i, _| 1.0 / (out.t_final * out.slacks[i]));
    let iterations = phase1.iterations + out.newton_iters;

    // verify the advertised tolerances before reporting Feasible
    let g = inst.convex.ineq(&x);
    let mut max_viol: f64 = 0.0;
    for i in 0..inst.q {
        max_viol = max_viol.max(g[i] + by[i]);
    }
    if inst.p > 0 {
        let h = inst.convex.eq(&x) + inst.a_times(y);
        max_viol = max_viol.max(h.amax());
    }
    for j in 0..inst.n {
        max_viol = max_viol.max(inst.x_lo[j] - x[j]).max(x[j] - inst.x_hi[j]);
    }
    let status = if max_viol <= opts.tol_feas {
        SubproblemStatus::Feasible
    } else {
        SubproblemStatus::NumericalFailure
    };
    let objective = inst.full_objective(&x, y);
    Ok(SubproblemSolution {
        status,
        x,
        objective,
        lambda: out.eq_mult,
        mu,
        iterations,
        wall_time: elapsed(started, iterations, opts),
    })
}

fn elapsed(started: Instant, iterations: usize, opts: &NlpOptions) -> f64 {
    match opts.deterministic_time {
        Some(c) => iterations as f64 * c,
        None => started.elapsed().as_secs_f64(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{
        build_case_study1, CaseStudyCoefficients, ConvexProgram, InstanceKind, ProblemInstance,
    };
    use nalgebra::{DMatrix, DVector};
    use std::sync::Arc;

    /// min (x-2)^2 s.t. 1 - x <= 0, box [-5, 5]: optimum x=2 inactive, mu=0.
    /// With box [-5, 1.5]: optimum x=1.5 at the bound.
    struct Quadratic;
    impl ConvexProgram for Quadratic {
        fn objective(&self, x: &DVector<f64>) -> f64 {
            (x[0] - 2.0).powi(2)
        }
        fn objective_grad(&self, x: &DVector<f64>) -> DVector<f64> {
            DVector::from_column_slice(&[2.0 * (x[0] - 2.0)])
        }
        fn ineq(&self, x: &DVector<f64>) -> DVector<f64> {
            DVector::from_column_slice(&[1.0 - x[0]])
        }
        fn ineq_jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
            DMatrix::from_row_slice(1, 1, &[-1.0])
        }
        fn eq(&self, _x: &DVector<f64>) -> DVector<f64> {
            DVector::zeros(0)
        }
        fn eq_jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
            DMatrix::zeros(0, 1)
        }
        fn weighted_hessian(
            &self,
            _x: &DVector<f64>,
            w_obj: f64,
            _w: &DVector<f64>,
        ) -> DMatrix<f64> {
            DMatrix::from_row_slice(1, 1, &[2.0 * w_obj])
        }
    }

    fn quad_instance(hi: f64) -> ProblemInstance {
        ProblemInstance::new(
            DVector::zeros(1),
            DMatrix::zeros(0, 1),
            DMatrix::zeros(1, 1),
            DMatrix::zeros(0, 1),
            DVector::zeros(0),
            DVector::from_column_slice(&[-5.0]),
            DVector::from_column_slice(&[hi]),
            DMatrix::zeros(0, 1),
            DVector::zeros(0),
            Arc::new(Quadratic),
            InstanceKind::Synthetic,
        )
        .unwrap()
    }

    #[test]
    fn unconstrained_interior_minimum() {
        let inst = quad_instance(5.0);
        let sol = solve_subproblem(&inst, &[0], &NlpOptions::default()).unwrap();
        assert_eq!(sol.status, SubproblemStatus::Feasible);
        assert!((sol.x[0] - 2.0).abs() < 1e-5, "x={}", sol.x[0]);
        assert!(sol.objective.abs() < 1e-8);
        assert!(sol.mu[0].abs() < 1e-6);
    }

    #[test]
    fn active_constraint_multiplier() {
        // min (x-2)^2 s.t. x <= 1.5 via the box: mu is on the box, but make
        // the g row active instead: g = x - 1.5 <= 0.
        struct Capped;
        impl ConvexProgram for Capped {
            fn objective(&self, x: &DVector<f64>) -> f64 {
                (x[0] - 2.0).powi(2)
            }
            fn objective_grad(&self, x: &DVector<f64>) -> DVector<f64> {
                DVector::from_column_slice(&[2.0 * (x[0] - 2.0)])
            }
            fn ineq(&self, x: &DVector<f64>) -> DVector<f64> {
                DVector::from_column_slice(&[x[0] - 1.5])
            }
            fn ineq_jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
                DMatrix::from_row_slice(1, 1, &[1.0])
            }
            fn eq(&self, _x: &DVector<f64>) -> DVector<f64> {
                DVector::zeros(0)
            }
            fn eq_jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
                DMatrix::zeros(0, 1)
            }
            fn weighted_hessian(
                &self,
                _x: &DVector<f64>,
                w_obj: f64,
                _w: &DVector<f64>,
            ) -> DMatrix<f64> {
                DMatrix::from_row_slice(1, 1, &[2.0 * w_obj])
            }
        }
        let inst = ProblemInstance::new(
            DVector::zeros(1),
            DMatrix::zeros(0, 1),
            DMatrix::zeros(1, 1),
            DMatrix::zeros(0, 1),
            DVector::zeros(0),
            DVector::from_column_slice(&[-5.0]),
            DVector::from_column_slice(&[5.0]),
            DMatrix::zeros(0, 1),
            DVector::zeros(0),
            Arc::new(Capped),
            InstanceKind::Synthetic,
        )
        .unwrap();
        let sol = solve_subproblem(&inst, &[0], &NlpOptions::default()).unwrap();
        assert_eq!(sol.status, SubproblemStatus::Feasible);
        // KKT: 2(x-2) + mu = 0 at x=1.5 -> mu = 1
        assert!((sol.x[0] - 1.5).abs() < 1e-5, "x={}", sol.x[0]);
        assert!((sol.mu[0] - 1.0).abs() < 1e-3, "mu={}", sol.mu[0]);
        // complementarity within contract tolerance
        let g = sol.x[0] - 1.5;
        assert!((sol.mu[0] * g).abs() <= 1e-5);
    }

    #[test]
    fn equality_row_multiplier() {
        // min x1^2 + x2^2 s.t. x1 + x2 - 1 = 0: x = (0.5, 0.5), lambda = -1.
        struct EqProg;
        impl ConvexProgram for EqProg {
            fn objective(&self, x: &DVector<f64>) -> f64 {
                x[0] * x[0] + x[1] * x[1]
            }
            fn objective_grad(&self, x: &DVector<f64>) -> DVector<f64> {
                DVector::from_column_slice(&[2.0 * x[0], 2.0 * x[1]])
            }
            fn ineq(&self, _x: &DVector<f64>) -> DVector<f64> {
                DVector::zeros(0)
            }
            fn ineq_jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
                DMatrix::zeros(0, 2)
            }
            fn eq(&self, x: &DVector<f64>) -> DVector<f64> {
                DVector::from_column_slice(&[x[0] + x[1] - 1.0])
            }
            fn eq_jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
                DMatrix::from_row_slice(1, 2, &[1.0, 1.0])
            }
            fn weighted_hessian(
                &self,
                _x: &DVector<f64>,
                w_obj: f64,
                _w: &DVector<f64>,
            ) -> DMatrix<f64> {
                DMatrix::from_diagonal(&DVector::from_column_slice(&[2.0 * w_obj, 2.0 * w_obj]))
            }
        }
        let inst = ProblemInstance::new(
            DVector::zeros(1),
            DMatrix::zeros(1, 1),
            DMatrix::zeros(0, 1),
            DMatrix::zeros(0, 1),
            DVector::zeros(0),
            DVector::from_column_slice(&[-5.0, -5.0]),
            DVector::from_column_slice(&[5.0, 5.0]),
            DMatrix::zeros(0, 2),
            DVector::zeros(0),
            Arc::new(EqProg),
            InstanceKind::Synthetic,
        )
        .unwrap();
        let sol = solve_subproblem(&inst, &[0], &NlpOptions::default()).unwrap();
        assert_eq!(sol.status, SubproblemStatus::Feasible);
        assert!((sol.x[0] - 0.5).abs() < 1e-6);
        assert!((sol.x[1] - 0.5).abs() < 1e-6);
        // stationarity: 2x + lambda * 1 = 0 -> lambda = -1
        assert!((sol.lambda[0] + 1.0).abs() < 1e-4, "lambda={}", sol.lambda[0]);
    }

    #[test]
    fn case_study_pinned_variable() {
        // y1 = 0 pins x3 to 0 through the capacity row; the feasible set has
        // an empty interior there and the relaxation must cope.
        let inst = build_case_study1(CaseStudyCoefficients::NOMINAL).unwrap();
        let y = vec![0, 1, 0, 0, 0];
        let sol = solve_subproblem(&inst, &y, &NlpOptions::default()).unwrap();
        assert_eq!(sol.status, SubproblemStatus::Feasible);
        assert!(sol.x[0].abs() < 1e-5, "x3={}", sol.x[0]);
        // x5 runs to its box bound 2 (gradient -15 dominates)
        assert!((sol.x[1] - 2.0).abs() < 1e-4, "x5={}", sol.x[1]);
        let by = inst.b_times(&y);
        let g = inst.convex.ineq(&sol.x);
        for i in 0..inst.q {
            assert!(g[i] + by[i] <= 1e-6, "row {i}: {}", g[i] + by[i]);
            assert!(sol.mu[i] >= -1e-9);
            assert!((sol.mu[i] * (g[i] + by[i])).abs() <= 1e-5, "comp row {i}");
        }
    }

    #[test]
    fn feasibility_zero_slack_when_feasible() {
        let inst = build_case_study1(CaseStudyCoefficients::NOMINAL).unwrap();
        let sol = solve_feasibility(&inst, &[1, 0, 1, 1, 0], &NlpOptions::default()).unwrap();
        assert_eq!(sol.status, SubproblemStatus::Feasible);
        assert!(sol.objective >= 0.0);
        assert!(sol.objective <= 1e-6, "slack={}", sol.objective);
    }

    #[test]
    fn infeasible_subproblem_detected() {
        // the demand variant adds x9 >= 1; y3 = 0 then forces x9 = 0
        // through the switching row, which is infeasible
        let inst = crate::testkit::demand_variant();
        let y = vec![1, 0, 0, 0, 0];
        let sol = solve_subproblem(&inst, &y, &NlpOptions::default()).unwrap();
        assert_eq!(sol.status, SubproblemStatus::Infeasible);
        assert!(sol.objective > 1e-6);
        let y_ok = vec![1, 0, 1, 0, 0];
        let sol_ok = solve_subproblem(&inst, &y_ok, &NlpOptions::default()).unwrap();
        assert_eq!(sol_ok.status, SubproblemStatus::Feasible);
    }

    #[test]
    fn deterministic_time_mode() {
        let inst = build_case_study1(CaseStudyCoefficients::NOMINAL).unwrap();
        let opts = NlpOptions {
            deterministic_time: Some(DETERMINISTIC_SECONDS_PER_NEWTON),
            ..NlpOptions::default()
        };
        let a = solve_subproblem(&inst, &[0, 1, 0, 0, 0], &opts).unwrap();
        let b = solve_subproblem(&inst, &[0, 1, 0, 0, 0], &opts).unwrap();
        assert_eq!(a.iterations, b.iterations);
        assert_eq!(a.wall_time, b.wall_time);
        assert_eq!(a.x, b.x);
    }
}
