//! Convex MINLP problem abstraction and the built-in instance family.
//!
//! A [`ProblemInstance`] is a convex MINLP in which the binary variables `y`
//! enter linearly everywhere:
//!
//! ```text
//! min  f(x) + e'y
//! s.t. h(x) + A y  = 0
//!      g(x) + B y <= 0
//!      K y - b    <= 0        (pure-binary rows)
//!      x in X = { E x <= d, x_lo <= x <= x_hi },  y in {0,1}^m
//! ```
//!
//! `f`, `g` are convex and `h` affine; they are supplied by a
//! [`ConvexProgram`] evaluator bundle so instances with analytic derivatives
//! coexist with synthetic test instances. Construction validates dimensional
//! consistency and runs a midpoint-convexity sampling check.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Binary assignment, entries 0 or 1.
pub type BinaryVec = Vec<u8>;

const CONVEXITY_TOL: f64 = 1e-9;
const CONVEXITY_SAMPLES: usize = 100;
/// Enumeration guard for [`brute_force_solve`].
pub const BRUTE_FORCE_MAX_M: usize = 20;

#[derive(Debug, thiserror::Error)]
pub enum ProblemError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("coefficient out of range: {0}")]
    CoefficientRange(String),
    #[error("convexity check failed: {0}")]
    Convexity(String),
    #[error("enumeration guard: m={0} exceeds {BRUTE_FORCE_MAX_M}")]
    EnumerationGuard(usize),
    #[error("subproblem solver failed at y={y:?}: {source}")]
    SubproblemFailure {
        y: BinaryVec,
        source: crate::nlp::NlpError,
    },
}

/// Evaluator bundle for the continuous part of an instance.
///
/// `weighted_hessian` returns `w_obj * H_f(x) + sum_i w_ineq[i] * H_{g_i}(x)`;
/// the default central-difference fallback lets synthetic test programs get
/// away with first-order information only.
pub trait ConvexProgram: Send + Sync {
    fn objective(&self, x: &DVector<f64>) -> f64;
    fn objective_grad(&self, x: &DVector<f64>) -> DVector<f64>;
    /// Inequality body `g(x)`, length `q`.
    fn ineq(&self, x: &DVector<f64>) -> DVector<f64>;
    /// Jacobian of `g`, `q x n`.
    fn ineq_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64>;
    /// Equality body `h(x)`, length `p` (must be affine).
    fn eq(&self, x: &DVector<f64>) -> DVector<f64>;
    /// Jacobian of `h`, `p x n` (constant for affine `h`).
    fn eq_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64>;

    fn weighted_hessian(
        &self,
        x: &DVector<f64>,
        w_obj: f64,
        w_ineq: &DVector<f64>,
    ) -> DMatrix<f64> {
        let n = x.len();
        let wg = |x: &DVector<f64>| -> DVector<f64> {
            let mut v = self.objective_grad(x) * w_obj;
            if w_ineq.len() > 0 {
                v += self.ineq_jacobian(x).transpose() * w_ineq;
            }
            v
        };
        let mut h = DMatrix::zeros(n, n);
        let mut xp = x.clone();
        for j in 0..n {
            let step = 1e-6 * x[j].abs().max(1.0);
            xp[j] = x[j] + step;
            let gp = wg(&xp);
            xp[j] = x[j] - step;
            let gm = wg(&xp);
            xp[j] = x[j];
            let col = (gp - gm) / (2.0 * step);
            h.set_column(j, &col);
        }
        // symmetrize finite-difference noise
        let ht = h.transpose();
        (h + ht) * 0.5
    }
}

/// Immutable convex MINLP instance. Shareable across threads; the evaluator
/// bundle must be re-entrant.
#[derive(Clone)]
pub struct ProblemInstance {
    pub m: usize,
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub s: usize,
    /// Linear objective coefficients on `y`.
    pub e: DVector<f64>,
    /// Coupling of `y` into the equality rows, `p x m`.
    pub a_mat: DMatrix<f64>,
    /// Coupling of `y` into the inequality rows, `q x m`.
    pub b_mat: DMatrix<f64>,
    /// Pure-binary constraint rows, `s x m`.
    pub k_mat: DMatrix<f64>,
    /// Pure-binary right-hand sides, length `s`.
    pub b: DVector<f64>,
    pub x_lo: DVector<f64>,
    pub x_hi: DVector<f64>,
    /// Polyhedral part of `X`, `l x n` (may be empty).
    pub e_mat: DMatrix<f64>,
    pub d: DVector<f64>,
    pub convex: Arc<dyn ConvexProgram>,
    /// Identity of the instance for persistence; synthetic instances carry none.
    pub kind: InstanceKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InstanceKind {
    CaseStudy1 { c: CaseStudyCoefficients, box_cap: f64 },
    Synthetic,
}

impl std::fmt::Debug for ProblemInstance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProblemInstance")
            .field("m", &self.m)
            .field("n", &self.n)
            .field("p", &self.p)
            .field("q", &self.q)
            .field("s", &self.s)
            .field("kind", &self.kind)
            .finish()
    }
}

impl ProblemInstance {
    /// Validates dimensions and convexity, then freezes the instance.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        e: DVector<f64>,
        a_mat: DMatrix<f64>,
        b_mat: DMatrix<f64>,
        k_mat: DMatrix<f64>,
        b: DVector<f64>,
        x_lo: DVector<f64>,
        x_hi: DVector<f64>,
        e_mat: DMatrix<f64>,
        d: DVector<f64>,
        convex: Arc<dyn ConvexProgram>,
        kind: InstanceKind,
    ) -> Result<Self, ProblemError> {
        let m = e.len();
        let n = x_lo.len();
        let p = a_mat.nrows();
        let q = b_mat.nrows();
        let s = k_mat.nrows();
        let dim = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(ProblemError::Dimension(what.to_string()))
            }
        };
        dim(x_hi.len() == n, "x_hi length != n")?;
        dim(a_mat.ncols() == m || p == 0, "A columns != m")?;
        dim(b_mat.ncols() == m || q == 0, "B columns != m")?;
        dim(k_mat.ncols() == m || s == 0, "K columns != m")?;
        dim(b.len() == s, "b length != s")?;
        dim(e_mat.nrows() == d.len(), "E rows != d length")?;
        dim(e_mat.ncols() == n || e_mat.nrows() == 0, "E columns != n")?;
        dim(
            (0..n).all(|j| x_lo[j] < x_hi[j]),
            "box must have nonempty interior",
        )?;

        let inst = ProblemInstance {
            m,
            n,
            p,
            q,
            s,
            e,
            a_mat,
            b_mat,
            k_mat,
            b,
            x_lo,
            x_hi,
            e_mat,
            d,
            convex,
            kind,
        };
        inst.check_convexity()?;
        Ok(inst)
    }

    /// Midpoint-convexity sampling check over random box pairs: convex `f`
    /// and `g`, affine `h`.
    fn check_convexity(&self) -> Result<(), ProblemError> {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_c0de);
        let mut sample = |rng: &mut ChaCha8Rng| {
            DVector::from_fn(self.n, |j, _| {
                rng.random_range(self.x_lo[j]..self.x_hi[j])
            })
        };
        for _ in 0..CONVEXITY_SAMPLES {
            let x1 = sample(&mut rng);
            let x2 = sample(&mut rng);
            let mid = (&x1 + &x2) * 0.5;
            let f_mid = self.convex.objective(&mid);
            let f_avg = 0.5 * (self.convex.objective(&x1) + self.convex.objective(&x2));
            if f_mid > f_avg + CONVEXITY_TOL {
                return Err(ProblemError::Convexity(format!(
                    "objective midpoint violation {:.3e}",
                    f_mid - f_avg
                )));
            }
            let g_mid = self.convex.ineq(&mid);
            let g_avg = (self.convex.ineq(&x1) + self.convex.ineq(&x2)) * 0.5;
            for i in 0..self.q {
                if g_mid[i] > g_avg[i] + CONVEXITY_TOL {
                    return Err(ProblemError::Convexity(format!(
                        "inequality row {i} midpoint violation {:.3e}",
                        g_mid[i] - g_avg[i]
                    )));
                }
            }
            if self.p > 0 {
                let h_mid = self.convex.eq(&mid);
                let h_avg = (self.convex.eq(&x1) + self.convex.eq(&x2)) * 0.5;
                for i in 0..self.p {
                    if (h_mid[i] - h_avg[i]).abs() > CONVEXITY_TOL {
                        return Err(ProblemError::Convexity(format!(
                            "equality row {i} is not affine"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Full objective `F(x, y) = f(x) + e'y`.
    pub fn full_objective(&self, x: &DVector<f64>, y: &[u8]) -> f64 {
        self.convex.objective(x) + self.e_dot(y)
    }

    pub fn e_dot(&self, y: &[u8]) -> f64 {
        y.iter()
            .enumerate()
            .map(|(j, &yj)| self.e[j] * f64::from(yj))
            .sum()
    }

    /// `A y` (length `p`).
    pub fn a_times(&self, y: &[u8]) -> DVector<f64> {
        coupling_times(&self.a_mat, y)
    }

    /// `B y` (length `q`).
    pub fn b_times(&self, y: &[u8]) -> DVector<f64> {
        coupling_times(&self.b_mat, y)
    }

    /// True iff the pure-binary rows `K y <= b` hold within `tol`.
    pub fn pure_binary_ok(&self, y: &[u8], tol: f64) -> bool {
        let ky = coupling_times(&self.k_mat, y);
        (0..self.s).all(|t| ky[t] <= self.b[t] + tol)
    }
}

fn coupling_times(mat: &DMatrix<f64>, y: &[u8]) -> DVector<f64> {
    let mut out = DVector::zeros(mat.nrows());
    for (j, &yj) in y.iter().enumerate() {
        if yj != 0 {
            for i in 0..mat.nrows() {
                out[i] += mat[(i, j)];
            }
        }
    }
    out
}

/// Objective coefficients of the built-in instance family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaseStudyCoefficients {
    pub c1: u32,
    pub c2: u32,
    pub c3: u32,
    pub c4: u32,
    pub c5: u32,
}

impl CaseStudyCoefficients {
    /// Coefficients of the unparameterized textbook instance.
    pub const NOMINAL: CaseStudyCoefficients = CaseStudyCoefficients {
        c1: 5,
        c2: 8,
        c3: 6,
        c4: 10,
        c5: 6,
    };

    pub fn new(c: [u32; 5]) -> Result<Self, ProblemError> {
        let cs = CaseStudyCoefficients {
            c1: c[0],
            c2: c[1],
            c3: c[2],
            c4: c[3],
            c5: c[4],
        };
        cs.validate()?;
        Ok(cs)
    }

    pub fn validate(&self) -> Result<(), ProblemError> {
        for (name, v) in [("c1", self.c1), ("c2", self.c2), ("c3", self.c3), ("c4", self.c4)] {
            if !(1..=39).contains(&v) {
                return Err(ProblemError::CoefficientRange(format!(
                    "{name}={v} not in [1,39]"
                )));
            }
        }
        if !(1..=7).contains(&self.c5) {
            return Err(ProblemError::CoefficientRange(format!(
                "c5={} not in [1,7]",
                self.c5
            )));
        }
        Ok(())
    }

    pub fn as_array(&self) -> [u32; 5] {
        [self.c1, self.c2, self.c3, self.c4, self.c5]
    }
}

/// Draws coefficients uniformly: c1..c4 from {1..39}, c5 from {1..7}.
pub fn sample_coefficients<R: Rng>(rng: &mut R) -> CaseStudyCoefficients {
    CaseStudyCoefficients {
        c1: rng.random_range(1..=39),
        c2: rng.random_range(1..=39),
        c3: rng.random_range(1..=39),
        c4: rng.random_range(1..=39),
        c5: rng.random_range(1..=7),
    }
}

/// Default box cap for the two continuous variables the instance family
/// leaves unbounded above. The process constraints bound the optimum well
/// inside; the barrier solver needs a finite box.
pub const DEFAULT_BOX_CAP: f64 = 10.0;

const BIG_U: f64 = 10.0;

/// Continuous part of the built-in family: linear terms plus two
/// exponentials and one log, all with analytic derivatives.
struct CaseStudy1Program;

// x layout: x[0..6] = (x3, x5, x9, x11, x13, x16) of the process model.
impl ConvexProgram for CaseStudy1Program {
    fn objective(&self, x: &DVector<f64>) -> f64 {
        -10.0 * x[0] - 15.0 * x[1] - 15.0 * x[2] + 15.0 * x[3] + 5.0 * x[4] - 20.0 * x[5]
            + x[0].exp()
            + (x[1] / 1.2).exp()
            - 60.0 * (x[3] + x[4] + 1.0).ln()
            + 140.0
    }

    fn objective_grad(&self, x: &DVector<f64>) -> DVector<f64> {
        let r = 60.0 / (x[3] + x[4] + 1.0);
        DVector::from_column_slice(&[
            x[0].exp() - 10.0,
            (x[1] / 1.2).exp() / 1.2 - 15.0,
            -15.0,
            15.0 - r,
            5.0 - r,
            -20.0,
        ])
    }

    fn ineq(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_column_slice(&[
            -(x[3] + x[4] + 1.0).ln(),
            -x[0] - x[1] - 2.0 * x[2] + x[3] + 2.0 * x[5],
            -x[0] - x[1] - 0.75 * x[2] + x[3] + 2.0 * x[5],
            x[2] - x[5],
            2.0 * x[2] - x[3] - 2.0 * x[5],
            -0.5 * x[3] + x[4],
            0.2 * x[3] - x[4],
            x[0].exp_m1(),
            (x[1] / 1.2).exp_m1(),
            1.25 * x[2],
            x[3] + x[4],
            -2.0 * x[2] + 2.0 * x[5],
        ])
    }

    fn ineq_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(12, 6);
        let r = 1.0 / (x[3] + x[4] + 1.0);
        j[(0, 3)] = -r;
        j[(0, 4)] = -r;
        j[(1, 0)] = -1.0;
        j[(1, 1)] = -1.0;
        j[(1, 2)] = -2.0;
        j[(1, 3)] = 1.0;
        j[(1, 5)] = 2.0;
        j[(2, 0)] = -1.0;
        j[(2, 1)] = -1.0;
        j[(2, 2)] = -0.75;
        j[(2, 3)] = 1.0;
        j[(2, 5)] = 2.0;
        j[(3, 2)] = 1.0;
        j[(3, 5)] = -1.0;
        j[(4, 2)] = 2.0;
        j[(4, 3)] = -1.0;
        j[(4, 5)] = -2.0;
        j[(5, 3)] = -0.5;
        j[(5, 4)] = 1.0;
        j[(6, 3)] = 0.2;
        j[(6, 4)] = -1.0;
        j[(7, 0)] = x[0].exp();
        j[(8, 1)] = (x[1] / 1.2).exp() / 1.2;
        j[(9, 2)] = 1.25;
        j[(10, 3)] = 1.0;
        j[(10, 4)] = 1.0;
        j[(11, 2)] = -2.0;
        j[(11, 5)] = 2.0;
        j
    }

    fn eq(&self, _x: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(0)
    }

    fn eq_jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(0, 6)
    }

    fn weighted_hessian(
        &self,
        x: &DVector<f64>,
        w_obj: f64,
        w_ineq: &DVector<f64>,
    ) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(6, 6);
        h[(0, 0)] = (w_obj + w_ineq[7]) * x[0].exp();
        h[(1, 1)] = (w_obj + w_ineq[8]) * (x[1] / 1.2).exp() / 1.44;
        // log-term block on (x11, x13)
        let r2 = (x[3] + x[4] + 1.0).powi(-2);
        let c = (60.0 * w_obj + w_ineq[0]) * r2;
        h[(3, 3)] += c;
        h[(3, 4)] += c;
        h[(4, 3)] += c;
        h[(4, 4)] += c;
        h
    }
}

/// Builds an instance of the built-in family with the default box cap.
pub fn build_case_study1(c: CaseStudyCoefficients) -> Result<ProblemInstance, ProblemError> {
    build_case_study1_with_cap(c, DEFAULT_BOX_CAP)
}

/// As [`build_case_study1`] with an explicit cap for the two variables the
/// model leaves unbounded above.
pub fn build_case_study1_with_cap(
    c: CaseStudyCoefficients,
    box_cap: f64,
) -> Result<ProblemInstance, ProblemError> {
    c.validate()?;
    if !(box_cap.is_finite() && box_cap > 0.0) {
        return Err(ProblemError::CoefficientRange(format!(
            "box_cap={box_cap} must be finite positive"
        )));
    }
    let e = DVector::from_iterator(5, c.as_array().iter().map(|&v| f64::from(v)));
    // y couples only into the four big-U switching rows and the two
    // exponential capacity rows.
    let mut b_mat = DMatrix::zeros(12, 5);
    b_mat[(7, 0)] = -BIG_U;
    b_mat[(8, 1)] = -BIG_U;
    b_mat[(9, 2)] = -BIG_U;
    b_mat[(10, 3)] = -BIG_U;
    b_mat[(11, 4)] = -BIG_U;
    // y1 + y2 = 1 encoded as two inequalities; y4 + y5 <= 1.
    let k_mat = DMatrix::from_row_slice(
        3,
        5,
        &[
            1.0, 1.0, 0.0, 0.0, 0.0, //
            -1.0, -1.0, 0.0, 0.0, 0.0, //
            0.0, 0.0, 0.0, 1.0, 1.0,
        ],
    );
    let b = DVector::from_column_slice(&[1.0, -1.0, 1.0]);
    let x_lo = DVector::zeros(6);
    let x_hi = DVector::from_column_slice(&[2.0, 2.0, 2.0, box_cap, box_cap, 3.0]);
    ProblemInstance::new(
        e,
        DMatrix::zeros(0, 5),
        b_mat,
        k_mat,
        b,
        x_lo,
        x_hi,
        DMatrix::zeros(0, 6),
        DVector::zeros(0),
        Arc::new(CaseStudy1Program),
        InstanceKind::CaseStudy1 { c, box_cap },
    )
}

/// Outcome of exhaustive enumeration over the binary variables.
#[derive(Debug, Clone)]
pub enum BruteForceOutcome {
    Optimal {
        y: BinaryVec,
        x: DVector<f64>,
        objective: f64,
    },
    Infeasible,
}

/// Ground-truth oracle: enumerates every `y` satisfying the pure-binary rows,
/// solves the convex subproblem for each, and returns the best feasible pair.
pub fn brute_force_solve(inst: &ProblemInstance) -> Result<BruteForceOutcome, ProblemError> {
    if inst.m > BRUTE_FORCE_MAX_M {
        return Err(ProblemError::EnumerationGuard(inst.m));
    }
    let total = 1usize << inst.m;
    let candidates: Vec<BinaryVec> = (0..total as u64)
        .map(|code| crate::master::binary_vector(code, inst.m))
        .filter(|y| inst.pure_binary_ok(y, 1e-9))
        .collect();

    let solved = crate::par::map_slice(&candidates, |y| {
        (y.clone(), crate::nlp::solve_subproblem(inst, y, &crate::nlp::NlpOptions::default()))
    });

    let mut best: Option<(BinaryVec, DVector<f64>, f64)> = None;
    for (y, sol) in solved {
        let sol = sol.map_err(|source| ProblemError::SubproblemFailure { y: y.clone(), source })?;
        if sol.status == crate::nlp::SubproblemStatus::Feasible {
            let better = match &best {
                None => true,
                Some((_, _, f)) => sol.objective < *f,
            };
            if better {
                best = Some((y, sol.x, sol.objective));
            }
        }
    }
    Ok(match best {
        Some((y, x, objective)) => BruteForceOutcome::Optimal { y, x, objective },
        None => BruteForceOutcome::Infeasible,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nominal_instance_dimensions() {
        let inst = build_case_study1(CaseStudyCoefficients::NOMINAL).unwrap();
        assert_eq!((inst.m, inst.n, inst.p, inst.q, inst.s), (5, 6, 0, 12, 3));
        assert_eq!(inst.e.as_slice(), &[5.0, 8.0, 6.0, 10.0, 6.0]);
        assert_eq!(inst.x_hi.as_slice(), &[2.0, 2.0, 2.0, 10.0, 10.0, 3.0]);
    }

    #[test]
    fn coefficients_validated() {
        assert!(CaseStudyCoefficients::new([0, 1, 1, 1, 1]).is_err());
        assert!(CaseStudyCoefficients::new([40, 1, 1, 1, 1]).is_err());
        assert!(CaseStudyCoefficients::new([1, 1, 1, 1, 8]).is_err());
        assert!(CaseStudyCoefficients::new([39, 39, 39, 39, 7]).is_ok());
    }

    #[test]
    fn exponential_row_cancels_at_origin() {
        // g row for the first capacity constraint evaluates to -U*y1 at x=0.
        let inst = build_case_study1(CaseStudyCoefficients::NOMINAL).unwrap();
        let x0 = DVector::zeros(6);
        let g = inst.convex.ineq(&x0);
        for (y1, expect) in [(0u8, 0.0), (1u8, -10.0)] {
            let y = vec![y1, 0, 0, 0, 0];
            let row = g[7] + inst.b_times(&y)[7];
            assert!((row - expect).abs() < 1e-12, "row={row} expect={expect}");
        }
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let prog = CaseStudy1Program;
        let x = DVector::from_column_slice(&[0.3, 1.1, 0.7, 2.0, 0.9, 1.4]);
        let g = prog.objective_grad(&x);
        let jac = prog.ineq_jacobian(&x);
        let h = 1e-6;
        let mut xp = x.clone();
        for j in 0..6 {
            xp[j] = x[j] + h;
            let fp = prog.objective(&xp);
            let gp = prog.ineq(&xp);
            xp[j] = x[j] - h;
            let fm = prog.objective(&xp);
            let gm = prog.ineq(&xp);
            xp[j] = x[j];
            assert!(((fp - fm) / (2.0 * h) - g[j]).abs() < 1e-6);
            for i in 0..12 {
                assert!(((gp[i] - gm[i]) / (2.0 * h) - jac[(i, j)]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn analytic_hessian_matches_default_fallback() {
        let prog = CaseStudy1Program;
        let x = DVector::from_column_slice(&[0.5, 0.8, 1.0, 1.5, 0.6, 0.9]);
        let w_ineq = DVector::from_fn(12, |i, _| 0.1 + 0.05 * i as f64);
        let analytic = prog.weighted_hessian(&x, 0.7, &w_ineq);
        // call the trait's default implementation explicitly
        struct FdOnly;
        impl ConvexProgram for FdOnly {
            fn objective(&self, x: &DVector<f64>) -> f64 {
                CaseStudy1Program.objective(x)
            }
            fn objective_grad(&self, x: &DVector<f64>) -> DVector<f64> {
                CaseStudy1Program.objective_grad(x)
            }
            fn ineq(&self, x: &DVector<f64>) -> DVector<f64> {
                CaseStudy1Program.ineq(x)
            }
            fn ineq_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
                CaseStudy1Program.ineq_jacobian(x)
            }
            fn eq(&self, x: &DVector<f64>) -> DVector<f64> {
                CaseStudy1Program.eq(x)
            }
            fn eq_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
                CaseStudy1Program.eq_jacobian(x)
            }
        }
        let fd = FdOnly.weighted_hessian(&x, 0.7, &w_ineq);
        for i in 0..6 {
            for j in 0..6 {
                assert!(
                    (analytic[(i, j)] - fd[(i, j)]).abs() < 1e-4,
                    "H[{i},{j}] analytic={} fd={}",
                    analytic[(i, j)],
                    fd[(i, j)]
                );
            }
        }
    }

    #[test]
    fn sampling_is_deterministic_and_in_range() {
        use rand::SeedableRng;
        let mut a = ChaCha8Rng::seed_from_u64(42);
        let mut b = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..100 {
            assert_eq!(sample_coefficients(&mut a), sample_coefficients(&mut b));
        }
    }

    #[test]
    fn sampling_covers_ranges() {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut c5_min = u32::MAX;
        let mut c5_max = 0;
        let mut c1_counts = [0u32; 40];
        const DRAWS: u32 = 10_000;
        for _ in 0..DRAWS {
            let c = sample_coefficients(&mut rng);
            c5_min = c5_min.min(c.c5);
            c5_max = c5_max.max(c.c5);
            c1_counts[c.c1 as usize] += 1;
            assert!((1..=39).contains(&c.c1));
            assert!((1..=7).contains(&c.c5));
        }
        assert_eq!(c5_min, 1);
        assert_eq!(c5_max, 7);
        // each c1 value within 5 sigma of the uniform frequency
        let p = 1.0 / 39.0;
        let sigma = (f64::from(DRAWS) * p * (1.0 - p)).sqrt();
        for v in 1..=39 {
            let dev = (f64::from(c1_counts[v]) - f64::from(DRAWS) * p).abs();
            assert!(dev <= 5.0 * sigma, "c1={v} count={} dev={dev}", c1_counts[v]);
        }
    }

    #[test]
    fn e14_encoding_forces_exactly_one_of_first_two_bits() {
        let inst = build_case_study1(CaseStudyCoefficients::NOMINAL).unwrap();
        for code in 0u64..32 {
            let y = crate::master::binary_vector(code, 5);
            let ok = inst.pure_binary_ok(&y, 1e-9);
            let exactly_one = (y[0] + y[1]) == 1;
            let e15 = y[3] + y[4] <= 1;
            assert_eq!(ok, exactly_one && e15, "y={y:?}");
        }
    }

    #[test]
    fn nonconvex_program_rejected() {
        struct Concave;
        impl ConvexProgram for Concave {
            fn objective(&self, x: &DVector<f64>) -> f64 {
                -(x[0] * x[0])
            }
            fn objective_grad(&self, x: &DVector<f64>) -> DVector<f64> {
                DVector::from_column_slice(&[-2.0 * x[0]])
            }
            fn ineq(&self, _x: &DVector<f64>) -> DVector<f64> {
                DVector::zeros(0)
            }
            fn ineq_jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
                DMatrix::zeros(0, 1)
            }
            fn eq(&self, _x: &DVector<f64>) -> DVector<f64> {
                DVector::zeros(0)
            }
            fn eq_jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
                DMatrix::zeros(0, 1)
            }
        }
        let err = ProblemInstance::new(
            DVector::zeros(1),
            DMatrix::zeros(0, 1),
            DMatrix::zeros(0, 1),
            DMatrix::zeros(0, 1),
            DVector::zeros(0),
            DVector::from_column_slice(&[-1.0]),
            DVector::from_column_slice(&[1.0]),
            DMatrix::zeros(0, 1),
            DVector::zeros(0),
            Arc::new(Concave),
            InstanceKind::Synthetic,
        );
        assert!(matches!(err, Err(ProblemError::Convexity(_))));
    }
}
