//! Shared fixtures for tests and benchmarks.

use crate::graph::{BipartiteGraph, Edge};
use crate::problem::{
    build_case_study1, CaseStudyCoefficients, ConvexProgram, InstanceKind, ProblemInstance,
    DEFAULT_BOX_CAP,
};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

/// The unparameterized textbook instance.
pub fn nominal_instance() -> ProblemInstance {
    build_case_study1(CaseStudyCoefficients::NOMINAL).unwrap()
}

/// Case-study variant with an extra demand row `x9 >= 1`, so assignments
/// with the third switch off have infeasible subproblems and generate
/// feasibility cuts.
pub fn demand_variant() -> ProblemInstance {
    let base = nominal_instance();
    struct WithDemand(Arc<dyn ConvexProgram>);
    impl ConvexProgram for WithDemand {
        fn objective(&self, x: &DVector<f64>) -> f64 {
            self.0.objective(x)
        }
        fn objective_grad(&self, x: &DVector<f64>) -> DVector<f64> {
            self.0.objective_grad(x)
        }
        fn ineq(&self, x: &DVector<f64>) -> DVector<f64> {
            let g = self.0.ineq(x);
            let mut out = DVector::zeros(13);
            out.rows_mut(0, 12).copy_from(&g);
            out[12] = 1.0 - x[2];
            out
        }
        fn ineq_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
            let j = self.0.ineq_jacobian(x);
            let mut out = DMatrix::zeros(13, 6);
            out.view_mut((0, 0), (12, 6)).copy_from(&j);
            out[(12, 2)] = -1.0;
            out
        }
        fn eq(&self, x: &DVector<f64>) -> DVector<f64> {
            self.0.eq(x)
        }
        fn eq_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
            self.0.eq_jacobian(x)
        }
        fn weighted_hessian(&self, x: &DVector<f64>, w_obj: f64, w: &DVector<f64>) -> DMatrix<f64> {
            let w12 = DVector::from_fn(12, |i, _| w[i]);
            self.0.weighted_hessian(x, w_obj, &w12)
        }
    }
    let mut b_mat = DMatrix::zeros(13, 5);
    b_mat.view_mut((0, 0), (12, 5)).copy_from(&base.b_mat);
    ProblemInstance::new(
        base.e.clone(),
        DMatrix::zeros(0, 5),
        b_mat,
        base.k_mat.clone(),
        base.b.clone(),
        base.x_lo.clone(),
        DVector::from_column_slice(&[2.0, 2.0, 2.0, DEFAULT_BOX_CAP, DEFAULT_BOX_CAP, 3.0]),
        DMatrix::zeros(0, 6),
        DVector::zeros(0),
        Arc::new(WithDemand(base.convex.clone())),
        InstanceKind::Synthetic,
    )
    .unwrap()
}

/// Random bipartite graph with binary variable features and ~60% edge
/// density.
pub fn small_random_graph(seed: u64, n_var: usize, n_con: usize) -> BipartiteGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut node_features: Vec<f64> =
        (0..n_var).map(|_| f64::from(rng.random_range(0..2))).collect();
    node_features.extend((0..n_con).map(|_| rng.random_range(-1.0..1.0)));
    let mut edges = Vec::new();
    for con in 0..n_con {
        for var in 0..n_var {
            if rng.random::<f64>() < 0.6 {
                edges.push(Edge { var, con, feat: rng.random_range(-1.0..1.0) });
            }
        }
    }
    BipartiteGraph { n_var, n_con, node_features, edges }
}
