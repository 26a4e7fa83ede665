//! Bipartite variable/constraint graph encoding of a master-problem state.
//!
//! Variable nodes carry the previous binary assignment; constraint nodes
//! carry the right-hand-side constant of their row (negated cut constants
//! for optimality and feasibility cuts, `b_t` for pure-binary rows); edges
//! carry the coefficient of the variable in the row. The epigraph variable
//! `mu_b` is not represented. Constraint nodes are ordered optimality cuts,
//! feasibility cuts, then pure-binary rows; edges enumerate constraint-major
//! with variable index ascending. The edge order is part of the
//! model-weights contract.

use crate::master::MasterState;
use serde::{Deserialize, Serialize};

/// Coefficients below this magnitude produce no edge.
pub const EDGE_COEF_TOL: f64 = 1e-12;

/// Tag describing the edge enumeration convention, stored in weights files.
pub const EDGE_ORDER_TAG: &str = "constraint-major/var-ascending";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    /// Variable node index in `0..n_var`.
    pub var: usize,
    /// Constraint node index in `0..n_con`.
    pub con: usize,
    pub feat: f64,
}

/// Bipartite graph of a master instance. Node ids are `0..n_var` for
/// variables and `n_var..n_var+n_con` for constraints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BipartiteGraph {
    pub n_var: usize,
    pub n_con: usize,
    /// Node features, variables first.
    pub node_features: Vec<f64>,
    /// Edges in enumeration order.
    pub edges: Vec<Edge>,
}

impl BipartiteGraph {
    pub fn n_nodes(&self) -> usize {
        self.n_var + self.n_con
    }

    /// Global node id of constraint node `k`.
    pub fn con_node(&self, k: usize) -> usize {
        self.n_var + k
    }

    /// Per-node incidence lists `(neighbor node id, edge index)`, in edge
    /// enumeration order. Deterministic, so message sums are reproducible.
    pub fn incidence(&self) -> Vec<Vec<(usize, usize)>> {
        let mut inc = vec![Vec::new(); self.n_nodes()];
        for (idx, e) in self.edges.iter().enumerate() {
            let c = self.con_node(e.con);
            inc[e.var].push((c, idx));
            inc[c].push((e.var, idx));
        }
        inc
    }

    /// All node features finite and every edge joins a variable node to a
    /// constraint node.
    pub fn is_well_formed(&self) -> bool {
        self.node_features.len() == self.n_nodes()
            && self.node_features.iter().all(|v| v.is_finite())
            && self.edges.iter().all(|e| {
                e.var < self.n_var && e.con < self.n_con && e.feat.is_finite()
            })
    }
}

/// Encodes the current master state: one constraint node per optimality cut,
/// feasibility cut, and pure-binary row; variable features from the previous
/// assignment.
pub fn encode(state: &MasterState) -> BipartiteGraph {
    let m = state.m;
    let n_con = state.opt_cuts.len() + state.feas_cuts.len() + state.k_rows.len();
    let mut node_features = Vec::with_capacity(m + n_con);
    for j in 0..m {
        node_features.push(f64::from(state.y_prev[j]));
    }

    let mut edges = Vec::new();
    let mut con = 0usize;
    let mut push_row = |coefs: &[f64], rhs: f64, con: usize, edges: &mut Vec<Edge>| {
        node_features.push(rhs);
        for (j, &c) in coefs.iter().enumerate() {
            if c.abs() > EDGE_COEF_TOL {
                edges.push(Edge { var: j, con, feat: c });
            }
        }
    };
    for cut in &state.opt_cuts {
        push_row(&cut.w, -cut.beta, con, &mut edges);
        con += 1;
    }
    for cut in &state.feas_cuts {
        push_row(&cut.v, -cut.gamma, con, &mut edges);
        con += 1;
    }
    for (row, &bt) in state.k_rows.iter().zip(&state.b) {
        push_row(row, bt, con, &mut edges);
        con += 1;
    }

    BipartiteGraph { n_var: m, n_con, node_features, edges }
}

/// Scales constraint-node features and edge features by the maximum absolute
/// value within each group (divisor 1 when a group is all zero). Variable
/// features are already in {0,1} and are left alone. Idempotent.
pub fn normalize(mut graph: BipartiteGraph) -> BipartiteGraph {
    let con_max = graph.node_features[graph.n_var..]
        .iter()
        .fold(0.0f64, |a, v| a.max(v.abs()));
    if con_max > 0.0 {
        for v in &mut graph.node_features[graph.n_var..] {
            *v /= con_max;
        }
    }
    let edge_max = graph.edges.iter().fold(0.0f64, |a, e| a.max(e.feat.abs()));
    if edge_max > 0.0 {
        for e in &mut graph.edges {
            e.feat /= edge_max;
        }
    }
    graph
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::master::{FeasibilityCut, OptimalityCut};

    fn state_with(m: usize) -> MasterState {
        MasterState {
            opt_cuts: Vec::new(),
            feas_cuts: Vec::new(),
            k_rows: vec![
                vec![1.0, 1.0, 0.0, 0.0, 0.0],
                vec![-1.0, -1.0, 0.0, 0.0, 0.0],
                vec![0.0, 0.0, 0.0, 1.0, 1.0],
            ],
            b: vec![1.0, -1.0, 1.0],
            y_prev: vec![0; m],
            mu_lo: -1e6,
            m,
        }
    }

    #[test]
    fn pure_binary_only_graph() {
        let g = encode(&state_with(5));
        assert_eq!(g.n_var, 5);
        assert_eq!(g.n_con, 3);
        assert!(g.is_well_formed());
        // edges only where K is nonzero: 2 + 2 + 2
        assert_eq!(g.edges.len(), 6);
        assert_eq!(&g.node_features[5..], &[1.0, -1.0, 1.0]);
        // constraint-major, variable ascending
        let order: Vec<(usize, usize)> = g.edges.iter().map(|e| (e.con, e.var)).collect();
        assert_eq!(order, vec![(0, 0), (0, 1), (1, 0), (1, 1), (2, 3), (2, 4)]);
    }

    #[test]
    fn cut_nodes_carry_negated_constants() {
        let mut st = state_with(5);
        st.opt_cuts.push(OptimalityCut {
            w: vec![5.0, 8.0, 6.0, 10.0, 6.0],
            beta: 42.0,
        });
        st.feas_cuts.push(FeasibilityCut {
            v: vec![0.0, 0.0, 1.0, 0.0, 0.0],
            gamma: -0.5,
        });
        st.y_prev = vec![1, 0, 1, 1, 0];
        let g = encode(&st);
        assert_eq!(g.n_con, 5);
        assert_eq!(&g.node_features[..5], &[1.0, 0.0, 1.0, 1.0, 0.0]);
        // opt cut first (feature -beta), then feas cut (-gamma), then K rows
        assert_eq!(g.node_features[5], -42.0);
        assert_eq!(g.node_features[6], 0.5);
        // opt-cut edges carry w
        let w_edges: Vec<f64> = g.edges.iter().filter(|e| e.con == 0).map(|e| e.feat).collect();
        assert_eq!(w_edges, vec![5.0, 8.0, 6.0, 10.0, 6.0]);
        // feasibility cut has a single nonzero coefficient
        let v_edges: Vec<(usize, f64)> =
            g.edges.iter().filter(|e| e.con == 1).map(|e| (e.var, e.feat)).collect();
        assert_eq!(v_edges, vec![(2, 1.0)]);
    }

    #[test]
    fn normalize_scales_and_is_idempotent() {
        let mut st = state_with(5);
        st.opt_cuts.push(OptimalityCut {
            w: vec![2.0, -4.0, 0.0, 0.0, 0.0],
            beta: -8.0,
        });
        st.y_prev = vec![1, 1, 0, 0, 0];
        let g = normalize(encode(&st));
        // constraint features were (8, 1, -1, 1): max 8
        assert_eq!(g.node_features[5], 1.0);
        assert_eq!(g.node_features[6], 0.125);
        // variable features untouched
        assert_eq!(&g.node_features[..5], &[1.0, 1.0, 0.0, 0.0, 0.0]);
        // edge features were (2, -4, 1, 1, -1, -1, 1, 1): max abs 4
        assert_eq!(g.edges[0].feat, 0.5);
        assert_eq!(g.edges[1].feat, -1.0);
        let g2 = normalize(g.clone());
        assert_eq!(g, g2);
    }

    #[test]
    fn all_zero_features_unchanged() {
        let mut st = state_with(5);
        st.k_rows = vec![vec![0.0; 5]];
        st.b = vec![0.0];
        let g = encode(&st);
        assert_eq!(g.edges.len(), 0);
        let gn = normalize(g.clone());
        assert_eq!(g, gn);
    }
}
