//! From-scratch differentiable network over bipartite master-problem graphs.
//!
//! Stack: edge-conditioned convolution (ECC) layers with ReLU, global sum
//! pooling, dense layers with ReLU, and either a multi-headed sigmoid actor
//! (one Bernoulli probability per binary variable) or a single linear critic
//! unit. The ECC update is
//!
//! ```text
//! X_out(i) = (1/|N(i)|) * sum_{j in N(i)} F(e_ij; w) X_in(j) + bias
//! ```
//!
//! where `F` maps the scalar edge feature through a small tanh MLP to a
//! `d_out x d_in` matrix; isolated nodes receive the bias alone.
//!
//! Forward passes record a [`Tape`]; [`backward`] consumes it (one backward
//! per forward, enforced by move) and accumulates exact reverse-mode
//! gradients for every parameter. Upstream gradients are given with respect
//! to the pre-activation head outputs, which keeps the usual losses
//! (cross-entropy, Bernoulli log-likelihood, squared error) in closed form.

use crate::graph::BipartiteGraph;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub const FILTER_HIDDEN: usize = 16;
pub const ECC_WIDTH: usize = 32;
pub const DENSE_WIDTH: usize = 64;
/// Probability clamp for log terms.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, thiserror::Error)]
pub enum NetError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
}

/// One edge-conditioned convolution layer. The filter MLP maps the scalar
/// edge feature to a flattened `d_out x d_in` message matrix (row-major).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EccLayer {
    pub d_in: usize,
    pub d_out: usize,
    pub filter_w1: DMatrix<f64>,
    pub filter_b1: DVector<f64>,
    pub filter_w2: DMatrix<f64>,
    pub filter_b2: DVector<f64>,
    pub bias: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeadKind {
    /// `m` sigmoid units, one probability per binary variable.
    Actor,
    /// One linear unit approximating the state value.
    Critic,
}

/// Full parameter record of an actor or critic network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetParams {
    pub ecc: Vec<EccLayer>,
    pub dense: Vec<DenseLayer>,
    pub head: DenseLayer,
    pub head_kind: HeadKind,
}

/// Shape signature used to validate saved weights against an instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchDescriptor {
    pub ecc: Vec<(usize, usize)>,
    pub filter_hidden: usize,
    pub dense: Vec<(usize, usize)>,
    pub head: (usize, usize),
    pub head_kind: HeadKind,
}

fn glorot<R: Rng>(rng: &mut R, rows: usize, cols: usize, fan_in: usize, fan_out: usize) -> DMatrix<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-limit..=limit))
}

impl EccLayer {
    fn init<R: Rng>(rng: &mut R, d_in: usize, d_out: usize, hidden: usize) -> Self {
        let flat = d_in * d_out;
        EccLayer {
            d_in,
            d_out,
            filter_w1: glorot(rng, hidden, 1, 1, hidden),
            filter_b1: DVector::zeros(hidden),
            filter_w2: glorot(rng, flat, hidden, hidden, flat),
            filter_b2: DVector::zeros(flat),
            bias: DVector::zeros(d_out),
        }
    }

    /// Filter MLP: `reshape(W2 tanh(W1 e + b1) + b2, d_out x d_in)`.
    fn edge_matrix(&self, feat: f64) -> (DVector<f64>, DMatrix<f64>) {
        let hidden = (&self.filter_w1 * feat + &self.filter_b1).map(f64::tanh);
        let flat = &self.filter_w2 * &hidden + &self.filter_b2;
        let mat = DMatrix::from_fn(self.d_out, self.d_in, |r, c| flat[r * self.d_in + c]);
        (hidden, mat)
    }
}

impl NetParams {
    /// Actor with the default architecture: 2 ECC layers of width
    /// [`ECC_WIDTH`], one dense layer of width [`DENSE_WIDTH`], `m` sigmoid
    /// heads.
    pub fn actor<R: Rng>(m: usize, rng: &mut R) -> NetParams {
        Self::with_dims(
            HeadKind::Actor,
            &[(1, ECC_WIDTH), (ECC_WIDTH, ECC_WIDTH)],
            FILTER_HIDDEN,
            &[(ECC_WIDTH, DENSE_WIDTH)],
            m,
            rng,
        )
    }

    /// Critic with the same trunk and a single linear output unit.
    pub fn critic<R: Rng>(rng: &mut R) -> NetParams {
        Self::with_dims(
            HeadKind::Critic,
            &[(1, ECC_WIDTH), (ECC_WIDTH, ECC_WIDTH)],
            FILTER_HIDDEN,
            &[(ECC_WIDTH, DENSE_WIDTH)],
            1,
            rng,
        )
    }

    /// Arbitrary-width builder (tests use small stacks).
    pub fn with_dims<R: Rng>(
        head_kind: HeadKind,
        ecc_dims: &[(usize, usize)],
        filter_hidden: usize,
        dense_dims: &[(usize, usize)],
        head_out: usize,
        rng: &mut R,
    ) -> NetParams {
        let ecc = ecc_dims
            .iter()
            .map(|&(i, o)| EccLayer::init(rng, i, o, filter_hidden))
            .collect();
        let dense: Vec<DenseLayer> = dense_dims
            .iter()
            .map(|&(i, o)| DenseLayer {
                w: glorot(rng, o, i, i, o),
                b: DVector::zeros(o),
            })
            .collect();
        let head_in = dense_dims.last().map_or_else(
            || ecc_dims.last().expect("at least one ecc layer").1,
            |&(_, o)| o,
        );
        NetParams {
            ecc,
            dense,
            head: DenseLayer {
                w: glorot(rng, head_out, head_in, head_in, head_out),
                b: DVector::zeros(head_out),
            },
            head_kind,
        }
    }

    pub fn descriptor(&self) -> ArchDescriptor {
        ArchDescriptor {
            ecc: self.ecc.iter().map(|l| (l.d_in, l.d_out)).collect(),
            filter_hidden: self.ecc.first().map_or(0, |l| l.filter_b1.len()),
            dense: self.dense.iter().map(|l| (l.w.ncols(), l.w.nrows())).collect(),
            head: (self.head.w.ncols(), self.head.w.nrows()),
            head_kind: self.head_kind,
        }
    }

    /// Output width of the head (`m` for an actor).
    pub fn head_out(&self) -> usize {
        self.head.w.nrows()
    }

    pub fn zeros_like(&self) -> NetParams {
        let mut z = self.clone();
        for l in &mut z.ecc {
            l.filter_w1.fill(0.0);
            l.filter_b1.fill(0.0);
            l.filter_w2.fill(0.0);
            l.filter_b2.fill(0.0);
            l.bias.fill(0.0);
        }
        for l in &mut z.dense {
            l.w.fill(0.0);
            l.b.fill(0.0);
        }
        z.head.w.fill(0.0);
        z.head.b.fill(0.0);
        z
    }

    /// Flat parameter vector; the layout is fixed by the architecture and
    /// shared with [`NetParams::from_flat`] and the weights file format.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit(|v| out.extend_from_slice(v));
        out
    }

    pub fn from_flat(arch: &ArchDescriptor, flat: &[f64]) -> Result<NetParams, NetError> {
        let mut template = Self::template(arch);
        let mut offset = 0usize;
        template.visit_mut(|v| {
            let len = v.len();
            v.copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        });
        if offset != flat.len() {
            return Err(NetError::Shape(format!(
                "flat length {} != expected {offset}",
                flat.len()
            )));
        }
        Ok(template)
    }

    fn template(arch: &ArchDescriptor) -> NetParams {
        let ecc = arch
            .ecc
            .iter()
            .map(|&(i, o)| EccLayer {
                d_in: i,
                d_out: o,
                filter_w1: DMatrix::zeros(arch.filter_hidden, 1),
                filter_b1: DVector::zeros(arch.filter_hidden),
                filter_w2: DMatrix::zeros(i * o, arch.filter_hidden),
                filter_b2: DVector::zeros(i * o),
                bias: DVector::zeros(o),
            })
            .collect();
        let dense = arch
            .dense
            .iter()
            .map(|&(i, o)| DenseLayer { w: DMatrix::zeros(o, i), b: DVector::zeros(o) })
            .collect();
        NetParams {
            ecc,
            dense,
            head: DenseLayer {
                w: DMatrix::zeros(arch.head.1, arch.head.0),
                b: DVector::zeros(arch.head.1),
            },
            head_kind: arch.head_kind,
        }
    }

    fn visit<F: FnMut(&[f64])>(&self, mut f: F) {
        for l in &self.ecc {
            f(l.filter_w1.as_slice());
            f(l.filter_b1.as_slice());
            f(l.filter_w2.as_slice());
            f(l.filter_b2.as_slice());
            f(l.bias.as_slice());
        }
        for l in &self.dense {
            f(l.w.as_slice());
            f(l.b.as_slice());
        }
        f(self.head.w.as_slice());
        f(self.head.b.as_slice());
    }

    fn visit_mut<F: FnMut(&mut [f64])>(&mut self, mut f: F) {
        for l in &mut self.ecc {
            f(l.filter_w1.as_mut_slice());
            f(l.filter_b1.as_mut_slice());
            f(l.filter_w2.as_mut_slice());
            f(l.filter_b2.as_mut_slice());
            f(l.bias.as_mut_slice());
        }
        for l in &mut self.dense {
            f(l.w.as_mut_slice());
            f(l.b.as_mut_slice());
        }
        f(self.head.w.as_mut_slice());
        f(self.head.b.as_mut_slice());
    }

    /// `self += other * scale`, elementwise over all parameters.
    pub fn axpy(&mut self, other: &NetParams, scale: f64) {
        let flat = other.to_flat();
        let mut offset = 0usize;
        self.visit_mut(|v| {
            for x in v.iter_mut() {
                *x += scale * flat[offset];
                offset += 1;
            }
        });
    }
}

// ---------------------------------------------------------------------------
// Forward with tape
// ---------------------------------------------------------------------------

struct EccCache {
    x_in: Vec<DVector<f64>>,
    edge_hidden: Vec<DVector<f64>>,
    edge_mat: Vec<DMatrix<f64>>,
    pre_act: Vec<DVector<f64>>,
}

struct DenseCache {
    x_in: DVector<f64>,
    pre_act: DVector<f64>,
}

/// Recorded forward values; consumed by [`backward`].
pub struct Tape {
    incidence: Vec<Vec<(usize, usize)>>,
    edge_feats: Vec<f64>,
    ecc: Vec<EccCache>,
    dense: Vec<DenseCache>,
    head_in: DVector<f64>,
}

fn relu(v: &DVector<f64>) -> DVector<f64> {
    v.map(|x| x.max(0.0))
}

/// One ECC update without activation. Public because it is the unit the
/// dense-reference tests pin down.
pub fn ecc_forward(
    layer: &EccLayer,
    graph: &BipartiteGraph,
    x_in: &[DVector<f64>],
) -> Result<Vec<DVector<f64>>, NetError> {
    let incidence = graph.incidence();
    let (out, _) = ecc_forward_cached(layer, &incidence, graph, x_in)?;
    Ok(out)
}

fn ecc_forward_cached(
    layer: &EccLayer,
    incidence: &[Vec<(usize, usize)>],
    graph: &BipartiteGraph,
    x_in: &[DVector<f64>],
) -> Result<(Vec<DVector<f64>>, EccCache), NetError> {
    if x_in.len() != graph.n_nodes() {
        return Err(NetError::Shape(format!(
            "ecc input has {} node vectors, graph has {} nodes",
            x_in.len(),
            graph.n_nodes()
        )));
    }
    if x_in.iter().any(|v| v.len() != layer.d_in) {
        return Err(NetError::Shape(format!("ecc input width != {}", layer.d_in)));
    }
    let mut edge_hidden = Vec::with_capacity(graph.edges.len());
    let mut edge_mat = Vec::with_capacity(graph.edges.len());
    for e in &graph.edges {
        let (h, m) = layer.edge_matrix(e.feat);
        edge_hidden.push(h);
        edge_mat.push(m);
    }
    let mut pre_act = Vec::with_capacity(x_in.len());
    let mut out = Vec::with_capacity(x_in.len());
    for (i, nbrs) in incidence.iter().enumerate() {
        let mut acc = layer.bias.clone();
        if !nbrs.is_empty() {
            let scale = 1.0 / nbrs.len() as f64;
            for &(j, eidx) in nbrs {
                acc.gemv(scale, &edge_mat[eidx], &x_in[j], 1.0);
            }
        }
        let _ = i;
        out.push(acc.clone());
        pre_act.push(acc);
    }
    let cache = EccCache { x_in: x_in.to_vec(), edge_hidden, edge_mat, pre_act };
    Ok((out, cache))
}

fn trunk_forward(params: &NetParams, graph: &BipartiteGraph) -> Result<(DVector<f64>, Tape), NetError> {
    let incidence = graph.incidence();
    let mut x: Vec<DVector<f64>> = graph
        .node_features
        .iter()
        .map(|&f| DVector::from_column_slice(&[f]))
        .collect();
    let mut ecc_caches = Vec::with_capacity(params.ecc.len());
    for (li, layer) in params.ecc.iter().enumerate() {
        let (pre, cache) = ecc_forward_cached(layer, &incidence, graph, &x)?;
        x = pre.iter().map(relu).collect();
        if x.iter().any(|v| v.iter().any(|f| !f.is_finite())) {
            return Err(NetError::NonFinite(format!("ecc layer {li}")));
        }
        ecc_caches.push(cache);
    }
    // global sum pooling over all nodes
    let width = params.ecc.last().map_or(1, |l| l.d_out);
    let mut pooled = DVector::zeros(width);
    for v in &x {
        pooled += v;
    }
    let mut h = pooled;
    let mut dense_caches = Vec::with_capacity(params.dense.len());
    for (li, layer) in params.dense.iter().enumerate() {
        let pre = &layer.w * &h + &layer.b;
        let out = relu(&pre);
        dense_caches.push(DenseCache { x_in: h, pre_act: pre });
        h = out;
        if h.iter().any(|f| !f.is_finite()) {
            return Err(NetError::NonFinite(format!("dense layer {li}")));
        }
    }
    let tape = Tape {
        incidence,
        edge_feats: graph.edges.iter().map(|e| e.feat).collect(),
        ecc: ecc_caches,
        dense: dense_caches,
        head_in: h.clone(),
    };
    Ok((h, tape))
}

/// Pre-activation head outputs (logits for an actor, the value for a critic).
pub fn forward_logits(params: &NetParams, graph: &BipartiteGraph) -> Result<(DVector<f64>, Tape), NetError> {
    let (h, tape) = trunk_forward(params, graph)?;
    let z = &params.head.w * &h + &params.head.b;
    if z.iter().any(|f| !f.is_finite()) {
        return Err(NetError::NonFinite("head".to_string()));
    }
    Ok((z, tape))
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Actor probabilities, one per binary variable, each strictly in (0, 1).
pub fn actor_forward(params: &NetParams, graph: &BipartiteGraph) -> Result<(DVector<f64>, Tape), NetError> {
    if params.head_kind != HeadKind::Actor {
        return Err(NetError::Shape("actor_forward on a critic".to_string()));
    }
    let (z, tape) = forward_logits(params, graph)?;
    Ok((z.map(sigmoid), tape))
}

/// Deterministic actor probabilities without tape bookkeeping.
pub fn actor_probabilities(params: &NetParams, graph: &BipartiteGraph) -> Result<DVector<f64>, NetError> {
    actor_forward(params, graph).map(|(p, _)| p)
}

/// Critic state-value estimate.
pub fn critic_forward(params: &NetParams, graph: &BipartiteGraph) -> Result<(f64, Tape), NetError> {
    if params.head_kind != HeadKind::Critic {
        return Err(NetError::Shape("critic_forward on an actor".to_string()));
    }
    let (z, tape) = forward_logits(params, graph)?;
    Ok((z[0], tape))
}

/// Reverse-mode gradients for every parameter. `dldz` is the loss gradient
/// with respect to the pre-activation head outputs recorded on `tape`; the
/// tape is consumed, so each forward supports exactly one backward.
pub fn backward(params: &NetParams, tape: Tape, dldz: &DVector<f64>) -> Result<NetParams, NetError> {
    if dldz.len() != params.head.w.nrows() {
        return Err(NetError::Shape(format!(
            "upstream gradient length {} != head width {}",
            dldz.len(),
            params.head.w.nrows()
        )));
    }
    let mut grads = params.zeros_like();

    // head
    grads.head.w.ger(1.0, dldz, &tape.head_in, 1.0);
    grads.head.b += dldz;
    let mut dh = params.head.w.transpose() * dldz;

    // dense layers
    for (li, layer) in params.dense.iter().enumerate().rev() {
        let cache = &tape.dense[li];
        let dpre = DVector::from_fn(dh.len(), |i, _| {
            if cache.pre_act[i] > 0.0 { dh[i] } else { 0.0 }
        });
        grads.dense[li].w.ger(1.0, &dpre, &cache.x_in, 1.0);
        grads.dense[li].b += &dpre;
        dh = layer.w.transpose() * dpre;
    }

    // un-pool: every node embedding receives the pooled gradient
    let n_nodes = tape.incidence.len();
    let mut dx: Vec<DVector<f64>> = vec![dh.clone(); n_nodes];

    // ecc layers in reverse
    for (li, layer) in params.ecc.iter().enumerate().rev() {
        let cache = &tape.ecc[li];
        let mut dmat: Vec<DMatrix<f64>> =
            vec![DMatrix::zeros(layer.d_out, layer.d_in); cache.edge_mat.len()];
        let mut dx_in: Vec<DVector<f64>> =
            vec![DVector::zeros(layer.d_in); n_nodes];
        for (i, nbrs) in tape.incidence.iter().enumerate() {
            let dpre = DVector::from_fn(layer.d_out, |r, _| {
                if cache.pre_act[i][r] > 0.0 { dx[i][r] } else { 0.0 }
            });
            grads.ecc[li].bias += &dpre;
            if nbrs.is_empty() {
                continue;
            }
            let scale = 1.0 / nbrs.len() as f64;
            for &(j, eidx) in nbrs {
                dmat[eidx].ger(scale, &dpre, &cache.x_in[j], 1.0);
                dx_in[j].gemv_tr(scale, &cache.edge_mat[eidx], &dpre, 1.0);
            }
        }
        // filter MLP backward per edge
        for (eidx, dm) in dmat.iter().enumerate() {
            let mut dflat = DVector::zeros(layer.d_out * layer.d_in);
            for r in 0..layer.d_out {
                for c in 0..layer.d_in {
                    dflat[r * layer.d_in + c] = dm[(r, c)];
                }
            }
            grads.ecc[li].filter_b2 += &dflat;
            grads.ecc[li].filter_w2.ger(1.0, &dflat, &cache.edge_hidden[eidx], 1.0);
            let du = layer.filter_w2.transpose() * dflat;
            let u = &cache.edge_hidden[eidx];
            let dpre1 = DVector::from_fn(u.len(), |k, _| du[k] * (1.0 - u[k] * u[k]));
            grads.ecc[li].filter_b1 += &dpre1;
            for k in 0..dpre1.len() {
                grads.ecc[li].filter_w1[(k, 0)] += dpre1[k] * tape.edge_feats[eidx];
            }
        }
        dx = dx_in;
    }
    Ok(grads)
}

// ---------------------------------------------------------------------------
// Losses, sampling, optimizer
// ---------------------------------------------------------------------------

pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Mean binary cross-entropy over the heads.
pub fn bce_loss(y: &[u8], p: &DVector<f64>) -> f64 {
    let m = y.len() as f64;
    y.iter()
        .zip(p.iter())
        .map(|(&yi, &pi)| {
            let pi = clamp_prob(pi);
            if yi == 1 { -pi.ln() } else { -(1.0 - pi).ln() }
        })
        .sum::<f64>()
        / m
}

/// Gradient of [`bce_loss`] with respect to the head logits: `(p - y) / m`.
pub fn bce_grad_logits(y: &[u8], p: &DVector<f64>) -> DVector<f64> {
    let m = y.len() as f64;
    DVector::from_fn(y.len(), |i, _| (p[i] - f64::from(y[i])) / m)
}

/// Independent Bernoulli draws per head.
pub fn sample_action<R: Rng>(p: &DVector<f64>, rng: &mut R) -> Vec<u8> {
    p.iter()
        .map(|&pi| u8::from(rng.random::<f64>() < pi))
        .collect()
}

/// Joint log-probability of `a` under independent Bernoulli heads.
pub fn log_prob(p: &DVector<f64>, a: &[u8]) -> f64 {
    p.iter()
        .zip(a)
        .map(|(&pi, &ai)| {
            let pi = clamp_prob(pi);
            if ai == 1 { pi.ln() } else { (1.0 - pi).ln() }
        })
        .sum()
}

/// Gradient of [`log_prob`] with respect to the head logits: `a - p`.
pub fn log_prob_grad_logits(p: &DVector<f64>, a: &[u8]) -> DVector<f64> {
    DVector::from_fn(a.len(), |i, _| f64::from(a[i]) - p[i])
}

/// First-order adaptive moment optimizer state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamState {
    pub fn new(params: &NetParams) -> AdamState {
        let n = params.to_flat().len();
        AdamState { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }
}

/// In-place adaptive moment update with bias correction.
pub fn adam_step(
    params: &mut NetParams,
    grads: &NetParams,
    state: &mut AdamState,
    cfg: &AdamConfig,
) {
    let g = grads.to_flat();
    let mut p = params.to_flat();
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..p.len() {
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g[i];
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        let mhat = state.m[i] / bc1;
        let vhat = state.v[i] / bc2;
        p[i] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
    }
    let arch = params.descriptor();
    *params = NetParams::from_flat(&arch, &p).expect("flat layout is stable");
}
