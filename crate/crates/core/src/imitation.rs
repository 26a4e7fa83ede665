//! Expert dataset generation and behavioral cloning.
//!
//! An expert pair is the normalized bipartite graph of the master state at
//! some iteration of a classical GBD run together with the exact master
//! solution computed there. The actor is trained to reproduce the solver's
//! assignment with mean binary cross-entropy over shuffled mini-batches,
//! with a train/validation split by instance (never by pair) so no instance
//! leaks across the split.

use crate::engine::{default_y0, subproblem_step, CutKind, EngineError, GbdLimits};
use crate::graph::{encode, normalize, BipartiteGraph};
use crate::io::{sha256_hex, SchemaError, DATASET_SCHEMA};
use crate::master::{MasterSolve, MasterState};
use crate::nlp::NlpOptions;
use crate::nn::{
    actor_forward, adam_step, backward, bce_grad_logits, bce_loss, AdamConfig, AdamState,
    NetError, NetParams,
};
use crate::problem::{build_case_study1, sample_coefficients, BinaryVec};
use crate::{bound::Bound, par};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("empty dataset")]
    EmptyDataset,
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// One (state, expert action) pair from a classical GBD run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertPair {
    pub instance_id: u64,
    pub iteration: usize,
    pub graph: BipartiteGraph,
    pub label: BinaryVec,
}

#[derive(Debug, Clone, Default)]
pub struct ExpertDataset {
    pub pairs: Vec<ExpertPair>,
    /// Instances dropped because a solver failed.
    pub skipped: usize,
}

impl ExpertDataset {
    /// Order-independent digest: hash of sorted per-pair hashes.
    pub fn digest(&self) -> String {
        let mut hashes: Vec<String> = self
            .pairs
            .iter()
            .map(|p| sha256_hex(serde_json::to_string(p).expect("pair serializes").as_bytes()))
            .collect();
        hashes.sort();
        sha256_hex(hashes.join("\n").as_bytes())
    }
}

/// Records every (graph, exact master solution) pair of one classical run.
fn record_instance(
    inst: &crate::problem::ProblemInstance,
    instance_id: u64,
    limits: &GbdLimits,
    nlp: &NlpOptions,
) -> Result<Vec<ExpertPair>, EngineError> {
    let Some(y0) = default_y0(inst)? else {
        return Ok(Vec::new());
    };
    let mut master = MasterState::new(inst, y0.clone());
    let mut ubd = Bound::POS_INF;
    let mut lbd = Bound::NEG_INF;
    let mut y = y0;
    let mut pairs = Vec::new();
    let mut iter = 0usize;
    while ubd.gap(lbd) > limits.eps && iter < limits.max_iterations {
        let (cut, sol) = subproblem_step(inst, &mut master, &y, nlp, iter)?;
        if cut == CutKind::Optimality {
            ubd = ubd.min(Bound::finite(sol.objective));
        }
        let graph = normalize(encode(&master));
        match master.solve_exact()? {
            MasterSolve::Optimal { y: y_next, mu_b } => {
                debug_assert!(master.check_feasible(&y_next));
                pairs.push(ExpertPair {
                    instance_id,
                    iteration: iter,
                    graph,
                    label: y_next.clone(),
                });
                lbd = Bound::finite(mu_b);
                y = y_next;
            }
            MasterSolve::Infeasible => break,
        }
        iter += 1;
    }
    Ok(pairs)
}

/// Expert pairs of the single sampled instance at stream index `i`;
/// building block of [`generate_expert_dataset`].
pub fn generate_expert_dataset_at(
    i: u64,
    seed: u64,
    limits: &GbdLimits,
    nlp: &NlpOptions,
) -> Result<Vec<ExpertPair>, EngineError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i);
    let c = sample_coefficients(&mut rng);
    let inst = build_case_study1(c).expect("sampled coefficients are in range");
    record_instance(&inst, i, limits, nlp)
}

/// Generates expert pairs from classical GBD runs over freshly sampled
/// instances. Deterministic given the seed; instances whose solver fails are
/// skipped and counted.
pub fn generate_expert_dataset(
    n_instances: usize,
    seed: u64,
    limits: &GbdLimits,
    nlp: &NlpOptions,
) -> ExpertDataset {
    let runs = par::map_indexed(n_instances, |i| {
        generate_expert_dataset_at(i as u64, seed, limits, nlp)
    });
    let mut dataset = ExpertDataset::default();
    for run in runs {
        match run {
            Ok(pairs) => dataset.pairs.extend(pairs),
            Err(_) => dataset.skipped += 1,
        }
    }
    dataset
}

// ---------------------------------------------------------------------------
// Dataset files (JSON lines)
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct DatasetHeader {
    schema_version: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    manifest_digest: Option<String>,
    pairs: usize,
    skipped: usize,
}

pub fn save_dataset(
    dataset: &ExpertDataset,
    path: &Path,
    manifest_digest: Option<&str>,
) -> Result<(), SchemaError> {
    let f = std::fs::File::create(path).map_err(|source| SchemaError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut w = BufWriter::new(f);
    let io_err = |source: std::io::Error| SchemaError::Io {
        path: path.display().to_string(),
        source,
    };
    let header = DatasetHeader {
        schema_version: DATASET_SCHEMA.to_string(),
        manifest_digest: manifest_digest.map(str::to_string),
        pairs: dataset.pairs.len(),
        skipped: dataset.skipped,
    };
    writeln!(w, "{}", serde_json::to_string(&header).unwrap()).map_err(io_err)?;
    for pair in &dataset.pairs {
        writeln!(w, "{}", serde_json::to_string(pair).unwrap()).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn load_dataset(path: &Path) -> Result<ExpertDataset, SchemaError> {
    let f = std::fs::File::open(path).map_err(|source| SchemaError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut lines = BufReader::new(f).lines();
    let header_line = lines
        .next()
        .ok_or(SchemaError::Malformed { what: "dataset", detail: "empty file".to_string() })?
        .map_err(|source| SchemaError::Io { path: path.display().to_string(), source })?;
    let header: DatasetHeader =
        serde_json::from_str(&header_line).map_err(|e| SchemaError::Malformed {
            what: "dataset",
            detail: e.to_string(),
        })?;
    if header.schema_version != DATASET_SCHEMA {
        return Err(SchemaError::Version {
            path: path.display().to_string(),
            found: header.schema_version,
            expected: DATASET_SCHEMA,
        });
    }
    let mut dataset = ExpertDataset { pairs: Vec::new(), skipped: header.skipped };
    for line in lines {
        let line = line.map_err(|source| SchemaError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        dataset.pairs.push(serde_json::from_str(&line).map_err(|e| SchemaError::Malformed {
            what: "dataset",
            detail: e.to_string(),
        })?);
    }
    Ok(dataset)
}

// ---------------------------------------------------------------------------
// Behavioral cloning
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BcConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Fraction of instances held out for validation.
    pub validation_fraction: f64,
}

impl Default for BcConfig {
    fn default() -> Self {
        BcConfig {
            epochs: 50,
            batch_size: 32,
            adam: AdamConfig::default(),
            validation_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BcReport {
    pub epoch_train_loss: Vec<f64>,
    pub val_loss: Option<f64>,
    /// Per-bit accuracy at a 0.5 threshold on held-out instances.
    pub val_bit_accuracy: Option<f64>,
    pub train_pairs: usize,
    pub val_pairs: usize,
}

/// Instance-level train/validation split: no instance contributes pairs to
/// both sides.
pub fn split_by_instance(
    dataset: &ExpertDataset,
    fraction: f64,
    rng: &mut ChaCha8Rng,
) -> (Vec<usize>, Vec<usize>) {
    let mut ids: Vec<u64> = dataset.pairs.iter().map(|p| p.instance_id).collect();
    ids.sort_unstable();
    ids.dedup();
    ids.shuffle(rng);
    let n_val = ((ids.len() as f64 * fraction).round() as usize).min(ids.len().saturating_sub(1));
    let val_ids: std::collections::HashSet<u64> = ids[..n_val].iter().copied().collect();
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (i, p) in dataset.pairs.iter().enumerate() {
        if val_ids.contains(&p.instance_id) {
            val.push(i);
        } else {
            train.push(i);
        }
    }
    (train, val)
}

/// Trains the actor by behavioral cloning. Deterministic given the seed;
/// mini-batch gradients are averaged in index order regardless of the
/// parallel feature.
pub fn train_bc(
    dataset: &ExpertDataset,
    mut params: NetParams,
    cfg: &BcConfig,
    seed: u64,
) -> Result<(NetParams, BcReport), TrainError> {
    if dataset.pairs.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (train_idx, val_idx) = split_by_instance(dataset, cfg.validation_fraction, &mut rng);
    let mut order = train_idx.clone();
    let mut adam = AdamState::new(&params);
    let mut epoch_train_loss = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let items: Vec<&ExpertPair> = chunk.iter().map(|&i| &dataset.pairs[i]).collect();
            let results = par::map_slice(&items, |pair| -> Result<(f64, NetParams), NetError> {
                let (p, tape) = actor_forward(&params, &pair.graph)?;
                let loss = bce_loss(&pair.label, &p);
                let grads = backward(&params, tape, &bce_grad_logits(&pair.label, &p))?;
                Ok((loss, grads))
            });
            let mut batch_grads = params.zeros_like();
            let mut batch_loss = 0.0;
            let count = results.len() as f64;
            for r in results {
                let (loss, grads) = r?;
                batch_loss += loss;
                batch_grads.axpy(&grads, 1.0 / count);
            }
            loss_sum += batch_loss;
            adam_step(&mut params, &batch_grads, &mut adam, &cfg.adam);
        }
        let mean = loss_sum / train_idx.len().max(1) as f64;
        if !mean.is_finite() || epoch_train_loss.first().is_some_and(|&first: &f64| mean > 10.0 * first.max(1e-12)) {
            return Err(TrainError::Diverged { epoch, loss: mean });
        }
        epoch_train_loss.push(mean);
    }

    let (val_loss, val_bit_accuracy) = if val_idx.is_empty() {
        (None, None)
    } else {
        let mut loss = 0.0;
        let mut correct = 0usize;
        let mut bits = 0usize;
        for &i in &val_idx {
            let pair = &dataset.pairs[i];
            let (p, _) = actor_forward(&params, &pair.graph)?;
            loss += bce_loss(&pair.label, &p);
            for (j, &yj) in pair.label.iter().enumerate() {
                let pred = u8::from(p[j] >= 0.5);
                correct += usize::from(pred == yj);
                bits += 1;
            }
        }
        (
            Some(loss / val_idx.len() as f64),
            Some(correct as f64 / bits.max(1) as f64),
        )
    };

    let report = BcReport {
        epoch_train_loss,
        val_loss,
        val_bit_accuracy,
        train_pairs: train_idx.len(),
        val_pairs: val_idx.len(),
    };
    Ok((params, report))
}
