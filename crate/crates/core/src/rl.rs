//! GBD as a reinforcement-learning environment, with clipped-surrogate
//! policy-gradient fine-tuning of the actor.
//!
//! An episode is one full GBD solve of a freshly sampled instance. The state
//! is the normalized bipartite graph of the master, the action a complete
//! binary assignment sampled from the actor's Bernoulli heads, and the
//! reward balances feasibility, bound-gap improvement, and subproblem time:
//!
//! ```text
//! r = a1 * r_feas + a2 * r_gap - a3 * min(t_sp, tau)
//! ```
//!
//! Infeasible actions fall back to an exact master solve and are penalized.
//! A candidate lower bound from a feasible action is adopted only when it
//! does not exceed the incumbent upper bound, which keeps the training-time
//! bookkeeping consistent (`LBD <= UBD` at every step) without thresholds;
//! confidence thresholds only exist at deployment.

use crate::bound::Bound;
use crate::engine::{default_y0, subproblem_step, CutKind, EngineError};
use crate::graph::{encode, normalize, BipartiteGraph};
use crate::master::{MasterSolve, MasterState};
use crate::nlp::NlpOptions;
use crate::nn::{
    actor_forward, adam_step, backward, critic_forward, log_prob, log_prob_grad_logits,
    sample_action, AdamConfig, AdamState, NetError, NetParams,
};
use crate::problem::{BinaryVec, ProblemInstance};
use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Reward weights and policy-update constants.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RewardConfig {
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Time-penalty clip, seconds.
    pub tau: f64,
    pub gamma_discount: f64,
    pub gae_lambda: f64,
    pub clip_eps: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            alpha1: 1.0,
            alpha2: 1.0,
            alpha3: 0.1,
            beta1: 1.0,
            beta2: 0.5,
            tau: 1.0,
            gamma_discount: 0.99,
            gae_lambda: 0.95,
            clip_eps: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RlConfig {
    pub reward: RewardConfig,
    pub update_epochs: usize,
    pub minibatch: usize,
    /// Episode iteration cap.
    pub iteration_cap: usize,
    pub eps: f64,
    pub actor_adam: AdamConfig,
    pub critic_adam: AdamConfig,
    pub entropy_coef: f64,
}

impl Default for RlConfig {
    fn default() -> Self {
        RlConfig {
            reward: RewardConfig::default(),
            update_epochs: 4,
            minibatch: 64,
            iteration_cap: 50,
            eps: 1e-4,
            actor_adam: AdamConfig { lr: 3e-4, ..AdamConfig::default() },
            critic_adam: AdamConfig::default(),
            entropy_coef: 1e-3,
        }
    }
}

/// Reward components; the total is reconstructed exactly from the parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardParts {
    pub r_feas: f64,
    pub r_gap: f64,
    pub r_time: f64,
    pub total: f64,
}

/// Upper/lower bound pairs at the previous step, current step, and episode
/// start, as the gap-improvement term needs them.
#[derive(Debug, Clone, Copy)]
pub struct BoundsWindow {
    pub prev: (Bound, Bound),
    pub cur: (Bound, Bound),
    pub initial: (Bound, Bound),
}

fn finite_gap(ubd: Bound, lbd: Bound) -> Option<f64> {
    match (ubd, lbd) {
        (Bound::Finite(u), Bound::Finite(l)) => Some(u - l),
        _ => None,
    }
}

/// Hybrid reward: feasibility term, normalized gap improvement (zero until
/// all three gaps are finite, and zero when the initial gap degenerates to
/// zero), and clipped time penalty.
pub fn compute_reward(
    feasible: bool,
    bounds: &BoundsWindow,
    t_sp: f64,
    cfg: &RewardConfig,
) -> RewardParts {
    let r_feas = if feasible { cfg.beta2 } else { -cfg.beta1 };
    let r_gap = if feasible {
        match (
            finite_gap(bounds.prev.0, bounds.prev.1),
            finite_gap(bounds.cur.0, bounds.cur.1),
            finite_gap(bounds.initial.0, bounds.initial.1),
        ) {
            (Some(prev), Some(cur), Some(initial)) if initial > 0.0 => {
                ((prev - cur) / initial).abs()
            }
            _ => 0.0,
        }
    } else {
        0.0
    };
    let r_time = t_sp.min(cfg.tau);
    let total = cfg.alpha1 * r_feas + cfg.alpha2 * r_gap - cfg.alpha3 * r_time;
    RewardParts { r_feas, r_gap, r_time, total }
}

/// One transition of a live GBD episode.
#[derive(Debug, Clone)]
pub struct Experience {
    pub graph: BipartiteGraph,
    pub action: BinaryVec,
    pub log_prob_old: f64,
    pub reward: RewardParts,
    pub graph_next: BipartiteGraph,
    pub value: f64,
    pub advantage: f64,
    pub ret: f64,
    pub done: bool,
}

/// A GBD solve wrapped as an environment. `reset` performs the pre-loop
/// subproblem solve on `y0`; each `step` consumes one agent action.
pub struct GbdEnv<'a> {
    inst: &'a ProblemInstance,
    master: MasterState,
    ubd: Bound,
    lbd: Bound,
    graph: BipartiteGraph,
    initial: Option<(Bound, Bound)>,
    iter: usize,
    eps: f64,
    iteration_cap: usize,
    nlp: NlpOptions,
    reward: RewardConfig,
}

pub struct StepOutcome {
    pub graph_next: BipartiteGraph,
    pub reward: RewardParts,
    pub done: bool,
    /// Action passed the master feasibility check.
    pub action_feasible: bool,
}

impl<'a> GbdEnv<'a> {
    pub fn reset(
        inst: &'a ProblemInstance,
        y0: &[u8],
        eps: f64,
        iteration_cap: usize,
        nlp: NlpOptions,
        reward: RewardConfig,
    ) -> Result<Self, EngineError> {
        let mut master = MasterState::new(inst, y0.to_vec());
        let mut ubd = Bound::POS_INF;
        let (cut, sol) = subproblem_step(inst, &mut master, y0, &nlp, 0)?;
        if cut == CutKind::Optimality {
            ubd = ubd.min(Bound::finite(sol.objective));
        }
        let graph = normalize(encode(&master));
        let lbd = Bound::NEG_INF;
        let mut env = GbdEnv {
            inst,
            master,
            ubd,
            lbd,
            graph,
            initial: None,
            iter: 0,
            eps,
            iteration_cap,
            nlp,
            reward,
        };
        env.note_initial();
        Ok(env)
    }

    fn note_initial(&mut self) {
        if self.initial.is_none() && finite_gap(self.ubd, self.lbd).is_some() {
            self.initial = Some((self.ubd, self.lbd));
        }
    }

    pub fn current_graph(&self) -> &BipartiteGraph {
        &self.graph
    }

    pub fn bounds(&self) -> (Bound, Bound) {
        (self.ubd, self.lbd)
    }

    pub fn done(&self) -> bool {
        self.ubd.gap(self.lbd) <= self.eps || self.iter >= self.iteration_cap
    }

    /// One environment transition under action `a`: feasibility check,
    /// solver fallback when needed, subproblem solve, cut addition, bound
    /// bookkeeping, reward.
    pub fn step(&mut self, a: &[u8]) -> Result<StepOutcome, EngineError> {
        let prev = (self.ubd, self.lbd);
        let feasible = self.master.check_feasible(a);
        let y_next: BinaryVec;
        if feasible {
            let candidate = self.master.eval_candidate_cost(a);
            // adopt the candidate bound only when it cannot overshoot the
            // incumbent; an overshooting bound is not a valid lower bound
            if candidate <= self.ubd {
                self.lbd = candidate;
            }
            y_next = a.to_vec();
        } else {
            match self.master.solve_exact()? {
                MasterSolve::Optimal { y, mu_b } => {
                    self.lbd = Bound::finite(mu_b);
                    y_next = y;
                }
                MasterSolve::Infeasible => {
                    // terminal: the remaining binary space is empty
                    let parts = compute_reward(
                        false,
                        &BoundsWindow { prev, cur: prev, initial: prev },
                        0.0,
                        &self.reward,
                    );
                    self.iter += 1;
                    return Ok(StepOutcome {
                        graph_next: self.graph.clone(),
                        reward: parts,
                        done: true,
                        action_feasible: false,
                    });
                }
            }
        }
        self.iter += 1;
        let (cut, sol) = subproblem_step(self.inst, &mut self.master, &y_next, &self.nlp, self.iter)?;
        if cut == CutKind::Optimality {
            self.ubd = self.ubd.min(Bound::finite(sol.objective));
        }
        self.graph = normalize(encode(&self.master));
        self.note_initial();
        let window = BoundsWindow {
            prev,
            cur: (self.ubd, self.lbd),
            initial: self.initial.unwrap_or((self.ubd, self.lbd)),
        };
        let reward = compute_reward(feasible, &window, sol.wall_time, &self.reward);
        Ok(StepOutcome {
            graph_next: self.graph.clone(),
            reward,
            done: self.done(),
            action_feasible: feasible,
        })
    }
}

/// Rolls out one episode under the current policy, then fills advantages and
/// returns with generalized advantage estimation.
pub fn rollout_episode(
    inst: &ProblemInstance,
    actor: &NetParams,
    critic: &NetParams,
    cfg: &RlConfig,
    nlp: &NlpOptions,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Experience>, crate::imitation::TrainError> {
    let Some(y0) = default_y0(inst)? else {
        return Ok(Vec::new());
    };
    let mut env = GbdEnv::reset(inst, &y0, cfg.eps, cfg.iteration_cap, nlp.clone(), cfg.reward)?;
    let mut buffer: Vec<Experience> = Vec::new();
    while !env.done() {
        let graph = env.current_graph().clone();
        let (p, _) = actor_forward(actor, &graph)?;
        let a = sample_action(&p, rng);
        let lp = log_prob(&p, &a);
        let (v, _) = critic_forward(critic, &graph)?;
        let out = env.step(&a)?;
        buffer.push(Experience {
            graph,
            action: a,
            log_prob_old: lp,
            reward: out.reward,
            graph_next: out.graph_next,
            value: v,
            advantage: 0.0,
            ret: 0.0,
            done: out.done,
        });
    }
    // GAE; bootstrap the truncated tail with the critic's value
    let n = buffer.len();
    if n > 0 {
        let gap_closed = env.ubd.gap(env.lbd) <= cfg.eps;
        let tail_value = if gap_closed {
            0.0
        } else {
            critic_forward(critic, &buffer[n - 1].graph_next)?.0
        };
        let gamma = cfg.reward.gamma_discount;
        let lambda = cfg.reward.gae_lambda;
        let mut adv = 0.0;
        for t in (0..n).rev() {
            let v_next = if t + 1 < n { buffer[t + 1].value } else { tail_value };
            let nonterminal = if t + 1 < n { 1.0 } else { f64::from(!gap_closed as u8) };
            let delta = buffer[t].reward.total + gamma * v_next * nonterminal - buffer[t].value;
            adv = delta + gamma * lambda * nonterminal * adv;
            buffer[t].advantage = adv;
            buffer[t].ret = adv + buffer[t].value;
        }
    }
    Ok(buffer)
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct PpoDiagnostics {
    pub surrogate: f64,
    pub value_loss: f64,
    pub approx_kl: f64,
    /// Update rolled back because a loss went non-finite.
    pub rolled_back: bool,
}

/// Clipped-surrogate actor update and squared-error critic update over
/// shuffled minibatches. Non-finite losses roll the parameters back.
pub fn ppo_update(
    batch: &[Experience],
    actor: &mut NetParams,
    actor_adam: &mut AdamState,
    critic: &mut NetParams,
    critic_adam: &mut AdamState,
    cfg: &RlConfig,
    rng: &mut ChaCha8Rng,
) -> Result<PpoDiagnostics, crate::imitation::TrainError> {
    if batch.is_empty() {
        return Ok(PpoDiagnostics::default());
    }
    let snapshot_actor = actor.clone();
    let snapshot_critic = critic.clone();
    let snapshot_actor_adam = actor_adam.clone();
    let snapshot_critic_adam = critic_adam.clone();

    // advantage normalization stabilizes updates; skipped for degenerate
    // batches so an all-zero advantage stays exactly zero
    let mean_adv = batch.iter().map(|e| e.advantage).sum::<f64>() / batch.len() as f64;
    let var = batch
        .iter()
        .map(|e| (e.advantage - mean_adv).powi(2))
        .sum::<f64>()
        / batch.len() as f64;
    let std = var.sqrt();
    let normalized: Vec<f64> = if std > 1e-8 {
        batch.iter().map(|e| (e.advantage - mean_adv) / std).collect()
    } else {
        batch.iter().map(|e| e.advantage).collect()
    };

    let mut indices: Vec<usize> = (0..batch.len()).collect();
    let mut diag = PpoDiagnostics::default();
    let mut diag_count = 0usize;

    for _ in 0..cfg.update_epochs {
        indices.shuffle(rng);
        for chunk in indices.chunks(cfg.minibatch.max(1)) {
            let mut actor_grads = actor.zeros_like();
            let mut critic_grads = critic.zeros_like();
            let mut surrogate = 0.0;
            let mut value_loss = 0.0;
            let mut kl = 0.0;
            let count = chunk.len() as f64;
            for &i in chunk {
                let e = &batch[i];
                let adv = normalized[i];
                let (p, tape) = actor_forward(actor, &e.graph)?;
                let lp_new = log_prob(&p, &e.action);
                let ratio = (lp_new - e.log_prob_old).exp();
                let clipped = ratio.clamp(1.0 - cfg.reward.clip_eps, 1.0 + cfg.reward.clip_eps);
                surrogate += (ratio * adv).min(clipped * adv);
                kl += e.log_prob_old - lp_new;
                // gradient of -min(ratio*adv, clip(ratio)*adv) wrt logits:
                // zero where the clip is binding
                let active = if adv >= 0.0 { ratio <= 1.0 + cfg.reward.clip_eps } else { ratio >= 1.0 - cfg.reward.clip_eps };
                let mut dldz = DVector::zeros(p.len());
                if active {
                    let glp = log_prob_grad_logits(&p, &e.action);
                    dldz += glp * (-(ratio * adv) / count);
                }
                if cfg.entropy_coef > 0.0 {
                    // d(-entropy)/dz = z * p * (1 - p), with z recovered as
                    // the logit of the clamped probability
                    for k in 0..p.len() {
                        let pk = crate::nn::clamp_prob(p[k]);
                        let zk = (pk / (1.0 - pk)).ln();
                        dldz[k] += cfg.entropy_coef * zk * pk * (1.0 - pk) / count;
                    }
                }
                let g = backward(actor, tape, &dldz)?;
                actor_grads.axpy(&g, 1.0);

                let (v, ctape) = critic_forward(critic, &e.graph)?;
                value_loss += (v - e.ret).powi(2);
                let dv = DVector::from_column_slice(&[2.0 * (v - e.ret) / count]);
                let cg = backward(critic, ctape, &dv)?;
                critic_grads.axpy(&cg, 1.0);
            }
            if !surrogate.is_finite() || !value_loss.is_finite() {
                *actor = snapshot_actor;
                *critic = snapshot_critic;
                *actor_adam = snapshot_actor_adam;
                *critic_adam = snapshot_critic_adam;
                diag.rolled_back = true;
                return Ok(diag);
            }
            adam_step(actor, &actor_grads, actor_adam, &cfg.actor_adam);
            adam_step(critic, &critic_grads, critic_adam, &cfg.critic_adam);
            diag.surrogate += surrogate / count;
            diag.value_loss += value_loss / count;
            diag.approx_kl += kl / count;
            diag_count += 1;
        }
    }
    if diag_count > 0 {
        diag.surrogate /= diag_count as f64;
        diag.value_loss /= diag_count as f64;
        diag.approx_kl /= diag_count as f64;
    }
    Ok(diag)
}

/// Per-episode training log row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: usize,
    pub total_reward: f64,
    pub r_feas_sum: f64,
    pub r_gap_sum: f64,
    pub r_time_sum: f64,
    pub iterations: usize,
    /// Agent actions that passed the master feasibility check.
    pub feasible_actions: usize,
    pub surrogate: f64,
    pub value_loss: f64,
    pub approx_kl: f64,
}

/// Fine-tunes the actor (and critic) over `n_episodes` full GBD solves on
/// sampled instances, updating once per episode. Deterministic given the
/// seed when the solver runs in deterministic-time mode.
pub fn train_rl(
    sampler: &mut dyn FnMut(usize) -> ProblemInstance,
    mut actor: NetParams,
    mut critic: NetParams,
    n_episodes: usize,
    cfg: &RlConfig,
    nlp: &NlpOptions,
    seed: u64,
    mut on_episode: Option<&mut dyn FnMut(usize, &EpisodeLog, &NetParams, &NetParams)>,
) -> Result<(NetParams, NetParams, Vec<EpisodeLog>), crate::imitation::TrainError> {
    let mut actor_adam = AdamState::new(&actor);
    let mut critic_adam = AdamState::new(&critic);
    let mut logs = Vec::with_capacity(n_episodes);
    for episode in 0..n_episodes {
        let inst = sampler(episode);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(episode as u64);
        let batch = rollout_episode(&inst, &actor, &critic, cfg, nlp, &mut rng)?;
        let diag = ppo_update(
            &batch,
            &mut actor,
            &mut actor_adam,
            &mut critic,
            &mut critic_adam,
            cfg,
            &mut rng,
        )?;
        let log = EpisodeLog {
            episode,
            total_reward: batch.iter().map(|e| e.reward.total).sum(),
            r_feas_sum: batch.iter().map(|e| e.reward.r_feas).sum(),
            r_gap_sum: batch.iter().map(|e| e.reward.r_gap).sum(),
            r_time_sum: batch.iter().map(|e| e.reward.r_time).sum(),
            iterations: batch.len(),
            feasible_actions: batch.iter().filter(|e| e.reward.r_feas > 0.0).count(),
            surrogate: diag.surrogate,
            value_loss: diag.value_loss,
            approx_kl: diag.approx_kl,
        };
        if let Some(cb) = on_episode.as_mut() {
            cb(episode, &log, &actor, &critic);
        }
        logs.push(log);
    }
    Ok((actor, critic, logs))
}

/// Window-mean smoothing used by the learning-progress checks.
pub fn smoothed(values: &[f64], window: usize) -> Vec<f64> {
    values
        .iter()
        .enumerate()
        .map(|(i, _)| {
            let lo = i.saturating_sub(window - 1);
            let slice = &values[lo..=i];
            slice.iter().sum::<f64>() / slice.len() as f64
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Edge;
    use crate::nn::HeadKind;
    use crate::testkit::nominal_instance;

    fn det_nlp() -> NlpOptions {
        NlpOptions {
            deterministic_time: Some(crate::nlp::DETERMINISTIC_SECONDS_PER_NEWTON),
            ..NlpOptions::default()
        }
    }

    #[test]
    fn reward_branches() {
        let cfg = RewardConfig::default();
        let b = Bound::finite(10.0);
        let w = BoundsWindow { prev: (b, Bound::finite(0.0)), cur: (b, Bound::finite(0.0)), initial: (b, Bound::finite(0.0)) };
        // infeasible action, no time
        let r = compute_reward(false, &w, 0.0, &cfg);
        assert_eq!(r.total, -cfg.alpha1 * cfg.beta1);
        assert_eq!(r.r_gap, 0.0);
        // feasible, no gap change, time above the clip
        let r = compute_reward(true, &w, 5.0, &cfg);
        assert_eq!(r.total, cfg.alpha1 * cfg.beta2 - cfg.alpha3 * cfg.tau);
        // gap halves relative to initial
        let w = BoundsWindow {
            prev: (Bound::finite(10.0), Bound::finite(0.0)),
            cur: (Bound::finite(10.0), Bound::finite(5.0)),
            initial: (Bound::finite(10.0), Bound::finite(0.0)),
        };
        let r = compute_reward(true, &w, 0.0, &cfg);
        assert!((r.r_gap - 0.5).abs() < 1e-12);
        // zero initial gap guard
        let z = (Bound::finite(1.0), Bound::finite(1.0));
        let r = compute_reward(true, &BoundsWindow { prev: z, cur: z, initial: z }, 0.0, &cfg);
        assert_eq!(r.r_gap, 0.0);
        // infinite bounds guard
        let w = BoundsWindow {
            prev: (Bound::POS_INF, Bound::NEG_INF),
            cur: (Bound::finite(1.0), Bound::finite(0.0)),
            initial: (Bound::finite(1.0), Bound::finite(0.0)),
        };
        assert_eq!(compute_reward(true, &w, 0.0, &cfg).r_gap, 0.0);
    }

    #[test]
    fn reward_decomposition_identity() {
        let cfg = RewardConfig::default();
        let w = BoundsWindow {
            prev: (Bound::finite(9.0), Bound::finite(1.0)),
            cur: (Bound::finite(8.0), Bound::finite(3.0)),
            initial: (Bound::finite(10.0), Bound::finite(0.0)),
        };
        for feasible in [true, false] {
            for t in [0.0, 0.3, 7.0] {
                let r = compute_reward(feasible, &w, t, &cfg);
                assert_eq!(
                    r.total,
                    cfg.alpha1 * r.r_feas + cfg.alpha2 * r.r_gap - cfg.alpha3 * r.r_time
                );
            }
        }
    }

    #[test]
    fn env_follows_exact_actions_like_classical() {
        use crate::engine::{solve_classical, GbdLimits};
        let inst = nominal_instance();
        let y0 = default_y0(&inst).unwrap().unwrap();
        let (_, trace) =
            solve_classical(&inst, &y0, &GbdLimits::default(), &det_nlp()).unwrap();

        let mut env = GbdEnv::reset(
            &inst,
            &y0,
            1e-4,
            50,
            det_nlp(),
            RewardConfig::default(),
        )
        .unwrap();
        // feed the exact master optimum at each step: same bound trajectory
        let mut step = 1;
        while !env.done() {
            let a = match env.master.solve_exact().unwrap() {
                MasterSolve::Optimal { y, .. } => y,
                MasterSolve::Infeasible => break,
            };
            let out = env.step(&a).unwrap();
            assert!(out.action_feasible);
            if step < trace.rows.len() {
                assert_eq!(env.bounds().0, trace.rows[step].ubd, "step {step}");
            }
            step += 1;
        }
        assert!(env.ubd.gap(env.lbd) <= 1e-4);
        assert_eq!(step - 1, trace.rows.len() - 1);
    }

    #[test]
    fn env_penalizes_infeasible_action() {
        let inst = nominal_instance();
        let y0 = default_y0(&inst).unwrap().unwrap();
        let mut env =
            GbdEnv::reset(&inst, &y0, 1e-4, 50, det_nlp(), RewardConfig::default()).unwrap();
        // y1 = y2 = 0 violates the pure-binary rows
        let out = env.step(&[0, 0, 0, 0, 0]).unwrap();
        assert!(!out.action_feasible);
        assert_eq!(out.reward.r_feas, -RewardConfig::default().beta1);
        assert_eq!(out.reward.r_gap, 0.0);
    }

    #[test]
    fn env_bound_validity_invariant() {
        use rand::Rng;
        let inst = nominal_instance();
        let y0 = default_y0(&inst).unwrap().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..5 {
            let mut env =
                GbdEnv::reset(&inst, &y0, 1e-4, 30, det_nlp(), RewardConfig::default()).unwrap();
            while !env.done() {
                let a: Vec<u8> = (0..5).map(|_| rng.random_range(0..2) as u8).collect();
                env.step(&a).unwrap();
                let (ubd, lbd) = env.bounds();
                assert!(
                    lbd.gap(ubd) <= 1e-4,
                    "LBD {lbd} above UBD {ubd}"
                );
            }
        }
    }

    /// One-variable bandit dressed as a graph environment: action 1 yields
    /// reward 1, action 0 yields 0. PPO must saturate the head.
    #[test]
    fn ppo_learns_a_bandit() {
        let graph = BipartiteGraph {
            n_var: 1,
            n_con: 1,
            node_features: vec![1.0, 0.5],
            edges: vec![Edge { var: 0, con: 0, feat: 1.0 }],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let mut actor = NetParams::with_dims(HeadKind::Actor, &[(1, 4)], 3, &[(4, 4)], 1, &mut rng);
        let mut critic =
            NetParams::with_dims(HeadKind::Critic, &[(1, 4)], 3, &[(4, 4)], 1, &mut rng);
        let mut actor_adam = AdamState::new(&actor);
        let mut critic_adam = AdamState::new(&critic);
        let cfg = RlConfig {
            actor_adam: AdamConfig { lr: 3e-2, ..AdamConfig::default() },
            critic_adam: AdamConfig { lr: 3e-2, ..AdamConfig::default() },
            entropy_coef: 0.0,
            ..RlConfig::default()
        };
        let mut rewards = Vec::new();
        for ep in 0..200 {
            let mut eprng = ChaCha8Rng::seed_from_u64(1000 + ep);
            let (p, _) = actor_forward(&actor, &graph).unwrap();
            let a = sample_action(&p, &mut eprng);
            let r = f64::from(a[0]);
            rewards.push(r);
            let (v, _) = critic_forward(&critic, &graph).unwrap();
            let exp = Experience {
                graph: graph.clone(),
                action: a.clone(),
                log_prob_old: log_prob(&p, &a),
                reward: RewardParts { r_feas: r, r_gap: 0.0, r_time: 0.0, total: r },
                graph_next: graph.clone(),
                value: v,
                advantage: r - v,
                ret: r,
                done: true,
            };
            ppo_update(
                &[exp],
                &mut actor,
                &mut actor_adam,
                &mut critic,
                &mut critic_adam,
                &cfg,
                &mut eprng,
            )
            .unwrap();
        }
        let late: f64 = rewards[100..].iter().sum::<f64>() / 100.0;
        assert!(late >= 0.9, "late mean reward {late}");
    }

    #[test]
    fn ppo_zero_advantages_leave_actor() {
        let graph = crate::testkit::small_random_graph(5, 3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut actor = NetParams::with_dims(HeadKind::Actor, &[(1, 3)], 2, &[(3, 3)], 3, &mut rng);
        let mut critic =
            NetParams::with_dims(HeadKind::Critic, &[(1, 3)], 2, &[(3, 3)], 1, &mut rng);
        let before = actor.to_flat();
        let (p, _) = actor_forward(&actor, &graph).unwrap();
        let a = vec![1u8, 0, 1];
        let (v, _) = critic_forward(&critic, &graph).unwrap();
        let exp = Experience {
            graph: graph.clone(),
            action: a.clone(),
            log_prob_old: log_prob(&p, &a),
            reward: RewardParts { r_feas: 0.0, r_gap: 0.0, r_time: 0.0, total: 0.0 },
            graph_next: graph,
            value: v,
            advantage: 0.0,
            ret: v,
            done: true,
        };
        let mut actor_adam = AdamState::new(&actor);
        let mut critic_adam = AdamState::new(&critic);
        let cfg = RlConfig { entropy_coef: 0.0, ..RlConfig::default() };
        ppo_update(
            &[exp],
            &mut actor,
            &mut actor_adam,
            &mut critic,
            &mut critic_adam,
            &cfg,
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        assert_eq!(actor.to_flat(), before);
    }

    #[test]
    fn train_rl_zero_episodes_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let actor = NetParams::actor(5, &mut rng);
        let critic = NetParams::critic(&mut rng);
        let mut sampler = |_| nominal_instance();
        let (a, c, logs) = train_rl(
            &mut sampler,
            actor.clone(),
            critic.clone(),
            0,
            &RlConfig::default(),
            &det_nlp(),
            1,
            None,
        )
        .unwrap();
        assert_eq!(a.to_flat(), actor.to_flat());
        assert_eq!(c.to_flat(), critic.to_flat());
        assert!(logs.is_empty());
    }

    #[test]
    fn train_rl_deterministic_given_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let actor = NetParams::actor(5, &mut rng);
        let critic = NetParams::critic(&mut rng);
        let cfg = RlConfig::default();
        let run = || {
            let mut sampler = |ep: usize| {
                let mut srng = ChaCha8Rng::seed_from_u64(50);
                srng.set_stream(ep as u64);
                crate::problem::build_case_study1(crate::problem::sample_coefficients(&mut srng))
                    .unwrap()
            };
            let (a, _, logs) = train_rl(
                &mut sampler,
                actor.clone(),
                critic.clone(),
                4,
                &cfg,
                &det_nlp(),
                99,
                None,
            )
            .unwrap();
            (a.to_flat(), logs.iter().map(|l| l.total_reward).collect::<Vec<_>>())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn experience_buffer_length_matches_iterations() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let actor = NetParams::actor(5, &mut rng);
        let critic = NetParams::critic(&mut rng);
        let inst = nominal_instance();
        let cfg = RlConfig::default();
        let mut eprng = ChaCha8Rng::seed_from_u64(7);
        let batch = rollout_episode(&inst, &actor, &critic, &cfg, &det_nlp(), &mut eprng).unwrap();
        assert!(!batch.is_empty());
        assert!(batch.len() <= cfg.iteration_cap);
        assert!(batch.last().unwrap().done);
        for e in &batch {
            assert!(e.reward.total.is_finite());
        }
    }

    #[test]
    fn smoothing_window() {
        let v = vec![0.0, 1.0, 2.0, 3.0];
        assert_eq!(smoothed(&v, 2), vec![0.0, 0.5, 1.5, 2.5]);
    }
}
