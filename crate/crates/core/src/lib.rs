//! Generalized Benders decomposition (GBD) for convex MINLPs whose master
//! problem is accelerated by a learned graph-network agent.
//!
//! The solver splits a convex MINLP with binary complicating variables into
//! a fixed-binary NLP subproblem and a pure-binary master problem coordinated
//! by optimality and feasibility cuts. The master can be solved exactly
//! (enumeration or branch-and-bound) or approximately by an agent that reads
//! a bipartite variable/constraint graph of the accumulated cuts and proposes
//! binary assignments. A confidence-based verification layer guarantees that
//! only feasible, bound-consistent assignments reach the subproblem.
//!
//! Crate layout:
//!
//! - [`problem`] — problem abstraction and the built-in instance family
//! - [`nlp`] — log-barrier NLP solver for the subproblems, with multipliers
//! - [`master`] — cut storage and exact master solving
//! - [`graph`] — bipartite graph encoding of a master state
//! - [`nn`] — from-scratch edge-conditioned GNN, gradients, optimizer
//! - [`imitation`] — expert dataset generation and behavioral cloning
//! - [`rl`] — GBD environment and clipped policy-gradient fine-tuning
//! - [`verifier`] — confidence-based assignment and fallback logic
//! - [`engine`] — classical and agent-augmented GBD drivers, traces
//! - [`report`] — trace aggregation into comparison tables
//!
//! The `parallel` feature (default) parallelizes batch workloads (binary
//! enumeration, dataset generation, multi-instance evaluation) with rayon;
//! without it the same code paths run sequentially.

pub mod bound;
pub mod engine;
pub mod graph;
pub mod imitation;
pub mod io;
pub mod master;
pub mod nlp;
pub mod nn;
pub mod par;
pub mod problem;
pub mod report;
pub mod rl;
pub mod testkit;
pub mod verifier;

pub use bound::Bound;
pub use engine::{GbdLimits, GbdResult, GbdTrace, solve_classical, solve_hybrid};
pub use master::{FeasibilityCut, MasterState, OptimalityCut};
pub use problem::{CaseStudyCoefficients, ProblemInstance};
pub use verifier::ConfidenceConfig;

/// Umbrella error for fallible crate operations.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Problem(#[from] problem::ProblemError),
    #[error(transparent)]
    Nlp(#[from] nlp::NlpError),
    #[error(transparent)]
    Master(#[from] master::MasterError),
    #[error(transparent)]
    Net(#[from] nn::NetError),
    #[error(transparent)]
    Train(#[from] imitation::TrainError),
    #[error(transparent)]
    Engine(#[from] engine::EngineError),
    #[error(transparent)]
    Schema(#[from] io::SchemaError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
