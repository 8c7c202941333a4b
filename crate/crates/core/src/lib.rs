//! Active inference on discrete hidden Markov models, cast as constrained
//! KL-divergence minimization.
//!
//! The pieces, bottom up:
//! - [`probkit`]: categorical and Dirichlet primitives with `0 ln 0 = 0`.
//! - [`hmm`]: the generative model, sampling and exact inference oracles.
//! - [`engine`]: mean-field belief trajectories and coordinate-descent sweeps.
//! - [`efe`]: expected free energy and its information bounds.
//! - [`planning`]: policy scoring, policy posteriors and hierarchy folding.
//! - [`learning`]: Dirichlet parameter learning by alternating minimization.
//! - [`envsim`]: T-maze and gridworld environments plus the agent loop.
//! - [`io`]: JSON file formats.

pub mod efe;
pub mod engine;
pub mod envsim;
pub mod hmm;
pub mod io;
pub mod learning;
pub mod planning;
pub mod probkit;
pub mod random;

pub use engine::{BeliefTrajectory, EngineError, LogModel, SweepMode, SweepOptions, SweepReport};
pub use learning::{DirichletHmm, LearningError};
pub use hmm::{Hmm, HmmError, RawHmm, StochasticMatrix, Trajectory, ValidationReport};
pub use probkit::{CategoricalDist, ConcentrationVec, LogWeights, ProbError};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
