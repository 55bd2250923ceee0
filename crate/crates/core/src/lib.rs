//! Bayes-adaptive reinforcement learning with exact Normal-Wishart task
//! inference over learned basis functions.
//!
//! Transition and reward models are linear in per-task parameters on top of
//! neural feature maps. Beliefs over those parameters are conjugate, so the
//! posterior update is exact and the marginal likelihood used to train the
//! features is closed-form. A PPO policy acts on states augmented with
//! belief features.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::too_many_arguments)]

pub mod agent;
pub mod autodiff;
pub mod basis;
pub mod container;
pub mod context;
pub mod envs;
pub mod harness;
pub mod linalg;
pub mod metrics;
pub mod mlp;
pub mod nw;
pub mod ppo;
pub mod special;
pub mod verify;

pub use context::{Context, ContextBatch};
pub use linalg::{Cholesky, JitterPolicy, LinalgError, Matrix};
pub use nw::{KnownNoiseBelief, ModelError, NWBelief};
