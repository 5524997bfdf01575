//! Boltzmann policy distributions on tabular MDPs.
//!
//! A Boltzmann policy distribution puts density `∝ exp(β J(π))` on whole
//! policies (against a product-Dirichlet base measure) instead of on single
//! trajectories. Conditioning it on observed actions yields predictions that
//! adapt to consistent, systematically suboptimal behaviour.
//!
//! Module map:
//! - [`mdp`], [`gridworld`], [`coop`]: environments, rollouts, exact evaluation.
//! - [`maxent`]: soft value iteration and the Boltzmann-rational baseline.
//! - [`bpd`]: latent policy model, Dirichlet base, discriminator, training,
//!   mutual-information analysis.
//! - [`oracle`]: quadrature / importance-sampling ground truth on tiny MDPs.
//! - [`inference`]: MFVI, particle filtering and a recurrent sequence predictor.
//! - [`experiments`]: simulated humans, prediction benchmarks, collaboration.

pub mod bpd;
pub mod coop;
pub mod error;
pub mod experiments;
pub mod gridworld;
pub mod inference;
pub mod math;
pub mod maxent;
pub mod mdp;
pub mod optim;
pub mod oracle;
pub mod par;
pub mod predict;
pub mod rng;

pub use error::{BpdError, Result};
pub use mdp::{TabularMdp, TabularPolicy, Trajectory};
