//! The Boltzmann policy distribution: latent model, base measure,
//! discriminator-based KL estimation and training.

pub mod base;
pub mod disc;
pub mod mi;
pub mod model;
pub mod train;

pub use base::{BaseMeasureConfig, ProductDirichlet};
pub use mi::{mutual_information, plugin_mi, MiConfig, MiMatrix, MiSource};
pub use disc::{DiscriminatorConfig, DiscriminatorModel, KlEstimate, Representation};
pub use model::{sample_policy, LatentPolicyModel};
pub use train::{model_marginals, train_bpd, PgVariant, TrainConfig, TrainLogRow, TrainResult};
