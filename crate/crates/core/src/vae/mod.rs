//! VAE models, the six regularized objectives and the training loop.
//!
//! The representation of an input is the encoder mean.

mod checkpoint;
mod discriminator;
mod model;
mod objective;
mod representation;
mod train;

pub use checkpoint::{Checkpoint, History};
pub use discriminator::{BoundDiscriminator, Discriminator, DISCRIMINATOR_HIDDEN};
pub use model::{Architecture, BoundModel, VaeModel};
pub use objective::{objective_loss, BatchTerms, Method, ObjectiveConfig, ObjectiveOutput};
pub use representation::RepresentationMatrix;
pub use train::{train, train_with, StepStats, TrainOptions, DIVERGENCE_LIMIT};

#[cfg(test)]
mod tests;
