//! Per-view autoencoders, the training objective and the training loop.

mod checkpoint;
mod config;
mod loss;
mod network;
mod trainer;

pub use checkpoint::Checkpoint;
pub use config::{Generator, TrainConfig};
pub use loss::{contrastive_loss_pair, literal_pair_objective, reconstruction_loss, total_contrastive, total_loss};
pub use network::{BoundNetwork, Layer, Variant, ViewNetwork};
pub use trainer::{build_batch, BatchGraph, BatchLosses, BatchPlan, EpochSummary, Trainer};
