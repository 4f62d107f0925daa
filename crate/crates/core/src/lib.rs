//! Multi-view clustering with granular-ball contrastive learning.
//!
//! Each view gets an autoencoder. Within every mini-batch the latent rows of
//! a view are grouped into granular balls; balls of different views are
//! associated by shared members, and a masked contrastive loss over ball
//! centers pulls associated or overlapping balls together. After training the
//! per-view latent features are averaged and clustered with k-means.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the scalar to `f64`.

pub mod association;
pub mod binary;
pub mod diffcore;
pub mod error;
pub mod eval;
pub mod granular;
pub mod kmeans;
pub mod matrix;
pub mod model;
pub mod scalar;
pub mod seed;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Matrix = matrix::DenseMatrix<f64>;
pub type Graph = diffcore::Graph<f64>;
pub type BallSet = granular::BallSet<f64>;
pub type ViewNetwork = model::ViewNetwork<f64>;
pub type Trainer = model::Trainer<f64>;
pub type ClusteringResult = eval::ClusteringResult<f64>;
