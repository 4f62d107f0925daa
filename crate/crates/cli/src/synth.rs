//! Synthetic multi-view data with planted clusters.
//!
//! Cluster centers live in a shared latent space. Every sample is its
//! cluster's center plus isotropic latent noise; each view maps the latent
//! points through its own random linear map and adds observation noise.
//! Optionally each view also carries a private nuisance grouping that is
//! independent of the clusters and of the other views.

use gbcc::seed::{derive_rng, tag};
use gbcc::{Error, Matrix, Result};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::MultiViewDataset;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub clusters: usize,
    pub per_cluster: usize,
    /// Feature count of each view; its length is the view count.
    pub dims: Vec<usize>,
    pub latent_dim: usize,
    /// Standard deviation of the cluster centers.
    pub center_spread: f64,
    /// Standard deviation of both latent and observation noise.
    pub noise: f64,
    /// Private groups per view; 0 disables the nuisance structure.
    pub nuisance_groups: usize,
    /// Standard deviation of the nuisance group offsets.
    pub nuisance_scale: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            clusters: 3,
            per_cluster: 150,
            dims: vec![20, 30],
            latent_dim: 8,
            center_spread: 1.0,
            noise: 0.1,
            nuisance_groups: 0,
            nuisance_scale: 0.0,
            seed: 0,
        }
    }
}

fn gaussian<R: Rng>(rng: &mut R, rows: usize, cols: usize, sd: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        sd * z
    })
}

pub fn synth(spec: &SynthSpec) -> Result<MultiViewDataset> {
    if spec.clusters < 2 || spec.dims.len() < 2 {
        return Err(Error::Parameter("synthetic data needs at least 2 clusters and 2 views".into()));
    }
    if spec.per_cluster == 0 || spec.latent_dim == 0 || spec.dims.contains(&0) {
        return Err(Error::Parameter("cluster size and all dimensions must be positive".into()));
    }
    let finite_nonneg = |x: f64| x.is_finite() && x >= 0.0;
    if !finite_nonneg(spec.noise) || !finite_nonneg(spec.nuisance_scale) || !(spec.center_spread > 0.0) {
        return Err(Error::Parameter("spreads must be finite, noise non-negative, center spread positive".into()));
    }
    let n = spec.clusters * spec.per_cluster;
    let mut rng = derive_rng(spec.seed, &[tag::SYNTH]);
    let centers = gaussian(&mut rng, spec.clusters, spec.latent_dim, spec.center_spread);
    let labels: Vec<usize> = (0..n).map(|i| i / spec.per_cluster).collect();
    let mut latent = gaussian(&mut rng, n, spec.latent_dim, spec.noise);
    for (i, &y) in labels.iter().enumerate() {
        for (z, c) in latent.row_mut(i).iter_mut().zip(centers.row(y)) {
            *z += c;
        }
    }

    let mut views = Vec::new();
    for (v, &d) in spec.dims.iter().enumerate() {
        let mut rng = derive_rng(spec.seed, &[tag::SYNTH, 1 + v as u64]);
        let map = gaussian(&mut rng, spec.latent_dim, d, 1.0 / (spec.latent_dim as f64).sqrt());
        let mut x = latent.matmul(&map)?;
        x.axpy(1.0, &gaussian(&mut rng, n, d, spec.noise));
        if spec.nuisance_groups > 0 {
            let offsets = gaussian(&mut rng, spec.nuisance_groups, d, spec.nuisance_scale);
            let mut groups: Vec<usize> = (0..n).map(|i| i % spec.nuisance_groups).collect();
            groups.shuffle(&mut rng);
            for (i, &gi) in groups.iter().enumerate() {
                for (a, o) in x.row_mut(i).iter_mut().zip(offsets.row(gi)) {
                    *a += o;
                }
            }
        }
        views.push(x);
    }
    MultiViewDataset::new(format!("synth-k{}-n{n}", spec.clusters), views, Some(labels))
}
