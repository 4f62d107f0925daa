//! Clustering phase and external clustering metrics.

pub mod assignment;

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kmeans::KMeans;
use crate::matrix::DenseMatrix;
use crate::scalar::Scalar;

pub const DEFAULT_RESTARTS: usize = 10;

/// Equal-weight average of the per-view latent features.
pub fn fuse<T: Scalar>(views: &[DenseMatrix<T>]) -> Result<DenseMatrix<T>> {
    let first = views.first().ok_or_else(|| Error::shape("fuse", "no views"))?;
    let mut z = DenseMatrix::zeros(first.rows(), first.cols());
    for (v, h) in views.iter().enumerate() {
        if h.shape() != first.shape() {
            return Err(Error::shape(
                "fuse",
                format!("view {v} is {:?}, view 0 is {:?}", h.shape(), first.shape()),
            ));
        }
        z.axpy(T::one(), h);
    }
    let inv = T::one() / T::of_usize(views.len());
    Ok(z.map(|x| x * inv))
}

/// k-means labels with the best SSE over `restarts` runs.
pub fn cluster<T: Scalar, R: Rng + ?Sized>(z: &DenseMatrix<T>, k: usize, rng: &mut R, restarts: usize) -> Result<Vec<usize>> {
    Ok(KMeans::new(k).restarts(restarts).fit(z, rng)?.assignments)
}

/// Counts over (predicted, true) label pairs after compacting both label
/// alphabets to `0..`.
#[derive(Clone, Debug, PartialEq)]
pub struct Contingency {
    pub counts: Vec<Vec<u64>>,
    pub n: u64,
}

impl Contingency {
    pub fn new(pred: &[usize], truth: &[usize]) -> Result<Self> {
        if pred.len() != truth.len() {
            return Err(Error::Contract(format!(
                "{} predicted labels for {} true labels",
                pred.len(),
                truth.len()
            )));
        }
        if pred.is_empty() {
            return Err(Error::Contract("cannot score an empty labeling".into()));
        }
        let compact = |labels: &[usize]| {
            let mut ids = BTreeMap::new();
            for &l in labels {
                let next = ids.len();
                ids.entry(l).or_insert(next);
            }
            ids
        };
        let (pi, ti) = (compact(pred), compact(truth));
        let mut counts = vec![vec![0u64; ti.len()]; pi.len()];
        for (p, t) in pred.iter().zip(truth) {
            counts[pi[p]][ti[t]] += 1;
        }
        Ok(Self {
            counts,
            n: pred.len() as u64,
        })
    }

    fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    fn col_sums(&self) -> Vec<u64> {
        let cols = self.counts[0].len();
        (0..cols).map(|j| self.counts.iter().map(|r| r[j]).sum()).collect()
    }
}

/// Fraction of samples matched under the best one-to-one mapping of
/// predicted clusters to classes.
pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let c = Contingency::new(pred, truth)?;
    let size = c.counts.len().max(c.counts[0].len());
    let weight: Vec<Vec<i64>> = (0..size)
        .map(|i| {
            (0..size)
                .map(|j| c.counts.get(i).and_then(|r| r.get(j)).map_or(0, |&x| x as i64))
                .collect()
        })
        .collect();
    let a = assignment::max_weight_assignment(&weight);
    let matched: i64 = a.iter().enumerate().map(|(i, &j)| weight[i][j]).sum();
    Ok(matched as f64 / c.n as f64)
}

fn entropy(sums: &[u64], n: f64) -> f64 {
    sums.iter()
        .filter(|&&s| s > 0)
        .map(|&s| {
            let p = s as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Mutual information normalized by the geometric mean of the entropies.
pub fn nmi(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let c = Contingency::new(pred, truth)?;
    let n = c.n as f64;
    let (rows, cols) = (c.row_sums(), c.col_sums());
    let (hp, ht) = (entropy(&rows, n), entropy(&cols, n));
    if hp == 0.0 || ht == 0.0 {
        // both constant means identical partitions
        return Ok(if hp == 0.0 && ht == 0.0 { 1.0 } else { 0.0 });
    }
    let mut mi = 0.0;
    for (i, row) in c.counts.iter().enumerate() {
        for (j, &nij) in row.iter().enumerate() {
            if nij > 0 {
                let nij = nij as f64;
                mi += nij / n * (n * nij / (rows[i] as f64 * cols[j] as f64)).ln();
            }
        }
    }
    Ok((mi / (hp * ht).sqrt()).clamp(0.0, 1.0))
}

/// Fraction of samples belonging to the majority class of their cluster.
pub fn purity(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let c = Contingency::new(pred, truth)?;
    let hits: u64 = c.counts.iter().map(|r| r.iter().copied().max().unwrap_or(0)).sum();
    Ok(hits as f64 / c.n as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub acc: f64,
    pub nmi: f64,
    pub pur: f64,
}

impl Metrics {
    pub fn compute(pred: &[usize], truth: &[usize]) -> Result<Self> {
        Ok(Self {
            acc: accuracy(pred, truth)?,
            nmi: nmi(pred, truth)?,
            pur: purity(pred, truth)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusteringResult<T> {
    pub labels: Vec<usize>,
    pub fused: DenseMatrix<T>,
    /// Present when ground truth was supplied.
    pub metrics: Option<Metrics>,
}

/// Number of distinct labels.
pub fn class_count(labels: &[usize]) -> usize {
    let mut l = labels.to_vec();
    l.sort_unstable();
    l.dedup();
    l.len()
}

/// Fuses the views, clusters the result into `k` groups and scores the
/// labels against `truth` when given.
pub fn cluster_views<T: Scalar, R: Rng + ?Sized>(
    views: &[DenseMatrix<T>],
    k: usize,
    truth: Option<&[usize]>,
    rng: &mut R,
) -> Result<ClusteringResult<T>> {
    let fused = fuse(views)?;
    let labels = cluster(&fused, k, rng, DEFAULT_RESTARTS)?;
    let metrics = truth.map(|t| Metrics::compute(&labels, t)).transpose()?;
    Ok(ClusteringResult { labels, fused, metrics })
}

/// Flat metrics record of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub acc: Option<f64>,
    pub nmi: Option<f64>,
    pub pur: Option<f64>,
    pub k: usize,
    pub p: usize,
    pub tau: f64,
    pub lambda: f64,
    pub d: usize,
    pub seed: u64,
    pub epochs: usize,
}

impl MetricsReport {
    /// One `key=value` line per field, in declaration order. Missing
    /// metrics are written as `NA`.
    pub fn to_kv(&self) -> String {
        let opt = |x: Option<f64>| x.map_or_else(|| "NA".to_string(), |v| format!("{v}"));
        format!(
            "acc={}\nnmi={}\npur={}\nk={}\np={}\ntau={}\nlambda={}\nd={}\nseed={}\nepochs={}\n",
            opt(self.acc),
            opt(self.nmi),
            opt(self.pur),
            self.k,
            self.p,
            self.tau,
            self.lambda,
            self.d,
            self.seed,
            self.epochs
        )
    }
}

#[cfg(test)]
mod tests;
