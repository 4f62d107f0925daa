//! Lloyd's k-means with k-means++ seeding.
//!
//! Shared by the granular-ball generator and the final clustering phase.

use rand::Rng;

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::scalar::Scalar;

pub const DEFAULT_MAX_ITER: usize = 100;

#[derive(Clone, Debug)]
pub struct KMeansFit<T> {
    /// Cluster id per input row, in `0..k`.
    pub assignments: Vec<usize>,
    pub centroids: DenseMatrix<T>,
    /// Sum of squared distances to assigned centroids.
    pub sse: T,
    pub iterations: usize,
}

impl<T: Scalar> KMeansFit<T> {
    pub fn k(&self) -> usize {
        self.centroids.rows()
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k()];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }
}

#[derive(Clone, Copy, Debug)]
pub struct KMeans {
    pub k: usize,
    pub max_iter: usize,
    pub restarts: usize,
}

impl KMeans {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            max_iter: DEFAULT_MAX_ITER,
            restarts: 1,
        }
    }

    pub fn restarts(mut self, restarts: usize) -> Self {
        self.restarts = restarts.max(1);
        self
    }

    pub fn max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    /// Best fit by SSE over `restarts` independent seedings. Ties keep the
    /// earliest restart, so the result is a pure function of the RNG state.
    pub fn fit<T: Scalar, R: Rng + ?Sized>(&self, x: &DenseMatrix<T>, rng: &mut R) -> Result<KMeansFit<T>> {
        let n = x.rows();
        if n == 0 {
            return Err(Error::Parameter("k-means on an empty point set".into()));
        }
        if self.k == 0 || self.k > n {
            return Err(Error::Parameter(format!(
                "k-means needs 1 <= k <= N, got k={} N={n}",
                self.k
            )));
        }
        if x.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter("k-means input contains non-finite values".into()));
        }
        let mut best: Option<KMeansFit<T>> = None;
        for _ in 0..self.restarts.max(1) {
            let fit = lloyd(x, self.k, self.max_iter, rng);
            if best.as_ref().is_none_or(|b| fit.sse < b.sse) {
                best = Some(fit);
            }
        }
        Ok(best.expect("at least one restart"))
    }
}

/// Single k-means++ seeded Lloyd run; returns cluster ids.
pub fn kmeans<T: Scalar, R: Rng + ?Sized>(x: &DenseMatrix<T>, k: usize, rng: &mut R) -> Result<Vec<usize>> {
    KMeans::new(k).fit(x, rng).map(|f| f.assignments)
}

pub(crate) fn sq_dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

/// k-means++: first centroid uniform, each next one drawn with probability
/// proportional to squared distance from the nearest chosen centroid.
pub fn plus_plus_seeds<T: Scalar, R: Rng + ?Sized>(x: &DenseMatrix<T>, k: usize, rng: &mut R) -> Vec<usize> {
    let n = x.rows();
    let mut chosen = Vec::with_capacity(k);
    chosen.push(rng.random_range(0..n));
    let mut nearest: Vec<f64> = (0..n)
        .map(|i| sq_dist(x.row(i), x.row(chosen[0])).to_f64_lossy())
        .collect();
    while chosen.len() < k {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 && total.is_finite() {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &w) in nearest.iter().enumerate() {
                if w > 0.0 {
                    pick = Some(i);
                    if target < w {
                        break;
                    }
                    target -= w;
                }
            }
            pick.expect("positive total has a positive weight")
        } else {
            // every point coincides with a centroid; take any unused index
            let unused: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            unused[rng.random_range(0..unused.len())]
        };
        chosen.push(next);
        for (i, d) in nearest.iter_mut().enumerate() {
            let nd = sq_dist(x.row(i), x.row(next)).to_f64_lossy();
            if nd < *d {
                *d = nd;
            }
        }
    }
    chosen
}

fn lloyd<T: Scalar, R: Rng + ?Sized>(x: &DenseMatrix<T>, k: usize, max_iter: usize, rng: &mut R) -> KMeansFit<T> {
    let n = x.rows();
    let seeds = plus_plus_seeds(x, k, rng);
    let mut centroids = x.select_rows(&seeds);
    let mut assignments = vec![usize::MAX; n];
    let mut iterations = 0;

    for _ in 0..max_iter {
        iterations += 1;
        let mut changed = assign(x, &centroids, &mut assignments);
        changed |= repair_empty(x, &centroids, &mut assignments, k);
        centroids = means(x, &assignments, k);
        if !changed {
            break;
        }
    }
    // Final assignment against the final centroids, then guarantee k
    // non-empty clusters.
    assign(x, &centroids, &mut assignments);
    if repair_empty(x, &centroids, &mut assignments, k) {
        centroids = means(x, &assignments, k);
    }
    let sse = (0..n)
        .map(|i| sq_dist(x.row(i), centroids.row(assignments[i])))
        .sum();
    KMeansFit {
        assignments,
        centroids,
        sse,
        iterations,
    }
}

/// Nearest-centroid assignment; ties go to the lower centroid index.
fn assign<T: Scalar>(x: &DenseMatrix<T>, centroids: &DenseMatrix<T>, assignments: &mut [usize]) -> bool {
    let mut changed = false;
    for (i, slot) in assignments.iter_mut().enumerate() {
        let row = x.row(i);
        let mut best = 0;
        let mut best_d = T::infinity();
        for c in 0..centroids.rows() {
            let d = sq_dist(row, centroids.row(c));
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        if *slot != best {
            *slot = best;
            changed = true;
        }
    }
    changed
}

/// Each empty cluster takes the point farthest from its current centroid,
/// drawn from clusters that can spare a member.
fn repair_empty<T: Scalar>(
    x: &DenseMatrix<T>,
    centroids: &DenseMatrix<T>,
    assignments: &mut [usize],
    k: usize,
) -> bool {
    let mut sizes = vec![0usize; k];
    for &a in assignments.iter() {
        sizes[a] += 1;
    }
    let mut changed = false;
    for c in 0..k {
        if sizes[c] > 0 {
            continue;
        }
        let mut far = None;
        let mut far_d = T::neg_infinity();
        for (i, &a) in assignments.iter().enumerate() {
            if sizes[a] < 2 {
                continue;
            }
            let d = sq_dist(x.row(i), centroids.row(a));
            if d > far_d {
                far_d = d;
                far = Some(i);
            }
        }
        let i = far.expect("k <= N leaves a cluster with a spare member");
        sizes[assignments[i]] -= 1;
        assignments[i] = c;
        sizes[c] = 1;
        changed = true;
    }
    changed
}

fn means<T: Scalar>(x: &DenseMatrix<T>, assignments: &[usize], k: usize) -> DenseMatrix<T> {
    let mut out = DenseMatrix::zeros(k, x.cols());
    let mut counts = vec![0usize; k];
    for (i, &a) in assignments.iter().enumerate() {
        counts[a] += 1;
        for (o, &v) in out.row_mut(a).iter_mut().zip(x.row(i)) {
            *o += v;
        }
    }
    for (c, &cnt) in counts.iter().enumerate() {
        if cnt > 0 {
            let cf = T::of_usize(cnt);
            out.row_mut(c).iter_mut().for_each(|v| *v /= cf);
        }
    }
    out
}

/// SSE of an arbitrary labelling, each cluster scored against its own mean.
pub fn partition_sse<T: Scalar>(x: &DenseMatrix<T>, labels: &[usize]) -> T {
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    let centroids = means(x, labels, k);
    labels
        .iter()
        .enumerate()
        .map(|(i, &a)| sq_dist(x.row(i), centroids.row(a)))
        .sum()
}
