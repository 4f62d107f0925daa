//! Granular balls over latent representations.
//!
//! A ball summarizes a group of neighbouring points by the mean of its
//! members (center) and the mean member distance to that center (radius).
//! Centers and radii are built as graph nodes, so they carry gradient back to
//! the latent rows; which rows belong to which ball is a discrete decision
//! and is treated as a constant.

use rand::Rng;

use crate::binary::BinaryMatrix;
use crate::diffcore::{Graph, Var};
use crate::error::{Error, Result};
use crate::kmeans::KMeans;
use crate::matrix::DenseMatrix;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct GranularBall<T> {
    /// Global sample ids of the members, sorted and unique.
    pub members: Vec<usize>,
    /// Batch-local row indices of the members, aligned with `members`.
    pub rows: Vec<usize>,
    pub center: Vec<T>,
    pub radius: T,
}

impl<T> GranularBall<T> {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// All balls of one view for one batch.
#[derive(Clone, Debug)]
pub struct BallSet<T> {
    pub view: usize,
    pub balls: Vec<GranularBall<T>>,
    /// Ball index of each batch row.
    pub assignment: Vec<usize>,
    /// `k × d`, row `i` is the center of ball `i`.
    pub centers: DenseMatrix<T>,
    pub radii: Vec<T>,
    pub overlap: BinaryMatrix,
    /// Row sums of `overlap`.
    pub overlap_counts: Vec<usize>,
}

/// Graph handles for the differentiable ball statistics.
#[derive(Clone, Copy, Debug)]
pub struct BallNodes {
    /// `k × d` centers.
    pub centers: Var,
    /// `k × 1` radii.
    pub radii: Var,
}

impl<T: Scalar> BallSet<T> {
    pub fn k(&self) -> usize {
        self.balls.len()
    }

    /// Builds a ball set from a row partition of `h` and finalizes the
    /// overlap matrix. `ids[r]` is the global sample id of row `r`.
    pub fn from_partition(view: usize, h: &DenseMatrix<T>, assignment: &[usize], k: usize, ids: &[usize]) -> Result<Self> {
        let mut g = Graph::new();
        let hv = g.constant(h.clone());
        let nodes = ball_stats_grouped(&mut g, hv, assignment, k)?;
        Self::from_nodes(view, &g, nodes, assignment, ids)
    }

    /// Reads center and radius values out of `g` and finalizes the set.
    pub fn from_nodes(view: usize, g: &Graph<T>, nodes: BallNodes, assignment: &[usize], ids: &[usize]) -> Result<Self> {
        if ids.len() != assignment.len() {
            return Err(Error::shape(
                "ball set",
                format!("{} ids for {} rows", ids.len(), assignment.len()),
            ));
        }
        let centers = g.value(nodes.centers).clone();
        let radii: Vec<T> = g.value(nodes.radii).as_slice().to_vec();
        let k = centers.rows();
        let mut balls: Vec<GranularBall<T>> = (0..k)
            .map(|i| GranularBall {
                members: Vec::new(),
                rows: Vec::new(),
                center: centers.row(i).to_vec(),
                radius: radii[i],
            })
            .collect();
        for (r, &b) in assignment.iter().enumerate() {
            balls[b].rows.push(r);
        }
        for ball in &mut balls {
            ball.rows.sort_by_key(|&r| ids[r]);
            ball.members = ball.rows.iter().map(|&r| ids[r]).collect();
            if ball.members.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::Contract("duplicate sample id in batch".into()));
            }
        }
        let (overlap, overlap_counts) = overlap_matrix(&centers, &radii);
        Ok(Self {
            view,
            balls,
            assignment: assignment.to_vec(),
            centers,
            radii,
            overlap,
            overlap_counts,
        })
    }

    /// Sorted union of member ids over all balls.
    pub fn id_universe(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = self.balls.iter().flat_map(|b| b.members.iter().copied()).collect();
        ids.sort_unstable();
        ids
    }
}

/// Center and radius of one ball over all rows of `points`.
pub fn ball_stats<T: Scalar>(g: &mut Graph<T>, points: Var) -> Result<(Var, Var)> {
    let n = g.shape(points).0;
    if n == 0 {
        return Err(Error::Contract("ball_stats on an empty point set".into()));
    }
    let nodes = ball_stats_grouped(g, points, &vec![0; n], 1)?;
    Ok((nodes.centers, nodes.radii))
}

/// Centers and radii for a partition of the rows of `h` into `k` balls.
/// `center_i = mean of members`, `radius_i = mean ‖center_i − x‖₂`.
pub fn ball_stats_grouped<T: Scalar>(g: &mut Graph<T>, h: Var, assignment: &[usize], k: usize) -> Result<BallNodes> {
    let centers = g.segment_mean(h, assignment, k)?;
    let expanded = g.gather_rows(centers, assignment)?;
    let offsets = g.sub(h, expanded)?;
    let dist = g.row_norm(offsets);
    let radii = g.segment_mean(dist, assignment, k)?;
    Ok(BallNodes { centers, radii })
}

/// Ball count for `n` samples at granularity `p`: `max(⌊n/p⌋, 1)`.
pub fn ball_count(n: usize, p: usize) -> usize {
    (n / p.max(1)).max(1)
}

/// Partitions the rows of `h` into `max(⌊N/p⌋, 1)` balls with k-means and
/// attaches differentiable centers and radii.
pub fn generate_balls_kmeans<T: Scalar, R: Rng + ?Sized>(
    g: &mut Graph<T>,
    h: Var,
    p: usize,
    ids: &[usize],
    view: usize,
    rng: &mut R,
) -> Result<(BallSet<T>, BallNodes)> {
    if p == 0 {
        return Err(Error::Parameter("granularity p must be >= 1".into()));
    }
    let n = g.shape(h).0;
    if n == 0 {
        return Err(Error::Parameter("ball generation on an empty batch".into()));
    }
    let k = ball_count(n, p);
    let assignment = KMeans::new(k).fit(g.value(h), rng)?.assignments;
    let nodes = ball_stats_grouped(g, h, &assignment, k)?;
    let set = BallSet::from_nodes(view, g, nodes, &assignment, ids)?;
    Ok((set, nodes))
}

/// Distance between ball surfaces: `‖c_i − c_j‖ − (r_i + r_j)`.
pub fn surface_gap<T: Scalar>(ci: &[T], cj: &[T], ri: T, rj: T) -> T {
    crate::kmeans::sq_dist(ci, cj).sqrt() - (ri + rj)
}

/// Proximity test between two balls: `gap < min(r_i, r_j) / min(p_i, p_j)`,
/// with the tolerance taken as 0 when either ball has no overlaps.
pub fn overlap_rule<T: Scalar>(gap: T, ri: T, rj: T, pi: usize, pj: usize) -> bool {
    let pmin = pi.min(pj);
    let omega = if pmin == 0 {
        T::zero()
    } else {
        ri.min(rj) / T::of_usize(pmin)
    };
    gap < omega
}

/// Intra-view overlap matrix and its row sums.
///
/// Pass one counts strict overlaps (`gap < 0`) per ball; pass two applies
/// [`overlap_rule`] with those counts. The diagonal is always 0.
pub fn overlap_matrix<T: Scalar>(centers: &DenseMatrix<T>, radii: &[T]) -> (BinaryMatrix, Vec<usize>) {
    let k = centers.rows();
    let mut gaps = DenseMatrix::zeros(k, k);
    let mut strict = vec![0usize; k];
    for i in 0..k {
        for j in (i + 1)..k {
            let gap = surface_gap(centers.row(i), centers.row(j), radii[i], radii[j]);
            gaps[(i, j)] = gap;
            gaps[(j, i)] = gap;
            if gap < T::zero() {
                strict[i] += 1;
                strict[j] += 1;
            }
        }
    }
    let mut a = BinaryMatrix::zeros(k, k);
    for i in 0..k {
        for j in (i + 1)..k {
            if overlap_rule(gaps[(i, j)], radii[i], radii[j], strict[i], strict[j]) {
                a.set(i, j, true);
                a.set(j, i, true);
            }
        }
    }
    let counts = (0..k).map(|i| a.row_count(i)).collect();
    (a, counts)
}

/// Split-and-merge ball generation over fixed points.
///
/// Starting from one ball holding every row, a ball is split by 2-means when
/// it holds more than `eta` members and its radius exceeds the member-weighted
/// mean radius of the two children. Afterwards the closest pair satisfying
/// [`overlap_rule`] is merged repeatedly until no pair qualifies.
pub fn generate_balls_classic<T: Scalar, R: Rng + ?Sized>(
    h: &DenseMatrix<T>,
    eta: usize,
    ids: &[usize],
    view: usize,
    rng: &mut R,
) -> Result<BallSet<T>> {
    let n = h.rows();
    if n == 0 {
        return Err(Error::Parameter("ball generation on an empty batch".into()));
    }
    if eta == 0 {
        return Err(Error::Parameter("capacity threshold eta must be >= 1".into()));
    }

    let mut pending: Vec<Vec<usize>> = vec![(0..n).collect()];
    let mut done: Vec<Vec<usize>> = Vec::new();
    while let Some(rows) = pending.pop() {
        if rows.len() <= eta || rows.len() < 2 {
            done.push(rows);
            continue;
        }
        let pts = h.select_rows(&rows);
        let (_, parent_r) = plain_stats(&pts);
        let labels = KMeans::new(2).fit(&pts, rng)?.assignments;
        let (left, right): (Vec<(usize, usize)>, Vec<(usize, usize)>) =
            rows.iter().copied().enumerate().partition(|&(i, _)| labels[i] == 0);
        let left: Vec<usize> = left.into_iter().map(|(_, r)| r).collect();
        let right: Vec<usize> = right.into_iter().map(|(_, r)| r).collect();
        if left.is_empty() || right.is_empty() {
            done.push(rows);
            continue;
        }
        let (_, rl) = plain_stats(&h.select_rows(&left));
        let (_, rr) = plain_stats(&h.select_rows(&right));
        let weighted = (rl * T::of_usize(left.len()) + rr * T::of_usize(right.len())) / T::of_usize(rows.len());
        if parent_r > weighted {
            // right first so that left is processed next (stack order)
            pending.push(right);
            pending.push(left);
        } else {
            done.push(rows);
        }
    }

    let done = merge_overlapping(h, done);

    let mut assignment = vec![0usize; n];
    for (b, rows) in done.iter().enumerate() {
        for &r in rows {
            assignment[r] = b;
        }
    }
    BallSet::from_partition(view, h, &assignment, done.len(), ids)
}

/// Repeatedly fuses the closest pair of groups (rows of `h`) that satisfy
/// [`overlap_rule`], recomputing statistics after each fusion.
pub(crate) fn merge_overlapping<T: Scalar>(h: &DenseMatrix<T>, mut done: Vec<Vec<usize>>) -> Vec<Vec<usize>> {
    loop {
        let stats: Vec<(Vec<T>, T)> = done.iter().map(|rows| plain_stats(&h.select_rows(rows))).collect();
        let centers = DenseMatrix::from_fn(stats.len(), h.cols(), |i, j| stats[i].0[j]);
        let radii: Vec<T> = stats.iter().map(|s| s.1).collect();
        let (a, _) = overlap_matrix(&centers, &radii);
        let mut best: Option<(usize, usize, T)> = None;
        for i in 0..done.len() {
            for j in (i + 1)..done.len() {
                if a.get(i, j) {
                    let gap = surface_gap(centers.row(i), centers.row(j), radii[i], radii[j]);
                    if best.is_none_or(|(_, _, b)| gap < b) {
                        best = Some((i, j, gap));
                    }
                }
            }
        }
        let Some((i, j, _)) = best else { break };
        let absorbed = done.remove(j);
        done[i].extend(absorbed);
        done[i].sort_unstable();
    }
    done
}

fn plain_stats<T: Scalar>(pts: &DenseMatrix<T>) -> (Vec<T>, T) {
    let n = T::of_usize(pts.rows());
    let mut center = vec![T::zero(); pts.cols()];
    for r in pts.iter_rows() {
        for (c, &v) in center.iter_mut().zip(r) {
            *c += v;
        }
    }
    center.iter_mut().for_each(|c| *c /= n);
    let radius = pts
        .iter_rows()
        .map(|r| crate::kmeans::sq_dist(r, &center).sqrt())
        .sum::<T>()
        / n;
    (center, radius)
}
