//! Cross-view ball association and the unified contrastive mask.

use crate::binary::BinaryMatrix;
use crate::diffcore::RowSets;
use crate::error::{Error, Result};
use crate::granular::BallSet;
use crate::scalar::Scalar;

/// Binary relation between the balls of view `views.0` (rows) and view
/// `views.1` (columns).
#[derive(Clone, Debug, PartialEq)]
pub struct AssociationMatrix {
    pub views: (usize, usize),
    pub tau: f64,
    pub p: BinaryMatrix,
}

impl AssociationMatrix {
    /// The same relation seen from the other view.
    pub fn transpose(&self) -> Self {
        Self {
            views: (self.views.1, self.views.0),
            tau: self.tau,
            p: self.p.transpose(),
        }
    }
}

pub fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau <= 1.0 {
        Ok(())
    } else {
        Err(Error::Parameter(format!("tau must lie in (0, 1], got {tau}")))
    }
}

/// Shared-member counts `t[i][j] = |members_m[i] ∩ members_n[j]|`.
pub fn shared_counts(members_m: &[Vec<usize>], members_n: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let mut owner = std::collections::HashMap::new();
    for (j, ms) in members_n.iter().enumerate() {
        for &id in ms {
            owner.insert(id, j);
        }
    }
    members_m
        .iter()
        .map(|ms| {
            let mut row = vec![0usize; members_n.len()];
            for id in ms {
                if let Some(&j) = owner.get(id) {
                    row[j] += 1;
                }
            }
            row
        })
        .collect()
}

/// The threshold rule: associated iff `t_both / min(t_i, t_j) ≥ tau`.
pub fn associated(t_both: usize, t_i: usize, t_j: usize, tau: f64) -> bool {
    let smaller = t_i.min(t_j);
    smaller > 0 && t_both as f64 / smaller as f64 >= tau
}

/// Association between two lists of member-id sets (each list a partition of
/// the same ids).
pub fn associate_members(members_m: &[Vec<usize>], members_n: &[Vec<usize>], tau: f64) -> BinaryMatrix {
    let t = shared_counts(members_m, members_n);
    BinaryMatrix::from_fn(members_m.len(), members_n.len(), |i, j| {
        associated(t[i][j], members_m[i].len(), members_n[j].len(), tau)
    })
}

pub fn cross_association<T: Scalar>(s_m: &BallSet<T>, s_n: &BallSet<T>, tau: f64) -> Result<AssociationMatrix> {
    check_tau(tau)?;
    if s_m.id_universe() != s_n.id_universe() {
        return Err(Error::Contract(format!(
            "views {} and {} were built from different sample ids",
            s_m.view, s_n.view
        )));
    }
    let members = |s: &BallSet<T>| s.balls.iter().map(|b| b.members.clone()).collect::<Vec<_>>();
    Ok(AssociationMatrix {
        views: (s_m.view, s_n.view),
        tau,
        p: associate_members(&members(s_m), &members(s_n), tau),
    })
}

/// The `2k × 2k` block mask `[[A^m, P], [Pᵀ, A^n]]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskMatrix {
    k: usize,
    m: BinaryMatrix,
}

impl MaskMatrix {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn matrix(&self) -> &BinaryMatrix {
        &self.m
    }

    pub fn size(&self) -> usize {
        2 * self.k
    }

    /// Ω_i: columns marked 1 in row `i`.
    pub fn positives(&self, i: usize) -> Vec<usize> {
        (0..self.size()).filter(|&j| self.m.get(i, j)).collect()
    }

    /// Φ_i: columns marked 0 in row `i`, excluding `i` itself.
    pub fn negatives(&self, i: usize) -> Vec<usize> {
        (0..self.size()).filter(|&j| j != i && !self.m.get(i, j)).collect()
    }

    pub fn row_sets(&self) -> RowSets {
        let n = self.size();
        RowSets {
            positives: (0..n).map(|i| self.positives(i)).collect(),
            negatives: (0..n).map(|i| self.negatives(i)).collect(),
        }
    }

    /// Reorders balls of both views by `perm` (`perm[new] = old`).
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let k = self.k;
        let full: Vec<usize> = perm.iter().copied().chain(perm.iter().map(|&i| i + k)).collect();
        Self {
            k,
            m: self.m.permuted(&full),
        }
    }
}

pub fn assemble_mask(a_m: &BinaryMatrix, a_n: &BinaryMatrix, p_mn: &BinaryMatrix) -> Result<MaskMatrix> {
    let k = a_m.rows();
    for (name, b) in [("A^m", a_m), ("A^n", a_n), ("P", p_mn)] {
        if b.shape() != (k, k) {
            return Err(Error::shape(
                "assemble_mask",
                format!("{name} is {}x{}, expected {k}x{k} (views must share the ball count)", b.rows(), b.cols()),
            ));
        }
    }
    for (name, a) in [("A^m", a_m), ("A^n", a_n)] {
        if !a.is_symmetric() || !a.has_zero_diagonal() {
            return Err(Error::Contract(format!("{name} must be symmetric with a zero diagonal")));
        }
    }
    let m = BinaryMatrix::from_fn(2 * k, 2 * k, |i, j| match (i < k, j < k) {
        (true, true) => a_m.get(i, j),
        (true, false) => p_mn.get(i, j - k),
        (false, true) => p_mn.get(j, i - k),
        (false, false) => a_n.get(i - k, j - k),
    });
    Ok(MaskMatrix { k, m })
}

/// Mask for a view pair straight from their ball sets.
pub fn pair_mask<T: Scalar>(s_m: &BallSet<T>, s_n: &BallSet<T>, tau: f64) -> Result<MaskMatrix> {
    if s_m.k() != s_n.k() {
        return Err(Error::shape(
            "pair mask",
            format!("view {} has {} balls, view {} has {}", s_m.view, s_m.k(), s_n.view, s_n.k()),
        ));
    }
    let assoc = cross_association(s_m, s_n, tau)?;
    assemble_mask(&s_m.overlap, &s_n.overlap, &assoc.p)
}
