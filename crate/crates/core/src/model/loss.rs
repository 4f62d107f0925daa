use crate::association::MaskMatrix;
use crate::diffcore::{Graph, Var};
use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::scalar::Scalar;

/// `Σ_v ‖X^v − X̂^v‖²`, summed over views and rows without averaging.
pub fn reconstruction_loss<T: Scalar>(g: &mut Graph<T>, pairs: &[(Var, Var)]) -> Result<Var> {
    let mut total = g.constant(DenseMatrix::scalar(T::zero()));
    for &(x, x_hat) in pairs {
        let l = g.sum_squared_error(x, x_hat)?;
        total = g.add(total, l)?;
    }
    Ok(total)
}

/// Ball-level contrastive loss for one view pair.
///
/// With `C = [C^m; C^n]` and `S = cos(C, C)/T`, each anchor row `i` adds
/// `Σ_{j∈Ω_i} −log(e^{S_ij} / (e^{S_ij} + Σ_{z∈Φ_i} e^{S_iz}))`; the total is
/// divided by `k`. Anchors without positives or without negatives add nothing.
pub fn contrastive_loss_pair<T: Scalar>(g: &mut Graph<T>, c_m: Var, c_n: Var, mask: &MaskMatrix, temperature: T) -> Result<Var> {
    let k = mask.k();
    if g.shape(c_m).0 != k || g.shape(c_n).0 != k {
        return Err(Error::shape(
            "contrastive_loss_pair",
            format!("centers {:?} and {:?} for a mask over {k} balls", g.shape(c_m), g.shape(c_n)),
        ));
    }
    let c = g.vstack(&[c_m, c_n])?;
    let sim = g.cosine_matrix(c, c)?;
    g.masked_nce(sim, mask.row_sets(), temperature, T::one() / T::of_usize(k))
}

/// Average of the pair losses over all `V(V−1)/2` view pairs.
pub fn total_contrastive<T: Scalar>(g: &mut Graph<T>, pair_losses: &[Var], views: usize) -> Result<Var> {
    if views < 2 {
        return Err(Error::Config(format!(
            "the contrastive loss needs at least two views, got {views}"
        )));
    }
    let pairs = views * (views - 1) / 2;
    if pair_losses.len() != pairs {
        return Err(Error::Contract(format!(
            "{} pair losses for {views} views (expected {pairs})",
            pair_losses.len()
        )));
    }
    let mut sum = pair_losses[0];
    for &l in &pair_losses[1..] {
        sum = g.add(sum, l)?;
    }
    Ok(g.scale(sum, T::one() / T::of_usize(pairs)))
}

/// `L = L_con + λ·L_rec`.
pub fn total_loss<T: Scalar>(g: &mut Graph<T>, l_con: Var, l_rec: Var, lambda: T) -> Result<Var> {
    if !(lambda >= T::zero()) {
        return Err(Error::Parameter(format!("lambda must be non-negative, got {lambda}")));
    }
    let weighted = g.scale(l_rec, lambda);
    g.add(l_con, weighted)
}

/// The pair objective exactly as the ratio form reads, without the negative
/// log: `(1/k) Σ_i Σ_{j∈Ω_i} e^{S_ij} / Σ_{z∈Φ_i} e^{S_iz}`. Inspection only;
/// training minimizes [`contrastive_loss_pair`]. Anchors with empty Φ_i are
/// skipped.
pub fn literal_pair_objective<T: Scalar>(c_m: &DenseMatrix<T>, c_n: &DenseMatrix<T>, mask: &MaskMatrix, temperature: T) -> Result<T> {
    let k = mask.k();
    if c_m.rows() != k || c_n.rows() != k || c_m.cols() != c_n.cols() {
        return Err(Error::shape("literal_pair_objective", "centers do not match the mask"));
    }
    let mut g = Graph::new();
    let a = g.constant(c_m.clone());
    let b = g.constant(c_n.clone());
    let c = g.vstack(&[a, b])?;
    let sim = g.cosine_matrix(c, c)?;
    let s = g.value(sim);
    let mut total = T::zero();
    for i in 0..2 * k {
        let neg = mask.negatives(i);
        if neg.is_empty() {
            continue;
        }
        let denom: T = neg.iter().map(|&z| (s[(i, z)] / temperature).exp()).sum();
        for j in mask.positives(i) {
            total += (s[(i, j)] / temperature).exp() / denom;
        }
    }
    Ok(total / T::of_usize(k))
}
