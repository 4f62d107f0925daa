//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! Nodes are appended in evaluation order, so the tape is already a
//! topological order and backward is a single reverse sweep.

use log::debug;

use crate::error::{Error, Result};
use crate::matrix::{gemm_nt_acc, gemm_tn_acc, DenseMatrix};
use crate::scalar::Scalar;

/// Stabilizer added to the per-column standard deviation.
pub const STANDARDIZE_EPS: f64 = 1e-8;
/// Stabilizer added to the product of norms in cosine similarity.
pub const COSINE_EPS: f64 = 1e-12;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Post-encoder normalization applied to latent features.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Standardization {
    /// Per-column z-score over the batch, population std.
    #[default]
    ZScore,
    /// Each row scaled to unit L2 norm.
    L2Row,
}

/// Positive and negative column sets for each row of a similarity matrix.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RowSets {
    pub positives: Vec<Vec<usize>>,
    pub negatives: Vec<Vec<usize>>,
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    AddRowBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Square(Var),
    Sum(Var),
    Standardize {
        input: Var,
        centered: DenseMatrix<T>,
        std: Vec<T>,
    },
    L2Rows {
        input: Var,
        norms: Vec<T>,
    },
    Cosine {
        u: Var,
        v: Var,
        unorm: Vec<T>,
        vnorm: Vec<T>,
    },
    SegmentMean {
        input: Var,
        assignment: Vec<usize>,
        counts: Vec<usize>,
    },
    GatherRows {
        input: Var,
        index: Vec<usize>,
    },
    RowNorm(Var),
    VStack(Vec<Var>),
    MaskedNce {
        input: Var,
        sets: RowSets,
        inv_temp: T,
        norm: T,
    },
}

struct Node<T> {
    value: DenseMatrix<T>,
    grad: DenseMatrix<T>,
    requires_grad: bool,
    op: Op<T>,
}

/// A single-use computation graph. Build the forward pass through the op
/// methods, call [`Graph::backward`] on a scalar, then read gradients.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: DenseMatrix<T>, requires_grad: bool, op: Op<T>) -> Var {
        let (r, c) = value.shape();
        self.nodes.push(Node {
            value,
            grad: DenseMatrix::zeros(r, c),
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: DenseMatrix<T>) -> Var {
        self.push(value, true, Op::Leaf)
    }

    /// Leaf that never receives gradient.
    pub fn constant(&mut self, value: DenseMatrix<T>) -> Var {
        self.push(value, false, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &DenseMatrix<T> {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> &DenseMatrix<T> {
        &self.nodes[v.0].grad
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad.fill(T::zero());
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, rg, Op::MatMul(a, b)))
    }

    /// `x + 1·bias`, where `bias` is a single row broadcast over rows of `x`.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xr, xc) = self.shape(x);
        if self.shape(bias) != (1, xc) {
            return Err(Error::shape(
                "add_row_bias",
                format!("bias {:?} for {xr}x{xc} input", self.shape(bias)),
            ));
        }
        let b = self.value(bias).as_slice().to_vec();
        let mut value = self.value(x).clone();
        for i in 0..xr {
            for (o, &bv) in value.row_mut(i).iter_mut().zip(&b) {
                *o += bv;
            }
        }
        let rg = self.needs(&[x, bias]);
        Ok(self.push(value, rg, Op::AddRowBias(x, bias)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, rg, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, rg, Op::Sub(a, b)))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, rg, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Var {
        let value = self.value(a).map(|x| x * factor);
        let rg = self.needs(&[a]);
        self.push(value, rg, Op::Scale(a, factor))
    }

    /// Elementwise `max(0, x)`; the subgradient at 0 is taken as 0.
    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| if x > T::zero() { x } else { T::zero() });
        let rg = self.needs(&[a]);
        self.push(value, rg, Op::Relu(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x * x);
        let rg = self.needs(&[a]);
        self.push(value, rg, Op::Square(a))
    }

    /// Sum of all entries, as a 1×1 node.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = DenseMatrix::scalar(self.value(a).sum());
        let rg = self.needs(&[a]);
        self.push(value, rg, Op::Sum(a))
    }

    /// `Σ (a − b)²` over all entries.
    pub fn sum_squared_error(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let sq = self.square(d);
        Ok(self.sum(sq))
    }

    pub fn normalize(&mut self, h: Var, mode: Standardization) -> Result<Var> {
        match mode {
            Standardization::ZScore => self.standardize(h),
            Standardization::L2Row => Ok(self.l2_rows(h)),
        }
    }

    /// Per-column z-score: `(h − mean) / (std + ε)` with population std.
    pub fn standardize(&mut self, h: Var) -> Result<Var> {
        let x = self.value(h);
        let (n, d) = x.shape();
        if n < 2 {
            return Err(Error::DegenerateBatch(format!(
                "standardize needs at least 2 rows, got {n}"
            )));
        }
        let nf = T::of_usize(n);
        let eps = T::of(STANDARDIZE_EPS);
        let mut centered = x.clone();
        let mut std = vec![T::zero(); d];
        for j in 0..d {
            let mut mean = T::zero();
            for i in 0..n {
                mean += x[(i, j)];
            }
            mean /= nf;
            let mut var = T::zero();
            for i in 0..n {
                let c = x[(i, j)] - mean;
                centered[(i, j)] = c;
                var += c * c;
            }
            std[j] = (var / nf).sqrt();
        }
        let value = DenseMatrix::from_fn(n, d, |i, j| centered[(i, j)] / (std[j] + eps));
        let rg = self.needs(&[h]);
        Ok(self.push(
            value,
            rg,
            Op::Standardize {
                input: h,
                centered,
                std,
            },
        ))
    }

    /// Each row divided by `(‖row‖ + ε)`.
    pub fn l2_rows(&mut self, h: Var) -> Var {
        let x = self.value(h);
        let eps = T::of(STANDARDIZE_EPS);
        let norms: Vec<T> = x.iter_rows().map(l2).collect();
        let value = DenseMatrix::from_fn(x.rows(), x.cols(), |i, j| x[(i, j)] / (norms[i] + eps));
        let rg = self.needs(&[h]);
        self.push(value, rg, Op::L2Rows { input: h, norms })
    }

    /// Pairwise cosine similarity between rows of `u` and rows of `v`.
    pub fn cosine_matrix(&mut self, u: Var, v: Var) -> Result<Var> {
        let (a, b) = (self.value(u), self.value(v));
        if a.rows() == 0 || b.rows() == 0 || a.cols() != b.cols() {
            return Err(Error::shape(
                "cosine_matrix",
                format!("{:?} vs {:?}", a.shape(), b.shape()),
            ));
        }
        let unorm: Vec<T> = a.iter_rows().map(l2).collect();
        let vnorm: Vec<T> = b.iter_rows().map(l2).collect();
        if unorm.iter().chain(&vnorm).any(|n| *n == T::zero()) {
            debug!("cosine_matrix: zero-norm row, similarity falls back to 0");
        }
        let eps = T::of(COSINE_EPS);
        let mut value = DenseMatrix::zeros(a.rows(), b.rows());
        gemm_nt_acc(a, b, &mut value);
        for i in 0..a.rows() {
            for j in 0..b.rows() {
                value[(i, j)] /= unorm[i] * vnorm[j] + eps;
            }
        }
        let rg = self.needs(&[u, v]);
        Ok(self.push(value, rg, Op::Cosine { u, v, unorm, vnorm }))
    }

    /// Mean of the rows of `x` within each group; `assignment[r]` is the
    /// group of row `r`. Every group in `0..groups` must be non-empty.
    pub fn segment_mean(&mut self, x: Var, assignment: &[usize], groups: usize) -> Result<Var> {
        let xv = self.value(x);
        if assignment.len() != xv.rows() {
            return Err(Error::shape(
                "segment_mean",
                format!("{} assignments for {} rows", assignment.len(), xv.rows()),
            ));
        }
        let mut counts = vec![0usize; groups];
        for &g in assignment {
            if g >= groups {
                return Err(Error::Contract(format!("group id {g} >= {groups}")));
            }
            counts[g] += 1;
        }
        if let Some(empty) = counts.iter().position(|&c| c == 0) {
            return Err(Error::Contract(format!("group {empty} has no members")));
        }
        let d = xv.cols();
        let mut value = DenseMatrix::zeros(groups, d);
        for (r, &g) in assignment.iter().enumerate() {
            for (o, &v) in value.row_mut(g).iter_mut().zip(xv.row(r)) {
                *o += v;
            }
        }
        for (g, &c) in counts.iter().enumerate() {
            let cf = T::of_usize(c);
            value.row_mut(g).iter_mut().for_each(|v| *v /= cf);
        }
        let rg = self.needs(&[x]);
        Ok(self.push(
            value,
            rg,
            Op::SegmentMean {
                input: x,
                assignment: assignment.to_vec(),
                counts,
            },
        ))
    }

    pub fn gather_rows(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        if let Some(&bad) = index.iter().find(|&&i| i >= xv.rows()) {
            return Err(Error::shape(
                "gather_rows",
                format!("row {bad} of {}", xv.rows()),
            ));
        }
        let value = xv.select_rows(index);
        let rg = self.needs(&[x]);
        Ok(self.push(
            value,
            rg,
            Op::GatherRows {
                input: x,
                index: index.to_vec(),
            },
        ))
    }

    /// Euclidean norm of each row, as an `n×1` column.
    pub fn row_norm(&mut self, x: Var) -> Var {
        let norms: Vec<T> = self.value(x).iter_rows().map(l2).collect();
        let n = norms.len();
        let value = DenseMatrix::from_vec(n, 1, norms).expect("length matches");
        let rg = self.needs(&[x]);
        self.push(value, rg, Op::RowNorm(x))
    }

    pub fn vstack(&mut self, parts: &[Var]) -> Result<Var> {
        let mats: Vec<&DenseMatrix<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let value = DenseMatrix::vstack(&mats)?;
        let rg = self.needs(parts);
        Ok(self.push(value, rg, Op::VStack(parts.to_vec())))
    }

    /// Masked contrastive objective over a square similarity matrix `sim`.
    ///
    /// With `s = sim / temperature`, row `i` contributes
    /// `Σ_{j ∈ pos(i)} −log( e^{s_ij} / (e^{s_ij} + Σ_{z ∈ neg(i)} e^{s_iz}) )`
    /// and the total is multiplied by `norm`. Rows with no positives or no
    /// negatives contribute nothing.
    pub fn masked_nce(&mut self, sim: Var, sets: RowSets, temperature: T, norm: T) -> Result<Var> {
        let s = self.value(sim);
        if sets.positives.len() != s.rows() || sets.negatives.len() != s.rows() {
            return Err(Error::shape(
                "masked_nce",
                format!("{} row sets for {} rows", sets.positives.len(), s.rows()),
            ));
        }
        if temperature <= T::zero() {
            return Err(Error::Parameter(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        let inv_temp = T::one() / temperature;
        let mut total = T::zero();
        for i in 0..s.rows() {
            if let Some(row) = NceRow::new(s.row(i), &sets.positives[i], &sets.negatives[i], inv_temp)
            {
                total += row.loss();
            }
        }
        let value = DenseMatrix::scalar(total * norm);
        let rg = self.needs(&[sim]);
        Ok(self.push(
            value,
            rg,
            Op::MaskedNce {
                input: sim,
                sets,
                inv_temp,
                norm,
            },
        ))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    /// Accumulates `d loss / d node` into every node that requires gradient.
    /// Gradients add onto whatever is already stored; call
    /// [`Graph::zero_grads`] first for a fresh pass.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a 1x1 loss, got {:?}",
                self.shape(loss)
            )));
        }
        // Adjoints for this pass only, so repeated calls accumulate exactly
        // once per call into the persistent grads.
        let mut adj: Vec<Option<DenseMatrix<T>>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(DenseMatrix::scalar(T::one()));

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            self.propagate(idx, &g, &mut adj);
            self.nodes[idx].grad.axpy(T::one(), &g);
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &DenseMatrix<T>, adj: &mut [Option<DenseMatrix<T>>]) {
        let node = &self.nodes[idx];
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if wants(*a) {
                    let mut ga = DenseMatrix::zeros(val(*a).rows(), val(*a).cols());
                    gemm_nt_acc(g, val(*b), &mut ga);
                    accumulate(adj, *a, ga);
                }
                if wants(*b) {
                    let mut gb = DenseMatrix::zeros(val(*b).rows(), val(*b).cols());
                    gemm_tn_acc(val(*a), g, &mut gb);
                    accumulate(adj, *b, gb);
                }
            }
            Op::AddRowBias(x, bias) => {
                if wants(*x) {
                    accumulate(adj, *x, g.clone());
                }
                if wants(*bias) {
                    let mut gb = DenseMatrix::zeros(1, g.cols());
                    for r in g.iter_rows() {
                        for (o, &v) in gb.as_mut_slice().iter_mut().zip(r) {
                            *o += v;
                        }
                    }
                    accumulate(adj, *bias, gb);
                }
            }
            Op::Add(a, b) => {
                if wants(*a) {
                    accumulate(adj, *a, g.clone());
                }
                if wants(*b) {
                    accumulate(adj, *b, g.clone());
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    accumulate(adj, *a, g.clone());
                }
                if wants(*b) {
                    accumulate(adj, *b, g.map(|x| -x));
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    accumulate(adj, *a, g.zip_map(val(*b), |gi, y| gi * y));
                }
                if wants(*b) {
                    accumulate(adj, *b, g.zip_map(val(*a), |gi, x| gi * x));
                }
            }
            Op::Scale(a, f) => {
                let f = *f;
                accumulate(adj, *a, g.map(|x| x * f));
            }
            Op::Relu(a) => {
                let ga = g.zip_map(val(*a), |gi, x| if x > T::zero() { gi } else { T::zero() });
                accumulate(adj, *a, ga);
            }
            Op::Square(a) => {
                let two = T::of(2.0);
                accumulate(adj, *a, g.zip_map(val(*a), |gi, x| two * x * gi));
            }
            Op::Sum(a) => {
                let (r, c) = val(*a).shape();
                accumulate(adj, *a, DenseMatrix::filled(r, c, g.item()));
            }
            Op::Standardize {
                input,
                centered,
                std,
            } => {
                let (n, d) = centered.shape();
                let nf = T::of_usize(n);
                let eps = T::of(STANDARDIZE_EPS);
                let mut gx = DenseMatrix::zeros(n, d);
                for j in 0..d {
                    let s = std[j] + eps;
                    let mut gmean = T::zero();
                    let mut dstd = T::zero();
                    for i in 0..n {
                        gmean += g[(i, j)];
                        dstd -= g[(i, j)] * centered[(i, j)] / (s * s);
                    }
                    gmean /= nf;
                    for i in 0..n {
                        let mut v = (g[(i, j)] - gmean) / s;
                        if std[j] > T::zero() {
                            v += dstd * centered[(i, j)] / (nf * std[j]);
                        }
                        gx[(i, j)] = v;
                    }
                }
                accumulate(adj, *input, gx);
            }
            Op::L2Rows { input, norms } => {
                let x = val(*input);
                let eps = T::of(STANDARDIZE_EPS);
                let mut gx = DenseMatrix::zeros(x.rows(), x.cols());
                for i in 0..x.rows() {
                    let s = norms[i] + eps;
                    let xr = x.row(i);
                    let gr = g.row(i);
                    let dot: T = xr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for (j, o) in gx.row_mut(i).iter_mut().enumerate() {
                        *o = gr[j] / s;
                        if norms[i] > T::zero() {
                            *o -= dot * xr[j] / (s * s * norms[i]);
                        }
                    }
                }
                accumulate(adj, *input, gx);
            }
            Op::Cosine { u, v, unorm, vnorm } => {
                let (a, b) = (val(*u), val(*v));
                let eps = T::of(COSINE_EPS);
                let d = a.cols();
                let mut ga = DenseMatrix::zeros(a.rows(), d);
                let mut gb = DenseMatrix::zeros(b.rows(), d);
                for i in 0..a.rows() {
                    for j in 0..b.rows() {
                        let gij = g[(i, j)];
                        if gij == T::zero() {
                            continue;
                        }
                        let (ar, br) = (a.row(i), b.row(j));
                        let dot: T = ar.iter().zip(br).map(|(&x, &y)| x * y).sum();
                        let den = unorm[i] * vnorm[j] + eps;
                        let base = gij / den;
                        let corr = gij * dot / (den * den);
                        // d/du_i = v_j/den − dot·‖v_j‖·u_i/(‖u_i‖·den²)
                        let cu = if unorm[i] > T::zero() {
                            corr * vnorm[j] / unorm[i]
                        } else {
                            T::zero()
                        };
                        let cv = if vnorm[j] > T::zero() {
                            corr * unorm[i] / vnorm[j]
                        } else {
                            T::zero()
                        };
                        for k in 0..d {
                            ga[(i, k)] += base * br[k] - cu * ar[k];
                            gb[(j, k)] += base * ar[k] - cv * br[k];
                        }
                    }
                }
                if wants(*u) {
                    accumulate(adj, *u, ga);
                }
                if wants(*v) {
                    accumulate(adj, *v, gb);
                }
            }
            Op::SegmentMean {
                input,
                assignment,
                counts,
            } => {
                let d = g.cols();
                let mut gx = DenseMatrix::zeros(assignment.len(), d);
                for (r, &grp) in assignment.iter().enumerate() {
                    let cf = T::of_usize(counts[grp]);
                    for (o, &v) in gx.row_mut(r).iter_mut().zip(g.row(grp)) {
                        *o = v / cf;
                    }
                }
                accumulate(adj, *input, gx);
            }
            Op::GatherRows { input, index } => {
                let x = val(*input);
                let mut gx = DenseMatrix::zeros(x.rows(), x.cols());
                for (r, &src) in index.iter().enumerate() {
                    for (o, &v) in gx.row_mut(src).iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                accumulate(adj, *input, gx);
            }
            Op::RowNorm(input) => {
                let x = val(*input);
                let norms = &node.value;
                let mut gx = DenseMatrix::zeros(x.rows(), x.cols());
                for i in 0..x.rows() {
                    let n = norms[(i, 0)];
                    if n > T::zero() {
                        let f = g[(i, 0)] / n;
                        for (o, &v) in gx.row_mut(i).iter_mut().zip(x.row(i)) {
                            *o = f * v;
                        }
                    }
                }
                accumulate(adj, *input, gx);
            }
            Op::VStack(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (r, c) = val(p).shape();
                    if wants(p) {
                        let slice = g.as_slice()[offset * c..(offset + r) * c].to_vec();
                        accumulate(adj, p, DenseMatrix::from_vec(r, c, slice).expect("slice"));
                    }
                    offset += r;
                }
            }
            Op::MaskedNce {
                input,
                sets,
                inv_temp,
                norm,
            } => {
                let s = val(*input);
                let scale = g.item() * *norm * *inv_temp;
                let mut gs = DenseMatrix::zeros(s.rows(), s.cols());
                for i in 0..s.rows() {
                    if let Some(row) =
                        NceRow::new(s.row(i), &sets.positives[i], &sets.negatives[i], *inv_temp)
                    {
                        row.grad_into(gs.row_mut(i), scale);
                    }
                }
                accumulate(adj, *input, gs);
            }
        }
    }
}

fn accumulate<T: Scalar>(adj: &mut [Option<DenseMatrix<T>>], v: Var, g: DenseMatrix<T>) {
    match &mut adj[v.0] {
        Some(existing) => existing.axpy(T::one(), &g),
        slot @ None => *slot = Some(g),
    }
}

fn l2<T: Scalar>(row: &[T]) -> T {
    row.iter().map(|&x| x * x).sum::<T>().sqrt()
}

/// One anchor row of the masked contrastive objective, shifted by its max
/// logit for stability.
struct NceRow<'a, T> {
    logits: &'a [T],
    pos: &'a [usize],
    neg: &'a [usize],
    inv_temp: T,
    shift: T,
    neg_sum: T,
}

impl<'a, T: Scalar> NceRow<'a, T> {
    fn new(logits: &'a [T], pos: &'a [usize], neg: &'a [usize], inv_temp: T) -> Option<Self> {
        if pos.is_empty() || neg.is_empty() {
            return None;
        }
        let shift = pos
            .iter()
            .chain(neg)
            .map(|&j| logits[j] * inv_temp)
            .fold(T::neg_infinity(), T::max);
        let neg_sum = neg
            .iter()
            .map(|&z| (logits[z] * inv_temp - shift).exp())
            .sum();
        Some(Self {
            logits,
            pos,
            neg,
            inv_temp,
            shift,
            neg_sum,
        })
    }

    fn shifted(&self, j: usize) -> T {
        self.logits[j] * self.inv_temp - self.shift
    }

    fn loss(&self) -> T {
        self.pos
            .iter()
            .map(|&j| {
                let sj = self.shifted(j);
                (sj.exp() + self.neg_sum).ln() - sj
            })
            .sum()
    }

    /// Adds `scale · d(loss)/d(s)` into `out`, where `s` is the scaled logit.
    fn grad_into(&self, out: &mut [T], scale: T) {
        let mut inv_den_sum = T::zero();
        for &j in self.pos {
            let ej = self.shifted(j).exp();
            let den = ej + self.neg_sum;
            out[j] += scale * (ej / den - T::one());
            inv_den_sum += T::one() / den;
        }
        for &z in self.neg {
            out[z] += scale * self.shifted(z).exp() * inv_den_sum;
        }
    }
}
