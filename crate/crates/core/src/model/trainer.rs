use log::{debug, info, warn};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::association::{pair_mask, MaskMatrix};
use crate::diffcore::{Adam, Graph, Var};
use crate::error::{Error, Result};
use crate::granular::{ball_count, ball_stats_grouped, generate_balls_classic, BallSet};
use crate::kmeans::KMeans;
use crate::matrix::DenseMatrix;
use crate::scalar::Scalar;
use crate::seed::{derive_rng, tag};

use super::config::{Generator, TrainConfig};
use super::loss::{contrastive_loss_pair, reconstruction_loss, total_contrastive, total_loss};
use super::network::{BoundNetwork, ViewNetwork};

/// Discrete per-batch decisions: ball membership and the pair masks. Fixed
/// for the duration of one gradient evaluation.
#[derive(Clone, Debug)]
pub struct BatchPlan<T> {
    pub ids: Vec<usize>,
    pub ball_sets: Vec<BallSet<T>>,
    /// Masks for view pairs `(m, n)`, `m < n`, in lexicographic order.
    pub masks: Vec<((usize, usize), MaskMatrix)>,
}

impl<T: Scalar> BatchPlan<T> {
    /// Forms balls on each view's latent values and builds the pair masks.
    pub fn build<R: Rng>(
        latent: &[&DenseMatrix<T>],
        ids: &[usize],
        cfg: &TrainConfig,
        mut rng_for_view: impl FnMut(usize) -> R,
    ) -> Result<Self> {
        let mut ball_sets = Vec::with_capacity(latent.len());
        for (v, h) in latent.iter().enumerate() {
            if h.as_slice().iter().any(|x| !x.is_finite()) {
                return Err(Error::DegenerateBatch(format!("view {v} has non-finite latent values")));
            }
            let mut rng = rng_for_view(v);
            let set = match cfg.generator {
                Generator::Kmeans => {
                    let k = ball_count(h.rows(), cfg.p);
                    let labels = KMeans::new(k).fit(h, &mut rng)?.assignments;
                    BallSet::from_partition(v, h, &labels, k, ids)?
                }
                Generator::Classic => generate_balls_classic(h, cfg.eta, ids, v, &mut rng)?,
            };
            ball_sets.push(set);
        }
        let mut masks = Vec::new();
        for m in 0..ball_sets.len() {
            for n in (m + 1)..ball_sets.len() {
                masks.push(((m, n), pair_mask(&ball_sets[m], &ball_sets[n], cfg.tau)?));
            }
        }
        Ok(Self { ids: ids.to_vec(), ball_sets, masks })
    }
}

/// Loss nodes of one batch graph.
#[derive(Clone, Copy, Debug)]
pub struct BatchLosses {
    pub l_con: Var,
    pub l_rec: Var,
    pub total: Var,
}

/// A fully built batch graph.
pub struct BatchGraph<T> {
    pub graph: Graph<T>,
    pub nets: Vec<BoundNetwork>,
    /// Normalized latent features per view.
    pub latent: Vec<Var>,
    pub losses: BatchLosses,
    pub plan: Option<BatchPlan<T>>,
}

impl<T: Scalar> BatchGraph<T> {
    pub fn loss_values(&self) -> (T, T, T) {
        let g = &self.graph;
        (
            g.value(self.losses.l_con).item(),
            g.value(self.losses.l_rec).item(),
            g.value(self.losses.total).item(),
        )
    }

    /// Parameter handles across all views, in network parameter order.
    pub fn param_vars(&self) -> Vec<Var> {
        self.nets.iter().flat_map(BoundNetwork::vars).collect()
    }
}

/// Builds the loss graph for one batch. With `frozen`, ball membership and
/// masks are taken from it instead of being recomputed; `rng_for_view` is
/// then unused.
pub fn build_batch<T: Scalar, R: Rng>(
    nets: &[ViewNetwork<T>],
    xs: &[DenseMatrix<T>],
    ids: &[usize],
    cfg: &TrainConfig,
    frozen: Option<&BatchPlan<T>>,
    rng_for_view: impl FnMut(usize) -> R,
) -> Result<BatchGraph<T>> {
    if nets.len() != xs.len() {
        return Err(Error::shape("batch", format!("{} networks for {} views", nets.len(), xs.len())));
    }
    if xs.iter().any(|x| x.rows() != ids.len()) {
        return Err(Error::shape("batch", "views are not row-aligned with the batch ids"));
    }
    let mut g = Graph::new();
    let bound: Vec<BoundNetwork> = nets.iter().map(|n| n.bind(&mut g)).collect();
    let mut inputs = Vec::new();
    let mut raw = Vec::new();
    let mut latent = Vec::new();
    for (net, x) in bound.iter().zip(xs) {
        let xv = g.constant(x.clone());
        let r = net.encode_raw(&mut g, xv)?;
        latent.push(g.normalize(r, cfg.standardization)?);
        inputs.push(xv);
        raw.push(r);
    }

    let mut plan = None;
    let finite = latent.iter().all(|&h| g.value(h).as_slice().iter().all(|x| x.is_finite()));
    let l_con = if cfg.contrastive && frozen.is_none() && !finite {
        // no balls can be formed; surfaces as a non-finite loss to the caller
        g.constant(DenseMatrix::scalar(T::nan()))
    } else if cfg.contrastive {
        let p = match frozen {
            Some(p) => p.clone(),
            None => {
                let values: Vec<&DenseMatrix<T>> = latent.iter().map(|&h| g.value(h)).collect();
                BatchPlan::build(&values, ids, cfg, rng_for_view)?
            }
        };
        if p.ball_sets.len() != xs.len() {
            return Err(Error::Contract("plan does not cover every view".into()));
        }
        let mut centers = Vec::new();
        for (set, &h) in p.ball_sets.iter().zip(&latent) {
            centers.push(ball_stats_grouped(&mut g, h, &set.assignment, set.k())?.centers);
        }
        let temperature = T::of(cfg.temperature);
        let mut pair_losses = Vec::new();
        for ((m, n), mask) in &p.masks {
            pair_losses.push(contrastive_loss_pair(&mut g, centers[*m], centers[*n], mask, temperature)?);
        }
        plan = Some(p);
        total_contrastive(&mut g, &pair_losses, xs.len())?
    } else {
        g.constant(DenseMatrix::scalar(T::zero()))
    };

    let mut rec_pairs = Vec::new();
    for ((net, &x), &r) in bound.iter().zip(&inputs).zip(&raw) {
        if !net.decoder.is_empty() {
            rec_pairs.push((x, net.decode(&mut g, r)?));
        }
    }
    let l_rec = reconstruction_loss(&mut g, &rec_pairs)?;
    let total = total_loss(&mut g, l_con, l_rec, T::of(cfg.lambda))?;
    Ok(BatchGraph {
        graph: g,
        nets: bound,
        latent,
        losses: BatchLosses { l_con, l_rec, total },
        plan,
    })
}

/// Mean losses over the batches of one epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochSummary {
    /// 1-based.
    pub epoch: usize,
    pub l_con: f64,
    pub l_rec: f64,
    pub l_total: f64,
    pub batches: usize,
}

/// Networks, optimizer and epoch counter of one training run.
#[derive(Clone, Debug)]
pub struct Trainer<T> {
    pub config: TrainConfig,
    pub nets: Vec<ViewNetwork<T>>,
    pub adam: Adam<T>,
    /// Completed epochs.
    pub epoch: usize,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(config: TrainConfig, input_dims: &[usize]) -> Result<Self> {
        config.validate()?;
        if config.contrastive && input_dims.len() < 2 {
            return Err(Error::Config(format!(
                "the contrastive loss needs at least two views, got {}",
                input_dims.len()
            )));
        }
        let nets = input_dims
            .iter()
            .enumerate()
            .map(|(v, &d)| {
                let mut rng = derive_rng(config.seed, &[tag::INIT, v as u64]);
                ViewNetwork::new(d, &config.hidden_dims, config.latent_dim, config.variant, config.needs_decoder(), &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        let adam = Adam::new(config.adam())?;
        Ok(Self { config, nets, adam, epoch: 0 })
    }

    pub fn input_dims(&self) -> Vec<usize> {
        self.nets.iter().map(ViewNetwork::input_dim).collect()
    }

    fn check_views(&self, views: &[DenseMatrix<T>]) -> Result<usize> {
        if views.len() != self.nets.len() {
            return Err(Error::shape("train", format!("{} views for {} networks", views.len(), self.nets.len())));
        }
        let n = views[0].rows();
        for (v, (x, net)) in views.iter().zip(&self.nets).enumerate() {
            if x.rows() != n {
                return Err(Error::shape("train", format!("view {v} has {} rows, view 0 has {n}", x.rows())));
            }
            if x.cols() != net.input_dim() {
                return Err(Error::shape(
                    "train",
                    format!("view {v}: expected {} features, got {}", net.input_dim(), x.cols()),
                ));
            }
        }
        Ok(n)
    }

    /// Row indices of each batch for the next epoch. Trailing batches below
    /// the minimum size are dropped.
    pub fn batches(&self, n: usize) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut derive_rng(self.config.seed, &[tag::SHUFFLE, self.epoch as u64]));
        let min = self.config.min_batch();
        order
            .chunks(self.config.batch_size)
            .filter(|c| c.len() >= min)
            .map(<[usize]>::to_vec)
            .collect()
    }

    pub fn train_epoch(&mut self, views: &[DenseMatrix<T>]) -> Result<EpochSummary> {
        let n = self.check_views(views)?;
        let batches = self.batches(n);
        if batches.is_empty() {
            return Err(Error::Config(format!(
                "no usable batch: {n} samples, minimum batch {}",
                self.config.min_batch()
            )));
        }
        let epoch = self.epoch;
        let (mut con, mut rec, mut tot) = (0.0, 0.0, 0.0);
        for (b, rows) in batches.iter().enumerate() {
            let xs: Vec<DenseMatrix<T>> = views.iter().map(|x| x.select_rows(rows)).collect();
            let seed = self.config.seed;
            let mut bg = build_batch(&self.nets, &xs, rows, &self.config, None, |v| {
                derive_rng(seed, &[tag::BALLS, epoch as u64, b as u64, v as u64])
            })?;
            let (lc, lr, lt) = bg.loss_values();
            let (lc, lr, lt) = (lc.to_f64_lossy(), lr.to_f64_lossy(), lt.to_f64_lossy());
            if !lt.is_finite() {
                return Err(Error::NonFinite {
                    epoch: epoch + 1,
                    batch: b,
                    l_con: lc,
                    l_rec: lr,
                    l_total: lt,
                });
            }
            bg.graph.backward(bg.losses.total)?;
            let vars = bg.param_vars();
            let grads: Vec<&DenseMatrix<T>> = vars.iter().map(|&v| bg.graph.grad(v)).collect();
            let mut params: Vec<&mut DenseMatrix<T>> =
                self.nets.iter_mut().flat_map(ViewNetwork::parameters_mut).collect();
            self.adam.step(&mut params, &grads)?;
            debug!("epoch {} batch {b}: l_con={lc:.6} l_rec={lr:.6} l={lt:.6}", epoch + 1);
            con += lc;
            rec += lr;
            tot += lt;
        }
        self.epoch += 1;
        let nb = batches.len() as f64;
        let summary = EpochSummary {
            epoch: self.epoch,
            l_con: con / nb,
            l_rec: rec / nb,
            l_total: tot / nb,
            batches: batches.len(),
        };
        info!(
            "epoch {}: l_con={:.6} l_rec={:.6} l={:.6}",
            summary.epoch, summary.l_con, summary.l_rec, summary.l_total
        );
        Ok(summary)
    }

    /// Runs the remaining epochs up to `config.epochs`.
    pub fn fit(&mut self, views: &[DenseMatrix<T>], mut on_epoch: impl FnMut(&EpochSummary)) -> Result<Vec<EpochSummary>> {
        if self.epoch > self.config.epochs {
            warn!("already past the configured {} epochs", self.config.epochs);
        }
        let mut out = Vec::new();
        while self.epoch < self.config.epochs {
            let s = self.train_epoch(views)?;
            on_epoch(&s);
            out.push(s);
        }
        Ok(out)
    }

    /// Normalized latent features of every view over the full dataset.
    pub fn embed(&self, views: &[DenseMatrix<T>]) -> Result<Vec<DenseMatrix<T>>> {
        self.check_views(views)?;
        self.nets
            .iter()
            .zip(views)
            .map(|(net, x)| net.encode(x, self.config.standardization))
            .collect()
    }
}
