//! Training, evaluation, sweep and export drivers shared by the CLI and
//! tests.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use gbcc::eval::{class_count, cluster_views, MetricsReport};
use gbcc::model::{Checkpoint, EpochSummary, TrainConfig};
use gbcc::seed::{derive_rng, tag};
use gbcc::{ClusteringResult, Error, Matrix, Result, Trainer};
use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{write_matrix, MatrixFormat, MultiViewDataset};

pub const CHECKPOINT_FILE: &str = "checkpoint.gbck";
pub const LOSS_FILE: &str = "loss.csv";
pub const METRICS_JSON: &str = "metrics.json";
pub const METRICS_TXT: &str = "metrics.txt";
pub const LABELS_FILE: &str = "predicted_labels.txt";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const EMBEDDINGS_INDEX: &str = "embeddings.toml";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Cluster count for the final k-means; defaults to the number of
    /// distinct ground-truth labels.
    pub k: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepGrid {
    pub p: Vec<usize>,
    pub d: Vec<usize>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            p: vec![1, 2, 4, 8, 16],
            d: vec![8, 16, 32, 64, 128, 256],
        }
    }
}

/// Everything one invocation needs, usually read from a TOML file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub sweep: SweepGrid,
}

impl ExperimentConfig {
    /// Reads a config; relative paths inside are taken relative to the
    /// file's directory.
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.dataset, &mut cfg.out].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}

/// Post-training clustering of the full dataset.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub latent: Vec<Matrix>,
    pub result: ClusteringResult,
    pub report: MetricsReport,
}

pub fn train(ds: &MultiViewDataset, cfg: &TrainConfig, resume: Option<&Checkpoint>) -> Result<(Trainer, Vec<EpochSummary>)> {
    let mut trainer = match resume {
        Some(ckpt) => {
            let mut t = Trainer::from_checkpoint(ckpt)?;
            t.config.epochs = cfg.epochs;
            t
        }
        None => Trainer::new(cfg.clone(), &ds.dims())?,
    };
    if trainer.input_dims() != ds.dims() {
        return Err(Error::shape(
            "train",
            format!("model expects view dims {:?}, dataset has {:?}", trainer.input_dims(), ds.dims()),
        ));
    }
    let log = trainer.fit(&ds.views, |_| {})?;
    Ok((trainer, log))
}

pub fn evaluate(trainer: &Trainer, ds: &MultiViewDataset, k: Option<usize>) -> Result<Evaluation> {
    let k = match (k, &ds.labels) {
        (Some(k), _) => k,
        (None, Some(l)) => class_count(l),
        (None, None) => {
            return Err(Error::Config(
                "no cluster count given and the dataset has no labels".into(),
            ))
        }
    };
    let latent = trainer.embed(&ds.views)?;
    let mut rng = derive_rng(trainer.config.seed, &[tag::CLUSTER]);
    let result = cluster_views(&latent, k, ds.labels.as_deref(), &mut rng)?;
    let c = &trainer.config;
    let report = MetricsReport {
        acc: result.metrics.map(|m| m.acc),
        nmi: result.metrics.map(|m| m.nmi),
        pur: result.metrics.map(|m| m.pur),
        k,
        p: c.p,
        tau: c.tau,
        lambda: c.lambda,
        d: c.latent_dim,
        seed: c.seed,
        epochs: trainer.epoch,
    };
    info!("evaluation: {}", report.to_kv().replace('\n', " ").trim_end());
    Ok(Evaluation { latent, result, report })
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn loss_csv(log: &[EpochSummary]) -> String {
    let mut s = String::from("epoch,l_con,l_rec,l_total\n");
    for e in log {
        writeln!(s, "{},{:?},{:?},{:?}", e.epoch, e.l_con, e.l_rec, e.l_total).unwrap();
    }
    s
}

pub fn metrics_json(report: &MetricsReport) -> String {
    serde_json::to_string_pretty(report).expect("report serializes") + "\n"
}

pub fn write_report(dir: &Path, report: &MetricsReport) -> Result<()> {
    write_text(&dir.join(METRICS_JSON), &metrics_json(report))?;
    write_text(&dir.join(METRICS_TXT), &report.to_kv())
}

pub fn write_predictions(dir: &Path, labels: &[usize]) -> Result<()> {
    crate::dataset::write_labels(&dir.join(LABELS_FILE), labels)
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub trainer: Trainer,
    pub log: Vec<EpochSummary>,
    pub evaluation: Option<Evaluation>,
}

/// Trains, then writes the checkpoint and loss log into `out`. When the
/// dataset has labels the model is also evaluated and the metrics written.
pub fn run_train(ds: &MultiViewDataset, cfg: &TrainConfig, resume: Option<&Checkpoint>, out: &Path) -> Result<TrainOutcome> {
    create_dir(out)?;
    let (trainer, log) = train(ds, cfg, resume)?;
    trainer.to_checkpoint().save(&out.join(CHECKPOINT_FILE))?;
    write_text(&out.join(LOSS_FILE), &loss_csv(&log))?;
    let evaluation = if ds.labels.is_some() {
        let ev = evaluate(&trainer, ds, None)?;
        write_report(out, &ev.report)?;
        write_predictions(out, &ev.result.labels)?;
        Some(ev)
    } else {
        None
    };
    Ok(TrainOutcome { trainer, log, evaluation })
}

pub fn run_evaluate(checkpoint: &Path, ds: &MultiViewDataset, k: Option<usize>, out: &Path) -> Result<Evaluation> {
    let trainer = Trainer::from_checkpoint(&Checkpoint::load(checkpoint)?)?;
    let ev = evaluate(&trainer, ds, k)?;
    create_dir(out)?;
    write_report(out, &ev.report)?;
    write_predictions(out, &ev.result.labels)?;
    Ok(ev)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub p: usize,
    pub d: usize,
    pub acc: f64,
    pub nmi: f64,
    pub pur: f64,
}

/// Worker count from `GBCC_THREADS`, if set to a positive integer.
pub fn thread_cap() -> Option<usize> {
    std::env::var("GBCC_THREADS").ok()?.trim().parse().ok().filter(|&n| n > 0)
}

/// One train + evaluate per grid cell. Every cell uses the base seed, so a
/// single-cell grid reproduces a plain `train` run. Rows come back in grid
/// order whatever the worker count.
pub fn run_sweep(ds: &MultiViewDataset, base: &TrainConfig, grid: &SweepGrid, k: Option<usize>, threads: Option<usize>) -> Result<Vec<SweepRow>> {
    if grid.p.is_empty() || grid.d.is_empty() {
        return Err(Error::Config("sweep grids must be non-empty".into()));
    }
    if ds.labels.is_none() {
        return Err(Error::Config("a sweep needs ground-truth labels".into()));
    }
    let cells: Vec<(usize, usize)> = grid.p.iter().flat_map(|&p| grid.d.iter().map(move |&d| (p, d))).collect();
    let run_cell = |&(p, d): &(usize, usize)| -> Result<SweepRow> {
        let cfg = TrainConfig {
            p,
            latent_dim: d,
            ..base.clone()
        };
        let (trainer, _) = train(ds, &cfg, None)?;
        let ev = evaluate(&trainer, ds, k)?;
        let m = ev.result.metrics.expect("labels present");
        info!("sweep cell p={p} d={d}: acc={} nmi={} pur={}", m.acc, m.nmi, m.pur);
        Ok(SweepRow {
            p,
            d,
            acc: m.acc,
            nmi: m.nmi,
            pur: m.pur,
        })
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| cells.par_iter().map(run_cell).collect())
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("p,d,acc,nmi,pur\n");
    for r in rows {
        writeln!(s, "{},{},{:?},{:?},{:?}", r.p, r.d, r.acc, r.nmi, r.pur).unwrap();
    }
    s
}

pub fn write_sweep(dir: &Path, rows: &[SweepRow]) -> Result<PathBuf> {
    create_dir(dir)?;
    let path = dir.join(SWEEP_FILE);
    write_text(&path, &sweep_csv(rows))?;
    Ok(path)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingEntry {
    pub tag: String,
    pub path: PathBuf,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingIndex {
    #[serde(rename = "matrix")]
    pub matrices: Vec<EmbeddingEntry>,
}

/// Writes each view's latent features and their fused average, plus an
/// index naming each file's view tag and shape.
pub fn export_embeddings(trainer: &Trainer, ds: &MultiViewDataset, out: &Path, format: MatrixFormat) -> Result<EmbeddingIndex> {
    let latent = trainer.embed(&ds.views)?;
    let fused = gbcc::eval::fuse(&latent)?;
    create_dir(out)?;
    let mut matrices = Vec::new();
    let tagged = latent
        .iter()
        .enumerate()
        .map(|(v, m)| (format!("view{v}"), m))
        .chain(std::iter::once(("fused".to_string(), &fused)));
    for (tag, m) in tagged {
        let path = PathBuf::from(format!("{tag}.{}", format.extension()));
        write_matrix(&out.join(&path), m)?;
        matrices.push(EmbeddingEntry {
            tag,
            path,
            rows: m.rows(),
            cols: m.cols(),
        });
    }
    let index = EmbeddingIndex { matrices };
    let text = toml::to_string(&index).map_err(|e| Error::Config(e.to_string()))?;
    write_text(&out.join(EMBEDDINGS_INDEX), &text)?;
    Ok(index)
}
