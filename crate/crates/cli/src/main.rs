use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gbcc::model::Checkpoint;
use gbcc::{Error, Result, Trainer};
use gbcc_cli::dataset::{load_dataset, save_dataset, MatrixFormat};
use gbcc_cli::run::{self, ExperimentConfig};
use gbcc_cli::synth::{synth, SynthSpec};
use gbcc_cli::{exit_code, EXIT_OK};

#[derive(Parser)]
#[command(name = "gbcc", version, about = "Multi-view granular-ball contrastive clustering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-view dataset with planted clusters.
    Synth(SynthArgs),
    /// Train on a dataset; writes checkpoint, loss log and metrics.
    Train(TrainArgs),
    /// Cluster a dataset with a trained checkpoint and report metrics.
    Evaluate(EvalArgs),
    /// Train and evaluate over a grid of p and latent dimension values.
    Sweep(SweepArgs),
    /// Write per-view and fused latent features.
    ExportEmbeddings(ExportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Gbmv,
    Csv,
}

impl From<FormatArg> for MatrixFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Gbmv => MatrixFormat::Binary,
            FormatArg::Csv => MatrixFormat::Csv,
        }
    }
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 3)]
    clusters: usize,
    #[arg(long, default_value_t = 150)]
    per_cluster: usize,
    /// Feature count per view, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "20,30")]
    dims: Vec<usize>,
    #[arg(long, default_value_t = 8)]
    latent_dim: usize,
    #[arg(long, default_value_t = 1.0)]
    center_spread: f64,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    nuisance_groups: usize,
    #[arg(long, default_value_t = 0.0)]
    nuisance_scale: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "gbmv")]
    format: FormatArg,
}

/// Flags overriding fields of the `[train]` section.
#[derive(Args, Default)]
struct Overrides {
    /// Experiment config (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset manifest or directory holding `manifest.toml`.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Latent dimension.
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Hidden layer widths, comma separated; pass "" for none.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    lr: Option<f64>,
}

impl Overrides {
    fn resolve(&self) -> Result<(ExperimentConfig, PathBuf, PathBuf)> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::read(p)?,
            None => ExperimentConfig::default(),
        };
        let t = &mut cfg.train;
        macro_rules! set {
            ($($field:ident <- $flag:ident),*) => {$(
                if let Some(v) = self.$flag.clone() { t.$field = v; }
            )*};
        }
        set!(seed <- seed, p <- p, tau <- tau, lambda <- lambda, latent_dim <- dim,
             epochs <- epochs, batch_size <- batch_size, hidden_dims <- hidden, learning_rate <- lr);
        t.validate()?;
        let data = self
            .data
            .clone()
            .or_else(|| cfg.dataset.clone())
            .ok_or_else(|| Error::Config("no dataset: pass --data or set `dataset` in the config".into()))?;
        let out = self
            .out
            .clone()
            .or_else(|| cfg.out.clone())
            .unwrap_or_else(|| PathBuf::from("gbcc-out"));
        Ok((cfg, data, out))
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Overrides,
    /// Continue from a checkpoint; `--epochs` is the total to reach.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "gbcc-out")]
    out: PathBuf,
    /// Cluster count; defaults to the number of distinct labels.
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Overrides,
    #[arg(long, value_delimiter = ',')]
    p_grid: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    d_grid: Option<Vec<usize>>,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "gbcc-out")]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "gbmv")]
    format: FormatArg,
}

fn print_metrics(dir: &Path, report: &gbcc::eval::MetricsReport) {
    print!("{}", report.to_kv());
    println!("metrics written to {}", dir.join(run::METRICS_JSON).display());
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => {
            let spec = SynthSpec {
                clusters: a.clusters,
                per_cluster: a.per_cluster,
                dims: a.dims,
                latent_dim: a.latent_dim,
                center_spread: a.center_spread,
                noise: a.noise,
                nuisance_groups: a.nuisance_groups,
                nuisance_scale: a.nuisance_scale,
                seed: a.seed,
            };
            let ds = synth(&spec)?;
            let manifest = save_dataset(&ds, &a.out, a.format.into())?;
            println!("wrote {} samples in {} views to {}", ds.len(), ds.views.len(), manifest.display());
        }
        Command::Train(a) => {
            let (cfg, data, out) = a.common.resolve()?;
            let ds = load_dataset(&data)?;
            let resume = a.resume.as_deref().map(Checkpoint::load).transpose()?;
            let outcome = run::run_train(&ds, &cfg.train, resume.as_ref(), &out)?;
            if let Some(last) = outcome.log.last() {
                println!(
                    "epoch {}: l_con={} l_rec={} l_total={}",
                    last.epoch, last.l_con, last.l_rec, last.l_total
                );
            }
            println!("checkpoint written to {}", out.join(run::CHECKPOINT_FILE).display());
            if let Some(ev) = &outcome.evaluation {
                print_metrics(&out, &ev.report);
            }
        }
        Command::Evaluate(a) => {
            let ds = load_dataset(&a.data)?;
            let ev = run::run_evaluate(&a.checkpoint, &ds, a.k, &a.out)?;
            print_metrics(&a.out, &ev.report);
        }
        Command::Sweep(a) => {
            let (mut cfg, data, out) = a.common.resolve()?;
            if let Some(p) = a.p_grid {
                cfg.sweep.p = p;
            }
            if let Some(d) = a.d_grid {
                cfg.sweep.d = d;
            }
            let ds = load_dataset(&data)?;
            let rows = run::run_sweep(&ds, &cfg.train, &cfg.sweep, cfg.eval.k, run::thread_cap())?;
            print!("{}", run::sweep_csv(&rows));
            println!("sweep written to {}", run::write_sweep(&out, &rows)?.display());
        }
        Command::ExportEmbeddings(a) => {
            let ds = load_dataset(&a.data)?;
            let trainer = Trainer::from_checkpoint(&Checkpoint::load(&a.checkpoint)?)?;
            let index = run::export_embeddings(&trainer, &ds, &a.out, a.format.into())?;
            for m in &index.matrices {
                println!("{}: {}x{} -> {}", m.tag, m.rows, m.cols, a.out.join(&m.path).display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::from(EXIT_OK),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
