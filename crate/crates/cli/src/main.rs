use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use tmx_core::decimation::Criterion;
use tmx_core::experiment::{self, Direction, ExperimentConfig};
use tmx_core::FVariant;

const EXIT_USAGE: u8 = 1;
const EXIT_NUMERICAL: u8 = 2;

/// Transmission-matrix inference from intensity measurements.
#[derive(Parser, Debug)]
#[command(name = "tmx", version)]
struct Cli {
    /// Experiment configuration (JSON); flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed of the dataset generator.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct DataArgs {
    /// Side of the square input and output grids.
    #[arg(long)]
    w: Option<usize>,
    /// Fraction of active transmission entries.
    #[arg(long)]
    s: Option<f64>,
    /// Number of training samples.
    #[arg(long)]
    m: Option<usize>,
    /// Output noise standard deviation.
    #[arg(long)]
    sigma: Option<f64>,
    /// Keep noisy outputs outside [0, 1] instead of saturating them.
    #[arg(long)]
    no_clip: bool,
}

#[derive(Args, Debug, Default)]
struct InferArgs {
    /// Integration range: infinf, zeroinf, zeroone, symunit or symunit:<h>.
    #[arg(long)]
    variant: Option<FVariant>,
    /// direct, inverse or both.
    #[arg(long)]
    direction: Option<Direction>,
    /// Criteria whose selected models are saved, e.g. `--criteria BIC,TIC`.
    #[arg(long, value_delimiter = ',')]
    criteria: Option<Vec<Criterion>>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a random channel and a training dataset.
    Gen(DataArgs),
    /// Run pseudolikelihood decimation on a dataset.
    Infer {
        /// Directory written by `gen`.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[command(flatten)]
        infer: InferArgs,
    },
    /// Score the selected models of an inference run on fresh patterns.
    Validate {
        /// Directory written by `infer`.
        run: PathBuf,
        /// Seed of the validation patterns.
        #[arg(long)]
        val_seed: Option<u64>,
        /// A w x w CSV image in [0, 1] to reconstruct.
        #[arg(long)]
        image: Option<PathBuf>,
    },
    /// Generate, infer and validate over a grid of noise levels.
    Sweep {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        infer: InferArgs,
        /// Noise levels, e.g. `--grid 0,0.1,0.2`.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
    },
    /// Aggregate validation reports into curve tables.
    Report {
        /// A run directory or a sweep directory.
        dir: PathBuf,
    },
}

fn apply_data(cfg: &mut ExperimentConfig, a: &DataArgs) {
    let d = &mut cfg.dataset;
    if let Some(w) = a.w {
        d.w = w;
    }
    if let Some(s) = a.s {
        d.s = s;
    }
    if let Some(m) = a.m {
        d.m_samples = m;
    }
    if let Some(sigma) = a.sigma {
        d.sigma_noise = sigma;
    }
    if a.no_clip {
        d.clip = false;
    }
}

fn apply_infer(cfg: &mut ExperimentConfig, a: &InferArgs) {
    if let Some(v) = a.variant {
        cfg.variant = v;
    }
    if let Some(d) = a.direction {
        cfg.direction = d;
    }
    if let Some(c) = &a.criteria {
        cfg.criteria = c.clone();
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path).with_context(|| format!("reading config {}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.dataset.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let mut cfg = load_config(&cli)?;
    match &cli.command {
        Command::Gen(data) => {
            apply_data(&mut cfg, data);
            let out = experiment::cmd_gen(&cfg, &cfg.out)?;
            log::info!(
                "wrote {} samples of a {}x{} channel with {} active entries to {}",
                out.samples.len(),
                cfg.dataset.w,
                cfg.dataset.w,
                out.spec.nnz(),
                cfg.out.display()
            );
        }
        Command::Infer { dataset, infer } => {
            apply_infer(&mut cfg, infer);
            let dataset = dataset
                .clone()
                .or_else(|| cfg.dataset_dir.clone())
                .context("no dataset given: pass --dataset or set dataset_dir in the config")?;
            let out = experiment::cmd_infer(&cfg, &dataset, &cfg.out)?;
            for (summary, _) in &out.runs {
                for (c, sel) in &summary.selected {
                    println!(
                        "{} {c}: step {} K {} T-active {}",
                        summary.direction, sel.step, sel.k_active, sel.t_active
                    );
                }
            }
        }
        Command::Validate { run, val_seed, image } => {
            let report = experiment::cmd_validate(run, *val_seed, image.as_deref())?;
            for (c, r) in &report.criteria {
                let fmt = |s: Option<tmx_core::metrics::CurveStat>| s.map_or("n/a".to_string(), |s| format!("{:.4}", s.mean));
                println!(
                    "{c}: focusing {} / {}, imaging {} / {}",
                    fmt(r.validation.focusing_direct),
                    fmt(r.validation.focusing_inverted),
                    fmt(r.validation.imaging_inverted),
                    fmt(r.validation.imaging_direct)
                );
            }
        }
        Command::Sweep { data, infer, grid } => {
            apply_data(&mut cfg, data);
            apply_infer(&mut cfg, infer);
            if let Some(g) = grid {
                cfg.noise_grid = g.clone();
            }
            let points = experiment::cmd_sweep(&cfg, &cfg.out)?;
            log::info!("swept {} noise levels into {}", points.len(), cfg.out.display());
        }
        Command::Report { dir } => {
            let reports = experiment::cmd_report(dir)?;
            log::info!("aggregated {} reports into {}", reports.len(), Path::new(dir).join(experiment::CURVES_DIR).display());
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err
        .chain()
        .filter_map(|e| e.downcast_ref::<tmx_core::Error>())
        .any(tmx_core::Error::is_numerical);
    if numerical {
        EXIT_NUMERICAL
    } else {
        EXIT_USAGE
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
