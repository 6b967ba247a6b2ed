mod artifact;
mod config;
mod error;
mod stages;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use config::{ConfigFile, Resolver};
use error::CliError;
use stages::{EvalArgs, FitBaseArgs, GenerateArgs, Globals, PairArgs, TrainArgs};

/// Crystal generation by flow matching from an informed base distribution.
#[derive(Parser)]
#[command(name = "crystalflow", version)]
struct Cli {
    /// Run seed; every stage derives its own stream from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Network preset: compact, desk or full.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Worker threads (defaults to all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Configuration file (`key = value` with `[section]` headers).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set train.epochs=5`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Recompute outputs that are current and accept mismatched lineage.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse CSV/CIF/JSONL structures, Niggli-reduce and keep the flow domain.
    Ingest {
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic cubic-prototype family.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n: Option<usize>,
    },
    /// Fit a base distribution (quantized or uninformed) to a dataset.
    FitBase {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        args: FitBaseOpts,
    },
    /// Draw aligned (base, data) training pairs.
    BuildPairs {
        #[arg(long)]
        data: PathBuf,
        /// Fitted base file or `external:<samples.jsonl>`.
        #[arg(long)]
        base: String,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        args: PairOpts,
    },
    /// Train the velocity network on a pair file.
    Train {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        args: TrainOpts,
    },
    /// Integrate base samples through a trained network.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        base: String,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        args: GenerateOpts,
    },
    /// Validity, coverage, distribution distances and the toy stability proxy.
    Evaluate {
        #[arg(long)]
        generated: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        args: EvalOpts,
    },
    /// Relax structures under the toy soft-sphere potential (not DFT).
    Relax {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        max_steps: Option<usize>,
        /// Keep cell lengths fixed.
        #[arg(long)]
        fixed_lengths: bool,
    },
    /// Compare structures; prints one JSON line per pair.
    Match {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        ltol: Option<f64>,
        #[arg(long)]
        stol: Option<f64>,
        #[arg(long)]
        angle_tol: Option<f64>,
    },
    /// Run every stage, skipping those whose outputs are current.
    Pipeline {
        #[arg(long)]
        out_dir: PathBuf,
        /// Training structures; a synthetic family is used when absent.
        #[arg(long, requires = "test")]
        train: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
        #[command(flatten)]
        base: FitBaseOpts,
        #[command(flatten)]
        pairs: PairOpts,
        #[command(flatten)]
        training: TrainOpts,
        #[command(flatten)]
        generate: GenerateOpts,
        #[command(flatten)]
        eval: EvalOpts,
    },
}

#[derive(Args, Clone, Default)]
struct FitBaseOpts {
    /// quantized, uninformed or external:<path>.
    #[arg(long)]
    base_kind: Option<String>,
    #[arg(long)]
    smoothing: Option<f64>,
}

#[derive(Args, Clone, Default)]
struct PairOpts {
    #[arg(long)]
    n_pairs: Option<usize>,
    /// Gaussian noise on base samples, in flow coordinates.
    #[arg(long)]
    pair_noise: Option<f64>,
}

#[derive(Args, Clone, Default)]
struct TrainOpts {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    coord_weight: Option<f64>,
    #[arg(long)]
    lattice_weight: Option<f64>,
    #[arg(long)]
    val_fraction: Option<f64>,
}

#[derive(Args, Clone, Default)]
struct GenerateOpts {
    #[arg(long)]
    n_samples: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    anneal: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
}

#[derive(Args, Clone, Default)]
struct EvalOpts {
    #[arg(long)]
    stability_threshold: Option<f64>,
    #[arg(long)]
    ltol: Option<f64>,
    #[arg(long)]
    stol: Option<f64>,
    #[arg(long)]
    angle_tol: Option<f64>,
}

impl From<FitBaseOpts> for FitBaseArgs {
    fn from(o: FitBaseOpts) -> Self {
        FitBaseArgs { kind: o.base_kind, smoothing: o.smoothing }
    }
}

impl From<PairOpts> for PairArgs {
    fn from(o: PairOpts) -> Self {
        PairArgs { n: o.n_pairs, noise: o.pair_noise }
    }
}

impl From<TrainOpts> for TrainArgs {
    fn from(o: TrainOpts) -> Self {
        TrainArgs {
            epochs: o.epochs,
            lr: o.lr,
            batch_size: o.batch_size,
            weight_decay: o.weight_decay,
            patience: o.patience,
            coord_weight: o.coord_weight,
            lattice_weight: o.lattice_weight,
            val_fraction: o.val_fraction,
        }
    }
}

impl From<GenerateOpts> for GenerateArgs {
    fn from(o: GenerateOpts) -> Self {
        GenerateArgs { n: o.n_samples, steps: o.steps, anneal: o.anneal, noise: o.noise }
    }
}

impl From<EvalOpts> for EvalArgs {
    fn from(o: EvalOpts) -> Self {
        EvalArgs { stability_threshold: o.stability_threshold, ltol: o.ltol, stol: o.stol, angle_tol: o.angle_tol }
    }
}

fn stage<T>(name: &'static str, result: Result<T>) -> Result<T> {
    result.map_err(|source| CliError::Stage { stage: name, source }.into())
}

struct PipelineInputs {
    train: Option<PathBuf>,
    test: Option<PathBuf>,
    base: FitBaseArgs,
    pairs: PairArgs,
    training: TrainArgs,
    generate: GenerateArgs,
    eval: EvalArgs,
}

fn pipeline(dir: &Path, p: PipelineInputs, g: &Globals, file: &ConfigFile) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let (train, test) = match (p.train, p.test) {
        (Some(train), Some(test)) => (train, test),
        _ => {
            let (train, test) = (dir.join("train.jsonl"), dir.join("test.jsonl"));
            stage("synth", stages::synth(&train, None, "train", g, &mut Resolver::new(file)))?;
            stage("synth", stages::synth(&test, None, "test", g, &mut Resolver::new(file)))?;
            (train, test)
        }
    };
    let base = dir.join("base.json");
    let pairs = dir.join("pairs.jsonl");
    let ckpt = dir.join("model.json");
    let generated = dir.join("generated.jsonl");
    let base_arg = match p.base.kind.as_deref().or(file.values.get("base.kind").map(String::as_str)) {
        Some(kind) if kind.starts_with("external:") => kind.to_string(),
        _ => {
            stage("fit-base", stages::fit_base(&train, &base, &p.base, g, &mut Resolver::new(file)))?;
            base.display().to_string()
        }
    };
    stage("build-pairs", stages::build_pairs(&train, &base_arg, &pairs, &p.pairs, g, &mut Resolver::new(file)))?;
    stage("train", stages::train_stage(&pairs, &ckpt, &p.training, g, &mut Resolver::new(file)))?;
    stage("generate", stages::generate_stage(&ckpt, &base_arg, &generated, &p.generate, g, &mut Resolver::new(file)))?;
    stage("evaluate", stages::evaluate_stage(&generated, &test, &train, &dir.join("eval"), &p.eval, g, &mut Resolver::new(file)))?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut file = match &cli.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    file = file.with_overrides(&cli.sets)?;
    let mut r = Resolver::new(&file);
    let g = Globals {
        seed: r.get("seed", cli.seed, 0)?,
        preset: r.get("preset", cli.preset.clone(), "desk".to_string())?,
        force: cli.force,
    };
    let threads = r.get("threads", cli.threads, 0)?;
    if threads > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build_global().context("configuring the thread pool")?;
    }
    let mut r = Resolver::new(&file);
    match cli.command {
        Command::Ingest { inputs, out } => {
            let s = stages::ingest(&inputs, &out, &g, &mut r)?;
            eprintln!("ingested {} of {} records ({} failed) into {}", s.ok, s.total, s.failed, out.display());
        }
        Command::Synth { out, n } => {
            stages::synth(&out, n, "train", &g, &mut r)?;
        }
        Command::FitBase { data, out, args } => {
            stages::fit_base(&data, &out, &args.into(), &g, &mut r)?;
        }
        Command::BuildPairs { data, base, out, args } => {
            stages::build_pairs(&data, &base, &out, &args.into(), &g, &mut r)?;
        }
        Command::Train { pairs, out, args } => {
            stages::train_stage(&pairs, &out, &args.into(), &g, &mut r)?;
        }
        Command::Generate { checkpoint, base, out, args } => {
            stages::generate_stage(&checkpoint, &base, &out, &args.into(), &g, &mut r)?;
        }
        Command::Evaluate { generated, test, train, out_dir, args } => {
            stages::evaluate_stage(&generated, &test, &train, &out_dir, &args.into(), &g, &mut r)?;
        }
        Command::Relax { input, out, max_steps, fixed_lengths } => {
            stages::relax_stage(&input, &out, max_steps, fixed_lengths, &g, &mut r)?;
        }
        Command::Match { a, b, ltol, stol, angle_tol } => {
            for line in stages::match_files(&a, &b, ltol, stol, angle_tol, &mut r)? {
                println!("{}", serde_json::to_string(&line)?);
            }
        }
        Command::Pipeline { out_dir, train, test, base, pairs, training, generate, eval } => {
            let inputs = PipelineInputs {
                train,
                test,
                base: base.into(),
                pairs: pairs.into(),
                training: training.into(),
                generate: generate.into(),
                eval: eval.into(),
            };
            pipeline(&out_dir, inputs, &g, &file)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
