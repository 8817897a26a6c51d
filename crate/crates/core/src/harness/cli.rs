use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use super::commands::{self, Inputs, TrainOptions};
use super::{ExperimentConfig, HarnessError, RunDir};
use crate::advpose::{RefineConfig, TrainedModel};
use crate::quat::RotationMode;
use crate::scenes::Dataset;

#[derive(Debug, Parser)]
#[command(
    name = "advpose",
    version,
    about = "Adversarial pose regression with discriminator-driven refinement"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Experiment configuration (TOML). Built-in toy defaults when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed applied to both the scene and the training run.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Rotation parameterization.
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<RotationMode>,
    /// Output directory; overrides `out_dir` from the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Replace an existing run directory instead of adding a numbered one.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Args)]
pub struct RefineArgs {
    #[arg(long)]
    pub step_size: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Use the printed projection `(I - g g^T) g` and great-circle update.
    #[arg(long)]
    pub eq7_literal: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scene dataset.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Train the regressor and discriminator.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        /// Train the non-adversarial baseline (lambda = 0).
        #[arg(long)]
        base_model: bool,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop after this many epochs in total.
        #[arg(long, hide = true)]
        stop_after: Option<usize>,
    },
    /// Evaluate a checkpoint on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// A base-model checkpoint for the three-column comparison.
        #[arg(long)]
        base_checkpoint: Option<PathBuf>,
        /// Refine every regressed pose with the discriminator.
        #[arg(long)]
        refine: bool,
        #[command(flatten)]
        refine_args: RefineArgs,
    },
    /// Evaluate refinement over a grid of step sizes and iteration counts.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Comma-separated step sizes.
        #[arg(long = "step-size", value_delimiter = ',')]
        step_sizes: Vec<f64>,
        /// Comma-separated iteration counts.
        #[arg(long = "max-iters", value_delimiter = ',')]
        iterations: Vec<usize>,
        #[arg(long)]
        eq7_literal: bool,
    },
    /// Time regression, feature extraction and refinement.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Comma-separated iteration counts.
        #[arg(long = "max-iters", value_delimiter = ',')]
        iterations: Vec<usize>,
        #[arg(long)]
        step_size: Option<f64>,
        #[arg(long)]
        eq7_literal: bool,
    },
    /// Relative refinement gain per feature width, plus a pose-only arm.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Comma-separated feature widths.
        #[arg(long, value_delimiter = ',')]
        feature_dims: Vec<usize>,
        #[command(flatten)]
        refine_args: RefineArgs,
    },
}

fn parse_mode(s: &str) -> Result<RotationMode, String> {
    s.parse()
}

fn resolve(common: &Common) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::toy(common.mode.unwrap_or(RotationMode::Quaternion)),
    };
    if let Some(seed) = common.seed {
        cfg = cfg.with_seed(seed);
        cfg.seeds = vec![seed];
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn apply_refine(cfg: &mut RefineConfig, args: &RefineArgs) {
    if let Some(s) = args.step_size {
        cfg.step_size = s;
    }
    if let Some(n) = args.max_iters {
        cfg.max_iters = n;
    }
    if args.eq7_literal {
        cfg.eq7_literal = true;
    }
}

/// Fails when `--mode` disagrees with a checkpoint.
fn check_mode(common: &Common, model: &TrainedModel) -> Result<(), HarnessError> {
    match common.mode {
        Some(m) if m != model.mode() => Err(HarnessError::ModeMismatch {
            expected: m,
            found: model.mode(),
        }),
        _ => Ok(()),
    }
}

fn dataset_inputs(path: &std::path::Path, dataset: &Dataset) -> Inputs {
    let mut i = Inputs::new();
    i.insert("dataset".into(), path.display().to_string());
    i.insert("dataset_checksum".into(), dataset.checksum_hex());
    i
}

/// Checkpoint-driven commands take the configuration stored in the
/// checkpoint for everything training-related.
fn with_model_config(mut cfg: ExperimentConfig, model: &TrainedModel) -> ExperimentConfig {
    cfg.train = model.config.clone();
    cfg
}

pub fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Generate { common } => {
            let mut cfg = resolve(&common)?;
            if let Some(m) = common.mode {
                cfg.train.mode = m;
            }
            cfg.validate()?;
            let mut out = RunDir::create(&cfg.out_dir, "generate", common.force)?;
            let ds = commands::generate(&cfg, &mut out)?;
            println!(
                "wrote {} ({} train / {} test frames, checksum {})",
                out.file("dataset.bin").display(),
                ds.train.len(),
                ds.test.len(),
                ds.checksum_hex()
            );
        }
        Command::Train {
            common,
            dataset,
            base_model,
            resume,
            stop_after,
        } => {
            let resumed = resume.as_deref().map(commands::load_checkpoint).transpose()?;
            let mut cfg = resolve(&common)?;
            match &resumed {
                Some(m) => {
                    check_mode(&common, m)?;
                    if common.config.is_none() {
                        cfg.train = m.config.clone();
                    }
                }
                None => {
                    if let Some(mode) = common.mode {
                        cfg.train.mode = mode;
                    }
                }
            }
            cfg.validate()?;
            let ds = commands::load_dataset(&dataset)?;
            let mut inputs = dataset_inputs(&dataset, &ds);
            if let Some(p) = &resume {
                inputs.insert("resumed_from".into(), p.display().to_string());
            }
            let mut out = RunDir::create(&cfg.out_dir, "train", common.force)?;
            let opts = TrainOptions {
                base_model,
                resume: resumed,
                stop_after,
                verbose: true,
            };
            let model = commands::train_run(&cfg, &ds, opts, &mut out, &inputs)?;
            println!(
                "wrote {} after {} of {} epochs",
                out.file("checkpoint.bin").display(),
                model.epochs_done,
                model.config.total_epochs
            );
        }
        Command::Eval {
            common,
            checkpoint,
            dataset,
            base_checkpoint,
            refine,
            refine_args,
        } => {
            let model = commands::load_checkpoint(&checkpoint)?;
            check_mode(&common, &model)?;
            let base = base_checkpoint.as_deref().map(commands::load_checkpoint).transpose()?;
            let mut cfg = with_model_config(resolve(&common)?, &model);
            apply_refine(&mut cfg.refine, &refine_args);
            cfg.validate()?;
            let ds = commands::load_dataset(&dataset)?;
            let mut inputs = dataset_inputs(&dataset, &ds);
            inputs.insert("checkpoint".into(), checkpoint.display().to_string());
            if let Some(p) = &base_checkpoint {
                inputs.insert("base_checkpoint".into(), p.display().to_string());
            }
            let mut out = RunDir::create(&cfg.out_dir, "eval", common.force)?;
            let rc = refine.then_some(cfg.refine);
            let report = commands::eval(&cfg, &model, base.as_ref(), &ds, rc, &mut out, &inputs)?;
            print!("{}", report.table());
            println!("wrote {}", out.path().display());
        }
        Command::Sweep {
            common,
            checkpoint,
            dataset,
            step_sizes,
            iterations,
            eq7_literal,
        } => {
            let model = commands::load_checkpoint(&checkpoint)?;
            check_mode(&common, &model)?;
            let mut cfg = with_model_config(resolve(&common)?, &model);
            if !step_sizes.is_empty() {
                cfg.sweep.step_sizes = step_sizes;
            }
            if !iterations.is_empty() {
                cfg.sweep.iterations = iterations;
            }
            cfg.refine.eq7_literal |= eq7_literal;
            cfg.validate()?;
            let ds = commands::load_dataset(&dataset)?;
            let mut inputs = dataset_inputs(&dataset, &ds);
            inputs.insert("checkpoint".into(), checkpoint.display().to_string());
            let mut out = RunDir::create(&cfg.out_dir, "sweep", common.force)?;
            let (steps, iters) = (cfg.sweep.step_sizes.clone(), cfg.sweep.iterations.clone());
            let result = commands::sweep(&cfg, &model, &ds, &steps, &iters, &mut out, &inputs)?;
            print!("{}", result.table());
            println!("wrote {}", out.path().display());
        }
        Command::Bench {
            common,
            checkpoint,
            dataset,
            iterations,
            step_size,
            eq7_literal,
        } => {
            let model = commands::load_checkpoint(&checkpoint)?;
            check_mode(&common, &model)?;
            let mut cfg = with_model_config(resolve(&common)?, &model);
            if !iterations.is_empty() {
                cfg.bench.iterations = iterations;
            }
            if let Some(s) = step_size {
                cfg.refine.step_size = s;
            }
            cfg.refine.eq7_literal |= eq7_literal;
            cfg.validate()?;
            let ds = commands::load_dataset(&dataset)?;
            let mut inputs = dataset_inputs(&dataset, &ds);
            inputs.insert("checkpoint".into(), checkpoint.display().to_string());
            let mut out = RunDir::create(&cfg.out_dir, "bench", common.force)?;
            let iters = cfg.bench.iterations.clone();
            let report = commands::bench(&cfg, &model, &ds, &iters, &mut out, &inputs)?;
            print!("{}", report.table());
            println!("wrote {}", out.path().display());
        }
        Command::Ablate {
            common,
            feature_dims,
            refine_args,
        } => {
            let mut cfg = resolve(&common)?;
            if let Some(m) = common.mode {
                cfg.train.mode = m;
            }
            if !feature_dims.is_empty() {
                cfg.ablate.feature_dims = feature_dims;
            }
            apply_refine(&mut cfg.refine, &refine_args);
            cfg.validate()?;
            let mut out = RunDir::create(&cfg.out_dir, "ablate", common.force)?;
            let seeds = cfg.seeds.clone();
            let report = commands::ablate(&cfg, &seeds, true, &mut out)?;
            print!("{}", report.table());
            println!("wrote {}", out.path().display());
        }
    }
    Ok(())
}
