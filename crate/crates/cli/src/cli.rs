use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::Value;

use crate::commands::{self, AlignArgs, CurateArgs, EvalArgs, IterateArgs, PretrainArgs};
use crate::config::RunConfig;
use crate::run::RunDir;

#[derive(Debug, Parser)]
#[command(
    name = "pairalign",
    version,
    about = "Paired understanding/generation preference alignment on a toy world"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML config merged over the defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one config value, e.g. `--set alignment.beta=0.1`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Run directory. Defaults to `$PAIRALIGN_OUT/<run.name>`.
    #[arg(long, visible_alias = "out", global = true)]
    pub run: Option<PathBuf>,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    pub force: bool,
    /// Global seed (`run.seed`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModeArg {
    Pair,
    Und,
    Gen,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum FormArg {
    Sum,
    Product,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate training and held-out homologous pairs.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        eval_count: Option<usize>,
        #[arg(long)]
        grid: Option<usize>,
        #[arg(long)]
        q: Option<usize>,
    },
    /// Mixed-task pretraining; resumable from its own checkpoint.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        /// Continue from the checkpoint in the run's pretrain directory.
        #[arg(long)]
        resume: bool,
        /// Stop after this many total steps (the schedule still spans `steps`).
        #[arg(long)]
        until: Option<usize>,
        #[arg(long)]
        save_every: Option<usize>,
    },
    /// Curate homologous preference tuples with the current model.
    Curate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// One alignment run over a curated preference file.
    Align {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        prefs: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long, value_enum)]
        form: Option<FormArg>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Self-play rounds: curate or refresh, align, evaluate.
    Iterate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        rounds: Option<usize>,
    },
    /// Understanding/generation gap of one checkpoint.
    EvalGap {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Output subdirectory under `eval/`; defaults to the checkpoint's directory name.
        #[arg(long)]
        label: Option<String>,
        #[arg(long)]
        temperature: Option<f64>,
        #[arg(long)]
        eval_seed: Option<u64>,
    },
    /// Mode, iteration and candidate-count ablations.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
    },
    /// Markdown and CSV summary of every report in a run.
    Report {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Args)]
pub struct Inputs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub eval_data: Option<PathBuf>,
}

impl From<Inputs> for IterateArgs {
    fn from(i: Inputs) -> Self {
        Self {
            checkpoint: i.checkpoint,
            data: i.data,
            eval_data: i.eval_data,
        }
    }
}

fn push<T: ToString>(sets: &mut Vec<String>, key: &str, v: Option<T>) {
    if let Some(v) = v {
        sets.push(format!("{key}={}", v.to_string()));
    }
}

fn resolve(common: &Common, mut flags: Vec<String>) -> Result<(RunConfig, RunDir, bool)> {
    let mut sets = common.overrides.clone();
    push(&mut sets, "run.seed", common.seed);
    sets.append(&mut flags);
    let cfg = RunConfig::resolve(common.config.as_deref(), &sets)?;
    let dir = RunDir::resolve(common.run.as_deref(), &cfg.run.name);
    Ok((cfg, dir, common.force))
}

pub fn run(cli: Cli) -> Result<Value> {
    let mut f = Vec::new();
    match cli.command {
        Command::GenData {
            common,
            count,
            eval_count,
            grid,
            q,
        } => {
            push(&mut f, "data.train_pairs", count);
            push(&mut f, "data.eval_pairs", eval_count);
            push(&mut f, "data.grid_size", grid);
            push(&mut f, "data.questions_per_pair", q);
            let (cfg, dir, force) = resolve(&common, f)?;
            let _lock = dir.lock()?;
            commands::gen_data(&cfg, &dir, force)
        }
        Command::Pretrain {
            common,
            data,
            steps,
            lr,
            resume,
            until,
            save_every,
        } => {
            push(&mut f, "pretrain.steps", steps);
            push(&mut f, "pretrain.learning_rate", lr);
            let (cfg, dir, force) = resolve(&common, f)?;
            let _lock = dir.lock()?;
            let args = PretrainArgs {
                data,
                resume,
                until,
                save_every,
            };
            commands::pretrain(&cfg, &dir, &args, force)
        }
        Command::Curate {
            common,
            checkpoint,
            data,
            n,
            threshold,
        } => {
            push(&mut f, "curation.n", n);
            push(&mut f, "curation.gen_accuracy_threshold", threshold);
            let (cfg, dir, force) = resolve(&common, f)?;
            let _lock = dir.lock()?;
            commands::curate(&cfg, &dir, &CurateArgs { checkpoint, data }, force)
        }
        Command::Align {
            common,
            checkpoint,
            prefs,
            mode,
            form,
            beta,
            steps,
        } => {
            let mode = mode.map(|m| match m {
                ModeArg::Pair => "\"pair\"",
                ModeArg::Und => "\"und_only\"",
                ModeArg::Gen => "\"gen_only\"",
            });
            let form = form.map(|m| match m {
                FormArg::Sum => "\"sum\"",
                FormArg::Product => "\"product\"",
            });
            push(&mut f, "alignment.mode", mode);
            push(&mut f, "alignment.form", form);
            push(&mut f, "alignment.beta", beta);
            push(&mut f, "alignment.steps", steps);
            let (cfg, dir, force) = resolve(&common, f)?;
            let _lock = dir.lock()?;
            commands::align(&cfg, &dir, &AlignArgs { checkpoint, prefs }, force)
        }
        Command::Iterate {
            common,
            inputs,
            rounds,
        } => {
            push(&mut f, "self_play.rounds", rounds);
            let (cfg, dir, force) = resolve(&common, f)?;
            let _lock = dir.lock()?;
            commands::iterate(&cfg, &dir, &inputs.into(), force)
        }
        Command::EvalGap {
            common,
            checkpoint,
            data,
            label,
            temperature,
            eval_seed,
        } => {
            push(&mut f, "eval.temperature", temperature);
            push(&mut f, "eval.seed", eval_seed);
            let (cfg, dir, force) = resolve(&common, f)?;
            let _lock = dir.lock()?;
            commands::eval_gap(
                &cfg,
                &dir,
                &EvalArgs {
                    checkpoint,
                    data,
                    label,
                },
                force,
            )
        }
        Command::Ablate { common, inputs } => {
            let (cfg, dir, force) = resolve(&common, f)?;
            let _lock = dir.lock()?;
            commands::ablate(&cfg, &dir, &inputs.into(), force)
        }
        Command::Report { common } => {
            let (_, dir, _) = resolve(&common, f)?;
            crate::run::require(&dir.root, "run directory")?;
            let _lock = dir.lock()?;
            commands::report(&dir)
        }
    }
}
