//! One function per subcommand. Each resolves its inputs inside the run
//! directory, claims its outputs, echoes the resolved config and returns a
//! JSON summary for stdout.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use pairalign_core::ablation::{ablation_suite, write_csv};
use pairalign_core::curation::{curate_dataset, HomologousPreferenceTuple};
use pairalign_core::dpo::{align_run, margins};
use pairalign_core::gap::gap_report;
use pairalign_core::model::checkpoint::{self, Checkpoint};
use pairalign_core::model::ModelParams;
use pairalign_core::pretrain::{train_until, PretrainRecord, PretrainState};
use pairalign_core::self_play::{run_self_play, Progress, PREFS_FILE, TRAINLOG_FILE};
use pairalign_core::world::{generate_split, read_jsonl, write_jsonl, HomologousPair};
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::report;
use crate::run::{claim, require, RunDir, CONFIG_FILE};

pub const ABLATION_FILE: &str = "ablation.csv";

fn echo(cfg: &RunConfig, stage: &Path) -> Result<()> {
    let text = cfg.to_toml();
    eprintln!("# resolved config\n{text}");
    std::fs::create_dir_all(stage)?;
    std::fs::write(stage.join(CONFIG_FILE), text)?;
    Ok(())
}

fn load_pairs(path: &Path) -> Result<Vec<HomologousPair>> {
    require(path, "dataset")?;
    let pairs: Vec<HomologousPair> =
        read_jsonl(path).with_context(|| format!("reading {}", path.display()))?;
    if pairs.is_empty() {
        bail!("dataset {} is empty", path.display());
    }
    Ok(pairs)
}

fn load_model(dir: &Path) -> Result<ModelParams> {
    require(&checkpoint::manifest_path(dir), "checkpoint")?;
    checkpoint::load_params(dir).with_context(|| format!("loading checkpoint {}", dir.display()))
}

pub fn gen_data(cfg: &RunConfig, dir: &RunDir, force: bool) -> Result<Value> {
    let data = dir.root.join("data");
    claim(&data, force)?;
    echo(cfg, &data)?;
    let (train, eval) = generate_split(
        &cfg.world(),
        cfg.data.train_pairs,
        cfg.data.eval_pairs,
        cfg.run.seed,
    );
    write_jsonl(&dir.train_data(), &train)?;
    write_jsonl(&dir.eval_data(), &eval)?;
    let questions: usize = train.iter().chain(&eval).map(|p| p.qa.len()).sum();
    Ok(json!({
        "train_pairs": train.len(),
        "eval_pairs": eval.len(),
        "questions": questions,
        "train": dir.train_data(),
        "eval": dir.eval_data(),
    }))
}

pub struct PretrainArgs {
    pub data: Option<PathBuf>,
    pub resume: bool,
    pub until: Option<usize>,
    pub save_every: Option<usize>,
}

fn save_state(out: &Path, state: &PretrainState, total: usize) -> Result<String> {
    let ckpt = Checkpoint {
        params: state.params.clone(),
        extra: state.opt.state_tensors(&state.params.tensors),
        meta: json!({ "step": state.step, "total_steps": total }),
    };
    Ok(checkpoint::save(out, &ckpt)?)
}

pub fn pretrain(cfg: &RunConfig, dir: &RunDir, args: &PretrainArgs, force: bool) -> Result<Value> {
    let pairs = load_pairs(&args.data.clone().unwrap_or_else(|| dir.train_data()))?;
    let out = dir.pretrain();
    let log_path = out.join(TRAINLOG_FILE);
    let (mut state, mut log) = if args.resume {
        let ckpt =
            checkpoint::load(&out).with_context(|| format!("resuming from {}", out.display()))?;
        let state = PretrainState::restore(ckpt.params, &cfg.pretrain, &ckpt.extra)?;
        let mut log: Vec<PretrainRecord> = read_jsonl(&log_path).unwrap_or_default();
        log.truncate(state.step);
        eprintln!("resuming at step {}", state.step);
        (state, log)
    } else {
        claim(&out, force)?;
        let params = ModelParams::init(cfg.model.clone(), cfg.run.seed)?;
        (PretrainState::fresh(params, &cfg.pretrain), Vec::new())
    };
    echo(cfg, &out)?;
    let target = args
        .until
        .unwrap_or(cfg.pretrain.steps)
        .min(cfg.pretrain.steps);
    let chunk = args.save_every.filter(|n| *n > 0).unwrap_or(usize::MAX);
    while state.step < target {
        let until = state.step.saturating_add(chunk).min(target);
        train_until(&mut state, &pairs, &cfg.pretrain, until, |r| {
            if r.step % 100 == 0 {
                eprintln!(
                    "pretrain step {} loss {:.4} lr {:.2e}",
                    r.step, r.loss, r.lr
                );
            }
            log.push(r.clone());
        })?;
        save_state(&out, &state, cfg.pretrain.steps)?;
        write_jsonl(&log_path, &log)?;
    }
    let hash = save_state(&out, &state, cfg.pretrain.steps)?;
    write_jsonl(&log_path, &log)?;
    Ok(json!({
        "step": state.step,
        "initial_loss": log.first().map(|r| r.loss),
        "final_loss": log.last().map(|r| r.loss),
        "checkpoint": out,
        "checkpoint_hash": hash,
    }))
}

pub struct CurateArgs {
    pub checkpoint: Option<PathBuf>,
    pub data: Option<PathBuf>,
}

pub fn curate(cfg: &RunConfig, dir: &RunDir, args: &CurateArgs, force: bool) -> Result<Value> {
    let params = load_model(&args.checkpoint.clone().unwrap_or_else(|| dir.pretrain()))?;
    let pairs = load_pairs(&args.data.clone().unwrap_or_else(|| dir.train_data()))?;
    let out = dir.curate();
    claim(&out, force)?;
    echo(cfg, &out)?;
    let outcome = curate_dataset(&params, &pairs, &cfg.curation, 0)?;
    write_jsonl(&out.join(PREFS_FILE), &outcome.tuples)?;
    let summary = json!({
        "pairs": outcome.pairs,
        "tuples": outcome.tuples.len(),
        "und_skipped": outcome.und_skipped,
        "gen_skipped": outcome.gen_skipped,
        "prefs": out.join(PREFS_FILE),
    });
    std::fs::write(
        out.join("summary.json"),
        serde_json::to_vec_pretty(&summary)?,
    )?;
    Ok(summary)
}

pub struct AlignArgs {
    pub checkpoint: Option<PathBuf>,
    pub prefs: Option<PathBuf>,
}

pub fn align(cfg: &RunConfig, dir: &RunDir, args: &AlignArgs, force: bool) -> Result<Value> {
    let params = load_model(&args.checkpoint.clone().unwrap_or_else(|| dir.pretrain()))?;
    let prefs_path = args
        .prefs
        .clone()
        .unwrap_or_else(|| dir.curate().join(PREFS_FILE));
    require(&prefs_path, "preference dataset")?;
    let dataset: Vec<HomologousPreferenceTuple> = read_jsonl(&prefs_path)?;
    let out = dir.align();
    claim(&out, force)?;
    echo(cfg, &out)?;
    let outcome = align_run(&params, &dataset, &cfg.alignment, |r| {
        if r.step % 50 == 0 {
            eprintln!("align step {} loss {:.4}", r.step, r.loss);
        }
    })?;
    write_jsonl(&out.join(TRAINLOG_FILE), &outcome.log)?;
    let m = margins(
        &outcome.params,
        &outcome.reference,
        &dataset,
        cfg.alignment.beta,
    )?;
    let stats = |side: fn(&(f64, f64)) -> f64| {
        let mean = m.iter().map(side).sum::<f64>() / m.len() as f64;
        let positive = m.iter().filter(|x| side(x) > 0.0).count() as f64 / m.len() as f64;
        json!({ "mean": mean, "positive_fraction": positive })
    };
    let ckpt = Checkpoint {
        params: outcome.params.clone(),
        extra: Vec::new(),
        meta: json!({ "mode": cfg.alignment.mode.name(), "steps": cfg.alignment.steps }),
    };
    let hash = checkpoint::save(&out, &ckpt)?;
    Ok(json!({
        "tuples": dataset.len(),
        "mode": cfg.alignment.mode.name(),
        "final_loss": outcome.log.last().map(|r| r.loss),
        "delta_und": stats(|x| x.0),
        "delta_gen": stats(|x| x.1),
        "checkpoint": out,
        "checkpoint_hash": hash,
    }))
}

pub struct IterateArgs {
    pub checkpoint: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub eval_data: Option<PathBuf>,
}

pub fn iterate(cfg: &RunConfig, dir: &RunDir, args: &IterateArgs, force: bool) -> Result<Value> {
    let params = load_model(&args.checkpoint.clone().unwrap_or_else(|| dir.pretrain()))?;
    let pairs = load_pairs(&args.data.clone().unwrap_or_else(|| dir.train_data()))?;
    let eval = load_pairs(&args.eval_data.clone().unwrap_or_else(|| dir.eval_data()))?;
    let out = dir.iterate();
    claim(&out, force)?;
    echo(cfg, &out)?;
    let outcome = run_self_play(
        &params,
        &pairs,
        &eval,
        &cfg.self_play(),
        Some(&out),
        |p| match p {
            Progress::Curated { round, tuples } => eprintln!("round {round}: {tuples} tuples"),
            Progress::Step(r) if r.step % 100 == 0 => {
                eprintln!("  step {} loss {:.4}", r.step, r.loss)
            }
            Progress::Evaluated { round, report } => eprintln!(
                "{}: und {:.4} gen {:.4} gap {:.4}",
                round.map_or("baseline".to_string(), |r| format!("round {r}")),
                report.understanding_score,
                report.generation_score,
                report.gap
            ),
            _ => {}
        },
    )?;
    let rounds: Vec<Value> = outcome
        .reports
        .iter()
        .zip(&outcome.summaries)
        .map(|(r, s)| {
            json!({
                "round": s.round,
                "tuples": s.tuples,
                "understanding_score": r.understanding_score,
                "generation_score": r.generation_score,
                "gap": r.gap,
            })
        })
        .collect();
    Ok(json!({
        "baseline_gap": outcome.baseline.gap,
        "rounds": rounds,
        "dir": out,
    }))
}

pub struct EvalArgs {
    pub checkpoint: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub label: Option<String>,
}

pub fn eval_gap(cfg: &RunConfig, dir: &RunDir, args: &EvalArgs, force: bool) -> Result<Value> {
    let ckpt_dir = args.checkpoint.clone().unwrap_or_else(|| dir.pretrain());
    let params = load_model(&ckpt_dir)?;
    let pairs = load_pairs(&args.data.clone().unwrap_or_else(|| dir.eval_data()))?;
    let label = match &args.label {
        Some(l) => l.clone(),
        None => ckpt_dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "model".into()),
    };
    let out = dir.eval(&label);
    claim(&out, force)?;
    echo(cfg, &out)?;
    let mut report = gap_report(&params, &pairs, &cfg.eval)?;
    report.checkpoint_hash = Some(checkpoint::blob_hash(&ckpt_dir)?);
    report.write(&out.join("gap.json"))?;
    Ok(json!({
        "understanding_score": report.understanding_score,
        "generation_score": report.generation_score,
        "gap": report.gap,
        "pairs": report.pairs,
        "questions": report.questions,
        "report": out.join("gap.json"),
    }))
}

pub fn ablate(cfg: &RunConfig, dir: &RunDir, args: &IterateArgs, force: bool) -> Result<Value> {
    let params = load_model(&args.checkpoint.clone().unwrap_or_else(|| dir.pretrain()))?;
    let pairs = load_pairs(&args.data.clone().unwrap_or_else(|| dir.train_data()))?;
    let eval = load_pairs(&args.eval_data.clone().unwrap_or_else(|| dir.eval_data()))?;
    let out = dir.ablate();
    claim(&out, force)?;
    echo(cfg, &out)?;
    let rows = ablation_suite(&params, &pairs, &eval, &cfg.ablation(), |r| {
        eprintln!("{} n={} round={} gap {:.4}", r.mode, r.n, r.round, r.gap)
    })?;
    write_csv(&out.join(ABLATION_FILE), &rows)?;
    Ok(json!({ "rows": rows.len(), "csv": out.join(ABLATION_FILE) }))
}

/// The report is a derived view of existing artifacts, so it is always
/// regenerated rather than guarded by `--force`.
pub fn report(dir: &RunDir) -> Result<Value> {
    report::write(&dir.root)
}
