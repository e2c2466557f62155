//! Iterative self-play.
//!
//! Round 0 curates preferences from scratch and aligns. Every later round
//! re-samples with the current model, keeps the best new sample as winner
//! and picks the loser by comparing it with the retained winner:
//!
//! ```text
//! (w, l) ← (best, w_prev)   if score(best) > score(w_prev)
//!          (best, l_prev)   otherwise
//! ```
//!
//! then aligns again against a fresh reference.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::curation::{
    accuracy, argmax, curate_dataset, judge_images, pair_seeds, score_captions, CurationConfig,
    HomologousPreferenceTuple,
};
use crate::dpo::{align_against, AlignmentConfig, TrainRecord};
use crate::error::{Error, Result};
use crate::gap::{gap_report, EvalConfig, GapReport};
use crate::model::checkpoint::{self, Checkpoint};
use crate::model::{ModelParams, ReferenceSnapshot};
use crate::seed::{self, stream};
use crate::vocab::Token;
use crate::world::{write_jsonl, Caption, HomologousPair, ImageTokens, QAPair};

pub const PREFS_FILE: &str = "prefs.jsonl";
pub const TRAINLOG_FILE: &str = "trainlog.jsonl";
pub const GAP_FILE: &str = "gap.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelfPlayConfig {
    pub rounds: usize,
    pub refresh_reference: bool,
    pub curation: CurationConfig,
    pub alignment: AlignmentConfig,
    pub eval: EvalConfig,
}

impl Default for SelfPlayConfig {
    fn default() -> Self {
        Self {
            rounds: 3,
            refresh_reference: true,
            curation: CurationConfig::default(),
            alignment: AlignmentConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

/// Which case of the update rule fired.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// The new best beat the retained winner, which becomes the loser.
    Improved,
    /// It did not; the retained loser stays the loser.
    Kept,
}

/// The update rule on arbitrary samples. The new winner is `best` in both cases.
pub fn update_pair<T: Clone>(
    prev_w: &T,
    prev_l: &T,
    score_w_prev: f64,
    best: &T,
    score_best: f64,
) -> (T, T, Branch) {
    if score_best > score_w_prev {
        (best.clone(), prev_w.clone(), Branch::Improved)
    } else {
        (best.clone(), prev_l.clone(), Branch::Kept)
    }
}

pub fn update_und_pair(
    prev: (&Caption, &Caption, f64),
    y_max: &Caption,
    s_max: f64,
) -> (Caption, Caption) {
    let (w, l, _) = update_pair(prev.0, prev.1, prev.2, y_max, s_max);
    (w, l)
}

/// `None` when the best new image does not clear `threshold`.
pub fn update_gen_pair(
    prev: (&ImageTokens, &ImageTokens, f64),
    x_max: &ImageTokens,
    acc_max: f64,
    threshold: f64,
) -> Option<(ImageTokens, ImageTokens)> {
    if acc_max <= threshold {
        return None;
    }
    let (w, l, _) = update_pair(prev.0, prev.1, prev.2, x_max, acc_max);
    Some((w, l))
}

/// Best of `n` sampled captions by similarity to `y_ref`, lowest index on ties.
pub fn select_best_caption(
    params: &ModelParams,
    image: &ImageTokens,
    y_ref: &Caption,
    n: usize,
    temperature: f64,
    rng_seed: u64,
) -> Result<(Caption, f64)> {
    if n == 0 {
        return Err(Error::Contract("selection needs n >= 1".into()));
    }
    let (mut c, s) = score_captions(params, image, y_ref, n, temperature, rng_seed)?;
    let k = argmax(&s).expect("n >= 1");
    Ok((c.swap_remove(k), s[k]))
}

/// Best of `n` sampled images by self-VQA accuracy, with the answers given.
pub fn select_best_image(
    params: &ModelParams,
    caption: &Caption,
    qa: &[QAPair],
    cells: usize,
    n: usize,
    temperature: f64,
    rng_seed: u64,
) -> Result<(ImageTokens, f64, Vec<Token>)> {
    if n == 0 {
        return Err(Error::Contract("selection needs n >= 1".into()));
    }
    let (mut x, mut r) = judge_images(params, caption, qa, cells, n, temperature, rng_seed)?;
    let acc: Vec<f64> = r.iter().map(|a| accuracy(a, qa)).collect();
    let k = argmax(&acc).expect("n >= 1");
    Ok((x.swap_remove(k), acc[k], r.swap_remove(k)))
}

/// Why a retained tuple was not refreshed this round.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RefreshSkip {
    /// Best new image did not clear the accuracy threshold.
    BelowThreshold,
    /// The kept loser would outscore the new winner.
    Inverted,
}

/// Applies one round of re-sampling and the update rule to a retained tuple.
pub fn refresh_tuple(
    params: &ModelParams,
    prev: &HomologousPreferenceTuple,
    cfg: &CurationConfig,
    round: usize,
) -> Result<std::result::Result<HomologousPreferenceTuple, RefreshSkip>> {
    let (cs, is) = pair_seeds(cfg.seed, round, prev.pair_index);
    let (captions, scores) = score_captions(params, &prev.x, &prev.y, cfg.n, cfg.temperature, cs)?;
    let (images, answers) = judge_images(
        params,
        &prev.y,
        &prev.qa,
        prev.x.tokens().len(),
        cfg.n,
        cfg.temperature,
        is,
    )?;
    let accs: Vec<f64> = answers.iter().map(|a| accuracy(a, &prev.qa)).collect();
    let (ky, kx) = (
        argmax(&scores).expect("n >= 1"),
        argmax(&accs).expect("n >= 1"),
    );

    let (y_w, y_l, ub) = update_pair(&prev.y_w, &prev.y_l, prev.s_w, &captions[ky], scores[ky]);
    let s_l = match ub {
        Branch::Improved => prev.s_w,
        Branch::Kept => prev.s_l,
    };
    if accs[kx] <= cfg.gen_accuracy_threshold {
        return Ok(Err(RefreshSkip::BelowThreshold));
    }
    let (x_w, x_l, gb) = update_pair(&prev.x_w, &prev.x_l, prev.acc_w, &images[kx], accs[kx]);
    let (acc_l, answers_l) = match gb {
        Branch::Improved => (prev.acc_w, prev.answers_w.clone()),
        Branch::Kept => (prev.acc_l, prev.answers_l.clone()),
    };
    if scores[ky] < s_l || accs[kx] < acc_l {
        return Ok(Err(RefreshSkip::Inverted));
    }
    Ok(Ok(HomologousPreferenceTuple {
        pair_index: prev.pair_index,
        round,
        seed: cfg.seed,
        caption_seed: cs,
        image_seed: is,
        x: prev.x.clone(),
        y: prev.y.clone(),
        qa: prev.qa.clone(),
        y_w,
        y_l,
        s_w: scores[ky],
        s_l,
        x_w,
        x_l,
        acc_w: accs[kx],
        acc_l,
        answers_w: answers[kx].clone(),
        answers_l,
        caption_candidates: captions,
        caption_scores: scores,
        image_candidates: images,
        image_answers: answers,
    }))
}

/// Loop state between rounds.
#[derive(Clone, Debug)]
pub struct RoundState {
    pub round: usize,
    pub params: ModelParams,
    /// Latest emitted tuple per input pair.
    pub retained: Vec<Option<HomologousPreferenceTuple>>,
    pub reports: Vec<GapReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: usize,
    pub tuples: usize,
    pub und_skipped: usize,
    pub gen_skipped: usize,
    pub inverted: usize,
    pub checkpoint_hash: String,
    pub final_loss: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct SelfPlayOutcome {
    pub params: ModelParams,
    pub baseline: GapReport,
    pub reports: Vec<GapReport>,
    pub summaries: Vec<RoundSummary>,
}

pub fn round_dir(root: &Path, round: usize) -> PathBuf {
    root.join(format!("round_{round}"))
}

/// Alignment seed for a round; round 0 uses the configured seed unchanged.
pub fn round_alignment(cfg: &AlignmentConfig, round: usize) -> AlignmentConfig {
    let mut c = cfg.clone();
    if round > 0 {
        c.seed = seed::derive(cfg.seed, stream::ROUND, round as u64);
    }
    c
}

/// Writes a round's preferences, checkpoint, training log and gap report.
pub fn persist_round(
    dir: &Path,
    dataset: &[HomologousPreferenceTuple],
    params: &ModelParams,
    log: &[TrainRecord],
    report: &GapReport,
    meta: serde_json::Value,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_jsonl(&dir.join(PREFS_FILE), dataset)?;
    write_jsonl(&dir.join(TRAINLOG_FILE), log)?;
    checkpoint::save(
        dir,
        &Checkpoint {
            params: params.clone(),
            extra: Vec::new(),
            meta,
        },
    )?;
    report.write(&dir.join(GAP_FILE))
}

/// Events reported while the loop runs.
pub enum Progress<'a> {
    Curated {
        round: usize,
        tuples: usize,
    },
    Step(&'a TrainRecord),
    /// `round` is `None` for the untouched starting model.
    Evaluated {
        round: Option<usize>,
        report: &'a GapReport,
    },
}

pub fn run_self_play(
    initial: &ModelParams,
    pairs: &[HomologousPair],
    eval_pairs: &[HomologousPair],
    cfg: &SelfPlayConfig,
    out: Option<&Path>,
    mut progress: impl FnMut(Progress<'_>),
) -> Result<SelfPlayOutcome> {
    if cfg.rounds == 0 {
        return Err(Error::Contract("self-play needs at least one round".into()));
    }
    let mut baseline = gap_report(initial, eval_pairs, &cfg.eval)?;
    baseline.checkpoint_hash = Some(checkpoint::params_hash(initial));
    if let Some(root) = out {
        baseline.write(&root.join("baseline").join(GAP_FILE))?;
    }
    progress(Progress::Evaluated {
        round: None,
        report: &baseline,
    });
    let mut state = RoundState {
        round: 0,
        params: initial.clone(),
        retained: vec![None; pairs.len()],
        reports: Vec::new(),
    };
    let mut summaries = Vec::new();
    for round in 0..cfg.rounds {
        let (dataset, und_skipped, gen_skipped, inverted) = if round == 0 {
            let c = curate_dataset(&state.params, pairs, &cfg.curation, 0)?;
            (c.tuples, c.und_skipped, c.gen_skipped, 0)
        } else {
            let mut data = Vec::new();
            let (mut below, mut inverted) = (0, 0);
            for prev in state.retained.iter().flatten() {
                match refresh_tuple(&state.params, prev, &cfg.curation, round)? {
                    Ok(t) => data.push(t),
                    Err(RefreshSkip::BelowThreshold) => below += 1,
                    Err(RefreshSkip::Inverted) => inverted += 1,
                }
            }
            if data.is_empty() {
                return Err(Error::CurationFailure {
                    pairs: state.retained.iter().flatten().count(),
                    und_skipped: inverted,
                    gen_skipped: below,
                });
            }
            (data, 0, below, inverted)
        };
        progress(Progress::Curated {
            round,
            tuples: dataset.len(),
        });
        for t in &dataset {
            state.retained[t.pair_index] = Some(t.clone());
        }
        let reference = if cfg.refresh_reference {
            ReferenceSnapshot::of(&state.params)
        } else {
            ReferenceSnapshot::of(initial)
        };
        let acfg = round_alignment(&cfg.alignment, round);
        let aligned = align_against(&state.params, reference, &dataset, &acfg, |r| {
            progress(Progress::Step(r))
        })?;
        state.params = aligned.params;
        let hash = checkpoint::params_hash(&state.params);
        let mut report = gap_report(&state.params, eval_pairs, &cfg.eval)?;
        report.checkpoint_hash = Some(hash.clone());
        progress(Progress::Evaluated {
            round: Some(round),
            report: &report,
        });
        if let Some(root) = out {
            let meta = serde_json::json!({ "round": round, "tuples": dataset.len() });
            persist_round(
                &round_dir(root, round),
                &dataset,
                &state.params,
                &aligned.log,
                &report,
                meta,
            )?;
        }
        summaries.push(RoundSummary {
            round,
            tuples: dataset.len(),
            und_skipped,
            gen_skipped,
            inverted,
            checkpoint_hash: hash,
            final_loss: aligned.log.last().map(|r| r.loss),
        });
        state.reports.push(report);
        state.round = round + 1;
    }
    Ok(SelfPlayOutcome {
        params: state.params,
        baseline,
        reports: state.reports,
        summaries,
    })
}
