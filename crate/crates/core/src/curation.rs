//! Homologous preference curation.
//!
//! For every (image, caption) pair the model samples `n` captions of the
//! image and `n` images of the caption. Captions are ranked by lexical
//! similarity to the reference caption, images by how many of the pair's
//! questions the model itself answers correctly about them.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{answer_questions, sample_captions, sample_images, ModelParams};
use crate::seed::{self, stream};
use crate::vocab::Token;
use crate::world::{Caption, HomologousPair, ImageTokens, QAPair};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurationConfig {
    /// Candidates sampled per side.
    pub n: usize,
    /// Questions per pair used for self-VQA scoring.
    pub q: usize,
    pub gen_accuracy_threshold: f64,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for CurationConfig {
    fn default() -> Self {
        Self {
            n: 4,
            q: 6,
            gen_accuracy_threshold: 0.6,
            temperature: 1.0,
            seed: 0,
        }
    }
}

impl CurationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Contract(format!(
                "curation needs n >= 2, got {}",
                self.n
            )));
        }
        if self.q == 0 {
            return Err(Error::Contract("curation needs q >= 1".into()));
        }
        if !(self.gen_accuracy_threshold > 0.0 && self.gen_accuracy_threshold < 1.0) {
            return Err(Error::Contract(format!(
                "accuracy threshold {} outside (0, 1)",
                self.gen_accuracy_threshold
            )));
        }
        if !(self.temperature >= 0.0) {
            return Err(Error::Contract(format!(
                "negative temperature {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// Multiset token F1: `2|A ⊓ B| / (|A| + |B|)`.
pub fn similarity(a: &Caption, b: &Caption) -> Result<f64> {
    let (a, b) = (a.tokens(), b.tokens());
    if a.is_empty() || b.is_empty() {
        return Err(Error::Degenerate("similarity of an empty caption".into()));
    }
    let mut counts: HashMap<Token, usize> = HashMap::new();
    for &t in a {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0usize;
    for &t in b {
        if let Some(c) = counts.get_mut(&t) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    Ok(2.0 * common as f64 / (a.len() + b.len()) as f64)
}

/// Similarity of a sampled caption to the reference. A sampled caption can
/// be empty (EOS first); it shares nothing with the reference and scores 0.
pub fn caption_score(candidate: &Caption, reference: &Caption) -> Result<f64> {
    if candidate.tokens().is_empty() {
        return Ok(0.0);
    }
    similarity(candidate, reference)
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in values.iter().enumerate() {
        if best.is_none_or(|b| *v > values[b]) {
            best = Some(i);
        }
    }
    best
}

/// Index of the smallest value, lowest index on ties.
pub fn argmin(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in values.iter().enumerate() {
        if best.is_none_or(|b| *v < values[b]) {
            best = Some(i);
        }
    }
    best
}

/// Fraction of questions whose response equals the reference answer.
pub fn accuracy(responses: &[Token], qa: &[QAPair]) -> f64 {
    assert_eq!(responses.len(), qa.len(), "one response per question");
    let hits = responses
        .iter()
        .zip(qa)
        .filter(|(r, p)| **r == p.answer)
        .count();
    hits as f64 / qa.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnderstandingPreference {
    pub image: ImageTokens,
    pub y_w: Caption,
    pub y_l: Caption,
    pub s_w: f64,
    pub s_l: f64,
    pub candidates: Vec<Caption>,
    pub scores: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationPreference {
    pub caption: Caption,
    pub x_w: ImageTokens,
    pub x_l: ImageTokens,
    pub acc_w: f64,
    pub acc_l: f64,
    pub candidates: Vec<ImageTokens>,
    pub accuracies: Vec<f64>,
    /// Model answers per candidate, one per question.
    pub responses: Vec<Vec<Token>>,
}

impl GenerationPreference {
    pub fn winner_index(&self) -> usize {
        argmax(&self.accuracies).expect("non-empty")
    }

    pub fn loser_index(&self) -> usize {
        argmin(&self.accuracies).expect("non-empty")
    }
}

/// Picks winner and loser among scored captions; `None` when every score is equal.
pub fn rank_understanding(
    image: &ImageTokens,
    candidates: Vec<Caption>,
    scores: Vec<f64>,
) -> Option<UnderstandingPreference> {
    let (w, l) = (argmax(&scores)?, argmin(&scores)?);
    if scores[w] == scores[l] {
        return None;
    }
    Some(UnderstandingPreference {
        image: image.clone(),
        y_w: candidates[w].clone(),
        y_l: candidates[l].clone(),
        s_w: scores[w],
        s_l: scores[l],
        candidates,
        scores,
    })
}

/// Picks winner and loser among judged images; `None` unless the best
/// accuracy exceeds `threshold` and differs from the worst.
pub fn rank_generation(
    caption: &Caption,
    candidates: Vec<ImageTokens>,
    responses: Vec<Vec<Token>>,
    qa: &[QAPair],
    threshold: f64,
) -> Option<GenerationPreference> {
    let accuracies: Vec<f64> = responses.iter().map(|r| accuracy(r, qa)).collect();
    let (w, l) = (argmax(&accuracies)?, argmin(&accuracies)?);
    if accuracies[w] <= threshold || accuracies[w] == accuracies[l] {
        return None;
    }
    Some(GenerationPreference {
        caption: caption.clone(),
        x_w: candidates[w].clone(),
        x_l: candidates[l].clone(),
        acc_w: accuracies[w],
        acc_l: accuracies[l],
        candidates,
        accuracies,
        responses,
    })
}

/// The model's own answers about `image`.
pub fn self_vqa_responses(
    params: &ModelParams,
    image: &ImageTokens,
    qa: &[QAPair],
) -> Result<Vec<Token>> {
    let questions: Vec<Vec<Token>> = qa.iter().map(|p| p.question.clone()).collect();
    answer_questions(params, image, &questions)
}

pub fn self_vqa_accuracy(params: &ModelParams, image: &ImageTokens, qa: &[QAPair]) -> Result<f64> {
    if qa.is_empty() {
        return Err(Error::Contract(
            "self-VQA needs at least one question".into(),
        ));
    }
    Ok(accuracy(&self_vqa_responses(params, image, qa)?, qa))
}

/// Caption and image sampling seeds for one pair in one round.
pub fn pair_seeds(cfg_seed: u64, round: usize, pair_index: usize) -> (u64, u64) {
    let idx = ((round as u64) << 32) | pair_index as u64;
    (
        seed::derive(cfg_seed, stream::CAPTIONS, idx),
        seed::derive(cfg_seed, stream::IMAGES, idx),
    )
}

fn questions<'a>(pair: &'a HomologousPair, cfg: &CurationConfig) -> &'a [QAPair] {
    &pair.qa[..cfg.q.min(pair.qa.len())]
}

/// Samples and scores `n` captions of `image`.
pub fn score_captions(
    params: &ModelParams,
    image: &ImageTokens,
    reference: &Caption,
    n: usize,
    temperature: f64,
    rng_seed: u64,
) -> Result<(Vec<Caption>, Vec<f64>)> {
    let candidates = sample_captions(params, image, n, temperature, rng_seed)?;
    let scores = candidates
        .iter()
        .map(|c| caption_score(c, reference))
        .collect::<Result<Vec<_>>>()?;
    Ok((candidates, scores))
}

/// Samples `n` images of `caption` and collects the model's answers about each.
pub fn judge_images(
    params: &ModelParams,
    caption: &Caption,
    qa: &[QAPair],
    cells: usize,
    n: usize,
    temperature: f64,
    rng_seed: u64,
) -> Result<(Vec<ImageTokens>, Vec<Vec<Token>>)> {
    let candidates = sample_images(params, caption, n, temperature, rng_seed, cells)?;
    let responses = candidates
        .iter()
        .map(|x| self_vqa_responses(params, x, qa))
        .collect::<Result<Vec<_>>>()?;
    Ok((candidates, responses))
}

pub fn curate_understanding(
    params: &ModelParams,
    pair: &HomologousPair,
    cfg: &CurationConfig,
    rng_seed: u64,
) -> Result<Option<UnderstandingPreference>> {
    cfg.validate()?;
    let (candidates, scores) = score_captions(
        params,
        &pair.image,
        &pair.caption,
        cfg.n,
        cfg.temperature,
        rng_seed,
    )?;
    Ok(rank_understanding(&pair.image, candidates, scores))
}

pub fn curate_generation(
    params: &ModelParams,
    pair: &HomologousPair,
    cfg: &CurationConfig,
    rng_seed: u64,
) -> Result<Option<GenerationPreference>> {
    cfg.validate()?;
    let qa = questions(pair, cfg);
    let (candidates, responses) = judge_images(
        params,
        &pair.caption,
        qa,
        pair.image.tokens().len(),
        cfg.n,
        cfg.temperature,
        rng_seed,
    )?;
    Ok(rank_generation(
        &pair.caption,
        candidates,
        responses,
        qa,
        cfg.gen_accuracy_threshold,
    ))
}

/// One record of the preference dataset: both halves come from the same pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HomologousPreferenceTuple {
    pub pair_index: usize,
    pub round: usize,
    pub seed: u64,
    pub caption_seed: u64,
    pub image_seed: u64,
    pub x: ImageTokens,
    pub y: Caption,
    pub qa: Vec<QAPair>,
    pub y_w: Caption,
    pub y_l: Caption,
    pub s_w: f64,
    pub s_l: f64,
    pub x_w: ImageTokens,
    pub x_l: ImageTokens,
    pub acc_w: f64,
    pub acc_l: f64,
    pub answers_w: Vec<Token>,
    pub answers_l: Vec<Token>,
    pub caption_candidates: Vec<Caption>,
    pub caption_scores: Vec<f64>,
    pub image_candidates: Vec<ImageTokens>,
    pub image_answers: Vec<Vec<Token>>,
}

impl HomologousPreferenceTuple {
    pub fn join(
        pair_index: usize,
        round: usize,
        seeds: (u64, u64, u64),
        pair: &HomologousPair,
        qa: &[QAPair],
        und: UnderstandingPreference,
        gen: GenerationPreference,
    ) -> Self {
        let (w, l) = (gen.winner_index(), gen.loser_index());
        Self {
            pair_index,
            round,
            seed: seeds.0,
            caption_seed: seeds.1,
            image_seed: seeds.2,
            x: pair.image.clone(),
            y: pair.caption.clone(),
            qa: qa.to_vec(),
            y_w: und.y_w,
            y_l: und.y_l,
            s_w: und.s_w,
            s_l: und.s_l,
            answers_w: gen.responses[w].clone(),
            answers_l: gen.responses[l].clone(),
            x_w: gen.x_w,
            x_l: gen.x_l,
            acc_w: gen.acc_w,
            acc_l: gen.acc_l,
            caption_candidates: und.candidates,
            caption_scores: und.scores,
            image_candidates: gen.candidates,
            image_answers: gen.responses,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurationOutcome {
    pub tuples: Vec<HomologousPreferenceTuple>,
    pub pairs: usize,
    pub und_skipped: usize,
    pub gen_skipped: usize,
}

/// Curates every pair for `round`; a pair is dropped when either half skips.
pub fn curate_dataset(
    params: &ModelParams,
    pairs: &[HomologousPair],
    cfg: &CurationConfig,
    round: usize,
) -> Result<CurationOutcome> {
    cfg.validate()?;
    let mut out = CurationOutcome {
        tuples: Vec::new(),
        pairs: pairs.len(),
        und_skipped: 0,
        gen_skipped: 0,
    };
    for (i, pair) in pairs.iter().enumerate() {
        let (cs, is) = pair_seeds(cfg.seed, round, i);
        let und = curate_understanding(params, pair, cfg, cs)?;
        let gen = curate_generation(params, pair, cfg, is)?;
        out.und_skipped += und.is_none() as usize;
        out.gen_skipped += gen.is_none() as usize;
        if let (Some(u), Some(g)) = (und, gen) {
            out.tuples.push(HomologousPreferenceTuple::join(
                i,
                round,
                (cfg.seed, cs, is),
                pair,
                questions(pair, cfg),
                u,
                g,
            ));
        }
    }
    if out.tuples.is_empty() {
        return Err(Error::CurationFailure {
            pairs: out.pairs,
            und_skipped: out.und_skipped,
            gen_skipped: out.gen_skipped,
        });
    }
    Ok(out)
}
