//! Understanding/generation gap.
//!
//! Understanding: the model answers each held-out question about the real
//! image. Generation: the model draws one image per caption and the exact
//! oracle answers the same questions about the drawing. Both scores are
//! means of per-question 0/1 indicators.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{answer_questions, sample_images, ModelParams};
use crate::seed::{self, stream};
use crate::vocab::Token;
use crate::world::{oracle_answer, parse, Caption, HomologousPair, ImageTokens, QuestionKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub temperature: f64,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            seed: 0,
        }
    }
}

/// Answers questions about an image.
pub trait Answerer {
    fn answer(&self, image: &ImageTokens, questions: &[Vec<Token>]) -> Result<Vec<Token>>;
}

impl Answerer for ModelParams {
    fn answer(&self, image: &ImageTokens, questions: &[Vec<Token>]) -> Result<Vec<Token>> {
        answer_questions(self, image, questions)
    }
}

/// Draws one image for a caption; `index` identifies the evaluation item.
pub trait ImageGenerator {
    fn generate(&self, caption: &Caption, index: usize, cells: usize) -> Result<ImageTokens>;
}

pub struct ModelGenerator<'a> {
    pub params: &'a ModelParams,
    pub temperature: f64,
    pub seed: u64,
}

impl ImageGenerator for ModelGenerator<'_> {
    fn generate(&self, caption: &Caption, index: usize, cells: usize) -> Result<ImageTokens> {
        let s = seed::derive(self.seed, stream::EVAL_GEN, index as u64);
        Ok(sample_images(self.params, caption, 1, self.temperature, s, cells)?.remove(0))
    }
}

/// Per-question outcomes in `(pair, question)` order.
#[derive(Clone, Debug, PartialEq)]
pub struct Outcomes {
    pub correct: Vec<bool>,
    pub kinds: Vec<QuestionKind>,
}

impl Outcomes {
    pub fn score(&self) -> f64 {
        self.correct.iter().filter(|c| **c).count() as f64 / self.correct.len() as f64
    }
}

fn check_nonempty(pairs: &[HomologousPair]) -> Result<()> {
    if pairs.is_empty() || pairs.iter().all(|p| p.qa.is_empty()) {
        return Err(Error::Contract(
            "evaluation needs at least one question".into(),
        ));
    }
    Ok(())
}

pub fn understanding_outcomes(
    answerer: &impl Answerer,
    pairs: &[HomologousPair],
) -> Result<Outcomes> {
    check_nonempty(pairs)?;
    let mut out = Outcomes {
        correct: Vec::new(),
        kinds: Vec::new(),
    };
    for pair in pairs {
        let qs: Vec<Vec<Token>> = pair.qa.iter().map(|q| q.question.clone()).collect();
        let answers = answerer.answer(&pair.image, &qs)?;
        for (a, q) in answers.iter().zip(&pair.qa) {
            out.correct.push(*a == q.answer);
            out.kinds.push(q.kind);
        }
    }
    Ok(out)
}

pub fn generation_outcomes(
    generator: &impl ImageGenerator,
    pairs: &[HomologousPair],
) -> Result<Outcomes> {
    check_nonempty(pairs)?;
    let mut out = Outcomes {
        correct: Vec::new(),
        kinds: Vec::new(),
    };
    for (i, pair) in pairs.iter().enumerate() {
        let grid = pair.scene.grid_size;
        let image = generator.generate(&pair.caption, i, grid * grid)?;
        let scene = parse(&image, grid).ok();
        for q in &pair.qa {
            let ok = match &scene {
                Some(s) => oracle_answer(s, &q.question)? == q.answer,
                None => false,
            };
            out.correct.push(ok);
            out.kinds.push(q.kind);
        }
    }
    Ok(out)
}

pub fn understanding_score(params: &ModelParams, pairs: &[HomologousPair]) -> Result<f64> {
    Ok(understanding_outcomes(params, pairs)?.score())
}

pub fn generation_score(
    params: &ModelParams,
    pairs: &[HomologousPair],
    temperature: f64,
    seed: u64,
) -> Result<f64> {
    let g = ModelGenerator {
        params,
        temperature,
        seed,
    };
    Ok(generation_outcomes(&g, pairs)?.score())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KindBreakdown {
    pub questions: usize,
    pub understanding_correct: usize,
    pub generation_correct: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub understanding_score: f64,
    pub generation_score: f64,
    pub gap: f64,
    pub pairs: usize,
    pub questions: usize,
    pub eval_seed: u64,
    pub temperature: f64,
    pub checkpoint_hash: Option<String>,
    pub per_kind: BTreeMap<QuestionKind, KindBreakdown>,
    /// 0/1 per `(pair, question)`, in evaluation order.
    pub understanding_correct: Vec<u8>,
    pub generation_correct: Vec<u8>,
}

impl GapReport {
    pub fn from_outcomes(
        und: &Outcomes,
        gen: &Outcomes,
        pairs: usize,
        cfg: &EvalConfig,
    ) -> Result<Self> {
        if und.kinds != gen.kinds {
            return Err(Error::Contract(
                "outcome lists disagree on questions".into(),
            ));
        }
        let mut per_kind: BTreeMap<QuestionKind, KindBreakdown> = BTreeMap::new();
        for ((k, u), g) in und.kinds.iter().zip(&und.correct).zip(&gen.correct) {
            let e = per_kind.entry(*k).or_default();
            e.questions += 1;
            e.understanding_correct += *u as usize;
            e.generation_correct += *g as usize;
        }
        let (u, g) = (und.score(), gen.score());
        Ok(Self {
            understanding_score: u,
            generation_score: g,
            gap: u - g,
            pairs,
            questions: und.correct.len(),
            eval_seed: cfg.seed,
            temperature: cfg.temperature,
            checkpoint_hash: None,
            per_kind,
            understanding_correct: und.correct.iter().map(|c| *c as u8).collect(),
            generation_correct: gen.correct.iter().map(|c| *c as u8).collect(),
        })
    }

    /// Scores recomputed from the stored indicators.
    pub fn recomputed(&self) -> (f64, f64) {
        let mean = |v: &[u8]| v.iter().map(|x| *x as usize).sum::<usize>() as f64 / v.len() as f64;
        (
            mean(&self.understanding_correct),
            mean(&self.generation_correct),
        )
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

pub fn gap_report(
    params: &ModelParams,
    pairs: &[HomologousPair],
    cfg: &EvalConfig,
) -> Result<GapReport> {
    let und = understanding_outcomes(params, pairs)?;
    let gen = generation_outcomes(
        &ModelGenerator {
            params,
            temperature: cfg.temperature,
            seed: cfg.seed,
        },
        pairs,
    )?;
    GapReport::from_outcomes(&und, &gen, pairs.len(), cfg)
}
