#![allow(dead_code)]

use pairalign_core::curation::HomologousPreferenceTuple;
use pairalign_core::model::{ModelConfig, ModelParams};
use pairalign_core::pretrain::{pretrain, PretrainConfig};
use pairalign_core::world::{generate_pairs, HomologousPair, WorldConfig};

/// A small model with enough init scale that outputs depend on inputs.
pub fn tiny_params(seed: u64) -> ModelParams {
    let cfg = ModelConfig {
        d_model: 16,
        n_heads: 2,
        n_layers: 2,
        mlp_mult: 2,
        init_std: 0.3,
        ..ModelConfig::default()
    };
    ModelParams::init(cfg, seed).unwrap()
}

/// `tiny_params` after a short generation-heavy warmup, so sampled images
/// look like sparse scenes instead of noise.
pub fn warm_params(seed: u64) -> ModelParams {
    let cfg = PretrainConfig {
        steps: 200,
        batch_size: 8,
        learning_rate: 1e-2,
        task_mix: [1, 3, 1],
        seed,
        ..PretrainConfig::default()
    };
    pretrain(tiny_params(seed), &pairs(64, seed + 100), &cfg)
        .unwrap()
        .0
}

pub fn pairs(count: usize, seed: u64) -> Vec<HomologousPair> {
    generate_pairs(&WorldConfig::default(), count, seed)
}

/// Tuple whose winners are the pair's own image and caption and whose
/// losers come from `other`.
pub fn tuple(
    index: usize,
    pair: &HomologousPair,
    other: &HomologousPair,
) -> HomologousPreferenceTuple {
    HomologousPreferenceTuple {
        pair_index: index,
        round: 0,
        seed: 0,
        caption_seed: 0,
        image_seed: 0,
        x: pair.image.clone(),
        y: pair.caption.clone(),
        qa: pair.qa.clone(),
        y_w: pair.caption.clone(),
        y_l: other.caption.clone(),
        s_w: 1.0,
        s_l: 0.5,
        x_w: pair.image.clone(),
        x_l: other.image.clone(),
        acc_w: 1.0,
        acc_l: 0.5,
        answers_w: pair.qa.iter().map(|q| q.answer).collect(),
        answers_l: pair.qa.iter().map(|q| q.answer).collect(),
        caption_candidates: vec![pair.caption.clone(), other.caption.clone()],
        caption_scores: vec![1.0, 0.5],
        image_candidates: vec![pair.image.clone(), other.image.clone()],
        image_answers: vec![],
    }
}

pub fn tuples(count: usize, seed: u64) -> Vec<HomologousPreferenceTuple> {
    let ps = pairs(count + 1, seed);
    (0..count).map(|i| tuple(i, &ps[i], &ps[i + 1])).collect()
}
