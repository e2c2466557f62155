//! Mixed-task next-token pretraining over captioning, generation and VQA.

use pairalign_tensor::{Graph, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{nll_var, BoundParams, ModelParams, SequenceLayout};
use crate::optim::{scheduled_lr, AdamW, AdamWConfig};
use crate::seed::{self, stream};
use crate::world::HomologousPair;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub cosine: bool,
    /// Relative sampling weights of the captioning, generation and VQA tasks.
    pub task_mix: [u32; 3],
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            steps: 8000,
            batch_size: 24,
            learning_rate: 3e-3,
            weight_decay: 0.01,
            cosine: true,
            task_mix: [1, 1, 2],
            seed: 0,
        }
    }
}

impl PretrainConfig {
    fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainRecord {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub grad_norm: f64,
}

/// Resumable training state.
#[derive(Clone, Debug)]
pub struct PretrainState {
    pub params: ModelParams,
    pub opt: AdamW,
    pub step: usize,
}

impl PretrainState {
    pub fn fresh(params: ModelParams, cfg: &PretrainConfig) -> Self {
        let opt = AdamW::new(cfg.adamw(), &params.tensors);
        Self {
            params,
            opt,
            step: 0,
        }
    }

    pub fn restore(
        params: ModelParams,
        cfg: &PretrainConfig,
        opt_state: &[(String, Tensor)],
    ) -> Result<Self> {
        let opt = AdamW::from_state(cfg.adamw(), &params.tensors, opt_state)?;
        let step = opt.step as usize;
        Ok(Self { params, opt, step })
    }
}

/// The batch for `step`, a pure function of `(cfg.seed, step)`.
pub fn batch_for_step(
    pairs: &[HomologousPair],
    cfg: &PretrainConfig,
    step: usize,
) -> Vec<SequenceLayout> {
    let mut rng = seed::rng(seed::derive(cfg.seed, stream::PRETRAIN_BATCH, step as u64));
    (0..cfg.batch_size)
        .map(|_| {
            let pair = &pairs[rng.gen_range(0..pairs.len())];
            let [u, g, _] = cfg.task_mix;
            let total: u32 = cfg.task_mix.iter().sum();
            match rng.gen_range(0..total) {
                t if t < u => SequenceLayout::understanding(&pair.image, &pair.caption),
                t if t < u + g => SequenceLayout::generation(&pair.caption, &pair.image),
                _ => {
                    let qa = &pair.qa[rng.gen_range(0..pair.qa.len())];
                    SequenceLayout::vqa(&pair.image, &qa.question, qa.answer)
                }
            }
        })
        .collect()
}

/// Loss and parameter gradients of the mean NLL over `batch`.
pub fn loss_and_grads(
    params: &ModelParams,
    batch: &[SequenceLayout],
) -> Result<(f64, Vec<Tensor>)> {
    let mut g = Graph::new();
    let bound = BoundParams::bind(&mut g, params, true);
    let refs: Vec<&SequenceLayout> = batch.iter().collect();
    let loss = nll_var(&mut g, &params.config, &bound, &refs)?;
    let value = g.value(loss).item()?;
    let mut grads = g.backward(loss)?;
    let grads = bound
        .vars
        .iter()
        .zip(&params.tensors)
        .map(|(v, p)| {
            grads
                .take(*v)
                .unwrap_or_else(|| Tensor::zeros(p.shape().to_vec()))
        })
        .collect();
    Ok((value, grads))
}

pub fn grad_norm(grads: &[Tensor]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// Runs steps `state.step..until` (clamped to `cfg.steps`).
pub fn train_until(
    state: &mut PretrainState,
    pairs: &[HomologousPair],
    cfg: &PretrainConfig,
    until: usize,
    mut on_record: impl FnMut(&PretrainRecord),
) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::Contract(
            "pretraining needs at least one pair".into(),
        ));
    }
    if cfg.task_mix.iter().sum::<u32>() == 0 {
        return Err(Error::Contract("task mix weights are all zero".into()));
    }
    while state.step < until.min(cfg.steps) {
        let batch = batch_for_step(pairs, cfg, state.step);
        let (loss, grads) = loss_and_grads(&state.params, &batch)?;
        let norm = grad_norm(&grads);
        if !loss.is_finite() || !norm.is_finite() {
            return Err(Error::NonFinite {
                step: state.step,
                what: format!("loss {loss}, grad norm {norm}"),
            });
        }
        let lr = scheduled_lr(cfg.learning_rate, state.step, cfg.steps, cfg.cosine);
        state.opt.update(&mut state.params.tensors, &grads, lr)?;
        on_record(&PretrainRecord {
            step: state.step,
            loss,
            lr,
            grad_norm: norm,
        });
        state.step += 1;
    }
    Ok(())
}

pub fn pretrain(
    params: ModelParams,
    pairs: &[HomologousPair],
    cfg: &PretrainConfig,
) -> Result<(ModelParams, Vec<PretrainRecord>)> {
    let mut state = PretrainState::fresh(params, cfg);
    let mut log = Vec::with_capacity(cfg.steps);
    train_until(&mut state, pairs, cfg, cfg.steps, |r| log.push(r.clone()))?;
    Ok((state.params, log))
}
