//! DPO and paired DPO against a frozen reference snapshot.
//!
//! For a tuple with understanding pair `(y_w, y_l)` about image `x` and
//! generation pair `(x_w, x_l)` for caption `y`:
//!
//! ```text
//! Δ_und = β[(log π(y_w|x) − log π_ref(y_w|x)) − (log π(y_l|x) − log π_ref(y_l|x))]
//! Δ_gen = β[(log π(x_w|y) − log π_ref(x_w|y)) − (log π(x_l|y) − log π_ref(x_l|y))]
//! ```
//!
//! Sum form: `−mean[log σ(Δ_und) + log σ(Δ_gen)]`.
//! Product form: `−mean[log σ(Δ_und·Δ_gen)]`, which has zero gradient
//! wherever both deltas vanish, in particular at the reference itself.

use pairalign_tensor::{Graph, Tensor, Var};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::curation::HomologousPreferenceTuple;
use crate::error::{Error, Result};
use crate::model::{
    sequence_logprob_vars, BoundParams, ModelConfig, ModelParams, ReferenceSnapshot, SequenceLayout,
};
use crate::optim::{scheduled_lr, AdamW, AdamWConfig};
use crate::pretrain::grad_norm;
use crate::seed::{self, stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Und,
    Gen,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairForm {
    Sum,
    Product,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignMode {
    Pair,
    UndOnly,
    GenOnly,
}

impl AlignMode {
    pub fn name(self) -> &'static str {
        match self {
            AlignMode::Pair => "pair",
            AlignMode::UndOnly => "und_only",
            AlignMode::GenOnly => "gen_only",
        }
    }
}

/// Which loss a step optimizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Objective {
    Dpo(Side),
    Pair(PairForm),
}

impl Objective {
    pub fn of(mode: AlignMode, form: PairForm) -> Self {
        match mode {
            AlignMode::Pair => Objective::Pair(form),
            AlignMode::UndOnly => Objective::Dpo(Side::Und),
            AlignMode::GenOnly => Objective::Dpo(Side::Gen),
        }
    }

    pub fn sides(self) -> (bool, bool) {
        match self {
            Objective::Dpo(Side::Und) => (true, false),
            Objective::Dpo(Side::Gen) => (false, true),
            Objective::Pair(_) => (true, true),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentConfig {
    pub beta: f64,
    pub form: PairForm,
    pub mode: AlignMode,
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub cosine: bool,
    pub seed: u64,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        Self {
            beta: 0.2,
            form: PairForm::Sum,
            mode: AlignMode::Pair,
            learning_rate: 2e-4,
            steps: 600,
            batch_size: 4,
            weight_decay: 0.01,
            cosine: true,
            seed: 0,
        }
    }
}

impl AlignmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) {
            return Err(Error::Contract(format!(
                "beta must be positive, got {}",
                self.beta
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Contract("batch size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0) {
            return Err(Error::Contract(format!(
                "negative learning rate {}",
                self.learning_rate
            )));
        }
        Ok(())
    }

    pub fn objective(&self) -> Objective {
        Objective::of(self.mode, self.form)
    }

    fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }
}

/// Layouts in the fixed order `[und_w, und_l]?, [gen_w, gen_l]?` per tuple.
fn layouts(batch: &[&HomologousPreferenceTuple], (und, gen): (bool, bool)) -> Vec<SequenceLayout> {
    let mut out = Vec::with_capacity(batch.len() * 4);
    for t in batch {
        if und {
            out.push(SequenceLayout::understanding(&t.x, &t.y_w));
            out.push(SequenceLayout::understanding(&t.x, &t.y_l));
        }
        if gen {
            out.push(SequenceLayout::generation(&t.y, &t.x_w));
            out.push(SequenceLayout::generation(&t.y, &t.x_l));
        }
    }
    out
}

fn logprob_vars(
    g: &mut Graph,
    cfg: &ModelConfig,
    p: &BoundParams,
    batch: &[&HomologousPreferenceTuple],
    sides: (bool, bool),
) -> Result<Vec<Var>> {
    let ls = layouts(batch, sides);
    let refs: Vec<&SequenceLayout> = ls.iter().collect();
    sequence_logprob_vars(g, cfg, p, &refs)
}

/// Reference log-probs, laid out like the policy terms of the same batch.
/// Computing both through the identical graph makes Δ exactly zero when the
/// policy equals the reference.
pub fn reference_logprobs(
    reference: &ModelParams,
    batch: &[&HomologousPreferenceTuple],
    sides: (bool, bool),
) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let p = BoundParams::bind(&mut g, reference, false);
    let vars = logprob_vars(&mut g, &reference.config, &p, batch, sides)?;
    vars.into_iter().map(|v| Ok(g.value(v).item()?)).collect()
}

/// Per-tuple Δ vars; a side that is not requested stays empty.
#[derive(Clone, Debug, Default)]
pub struct DeltaVars {
    pub und: Vec<Var>,
    pub gen: Vec<Var>,
}

pub fn delta_vars(
    g: &mut Graph,
    cfg: &ModelConfig,
    p: &BoundParams,
    batch: &[&HomologousPreferenceTuple],
    ref_logprobs: &[f64],
    beta: f64,
    sides: (bool, bool),
) -> Result<DeltaVars> {
    let lp = logprob_vars(g, cfg, p, batch, sides)?;
    if lp.len() != ref_logprobs.len() {
        return Err(Error::Contract(
            "reference log-probs do not match the batch".into(),
        ));
    }
    let mut out = DeltaVars::default();
    let mut i = 0;
    for _ in batch {
        for (on, dst) in [(sides.0, &mut out.und), (sides.1, &mut out.gen)] {
            if on {
                dst.push(delta_term(
                    g,
                    lp[i],
                    lp[i + 1],
                    ref_logprobs[i],
                    ref_logprobs[i + 1],
                    beta,
                )?);
                i += 2;
            }
        }
    }
    Ok(out)
}

/// `β[(lp_w − ref_w) − (lp_l − ref_l)]` with the reference terms constant.
pub fn delta_term(
    g: &mut Graph,
    lp_w: Var,
    lp_l: Var,
    ref_w: f64,
    ref_l: f64,
    beta: f64,
) -> Result<Var> {
    let w = g.add_scalar(lp_w, -ref_w);
    let l = g.add_scalar(lp_l, -ref_l);
    let d = g.sub(w, l)?;
    Ok(g.scale(d, beta))
}

fn stack(g: &mut Graph, vars: &[Var]) -> Result<Var> {
    Ok(if vars.len() == 1 {
        vars[0]
    } else {
        g.concat(vars, 0)?
    })
}

/// `−mean log σ(Δ)` over a vector of deltas.
fn neg_mean_log_sigmoid(g: &mut Graph, deltas: &[Var]) -> Result<Var> {
    let d = stack(g, deltas)?;
    let ls = g.log_sigmoid(d);
    let m = g.mean(ls)?;
    Ok(g.scale(m, -1.0))
}

pub fn objective_var(g: &mut Graph, deltas: &DeltaVars, objective: Objective) -> Result<Var> {
    match objective {
        Objective::Dpo(Side::Und) => neg_mean_log_sigmoid(g, &deltas.und),
        Objective::Dpo(Side::Gen) => neg_mean_log_sigmoid(g, &deltas.gen),
        Objective::Pair(PairForm::Sum) => {
            let u = neg_mean_log_sigmoid(g, &deltas.und)?;
            let v = neg_mean_log_sigmoid(g, &deltas.gen)?;
            Ok(g.add(u, v)?)
        }
        Objective::Pair(PairForm::Product) => {
            let u = stack(g, &deltas.und)?;
            let v = stack(g, &deltas.gen)?;
            let prod = g.mul(u, v)?;
            neg_mean_log_sigmoid(g, &[prod])
        }
    }
}

/// Builds the whole loss for `batch` on `g`, given reference log-probs.
pub fn loss_graph(
    g: &mut Graph,
    cfg: &ModelConfig,
    p: &BoundParams,
    batch: &[&HomologousPreferenceTuple],
    ref_logprobs: &[f64],
    beta: f64,
    objective: Objective,
) -> Result<(Var, DeltaVars)> {
    if batch.is_empty() {
        return Err(Error::Contract("empty preference batch".into()));
    }
    let deltas = delta_vars(g, cfg, p, batch, ref_logprobs, beta, objective.sides())?;
    let loss = objective_var(g, &deltas, objective)?;
    Ok((loss, deltas))
}

/// Loss value, mean deltas and parameter gradients for one batch.
#[derive(Clone, Debug)]
pub struct BatchEval {
    pub loss: f64,
    pub delta_und: Vec<f64>,
    pub delta_gen: Vec<f64>,
    pub grads: Option<Vec<Tensor>>,
}

pub fn evaluate_batch(
    params: &ModelParams,
    reference: &ReferenceSnapshot,
    batch: &[&HomologousPreferenceTuple],
    beta: f64,
    objective: Objective,
    with_grads: bool,
) -> Result<BatchEval> {
    if batch.is_empty() {
        return Err(Error::Contract("empty preference batch".into()));
    }
    let refs = reference_logprobs(reference.params(), batch, objective.sides())?;
    let mut g = Graph::new();
    let p = BoundParams::bind(&mut g, params, with_grads);
    let (loss, deltas) = loss_graph(&mut g, &params.config, &p, batch, &refs, beta, objective)?;
    let value = |g: &Graph, vs: &[Var]| {
        vs.iter()
            .map(|v| g.value(*v).item())
            .collect::<std::result::Result<Vec<_>, _>>()
    };
    let delta_und = value(&g, &deltas.und)?;
    let delta_gen = value(&g, &deltas.gen)?;
    let loss_value = g.value(loss).item()?;
    let grads = if with_grads {
        let mut gr = g.backward(loss)?;
        Some(
            p.vars
                .iter()
                .zip(&params.tensors)
                .map(|(v, t)| {
                    gr.take(*v)
                        .unwrap_or_else(|| Tensor::zeros(t.shape().to_vec()))
                })
                .collect(),
        )
    } else {
        None
    };
    Ok(BatchEval {
        loss: loss_value,
        delta_und,
        delta_gen,
        grads,
    })
}

pub fn delta_und(
    params: &ModelParams,
    reference: &ReferenceSnapshot,
    tuple: &HomologousPreferenceTuple,
    beta: f64,
) -> Result<f64> {
    Ok(evaluate_batch(
        params,
        reference,
        &[tuple],
        beta,
        Objective::Dpo(Side::Und),
        false,
    )?
    .delta_und[0])
}

pub fn delta_gen(
    params: &ModelParams,
    reference: &ReferenceSnapshot,
    tuple: &HomologousPreferenceTuple,
    beta: f64,
) -> Result<f64> {
    Ok(evaluate_batch(
        params,
        reference,
        &[tuple],
        beta,
        Objective::Dpo(Side::Gen),
        false,
    )?
    .delta_gen[0])
}

pub fn dpo_loss(
    params: &ModelParams,
    reference: &ReferenceSnapshot,
    batch: &[&HomologousPreferenceTuple],
    beta: f64,
    side: Side,
) -> Result<f64> {
    Ok(evaluate_batch(params, reference, batch, beta, Objective::Dpo(side), false)?.loss)
}

pub fn pair_dpo_loss(
    params: &ModelParams,
    reference: &ReferenceSnapshot,
    batch: &[&HomologousPreferenceTuple],
    beta: f64,
    form: PairForm,
) -> Result<f64> {
    Ok(evaluate_batch(params, reference, batch, beta, Objective::Pair(form), false)?.loss)
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    /// Batch means of the implicit reward margins.
    pub delta_und: Option<f64>,
    pub delta_gen: Option<f64>,
    /// Fraction of the batch with a positive margin.
    pub und_reward_accuracy: Option<f64>,
    pub gen_reward_accuracy: Option<f64>,
    pub grad_norm: f64,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn positive_fraction(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().filter(|d| **d > 0.0).count() as f64 / v.len() as f64)
}

/// One optimizer update on `batch`; `step` indexes the learning-rate schedule.
pub fn training_step(
    params: &mut ModelParams,
    opt: &mut AdamW,
    reference: &ReferenceSnapshot,
    batch: &[&HomologousPreferenceTuple],
    cfg: &AlignmentConfig,
    step: usize,
) -> Result<TrainRecord> {
    let eval = evaluate_batch(params, reference, batch, cfg.beta, cfg.objective(), true)?;
    let grads = eval.grads.expect("gradients requested");
    let norm = grad_norm(&grads);
    if !eval.loss.is_finite() || !norm.is_finite() {
        return Err(Error::NonFinite {
            step,
            what: format!("alignment loss {}, grad norm {norm}", eval.loss),
        });
    }
    let lr = scheduled_lr(cfg.learning_rate, step, cfg.steps, cfg.cosine);
    opt.update(&mut params.tensors, &grads, lr)?;
    Ok(TrainRecord {
        step,
        loss: eval.loss,
        lr,
        delta_und: mean(&eval.delta_und),
        delta_gen: mean(&eval.delta_gen),
        und_reward_accuracy: positive_fraction(&eval.delta_und),
        gen_reward_accuracy: positive_fraction(&eval.delta_gen),
        grad_norm: norm,
    })
}

/// Tuple indices for every step: consecutive slices of per-epoch shuffles.
pub fn batch_schedule(len: usize, cfg: &AlignmentConfig) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = Vec::new();
    let mut epoch = 0u64;
    let mut out = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        while batch.len() < cfg.batch_size {
            if order.is_empty() {
                order = (0..len).collect();
                order.shuffle(&mut seed::rng(seed::derive(
                    cfg.seed,
                    stream::ALIGN_SHUFFLE,
                    epoch,
                )));
                order.reverse();
                epoch += 1;
            }
            batch.push(order.pop().expect("refilled"));
        }
        out.push(batch);
    }
    out
}

#[derive(Clone, Debug)]
pub struct AlignOutcome {
    pub params: ModelParams,
    pub reference: ReferenceSnapshot,
    pub log: Vec<TrainRecord>,
}

/// Aligns a copy of `params` on `dataset`; the reference is `params` as given.
pub fn align_run(
    params: &ModelParams,
    dataset: &[HomologousPreferenceTuple],
    cfg: &AlignmentConfig,
    on_record: impl FnMut(&TrainRecord),
) -> Result<AlignOutcome> {
    align_against(
        params,
        ReferenceSnapshot::of(params),
        dataset,
        cfg,
        on_record,
    )
}

/// Like [`align_run`] with an explicit reference snapshot.
pub fn align_against(
    params: &ModelParams,
    reference: ReferenceSnapshot,
    dataset: &[HomologousPreferenceTuple],
    cfg: &AlignmentConfig,
    mut on_record: impl FnMut(&TrainRecord),
) -> Result<AlignOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Contract(
            "alignment needs a non-empty preference dataset".into(),
        ));
    }
    let mut policy = params.clone();
    let mut opt = AdamW::new(cfg.adamw(), &policy.tensors);
    let mut log = Vec::with_capacity(cfg.steps);
    for (step, idx) in batch_schedule(dataset.len(), cfg).into_iter().enumerate() {
        let batch: Vec<&HomologousPreferenceTuple> = idx.iter().map(|&i| &dataset[i]).collect();
        let rec = training_step(&mut policy, &mut opt, &reference, &batch, cfg, step)?;
        on_record(&rec);
        log.push(rec);
    }
    Ok(AlignOutcome {
        params: policy,
        reference,
        log,
    })
}

/// Post-training `(Δ_und, Δ_gen)` of every tuple.
pub fn margins(
    params: &ModelParams,
    reference: &ReferenceSnapshot,
    dataset: &[HomologousPreferenceTuple],
    beta: f64,
) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::with_capacity(dataset.len());
    for chunk in dataset.chunks(8) {
        let batch: Vec<&HomologousPreferenceTuple> = chunk.iter().collect();
        let e = evaluate_batch(
            params,
            reference,
            &batch,
            beta,
            Objective::Pair(PairForm::Sum),
            false,
        )?;
        out.extend(e.delta_und.into_iter().zip(e.delta_gen));
    }
    Ok(out)
}
