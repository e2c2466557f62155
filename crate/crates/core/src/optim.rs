//! AdamW with decoupled weight decay and an optional cosine schedule.

use pairalign_tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// `base · ½(1 + cos(π·step/total))` when `cosine` is set, else `base`.
pub fn scheduled_lr(base: f64, step: usize, total: usize, cosine: bool) -> f64 {
    if !cosine || total == 0 {
        return base;
    }
    let frac = (step as f64 / total as f64).min(1.0);
    base * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(config: AdamWConfig, params: &[Tensor]) -> Self {
        let zeros = || params.iter().map(|t| vec![0.0; t.numel()]).collect();
        Self {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One update at learning rate `lr`:
    /// `θ ← θ − lr·(m̂/(√v̂ + ε) + λ·θ)`.
    pub fn update(&mut self, params: &mut [Tensor], grads: &[Tensor], lr: f64) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::Contract(
                "optimizer state does not match parameters".into(),
            ));
        }
        self.step += 1;
        let c = &self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::Contract(format!(
                    "gradient shape {:?} for parameter {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (((w, gr), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = c.beta1 * *mi + (1.0 - c.beta1) * gr;
                *vi = c.beta2 * *vi + (1.0 - c.beta2) * gr * gr;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *w -= lr * (mhat / (vhat.sqrt() + c.eps) + c.weight_decay * *w);
            }
        }
        Ok(())
    }

    /// Moment buffers as tensors shaped like `params`, for checkpointing.
    pub fn state_tensors(&self, params: &[Tensor]) -> Vec<(String, Tensor)> {
        let mut out = Vec::with_capacity(2 * params.len() + 1);
        for (i, p) in params.iter().enumerate() {
            out.push((
                format!("adamw.m.{i}"),
                Tensor::new(p.shape().to_vec(), self.m[i].clone()).expect("same shape"),
            ));
        }
        for (i, p) in params.iter().enumerate() {
            out.push((
                format!("adamw.v.{i}"),
                Tensor::new(p.shape().to_vec(), self.v[i].clone()).expect("same shape"),
            ));
        }
        out.push(("adamw.step".into(), Tensor::scalar(self.step as f64)));
        out
    }

    pub fn from_state(
        config: AdamWConfig,
        params: &[Tensor],
        state: &[(String, Tensor)],
    ) -> Result<Self> {
        let find = |name: &str| {
            state
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t)
                .ok_or_else(|| Error::Checkpoint(format!("missing optimizer tensor {name}")))
        };
        let mut opt = Self::new(config, params);
        for i in 0..params.len() {
            opt.m[i] = find(&format!("adamw.m.{i}"))?.data().to_vec();
            opt.v[i] = find(&format!("adamw.v.{i}"))?.data().to_vec();
            if opt.m[i].len() != params[i].numel() || opt.v[i].len() != params[i].numel() {
                return Err(Error::Checkpoint(format!(
                    "optimizer tensor {i} has wrong size"
                )));
            }
        }
        opt.step = find("adamw.step")?.item()? as u64;
        Ok(opt)
    }
}
