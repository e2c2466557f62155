use pairalign_tensor::Tensor;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::vocab;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub mlp_mult: usize,
    pub max_len: usize,
    pub init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: vocab::VOCAB_SIZE,
            d_model: 64,
            n_layers: 2,
            n_heads: 2,
            mlp_mult: 4,
            max_len: 64,
            init_std: 0.02,
        }
    }
}

impl ModelConfig {
    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Contract(format!(
                "d_model {} must split evenly over {} heads",
                self.d_model, self.n_heads
            )));
        }
        if self.vocab_size < vocab::VOCAB_SIZE {
            return Err(Error::Contract(format!(
                "vocab_size {} smaller than the token vocabulary {}",
                self.vocab_size,
                vocab::VOCAB_SIZE
            )));
        }
        Ok(())
    }

    /// Parameter tensors per transformer block.
    pub fn per_layer(&self) -> usize {
        10 + 3 * self.n_heads
    }

    pub fn num_tensors(&self) -> usize {
        2 + self.n_layers * self.per_layer() + 4
    }

    /// Names and shapes of every parameter tensor, in storage order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let (v, d, dh, hid) = (
            self.vocab_size,
            self.d_model,
            self.head_dim(),
            self.d_model * self.mlp_mult,
        );
        let mut out = vec![
            ("tok_emb".to_string(), vec![v, d]),
            ("pos_emb".to_string(), vec![self.max_len, d]),
        ];
        for l in 0..self.n_layers {
            let p = |s: &str| format!("layer{l}.{s}");
            out.push((p("ln1.gamma"), vec![d]));
            out.push((p("ln1.beta"), vec![d]));
            for kind in ["q", "k", "v"] {
                for h in 0..self.n_heads {
                    out.push((p(&format!("attn.w{kind}.{h}")), vec![d, dh]));
                }
            }
            out.push((p("attn.wo"), vec![d, d]));
            out.push((p("attn.bo"), vec![d]));
            out.push((p("ln2.gamma"), vec![d]));
            out.push((p("ln2.beta"), vec![d]));
            out.push((p("mlp.w1"), vec![d, hid]));
            out.push((p("mlp.b1"), vec![hid]));
            out.push((p("mlp.w2"), vec![hid, d]));
            out.push((p("mlp.b2"), vec![d]));
        }
        out.push(("lnf.gamma".to_string(), vec![d]));
        out.push(("lnf.beta".to_string(), vec![d]));
        out.push(("head.w".to_string(), vec![d, v]));
        out.push(("head.b".to_string(), vec![v]));
        out
    }
}

/// Index arithmetic over the flat parameter list.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Slots {
    heads: usize,
    per_layer: usize,
    layers: usize,
}

impl Slots {
    pub fn new(cfg: &ModelConfig) -> Self {
        Self {
            heads: cfg.n_heads,
            per_layer: cfg.per_layer(),
            layers: cfg.n_layers,
        }
    }
    pub const TOK: usize = 0;
    pub const POS: usize = 1;
    fn base(&self, l: usize) -> usize {
        2 + l * self.per_layer
    }
    pub fn ln1(&self, l: usize) -> (usize, usize) {
        (self.base(l), self.base(l) + 1)
    }
    pub fn wq(&self, l: usize, h: usize) -> usize {
        self.base(l) + 2 + h
    }
    pub fn wk(&self, l: usize, h: usize) -> usize {
        self.base(l) + 2 + self.heads + h
    }
    pub fn wv(&self, l: usize, h: usize) -> usize {
        self.base(l) + 2 + 2 * self.heads + h
    }
    pub fn wo(&self, l: usize) -> (usize, usize) {
        let b = self.base(l) + 2 + 3 * self.heads;
        (b, b + 1)
    }
    pub fn ln2(&self, l: usize) -> (usize, usize) {
        let b = self.base(l) + 4 + 3 * self.heads;
        (b, b + 1)
    }
    pub fn mlp(&self, l: usize) -> (usize, usize, usize, usize) {
        let b = self.base(l) + 6 + 3 * self.heads;
        (b, b + 1, b + 2, b + 3)
    }
    pub fn lnf(&self) -> (usize, usize) {
        let b = self.base(self.layers);
        (b, b + 1)
    }
    pub fn head(&self) -> (usize, usize) {
        let b = self.base(self.layers) + 2;
        (b, b + 1)
    }
}

/// Trainable weights of the unified model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub tensors: Vec<Tensor>,
}

impl ModelParams {
    /// Gaussian init; residual output projections are scaled by `1/sqrt(2·layers)`.
    pub fn init(config: ModelConfig, rng_seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seed::rng(seed::derive(rng_seed, seed::stream::INIT, 0));
        let normal = Normal::new(0.0, config.init_std).expect("positive std");
        let resid_scale = 1.0 / ((2 * config.n_layers.max(1)) as f64).sqrt();
        let tensors = config
            .layout()
            .into_iter()
            .map(|(name, shape)| {
                let n: usize = shape.iter().product();
                let data: Vec<f64> = if name.ends_with("gamma") {
                    vec![1.0; n]
                } else if shape.len() == 1 {
                    vec![0.0; n]
                } else {
                    let scale = if name.ends_with("wo") || name.ends_with("w2") {
                        resid_scale
                    } else {
                        1.0
                    };
                    (0..n).map(|_| normal.sample(&mut rng) * scale).collect()
                };
                Tensor::new(shape, data).expect("layout shape")
            })
            .collect();
        Ok(Self { config, tensors })
    }

    pub fn names(&self) -> Vec<String> {
        self.config.layout().into_iter().map(|(n, _)| n).collect()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names()
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn num_params(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }

    /// Checks tensor count and shapes against the config layout.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let layout = self.config.layout();
        if layout.len() != self.tensors.len() {
            return Err(Error::Contract(format!(
                "expected {} tensors, found {}",
                layout.len(),
                self.tensors.len()
            )));
        }
        for ((name, shape), t) in layout.iter().zip(&self.tensors) {
            if t.shape() != shape.as_slice() {
                return Err(Error::Contract(format!(
                    "{name}: expected shape {shape:?}, found {:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }

    /// Bitwise fingerprint of the weights.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for t in &self.tensors {
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// Frozen copy of the policy taken at the start of an alignment run.
#[derive(Clone, Debug)]
pub struct ReferenceSnapshot {
    params: ModelParams,
}

impl ReferenceSnapshot {
    pub fn of(params: &ModelParams) -> Self {
        Self {
            params: params.clone(),
        }
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }
}
