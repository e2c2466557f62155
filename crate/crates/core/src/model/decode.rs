//! Tape-free incremental decoding with per-row key/value caches, plus the
//! constrained samplers built on it.

use pairalign_tensor::kernels;
use rand::Rng;

use crate::error::{Error, Result};
use crate::model::layout::{gen_prompt, und_prompt, vqa_prefix};
use crate::model::params::{ModelParams, Slots};
use crate::seed;
use crate::vocab::{self, Token};
use crate::world::{Caption, ImageTokens};

/// Longest caption response, EOS included.
pub const MAX_CAPTION_TOKENS: usize = 24;

/// Advances `rows` sequences in lockstep, one token per row per step.
#[derive(Clone)]
pub struct Decoder<'a> {
    params: &'a ModelParams,
    slots: Slots,
    rows: usize,
    pos: usize,
    // [layer][head][row] -> flattened [pos, head_dim]
    keys: Vec<Vec<Vec<Vec<f64>>>>,
    values: Vec<Vec<Vec<Vec<f64>>>>,
}

impl<'a> Decoder<'a> {
    pub fn new(params: &'a ModelParams, rows: usize) -> Self {
        let cfg = &params.config;
        let empty = || vec![vec![vec![Vec::new(); rows]; cfg.n_heads]; cfg.n_layers];
        Self {
            params,
            slots: Slots::new(cfg),
            rows,
            pos: 0,
            keys: empty(),
            values: empty(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    /// Feeds the same token sequence to every row; returns the last logits.
    pub fn prefill(&mut self, tokens: &[Token]) -> Result<Vec<f64>> {
        let mut last = Vec::new();
        for &t in tokens {
            last = self.step(&vec![t; self.rows])?;
        }
        Ok(last)
    }

    /// Feeds one token per row and returns next-token logits `[rows, V]`.
    pub fn step(&mut self, tokens: &[Token]) -> Result<Vec<f64>> {
        let cfg = &self.params.config;
        let t = &self.params.tensors;
        if tokens.len() != self.rows {
            return Err(Error::Contract(format!(
                "{} tokens for {} rows",
                tokens.len(),
                self.rows
            )));
        }
        if self.pos >= cfg.max_len {
            return Err(Error::TooLong {
                len: self.pos + 1,
                max: cfg.max_len,
            });
        }
        let (d, dh, rows) = (cfg.d_model, cfg.head_dim(), self.rows);
        let hid = d * cfg.mlp_mult;
        let mut x = vec![0.0; rows * d];
        for (r, &tok) in tokens.iter().enumerate() {
            if tok as usize >= cfg.vocab_size {
                return Err(Error::Contract(format!("token {tok} outside vocabulary")));
            }
            let e = t[Slots::TOK].row(tok as usize);
            let p = t[Slots::POS].row(self.pos);
            for j in 0..d {
                x[r * d + j] = e[j] + p[j];
            }
        }
        let scale = 1.0 / (dh as f64).sqrt();
        let mut h = vec![0.0; rows * d];
        let mut q = vec![0.0; rows * dh];
        let mut k = vec![0.0; rows * dh];
        let mut v = vec![0.0; rows * dh];
        let mut attn = vec![0.0; rows * d];
        let mut proj = vec![0.0; rows * d];
        let mut mid = vec![0.0; rows * hid];
        let n_ctx = self.pos + 1;
        let mut scores = vec![0.0; n_ctx];

        for l in 0..cfg.n_layers {
            let (g1, b1) = self.slots.ln1(l);
            layer_norm_rows(&x, t[g1].data(), t[b1].data(), d, &mut h);
            for hd in 0..cfg.n_heads {
                kernels::gemm(
                    rows,
                    d,
                    dh,
                    &h,
                    false,
                    t[self.slots.wq(l, hd)].data(),
                    false,
                    0.0,
                    &mut q,
                );
                kernels::gemm(
                    rows,
                    d,
                    dh,
                    &h,
                    false,
                    t[self.slots.wk(l, hd)].data(),
                    false,
                    0.0,
                    &mut k,
                );
                kernels::gemm(
                    rows,
                    d,
                    dh,
                    &h,
                    false,
                    t[self.slots.wv(l, hd)].data(),
                    false,
                    0.0,
                    &mut v,
                );
                for r in 0..rows {
                    let kc = &mut self.keys[l][hd][r];
                    kc.extend_from_slice(&k[r * dh..(r + 1) * dh]);
                    let vc = &mut self.values[l][hd][r];
                    vc.extend_from_slice(&v[r * dh..(r + 1) * dh]);
                    let qr = &q[r * dh..(r + 1) * dh];
                    for (s, kk) in scores.iter_mut().zip(self.keys[l][hd][r].chunks(dh)) {
                        *s = qr.iter().zip(kk).map(|(a, b)| a * b).sum::<f64>() * scale;
                    }
                    kernels::masked_softmax_row(&mut scores, n_ctx);
                    let out = &mut attn[r * d + hd * dh..r * d + (hd + 1) * dh];
                    out.iter_mut().for_each(|o| *o = 0.0);
                    for (p, vv) in scores.iter().zip(self.values[l][hd][r].chunks(dh)) {
                        for (o, val) in out.iter_mut().zip(vv) {
                            *o += p * val;
                        }
                    }
                }
            }
            let (wo, bo) = self.slots.wo(l);
            kernels::gemm(
                rows,
                d,
                d,
                &attn,
                false,
                t[wo].data(),
                false,
                0.0,
                &mut proj,
            );
            add_bias_into(&mut x, &proj, t[bo].data(), d);

            let (g2, b2) = self.slots.ln2(l);
            layer_norm_rows(&x, t[g2].data(), t[b2].data(), d, &mut h);
            let (w1, bb1, w2, bb2) = self.slots.mlp(l);
            kernels::gemm(rows, d, hid, &h, false, t[w1].data(), false, 0.0, &mut mid);
            for (i, m) in mid.iter_mut().enumerate() {
                *m = kernels::gelu(*m + t[bb1].data()[i % hid]);
            }
            kernels::gemm(
                rows,
                hid,
                d,
                &mid,
                false,
                t[w2].data(),
                false,
                0.0,
                &mut proj,
            );
            add_bias_into(&mut x, &proj, t[bb2].data(), d);
        }
        let (gf, bf) = self.slots.lnf();
        layer_norm_rows(&x, t[gf].data(), t[bf].data(), d, &mut h);
        let (hw, hb) = self.slots.head();
        let vsz = cfg.vocab_size;
        let mut logits = vec![0.0; rows * vsz];
        kernels::gemm(
            rows,
            d,
            vsz,
            &h,
            false,
            t[hw].data(),
            false,
            0.0,
            &mut logits,
        );
        for (i, z) in logits.iter_mut().enumerate() {
            *z += t[hb].data()[i % vsz];
        }
        self.pos += 1;
        Ok(logits)
    }
}

fn layer_norm_rows(x: &[f64], gamma: &[f64], beta: &[f64], d: usize, out: &mut [f64]) {
    for (xr, or) in x.chunks(d).zip(out.chunks_mut(d)) {
        kernels::layer_norm_row(xr, gamma, beta, 1e-5, or);
    }
}

// x += proj + bias (matching the taped order: proj + bias first, then residual)
fn add_bias_into(x: &mut [f64], proj: &[f64], bias: &[f64], d: usize) {
    for (i, (xv, pv)) in x.iter_mut().zip(proj).enumerate() {
        *xv += pv + bias[i % d];
    }
}

/// Picks a token from `logits` restricted to `allowed` (ascending ids).
/// Temperature ≤ 0 is greedy with ties going to the lowest id.
pub fn pick(logits: &[f64], allowed: &[Token], temperature: f64, rng: &mut impl Rng) -> Token {
    if temperature <= 0.0 {
        let mut best = allowed[0];
        for &t in &allowed[1..] {
            if logits[t as usize] > logits[best as usize] {
                best = t;
            }
        }
        return best;
    }
    let max = allowed
        .iter()
        .map(|&t| logits[t as usize])
        .fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = allowed
        .iter()
        .map(|&t| ((logits[t as usize] - max) / temperature).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (&t, w) in allowed.iter().zip(&weights) {
        if u < *w {
            return t;
        }
        u -= w;
    }
    *allowed.last().expect("non-empty allowed set")
}

/// `n` captions for `image`, sampled in UND layout; words and EOS only.
pub fn sample_captions(
    params: &ModelParams,
    image: &ImageTokens,
    n: usize,
    temperature: f64,
    rng_seed: u64,
) -> Result<Vec<Caption>> {
    let mut rng = seed::rng(rng_seed);
    let allowed = vocab::caption_tokens();
    let mut dec = Decoder::new(params, n);
    let mut logits = dec.prefill(&und_prompt(image))?;
    let v = params.config.vocab_size;
    let mut out: Vec<Vec<Token>> = vec![Vec::new(); n];
    let mut done = vec![false; n];
    for step in 0..MAX_CAPTION_TOKENS {
        let mut next = vec![vocab::EOS; n];
        for r in 0..n {
            if done[r] {
                continue;
            }
            let tok = if step + 1 == MAX_CAPTION_TOKENS {
                vocab::EOS
            } else {
                pick(&logits[r * v..(r + 1) * v], &allowed, temperature, &mut rng)
            };
            if tok == vocab::EOS {
                done[r] = true;
            } else {
                out[r].push(tok);
                next[r] = tok;
            }
        }
        if done.iter().all(|&d| d) {
            break;
        }
        logits = dec.step(&next)?;
    }
    Ok(out.into_iter().map(Caption).collect())
}

/// `n` images for `caption`, sampled in GEN layout; exactly one cell token per cell.
pub fn sample_images(
    params: &ModelParams,
    caption: &Caption,
    n: usize,
    temperature: f64,
    rng_seed: u64,
    cells: usize,
) -> Result<Vec<ImageTokens>> {
    let mut rng = seed::rng(rng_seed);
    let allowed = vocab::cell_tokens();
    let mut dec = Decoder::new(params, n);
    let mut logits = dec.prefill(&gen_prompt(caption))?;
    let v = params.config.vocab_size;
    let mut out: Vec<Vec<Token>> = vec![Vec::with_capacity(cells); n];
    for step in 0..cells {
        let next: Vec<Token> = (0..n)
            .map(|r| pick(&logits[r * v..(r + 1) * v], &allowed, temperature, &mut rng))
            .collect();
        for (o, &t) in out.iter_mut().zip(&next) {
            o.push(t);
        }
        if step + 1 < cells {
            logits = dec.step(&next)?;
        }
    }
    Ok(out.into_iter().map(ImageTokens).collect())
}

/// Greedy answers to several questions about one image, restricted to the
/// answer vocabulary. The image prefix is encoded once and shared.
pub fn answer_questions(
    params: &ModelParams,
    image: &ImageTokens,
    questions: &[Vec<Token>],
) -> Result<Vec<Token>> {
    let allowed = vocab::answer_tokens_sorted();
    let mut prefix = Decoder::new(params, 1);
    prefix.prefill(&vqa_prefix(image))?;
    let mut rng = seed::rng(0);
    questions
        .iter()
        .map(|q| {
            let mut dec = prefix.clone();
            dec.prefill(q)?;
            let logits = dec.step(&[vocab::SEP])?;
            Ok(pick(&logits, &allowed, 0.0, &mut rng))
        })
        .collect()
}

/// Greedy single-token VQA answer.
pub fn model_answer(
    params: &ModelParams,
    image: &ImageTokens,
    question: &[Token],
) -> Result<Token> {
    Ok(answer_questions(params, image, &[question.to_vec()])?[0])
}
