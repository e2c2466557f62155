//! Taped forward pass: pre-norm decoder-only transformer with learned
//! positions, per-head projections and a GELU MLP.
//!
//! Several sequences can share one graph. Token-wise layers run on the
//! row-concatenation of all sequences; attention is computed per sequence.

use pairalign_tensor::{Graph, Tensor, Var};

use crate::error::{Error, Result};
use crate::model::layout::SequenceLayout;
use crate::model::params::{ModelConfig, ModelParams, Slots};
use crate::vocab::Token;

/// Parameter tensors entered into a graph, in layout order.
pub struct BoundParams {
    pub vars: Vec<Var>,
}

impl BoundParams {
    /// Trainable params become leaves; frozen ones become constants.
    pub fn bind(g: &mut Graph, params: &ModelParams, trainable: bool) -> Self {
        let vars = params
            .tensors
            .iter()
            .map(|t| {
                if trainable {
                    g.leaf(t.clone())
                } else {
                    g.constant(t.clone())
                }
            })
            .collect();
        Self { vars }
    }
}

fn check_tokens(cfg: &ModelConfig, seq: &[Token]) -> Result<()> {
    if seq.is_empty() {
        return Err(Error::Contract("empty token sequence".into()));
    }
    if seq.len() > cfg.max_len {
        return Err(Error::TooLong {
            len: seq.len(),
            max: cfg.max_len,
        });
    }
    if let Some(t) = seq.iter().find(|&&t| t as usize >= cfg.vocab_size) {
        return Err(Error::Contract(format!("token {t} outside vocabulary")));
    }
    Ok(())
}

/// Logits `[Σ len, V]` for the given sequences, rows concatenated in order.
pub fn forward_graph(
    g: &mut Graph,
    cfg: &ModelConfig,
    p: &BoundParams,
    seqs: &[&[Token]],
) -> Result<Var> {
    for s in seqs {
        check_tokens(cfg, s)?;
    }
    let slots = Slots::new(cfg);
    let v = &p.vars;
    let ids: Vec<usize> = seqs
        .iter()
        .flat_map(|s| s.iter().map(|&t| t as usize))
        .collect();
    let positions: Vec<usize> = seqs.iter().flat_map(|s| 0..s.len()).collect();
    let tok = g.gather_rows(v[Slots::TOK], &ids)?;
    let pos = g.gather_rows(v[Slots::POS], &positions)?;
    let mut x = g.add(tok, pos)?;
    let inv_sqrt = 1.0 / (cfg.head_dim() as f64).sqrt();

    for l in 0..cfg.n_layers {
        let (g1, b1) = slots.ln1(l);
        let h = g.layer_norm(x, v[g1], v[b1])?;
        let mut per_head = Vec::with_capacity(cfg.n_heads);
        for hd in 0..cfg.n_heads {
            let q = g.matmul(h, v[slots.wq(l, hd)])?;
            let k = g.matmul(h, v[slots.wk(l, hd)])?;
            let vv = g.matmul(h, v[slots.wv(l, hd)])?;
            per_head.push((q, k, vv));
        }
        let mut seq_outs = Vec::with_capacity(seqs.len());
        let mut offset = 0;
        for s in seqs {
            let t = s.len();
            let mut heads = Vec::with_capacity(cfg.n_heads);
            for &(q, k, vv) in &per_head {
                let (qs, ks, vs) = if seqs.len() == 1 {
                    (q, k, vv)
                } else {
                    (
                        g.slice_rows(q, offset, t)?,
                        g.slice_rows(k, offset, t)?,
                        g.slice_rows(vv, offset, t)?,
                    )
                };
                let scores = g.matmul_nt(qs, ks)?;
                let scores = g.scale(scores, inv_sqrt);
                let att = g.causal_softmax(scores)?;
                heads.push(g.matmul(att, vs)?);
            }
            seq_outs.push(if heads.len() == 1 {
                heads[0]
            } else {
                g.concat(&heads, 1)?
            });
            offset += t;
        }
        let attn = if seq_outs.len() == 1 {
            seq_outs[0]
        } else {
            g.concat(&seq_outs, 0)?
        };
        let (wo, bo) = slots.wo(l);
        let attn = g.matmul(attn, v[wo])?;
        let attn = g.add_row(attn, v[bo])?;
        x = g.add(x, attn)?;

        let (g2, b2) = slots.ln2(l);
        let h = g.layer_norm(x, v[g2], v[b2])?;
        let (w1, bb1, w2, bb2) = slots.mlp(l);
        let m = g.matmul(h, v[w1])?;
        let m = g.add_row(m, v[bb1])?;
        let m = g.gelu(m);
        let m = g.matmul(m, v[w2])?;
        let m = g.add_row(m, v[bb2])?;
        x = g.add(x, m)?;
    }
    let (gf, bf) = slots.lnf();
    let x = g.layer_norm(x, v[gf], v[bf])?;
    let (hw, hb) = slots.head();
    let logits = g.matmul(x, v[hw])?;
    Ok(g.add_row(logits, v[hb])?)
}

/// Per-token log-probabilities of each layout's response segment under
/// teacher forcing; one `[response_len]` var per layout.
pub fn response_logprobs(
    g: &mut Graph,
    cfg: &ModelConfig,
    p: &BoundParams,
    layouts: &[&SequenceLayout],
) -> Result<Vec<Var>> {
    let mut inputs = Vec::with_capacity(layouts.len());
    for l in layouts {
        l.validate(cfg.max_len)?;
        let mut t = l.tokens();
        t.pop();
        inputs.push(t);
    }
    let refs: Vec<&[Token]> = inputs.iter().map(Vec::as_slice).collect();
    let logits = forward_graph(g, cfg, p, &refs)?;

    let mut rows = Vec::new();
    let mut targets = Vec::new();
    let mut offset = 0;
    for (l, inp) in layouts.iter().zip(&inputs) {
        let first = offset + l.prompt.len() - 1;
        rows.extend(first..first + l.response.len());
        targets.extend(l.response.iter().map(|&t| t as usize));
        offset += inp.len();
    }
    let picked_logits = g.gather_rows(logits, &rows)?;
    let lsm = g.log_softmax(picked_logits)?;
    let picked = g.gather(lsm, &targets)?;

    let mut out = Vec::with_capacity(layouts.len());
    let mut start = 0;
    for l in layouts {
        out.push(if layouts.len() == 1 {
            picked
        } else {
            g.slice_rows(picked, start, l.response.len())?
        });
        start += l.response.len();
    }
    Ok(out)
}

/// `log π(response | prompt)` for each layout, as graph scalars.
pub fn sequence_logprob_vars(
    g: &mut Graph,
    cfg: &ModelConfig,
    p: &BoundParams,
    layouts: &[&SequenceLayout],
) -> Result<Vec<Var>> {
    Ok(response_logprobs(g, cfg, p, layouts)?
        .into_iter()
        .map(|v| g.sum(v))
        .collect())
}

/// Mean over layouts of each layout's mean response-token NLL.
pub fn nll_var(
    g: &mut Graph,
    cfg: &ModelConfig,
    p: &BoundParams,
    layouts: &[&SequenceLayout],
) -> Result<Var> {
    if layouts.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    let per = response_logprobs(g, cfg, p, layouts)?;
    let means = per
        .into_iter()
        .map(|v| g.mean(v))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let stacked = if means.len() == 1 {
        means[0]
    } else {
        g.concat(&means, 0)?
    };
    let m = g.mean(stacked)?;
    Ok(g.scale(m, -1.0))
}

/// Logits `[T, V]` for one sequence.
pub fn forward_logits(params: &ModelParams, tokens: &[Token]) -> Result<Tensor> {
    let mut g = Graph::new();
    let p = BoundParams::bind(&mut g, params, false);
    let out = forward_graph(&mut g, &params.config, &p, &[tokens])?;
    Ok(g.value(out).clone())
}

pub fn nll_loss(params: &ModelParams, layout: &SequenceLayout) -> Result<f64> {
    let mut g = Graph::new();
    let p = BoundParams::bind(&mut g, params, false);
    let v = nll_var(&mut g, &params.config, &p, &[layout])?;
    Ok(g.value(v).item()?)
}

pub fn sequence_logprob(params: &ModelParams, layout: &SequenceLayout) -> Result<f64> {
    Ok(sequence_logprobs(params, &[layout])?[0])
}

/// Batched [`sequence_logprob`] sharing one forward graph.
pub fn sequence_logprobs(params: &ModelParams, layouts: &[&SequenceLayout]) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let p = BoundParams::bind(&mut g, params, false);
    let vars = sequence_logprob_vars(&mut g, &params.config, &p, layouts)?;
    vars.into_iter().map(|v| Ok(g.value(v).item()?)).collect()
}
