//! Central finite-difference gradient checking.
//!
//! The numeric side only evaluates the forward pass, so it is independent of
//! the backward rules it is used to verify.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct CoordCheck {
    pub param: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl CoordCheck {
    /// `|analytic - numeric| / max(1, |numeric|)`
    pub fn error(&self) -> f64 {
        (self.analytic - self.numeric).abs() / self.numeric.abs().max(1.0)
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub coords: Vec<CoordCheck>,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.coords
            .iter()
            .map(CoordCheck::error)
            .fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&CoordCheck> {
        self.coords
            .iter()
            .max_by(|a, b| a.error().total_cmp(&b.error()))
    }
}

/// Compares backward-pass gradients of `loss` against central differences at
/// `samples` pseudo-randomly chosen coordinates spread over all `params`.
pub fn check<F>(
    params: &[Tensor],
    loss: F,
    samples: usize,
    eps: f64,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ps.iter().map(|p| g.leaf(p.clone())).collect();
        let l = loss(&mut g, &vars)?;
        g.value(l).item()
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.leaf(p.clone())).collect();
    let l = loss(&mut g, &vars)?;
    let grads = g.backward(l)?;

    let total: usize = params.iter().map(Tensor::numel).sum();
    let mut state = seed ^ 0x9E37_79B9_7F4A_7C15;
    let mut coords = Vec::with_capacity(samples);
    let mut work: Vec<Tensor> = params.to_vec();
    for _ in 0..samples.min(total) {
        // splitmix64
        state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
        let mut flat = (z % total as u64) as usize;
        let mut param = 0;
        while flat >= params[param].numel() {
            flat -= params[param].numel();
            param += 1;
        }
        let orig = work[param].data()[flat];
        work[param].data_mut()[flat] = orig + eps;
        let plus = eval(&work)?;
        work[param].data_mut()[flat] = orig - eps;
        let minus = eval(&work)?;
        work[param].data_mut()[flat] = orig;
        let analytic = grads
            .get(vars[param])
            .map(|t| t.data()[flat])
            .unwrap_or(0.0);
        coords.push(CoordCheck {
            param,
            index: flat,
            analytic,
            numeric: (plus - minus) / (2.0 * eps),
        });
    }
    Ok(GradCheckReport { coords })
}
