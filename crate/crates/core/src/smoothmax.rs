//! Weighted smooth maximum of a bag with analytic derivatives.
//!
//! With `x_k = w_k p_k` and `pi = softmax(alpha * x)`:
//!
//! * weighted softmax `S = sum_k x_k pi_k`,
//!   `dS/dp_j = w_j pi_j (1 + alpha (x_j - S))`;
//! * weighted quasimax `Q = (logsumexp(alpha x) - log n) / alpha`,
//!   `dQ/dp_j = w_j pi_j`.
//!
//! Both are evaluated with the largest `x_k` subtracted before
//! exponentiation.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmoothMaxVariant {
    WeightedSoftmax,
    WeightedQuasimax,
    HardMax,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothMaxConfig {
    pub alpha: f64,
    pub w_min: f64,
    pub variant: SmoothMaxVariant,
    pub n_r: usize,
}

impl Default for SmoothMaxConfig {
    fn default() -> Self {
        Self {
            alpha: 4.0,
            w_min: 0.5,
            variant: SmoothMaxVariant::WeightedSoftmax,
            n_r: 30,
        }
    }
}

impl SmoothMaxConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !(self.w_min > 0.0 && self.w_min <= 1.0) || self.n_r == 0 {
            return Err(Error::InvalidConfig(format!(
                "smooth max needs alpha > 0, 0 < w_min <= 1, n_r >= 1 (got {}, {}, {})",
                self.alpha, self.w_min, self.n_r
            )));
        }
        Ok(())
    }
}

/// Gaussian radial weights `w_k`, indexed by the global radial index.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialWeights(pub Vec<f64>);

impl RadialWeights {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn uniform(n_r: usize) -> Self {
        Self(vec![1.0; n_r])
    }
}

/// `w_k = exp(-k^2 / (2 sigma^2))` with `sigma = (N_r - 1) / sqrt(-2 ln w_min)`,
/// so that `w_0 = 1` and `w_{N_r - 1} = w_min`. `w_min = 1` gives all ones.
pub fn radial_weights(cfg: &SmoothMaxConfig) -> Result<RadialWeights> {
    cfg.validate()?;
    if cfg.w_min == 1.0 || cfg.n_r == 1 {
        return Ok(RadialWeights::uniform(cfg.n_r));
    }
    // -k^2 / (2 sigma^2) = k^2 ln(w_min) / (N_r - 1)^2
    let scale = cfg.w_min.ln() / ((cfg.n_r - 1) as f64).powi(2);
    Ok(RadialWeights(
        (0..cfg.n_r).map(|k| ((k * k) as f64 * scale).exp()).collect(),
    ))
}

pub fn sigma(n_r: usize, w_min: f64) -> f64 {
    (n_r as f64 - 1.0) / (-2.0 * w_min.ln()).sqrt()
}

fn check_bag(bag: &[f64], weights: &[f64]) -> Result<()> {
    if bag.is_empty() {
        return Err(Error::Precondition("smooth max of an empty bag".into()));
    }
    if weights.len() < bag.len() {
        return Err(Error::Precondition(format!(
            "bag of length {} needs as many weights, got {}",
            bag.len(),
            weights.len()
        )));
    }
    Ok(())
}

/// Softmax distribution over `alpha * w_k p_k` plus the largest `w_k p_k`
/// and the normaliser.
fn tempered(bag: &[f64], weights: &[f64], alpha: f64) -> (Vec<f64>, Vec<f64>, f64, f64) {
    let x: Vec<f64> = bag.iter().zip(weights).map(|(p, w)| p * w).collect();
    let top = x.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let mut pi: Vec<f64> = x.iter().map(|&v| (alpha * (v - top)).exp()).collect();
    let z: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|e| *e /= z);
    (x, pi, top, z)
}

/// Weighted alpha-softmax value and gradient with respect to each `p_k`.
/// Only the leading `bag.len()` weights are used.
pub fn weighted_softmax(bag: &[f64], weights: &[f64], alpha: f64) -> Result<(f64, Vec<f64>)> {
    check_bag(bag, weights)?;
    let (x, pi, _, _) = tempered(bag, weights, alpha);
    let value: f64 = x.iter().zip(&pi).map(|(a, b)| a * b).sum();
    let grad = (0..bag.len())
        .map(|j| weights[j] * pi[j] * (1.0 + alpha * (x[j] - value)))
        .collect();
    Ok((value, grad))
}

/// Weighted alpha-quasimax value and gradient with respect to each `p_k`.
pub fn weighted_quasimax(bag: &[f64], weights: &[f64], alpha: f64) -> Result<(f64, Vec<f64>)> {
    check_bag(bag, weights)?;
    let (_, pi, top, z) = tempered(bag, weights, alpha);
    let n = bag.len() as f64;
    let value = top + (z.ln() - n.ln()) / alpha;
    let grad = (0..bag.len()).map(|j| weights[j] * pi[j]).collect();
    Ok((value, grad))
}

/// Unweighted maximum; the subgradient picks the first maximiser.
pub fn hard_max(bag: &[f64]) -> Result<(f64, Vec<f64>)> {
    if bag.is_empty() {
        return Err(Error::Precondition("max of an empty bag".into()));
    }
    let mut best = 0;
    for (i, &v) in bag.iter().enumerate() {
        if v > bag[best] {
            best = i;
        }
    }
    let mut grad = vec![0.0; bag.len()];
    grad[best] = 1.0;
    Ok((bag[best], grad))
}

/// Dispatch on `cfg.variant`.
pub fn bag_prediction(bag: &[f64], weights: &[f64], cfg: &SmoothMaxConfig) -> Result<(f64, Vec<f64>)> {
    match cfg.variant {
        SmoothMaxVariant::WeightedSoftmax => weighted_softmax(bag, weights, cfg.alpha),
        SmoothMaxVariant::WeightedQuasimax => weighted_quasimax(bag, weights, cfg.alpha),
        SmoothMaxVariant::HardMax => hard_max(bag),
    }
}
