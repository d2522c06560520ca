//! Mixture of attenuated cross-entropies and the uncertainty-regularized
//! training objective.
//!
//! For a batch of `N` outputs with labels `y_i`:
//!
//! ```text
//! mace  = (1/N) Σ_i Σ_k π_k(x_i) · CE(μ_k(x_i), y_i) / σ_k(x_i)
//! total = mace − λ₁ · mean_i √(σ_e²(x_i) + ε) + λ₂ · mean_i √(σ_a²(x_i) + ε)
//! ```
//!
//! with `ε = 1e-12` keeping the square roots differentiable at zero.

use serde::{Deserialize, Serialize};

use crate::error::{usage, Result};
use crate::model::{HeadGrad, MixtureOutput};
use crate::numerics::{cross_entropy, softmax_into};
use crate::uncertainty::{aleatoric, epistemic};

pub const SQRT_EPS: f64 = 1e-12;

/// Regularizer weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    /// Reward on epistemic spread.
    pub lambda1: f64,
    /// Penalty on aleatoric scale.
    pub lambda2: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(usage(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

fn check_batch(outs: &[MixtureOutput], labels: &[usize]) -> Result<()> {
    if outs.is_empty() {
        return Err(usage("loss over an empty batch"));
    }
    if outs.len() != labels.len() {
        return Err(usage(format!(
            "{} outputs but {} labels",
            outs.len(),
            labels.len()
        )));
    }
    for (i, (o, &y)) in outs.iter().zip(labels).enumerate() {
        if y >= o.num_classes() {
            return Err(usage(format!(
                "label {y} at position {i} is out of range for {} classes",
                o.num_classes()
            )));
        }
    }
    Ok(())
}

/// `Σ_k π_k CE_k / σ_k` for one instance.
fn attenuated_ce(out: &MixtureOutput, label: usize) -> f64 {
    (0..out.num_mixtures())
        .map(|k| out.pi()[k] * cross_entropy(out.mu().row(k), label) / out.sigma()[k])
        .sum()
}

pub fn mace_loss(outs: &[MixtureOutput], labels: &[usize]) -> Result<f64> {
    check_batch(outs, labels)?;
    let sum: f64 = outs
        .iter()
        .zip(labels)
        .map(|(o, &y)| attenuated_ce(o, y))
        .sum();
    Ok(sum / outs.len() as f64)
}

pub fn total_loss(outs: &[MixtureOutput], labels: &[usize], cfg: &LossConfig) -> Result<f64> {
    cfg.validate()?;
    check_batch(outs, labels)?;
    let sum: f64 = outs
        .iter()
        .zip(labels)
        .map(|(o, &y)| instance_loss(o, y, cfg))
        .sum();
    Ok(sum / outs.len() as f64)
}

fn instance_loss(out: &MixtureOutput, label: usize, cfg: &LossConfig) -> f64 {
    attenuated_ce(out, label) - cfg.lambda1 * (epistemic(out) + SQRT_EPS).sqrt()
        + cfg.lambda2 * (aleatoric(out) + SQRT_EPS).sqrt()
}

/// Loss value and gradient for one instance, before the `1/N` batch
/// scaling. Gradients are with respect to the head pre-activations.
pub fn instance_loss_grad(out: &MixtureOutput, label: usize, cfg: &LossConfig) -> (f64, HeadGrad) {
    let k_count = out.num_mixtures();
    let c_count = out.num_classes();
    let pi = out.pi();
    let mu = out.mu();
    let sigma = out.sigma();

    // Gradients with respect to π, μ and σ themselves.
    let mut d_pi = vec![0.0; k_count];
    let mut d_sigma = vec![0.0; k_count];
    let mut grad = HeadGrad::zeros(k_count, c_count);
    let mut probs = vec![0.0; c_count];
    let mut mace = 0.0;
    for k in 0..k_count {
        let row = mu.row(k);
        let ce = cross_entropy(row, label);
        mace += pi[k] * ce / sigma[k];
        d_pi[k] += ce / sigma[k];
        d_sigma[k] -= pi[k] * ce / (sigma[k] * sigma[k]);
        softmax_into(row, &mut probs);
        let scale = pi[k] / sigma[k];
        for (c, g) in grad.mu.row_mut(k).iter_mut().enumerate() {
            let target = if c == label { 1.0 } else { 0.0 };
            *g = scale * (probs[c] - target);
        }
    }

    // −λ₁ √(E + ε), E = Σ_j π_j ‖μ_j − μ̄‖².
    // ∂E/∂μ_j = 2π_j(μ_j − μ̄) and ∂E/∂π_j = ‖μ_j − μ̄‖² on the simplex.
    let e = epistemic(out);
    let root_e = (e + SQRT_EPS).sqrt();
    if cfg.lambda1 != 0.0 {
        let coef = -cfg.lambda1 / (2.0 * root_e);
        let mut mean = vec![0.0; c_count];
        for (k, &w) in pi.iter().enumerate() {
            for (m, v) in mean.iter_mut().zip(mu.row(k)) {
                *m += w * v;
            }
        }
        for j in 0..k_count {
            let mut sq = 0.0;
            let g_row = grad.mu.row_mut(j);
            for (c, (g, v)) in g_row.iter_mut().zip(mu.row(j)).enumerate() {
                let d = v - mean[c];
                sq += d * d;
                *g += coef * 2.0 * pi[j] * d;
            }
            d_pi[j] += coef * sq;
        }
    }

    // +λ₂ √(A + ε), A = Σ_k π_k σ_k.
    let a = aleatoric(out);
    let root_a = (a + SQRT_EPS).sqrt();
    if cfg.lambda2 != 0.0 {
        let coef = cfg.lambda2 / (2.0 * root_a);
        for k in 0..k_count {
            d_pi[k] += coef * sigma[k];
            d_sigma[k] += coef * pi[k];
        }
    }

    // Through softmax: ∂L/∂z_k = π_k (g_k − Σ_l π_l g_l).
    let mean_g: f64 = pi.iter().zip(&d_pi).map(|(p, g)| p * g).sum();
    for k in 0..k_count {
        grad.pi_logits[k] = pi[k] * (d_pi[k] - mean_g);
    }
    // Through σ = lo + (hi − lo)·logistic(s): dσ/ds = (σ − lo)(hi − σ)/(hi − lo).
    let (lo, hi) = out.sigma_bounds();
    for k in 0..k_count {
        let dsig = (sigma[k] - lo) * (hi - sigma[k]) / (hi - lo);
        grad.sigma_pre[k] = d_sigma[k] * dsig;
    }

    let value = mace - cfg.lambda1 * root_e + cfg.lambda2 * root_a;
    (value, grad)
}

/// Batch loss with per-instance gradients, already scaled by `1/N`.
#[derive(Debug, Clone)]
pub struct LossAndGrad {
    pub loss: f64,
    pub grads: Vec<HeadGrad>,
}

pub fn total_loss_grad(
    outs: &[MixtureOutput],
    labels: &[usize],
    cfg: &LossConfig,
) -> Result<LossAndGrad> {
    cfg.validate()?;
    check_batch(outs, labels)?;
    let inv_n = 1.0 / outs.len() as f64;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(outs.len());
    for (o, &y) in outs.iter().zip(labels) {
        let (v, mut g) = instance_loss_grad(o, y, cfg);
        loss += v;
        g.pi_logits.iter_mut().for_each(|x| *x *= inv_n);
        g.mu.as_mut_slice().iter_mut().for_each(|x| *x *= inv_n);
        g.sigma_pre.iter_mut().for_each(|x| *x *= inv_n);
        grads.push(g);
    }
    Ok(LossAndGrad {
        loss: loss * inv_n,
        grads,
    })
}
