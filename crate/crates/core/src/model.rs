//! Mixture logit network: a tanh MLP backbone whose last feature layer feeds
//! three parallel linear heads.
//!
//! * π-head: `K` logits, softmaxed into mixture weights.
//! * μ-head: `K × C` raw class logits, one row per mixture.
//! * σ-head: `K` pre-activations squashed into `(sigma_lo, sigma_hi)`.

use serde::{Deserialize, Serialize};

use crate::error::{usage, Result};
use crate::numerics::{self, argmax, softmax_into, squash, Matrix, Rng};

/// Shape and scale bounds of a network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub input_dim: usize,
    /// Widths of the tanh hidden layers, input side first. May be empty.
    pub hidden: Vec<usize>,
    pub num_mixtures: usize,
    pub num_classes: usize,
    pub sigma_lo: f64,
    pub sigma_hi: f64,
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(usage("input_dim must be positive"));
        }
        if self.hidden.contains(&0) {
            return Err(usage("hidden layer widths must be positive"));
        }
        if self.num_mixtures == 0 {
            return Err(usage("num_mixtures must be at least 1"));
        }
        if self.num_classes < 2 {
            return Err(usage("num_classes must be at least 2"));
        }
        if !(self.sigma_lo.is_finite()
            && self.sigma_hi.is_finite()
            && self.sigma_lo < self.sigma_hi)
        {
            return Err(usage(format!(
                "sigma bounds must satisfy lo < hi, got [{}, {}]",
                self.sigma_lo, self.sigma_hi
            )));
        }
        if self.sigma_lo <= 0.0 {
            return Err(usage("sigma_lo must be positive"));
        }
        Ok(())
    }

    /// Width of the layer the heads read from.
    pub fn feature_dim(&self) -> usize {
        self.hidden.last().copied().unwrap_or(self.input_dim)
    }
}

/// Fully connected layer, weight shape `(out, in)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Matrix::zeros(outputs, inputs),
            bias: vec![0.0; outputs],
        }
    }

    fn xavier(inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        let a = (6.0 / (inputs + outputs) as f64).sqrt();
        let mut d = Self::zeros(inputs, outputs);
        for w in d.weight.as_mut_slice() {
            *w = rng.uniform_range(-a, a);
        }
        d
    }

    pub fn inputs(&self) -> usize {
        self.weight.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.rows()
    }

    fn forward_into(&self, x: &[f64], out: &mut [f64]) {
        self.weight.affine_into(x, &self.bias, out);
    }

    /// Accumulates parameter gradients for upstream `g` at input `x`, and
    /// adds the input gradient into `dx` when given.
    fn backward(&self, x: &[f64], g: &[f64], grad: &mut Dense, dx: Option<&mut [f64]>) {
        grad.weight.add_outer(g, x);
        for (b, gi) in grad.bias.iter_mut().zip(g) {
            *b += gi;
        }
        if let Some(dx) = dx {
            self.weight.transpose_mul_add(g, dx);
        }
    }
}

/// All trainable weights of a mixture logit network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub arch: Architecture,
    pub backbone: Vec<Dense>,
    pub pi_head: Dense,
    pub mu_head: Dense,
    pub sigma_head: Dense,
}

/// Head outputs for one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureOutput {
    pi: Vec<f64>,
    mu: Matrix,
    sigma: Vec<f64>,
    sigma_lo: f64,
    sigma_hi: f64,
}

impl MixtureOutput {
    /// Builds an output by hand, checking the invariants the network
    /// guarantees: `pi` on the simplex, `mu` of shape `K × C` and finite,
    /// every `sigma` inside `(sigma_lo, sigma_hi)`.
    pub fn new(
        pi: Vec<f64>,
        mu: Matrix,
        sigma: Vec<f64>,
        sigma_lo: f64,
        sigma_hi: f64,
    ) -> Result<Self> {
        let k = pi.len();
        if k == 0 || mu.rows() != k || sigma.len() != k {
            return Err(usage(format!(
                "inconsistent mixture count: pi {k}, mu rows {}, sigma {}",
                mu.rows(),
                sigma.len()
            )));
        }
        if mu.cols() == 0 {
            return Err(usage("mu must have at least one class column"));
        }
        if pi.iter().any(|&p| !(0.0..=1.0).contains(&p))
            || (pi.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(usage("pi must be a probability vector"));
        }
        if !(sigma_lo < sigma_hi) || sigma.iter().any(|&s| !(s > sigma_lo && s < sigma_hi)) {
            return Err(usage(format!(
                "sigma must lie inside ({sigma_lo}, {sigma_hi})"
            )));
        }
        if !mu.is_finite() {
            return Err(usage("mu must be finite"));
        }
        Ok(Self {
            pi,
            mu,
            sigma,
            sigma_lo,
            sigma_hi,
        })
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    /// `K × C` logits.
    pub fn mu(&self) -> &Matrix {
        &self.mu
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn sigma_bounds(&self) -> (f64, f64) {
        (self.sigma_lo, self.sigma_hi)
    }

    pub fn num_mixtures(&self) -> usize {
        self.pi.len()
    }

    pub fn num_classes(&self) -> usize {
        self.mu.cols()
    }

    /// `softmax(μ_k)`.
    pub fn mixture_probs(&self, k: usize) -> Vec<f64> {
        let mut p = vec![0.0; self.num_classes()];
        softmax_into(self.mu.row(k), &mut p);
        p
    }

    /// Index of the heaviest mixture (lowest index on ties).
    pub fn dominant_mixture(&self) -> usize {
        argmax(&self.pi)
    }
}

/// Predictive class distribution `p_j = Σ_k π_k · softmax(μ_k)_j`.
pub fn predictive_distribution(out: &MixtureOutput) -> Vec<f64> {
    let c = out.num_classes();
    let mut p = vec![0.0; c];
    let mut buf = vec![0.0; c];
    for (k, &w) in out.pi.iter().enumerate() {
        softmax_into(out.mu.row(k), &mut buf);
        for (pj, bj) in p.iter_mut().zip(&buf) {
            *pj += w * bj;
        }
    }
    p
}

/// Argmax of [`predictive_distribution`], ties toward the lowest class.
pub fn bayes_optimal_label(out: &MixtureOutput) -> usize {
    argmax(&predictive_distribution(out))
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Input followed by each hidden layer's post-tanh activation.
    activations: Vec<Vec<f64>>,
    pub output: MixtureOutput,
}

impl ForwardTrace {
    pub fn features(&self) -> &[f64] {
        self.activations
            .last()
            .expect("trace always holds the input")
    }
}

/// Upstream gradients with respect to the head pre-activations.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrad {
    /// ∂L/∂(π-head logits), length `K`.
    pub pi_logits: Vec<f64>,
    /// ∂L/∂μ, shape `K × C`.
    pub mu: Matrix,
    /// ∂L/∂(σ-head pre-activations), length `K`.
    pub sigma_pre: Vec<f64>,
}

impl HeadGrad {
    pub fn zeros(k: usize, c: usize) -> Self {
        Self {
            pi_logits: vec![0.0; k],
            mu: Matrix::zeros(k, c),
            sigma_pre: vec![0.0; k],
        }
    }
}

impl ModelParams {
    /// Xavier-uniform weights and zero biases.
    pub fn init(arch: Architecture, rng: &mut Rng) -> Result<Self> {
        arch.validate()?;
        let mut prev = arch.input_dim;
        let mut backbone = Vec::with_capacity(arch.hidden.len());
        for &w in &arch.hidden {
            backbone.push(Dense::xavier(prev, w, rng));
            prev = w;
        }
        let (k, c) = (arch.num_mixtures, arch.num_classes);
        let pi_head = Dense::xavier(prev, k, rng);
        let mu_head = Dense::xavier(prev, k * c, rng);
        let sigma_head = Dense::xavier(prev, k, rng);
        Ok(Self {
            arch,
            backbone,
            pi_head,
            mu_head,
            sigma_head,
        })
    }

    /// Every weight and bias zero.
    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        let mut prev = arch.input_dim;
        let mut backbone = Vec::new();
        for &w in &arch.hidden {
            backbone.push(Dense::zeros(prev, w));
            prev = w;
        }
        let (k, c) = (arch.num_mixtures, arch.num_classes);
        Ok(Self {
            pi_head: Dense::zeros(prev, k),
            mu_head: Dense::zeros(prev, k * c),
            sigma_head: Dense::zeros(prev, k),
            backbone,
            arch,
        })
    }

    /// Same shape, all zeros. Used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.arch.clone()).expect("architecture already validated")
    }

    pub fn num_mixtures(&self) -> usize {
        self.arch.num_mixtures
    }

    pub fn num_classes(&self) -> usize {
        self.arch.num_classes
    }

    pub fn input_dim(&self) -> usize {
        self.arch.input_dim
    }

    fn layers(&self) -> impl Iterator<Item = &Dense> {
        self.backbone
            .iter()
            .chain([&self.pi_head, &self.mu_head, &self.sigma_head])
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut Dense> {
        self.backbone
            .iter_mut()
            .chain([&mut self.pi_head, &mut self.mu_head, &mut self.sigma_head])
    }

    /// Parameter slices in a fixed order: for each backbone layer, then the
    /// π, μ and σ heads, the weight (row-major) followed by the bias.
    pub fn slices(&self) -> impl Iterator<Item = &[f64]> {
        self.layers()
            .flat_map(|d| [d.weight.as_slice(), d.bias.as_slice()])
    }

    pub fn slices_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers_mut()
            .flat_map(|d| [d.weight.as_mut_slice(), d.bias.as_mut_slice()])
    }

    pub fn num_params(&self) -> usize {
        self.slices().map(<[f64]>::len).sum()
    }

    /// All parameters concatenated in [`slices`](Self::slices) order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.slices().flat_map(|s| s.iter().copied()).collect()
    }

    /// Overwrites all parameters from a flat vector in
    /// [`slices`](Self::slices) order.
    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(usage(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(usage("parameters must be finite"));
        }
        let mut offset = 0;
        for s in self.slices_mut() {
            s.copy_from_slice(&flat[offset..offset + s.len()]);
            offset += s.len();
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.slices().all(|s| s.iter().all(|v| v.is_finite()))
    }

    /// Evaluates the network at `x`.
    pub fn forward(&self, x: &[f64]) -> Result<MixtureOutput> {
        Ok(self.forward_trace(x)?.output)
    }

    /// Forward pass that keeps the activations needed by
    /// [`backward`](Self::backward).
    pub fn forward_trace(&self, x: &[f64]) -> Result<ForwardTrace> {
        if x.len() != self.arch.input_dim {
            return Err(usage(format!(
                "input has {} features, model expects {}",
                x.len(),
                self.arch.input_dim
            )));
        }
        let mut activations = Vec::with_capacity(self.backbone.len() + 1);
        activations.push(x.to_vec());
        for layer in &self.backbone {
            let mut h = vec![0.0; layer.outputs()];
            layer.forward_into(activations.last().unwrap(), &mut h);
            for v in &mut h {
                *v = v.tanh();
            }
            activations.push(h);
        }
        let feat = activations.last().unwrap();
        let (k, c) = (self.arch.num_mixtures, self.arch.num_classes);
        let (lo, hi) = (self.arch.sigma_lo, self.arch.sigma_hi);

        let mut pi_logits = vec![0.0; k];
        self.pi_head.forward_into(feat, &mut pi_logits);
        let mut pi = vec![0.0; k];
        softmax_into(&pi_logits, &mut pi);

        let mut mu = Matrix::zeros(k, c);
        self.mu_head.forward_into(feat, mu.as_mut_slice());

        let mut sigma = vec![0.0; k];
        self.sigma_head.forward_into(feat, &mut sigma);
        for s in &mut sigma {
            *s = squash(*s, lo, hi);
        }

        Ok(ForwardTrace {
            activations,
            output: MixtureOutput {
                pi,
                mu,
                sigma,
                sigma_lo: lo,
                sigma_hi: hi,
            },
        })
    }

    /// Accumulates into `grads` the gradient of a scalar whose derivatives
    /// with respect to the head pre-activations are `upstream`.
    pub fn backward(&self, trace: &ForwardTrace, upstream: &HeadGrad, grads: &mut ModelParams) {
        let feat = trace.features();
        let mut dh = vec![0.0; feat.len()];
        self.pi_head
            .backward(feat, &upstream.pi_logits, &mut grads.pi_head, Some(&mut dh));
        self.mu_head.backward(
            feat,
            upstream.mu.as_slice(),
            &mut grads.mu_head,
            Some(&mut dh),
        );
        self.sigma_head.backward(
            feat,
            &upstream.sigma_pre,
            &mut grads.sigma_head,
            Some(&mut dh),
        );

        for l in (0..self.backbone.len()).rev() {
            let out = &trace.activations[l + 1];
            let input = &trace.activations[l];
            // tanh' = 1 − a².
            let dz: Vec<f64> = dh.iter().zip(out).map(|(g, a)| g * (1.0 - a * a)).collect();
            if l == 0 {
                self.backbone[l].backward(input, &dz, &mut grads.backbone[l], None);
            } else {
                let mut dprev = vec![0.0; input.len()];
                self.backbone[l].backward(input, &dz, &mut grads.backbone[l], Some(&mut dprev));
                dh = dprev;
            }
        }
    }
}

/// Network outputs for every row of `features`.
pub fn outputs_for(params: &ModelParams, features: &Matrix) -> Result<Vec<MixtureOutput>> {
    features.row_iter().map(|x| params.forward(x)).collect()
}

/// Unchecked softmax of one logit row.
pub fn row_probs(logits: &[f64]) -> Vec<f64> {
    let mut p = vec![0.0; logits.len()];
    numerics::softmax_into(logits, &mut p);
    p
}
