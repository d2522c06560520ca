//! Minibatch Adam training with a step-decay learning rate.

use serde::{Deserialize, Serialize};

use crate::error::{usage, Error, Result};
use crate::loss::{total_loss_grad, LossConfig};
use crate::model::{bayes_optimal_label, ModelParams};
use crate::noise::LabeledDataset;
use crate::numerics::Rng;
use crate::uncertainty::{aleatoric, epistemic};

/// RNG stream used for epoch shuffles, separate from initialization.
const SHUFFLE_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub lr_decay_factor: f64,
    /// Epochs between decays.
    pub lr_decay_every: usize,
    pub num_mixtures: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub sigma_lo: f64,
    pub sigma_hi: f64,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 128,
            lr: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            lr_decay_factor: 0.2,
            lr_decay_every: 100,
            num_mixtures: 20,
            lambda1: 1.0,
            lambda2: 1.0,
            sigma_lo: 1.0,
            sigma_hi: 10.0,
            seed: 0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(usage("batch_size must be at least 1"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(usage(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return Err(usage(format!(
                "lr_decay_factor must lie in (0, 1], got {}",
                self.lr_decay_factor
            )));
        }
        if self.lr_decay_every == 0 {
            return Err(usage("lr_decay_every must be at least 1"));
        }
        for (name, b) in [
            ("adam_beta1", self.adam_beta1),
            ("adam_beta2", self.adam_beta2),
        ] {
            if !(0.0..1.0).contains(&b) {
                return Err(usage(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(usage("adam_eps must be positive"));
        }
        if self.num_mixtures == 0 {
            return Err(usage("num_mixtures must be at least 1"));
        }
        if !(self.sigma_lo < self.sigma_hi) {
            return Err(usage(format!(
                "sigma_lo ({}) must be below sigma_hi ({})",
                self.sigma_lo, self.sigma_hi
            )));
        }
        self.loss().validate()
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
        }
    }

    /// Learning rate in effect during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let steps = (epoch / self.lr_decay_every) as i32;
        self.lr * self.lr_decay_factor.powi(steps)
    }
}

/// Adam moments over the flattened parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(num_params: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
        }
    }

    /// One bias-corrected update of `params` in place.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        debug_assert_eq!(params.len(), grad.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

/// Batch objective and its gradient with respect to every parameter.
pub fn loss_and_grad(
    params: &ModelParams,
    ds: &LabeledDataset,
    batch: &[usize],
    cfg: &LossConfig,
) -> Result<(f64, ModelParams)> {
    let traces = batch
        .iter()
        .map(|&i| params.forward_trace(ds.features.row(i)))
        .collect::<Result<Vec<_>>>()?;
    let outs: Vec<_> = traces.iter().map(|t| t.output.clone()).collect();
    let labels: Vec<usize> = batch.iter().map(|&i| ds.noisy_labels[i]).collect();
    let lg = total_loss_grad(&outs, &labels, cfg)?;
    let mut grads = params.zeros_like();
    for (trace, g) in traces.iter().zip(&lg.grads) {
        params.backward(trace, g, &mut grads);
    }
    Ok((lg.loss, grads))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub lr: f64,
    /// Mean of the minibatch objectives, weighted by batch size.
    pub train_loss: f64,
    /// Clean-label accuracy on the evaluation set, if one was given.
    pub test_accuracy: Option<f64>,
    /// Mean aleatoric and epistemic scores on the evaluation set.
    pub mean_aleatoric: Option<f64>,
    pub mean_epistemic: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// Where the final parameters were written, when the caller saved them.
    pub checkpoint: Option<String>,
}

impl TrainReport {
    /// One JSON object per epoch, newline terminated.
    pub fn to_json_lines(&self) -> Result<String> {
        let mut s = String::new();
        for r in &self.epochs {
            s.push_str(&serde_json::to_string(r)?);
            s.push('\n');
        }
        Ok(s)
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

/// Fraction of instances whose Bayes-optimal label equals the clean label.
pub fn evaluate_accuracy(model: &ModelParams, ds: &LabeledDataset) -> Result<f64> {
    let clean = ds
        .clean_labels
        .as_ref()
        .ok_or_else(|| usage("accuracy needs clean labels"))?;
    if ds.is_empty() {
        return Err(usage("accuracy over an empty dataset"));
    }
    let mut hits = 0usize;
    for (x, &y) in ds.features.row_iter().zip(clean) {
        hits += usize::from(bayes_optimal_label(&model.forward(x)?) == y);
    }
    Ok(hits as f64 / ds.len() as f64)
}

fn evaluate(model: &ModelParams, ds: &LabeledDataset) -> Result<(Option<f64>, f64, f64)> {
    let acc = if ds.clean_labels.is_some() {
        Some(evaluate_accuracy(model, ds)?)
    } else {
        None
    };
    let (mut al, mut ep) = (0.0, 0.0);
    for x in ds.features.row_iter() {
        let o = model.forward(x)?;
        al += aleatoric(&o);
        ep += epistemic(&o);
    }
    let n = ds.len().max(1) as f64;
    Ok((acc, al / n, ep / n))
}

fn check_compatible(model: &ModelParams, ds: &LabeledDataset, what: &str) -> Result<()> {
    if ds.dim() != model.input_dim() {
        return Err(usage(format!(
            "{what} has {} features but the model expects {}",
            ds.dim(),
            model.input_dim()
        )));
    }
    if ds.num_classes != model.num_classes() {
        return Err(usage(format!(
            "{what} has {} classes but the model predicts {}",
            ds.num_classes,
            model.num_classes()
        )));
    }
    Ok(())
}

/// Trains `model` on the noisy labels of `dataset`. Shuffles come from a
/// stream of `cfg.seed`, so identical inputs give identical outputs.
pub fn train(
    dataset: &LabeledDataset,
    model: ModelParams,
    cfg: &TrainerConfig,
    eval_set: Option<&LabeledDataset>,
) -> Result<(ModelParams, TrainReport)> {
    cfg.validate()?;
    dataset.validate()?;
    if dataset.is_empty() {
        return Err(usage("cannot train on an empty dataset"));
    }
    check_compatible(&model, dataset, "training set")?;
    if let Some(ev) = eval_set {
        check_compatible(&model, ev, "evaluation set")?;
    }
    if model.num_mixtures() != cfg.num_mixtures {
        return Err(usage(format!(
            "model has {} mixtures but the trainer config asks for {}",
            model.num_mixtures(),
            cfg.num_mixtures
        )));
    }

    let loss_cfg = cfg.loss();
    let mut params = model;
    let mut flat = params.to_flat();
    let mut adam = Adam::new(flat.len(), cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    let mut rng = Rng::with_stream(cfg.seed, SHUFFLE_STREAM);
    let mut report = TrainReport::default();

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let order = rng.permutation(dataset.len());
        let mut weighted = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let (loss, grads) = loss_and_grad(&params, dataset, batch, &loss_cfg)?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch: epoch + 1,
                    batch: b + 1,
                    loss,
                });
            }
            weighted += loss * batch.len() as f64;
            adam.step(&mut flat, &grads.to_flat(), lr);
            if flat.iter().any(|v| !v.is_finite()) {
                return Err(Error::Diverged {
                    epoch: epoch + 1,
                    batch: b + 1,
                    loss,
                });
            }
            params.set_flat(&flat)?;
        }
        let (acc, al, ep) = match eval_set {
            Some(ev) => {
                let (a, al, ep) = evaluate(&params, ev)?;
                (a, Some(al), Some(ep))
            }
            None => (None, None, None),
        };
        report.epochs.push(EpochRecord {
            epoch: epoch + 1,
            lr,
            train_loss: weighted / dataset.len() as f64,
            test_accuracy: acc,
            mean_aleatoric: al,
            mean_epistemic: ep,
        });
    }
    Ok((params, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Architecture;
    use crate::noise::make_two_moons;
    use crate::numerics::Matrix;

    fn arch(k: usize) -> Architecture {
        Architecture {
            input_dim: 2,
            hidden: vec![16, 16],
            num_mixtures: k,
            num_classes: 2,
            sigma_lo: 1.0,
            sigma_hi: 10.0,
        }
    }

    fn cfg(k: usize, epochs: usize) -> TrainerConfig {
        TrainerConfig {
            epochs,
            num_mixtures: k,
            seed: 5,
            ..TrainerConfig::default()
        }
    }

    #[test]
    fn zero_epochs_returns_params_unchanged() {
        let mut rng = Rng::new(1);
        let ds = make_two_moons(50, 0.1, &mut rng).unwrap();
        let model = ModelParams::init(arch(3), &mut rng).unwrap();
        let (out, report) = train(&ds, model.clone(), &cfg(3, 0), None).unwrap();
        assert_eq!(out, model);
        assert!(report.epochs.is_empty());
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let mut adam = Adam::new(3, 0.9, 0.999, 1e-8);
        let mut p = vec![1.0, -2.0, 3.5];
        for _ in 0..10 {
            adam.step(&mut p, &[0.0; 3], 1e-3);
        }
        assert_eq!(p, vec![1.0, -2.0, 3.5]);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut adam = Adam::new(2, 0.9, 0.999, 1e-8);
        let mut p = vec![0.0, 0.0];
        adam.step(&mut p, &[3.0, -0.5], 0.01);
        assert!((p[0] + 0.01).abs() < 1e-9);
        assert!((p[1] - 0.01).abs() < 1e-9);
    }

    #[test]
    fn schedule_steps_down() {
        let c = TrainerConfig {
            lr: 1.0,
            lr_decay_factor: 0.2,
            lr_decay_every: 10,
            ..TrainerConfig::default()
        };
        assert_eq!(c.lr_at(0), 1.0);
        assert_eq!(c.lr_at(9), 1.0);
        assert!((c.lr_at(10) - 0.2).abs() < 1e-15);
        assert!((c.lr_at(25) - 0.04).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        let ok = TrainerConfig::default();
        assert!(ok.validate().is_ok());
        for bad in [
            TrainerConfig {
                batch_size: 0,
                ..ok.clone()
            },
            TrainerConfig {
                lr_decay_factor: 0.0,
                ..ok.clone()
            },
            TrainerConfig {
                lr_decay_factor: 1.5,
                ..ok.clone()
            },
            TrainerConfig {
                sigma_lo: 10.0,
                ..ok.clone()
            },
            TrainerConfig {
                lambda1: -1.0,
                ..ok.clone()
            },
        ] {
            assert!(bad.validate().is_err());
        }
        let parsed: TrainerConfig = serde_json::from_str(r#"{"epochs": 3}"#).unwrap();
        assert_eq!(parsed.epochs, 3);
        assert_eq!(parsed.batch_size, 128);
        assert!(serde_json::from_str::<TrainerConfig>(r#"{"epoch": 3}"#).is_err());
    }

    #[test]
    fn accuracy_examples() {
        // One mixture, no hidden layer: the μ-head alone decides the label.
        let mut model = ModelParams::zeros(Architecture {
            input_dim: 2,
            hidden: vec![],
            num_mixtures: 1,
            num_classes: 2,
            sigma_lo: 1.0,
            sigma_hi: 10.0,
        })
        .unwrap();
        model.mu_head.weight = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let x = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [2.0, 1.0], [0.0, 3.0]]).unwrap();
        let ds = LabeledDataset::new(x.clone(), vec![0, 1, 0, 1], 2).unwrap();
        assert_eq!(evaluate_accuracy(&model, &ds).unwrap(), 1.0);

        model.mu_head.weight = Matrix::zeros(2, 2);
        model.mu_head.bias = vec![1.0, 0.0];
        assert_eq!(evaluate_accuracy(&model, &ds).unwrap(), 0.5);

        let mut unlabeled = ds;
        unlabeled.clean_labels = None;
        assert!(matches!(
            evaluate_accuracy(&model, &unlabeled),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn training_is_deterministic() {
        let mut rng = Rng::new(2);
        let ds = make_two_moons(200, 0.1, &mut rng).unwrap();
        let model = ModelParams::init(arch(3), &mut rng).unwrap();
        let c = TrainerConfig {
            batch_size: 32,
            ..cfg(3, 3)
        };
        let a = train(&ds, model.clone(), &c, Some(&ds)).unwrap();
        let b = train(&ds, model, &c, Some(&ds)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.1.epochs.len(), 3);
        assert_eq!(a.1.to_json_lines().unwrap().lines().count(), 3);
    }

    #[test]
    fn clean_loss_trends_down() {
        let mut rng = Rng::new(3);
        let ds = make_two_moons(300, 0.1, &mut rng).unwrap();
        let model = ModelParams::init(arch(3), &mut rng).unwrap();
        let (_, report) = train(&ds, model, &cfg(3, 50), None).unwrap();
        assert!(report.epochs[49].train_loss < report.epochs[0].train_loss);
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let mut rng = Rng::new(4);
        let ds = make_two_moons(20, 0.1, &mut rng).unwrap();
        let model = ModelParams::init(arch(3), &mut rng).unwrap();
        assert!(train(&ds, model.clone(), &cfg(4, 1), None).is_err());
        let wide = LabeledDataset::new(Matrix::zeros(4, 3), vec![0, 1, 0, 1], 2).unwrap();
        assert!(train(&wide, model, &cfg(3, 1), None).is_err());
    }

    #[test]
    fn huge_learning_rate_reports_divergence_or_stays_finite() {
        let mut rng = Rng::new(6);
        let ds = make_two_moons(64, 0.1, &mut rng).unwrap();
        let model = ModelParams::init(arch(2), &mut rng).unwrap();
        let c = TrainerConfig {
            lr: 1e300,
            ..cfg(2, 2)
        };
        match train(&ds, model, &c, None) {
            Ok((p, _)) => assert!(p.is_finite()),
            Err(e) => assert!(matches!(e, Error::Diverged { .. }), "{e}"),
        }
    }
}
