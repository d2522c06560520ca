//! Per-instance uncertainty scores of a mixture output.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{usage, Error};
use crate::model::MixtureOutput;
use crate::numerics::{entropy, softmax_into};

/// Logit disagreement across mixtures:
/// `Σ_j Σ_c π_j (μ_j[c] − Σ_k π_k μ_k[c])²`, over raw logits.
pub fn epistemic(out: &MixtureOutput) -> f64 {
    let pi = out.pi();
    let mu = out.mu();
    let mut total = 0.0;
    for c in 0..mu.cols() {
        let mean: f64 = pi.iter().enumerate().map(|(k, &w)| w * mu[(k, c)]).sum();
        for (j, &w) in pi.iter().enumerate() {
            let d = mu[(j, c)] - mean;
            total += w * d * d;
        }
    }
    total.max(0.0)
}

/// `Σ_k π_k σ_k`. Reported as the aleatoric term even though it is a
/// weighted mean of scales rather than of variances.
pub fn aleatoric(out: &MixtureOutput) -> f64 {
    out.pi().iter().zip(out.sigma()).map(|(p, s)| p * s).sum()
}

fn dominant_probs(out: &MixtureOutput) -> Vec<f64> {
    let k = out.dominant_mixture();
    let mut p = vec![0.0; out.num_classes()];
    softmax_into(out.mu().row(k), &mut p);
    p
}

/// `1 − max_c softmax(μ_k*)_c` with `k*` the heaviest mixture.
pub fn max_softmax_score(out: &MixtureOutput) -> f64 {
    let p = dominant_probs(out);
    1.0 - p.iter().copied().fold(0.0, f64::max)
}

/// Entropy (nats) of `softmax(μ_k*)` with `k*` the heaviest mixture.
pub fn softmax_entropy_score(out: &MixtureOutput) -> f64 {
    entropy(&dominant_probs(out))
}

/// Entropy (nats) of the mixture weights.
pub fn pi_entropy_score(out: &MixtureOutput) -> f64 {
    entropy(out.pi())
}

/// The five scores for one instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyRecord {
    pub aleatoric: f64,
    pub epistemic: f64,
    pub max_softmax: f64,
    pub softmax_entropy: f64,
    pub pi_entropy: f64,
}

impl UncertaintyRecord {
    pub fn from_output(out: &MixtureOutput) -> Self {
        Self {
            aleatoric: aleatoric(out),
            epistemic: epistemic(out),
            max_softmax: max_softmax_score(out),
            softmax_entropy: softmax_entropy_score(out),
            pi_entropy: pi_entropy_score(out),
        }
    }

    pub fn get(&self, score: ScoreName) -> f64 {
        match score {
            ScoreName::Aleatoric => self.aleatoric,
            ScoreName::Epistemic => self.epistemic,
            ScoreName::MaxSoftmax => self.max_softmax,
            ScoreName::SoftmaxEntropy => self.softmax_entropy,
            ScoreName::PiEntropy => self.pi_entropy,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreName {
    Aleatoric,
    Epistemic,
    MaxSoftmax,
    SoftmaxEntropy,
    PiEntropy,
}

impl ScoreName {
    pub const ALL: [ScoreName; 5] = [
        ScoreName::Aleatoric,
        ScoreName::Epistemic,
        ScoreName::PiEntropy,
        ScoreName::MaxSoftmax,
        ScoreName::SoftmaxEntropy,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScoreName::Aleatoric => "aleatoric",
            ScoreName::Epistemic => "epistemic",
            ScoreName::MaxSoftmax => "max-softmax",
            ScoreName::SoftmaxEntropy => "softmax-entropy",
            ScoreName::PiEntropy => "pi-entropy",
        }
    }
}

impl fmt::Display for ScoreName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScoreName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        ScoreName::ALL
            .into_iter()
            .find(|n| n.as_str() == s || n.as_str().replace('-', "_") == s)
            .ok_or_else(|| {
                usage(format!(
                    "unknown uncertainty score `{s}` (expected one of aleatoric, epistemic, pi-entropy, max-softmax, softmax-entropy)"
                ))
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Matrix, Rng};

    fn out(pi: &[f64], mu: &[&[f64]], sigma: &[f64]) -> MixtureOutput {
        MixtureOutput::new(
            pi.to_vec(),
            Matrix::from_rows(mu).unwrap(),
            sigma.to_vec(),
            1.0,
            10.0,
        )
        .unwrap()
    }

    #[test]
    fn epistemic_examples() {
        assert_eq!(
            epistemic(&out(&[0.3, 0.7], &[&[1.0, 2.0], &[1.0, 2.0]], &[2.0, 2.0])),
            0.0
        );
        assert_eq!(epistemic(&out(&[1.0], &[&[3.0, -2.0]], &[2.0])), 0.0);
        let v = epistemic(&out(&[0.5, 0.5], &[&[1.0, 0.0], &[0.0, 1.0]], &[2.0, 2.0]));
        assert!((v - 0.5).abs() < 1e-15);
    }

    #[test]
    fn epistemic_ignores_rows_without_weight() {
        let v = epistemic(&out(&[1.0, 0.0], &[&[1.0, 0.0], &[9.0, -9.0]], &[2.0, 2.0]));
        assert_eq!(v, 0.0);
    }

    #[test]
    fn aleatoric_examples() {
        let unit = MixtureOutput::new(
            vec![0.2, 0.8],
            Matrix::zeros(2, 2),
            vec![1.0, 1.0],
            0.5,
            10.0,
        )
        .unwrap();
        assert_eq!(aleatoric(&unit), 1.0);
        assert_eq!(
            aleatoric(&out(
                &[0.25, 0.75],
                &[&[0.0, 0.0], &[0.0, 0.0]],
                &[2.0, 4.0]
            )),
            3.5
        );
        assert_eq!(aleatoric(&out(&[1.0], &[&[0.0, 0.0]], &[7.0])), 7.0);
    }

    #[test]
    fn max_softmax_examples() {
        assert!(max_softmax_score(&out(&[1.0], &[&[50.0, 0.0]], &[2.0])) < 1e-20);
        assert_eq!(max_softmax_score(&out(&[1.0], &[&[0.0, 0.0]], &[2.0])), 0.5);
        let v = max_softmax_score(&out(&[1.0], &[&[2f64.ln(), 0.0, 0.0]], &[2.0]));
        assert!((v - 0.5).abs() < 1e-15);
        // Only the heaviest mixture counts.
        let v = max_softmax_score(&out(&[0.4, 0.6], &[&[50.0, 0.0], &[0.0, 0.0]], &[2.0, 2.0]));
        assert_eq!(v, 0.5);
    }

    #[test]
    fn softmax_entropy_examples() {
        let v = softmax_entropy_score(&out(&[1.0], &[&[0.0; 4]], &[2.0]));
        assert!((v - 4f64.ln()).abs() < 1e-15);
        assert!(softmax_entropy_score(&out(&[1.0], &[&[60.0, 0.0, 0.0]], &[2.0])) < 1e-20);
        let v = softmax_entropy_score(&out(&[1.0], &[&[2f64.ln(), 0.0, 0.0]], &[2.0]));
        assert!((v - 1.0397).abs() < 1e-3);
        // Hand value: −(0.5 ln 0.5 + 2·0.25 ln 0.25) = 1.5 ln 2.
        assert!((v - 1.5 * 2f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn pi_entropy_examples() {
        let k = 20;
        let uniform = vec![1.0 / k as f64; k];
        let rows = vec![vec![0.0, 0.0]; k];
        let rows: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let v = pi_entropy_score(&out(&uniform, &rows, &vec![2.0; k]));
        assert!((v - 20f64.ln()).abs() < 1e-12);
        assert_eq!(
            pi_entropy_score(&out(&[0.0, 1.0, 0.0], &[&[0.0, 0.0][..]; 3], &[2.0; 3])),
            0.0
        );
        let v = pi_entropy_score(&out(&[0.5, 0.25, 0.25], &[&[0.0, 0.0][..]; 3], &[2.0; 3]));
        assert!((v - 1.0397).abs() < 1e-3);
    }

    fn random_output(rng: &mut Rng) -> MixtureOutput {
        let k = 1 + rng.below(8);
        let c = 2 + rng.below(8);
        let mut pi: Vec<f64> = (0..k).map(|_| rng.uniform()).collect();
        let s: f64 = pi.iter().sum();
        pi.iter_mut().for_each(|p| *p /= s);
        let mu = Matrix::from_vec(
            k,
            c,
            (0..k * c).map(|_| rng.uniform_range(-20.0, 20.0)).collect(),
        )
        .unwrap();
        let sigma = (0..k)
            .map(|_| rng.uniform_range(1.0 + 1e-9, 10.0))
            .collect();
        MixtureOutput::new(pi, mu, sigma, 1.0, 10.0).unwrap()
    }

    #[test]
    fn records_stay_in_range() {
        let mut rng = Rng::new(21);
        for _ in 0..2000 {
            let o = random_output(&mut rng);
            let r = UncertaintyRecord::from_output(&o);
            let (k, c) = (o.num_mixtures() as f64, o.num_classes() as f64);
            assert!(r.epistemic >= 0.0);
            assert!(r.aleatoric > 1.0 - 1e-12 && r.aleatoric < 10.0 + 1e-12);
            assert!(r.max_softmax >= 0.0 && r.max_softmax <= (c - 1.0) / c + 1e-12);
            assert!(r.softmax_entropy >= 0.0 && r.softmax_entropy <= c.ln() + 1e-12);
            assert!(r.pi_entropy >= 0.0 && r.pi_entropy <= k.ln() + 1e-12);
            assert_eq!(r, UncertaintyRecord::from_output(&o));
        }
    }

    #[test]
    fn epistemic_invariant_to_common_row_shift() {
        let mut rng = Rng::new(22);
        for _ in 0..500 {
            let o = random_output(&mut rng);
            let (k, c) = (o.num_mixtures(), o.num_classes());
            let shift: Vec<f64> = (0..c).map(|_| rng.uniform_range(-50.0, 50.0)).collect();
            let mut mu = o.mu().clone();
            for j in 0..k {
                for (v, s) in mu.row_mut(j).iter_mut().zip(&shift) {
                    *v += s;
                }
            }
            let shifted =
                MixtureOutput::new(o.pi().to_vec(), mu, o.sigma().to_vec(), 1.0, 10.0).unwrap();
            assert!((epistemic(&o) - epistemic(&shifted)).abs() < 1e-9);
        }
    }

    #[test]
    fn epistemic_positive_when_weighted_rows_differ() {
        let v = epistemic(&out(&[0.9, 0.1], &[&[0.0, 0.0], &[0.0, 1e-3]], &[2.0, 2.0]));
        assert!(v > 0.0);
    }

    #[test]
    fn score_names_parse() {
        for n in ScoreName::ALL {
            assert_eq!(n.as_str().parse::<ScoreName>().unwrap(), n);
        }
        assert_eq!(
            "pi_entropy".parse::<ScoreName>().unwrap(),
            ScoreName::PiEntropy
        );
        assert!(matches!(
            "variance".parse::<ScoreName>(),
            Err(Error::Usage(_))
        ));
    }
}
