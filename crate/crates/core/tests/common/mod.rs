//! Oracles shared by the integration and acceptance tests. Each one is a
//! direct, slow re-derivation that does not call the code under test.

#![allow(dead_code)]

use mln_core::loss::{total_loss, LossConfig};
use mln_core::model::{outputs_for, Architecture, MixtureOutput, ModelParams};
use mln_core::noise::LabeledDataset;
use mln_core::numerics::{Matrix, Rng};

/// Fourth-order central difference of `f` at `theta`.
pub fn five_point_gradient(mut f: impl FnMut(&[f64]) -> f64, theta: &[f64], h: f64) -> Vec<f64> {
    let mut x = theta.to_vec();
    let mut g = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        let at = |x: &mut Vec<f64>, d: f64, f: &mut dyn FnMut(&[f64]) -> f64| {
            x[i] = theta[i] + d;
            f(x)
        };
        let p2 = at(&mut x, 2.0 * h, &mut f);
        let p1 = at(&mut x, h, &mut f);
        let m1 = at(&mut x, -h, &mut f);
        let m2 = at(&mut x, -2.0 * h, &mut f);
        x[i] = theta[i];
        g.push((-p2 + 8.0 * p1 - 8.0 * m1 + m2) / (12.0 * h));
    }
    g
}

pub struct GradCase {
    pub params: ModelParams,
    pub data: LabeledDataset,
    pub cfg: LossConfig,
}

pub fn random_grad_case(rng: &mut Rng, cfg: LossConfig) -> GradCase {
    let input_dim = 1 + rng.below(3);
    let depth = rng.below(3);
    let hidden: Vec<usize> = (0..depth).map(|_| 2 + rng.below(4)).collect();
    let num_mixtures = 1 + rng.below(4);
    let num_classes = 2 + rng.below(3);
    let arch = Architecture {
        input_dim,
        hidden,
        num_mixtures,
        num_classes,
        sigma_lo: 1.0,
        sigma_hi: 10.0,
    };
    let mut params = ModelParams::init(arch, rng).unwrap();
    // Non-zero biases so every path is exercised.
    let mut flat = params.to_flat();
    flat.iter_mut().for_each(|v| *v += 0.3 * rng.normal());
    params.set_flat(&flat).unwrap();
    let n = 1 + rng.below(5);
    let x = Matrix::from_vec(
        n,
        input_dim,
        (0..n * input_dim).map(|_| rng.normal()).collect(),
    )
    .unwrap();
    let labels = (0..n).map(|_| rng.below(num_classes)).collect();
    GradCase {
        params,
        data: LabeledDataset::new(x, labels, num_classes).unwrap(),
        cfg,
    }
}

/// Objective as a function of the flat parameter vector.
pub fn objective_at(case: &GradCase, flat: &[f64]) -> f64 {
    let mut p = case.params.clone();
    p.set_flat(flat).unwrap();
    let outs = outputs_for(&p, &case.data.features).unwrap();
    total_loss(&outs, &case.data.noisy_labels, &case.cfg).unwrap()
}

/// Largest relative error over coordinates where either gradient exceeds
/// `floor` in magnitude.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .filter(|(a, n)| a.abs() > floor || n.abs() > floor)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()))
        .fold(0.0, f64::max)
}

pub fn random_simplex(rng: &mut Rng, k: usize) -> Vec<f64> {
    let mut p: Vec<f64> = (0..k).map(|_| -rng.uniform().max(1e-300).ln()).collect();
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= s);
    p
}

/// Random valid output; logit scale varies over several orders of magnitude
/// so saturated softmaxes and exact argmax ties both occur.
pub fn random_output(rng: &mut Rng, k: usize, c: usize) -> MixtureOutput {
    let pi = random_simplex(rng, k);
    let scale = [0.1, 1.0, 10.0, 100.0][rng.below(4)];
    let mu: Vec<f64> = (0..k * c)
        .map(|_| {
            if rng.below(10) == 0 {
                0.0
            } else {
                scale * rng.normal()
            }
        })
        .collect();
    let sigma = (0..k)
        .map(|_| rng.uniform_range(1.0 + 1e-9, 10.0))
        .collect();
    MixtureOutput::new(pi, Matrix::from_vec(k, c, mu).unwrap(), sigma, 1.0, 10.0).unwrap()
}

/// Total variation as the largest probability gap over all events.
pub fn tv_by_events(p: &[f64], q: &[f64]) -> f64 {
    let c = p.len();
    let mut best: f64 = 0.0;
    for set in 0u32..(1 << c) {
        let (mut a, mut b) = (0.0, 0.0);
        for j in 0..c {
            if set & (1 << j) != 0 {
                a += p[j];
                b += q[j];
            }
        }
        best = best.max((a - b).abs());
    }
    best
}

pub fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Rank distance from sign differences: for a column pair with signs
/// `s, s' ∈ {−1, 0, 1}` in the two rows, `|s − s'|` is the disagreement in
/// half units. Summed over ordered pairs (each unordered pair twice) and
/// returned as a reduced fraction of the per-row normalized mean.
pub fn ktd_by_signs(t: &[Vec<f64>], u: &[Vec<f64>]) -> (u64, u64) {
    let c = t.len();
    let sign = |x: f64, y: f64| (x > y) as i64 - (x < y) as i64;
    let mut ordered = 0u64;
    for (a, b) in t.iter().zip(u) {
        for j in 0..c {
            for k in 0..c {
                if j != k {
                    ordered += (sign(a[j], a[k]) - sign(b[j], b[k])).unsigned_abs();
                }
            }
        }
    }
    // Ordered sum is twice the half-unit count; the normalizer is
    // 2 · C(C−1)/2 · C = C²(C−1) half units.
    let (num, den) = (ordered, (c * c * (c - 1)) as u64 * 2);
    let g = gcd(num, den).max(1);
    (num / g, den / g)
}

/// `2·#(pos > neg) + #(pos = neg)` over all pairs, and `2·P·N`.
pub fn auroc_by_pairs(scores: &[f64], positives: &[bool]) -> (u64, u64) {
    let (mut wins2, mut pairs) = (0u64, 0u64);
    for (i, &si) in scores.iter().enumerate() {
        if !positives[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if positives[j] {
                continue;
            }
            pairs += 1;
            wins2 += if si > sj {
                2
            } else if si == sj {
                1
            } else {
                0
            };
        }
    }
    (wins2, 2 * pairs)
}
