//! Shared fixtures for the benchmarks.

use mln_core::model::{outputs_for, Architecture, MixtureOutput, ModelParams};
use mln_core::noise::make_two_moons;
use mln_core::{LabeledDataset, Rng};

pub fn moons_model(k: usize, hidden: &[usize], seed: u64) -> (ModelParams, LabeledDataset) {
    let mut rng = Rng::new(seed);
    let data = make_two_moons(1024, 0.1, &mut rng).expect("valid size");
    let arch = Architecture {
        input_dim: 2,
        hidden: hidden.to_vec(),
        num_mixtures: k,
        num_classes: 2,
        sigma_lo: 1.0,
        sigma_hi: 10.0,
    };
    (
        ModelParams::init(arch, &mut rng).expect("valid architecture"),
        data,
    )
}

/// Outputs of an untrained `k`-mixture, `c`-class network on random inputs.
pub fn random_outputs(n: usize, k: usize, c: usize, seed: u64) -> Vec<MixtureOutput> {
    let mut rng = Rng::new(seed);
    let arch = Architecture {
        input_dim: 8,
        hidden: vec![32],
        num_mixtures: k,
        num_classes: c,
        sigma_lo: 1.0,
        sigma_hi: 10.0,
    };
    let params = ModelParams::init(arch, &mut rng).expect("valid architecture");
    let x = mln_core::Matrix::from_vec(n, 8, (0..n * 8).map(|_| rng.normal()).collect())
        .expect("shape");
    outputs_for(&params, &x).expect("finite outputs")
}
