//! Mixture logit networks for classification under label noise.
//!
//! The crate covers the whole pipeline of a small experiment:
//!
//! * [`noise`]: synthetic datasets, label corruption and instance ambiguation.
//! * [`model`]: the mixture logit network and its analytic gradients.
//! * [`loss`] and [`trainer`]: the attenuated mixture loss with
//!   uncertainty regularization, minimized with Adam.
//! * [`uncertainty`]: per-instance aleatoric/epistemic and auxiliary scores.
//! * [`estimation`] and [`metrics`]: anchor-free transition-matrix
//!   estimation, uncertainty-based set partitioning, ATV, KTD and AUROC.
//! * [`formats`]: checkpoint, dataset and matrix file formats.

// Range checks are written `!(x > lo)` so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod estimation;
pub mod formats;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod noise;
pub mod numerics;
pub mod trainer;
pub mod uncertainty;

pub use error::{Error, Result};
pub use loss::LossConfig;
pub use model::{Architecture, MixtureOutput, ModelParams};
pub use noise::{LabeledDataset, NoisePattern, NoiseSpec, SetTag, TransitionMatrix};
pub use numerics::{Matrix, Rng};
pub use trainer::{TrainReport, TrainerConfig};
pub use uncertainty::{ScoreName, UncertaintyRecord};
