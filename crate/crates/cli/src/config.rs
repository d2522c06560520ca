//! Experiment configuration.
//!
//! A config is one JSON document. Unknown keys are rejected and every range
//! check reports the dotted path of the offending field.

use std::path::{Path, PathBuf};

use mln_core::estimation::PartitionSource;
use mln_core::noise::{Ambiguation, NoiseSpec};
use mln_core::{Architecture, ScoreName, TrainerConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Drives every random choice of the run.
    #[serde(default)]
    pub seed: u64,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub trainer: TrainerBlock,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    TwoMoons,
    Idx,
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub source: Source,
    /// Training instances. Required for two-moons; for IDX a random subset
    /// of this size is drawn.
    #[serde(default)]
    pub n: Option<usize>,
    /// Test instances for two-moons (defaults to `n`), or the IDX test
    /// subset size.
    #[serde(default)]
    pub test_n: Option<usize>,
    #[serde(default = "default_noise_std")]
    pub noise_std: f64,
    #[serde(default)]
    pub images: Option<PathBuf>,
    #[serde(default)]
    pub labels: Option<PathBuf>,
    #[serde(default)]
    pub test_images: Option<PathBuf>,
    #[serde(default)]
    pub test_labels: Option<PathBuf>,
    /// Dataset binary for `source: file`.
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub test_path: Option<PathBuf>,
    #[serde(default)]
    pub ambiguation: Option<AmbiguationConfig>,
    /// Noise on the whole set, or on the ambiguous set when ambiguation is on.
    #[serde(default)]
    pub noise: Option<NoiseSpec>,
    /// Noise on the clean set; only meaningful with ambiguation.
    #[serde(default)]
    pub clean_noise: Option<NoiseSpec>,
}

fn default_noise_std() -> f64 {
    0.1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AmbiguationMethod {
    Interpolate,
    Cutmix,
}

/// `lo`/`hi` bound the mixing weight for interpolation and the pasted area
/// share for CutMix; both default per method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmbiguationConfig {
    pub fraction: f64,
    #[serde(default = "interpolate")]
    pub method: AmbiguationMethod,
    #[serde(default)]
    pub lo: Option<f64>,
    #[serde(default)]
    pub hi: Option<f64>,
}

fn interpolate() -> AmbiguationMethod {
    AmbiguationMethod::Interpolate
}

impl AmbiguationConfig {
    pub fn method(&self) -> Ambiguation {
        match self.method {
            AmbiguationMethod::Interpolate => {
                let Ambiguation::Interpolate { alpha_lo, alpha_hi } = Ambiguation::interpolate()
                else {
                    unreachable!()
                };
                Ambiguation::Interpolate {
                    alpha_lo: self.lo.unwrap_or(alpha_lo),
                    alpha_hi: self.hi.unwrap_or(alpha_hi),
                }
            }
            AmbiguationMethod::Cutmix => {
                let Ambiguation::Cutmix { area_lo, area_hi } = Ambiguation::cutmix() else {
                    unreachable!()
                };
                Ambiguation::Cutmix {
                    area_lo: self.lo.unwrap_or(area_lo),
                    area_hi: self.hi.unwrap_or(area_hi),
                }
            }
        }
    }

    fn bounds(&self) -> (f64, f64) {
        match self.method() {
            Ambiguation::Interpolate { alpha_lo, alpha_hi } => (alpha_lo, alpha_hi),
            Ambiguation::Cutmix { area_lo, area_hi } => (area_lo, area_hi),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub num_mixtures: usize,
    pub sigma_lo: f64,
    pub sigma_hi: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            num_mixtures: 20,
            sigma_lo: 1.0,
            sigma_hi: 10.0,
        }
    }
}

impl ModelConfig {
    pub fn architecture(&self, input_dim: usize, num_classes: usize) -> Architecture {
        Architecture {
            input_dim,
            hidden: self.hidden.clone(),
            num_mixtures: self.num_mixtures,
            num_classes,
            sigma_lo: self.sigma_lo,
            sigma_hi: self.sigma_hi,
        }
    }
}

/// Optimizer and loss settings. Mixture count and σ bounds live in the
/// model block, the seed at the top level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerBlock {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_every: usize,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for TrainerBlock {
    fn default() -> Self {
        let d = TrainerConfig::default();
        Self {
            epochs: d.epochs,
            batch_size: d.batch_size,
            lr: d.lr,
            adam_beta1: d.adam_beta1,
            adam_beta2: d.adam_beta2,
            adam_eps: d.adam_eps,
            lr_decay_factor: d.lr_decay_factor,
            lr_decay_every: d.lr_decay_every,
            lambda1: d.lambda1,
            lambda2: d.lambda2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub scores: Vec<ScoreName>,
    /// Emit CSV/SVG files for the soft estimate.
    pub soft: bool,
    /// Emit CSV/SVG files for the temperature-scaled estimate.
    pub scaled: bool,
    /// Share of the test set split off as a validation set. Per-epoch
    /// evaluation uses it, and the report lists it separately.
    pub holdout_fraction: f64,
    pub partition: PartitionSource,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            scores: ScoreName::ALL.to_vec(),
            soft: true,
            scaled: true,
            holdout_fraction: 0.0,
            partition: PartitionSource::Recorded,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub run_dir: Option<PathBuf>,
    #[serde(default = "yes")]
    pub emit_svg: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            run_dir: None,
            emit_svg: true,
        }
    }
}

fn yes() -> bool {
    true
}

impl ExperimentConfig {
    /// Parses `text`, checks it against the published schema, then applies
    /// the range checks the schema cannot express. Errors name the field.
    pub fn from_json(text: &str) -> CliResult<Self> {
        let doc: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| CliError::config("(root)", format!("invalid JSON: {e}")))?;
        crate::schema::check_experiment(&doc)?;
        let cfg: Self = serde_path_to_error::deserialize(&doc).map_err(|e| {
            let path = e.path().to_string();
            CliError::config(
                if path == "." {
                    "(root)".to_string()
                } else {
                    path
                },
                e.into_inner(),
            )
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> CliResult<()> {
        let d = &self.dataset;
        let positive = |path: &str, v: Option<usize>, min: usize| match v {
            Some(n) if n < min => Err(CliError::config(
                path,
                format!("must be at least {min}, got {n}"),
            )),
            _ => Ok(()),
        };
        match d.source {
            Source::TwoMoons => {
                if d.n.is_none() {
                    return Err(CliError::config("dataset.n", "required for two-moons"));
                }
                positive("dataset.n", d.n, 2)?;
                positive("dataset.test_n", d.test_n, 2)?;
            }
            Source::Idx => {
                if d.images.is_none() {
                    return Err(CliError::config("dataset.images", "required for idx"));
                }
                if d.labels.is_none() {
                    return Err(CliError::config("dataset.labels", "required for idx"));
                }
                if d.test_images.is_some() != d.test_labels.is_some() {
                    return Err(CliError::config(
                        "dataset.test_images",
                        "set together with test_labels",
                    ));
                }
                positive("dataset.n", d.n, 2)?;
                positive("dataset.test_n", d.test_n, 1)?;
            }
            Source::File => {
                if d.path.is_none() {
                    return Err(CliError::config("dataset.path", "required for file"));
                }
            }
        }
        if !(d.noise_std.is_finite() && d.noise_std >= 0.0) {
            return Err(CliError::config(
                "dataset.noise_std",
                format!("must be finite and non-negative, got {}", d.noise_std),
            ));
        }
        for (path, spec) in [
            ("dataset.noise", &d.noise),
            ("dataset.clean_noise", &d.clean_noise),
        ] {
            if let Some(s) = spec {
                unit(&dotted(path, "rate"), s.rate)?;
            }
        }
        match &d.ambiguation {
            Some(a) => {
                unit("dataset.ambiguation.fraction", a.fraction)?;
                let (lo, hi) = a.bounds();
                unit("dataset.ambiguation.lo", lo)?;
                unit("dataset.ambiguation.hi", hi)?;
                if lo > hi {
                    return Err(CliError::config(
                        "dataset.ambiguation.lo",
                        format!("must not exceed hi ({lo} > {hi})"),
                    ));
                }
                if d.noise.is_none() {
                    return Err(CliError::config(
                        "dataset.noise",
                        "required when ambiguation is on",
                    ));
                }
            }
            None => {
                if d.clean_noise.is_some() {
                    return Err(CliError::config(
                        "dataset.clean_noise",
                        "only meaningful with ambiguation",
                    ));
                }
            }
        }

        let m = &self.model;
        if let Some(i) = m.hidden.iter().position(|&w| w == 0) {
            return Err(CliError::config(
                format!("model.hidden[{i}]"),
                "layer width must be positive",
            ));
        }
        if m.num_mixtures == 0 {
            return Err(CliError::config("model.num_mixtures", "must be at least 1"));
        }
        if !(m.sigma_lo.is_finite() && m.sigma_lo > 0.0) {
            return Err(CliError::config(
                "model.sigma_lo",
                format!("must be positive, got {}", m.sigma_lo),
            ));
        }
        if !(m.sigma_hi.is_finite() && m.sigma_hi > m.sigma_lo) {
            return Err(CliError::config(
                "model.sigma_hi",
                format!("must exceed sigma_lo, got {}", m.sigma_hi),
            ));
        }

        self.trainer_config()
            .validate()
            .map_err(|e| CliError::config("trainer", e))?;

        let h = self.eval.holdout_fraction;
        if !(0.0..1.0).contains(&h) {
            return Err(CliError::config(
                "eval.holdout_fraction",
                format!("must lie in [0, 1), got {h}"),
            ));
        }
        Ok(())
    }

    pub fn trainer_config(&self) -> TrainerConfig {
        let t = &self.trainer;
        TrainerConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.lr,
            adam_beta1: t.adam_beta1,
            adam_beta2: t.adam_beta2,
            adam_eps: t.adam_eps,
            lr_decay_factor: t.lr_decay_factor,
            lr_decay_every: t.lr_decay_every,
            num_mixtures: self.model.num_mixtures,
            lambda1: t.lambda1,
            lambda2: t.lambda2,
            sigma_lo: self.model.sigma_lo,
            sigma_hi: self.model.sigma_hi,
            seed: self.seed,
        }
    }

    /// SHA-256 of the canonical JSON serialization, hex encoded.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex(&Sha256::digest(&bytes))
    }
}

fn dotted(prefix: &str, field: &str) -> String {
    format!("{prefix}.{field}")
}

fn unit(path: &str, v: f64) -> CliResult<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(CliError::config(
            path,
            format!("must lie in [0, 1], got {v}"),
        ))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
