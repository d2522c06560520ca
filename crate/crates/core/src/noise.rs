//! Corrupted dataset construction.
//!
//! Label noise is class-conditional: a row-stochastic matrix `T` with
//! `T[i][j] = P(noisy = j | clean = i)`. Set-dependent noise splits a dataset
//! into a clean part and an ambiguous part (instances blended with an
//! instance of another class) and corrupts each part with its own `T`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{usage, Error, Result};
use crate::numerics::{Matrix, Rng};

pub use crate::formats::load_idx;

/// Which partition an instance or a matrix belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SetTag {
    /// The whole dataset (class-conditional noise).
    Total,
    Clean,
    Ambiguous,
}

impl SetTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SetTag::Total => "total",
            SetTag::Clean => "clean",
            SetTag::Ambiguous => "ambiguous",
        }
    }

    /// Set-index value stored per instance; `None` for [`SetTag::Total`].
    pub fn index(self) -> Option<u8> {
        match self {
            SetTag::Total => None,
            SetTag::Clean => Some(0),
            SetTag::Ambiguous => Some(1),
        }
    }
}

impl fmt::Display for SetTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Features with noisy labels and optional ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    /// `N × D`.
    pub features: Matrix,
    pub noisy_labels: Vec<usize>,
    pub clean_labels: Option<Vec<usize>>,
    /// 0 = clean, 1 = ambiguous; present only for set-dependent data.
    pub set_index: Option<Vec<u8>>,
    pub num_classes: usize,
    /// `(height, width)` when each feature row is a flattened image.
    pub image_shape: Option<(usize, usize)>,
}

impl LabeledDataset {
    pub fn new(features: Matrix, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        let ds = Self {
            features,
            clean_labels: Some(labels.clone()),
            noisy_labels: labels,
            set_index: None,
            num_classes,
            image_shape: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.num_classes < 2 {
            return Err(usage("a dataset needs at least two classes"));
        }
        if self.noisy_labels.len() != n {
            return Err(usage(format!(
                "{n} feature rows but {} labels",
                self.noisy_labels.len()
            )));
        }
        let check = |labels: &[usize], what: &str| -> Result<()> {
            if let Some((i, &y)) = labels
                .iter()
                .enumerate()
                .find(|(_, &y)| y >= self.num_classes)
            {
                return Err(usage(format!(
                    "{what} label {y} at {i} is out of range for {} classes",
                    self.num_classes
                )));
            }
            Ok(())
        };
        check(&self.noisy_labels, "noisy")?;
        if let Some(clean) = &self.clean_labels {
            if clean.len() != n {
                return Err(usage("clean label count differs from feature rows"));
            }
            check(clean, "clean")?;
        }
        if let Some(set) = &self.set_index {
            if set.len() != n || set.iter().any(|&s| s > 1) {
                return Err(usage("set index must hold one 0/1 value per instance"));
            }
        }
        if let Some((h, w)) = self.image_shape {
            if h * w != self.dim() {
                return Err(usage(format!(
                    "image shape {h}x{w} does not match {} features",
                    self.dim()
                )));
            }
        }
        Ok(())
    }

    /// Ground-truth labels, falling back to the observed labels when the
    /// dataset carries no separate clean copy.
    pub fn truth(&self) -> &[usize] {
        self.clean_labels.as_deref().unwrap_or(&self.noisy_labels)
    }

    /// Membership mask of a partition. `Total` selects everything.
    pub fn mask(&self, tag: SetTag) -> Result<Vec<bool>> {
        match (tag.index(), &self.set_index) {
            (None, _) => Ok(vec![true; self.len()]),
            (Some(v), Some(set)) => Ok(set.iter().map(|&s| s == v).collect()),
            (Some(_), None) => Err(usage(format!(
                "dataset has no set index, cannot select the {tag} set"
            ))),
        }
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let d = self.dim();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(self.features.row(i));
        }
        let pick = |v: &Vec<usize>| indices.iter().map(|&i| v[i]).collect();
        Self {
            features: Matrix::from_vec(indices.len(), d, data)
                .expect("rows copied from a valid matrix"),
            noisy_labels: pick(&self.noisy_labels),
            clean_labels: self.clean_labels.as_ref().map(pick),
            set_index: self
                .set_index
                .as_ref()
                .map(|s| indices.iter().map(|&i| s[i]).collect()),
            num_classes: self.num_classes,
            image_shape: self.image_shape,
        }
    }
}

/// Whether a matrix is a generating truth or an estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatrixOrigin {
    GroundTruth,
    /// Soft estimate from the mixture softmaxes.
    Estimated,
    /// Zero-temperature estimate (argmax indicators).
    EstimatedScaled,
}

impl MatrixOrigin {
    pub fn as_str(self) -> &'static str {
        match self {
            MatrixOrigin::GroundTruth => "ground-truth",
            MatrixOrigin::Estimated => "estimated",
            MatrixOrigin::EstimatedScaled => "estimated-scaled",
        }
    }
}

/// Row-stochastic `C × C` matrix, `T[i][j] = P(noisy = j | clean = i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TransitionRepr", into = "TransitionRepr")]
pub struct TransitionMatrix {
    entries: Matrix,
    pub origin: MatrixOrigin,
    pub set_tag: SetTag,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TransitionRepr {
    origin: MatrixOrigin,
    set_tag: SetTag,
    entries: Vec<Vec<f64>>,
}

impl TryFrom<TransitionRepr> for TransitionMatrix {
    type Error = Error;

    fn try_from(r: TransitionRepr) -> Result<Self> {
        Self::new(Matrix::from_rows(&r.entries)?, r.origin, r.set_tag)
    }
}

impl From<TransitionMatrix> for TransitionRepr {
    fn from(t: TransitionMatrix) -> Self {
        Self {
            origin: t.origin,
            set_tag: t.set_tag,
            entries: t.entries.to_rows(),
        }
    }
}

/// Row-sum tolerance of a transition matrix.
pub const ROW_SUM_TOL: f64 = 1e-9;

impl TransitionMatrix {
    pub fn new(entries: Matrix, origin: MatrixOrigin, set_tag: SetTag) -> Result<Self> {
        if entries.rows() != entries.cols() || entries.rows() == 0 {
            return Err(usage(format!(
                "transition matrix must be square and non-empty, got {}x{}",
                entries.rows(),
                entries.cols()
            )));
        }
        for (i, row) in entries.row_iter().enumerate() {
            if row.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(usage(format!(
                    "transition row {i} has entries outside [0, 1]"
                )));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_SUM_TOL {
                return Err(usage(format!("transition row {i} sums to {s}")));
            }
        }
        Ok(Self {
            entries,
            origin,
            set_tag,
        })
    }

    pub fn identity(c: usize, set_tag: SetTag) -> Self {
        Self {
            entries: Matrix::identity(c),
            origin: MatrixOrigin::GroundTruth,
            set_tag,
        }
    }

    pub fn entries(&self) -> &Matrix {
        &self.entries
    }

    pub fn num_classes(&self) -> usize {
        self.entries.rows()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.entries.row(i)
    }

    pub fn with_tag(mut self, set_tag: SetTag) -> Self {
        self.set_tag = set_tag;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoisePattern {
    /// Uniform flips to every other class.
    Symmetric,
    /// Pair flip `i → i+1 mod C`.
    Asymmetric,
    /// `i → i+1, i+2 (mod C)`, half the rate each.
    Dual,
    /// `i → i+1, i+2, i+3 (mod C)`, a third of the rate each.
    Tridiagonal,
}

impl NoisePattern {
    fn targets(self, c: usize) -> usize {
        match self {
            NoisePattern::Symmetric => c - 1,
            NoisePattern::Asymmetric => 1,
            NoisePattern::Dual => 2,
            NoisePattern::Tridiagonal => 3,
        }
    }
}

impl FromStr for NoisePattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "symmetric" | "symmetry" => Ok(NoisePattern::Symmetric),
            "asymmetric" | "asymmetry" | "pairflip" => Ok(NoisePattern::Asymmetric),
            "dual" => Ok(NoisePattern::Dual),
            "tridiagonal" => Ok(NoisePattern::Tridiagonal),
            other => Err(usage(format!("unknown noise pattern `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub pattern: NoisePattern,
    pub rate: f64,
}

impl NoiseSpec {
    pub fn new(pattern: NoisePattern, rate: f64) -> Self {
        Self { pattern, rate }
    }

    pub fn validate(&self, c: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rate) {
            return Err(usage(format!(
                "noise rate must lie in [0, 1], got {}",
                self.rate
            )));
        }
        let need = self.pattern.targets(c) + 1;
        let min_c = match self.pattern {
            NoisePattern::Symmetric => 2,
            _ => need,
        };
        if c < min_c {
            return Err(usage(format!(
                "{:?} noise needs at least {min_c} classes, got {c}",
                self.pattern
            )));
        }
        Ok(())
    }
}

pub fn make_transition_matrix(spec: &NoiseSpec, c: usize) -> Result<TransitionMatrix> {
    spec.validate(c)?;
    let r = spec.rate;
    let targets = spec.pattern.targets(c);
    let share = r / targets as f64;
    let mut t = Matrix::zeros(c, c);
    for i in 0..c {
        t[(i, i)] = 1.0 - r;
        match spec.pattern {
            NoisePattern::Symmetric => {
                for j in (0..c).filter(|&j| j != i) {
                    t[(i, j)] = share;
                }
            }
            _ => {
                for step in 1..=targets {
                    t[(i, (i + step) % c)] = share;
                }
            }
        }
    }
    TransitionMatrix::new(t, MatrixOrigin::GroundTruth, SetTag::Total)
}

/// Draws each noisy label independently from row `y_i` of `t`.
pub fn corrupt_labels(labels: &[usize], t: &TransitionMatrix, rng: &mut Rng) -> Result<Vec<usize>> {
    let c = t.num_classes();
    if let Some(&y) = labels.iter().find(|&&y| y >= c) {
        return Err(usage(format!("label {y} is out of range for {c} classes")));
    }
    Ok(labels.iter().map(|&y| rng.categorical(t.row(y))).collect())
}

/// Counting estimate `T[i][j] = #(clean = i, noisy = j) / #(clean = i)` over
/// the instances selected by `mask` (all when `None`).
pub fn empirical_transition(
    clean: &[usize],
    noisy: &[usize],
    mask: Option<&[bool]>,
    num_classes: usize,
) -> Result<TransitionMatrix> {
    if clean.len() != noisy.len() {
        return Err(usage(format!(
            "{} clean labels but {} noisy labels",
            clean.len(),
            noisy.len()
        )));
    }
    if let Some(m) = mask {
        if m.len() != clean.len() {
            return Err(usage("mask length differs from label count"));
        }
    }
    let mut counts = vec![vec![0usize; num_classes]; num_classes];
    for (i, (&y, &yn)) in clean.iter().zip(noisy).enumerate() {
        if mask.is_some_and(|m| !m[i]) {
            continue;
        }
        if y >= num_classes || yn >= num_classes {
            return Err(usage(format!("label out of range at position {i}")));
        }
        counts[y][yn] += 1;
    }
    let mut t = Matrix::zeros(num_classes, num_classes);
    for (i, row) in counts.iter().enumerate() {
        let total: usize = row.iter().sum();
        if total == 0 {
            return Err(Error::EmptyClassRow { class: i });
        }
        for (j, &n) in row.iter().enumerate() {
            t[(i, j)] = n as f64 / total as f64;
        }
    }
    TransitionMatrix::new(t, MatrixOrigin::GroundTruth, SetTag::Total)
}

/// Two interleaving half circles. Class 0 is the upper moon
/// `(cos t, sin t)`, class 1 the lower moon `(1 − cos t, 0.5 − sin t)`,
/// `t ∈ [0, π]`, each coordinate jittered by `N(0, noise_std²)`.
/// Rows come out shuffled.
pub fn make_two_moons(n: usize, noise_std: f64, rng: &mut Rng) -> Result<LabeledDataset> {
    if n < 2 {
        return Err(usage("two moons needs at least two points"));
    }
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return Err(usage("noise_std must be finite and non-negative"));
    }
    let upper = n - n / 2;
    let order = rng.permutation(n);
    let mut rows = vec![[0.0; 2]; n];
    let mut labels = vec![0; n];
    for (i, &slot) in order.iter().enumerate() {
        let t = rng.uniform_range(0.0, std::f64::consts::PI);
        let (x, y, label) = if i < upper {
            (t.cos(), t.sin(), 0)
        } else {
            (1.0 - t.cos(), 0.5 - t.sin(), 1)
        };
        let (jx, jy) = if noise_std > 0.0 {
            (noise_std * rng.normal(), noise_std * rng.normal())
        } else {
            (0.0, 0.0)
        };
        rows[slot] = [x + jx, y + jy];
        labels[slot] = label;
    }
    LabeledDataset::new(Matrix::from_rows(&rows)?, labels, 2)
}

/// How ambiguous instances are produced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase", deny_unknown_fields)]
pub enum Ambiguation {
    /// `x̃ = (1 − α)x + α x′`, `α ~ U[alpha_lo, alpha_hi]`.
    Interpolate { alpha_lo: f64, alpha_hi: f64 },
    /// Paste a box of `x′` covering a `U[area_lo, area_hi]` share of the
    /// image into `x`.
    Cutmix { area_lo: f64, area_hi: f64 },
}

impl Ambiguation {
    pub fn interpolate() -> Self {
        Ambiguation::Interpolate {
            alpha_lo: 0.25,
            alpha_hi: 0.45,
        }
    }

    pub fn cutmix() -> Self {
        Ambiguation::Cutmix {
            area_lo: 0.25,
            area_hi: 0.5,
        }
    }

    fn validate(&self) -> Result<()> {
        let (lo, hi) = match *self {
            Ambiguation::Interpolate { alpha_lo, alpha_hi } => (alpha_lo, alpha_hi),
            Ambiguation::Cutmix { area_lo, area_hi } => (area_lo, area_hi),
        };
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(usage(format!(
                "ambiguation range [{lo}, {hi}] must satisfy 0 ≤ lo ≤ hi ≤ 1"
            )));
        }
        Ok(())
    }
}

/// Marks `round(fraction · N)` randomly chosen instances ambiguous and blends
/// each with a donor of a different ground-truth class. Labels are left
/// untouched; only features and the set index change.
pub fn ambiguate(
    dataset: &LabeledDataset,
    fraction: f64,
    method: Ambiguation,
    rng: &mut Rng,
) -> Result<LabeledDataset> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(usage(format!(
            "ambiguous fraction must lie in [0, 1], got {fraction}"
        )));
    }
    method.validate()?;
    let shape = match method {
        Ambiguation::Cutmix { .. } => Some(dataset.image_shape.ok_or_else(|| {
            usage("cutmix needs image-shaped features (dataset has no image shape)")
        })?),
        Ambiguation::Interpolate { .. } => None,
    };
    let n = dataset.len();
    let count = (fraction * n as f64).round() as usize;
    let truth = dataset.truth();

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.num_classes];
    for (i, &y) in truth.iter().enumerate() {
        by_class[y].push(i);
    }

    let chosen = {
        let mut order = rng.permutation(n);
        order.truncate(count);
        order
    };
    let mut out = dataset.clone();
    let mut set = vec![0u8; n];
    for &i in &chosen {
        let own = truth[i];
        let others = n - by_class[own].len();
        if others == 0 {
            return Err(usage(format!(
                "cannot ambiguate instance {i}: no instance of another class to pair with"
            )));
        }
        // Uniform over instances of every other class.
        let mut pick = rng.below(others);
        let donor = by_class
            .iter()
            .enumerate()
            .filter(|(c, _)| *c != own)
            .find_map(|(_, members)| {
                if pick < members.len() {
                    Some(members[pick])
                } else {
                    pick -= members.len();
                    None
                }
            })
            .expect("pick indexes into the other classes");
        let src = dataset.features.row(donor);
        let dst = out.features.row_mut(i);
        match (method, shape) {
            (Ambiguation::Interpolate { alpha_lo, alpha_hi }, _) => {
                let alpha = rng.uniform_range(alpha_lo, alpha_hi);
                for (d, s) in dst.iter_mut().zip(src) {
                    *d = (1.0 - alpha) * *d + alpha * s;
                }
            }
            (Ambiguation::Cutmix { area_lo, area_hi }, Some((h, w))) => {
                let area = rng.uniform_range(area_lo, area_hi);
                let side = area.sqrt();
                let bh = ((h as f64 * side).round() as usize).clamp(1, h);
                let bw = ((w as f64 * side).round() as usize).clamp(1, w);
                let top = rng.below(h - bh + 1);
                let left = rng.below(w - bw + 1);
                for r in top..top + bh {
                    let span = r * w + left..r * w + left + bw;
                    dst[span.clone()].copy_from_slice(&src[span]);
                }
            }
            (Ambiguation::Cutmix { .. }, None) => unreachable!("shape checked above"),
        }
        set[i] = 1;
    }
    out.set_index = Some(set);
    Ok(out)
}

/// Corrupts every label of `base` with one class-conditional matrix.
/// Returns the noisy dataset and the generating matrix.
pub fn apply_class_noise(
    base: &LabeledDataset,
    spec: &NoiseSpec,
    rng: &mut Rng,
) -> Result<(LabeledDataset, TransitionMatrix)> {
    let t = make_transition_matrix(spec, base.num_classes)?;
    let mut out = base.clone();
    out.clean_labels = Some(base.truth().to_vec());
    out.noisy_labels = corrupt_labels(base.truth(), &t, rng)?;
    Ok((out, t))
}

/// Corrupts the ambiguous partition with `ambiguous_noise` and the clean
/// partition with `clean_noise` (left clean when `None`). Returns the noisy
/// dataset and the generating matrix of each partition.
pub fn build_sdn_dataset(
    base: &LabeledDataset,
    ambiguous_noise: &NoiseSpec,
    clean_noise: Option<&NoiseSpec>,
    rng: &mut Rng,
) -> Result<(LabeledDataset, Vec<TransitionMatrix>)> {
    let set = base
        .set_index
        .as_ref()
        .ok_or_else(|| usage("set-dependent noise needs a dataset with a set index"))?;
    let c = base.num_classes;
    let t_amb = make_transition_matrix(ambiguous_noise, c)?.with_tag(SetTag::Ambiguous);
    let t_clean = match clean_noise {
        Some(spec) => make_transition_matrix(spec, c)?.with_tag(SetTag::Clean),
        None => TransitionMatrix::identity(c, SetTag::Clean),
    };
    let truth = base.truth().to_vec();
    let mut noisy = Vec::with_capacity(truth.len());
    for (&y, &s) in truth.iter().zip(set) {
        let t = if s == 1 { &t_amb } else { &t_clean };
        noisy.push(rng.categorical(t.row(y)));
    }
    let mut out = base.clone();
    out.noisy_labels = noisy;
    out.clean_labels = Some(truth);
    Ok((out, vec![t_clean, t_amb]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn approx_rows(t: &TransitionMatrix, want: &[&[f64]], tol: f64) {
        for (i, w) in want.iter().enumerate() {
            for (j, &v) in w.iter().enumerate() {
                assert!(
                    (t.row(i)[j] - v).abs() <= tol,
                    "T[{i}][{j}] = {} vs {v}",
                    t.row(i)[j]
                );
            }
        }
    }

    #[test]
    fn transition_matrix_examples() {
        for c in 2..6 {
            let t =
                make_transition_matrix(&NoiseSpec::new(NoisePattern::Symmetric, 0.0), c).unwrap();
            assert_eq!(t.entries(), &Matrix::identity(c));
        }
        let t = make_transition_matrix(&NoiseSpec::new(NoisePattern::Dual, 0.4), 10).unwrap();
        for i in 0..10 {
            assert!((t.row(i)[i] - 0.6).abs() < 1e-15);
            assert!((t.row(i)[(i + 1) % 10] - 0.2).abs() < 1e-15);
            assert!((t.row(i)[(i + 2) % 10] - 0.2).abs() < 1e-15);
        }
        let t = make_transition_matrix(&NoiseSpec::new(NoisePattern::Symmetric, 0.5), 3).unwrap();
        approx_rows(
            &t,
            &[&[0.5, 0.25, 0.25], &[0.25, 0.5, 0.25], &[0.25, 0.25, 0.5]],
            1e-15,
        );
        let t = make_transition_matrix(&NoiseSpec::new(NoisePattern::Tridiagonal, 0.6), 5).unwrap();
        approx_rows(&t, &[&[0.4, 0.2, 0.2, 0.2, 0.0]], 1e-15);
        let t = make_transition_matrix(&NoiseSpec::new(NoisePattern::Asymmetric, 0.4), 3).unwrap();
        approx_rows(
            &t,
            &[&[0.6, 0.4, 0.0], &[0.0, 0.6, 0.4], &[0.4, 0.0, 0.6]],
            1e-15,
        );
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(make_transition_matrix(&NoiseSpec::new(NoisePattern::Symmetric, 1.5), 3).is_err());
        assert!(make_transition_matrix(&NoiseSpec::new(NoisePattern::Symmetric, -0.1), 3).is_err());
        assert!(
            make_transition_matrix(&NoiseSpec::new(NoisePattern::Tridiagonal, 0.6), 3).is_err()
        );
        assert!(make_transition_matrix(&NoiseSpec::new(NoisePattern::Dual, 0.4), 2).is_err());
        assert!(make_transition_matrix(&NoiseSpec::new(NoisePattern::Asymmetric, 0.4), 2).is_ok());
    }

    #[test]
    fn transition_matrix_validation() {
        let bad = Matrix::from_rows(&[[0.5, 0.4], [0.0, 1.0]]).unwrap();
        assert!(TransitionMatrix::new(bad, MatrixOrigin::Estimated, SetTag::Total).is_err());
        let neg = Matrix::from_rows(&[[1.2, -0.2], [0.0, 1.0]]).unwrap();
        assert!(TransitionMatrix::new(neg, MatrixOrigin::Estimated, SetTag::Total).is_err());
        let t = make_transition_matrix(&NoiseSpec::new(NoisePattern::Symmetric, 0.3), 2).unwrap();
        let json = serde_json::to_string(&t).unwrap();
        assert_eq!(serde_json::from_str::<TransitionMatrix>(&json).unwrap(), t);
        assert!(serde_json::from_str::<TransitionMatrix>(
            r#"{"origin":"estimated","set_tag":"total","entries":[[0.5,0.4],[0,1]]}"#
        )
        .is_err());
    }

    #[test]
    fn corrupt_labels_examples() {
        let mut rng = Rng::new(1);
        let labels: Vec<usize> = (0..1000).map(|i| i % 3).collect();
        let id = TransitionMatrix::identity(3, SetTag::Total);
        assert_eq!(corrupt_labels(&labels, &id, &mut rng).unwrap(), labels);

        let t = make_transition_matrix(&NoiseSpec::new(NoisePattern::Asymmetric, 1.0), 3).unwrap();
        let shifted = corrupt_labels(&labels, &t, &mut rng).unwrap();
        for (a, b) in labels.iter().zip(&shifted) {
            assert_eq!(*b, (a + 1) % 3);
        }

        let labels: Vec<usize> = (0..100_000).map(|i| i % 2).collect();
        let t = make_transition_matrix(&NoiseSpec::new(NoisePattern::Symmetric, 0.3), 2).unwrap();
        let noisy = corrupt_labels(&labels, &t, &mut rng).unwrap();
        let flips = labels.iter().zip(&noisy).filter(|(a, b)| a != b).count();
        let rate = flips as f64 / labels.len() as f64;
        assert!((rate - 0.3).abs() < 0.01, "{rate}");
    }

    #[test]
    fn empirical_transition_examples() {
        let labels = vec![0, 1, 2, 1, 0];
        let t = empirical_transition(&labels, &labels, None, 3).unwrap();
        assert_eq!(t.entries(), &Matrix::identity(3));

        let t = empirical_transition(&[0, 0, 0, 1], &[0, 0, 1, 1], None, 2).unwrap();
        approx_rows(&t, &[&[2.0 / 3.0, 1.0 / 3.0], &[0.0, 1.0]], 1e-15);

        let err = empirical_transition(&[0, 0], &[0, 1], None, 3).unwrap_err();
        assert!(matches!(err, Error::EmptyClassRow { class: 1 }));
        let err = empirical_transition(&[0, 1], &[0, 1], Some(&[true, false]), 2).unwrap_err();
        assert!(matches!(err, Error::EmptyClassRow { class: 1 }));
    }

    #[test]
    fn empirical_recovers_generator() {
        let mut rng = Rng::new(2);
        let labels: Vec<usize> = (0..100_000).map(|_| rng.below(4)).collect();
        let t = make_transition_matrix(&NoiseSpec::new(NoisePattern::Symmetric, 0.5), 4).unwrap();
        let noisy = corrupt_labels(&labels, &t, &mut rng).unwrap();
        let e = empirical_transition(&labels, &noisy, None, 4).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert!((e.row(i)[j] - t.row(i)[j]).abs() < 0.01);
            }
        }
    }

    #[test]
    fn two_moons_geometry_and_balance() {
        let mut rng = Rng::new(3);
        let ds = make_two_moons(1000, 0.0, &mut rng).unwrap();
        assert_eq!(ds.noisy_labels.iter().filter(|&&y| y == 0).count(), 500);
        for (x, &y) in ds.features.row_iter().zip(&ds.noisy_labels) {
            let (cx, cy) = if y == 0 { (0.0, 0.0) } else { (1.0, 0.5) };
            let r = ((x[0] - cx).powi(2) + (x[1] - cy).powi(2)).sqrt();
            assert!((r - 1.0).abs() < 1e-12);
            if y == 0 {
                assert!(x[1] >= 0.0);
            } else {
                assert!(x[1] <= 0.5 + 1e-12);
            }
        }
        let odd = make_two_moons(7, 0.1, &mut rng).unwrap();
        let zeros = odd.noisy_labels.iter().filter(|&&y| y == 0).count();
        assert!(zeros == 3 || zeros == 4);
        assert!(make_two_moons(1, 0.1, &mut rng).is_err());
    }

    #[test]
    fn two_moons_seeded() {
        let a = make_two_moons(50, 0.1, &mut Rng::new(9)).unwrap();
        let b = make_two_moons(50, 0.1, &mut Rng::new(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ambiguate_fraction_zero_is_identity() {
        let mut rng = Rng::new(4);
        let ds = make_two_moons(100, 0.1, &mut rng).unwrap();
        let out = ambiguate(&ds, 0.0, Ambiguation::interpolate(), &mut rng).unwrap();
        assert_eq!(out.features, ds.features);
        assert!(out.set_index.unwrap().iter().all(|&s| s == 0));
    }

    #[test]
    fn ambiguate_exact_count_and_labels_untouched() {
        let mut rng = Rng::new(5);
        let ds = make_two_moons(1000, 0.1, &mut rng).unwrap();
        let out = ambiguate(&ds, 0.5, Ambiguation::interpolate(), &mut rng).unwrap();
        let set = out.set_index.as_ref().unwrap();
        assert_eq!(set.iter().filter(|&&s| s == 1).count(), 500);
        assert_eq!(out.clean_labels, ds.clean_labels);
        assert_eq!(out.noisy_labels, ds.noisy_labels);
        for (i, &s) in set.iter().enumerate() {
            if s == 0 {
                assert_eq!(out.features.row(i), ds.features.row(i));
            } else {
                assert_ne!(out.features.row(i), ds.features.row(i));
            }
        }
    }

    #[test]
    fn interpolation_stays_on_segment_toward_other_class() {
        let mut rng = Rng::new(6);
        let ds = make_two_moons(200, 0.0, &mut rng).unwrap();
        let fixed = Ambiguation::Interpolate {
            alpha_lo: 0.45,
            alpha_hi: 0.45,
        };
        let out = ambiguate(&ds, 1.0, fixed, &mut rng).unwrap();
        // With α fixed, x̃ = 0.55x + 0.45x′ ⇒ x′ = (x̃ − 0.55x)/0.45 lies on the other moon.
        for i in 0..ds.len() {
            let x = ds.features.row(i);
            let xt = out.features.row(i);
            let donor = [(xt[0] - 0.55 * x[0]) / 0.45, (xt[1] - 0.55 * x[1]) / 0.45];
            let other = 1 - ds.noisy_labels[i];
            let (cx, cy) = if other == 0 { (0.0, 0.0) } else { (1.0, 0.5) };
            let r = ((donor[0] - cx).powi(2) + (donor[1] - cy).powi(2)).sqrt();
            assert!((r - 1.0).abs() < 1e-9, "instance {i}: radius {r}");
        }
    }

    #[test]
    fn cutmix_pastes_a_box() {
        let mut rng = Rng::new(7);
        let (h, w) = (8, 6);
        let n = 20;
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let v = if i % 2 == 0 { 0.0 } else { 1.0 };
            data.extend(std::iter::repeat_n(v, h * w));
            labels.push(i % 2);
        }
        let mut ds =
            LabeledDataset::new(Matrix::from_vec(n, h * w, data).unwrap(), labels, 2).unwrap();
        assert!(ambiguate(&ds, 0.5, Ambiguation::cutmix(), &mut rng).is_err());
        ds.image_shape = Some((h, w));
        let out = ambiguate(&ds, 1.0, Ambiguation::cutmix(), &mut rng).unwrap();
        for i in 0..n {
            let own = ds.features.row(i)[0];
            let changed: Vec<usize> = (0..h * w)
                .filter(|&p| out.features.row(i)[p] != own)
                .collect();
            let ratio = changed.len() as f64 / (h * w) as f64;
            assert!((0.12..=0.6).contains(&ratio), "ratio {ratio}");
            let rows: Vec<usize> = changed.iter().map(|p| p / w).collect();
            let cols: Vec<usize> = changed.iter().map(|p| p % w).collect();
            let bh = rows.iter().max().unwrap() - rows.iter().min().unwrap() + 1;
            let bw = cols.iter().max().unwrap() - cols.iter().min().unwrap() + 1;
            assert_eq!(bh * bw, changed.len(), "changed pixels form a rectangle");
        }
    }

    #[test]
    fn ambiguate_needs_a_second_class() {
        let mut rng = Rng::new(8);
        let ds = LabeledDataset::new(Matrix::zeros(4, 2), vec![0; 4], 2).unwrap();
        assert!(ambiguate(&ds, 0.5, Ambiguation::interpolate(), &mut rng).is_err());
        assert!(ambiguate(&ds, 1.5, Ambiguation::interpolate(), &mut rng).is_err());
    }

    #[test]
    fn sdn_examples() {
        let mut rng = Rng::new(10);
        let base = make_two_moons(10_000, 0.1, &mut rng).unwrap();
        let amb = ambiguate(&base, 0.5, Ambiguation::interpolate(), &mut rng).unwrap();

        let (none, mats) = build_sdn_dataset(
            &amb,
            &NoiseSpec::new(NoisePattern::Symmetric, 0.0),
            None,
            &mut rng,
        )
        .unwrap();
        assert_eq!(Some(&none.noisy_labels), none.clean_labels.as_ref());
        assert_eq!(mats.len(), 2);

        let (noisy, mats) = build_sdn_dataset(
            &amb,
            &NoiseSpec::new(NoisePattern::Symmetric, 0.5),
            None,
            &mut rng,
        )
        .unwrap();
        assert_eq!(mats[0].set_tag, SetTag::Clean);
        assert_eq!(mats[1].set_tag, SetTag::Ambiguous);
        let set = noisy.set_index.as_ref().unwrap();
        let clean = noisy.clean_labels.as_ref().unwrap();
        let (mut flips, mut amb_n) = (0, 0);
        for i in 0..noisy.len() {
            if set[i] == 1 {
                amb_n += 1;
                flips += usize::from(noisy.noisy_labels[i] != clean[i]);
            } else {
                assert_eq!(noisy.noisy_labels[i], clean[i]);
            }
        }
        let rate = flips as f64 / amb_n as f64;
        assert!((rate - 0.5).abs() < 0.02, "{rate}");

        assert!(build_sdn_dataset(
            &base,
            &NoiseSpec::new(NoisePattern::Symmetric, 0.5),
            None,
            &mut rng
        )
        .is_err());
    }

    #[test]
    fn sdn_asymmetric_matches_generator() {
        let mut rng = Rng::new(11);
        let labels: Vec<usize> = (0..20_000).map(|_| rng.below(4)).collect();
        let mut base = LabeledDataset::new(Matrix::zeros(labels.len(), 1), labels, 4).unwrap();
        base.set_index = Some((0..base.len()).map(|i| (i % 2) as u8).collect());
        let spec = NoiseSpec::new(NoisePattern::Asymmetric, 0.4);
        let (noisy, mats) = build_sdn_dataset(&base, &spec, None, &mut rng).unwrap();
        let mask = noisy.mask(SetTag::Ambiguous).unwrap();
        let e = empirical_transition(
            noisy.clean_labels.as_ref().unwrap(),
            &noisy.noisy_labels,
            Some(&mask),
            4,
        )
        .unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert!((e.row(i)[j] - mats[1].row(i)[j]).abs() < 0.03);
            }
        }
        let mask = noisy.mask(SetTag::Clean).unwrap();
        let e = empirical_transition(
            noisy.clean_labels.as_ref().unwrap(),
            &noisy.noisy_labels,
            Some(&mask),
            4,
        )
        .unwrap();
        assert_eq!(e.entries(), &Matrix::identity(4));
    }
}
