//! Anchor-free transition-matrix estimation and uncertainty partitioning.
//!
//! Instances are grouped by their Bayes-optimal label `f̂(x)`. Row `i` of the
//! estimate is the mean, over instances with `f̂(x) = i`, of the mixture
//! prediction `Σ_k π_k(x) p_k(x)`, where `p_k` is `softmax(μ_k)` for the soft
//! estimate and the one-hot of `argmax μ_k` for the scaled one.

use serde::{Deserialize, Serialize};

use crate::error::{usage, Result};
use crate::metrics::{atv, auroc, ktd};
use crate::model::{bayes_optimal_label, MixtureOutput, ModelParams};
use crate::noise::{LabeledDataset, MatrixOrigin, SetTag, TransitionMatrix};
use crate::numerics::{argmax, softmax_into, Matrix};
use crate::uncertainty::{ScoreName, UncertaintyRecord};

/// An estimated matrix with the number of instances behind each row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub matrix: TransitionMatrix,
    /// Rows with zero support are one-hot self rows.
    pub support: Vec<usize>,
}

/// Estimates a transition matrix from network outputs restricted to `mask`.
pub fn estimate_from_outputs(
    outs: &[MixtureOutput],
    mask: Option<&[bool]>,
    scaled: bool,
    set_tag: SetTag,
) -> Result<Estimate> {
    let rows: Vec<usize> = outs.iter().map(bayes_optimal_label).collect();
    estimate_with_rows(outs, &rows, mask, scaled, set_tag)
}

/// Same as [`estimate_from_outputs`] with the row of each instance given
/// explicitly instead of taken from its Bayes-optimal label.
pub fn estimate_with_rows(
    outs: &[MixtureOutput],
    rows: &[usize],
    mask: Option<&[bool]>,
    scaled: bool,
    set_tag: SetTag,
) -> Result<Estimate> {
    if rows.len() != outs.len() {
        return Err(usage(format!(
            "{} row labels for {} outputs",
            rows.len(),
            outs.len()
        )));
    }
    if let Some(m) = mask {
        if m.len() != outs.len() {
            return Err(usage(format!(
                "mask has {} entries for {} outputs",
                m.len(),
                outs.len()
            )));
        }
    }
    let selected: Vec<usize> = (0..outs.len())
        .filter(|&i| mask.is_none_or(|m| m[i]))
        .collect();
    let Some(&first) = selected.first() else {
        return Err(usage(
            "cannot estimate a transition matrix from an empty subset",
        ));
    };
    let c = outs[first].num_classes();
    if selected
        .iter()
        .any(|&i| outs[i].num_classes() != c || rows[i] >= c)
    {
        return Err(usage("outputs disagree on the number of classes"));
    }

    let mut sums = Matrix::zeros(c, c);
    let mut support = vec![0usize; c];
    let mut probs = vec![0.0; c];
    for i in selected {
        let o = &outs[i];
        support[rows[i]] += 1;
        let acc = sums.row_mut(rows[i]);
        for (k, &w) in o.pi().iter().enumerate() {
            let logits = o.mu().row(k);
            if scaled {
                acc[argmax(logits)] += w;
            } else {
                softmax_into(logits, &mut probs);
                for (a, p) in acc.iter_mut().zip(&probs) {
                    *a += w * p;
                }
            }
        }
    }
    for (i, &n) in support.iter().enumerate() {
        let row = sums.row_mut(i);
        if n == 0 {
            row[i] = 1.0;
        } else {
            row.iter_mut()
                .for_each(|v| *v = (*v / n as f64).clamp(0.0, 1.0));
        }
    }
    let origin = if scaled {
        MatrixOrigin::EstimatedScaled
    } else {
        MatrixOrigin::Estimated
    };
    Ok(Estimate {
        matrix: TransitionMatrix::new(sums, origin, set_tag)?,
        support,
    })
}

/// Runs the model over `dataset` and estimates on the rows selected by
/// `mask` (all rows when `None`).
pub fn estimate_transition(
    model: &ModelParams,
    dataset: &LabeledDataset,
    mask: Option<&[bool]>,
    scaled: bool,
    set_tag: SetTag,
) -> Result<Estimate> {
    let outs = crate::model::outputs_for(model, &dataset.features)?;
    estimate_from_outputs(&outs, mask, scaled, set_tag)
}

/// Median of a non-empty slice; the mean of the two middle values for even
/// lengths.
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(usage("median of an empty set"));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(usage("median of values containing NaN"));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Ok(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionResult {
    /// 1 = predicted ambiguous.
    pub predicted: Vec<u8>,
    pub threshold: f64,
    pub score: ScoreName,
}

impl PartitionResult {
    pub fn mask(&self, tag: SetTag) -> Vec<bool> {
        match tag.index() {
            None => vec![true; self.predicted.len()],
            Some(v) => self.predicted.iter().map(|&p| p == v).collect(),
        }
    }
}

/// Instances scoring strictly above `threshold` (default: the median score)
/// are predicted ambiguous.
pub fn partition_by_uncertainty(
    records: &[UncertaintyRecord],
    score: ScoreName,
    threshold: Option<f64>,
) -> Result<PartitionResult> {
    if records.is_empty() {
        return Err(usage("cannot partition an empty batch"));
    }
    let values: Vec<f64> = records.iter().map(|r| r.get(score)).collect();
    let threshold = match threshold {
        Some(t) => t,
        None => median(&values)?,
    };
    Ok(PartitionResult {
        predicted: values.iter().map(|&v| u8::from(v > threshold)).collect(),
        threshold,
        score,
    })
}

/// Soft and scaled estimates for one partition, with distances to the
/// generating matrix when it is known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetEstimate {
    pub set_tag: SetTag,
    pub instances: usize,
    pub soft: TransitionMatrix,
    pub scaled: TransitionMatrix,
    pub support: Vec<usize>,
    pub ground_truth: Option<TransitionMatrix>,
    pub atv_soft: Option<f64>,
    pub atv_scaled: Option<f64>,
    pub ktd_soft: Option<f64>,
    pub ktd_scaled: Option<f64>,
}

/// AUROC of one score against the true ambiguous set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreAuroc {
    pub score: ScoreName,
    pub auroc: f64,
    pub mean_clean: f64,
    pub mean_ambiguous: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationReport {
    pub accuracy: Option<f64>,
    pub sets: Vec<SetEstimate>,
    pub auroc: Vec<ScoreAuroc>,
    /// Present when the partition came from uncertainty rather than the
    /// recorded set index.
    pub partition: Option<PartitionSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionSummary {
    pub score: ScoreName,
    pub threshold: f64,
    pub predicted_ambiguous: usize,
}

/// Where the clean/ambiguous split comes from when building a report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionSource {
    /// The set index stored with the dataset.
    Recorded,
    /// A median split of an uncertainty score.
    Uncertainty(ScoreName),
}

pub fn estimate_set(
    outs: &[MixtureOutput],
    mask: Option<&[bool]>,
    set_tag: SetTag,
    ground_truth: Option<&TransitionMatrix>,
) -> Result<SetEstimate> {
    let soft = estimate_from_outputs(outs, mask, false, set_tag)?;
    let scaled = estimate_from_outputs(outs, mask, true, set_tag)?;
    let dist = |f: fn(&Matrix, &Matrix) -> Result<f64>, est: &TransitionMatrix| {
        ground_truth
            .map(|g| f(g.entries(), est.entries()))
            .transpose()
    };
    Ok(SetEstimate {
        set_tag,
        instances: mask.map_or(outs.len(), |m| m.iter().filter(|&&b| b).count()),
        atv_soft: dist(atv, &soft.matrix)?,
        atv_scaled: dist(atv, &scaled.matrix)?,
        ktd_soft: dist(ktd, &soft.matrix)?,
        ktd_scaled: dist(ktd, &scaled.matrix)?,
        soft: soft.matrix,
        scaled: scaled.matrix,
        support: soft.support,
        ground_truth: ground_truth.cloned(),
    })
}

/// Estimates per partition and scores uncertainty against the recorded set
/// index. `ground_truth` holds the generating matrices tagged by set.
pub fn build_report(
    model: &ModelParams,
    dataset: &LabeledDataset,
    ground_truth: &[TransitionMatrix],
    source: PartitionSource,
    scores: &[ScoreName],
) -> Result<EstimationReport> {
    let outs = crate::model::outputs_for(model, &dataset.features)?;
    let records: Vec<UncertaintyRecord> = outs.iter().map(UncertaintyRecord::from_output).collect();
    let truth_for = |tag: SetTag| ground_truth.iter().find(|t| t.set_tag == tag);

    let mut sets = Vec::new();
    let mut partition = None;
    match (&dataset.set_index, source) {
        (None, _) => {
            sets.push(estimate_set(
                &outs,
                None,
                SetTag::Total,
                truth_for(SetTag::Total),
            )?);
        }
        (Some(_), src) => {
            let masks = match src {
                PartitionSource::Recorded => [
                    dataset.mask(SetTag::Clean)?,
                    dataset.mask(SetTag::Ambiguous)?,
                ],
                PartitionSource::Uncertainty(score) => {
                    let p = partition_by_uncertainty(&records, score, None)?;
                    partition = Some(PartitionSummary {
                        score,
                        threshold: p.threshold,
                        predicted_ambiguous: p.predicted.iter().filter(|&&v| v == 1).count(),
                    });
                    [p.mask(SetTag::Clean), p.mask(SetTag::Ambiguous)]
                }
            };
            for (tag, mask) in [SetTag::Clean, SetTag::Ambiguous].into_iter().zip(&masks) {
                if mask.iter().any(|&b| b) {
                    sets.push(estimate_set(&outs, Some(mask), tag, truth_for(tag))?);
                }
            }
        }
    }

    let mut aurocs = Vec::new();
    if let Some(set) = &dataset.set_index {
        let positives: Vec<bool> = set.iter().map(|&s| s == 1).collect();
        let n_amb = positives.iter().filter(|&&p| p).count();
        if n_amb > 0 && n_amb < positives.len() {
            for &score in scores {
                let values: Vec<f64> = records.iter().map(|r| r.get(score)).collect();
                let mean = |want: bool| {
                    let (s, n) = values
                        .iter()
                        .zip(&positives)
                        .filter(|(_, &p)| p == want)
                        .fold((0.0, 0usize), |(s, n), (v, _)| (s + v, n + 1));
                    s / n as f64
                };
                aurocs.push(ScoreAuroc {
                    score,
                    auroc: auroc(&values, &positives)?,
                    mean_clean: mean(false),
                    mean_ambiguous: mean(true),
                });
            }
        }
    }

    let accuracy = if dataset.clean_labels.is_some() {
        Some(crate::trainer::evaluate_accuracy(model, dataset)?)
    } else {
        None
    };
    Ok(EstimationReport {
        accuracy,
        sets,
        auroc: aurocs,
        partition,
    })
}
