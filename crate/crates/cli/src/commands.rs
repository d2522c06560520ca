use std::path::{Path, PathBuf};

use mln_core::estimation::{build_report, EstimationReport};
use mln_core::formats::{
    load_checkpoint, load_dataset, matrix_csv, matrix_svg, read_json, save_checkpoint,
    save_dataset, write_atomic, write_json, DatasetMeta,
};
use mln_core::metrics::{atv, auroc, ktd_fraction};
use mln_core::noise::{ambiguate, apply_class_noise, build_sdn_dataset, load_idx, make_two_moons};
use mln_core::trainer::train;
use mln_core::{Error as CoreError, LabeledDataset, ModelParams, Rng, SetTag, TransitionMatrix};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Source};
use crate::error::{CliError, CliResult};
use crate::manifest::Manifest;

pub const TRAIN_DATA: &str = "train.bin";
pub const TRAIN_META: &str = "train.json";
pub const TEST_DATA: &str = "test.bin";
pub const TEST_META: &str = "test.json";
pub const CHECKPOINT: &str = "model.ckpt";
pub const TRAIN_LOG: &str = "train_log.jsonl";
pub const REPORT: &str = "report.json";
pub const CONFIG_COPY: &str = "config.json";

// Independent random streams under the run seed.
const TRAIN_DATA_STREAM: u64 = 100;
const TEST_DATA_STREAM: u64 = 101;
const MODEL_STREAM: u64 = 200;
const HOLDOUT_STREAM: u64 = 300;

/// Files produced by one command, relative to the run directory.
pub type Artifacts = Vec<String>;

struct Prepared {
    data: LabeledDataset,
    meta: DatasetMeta,
}

/// Applies the configured ambiguation and noise to `base`.
fn corrupt(
    base: LabeledDataset,
    cfg: &ExperimentConfig,
    source: String,
    rng: &mut Rng,
) -> CliResult<Prepared> {
    let d = &cfg.dataset;
    let c = base.num_classes;
    let (data, transitions, fraction) = match (&d.ambiguation, &d.noise) {
        (Some(a), Some(noise)) => {
            let amb = ambiguate(&base, a.fraction, a.method(), rng)
                .map_err(CliError::at("dataset.ambiguation"))?;
            if let Some(cn) = &d.clean_noise {
                cn.validate(c)
                    .map_err(CliError::at("dataset.clean_noise"))?;
            }
            noise.validate(c).map_err(CliError::at("dataset.noise"))?;
            let (ds, ts) = build_sdn_dataset(&amb, noise, d.clean_noise.as_ref(), rng)?;
            (ds, ts, Some(a.fraction))
        }
        (None, Some(noise)) => {
            noise.validate(c).map_err(CliError::at("dataset.noise"))?;
            let (ds, t) = apply_class_noise(&base, noise, rng)?;
            (ds, vec![t], None)
        }
        (_, None) => {
            let mut ds = base;
            if ds.clean_labels.is_none() {
                ds.clean_labels = Some(ds.noisy_labels.clone());
            }
            (ds, vec![TransitionMatrix::identity(c, SetTag::Total)], None)
        }
    };
    let meta = DatasetMeta {
        source,
        num_instances: data.len(),
        feature_dim: data.dim(),
        num_classes: data.num_classes,
        noise: d.noise,
        clean_noise: d.clean_noise,
        ambiguous_fraction: fraction,
        transitions,
    };
    Ok(Prepared { data, meta })
}

/// A dataset file used as is, with its generating matrices if a metadata
/// file sits next to it.
fn passthrough(path: &Path) -> CliResult<Prepared> {
    let data = load_dataset(path)?;
    let meta_path = path.with_extension("json");
    let transitions = if meta_path.exists() {
        read_json::<DatasetMeta>(&meta_path)?.transitions
    } else {
        Vec::new()
    };
    let meta = DatasetMeta {
        source: format!("file:{}", path.display()),
        num_instances: data.len(),
        feature_dim: data.dim(),
        num_classes: data.num_classes,
        noise: None,
        clean_noise: None,
        ambiguous_fraction: None,
        transitions,
    };
    Ok(Prepared { data, meta })
}

fn random_subset(
    ds: LabeledDataset,
    n: Option<usize>,
    rng: &mut Rng,
    field: &str,
) -> CliResult<LabeledDataset> {
    match n {
        None => Ok(ds),
        Some(n) if n > ds.len() => Err(CliError::config(
            field,
            format!("asks for {n} instances but the file holds {}", ds.len()),
        )),
        Some(n) => {
            let mut idx = rng.permutation(ds.len());
            idx.truncate(n);
            idx.sort_unstable();
            Ok(ds.subset(&idx))
        }
    }
}

/// Treats the observed labels of `ds` as ground truth.
fn as_clean(mut ds: LabeledDataset) -> LabeledDataset {
    let truth = ds.truth().to_vec();
    ds.noisy_labels = truth.clone();
    ds.clean_labels = Some(truth);
    ds.set_index = None;
    ds
}

fn prepare(cfg: &ExperimentConfig) -> CliResult<(Prepared, Option<Prepared>)> {
    let d = &cfg.dataset;
    let mut train_rng = Rng::with_stream(cfg.seed, TRAIN_DATA_STREAM);
    let mut test_rng = Rng::with_stream(cfg.seed, TEST_DATA_STREAM);
    match d.source {
        Source::TwoMoons => {
            let n = d.n.expect("validated");
            let train =
                make_two_moons(n, d.noise_std, &mut train_rng).map_err(CliError::at("dataset"))?;
            let test = make_two_moons(d.test_n.unwrap_or(n), d.noise_std, &mut test_rng)
                .map_err(CliError::at("dataset"))?;
            Ok((
                corrupt(train, cfg, "two-moons".into(), &mut train_rng)?,
                Some(corrupt(test, cfg, "two-moons".into(), &mut test_rng)?),
            ))
        }
        Source::Idx => {
            let images = d.images.as_ref().expect("validated");
            let labels = d.labels.as_ref().expect("validated");
            let mut train =
                random_subset(load_idx(images, labels)?, d.n, &mut train_rng, "dataset.n")?;
            let mut test = match (&d.test_images, &d.test_labels) {
                (Some(i), Some(l)) => Some(random_subset(
                    load_idx(i, l)?,
                    d.test_n,
                    &mut test_rng,
                    "dataset.test_n",
                )?),
                _ => None,
            };
            // Label files may not cover every class; both sides share the larger count.
            let c = test
                .as_ref()
                .map_or(train.num_classes, |t| t.num_classes.max(train.num_classes));
            train.num_classes = c;
            if let Some(t) = test.as_mut() {
                t.num_classes = c;
            }
            let source = format!("idx:{}", images.display());
            let train = corrupt(train, cfg, source.clone(), &mut train_rng)?;
            let test = test
                .map(|t| corrupt(t, cfg, source, &mut test_rng))
                .transpose()?;
            Ok((train, test))
        }
        Source::File => {
            let path = d.path.as_ref().expect("validated");
            let reshape = d.noise.is_some() || d.ambiguation.is_some();
            let load = |p: &Path, rng: &mut Rng| -> CliResult<Prepared> {
                if reshape {
                    corrupt(
                        as_clean(load_dataset(p)?),
                        cfg,
                        format!("file:{}", p.display()),
                        rng,
                    )
                } else {
                    passthrough(p)
                }
            };
            let train = load(path, &mut train_rng)?;
            let test = d
                .test_path
                .as_ref()
                .map(|p| load(p, &mut test_rng))
                .transpose()?;
            Ok((train, test))
        }
    }
}

fn matrix_files(
    dir: &Path,
    stem: &str,
    m: &TransitionMatrix,
    title: &str,
    svg: bool,
    out: &mut Artifacts,
) -> CliResult<()> {
    let csv = format!("{stem}.csv");
    write_atomic(&dir.join(&csv), matrix_csv(m.entries()).as_bytes())?;
    out.push(csv);
    if svg {
        let name = format!("{stem}.svg");
        write_atomic(&dir.join(&name), matrix_svg(m.entries(), title).as_bytes())?;
        out.push(name);
    }
    Ok(())
}

fn tag_name(tag: SetTag) -> &'static str {
    match tag {
        SetTag::Total => "total",
        SetTag::Clean => "clean",
        SetTag::Ambiguous => "ambiguous",
    }
}

pub fn generate(cfg: &ExperimentConfig, dir: &Path) -> CliResult<Artifacts> {
    let (train, test) = prepare(cfg)?;
    std::fs::create_dir_all(dir)?;
    let mut out = Vec::new();
    for (split, p, data_name, meta_name) in [
        ("train", Some(&train), TRAIN_DATA, TRAIN_META),
        ("test", test.as_ref(), TEST_DATA, TEST_META),
    ] {
        let Some(p) = p else { continue };
        save_dataset(&dir.join(data_name), &p.data)?;
        write_json(&dir.join(meta_name), &p.meta)?;
        out.push(data_name.to_string());
        out.push(meta_name.to_string());
        for t in &p.meta.transitions {
            let name = tag_name(t.set_tag);
            let stem = format!("truth_{split}_{name}");
            matrix_files(
                dir,
                &stem,
                t,
                &format!("ground truth, {split} {name}"),
                cfg.output.emit_svg,
                &mut out,
            )?;
        }
    }
    Ok(out)
}

/// Validation and remaining indices of an `n`-instance test file.
pub fn holdout_split(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let held = (fraction * n as f64).round() as usize;
    if held == 0 {
        return (Vec::new(), (0..n).collect());
    }
    let perm = Rng::with_stream(seed, HOLDOUT_STREAM).permutation(n);
    let mut validation = perm[..held].to_vec();
    let mut rest = perm[held..].to_vec();
    validation.sort_unstable();
    rest.sort_unstable();
    (validation, rest)
}

fn load_required(dir: &Path, name: &str, what: &str) -> CliResult<LabeledDataset> {
    let path = dir.join(name);
    if !path.exists() {
        return Err(CliError::Io(format!(
            "{what} {} not found; run `generate` first",
            path.display()
        )));
    }
    Ok(load_dataset(&path)?)
}

struct Splits {
    train: LabeledDataset,
    validation: Option<LabeledDataset>,
    test: Option<LabeledDataset>,
}

/// The training file, and the test file split into validation and test
/// parts by `eval.holdout_fraction`.
fn load_splits(cfg: &ExperimentConfig, dir: &Path) -> CliResult<Splits> {
    let train = load_required(dir, TRAIN_DATA, "training set")?;
    let test_path = dir.join(TEST_DATA);
    let test = if test_path.exists() {
        Some(load_dataset(&test_path)?)
    } else {
        None
    };
    let fraction = cfg.eval.holdout_fraction;
    let (validation, test) = match test {
        Some(t) if fraction > 0.0 => {
            let (val_idx, rest_idx) = holdout_split(t.len(), fraction, cfg.seed);
            if rest_idx.is_empty() {
                return Err(CliError::config(
                    "eval.holdout_fraction",
                    "leaves no test instances",
                ));
            }
            let validation = (!val_idx.is_empty()).then(|| t.subset(&val_idx));
            (validation, Some(t.subset(&rest_idx)))
        }
        None if fraction > 0.0 => {
            return Err(CliError::config(
                "eval.holdout_fraction",
                "needs a test set",
            ));
        }
        t => (None, t),
    };
    Ok(Splits {
        train,
        validation,
        test,
    })
}

/// Parameters the trainer starts from for `cfg` on data of this shape.
pub fn initial_model(
    cfg: &ExperimentConfig,
    input_dim: usize,
    num_classes: usize,
) -> CliResult<ModelParams> {
    let arch = cfg.model.architecture(input_dim, num_classes);
    ModelParams::init(arch, &mut Rng::with_stream(cfg.seed, MODEL_STREAM))
        .map_err(CliError::at("model"))
}

pub fn train_cmd(cfg: &ExperimentConfig, dir: &Path) -> CliResult<(Artifacts, String)> {
    let splits = load_splits(cfg, dir)?;
    let model = initial_model(cfg, splits.train.dim(), splits.train.num_classes)?;
    let eval = splits.validation.as_ref().or(splits.test.as_ref());
    let (model, mut report) = train(&splits.train, model, &cfg.trainer_config(), eval).map_err(|e| match e {
        CoreError::Diverged { epoch, batch, loss } => CliError::Numeric(format!(
            "loss became {loss} at epoch {epoch}, batch {batch}; lower trainer.lr or lambda1 and rerun"
        )),
        CoreError::Usage(msg) => CliError::config("trainer", msg),
        other => other.into(),
    })?;
    save_checkpoint(&dir.join(CHECKPOINT), &model)?;
    report.checkpoint = Some(CHECKPOINT.to_string());
    write_atomic(&dir.join(TRAIN_LOG), report.to_json_lines()?.as_bytes())?;
    let summary = match report.last() {
        Some(r) => format!(
            "{} epochs, final loss {:.6}{}",
            report.epochs.len(),
            r.train_loss,
            r.test_accuracy
                .map(|a| format!(", accuracy {a:.4}"))
                .unwrap_or_default()
        ),
        None => "0 epochs, checkpoint holds the initialization".to_string(),
    };
    Ok((vec![CHECKPOINT.to_string(), TRAIN_LOG.to_string()], summary))
}

/// Estimation results for one split of the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub split: String,
    pub instances: usize,
    #[serde(flatten)]
    pub report: EstimationReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config_hash: String,
    pub num_classes: usize,
    pub num_mixtures: usize,
    pub splits: Vec<SplitReport>,
}

pub fn report_cmd(cfg: &ExperimentConfig, dir: &Path) -> CliResult<(Artifacts, RunReport)> {
    let splits = load_splits(cfg, dir)?;
    let ckpt = dir.join(CHECKPOINT);
    if !ckpt.exists() {
        return Err(CliError::Io(format!(
            "checkpoint {} not found; run `train` first",
            ckpt.display()
        )));
    }
    let model = load_checkpoint(&ckpt)?;
    let truths = |name: &str| -> CliResult<Vec<TransitionMatrix>> {
        let p = dir.join(name);
        Ok(if p.exists() {
            read_json::<DatasetMeta>(&p)?.transitions
        } else {
            Vec::new()
        })
    };
    let train_truth = truths(TRAIN_META)?;
    let test_truth = truths(TEST_META)?;

    let mut sections = Vec::new();
    for (split, data, truth) in [
        ("train", Some(&splits.train), &train_truth),
        ("validation", splits.validation.as_ref(), &test_truth),
        ("test", splits.test.as_ref(), &test_truth),
    ] {
        let Some(data) = data else { continue };
        let report = build_report(&model, data, truth, cfg.eval.partition, &cfg.eval.scores)
            .map_err(|e| match e {
                CoreError::Usage(msg) => {
                    CliError::config("(input)", format!("{split} split: {msg}"))
                }
                other => other.into(),
            })?;
        sections.push(SplitReport {
            split: split.to_string(),
            instances: data.len(),
            report,
        });
    }

    let mut out = Vec::new();
    for s in &sections {
        for set in &s.report.sets {
            let tag = tag_name(set.set_tag);
            for (kind, m, on) in [
                ("soft", &set.soft, cfg.eval.soft),
                ("scaled", &set.scaled, cfg.eval.scaled),
            ] {
                if on {
                    let stem = format!("estimate_{}_{tag}_{kind}", s.split);
                    let title = format!("{kind} estimate, {} {tag}", s.split);
                    matrix_files(dir, &stem, m, &title, cfg.output.emit_svg, &mut out)?;
                }
            }
        }
    }
    let report = RunReport {
        config_hash: cfg.hash(),
        num_classes: model.num_classes(),
        num_mixtures: model.num_mixtures(),
        splits: sections,
    };
    write_json(&dir.join(REPORT), &report)?;
    out.insert(0, REPORT.to_string());
    Ok((out, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixMetrics {
    pub atv: f64,
    pub ktd: f64,
    /// KTD as an exact fraction in half units.
    pub ktd_fraction: [u64; 2],
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auroc: Option<f64>,
}

fn read_matrix(path: &Path) -> CliResult<mln_core::Matrix> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(mln_core::formats::parse_matrix_csv(&text, path)?)
}

/// Scores file: one `score,label` line per instance, label 1 for positives.
fn read_scores(path: &Path) -> CliResult<(Vec<f64>, Vec<bool>)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let bad = |line: usize, why: &str| CliError::Io(format!("{}:{line}: {why}", path.display()));
    let (mut scores, mut labels) = (Vec::new(), Vec::new());
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (s, l) = line
            .split_once(',')
            .ok_or_else(|| bad(i + 1, "expected `score,label`"))?;
        let s: f64 = s
            .trim()
            .parse()
            .map_err(|_| bad(i + 1, "score is not a number"))?;
        let l = match l.trim() {
            "1" => true,
            "0" => false,
            _ => return Err(bad(i + 1, "label must be 0 or 1")),
        };
        scores.push(s);
        labels.push(l);
    }
    Ok((scores, labels))
}

pub fn eval_metrics(
    truth: &Path,
    estimate: &Path,
    scores: Option<&Path>,
) -> CliResult<MatrixMetrics> {
    let t = read_matrix(truth)?;
    let e = read_matrix(estimate)?;
    let input = |e: CoreError| match e {
        CoreError::Usage(msg) => CliError::config("(input)", msg),
        other => other.into(),
    };
    let atv_value = atv(&t, &e).map_err(input)?;
    let (num, den) = ktd_fraction(&t, &e).map_err(input)?;
    let auroc_value = match scores {
        Some(p) => {
            let (s, l) = read_scores(p)?;
            Some(auroc(&s, &l).map_err(input)?)
        }
        None => None,
    };
    Ok(MatrixMetrics {
        atv: atv_value,
        ktd: num as f64 / den as f64,
        ktd_fraction: [num, den],
        auroc: auroc_value,
    })
}

/// Writes the effective config next to the artifacts it produced.
pub fn save_config(cfg: &ExperimentConfig, dir: &Path) -> CliResult<String> {
    std::fs::create_dir_all(dir)?;
    write_json(&dir.join(CONFIG_COPY), cfg)?;
    Ok(CONFIG_COPY.to_string())
}

pub fn record(
    dir: &Path,
    command: &str,
    cfg: Option<&ExperimentConfig>,
    started: u64,
    files: Artifacts,
) -> CliResult<PathBuf> {
    let mut m = Manifest::load_or_new(dir)?;
    m.record(
        command,
        cfg.map(|c| c.hash()),
        cfg.map(|c| c.seed),
        started,
        files,
    );
    m.save(dir)
}
