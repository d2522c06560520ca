use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mln_cli::commands::{self, record, save_config};
use mln_cli::manifest::now_unix;
use mln_cli::{CliError, CliResult, ExperimentConfig};

/// Mixture logit network experiments: synthesize noisy data, train, and
/// estimate noise transition matrices.
#[derive(Parser)]
#[command(name = "mln", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the training and test sets and their ground-truth matrices.
    Generate(RunArgs),
    /// Train a model on the generated training set.
    Train(RunArgs),
    /// Estimate transition matrices and score uncertainty.
    Report(RunArgs),
    /// ATV and KTD between two matrix CSV files, AUROC of a scores file.
    EvalMetrics(MetricArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory; overrides `output.run_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Parent of run directories when neither `--out` nor `output.run_dir`
    /// is given.
    #[arg(long, env = "NLL_RUN_DIR", default_value = "runs")]
    run_root: PathBuf,
}

#[derive(Args)]
struct MetricArgs {
    /// Reference matrix, one row per line.
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    estimate: PathBuf,
    /// `score,label` lines, label 1 for positives.
    #[arg(long)]
    scores: Option<PathBuf>,
    /// Also write `metrics.json` into this directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load(args: &RunArgs) -> CliResult<(ExperimentConfig, PathBuf)> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let dir = match (&args.out, &cfg.output.run_dir) {
        (Some(d), _) | (None, Some(d)) => d.clone(),
        (None, None) => {
            let stem = args
                .config
                .file_stem()
                .map_or("run".into(), |s| s.to_string_lossy().into_owned());
            args.run_root.join(stem)
        }
    };
    Ok((cfg, dir))
}

fn finish(
    dir: &Path,
    command: &str,
    cfg: &ExperimentConfig,
    started: u64,
    mut files: Vec<String>,
) -> CliResult<()> {
    files.push(save_config(cfg, dir)?);
    let manifest = record(dir, command, Some(cfg), started, files)?;
    eprintln!("wrote {}", manifest.display());
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    let started = now_unix();
    match cli.command {
        Command::Generate(args) => {
            let (cfg, dir) = load(&args)?;
            let files = commands::generate(&cfg, &dir)?;
            println!("generated {} files in {}", files.len(), dir.display());
            finish(&dir, "generate", &cfg, started, files)
        }
        Command::Train(args) => {
            let (cfg, dir) = load(&args)?;
            let (files, summary) = commands::train_cmd(&cfg, &dir)?;
            println!("trained: {summary}");
            finish(&dir, "train", &cfg, started, files)
        }
        Command::Report(args) => {
            let (cfg, dir) = load(&args)?;
            let (files, report) = commands::report_cmd(&cfg, &dir)?;
            for s in &report.splits {
                let acc = s
                    .report
                    .accuracy
                    .map_or("n/a".to_string(), |a| format!("{a:.4}"));
                println!("{}: {} instances, accuracy {acc}", s.split, s.instances);
                for set in &s.report.sets {
                    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
                    println!(
                        "  {:?}: ATV soft {} scaled {}, KTD soft {} scaled {}",
                        set.set_tag,
                        fmt(set.atv_soft),
                        fmt(set.atv_scaled),
                        fmt(set.ktd_soft),
                        fmt(set.ktd_scaled)
                    );
                }
                for a in &s.report.auroc {
                    println!("  AUROC {}: {:.4}", a.score.as_str(), a.auroc);
                }
            }
            finish(&dir, "report", &cfg, started, files)
        }
        Command::EvalMetrics(args) => {
            let m = commands::eval_metrics(&args.truth, &args.estimate, args.scores.as_deref())?;
            let text = serde_json::to_string_pretty(&m).map_err(|e| CliError::Io(e.to_string()))?;
            println!("{text}");
            if let Some(dir) = &args.out {
                std::fs::create_dir_all(dir)?;
                mln_core::formats::write_json(&dir.join("metrics.json"), &m)?;
                record(
                    dir,
                    "eval-metrics",
                    None,
                    started,
                    vec!["metrics.json".into()],
                )?;
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
