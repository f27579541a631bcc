//! `fslab`: generate synthetic corpora, train, evaluate, sweep ablations and
//! export precision-recall tables.
//!
//! Exit codes: 0 on success, 2 for configuration errors, 3 for numerical
//! failures during training, 1 for anything else.

use clap::{Args, Parser, Subcommand};
use fslab_core::bpm::BpmMode;
use fslab_core::error::Error as CoreError;
use fslab_core::harness::{self, Checkpoint, RunConfig};
use fslab_core::metrics::MetricReport;
use fslab_core::rcam::RcamMode;
use fslab_core::synth::{self, CorpusOptions};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "fslab", version, about = "Full-duplex two-stream segmentation workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthetic corpus tools.
    Synth {
        #[command(subcommand)]
        command: SynthCommand,
    },
    /// Run the three-stage training schedule from a config file.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a corpus split.
    Eval(EvalArgs),
    /// Train and evaluate a grid of direction/depth variants.
    Ablate(AblateArgs),
    /// Re-export precision-recall curves from one or more reports.
    ExportPr(ExportPrArgs),
}

#[derive(Subcommand)]
enum SynthCommand {
    /// Generate a moving-shapes corpus with exact masks and flow.
    Gen(SynthGenArgs),
}

#[derive(Args)]
struct SynthGenArgs {
    /// Number of clips.
    #[arg(long, default_value_t = 30)]
    clips: usize,
    /// Corpus seed.
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Frames per clip.
    #[arg(long, default_value_t = 8)]
    frames: usize,
    /// Square canvas size in pixels.
    #[arg(long, default_value_t = 64)]
    size: usize,
    /// Split fractions: pretrain-spatial, pretrain-temporal, train, val.
    #[arg(long, num_args = 4, value_names = ["PS", "PT", "TRAIN", "VAL"])]
    split_ratios: Option<Vec<f64>>,
    /// Overwrite a non-empty output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Resume from a checkpoint produced by the same configuration.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint to evaluate.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Corpus directory; defaults to the one recorded in the checkpoint.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Split to evaluate.
    #[arg(long, default_value = "val")]
    split: String,
    /// Where to write report.json, pr_curve.csv and predicted masks.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    /// Base run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Cross-attention direction settings to sweep.
    #[arg(long, num_args = 1.., default_values = ["full-duplex"])]
    rcam_modes: Vec<String>,
    /// Purification direction settings to sweep.
    #[arg(long, num_args = 1.., default_values = ["full-duplex"])]
    bpm_modes: Vec<String>,
    /// Cascade depths to sweep.
    #[arg(long, num_args = 1.., default_values = ["0", "2", "4"])]
    bpm_n: Vec<usize>,
    /// Split evaluated per variant.
    #[arg(long, default_value = "val")]
    split: String,
    /// Run sweep variants concurrently instead of one at a time.
    #[arg(long)]
    parallel: bool,
}

#[derive(Args)]
struct ExportPrArgs {
    /// report.json files; each becomes one labelled series.
    #[arg(long, num_args = 1..)]
    report: Vec<PathBuf>,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

fn run(cli: Cli) -> fslab_core::Result<()> {
    match cli.command {
        Command::Synth { command: SynthCommand::Gen(args) } => {
            let ratios = match &args.split_ratios {
                Some(v) => [v[0], v[1], v[2], v[3]],
                None => synth::DEFAULT_SPLIT_RATIOS,
            };
            let opts = CorpusOptions {
                n_clips: args.clips,
                n_frames: args.frames,
                height: args.size,
                width: args.size,
                split_ratios: ratios,
                force: args.force,
            };
            let manifest = synth::build_corpus(args.seed, &args.out, &opts)?;
            for (split, ids) in &manifest.splits {
                println!("{split}: {} clips", ids.len());
            }
            println!("wrote corpus to {}", args.out.display());
        }
        Command::Train(args) => {
            let cfg = RunConfig::load(&args.config)?;
            let outcome = harness::train_resume(&cfg, args.resume.as_deref())?;
            for (stage, epoch, loss) in &outcome.epoch_losses {
                println!("{stage} epoch {epoch}: loss {loss:.6}");
            }
            println!("final checkpoint: {}", outcome.final_checkpoint.display());
        }
        Command::Eval(args) => {
            let ckpt = Checkpoint::load(&args.checkpoint)?;
            let corpus = args.corpus.clone().unwrap_or_else(|| ckpt.config.corpus.clone());
            let eval = harness::evaluate(&ckpt, &corpus, &args.split, Some(&args.out))?;
            let d = &eval.report.dataset;
            println!(
                "split {}: mean_j={:.4} mean_f={:.4} mae={:.4} f_beta_max={:.4} \
                 e_measure_max={:.4} s_measure={:.4} ({} frames, {:.4} s/frame)",
                args.split,
                d.mean_j,
                d.mean_f,
                d.mae,
                d.f_beta_max,
                d.e_measure_max,
                d.s_measure,
                eval.n_frames,
                eval.runtime_s_per_frame
            );
            println!("report written to {}", args.out.join("report.json").display());
        }
        Command::Ablate(args) => {
            let cfg = RunConfig::load(&args.config)?;
            let rcam: Vec<RcamMode> =
                args.rcam_modes.iter().map(|s| s.parse()).collect::<fslab_core::Result<_>>()?;
            let bpm: Vec<BpmMode> =
                args.bpm_modes.iter().map(|s| s.parse()).collect::<fslab_core::Result<_>>()?;
            let rows = harness::ablate(&cfg, &rcam, &bpm, &args.bpm_n, &args.split, args.parallel)?;
            for row in &rows {
                println!(
                    "{}: params={} flops={:.3}G runtime={:.4}s mean_j={:.4} mean_f={:.4}",
                    row.variant,
                    row.params_total,
                    row.flops_total / 1e9,
                    row.runtime_s_per_frame,
                    row.metrics.mean_j,
                    row.metrics.mean_f
                );
            }
            println!("table written to {}", cfg.out_dir.join("ablation.csv").display());
        }
        Command::ExportPr(args) => {
            let mut series = Vec::new();
            for path in &args.report {
                let text = std::fs::read_to_string(path)?;
                let report: MetricReport = serde_json::from_str(&text)
                    .map_err(|e| CoreError::config(format!("{}: {e}", path.display())))?;
                let label = path
                    .parent()
                    .and_then(|p| p.file_name())
                    .and_then(|n| n.to_str())
                    .unwrap_or("report")
                    .to_string();
                series.push((label, report));
            }
            let refs: Vec<(String, &MetricReport)> =
                series.iter().map(|(n, r)| (n.clone(), r)).collect();
            harness::export_pr(&refs, &args.out)?;
            println!("wrote {} series to {}", refs.len(), args.out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                CoreError::Config(_) | CoreError::Spec(_) => ExitCode::from(2),
                CoreError::Numerical(_) => ExitCode::from(3),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
