//! `papyri` — command-line front end for the character pipeline: fuse
//! multi-model detections, split recognition votes, post-process, recover
//! layout, render transcripts, search them, and score predictions.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use papyri_core::eval::EvalMode;
use papyri_core::fusion::ScoreRescaleMode;
use papyri_core::layout::LayoutConfig;

#[derive(Parser)]
#[command(
    name = "papyri",
    version,
    about = "Character-detection post-processing pipeline"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Detection,
    Recognition,
}

impl From<ModeArg> for EvalMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Detection => EvalMode::Detection,
            ModeArg::Recognition => EvalMode::Recognition,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum RescaleArg {
    Proportional,
    Clipped,
}

impl From<RescaleArg> for ScoreRescaleMode {
    fn from(m: RescaleArg) -> Self {
        match m {
            RescaleArg::Proportional => ScoreRescaleMode::Proportional,
            RescaleArg::Clipped => ScoreRescaleMode::Clipped,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Fuse per-model prediction files with weighted boxes fusion.
    Fuse {
        /// One COCO results file per model.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// IoU above which a box joins an existing cluster.
        #[arg(long, default_value_t = 0.55)]
        iou: f64,
        /// Discard input boxes scoring below this before clustering.
        #[arg(long = "skip-thr", default_value_t = 0.0)]
        skip_thr: f64,
        /// Rescaling of cluster scores by support.
        #[arg(long, value_enum, default_value = "clipped")]
        rescale: RescaleArg,
        #[arg(short, long)]
        out: PathBuf,
        /// Worker pool size (0 = all cores).
        #[arg(long, default_value_t = 0)]
        jobs: usize,
    },
    /// Split fused boxes by recognizer votes.
    Ensemble {
        /// Fused prediction file (canonical order defines vote alignment).
        #[arg(long)]
        fused: PathBuf,
        /// Family-A recognizer votes, aligned with the fused file.
        #[arg(long = "family-a")]
        family_a: PathBuf,
        /// Family-B recognizer votes, aligned with the fused file.
        #[arg(long = "family-b")]
        family_b: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Drop low-confidence boxes, then suppress heavy overlaps.
    Postprocess {
        input: PathBuf,
        #[arg(long = "min-conf", default_value_t = 0.3)]
        min_conf: f64,
        /// Overlap suppression IoU threshold.
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        jobs: usize,
    },
    /// Recover lines and paragraphs from a prediction file.
    Layout {
        input: PathBuf,
        #[arg(long = "feather-x", default_value_t = 0.4)]
        feather_x: f64,
        #[arg(long = "feather-y", default_value_t = 0.1)]
        feather_y: f64,
        /// Paragraph break factor over the median line height.
        #[arg(long = "para-gap", default_value_t = 1.8)]
        para_gap: f64,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        jobs: usize,
    },
    /// Render a layout file as plain-text transcripts (one per page).
    Text {
        layout: PathBuf,
        /// Dataset supplying category names and image file names.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Output directory.
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Render a layout file as TEI XML (one file per page).
    Tei {
        layout: PathBuf,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Title for the TEI header (defaults to the document id).
        #[arg(long, default_value = "")]
        title: String,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Keyword search over a directory of transcript files.
    Search {
        /// Directory of .txt transcripts.
        corpus: PathBuf,
        /// Literal pattern, optionally ending in '*' for a stem search.
        #[arg(long)]
        pattern: String,
        #[arg(long, default_value_t = 0)]
        jobs: usize,
    },
    /// Score predictions against ground truth.
    Eval {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long, value_enum)]
        mode: ModeArg,
        /// Per-image cap on scored detections.
        #[arg(long = "max-dets", default_value_t = 2000)]
        max_dets: usize,
        /// Write the machine-readable report here.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Promote confident predictions to a pseudo-label dataset.
    Pseudo {
        pred: PathBuf,
        /// Dataset supplying the images and category table.
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long = "min-conf", default_value_t = 0.5)]
        min_conf: f64,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Generate a synthetic scene and simulated detector outputs.
    Synth {
        #[arg(long)]
        config: PathBuf,
        /// Output directory.
        #[arg(short, long)]
        out: PathBuf,
        /// Override the scene seed from the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run fuse, ensemble, postprocess, layout and text in one go.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        jobs: usize,
    },
}

fn run() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Fuse {
            inputs,
            iou,
            skip_thr,
            rescale,
            out,
            jobs,
        } => commands::cmd_fuse(&inputs, iou, skip_thr, rescale.into(), &out, jobs),
        Command::Ensemble {
            fused,
            family_a,
            family_b,
            out,
        } => commands::cmd_ensemble(&fused, &family_a, &family_b, &out),
        Command::Postprocess {
            input,
            min_conf,
            iou,
            out,
            jobs,
        } => commands::cmd_postprocess(&input, min_conf, iou, &out, jobs),
        Command::Layout {
            input,
            feather_x,
            feather_y,
            para_gap,
            out,
            jobs,
        } => {
            let cfg = LayoutConfig {
                feather_x,
                feather_y,
                paragraph_gap_factor: para_gap,
            };
            commands::cmd_layout(&input, &cfg, &out, jobs)
        }
        Command::Text {
            layout,
            dataset,
            out,
        } => commands::cmd_text(&layout, &dataset, &out),
        Command::Tei {
            layout,
            dataset,
            title,
            out,
        } => commands::cmd_tei(&layout, &dataset, &title, &out),
        Command::Search {
            corpus,
            pattern,
            jobs,
        } => commands::cmd_search(&corpus, &pattern, jobs),
        Command::Eval {
            gt,
            pred,
            mode,
            max_dets,
            out,
        } => commands::cmd_eval(&gt, &pred, mode.into(), max_dets, &out),
        Command::Pseudo {
            pred,
            dataset,
            min_conf,
            out,
        } => commands::cmd_pseudo(&pred, &dataset, min_conf, &out),
        Command::Synth { config, out, seed } => commands::cmd_synth(&config, &out, seed),
        Command::Pipeline { config, jobs } => commands::cmd_pipeline(&config, jobs),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
