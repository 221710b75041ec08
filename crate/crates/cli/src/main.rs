//! `patchseg`: pseudo-annotated segmentation masks from ViT patch features.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error.

mod config;
mod runreport;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use patchseg::synth::{generate, write_dataset, SynthConfig};

use config::{ConfigError, RunArgs, RunConfig};
use runreport::ReportHandle;
use stages::Ctx;

#[derive(Parser)]
#[command(name = "patchseg", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Partition every image's patch graph into segments and list crops
    Segment(RunArgs),
    /// Cluster crop features and label valid segments
    Label(RunArgs),
    /// Render pseudo masks at the original image size
    Mask(RunArgs),
    /// Score pseudo masks against ground truth
    Eval(RunArgs),
    /// segment, label, mask and (with ground truth) eval in one go
    Pipeline(RunArgs),
    /// Label, mask and eval for every K of a sweep
    Sweep(RunArgs),
    /// Write the training manifest for mask de-noising
    ExportDenoise(RunArgs),
    /// Nearest segments of a query segment in crop-feature space
    Retrieve {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        image: String,
        #[arg(long)]
        segment: usize,
        #[arg(long, default_value_t = 5)]
        top: usize,
    },
    /// Generate a synthetic dataset with ground truth
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 20)]
        images: usize,
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Noise standard deviation relative to class separation
        #[arg(long, default_value_t = 0.05)]
        noise: f64,
    },
}

fn open(args: &RunArgs) -> Result<(Ctx, ReportHandle)> {
    let config = RunConfig::resolve(args)?;
    let ctx = Ctx::new(config)?;
    let report = ReportHandle::open(&ctx.config)?;
    Ok((ctx, report))
}

fn print_eval(k: usize, r: &patchseg::evalkit::EvalReport) {
    println!(
        "K={k}  mIoU {:.4}  pixel accuracy {:.4}  mean F1 {:.4}",
        r.miou, r.pixel_accuracy, r.mean_f1
    );
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Segment(args) => {
            let (ctx, mut rep) = open(&args)?;
            rep.time("segment", |r| stages::segment(&ctx, r))?;
            rep.save()?;
            let r = &rep.report;
            println!(
                "{} segments, {:.1}% valid",
                r.total_segments.unwrap_or(0),
                r.valid_percent.unwrap_or(0.0)
            );
        }
        Command::Label(args) => {
            let (ctx, mut rep) = open(&args)?;
            let k = ctx.cluster_count()?;
            rep.time("label", |_| {
                let sets = stages::load_segments(&ctx)?;
                let (crops, features) = stages::crop_features(&ctx, &sets)?;
                stages::label_into(&ctx, &sets, &crops, &features, k, &ctx.run_dir())
            })?;
            rep.save()?;
        }
        Command::Mask(args) => {
            let (ctx, mut rep) = open(&args)?;
            rep.time("mask", |_| {
                let labeled = stages::load_labels(&ctx, &ctx.run_dir())?;
                stages::mask_into(&ctx, &labeled, &ctx.run_dir())
            })?;
            rep.save()?;
        }
        Command::Eval(args) => {
            let (ctx, mut rep) = open(&args)?;
            let k = stages::cluster_summary(&ctx.run_dir())?.k;
            let report = rep.time("eval", |_| stages::eval_into(&ctx, k, &ctx.run_dir()))?;
            rep.save()?;
            print_eval(k, &report);
        }
        Command::Pipeline(args) => {
            let (ctx, mut rep) = open(&args)?;
            let k = ctx.cluster_count()?;
            let run = ctx.run_dir();
            let sets = rep.time("segment", |r| stages::segment(&ctx, r))?;
            let (_, labeled) = rep.time("label", |_| {
                let (crops, features) = stages::crop_features(&ctx, &sets)?;
                stages::label_into(&ctx, &sets, &crops, &features, k, &run)
            })?;
            rep.time("mask", |_| stages::mask_into(&ctx, &labeled, &run))?;
            if stages::has_ground_truth(&ctx) {
                let report = rep.time("eval", |_| stages::eval_into(&ctx, k, &run))?;
                print_eval(k, &report);
            } else {
                rep.report
                    .notes
                    .push("eval skipped: manifest has images without ground truth".into());
            }
            rep.save()?;
        }
        Command::Sweep(args) => {
            let (ctx, mut rep) = open(&args)?;
            let results = rep.time("sweep", |r| {
                let sets = if ctx.run_dir().join("crops.json").is_file() {
                    stages::load_segments(&ctx)?
                } else {
                    stages::segment(&ctx, r)?
                };
                stages::sweep(&ctx, &sets, r)
            })?;
            rep.save()?;
            for (k, r) in &results {
                print_eval(*k, r);
            }
        }
        Command::ExportDenoise(args) => {
            let (ctx, mut rep) = open(&args)?;
            let summary = rep.time("export-denoise", |_| stages::export_denoise(&ctx))?;
            rep.save()?;
            println!("{} masks kept, {} dropped", summary.kept, summary.dropped);
        }
        Command::Retrieve {
            run,
            image,
            segment,
            top,
        } => {
            let (ctx, _) = open(&run)?;
            let found = stages::retrieve(&ctx, &image, segment, top)?;
            emit(&serde_json::to_string_pretty(&found)?)?;
        }
        Command::Synth {
            out_dir,
            images,
            classes,
            seed,
            noise,
        } => {
            let config = SynthConfig {
                num_images: images,
                num_classes: classes,
                noise,
                seed,
                ..SynthConfig::default()
            };
            let dataset = generate(&config).map_err(|e| ConfigError(e.to_string()))?;
            let path = write_dataset(&dataset, &out_dir)?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

/// Prints to stdout; a reader that closed the pipe early is not an error.
fn emit(text: &str) -> Result<()> {
    use std::io::Write;
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            if err.chain().any(|e| e.is::<ConfigError>()) {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
