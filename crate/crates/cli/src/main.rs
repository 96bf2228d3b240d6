use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use mcfnet::data::{make_split, synth_dataset, ClassOrder, Dataset, SliceSample};
use mcfnet::train::trainer::LOG_FILE;
use mcfnet::train::{evaluate, load_dataset, render_outputs, Checkpoint, Config, Trainer};

#[derive(Parser)]
#[command(name = "mcfnet", version, about = "Cascaded dual-backbone segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a TOML config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `train.seed`.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "runs/latest")]
        out: PathBuf,
    },
    /// Score a checkpoint on a dataset directory.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Partition to score; defaults to `test`, or every case if none are.
        #[arg(long)]
        partition: Option<String>,
    },
    /// Write prediction overlays and the loss curve.
    Render {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        partition: Option<String>,
    },
    /// Generate a synthetic shapes dataset directory.
    Synth {
        #[arg(long)]
        cases: usize,
        /// Class count including background.
        #[arg(long)]
        classes: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 256)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.8)]
        train_fraction: f64,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Train { config, seed, out } => train(&config, seed, &out),
        Command::Eval { checkpoint, data, out, partition } => eval(&checkpoint, &data, &out, partition),
        Command::Render { checkpoint, data, out, partition } => render(&checkpoint, &data, &out, partition),
        Command::Synth { cases, classes, out, size, seed, train_fraction } => {
            synth(cases, classes, &out, size, seed, train_fraction)
        }
    }
}

fn train(path: &Path, seed: Option<u64>, out: &Path) -> Result<()> {
    let mut config = Config::load(path)?;
    if let Some(s) = seed {
        config.train.seed = s;
    }
    // Dataset paths are relative to the config file.
    if let (Some(p), Some(dir)) = (&config.data.path, path.parent()) {
        if p.is_relative() {
            config.data.path = Some(dir.join(p));
        }
    }
    let dataset = load_dataset(&config.data).context("loading training data")?;
    let mut trainer = Trainer::new(config, &dataset.classes)?;
    let summary = trainer.run(&dataset, out)?;
    let last = summary.records.last().expect("at least one epoch");
    println!(
        "{} epochs, {} iterations; final loss {:.5}, train DSC {:.2}; best epoch {} (DSC {:.2})",
        summary.records.len(),
        trainer.iterations,
        last.loss,
        last.train_dsc,
        summary.best_epoch,
        summary.best_score
    );
    println!("checkpoints in {}", out.display());
    Ok(())
}

fn chosen_samples<'a>(dataset: &'a Dataset, partition: &Option<String>) -> Result<(Vec<&'a SliceSample>, Option<String>)> {
    match partition {
        Some(p) => {
            let s = dataset.samples_in(p);
            if s.is_empty() {
                bail!("no samples in partition {p:?}");
            }
            Ok((s, Some(p.clone())))
        }
        None if !dataset.samples_in("test").is_empty() => Ok((dataset.samples_in("test"), Some("test".into()))),
        None => Ok((dataset.samples.iter().collect(), None)),
    }
}

fn eval(checkpoint: &Path, data: &Path, out: &Path, partition: Option<String>) -> Result<()> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let dataset = Dataset::read(data)?;
    let (_, part) = chosen_samples(&dataset, &partition)?;
    let report = evaluate(&ckpt, &dataset, part.as_deref())?;
    report.write_csv(out)?;
    report.write_table(std::io::stdout().lock())?;
    println!("metrics written to {}", out.display());
    Ok(())
}

fn render(checkpoint: &Path, data: &Path, out: &Path, partition: Option<String>) -> Result<()> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let dataset = Dataset::read(data)?;
    if ckpt.num_classes() != dataset.num_classes() {
        bail!("checkpoint has {} classes, dataset has {}", ckpt.num_classes(), dataset.num_classes());
    }
    let (samples, _) = chosen_samples(&dataset, &partition)?;
    let log = checkpoint.parent().map(|d| d.join(LOG_FILE)).filter(|p| p.exists());
    let written = render_outputs(&ckpt, &samples, out, log.as_deref())?;
    println!("wrote {} images to {}", written.len(), out.display());
    Ok(())
}

fn synth(cases: usize, classes: usize, out: &Path, size: usize, seed: u64, train_fraction: f64) -> Result<()> {
    let samples = synth_dataset(cases, classes, size, seed)?;
    let names: Vec<String> = (1..classes).map(|i| format!("shape{i}")).collect();
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    let ids: Vec<String> = samples.iter().map(|s| s.case_id.clone()).collect();
    let split = if cases >= 2 { Some(make_split(&ids, train_fraction, seed)?) } else { None };
    let ds = Dataset::new(ClassOrder::with_background(&names)?, samples, split.as_ref())?;
    ds.write(out)?;
    println!("wrote {cases} cases with {classes} classes to {}", out.display());
    Ok(())
}
