use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use panet::data::{
    augment_all, load_image, load_mask, read_dataset, save_image, save_mask, synth_dataset, write_dataset, AugTag,
    GrayImage,
};
use panet::gradsuite::{gradient_suite, GRADCHECK_TOLERANCE};
use panet::metrics::evaluate;
use panet::panet::{load_checkpoint, PaNet};
use panet::postprocess::postprocess;
use panet::rng::derive_seed;
use panet::train::{ablate, cross_validate, predict, train, PreparedData, Progress, TrainConfig, TrainSeeds,
    STREAM_AUGMENT, STREAM_PHANTOMS,
};
use panet::BinaryMask;

#[derive(Parser)]
#[command(name = "panet", version, about = "Carotid plaque segmentation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Per-key override, e.g. `--set model.enable_se=false`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(p) => TrainConfig::from_file(p)?,
            None => TrainConfig::default(),
        };
        for kv in &self.overrides {
            cfg.apply_override(kv)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate seeded phantoms as a dataset directory.
    Synth {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Number of phantoms; defaults to `num_phantoms`.
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the six augmentations of every original in a dataset.
    Augment {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model on the augmented dataset and write `model.ckpt`.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Segment one image: writes `<stem>_mask.pgm` and `<stem>_prob.pgm`.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Refine a binary mask: writes `<stem>_post.pgm`.
    Postprocess {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print `dice,iou,acc,mhd` for a predicted mask against a label.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        label: PathBuf,
        /// Print the column header first.
        #[arg(long)]
        header: bool,
    },
    /// k-fold cross-validation with before/after post-processing metrics.
    Cv {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Module and loss ablation grids on shared folds.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of every layer and loss.
    Gradcheck {
        /// Also write the results as JSON to `<out>/gradcheck.json`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn stem(path: &Path) -> Result<String> {
    Ok(path
        .file_stem()
        .and_then(|s| s.to_str())
        .with_context(|| format!("{}: no file name", path.display()))?
        .to_string())
}

fn log_progress(p: Progress<'_>) {
    match p {
        Progress::FoldStart { name, fold, folds, train_samples } => {
            eprintln!("[{name}] fold {}/{folds}: {train_samples} training samples", fold + 1)
        }
        Progress::Epoch { name, fold, stats } => {
            eprintln!("[{name}] fold {} epoch {}: loss {:.5}", fold + 1, stats.epoch + 1, stats.mean_loss)
        }
    }
}

fn synth(cfg: &TrainConfig, count: Option<usize>, out: &Path) -> Result<()> {
    let n = count.unwrap_or(cfg.num_phantoms);
    let base = derive_seed(cfg.seed, STREAM_PHANTOMS);
    let samples = synth_dataset(&cfg.phantom_config(), n, base)?;
    let seeds: Vec<u64> = (0..n).map(|i| derive_seed(base, i as u64)).collect();
    write_dataset(out, &samples, &seeds)?;
    println!("wrote {n} phantoms to {}", out.display());
    Ok(())
}

fn augment(cfg: &TrainConfig, dataset: &Path, out: &Path) -> Result<()> {
    let originals: Vec<_> = read_dataset(dataset)?
        .into_iter()
        .map(|(_, s)| s)
        .filter(|s| s.tag == AugTag::None)
        .collect();
    let base = derive_seed(cfg.seed, STREAM_AUGMENT);
    let samples = augment_all(&originals, &cfg.augment, base)?;
    let per = samples.len() / originals.len().max(1);
    let seeds: Vec<u64> = (0..samples.len()).map(|i| derive_seed(base, (i / per.max(1)) as u64)).collect();
    write_dataset(out, &samples, &seeds)?;
    println!("wrote {} augmented samples from {} originals to {}", samples.len(), originals.len(), out.display());
    Ok(())
}

fn train_cmd(cfg: &TrainConfig, out: &Path) -> Result<()> {
    let data = PreparedData::new(cfg)?;
    let train_set: Vec<_> = data.augmented.into_iter().flatten().collect();
    std::fs::create_dir_all(out)?;
    let ckpt = out.join("model.ckpt");
    let outcome = train(cfg, &train_set, TrainSeeds::from_seed(cfg.seed), Some(&ckpt), |s| {
        eprintln!("epoch {}: loss {:.5}", s.epoch + 1, s.mean_loss)
    })?;
    let history = serde_json::json!({ "steps": outcome.steps, "history": outcome.history });
    std::fs::write(out.join("history.json"), serde_json::to_string_pretty(&history)? + "\n")?;
    std::fs::write(out.join("config.txt"), cfg.to_string())?;
    println!("wrote {} ({} steps)", ckpt.display(), outcome.steps);
    Ok(())
}

fn predict_cmd(checkpoint: &Path, image: &Path, out: &Path) -> Result<()> {
    let model: PaNet<f32> =
        load_checkpoint(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let img = load_image(image)?;
    let probs = predict(&model, &img)?;
    let (h, w) = img.dims();
    let mask = BinaryMask::from_probabilities(h, w, &probs)?;
    let name = stem(image)?;
    std::fs::create_dir_all(out)?;
    save_mask(&mask, out.join(format!("{name}_mask.pgm")))?;
    let prob_img = GrayImage::from_fn(h, w, |r, c| probs[r * w + c]);
    save_image(&prob_img, out.join(format!("{name}_prob.pgm")))?;
    println!("{}: {} plaque pixels", image.display(), mask.count());
    Ok(())
}

fn postprocess_cmd(cfg: &TrainConfig, mask: &Path, out: &Path) -> Result<()> {
    let m = load_mask(mask)?;
    let outcome = postprocess(&m, &cfg.postprocess);
    std::fs::create_dir_all(out)?;
    let path = out.join(format!("{}_post.pgm", stem(mask)?));
    save_mask(&outcome.mask, &path)?;
    println!(
        "{}: {} components after erosion, kept areas {:?}",
        path.display(),
        outcome.num_components,
        outcome.retained_areas
    );
    Ok(())
}

fn evaluate_cmd(pred: &Path, label: &Path, header: bool) -> Result<()> {
    let r = evaluate(&load_mask(label)?, &load_mask(pred)?)?;
    if header {
        println!("dice,iou,acc,mhd");
    }
    let mhd = r.mhd.map(|v| v.to_string()).unwrap_or_default();
    println!("{},{},{},{mhd}", r.dice, r.iou, r.acc);
    Ok(())
}

fn cv_cmd(cfg: &TrainConfig, out: &Path) -> Result<()> {
    let data = PreparedData::new(cfg)?;
    let report = cross_validate(cfg, &data, "cv", Some(&out.join("checkpoints")), &mut log_progress)?;
    report.write(out)?;
    println!("{}", report.summary());
    Ok(())
}

fn ablate_cmd(cfg: &TrainConfig, out: &Path) -> Result<()> {
    let data = PreparedData::new(cfg)?;
    let report = ablate(cfg, &data, Some(&out.join("checkpoints")), &mut log_progress)?;
    report.write(out)?;
    for row in &report.rows {
        println!("{:?} {:<26} {}", row.table, row.label, row.metrics);
    }
    Ok(())
}

fn gradcheck_cmd(out: Option<&Path>) -> Result<()> {
    let cases = gradient_suite()?;
    for c in &cases {
        let verdict = if c.passed() { "ok" } else { "FAIL" };
        println!("{:<22} {:>10.3e}  {verdict}", c.name, c.max_rel_error);
    }
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("gradcheck.json"), serde_json::to_string_pretty(&cases)? + "\n")?;
    }
    let failed: Vec<&str> = cases.iter().filter(|c| !c.passed()).map(|c| c.name).collect();
    if !failed.is_empty() {
        bail!("gradcheck above {GRADCHECK_TOLERANCE:e}: {}", failed.join(", "));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { cfg, count, out } => synth(&cfg.load()?, count, &out),
        Command::Augment { cfg, dataset, out } => augment(&cfg.load()?, &dataset, &out),
        Command::Train { cfg, out } => train_cmd(&cfg.load()?, &out),
        Command::Predict { checkpoint, image, out } => predict_cmd(&checkpoint, &image, &out),
        Command::Postprocess { cfg, mask, out } => postprocess_cmd(&cfg.load()?, &mask, &out),
        Command::Evaluate { pred, label, header } => evaluate_cmd(&pred, &label, header),
        Command::Cv { cfg, out } => cv_cmd(&cfg.load()?, &out),
        Command::Ablate { cfg, out } => ablate_cmd(&cfg.load()?, &out),
        Command::Gradcheck { out } => gradcheck_cmd(out.as_deref()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
