//! Command-line front end for the adaptation pipeline.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime failure.

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use dcda_core::config::RunConfig;
use dcda_core::data::{generate_phantoms, load_gray, load_manifest, preprocess, save_gray, GrayImageF32, PhantomSpec};
use dcda_core::drst::{translate_step1, DrstBundle};
use dcda_core::metrics::{evaluate, paired_ttest, EvalResult, MaskPredictor, PngMaskPredictor};
use dcda_core::train::{load_experts, run_stage_drst, run_stage_joint, run_stage_source};
use dcda_core::types::DomainTag;

#[derive(Parser)]
#[command(
    name = "dcda",
    about = "Cross-modality domain adaptation for vessel segmentation",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// TOML config file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<RunConfig, CliError> {
        let cfg = match &self.config {
            Some(path) => RunConfig::load(path).map_err(CliError::Runtime)?,
            None => RunConfig::default(),
        };
        cfg.validate().map_err(CliError::Runtime)?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic two-domain vessel phantom dataset.
    SynthData {
        /// Output directory for the dataset tree.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Images per domain.
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        /// Test images per domain (default: n / 5).
        #[arg(long)]
        test_count: Option<usize>,
    },
    /// Stage 1: pretrain the style-transfer networks.
    TrainDrst {
        #[command(flatten)]
        config: ConfigArg,
        /// Resume from an existing drst checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Stage 2: pretrain the source segmentation expert.
    PretrainSource {
        #[command(flatten)]
        config: ConfigArg,
        /// Stage-1 checkpoint (validated if given).
        #[arg(long)]
        drst: Option<PathBuf>,
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Stage 3: joint training of both experts with consistency.
    TrainJoint {
        #[command(flatten)]
        config: ConfigArg,
        /// Stage-1 checkpoint.
        #[arg(long)]
        drst: PathBuf,
        /// Stage-2 checkpoint; optional only with the no_fs ablation.
        #[arg(long)]
        source: Option<PathBuf>,
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Dump translated images for every entry of the dataset.
    Translate {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        drst: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions on a test split and print mean±std metrics.
    Evaluate {
        #[command(flatten)]
        config: ConfigArg,
        /// Joint or source checkpoint to run.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Which expert inside the checkpoint to evaluate.
        #[arg(long, default_value = "target")]
        expert: String,
        /// Folder of prediction PNGs to score instead of a model.
        #[arg(long)]
        pred: Option<PathBuf>,
        /// Domain whose test split is scored.
        #[arg(long, default_value = "target")]
        domain: String,
        /// Write the per-image table here.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Compare per-image Dice against another evaluation csv with a
        /// paired two-tailed t-test.
        #[arg(long)]
        compare: Option<PathBuf>,
        /// Export predicted masks as PNGs into this folder.
        #[arg(long)]
        export_pred: Option<PathBuf>,
    },
}

enum CliError {
    Usage(String),
    Runtime(dcda_core::Error),
}

impl From<dcda_core::Error> for CliError {
    fn from(e: dcda_core::Error) -> Self {
        CliError::Runtime(e)
    }
}

fn parse_domain(name: &str) -> Result<DomainTag, CliError> {
    match name {
        "source" => Ok(DomainTag::Source),
        "target" => Ok(DomainTag::Target),
        other => Err(CliError::Usage(format!(
            "unknown domain {other:?}; expected \"source\" or \"target\""
        ))),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::SynthData { out, seed, n, size, test_count } => {
            let spec = PhantomSpec {
                seed,
                image_size: size,
                n_per_domain: n,
                test_count: test_count.unwrap_or_else(|| (n / 5).max(1)),
                ..Default::default()
            };
            let manifest = generate_phantoms(&spec, &out)?;
            println!(
                "wrote {} images per domain under {} ({} test per domain)",
                n,
                out.display(),
                spec.test_count
            );
            let _ = manifest;
            Ok(())
        }
        Command::TrainDrst { config, resume } => {
            let cfg = config.load()?;
            let outcome = run_stage_drst(&cfg, resume.as_deref())?;
            println!("drst checkpoint: {}", outcome.checkpoint.display());
            Ok(())
        }
        Command::PretrainSource { config, drst, resume } => {
            let cfg = config.load()?;
            let outcome = run_stage_source(&cfg, drst.as_deref(), resume.as_deref())?;
            println!("source checkpoint: {}", outcome.checkpoint.display());
            Ok(())
        }
        Command::TrainJoint { config, drst, source, resume } => {
            let cfg = config.load()?;
            if source.is_none() && !cfg.ablations.no_fs && resume.is_none() {
                return Err(CliError::Usage(
                    "--source is required unless ablations.no_fs is set in the config".into(),
                ));
            }
            let outcome = run_stage_joint(&cfg, &drst, source.as_deref(), resume.as_deref())?;
            println!("joint checkpoint: {}", outcome.checkpoint.display());
            Ok(())
        }
        Command::Translate { config, drst, out } => {
            let cfg = config.load()?;
            let device = cfg.resolve_device()?;
            let (bundle, _, _) = DrstBundle::load(&drst, &device)?;
            let manifest = load_manifest(&cfg.data_root, cfg.split_seed, cfg.test_count)?;
            let mut sources: Vec<_> = manifest.train_entries(DomainTag::Source);
            sources.extend(manifest.test_entries(DomainTag::Source).into_iter().map(|t| {
                dcda_core::data::TrainSample { id: t.id, image_path: t.image_path, label_path: None }
            }));
            let mut targets: Vec<_> = manifest.train_entries(DomainTag::Target);
            targets.extend(manifest.test_entries(DomainTag::Target).into_iter().map(|t| {
                dcda_core::data::TrainSample { id: t.id, image_path: t.image_path, label_path: None }
            }));
            sources.sort_by(|a, b| a.id.cmp(&b.id));
            targets.sort_by(|a, b| a.id.cmp(&b.id));
            if sources.is_empty() || targets.is_empty() {
                return Err(CliError::Runtime(dcda_core::Error::State(
                    "translation needs images in both domains".into(),
                )));
            }
            let n = sources.len().max(targets.len());
            for i in 0..n {
                let s = &sources[i % sources.len()];
                let t = &targets[i % targets.len()];
                let x = preprocess(
                    &load_gray(&s.image_path)?,
                    cfg.image_size,
                    false,
                    DomainTag::Source,
                    s.id.clone(),
                    &device,
                )?;
                let y = preprocess(
                    &load_gray(&t.image_path)?,
                    cfg.image_size,
                    cfg.invert_target,
                    DomainTag::Target,
                    t.id.clone(),
                    &device,
                )?;
                let r = translate_step1(&bundle, &x, &y)?;
                if i < targets.len() {
                    write_batch_png(&out.join("x_hat"), r.x_hat()?)?;
                }
                if i < sources.len() {
                    write_batch_png(&out.join("y_hat"), r.y_hat()?)?;
                }
            }
            println!("translations written to {}", out.display());
            Ok(())
        }
        Command::Evaluate {
            config,
            checkpoint,
            expert,
            pred,
            domain,
            csv,
            compare,
            export_pred,
        } => {
            let cfg = config.load()?;
            let device = cfg.resolve_device()?;
            let domain = parse_domain(&domain)?;
            let manifest = load_manifest(&cfg.data_root, cfg.split_seed, cfg.test_count)?;
            let invert = domain == DomainTag::Target && cfg.invert_target;

            let predictor: Box<dyn MaskPredictor> = match (&checkpoint, &pred) {
                (Some(path), None) => {
                    let pair = load_experts(path, &device)?;
                    let model = match expert.as_str() {
                        "target" => pair.target_expert,
                        "source" => pair.source_expert,
                        other => {
                            return Err(CliError::Usage(format!(
                                "unknown expert {other:?}; expected \"source\" or \"target\""
                            )))
                        }
                    };
                    Box::new(model)
                }
                (None, Some(dir)) => Box::new(PngMaskPredictor::new(dir.clone())),
                _ => {
                    return Err(CliError::Usage(
                        "pass exactly one of --checkpoint or --pred".into(),
                    ))
                }
            };

            let result = evaluate(predictor.as_ref(), &manifest, domain, invert, cfg.image_size, &device)?;
            println!(
                "dice {}  hd95 {}  (n={}, undefined hd95: {})",
                result.dice_summary(),
                result.hd95_summary(),
                result.per_image.len(),
                result.undefined_hd95
            );
            if let Some(path) = csv {
                if let Some(dir) = path.parent() {
                    std::fs::create_dir_all(dir).map_err(dcda_core::Error::from)?;
                }
                std::fs::write(&path, result.to_csv()).map_err(dcda_core::Error::from)?;
                println!("per-image metrics written to {}", path.display());
            }
            if let Some(other_csv) = compare {
                let text = std::fs::read_to_string(&other_csv).map_err(dcda_core::Error::from)?;
                let other = EvalResult::parse_csv(&text)?;
                let mut a = Vec::new();
                let mut b = Vec::new();
                for mine in &result.per_image {
                    if let Some(theirs) = other.iter().find(|o| o.id == mine.id) {
                        a.push(mine.dice);
                        b.push(theirs.dice);
                    }
                }
                if a.len() < 2 {
                    return Err(CliError::Runtime(dcda_core::Error::Degenerate(
                        "fewer than two matching ids between the two evaluations".into(),
                    )));
                }
                let p = paired_ttest(&a, &b)?;
                println!("paired t-test vs {}: p={p:.6} (n={})", other_csv.display(), a.len());
            }
            if let Some(dir) = export_pred {
                let mut entries = manifest.test_entries(domain);
                entries.sort_by(|a, b| a.id.cmp(&b.id));
                for e in entries {
                    let raw = load_gray(&e.image_path)?;
                    let img = preprocess(&raw, cfg.image_size, invert, domain, e.id.clone(), &device)?;
                    let mask = predictor.predict_mask(&img)?;
                    let grid = mask.to_grid(0)?;
                    let data: Vec<f32> = grid.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
                    let png = GrayImageF32::new(cfg.image_size, cfg.image_size, data)?;
                    save_gray(&dir.join(format!("{}.png", e.id)), &png)?;
                }
                println!("predictions written to {}", dir.display());
            }
            Ok(())
        }
    }
}

fn write_batch_png(dir: &std::path::Path, batch: &dcda_core::ImageBatch) -> Result<(), CliError> {
    let side = batch.side();
    let pixels = batch
        .pixels()
        .flatten_all()
        .map_err(dcda_core::Error::from)?
        .to_vec1::<f32>()
        .map_err(dcda_core::Error::from)?;
    for (i, id) in batch.ids().iter().enumerate() {
        let img = GrayImageF32::new(
            side,
            side,
            pixels[i * side * side..(i + 1) * side * side].to_vec(),
        )?;
        save_gray(&dir.join(format!("{id}.png")), &img)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            eprintln!("run `dcda --help` for the synopsis");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
