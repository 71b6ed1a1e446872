use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ddcnn_core::augment::spec_augment;
use ddcnn_core::datasets::{load_dataset, scan_directory, synth_clip, synth_samples, Dataset, Sample, SceneClass};
use ddcnn_core::features::{load_wav, log_mel, LogMelConfig, MelSpectrogram};
use ddcnn_core::models::{load_checkpoint, save_checkpoint, ModelKind};
use ddcnn_core::rng::{stream, Stream};
use ddcnn_core::train::{evaluate, train, write_metrics_csv, EpochMetrics, TrainConfig};

#[derive(Parser)]
#[command(name = "ddcnn", version, about = "Acoustic scene classification with compact CNNs")]
struct Cli {
    /// Run seed (data split, initialization, augmentation, Disout). Overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for feature extraction and convolutions.
    #[arg(long, global = true, env = "ASC_THREADS")]
    threads: Option<usize>,
    /// Training config, flat `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print a model's layer table, parameter total, MACs and size.
    Inspect {
        model: String,
    },
    /// Train a model and write the best checkpoint plus a metrics log.
    Train {
        #[command(flatten)]
        data: DataArgs,
        /// Checkpoint path; the metrics log goes next to it as `<out>.metrics.csv`.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Train on random crops of this many frames (0 = full maps).
        #[arg(long)]
        crop_frames: Option<usize>,
    },
    /// Evaluate a checkpoint and print per-scene accuracy and loss.
    Eval {
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        /// Which part of the dataset to score.
        #[arg(long, value_enum, default_value_t = Part::Val)]
        split: Part,
        /// Centre-crop length used at evaluation (0 = full maps).
        #[arg(long, default_value_t = 0)]
        crop_frames: usize,
        /// Key-value report path (default `<checkpoint>.eval.txt`).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Write a log-mel map before and after SpecAugment as 640×64 CSV grids.
    AugmentDemo {
        /// WAV file to featurize.
        input: Option<PathBuf>,
        /// Use a synthetic clip of this class instead of a file.
        #[arg(long, value_name = "CLASS", conflicts_with = "input")]
        synthetic: Option<String>,
        /// Output prefix for `<prefix>_original.csv` and `<prefix>_augmented.csv`.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct DataArgs {
    /// Directory with indoor/, outdoor/ and transportation/ subfolders (or a manifest.csv).
    root: Option<PathBuf>,
    /// Generate N synthetic clips per class instead of reading audio.
    #[arg(long, value_name = "N", conflicts_with = "root")]
    synthetic: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Part {
    Train,
    Val,
    All,
}

enum Failure {
    Usage(String),
    Core(ddcnn_core::Error),
}

impl<E: Into<ddcnn_core::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Core(e.into())
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Core(ddcnn_core::Error::Train(ddcnn_core::train::TrainError::Io {
        path: path.display().to_string(),
        source: e,
    }))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Usage(format!("--threads: {e}")))?;
    }
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
            TrainConfig::parse(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?
        }
        None => TrainConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    match cli.command {
        Command::Inspect { model } => inspect(&model, &cfg),
        Command::Train { data, out, model, epochs, crop_frames } => {
            if let Some(m) = model {
                cfg.model = ModelKind::from_name(&m)?;
            }
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            if let Some(c) = crop_frames {
                cfg.crop_frames = c;
            }
            run_train(&data, &out, &cfg)
        }
        Command::Eval { checkpoint, data, split, crop_frames, report } => {
            run_eval(&checkpoint, &data, split, crop_frames, report, &cfg)
        }
        Command::AugmentDemo { input, synthetic, out } => augment_demo(input, synthetic, &out, &cfg),
    }
}

/// `1234567` → `1,234,567`.
fn grouped(n: u64) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

fn inspect(name: &str, cfg: &TrainConfig) -> Result<(), Failure> {
    let kind = ModelKind::from_name(name).map_err(|e| Failure::Usage(e.to_string()))?;
    let spec = kind.build(cfg.disout);
    let rows = spec.table_rows(640, 64)?;
    println!("{:<20} {:<24} {:>12}", "Layer", "Output Shape", "# Params");
    println!("{}", "-".repeat(58));
    for r in &rows {
        let shape = format!("{:?}", r.shape);
        println!("{:<20} {:<24} {:>12}", r.label, shape, grouped(r.params as u64));
    }
    println!("{}", "-".repeat(58));
    let params = spec.count_params();
    println!("Total params: {}", grouped(params as u64));
    println!("Total MACs (640x64 input): {}", grouped(spec.count_macs(640, 64)?));
    println!("Model size (32-bit): {:.1} KB", params as f64 * 4.0 / 1024.0);
    Ok(())
}

fn load_data(args: &DataArgs, cfg: &TrainConfig) -> Result<Dataset, Failure> {
    let features = LogMelConfig::default();
    match (&args.root, args.synthetic) {
        (_, Some(n)) => {
            let samples = synth_samples(n, cfg.seed, &features)?;
            Ok(Dataset::stratified(samples, cfg.val_fraction, cfg.seed))
        }
        (Some(root), None) => {
            let manifest = scan_directory(root, cfg.seed)?;
            Ok(load_dataset(&manifest, &features)?)
        }
        (None, None) => Err(Failure::Usage("give a data directory or --synthetic N".into())),
    }
}

fn run_train(args: &DataArgs, out: &Path, cfg: &TrainConfig) -> Result<(), Failure> {
    cfg.validate()?;
    let data = load_data(args, cfg)?;
    println!(
        "training {} on {} clips ({} held out), {} epochs, seed {}",
        cfg.model,
        data.train.len(),
        data.val.len(),
        cfg.epochs,
        cfg.seed
    );
    let report = |m: &EpochMetrics| match (m.val_loss, m.val_acc) {
        (Some(vl), Some(va)) => println!(
            "epoch {:>3}  train_loss {:.4}  train_acc {:.4}  val_loss {vl:.4}  val_acc {va:.4}",
            m.epoch, m.train_loss, m.train_acc
        ),
        _ => println!("epoch {:>3}  train_loss {:.4}  train_acc {:.4}", m.epoch, m.train_loss, m.train_acc),
    };
    let outcome = train(&data, cfg, report)?;
    save_checkpoint(out, &outcome.best.model, outcome.best.step, outcome.best.seed)?;
    let mut metrics = out.as_os_str().to_owned();
    metrics.push(".metrics.csv");
    write_metrics_csv(PathBuf::from(&metrics), &outcome.log)?;
    let best = outcome.log[outcome.best_epoch - 1];
    println!("best epoch: {}", outcome.best_epoch);
    println!("train_acc={}", best.train_acc);
    if let Some(va) = best.val_acc {
        println!("val_acc={va}");
    }
    println!("checkpoint: {}", out.display());
    Ok(())
}

fn run_eval(
    checkpoint: &Path,
    args: &DataArgs,
    split: Part,
    crop_frames: usize,
    report: Option<PathBuf>,
    cfg: &TrainConfig,
) -> Result<(), Failure> {
    let ck = load_checkpoint(checkpoint)?;
    let data = load_data(args, cfg)?;
    let samples: Vec<Sample> = match split {
        Part::Train => data.train,
        Part::Val => data.val,
        Part::All => data.train.into_iter().chain(data.val).collect(),
    };
    let r = evaluate(&ck.model, &samples, crop_frames)?;
    print!("{}", r.to_table());
    let path = report.unwrap_or_else(|| {
        let mut p = checkpoint.as_os_str().to_owned();
        p.push(".eval.txt");
        PathBuf::from(p)
    });
    fs::write(&path, r.to_key_values()).map_err(|e| io_failure(&path, e))?;
    println!("report: {}", path.display());
    Ok(())
}

fn write_grid(path: &Path, map: &MelSpectrogram) -> Result<(), Failure> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| io_failure(path, e.into()))?;
    for row in map.rows() {
        w.write_record(row.iter().map(|v| v.to_string()))
            .map_err(|e| io_failure(path, e.into()))?;
    }
    w.flush().map_err(|e| io_failure(path, e))
}

fn augment_demo(input: Option<PathBuf>, synthetic: Option<String>, out: &Path, cfg: &TrainConfig) -> Result<(), Failure> {
    let clip = match (input, synthetic) {
        (Some(path), _) => load_wav(path)?,
        (None, Some(class)) => {
            let c = SceneClass::from_name(&class)
                .ok_or_else(|| Failure::Usage(format!("unknown class {class:?}")))?;
            synth_clip(c, 0, cfg.seed)
        }
        (None, None) => synth_clip(SceneClass::Indoor, 0, cfg.seed),
    };
    let original = log_mel(&clip, &LogMelConfig::default())?;
    let augmented = spec_augment(&original, &cfg.augment, &mut stream(cfg.seed, Stream::Augment))?;
    let with_suffix = |s: &str| {
        let mut p = out.as_os_str().to_owned();
        p.push(s);
        PathBuf::from(p)
    };
    let (a, b) = (with_suffix("_original.csv"), with_suffix("_augmented.csv"));
    write_grid(&a, &original)?;
    write_grid(&b, &augmented)?;
    println!("wrote {} and {}", a.display(), b.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::grouped;

    #[test]
    fn thousands_separators() {
        assert_eq!(grouped(0), "0");
        assert_eq!(grouped(771), "771");
        assert_eq!(grouped(127_491), "127,491");
        assert_eq!(grouped(4_305_859), "4,305,859");
    }
}
