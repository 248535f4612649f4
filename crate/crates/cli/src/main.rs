use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use zspad_core::pipeline::{self, EvalSelection, PipelineConfig};
use zspad_core::synth::{generate_dataset, DatasetCounts, SynthParams};
use zspad_core::Error;

/// Zero-shot presentation attack detection for OCT fingerprint scans.
#[derive(Debug, Parser)]
#[command(name = "zspad", version, about)]
struct Cli {
    #[command(flatten)]
    global: Global,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// Flat `key = value` config file; flags and environment override it.
    #[arg(long, global = true, env = "ZSPAD_CONFIG")]
    config: Option<PathBuf>,

    /// Root seed for every random stage.
    #[arg(long, global = true, env = "ZSPAD_SEED")]
    seed: Option<u64>,

    /// Dataset directory holding manifest.tsv.
    #[arg(long, global = true, env = "ZSPAD_DATA_DIR")]
    data_dir: Option<PathBuf>,

    #[arg(long, global = true, env = "ZSPAD_MODEL_PATH")]
    model_path: Option<PathBuf>,

    #[arg(long, global = true, env = "ZSPAD_CALIBRATION_PATH")]
    calibration_path: Option<PathBuf>,

    #[arg(long, global = true, env = "ZSPAD_REPORT_DIR")]
    report_dir: Option<PathBuf>,

    /// Extra config override, e.g. `--set ae.epochs=5`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Log progress to stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic phantom dataset and its manifest.
    Synth(SynthArgs),
    /// Train the autoencoder on the model split.
    Train {
        #[arg(long, env = "ZSPAD_EPOCHS")]
        epochs: Option<usize>,
    },
    /// Fit score calibration on the score split.
    Calibrate,
    /// Score every test volume into scores.csv.
    Score {
        /// Output CSV (default: <report_dir>/scores.csv).
        #[arg(long)]
        scores: Option<PathBuf>,
    },
    /// Evaluate a score CSV: ROC reports, summary and scatter data.
    Eval {
        /// Input CSV (default: <report_dir>/scores.csv).
        #[arg(long)]
        scores: Option<PathBuf>,
        /// Restrict to one score, `ms`, or a family
        /// (statistical, density, divergence).
        #[arg(long = "score", default_value = "all")]
        selection: String,
    },
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Output directory (default: the configured data dir).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    model: usize,
    #[arg(long, default_value_t = 4)]
    score: usize,
    #[arg(long, default_value_t = 6)]
    test_bona: usize,
    /// Attacks, spread evenly over the 2D, 3D-pressed and 3D-unpressed presets.
    #[arg(long, default_value_t = 6)]
    test_pai: usize,
    #[arg(long, default_value_t = 0)]
    test_transparent: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 192)]
    width: usize,
    #[arg(long, default_value_t = 16)]
    bscans: usize,
    #[arg(long, default_value_t = 0.1)]
    speckle: f64,
    #[arg(long, default_value_t = 0.3)]
    jitter: f64,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Argument(_) | Error::Config(_) => 2,
        Error::Io { .. } | Error::Format(_) | Error::Corrupt(_) => 3,
        Error::ZeroPaViolation(_) => 4,
        Error::Divergence { .. } => 5,
        Error::CalibrationDegenerate(_) => 6,
        Error::MissingArtifact(_) | Error::IncompatibleCheckpoint(_) => 7,
        Error::SingleClass(_) => 8,
        Error::Manifest(_) | Error::EmptyModelSet => 9,
        _ => 1,
    }
}

fn load_config(g: &Global) -> Result<PipelineConfig, Error> {
    let mut cfg = match &g.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    for (slot, value) in [
        (&mut cfg.paths.data_dir, &g.data_dir),
        (&mut cfg.paths.model_path, &g.model_path),
        (&mut cfg.paths.calibration_path, &g.calibration_path),
        (&mut cfg.paths.report_dir, &g.report_dir),
    ] {
        if let Some(v) = value {
            *slot = v.clone();
        }
    }
    for kv in &g.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Argument(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k, v)?;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Error> {
    let mut cfg = load_config(&cli.global)?;
    match cli.command {
        Command::Synth(a) => {
            let out = a.out.unwrap_or_else(|| cfg.paths.data_dir.clone());
            let counts = DatasetCounts {
                model: a.model,
                score: a.score,
                test_bonafide: a.test_bona,
                test_attack: a.test_pai,
                test_transparent: a.test_transparent,
            };
            let params = SynthParams {
                seed: cfg.seed,
                height: a.height,
                width: a.width,
                bscans_per_volume: a.bscans,
                speckle_sigma: a.speckle,
                layer_jitter: a.jitter,
                ..SynthParams::default()
            };
            let ds = generate_dataset(&out, cfg.seed, &counts.requests(), &params)?;
            println!("{}", ds.manifest.display());
        }
        Command::Train { epochs } => {
            if let Some(n) = epochs {
                cfg.ae.epochs = n;
            }
            println!("epoch,loss");
            pipeline::run_train(&cfg, |e| println!("{},{}", e.epoch, e.mean_loss))?;
            log::info!("wrote {}", cfg.paths.model_path.display());
        }
        Command::Calibrate => {
            let cal = pipeline::run_calibrate(&cfg)?;
            print!("{}", cal.to_text());
        }
        Command::Score { scores } => {
            let out = scores.unwrap_or_else(|| cfg.scores_path());
            let reports = pipeline::run_score(&cfg, &out)?;
            log::info!("scored {} volumes into {}", reports.len(), out.display());
        }
        Command::Eval { scores, selection } => {
            let selection: EvalSelection = selection.parse()?;
            let scores = scores.unwrap_or_else(|| cfg.scores_path());
            let rows = pipeline::run_eval(&scores, &cfg.paths.report_dir, selection)?;
            print!("{}", pipeline::summary_to_csv(&rows));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ZSPAD_LOG", level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
