mod config;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde_json::json;
use trouspi::data::{
    load_tracks, save_tracks, split, synth_generate, write_atomic, SyntheticConfig, TrackRecord,
};
use trouspi::evaluation::{ablate, ablation_csv, evaluate_tracks, AblationSource, WindowSpec};
use trouspi::gradsuite::{gradient_suite, GRADIENT_TOLERANCE};
use trouspi::model::{load_checkpoint, save_checkpoint, TrouSpiNet, Variant};
use trouspi::training::{prepare_dataset, train as fit_model};

use config::{read_json, Preset, RunConfig};
use manifest::{beside, sha256_file, ManifestBuilder, RunManifest};

/// Published size of the reference network, for comparison in `profile`.
const REFERENCE_PARAMS: f64 = 1.5e6;
const REFERENCE_FLOPS: f64 = 3.0e6;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] trouspi::Error),
    #[error("input: {0}")]
    Input(String),
    #[error("check failed: {0}")]
    Check(String),
}

#[derive(Parser)]
#[command(
    name = "trouspi",
    version,
    about = "Pedestrian crossing-intention prediction from pose sequences"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Suite {
    /// The seven architecture variants.
    Table2,
}

#[derive(Clone, Copy, ValueEnum)]
enum Part {
    All,
    Train,
    Val,
    Test,
}

#[derive(Subcommand)]
enum Command {
    /// Write a complete run configuration for a preset.
    Preset {
        #[arg(long, value_enum)]
        name: Preset,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate synthetic pedestrian tracks as JSON lines.
    Gen {
        /// Generator settings; omitted fields take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        tracks: Option<usize>,
    },
    /// Train on the train split and write model.ckpt, epochs.jsonl, test_metrics.json and manifest.json.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Output directory, created if missing.
        #[arg(long)]
        out: PathBuf,
        /// Overrides both the model initialisation and the training seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a checkpoint on a track file.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        metrics_out: PathBuf,
        /// Run configuration supplying the window rule and split; defaults apply otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "all")]
        split: Part,
    },
    /// Per-layer parameter and FLOP counts as CSV.
    Profile {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train or load every ablation variant and score it on the test split.
    Ablate {
        #[arg(long, value_enum)]
        suite: Suite,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Directory of `<variant>.ckpt` files to score instead of training.
        #[arg(long)]
        checkpoints: Option<PathBuf>,
    },
    /// Finite-difference check of every differentiable layer; exits 1 on any failure.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-hash the artifacts listed in a manifest and compare.
    Verify {
        #[arg(long)]
        manifest: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Preset { name, out } => {
            let text = serde_json::to_string_pretty(&RunConfig::preset(name))
                .map_err(trouspi::Error::from)?;
            write_atomic(&out, |w| writeln!(w, "{text}"))?;
            info!("wrote {}", out.display());
            Ok(())
        }
        Command::Gen {
            config,
            out,
            seed,
            tracks,
        } => gen(config, &out, seed, tracks),
        Command::Train {
            config,
            data,
            out,
            seed,
        } => train(&config, &data, &out, seed),
        Command::Eval {
            ckpt,
            data,
            metrics_out,
            config,
            split,
        } => eval(&ckpt, &data, &metrics_out, config.as_deref(), split),
        Command::Profile { config, out } => profile(&config, &out),
        Command::Ablate {
            suite: Suite::Table2,
            config,
            data,
            out,
            checkpoints,
        } => run_ablation(&config, &data, &out, checkpoints.as_deref()),
        Command::Gradcheck { seed, out } => gradcheck(seed, out.as_deref()),
        Command::Verify { manifest } => verify(&manifest),
    }
}

fn gen(
    config: Option<PathBuf>,
    out: &Path,
    seed: Option<u64>,
    tracks: Option<usize>,
) -> Result<(), CliError> {
    let run = ManifestBuilder::start("gen");
    let mut cfg: SyntheticConfig = match &config {
        Some(p) => read_json(p)?,
        None => SyntheticConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(n) = tracks {
        cfg.n_tracks = n;
    }
    let generated = synth_generate(&cfg)?;
    save_tracks(out, &generated)?;
    info!("wrote {} tracks to {}", generated.len(), out.display());
    run.finish(&beside(out), snapshot(&cfg)?, Some(cfg.seed), &[out])?;
    Ok(())
}

fn snapshot<T: serde::Serialize>(value: &T) -> Result<serde_json::Value, CliError> {
    Ok(serde_json::to_value(value).map_err(trouspi::Error::from)?)
}

fn load_split(cfg: &RunConfig, data: &Path) -> Result<trouspi::data::Split, CliError> {
    let tracks = load_tracks(data)?;
    Ok(split(&tracks, cfg.split.fractions, cfg.split.seed)?)
}

fn train(config: &Path, data: &Path, out: &Path, seed: Option<u64>) -> Result<(), CliError> {
    let run = ManifestBuilder::start("train");
    let mut cfg = RunConfig::load(config)?;
    if let Some(s) = seed {
        cfg.model.seed = s;
        cfg.train.seed = s;
    }
    std::fs::create_dir_all(out).map_err(|e| CliError::Input(format!("{}: {e}", out.display())))?;

    let prepared = prepare_dataset(&load_split(&cfg, data)?, &cfg.windows)?;
    info!(
        "windows: train {}, val {}, test {}",
        prepared.train.len(),
        prepared.val.len(),
        prepared.test.len()
    );
    let mut model = TrouSpiNet::build(cfg.model.clone())?;
    model.set_context_stats(prepared.stats);
    info!("model: {} parameters", model.param_count());
    let report = fit_model(&mut model, &prepared.train, &prepared.val, &cfg.train)?;

    let ckpt = out.join("model.ckpt");
    let log = out.join("epochs.jsonl");
    let test = out.join("test_metrics.json");
    save_checkpoint(&model, &ckpt)?;
    let jsonl = report.to_jsonl()?;
    write_atomic(&log, |w| w.write_all(jsonl.as_bytes()))?;
    let mut artifacts = vec![ckpt.as_path(), log.as_path()];
    if prepared.test.is_empty() {
        warn!("test split holds no windows; skipping test metrics");
    } else {
        let m = trouspi::evaluation::evaluate(&model, &prepared.test)?;
        info!("test: acc {:.4} f1 {:.4} auc {:?}", m.acc, m.f1, m.auc);
        write_json(&test, &m)?;
        artifacts.push(test.as_path());
    }
    run.finish(
        &out.join("manifest.json"),
        snapshot(&cfg)?,
        Some(cfg.train.seed),
        &artifacts,
    )?;
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(trouspi::Error::from)?;
    write_atomic(path, |w| writeln!(w, "{text}"))?;
    Ok(())
}

fn eval(
    ckpt: &Path,
    data: &Path,
    out: &Path,
    config: Option<&Path>,
    part: Part,
) -> Result<(), CliError> {
    let run = ManifestBuilder::start("eval");
    let model = load_checkpoint(ckpt)?;
    let (windows, fractions, seed) = match config {
        Some(p) => {
            let cfg = RunConfig::load(p)?;
            (cfg.windows, cfg.split.fractions, cfg.split.seed)
        }
        None => {
            let d = RunConfig::preset(Preset::Pie);
            (
                WindowSpec {
                    m: model.config().frames,
                    ..WindowSpec::default()
                },
                d.split.fractions,
                d.split.seed,
            )
        }
    };
    let tracks = load_tracks(data)?;
    let chosen: Vec<TrackRecord> = match part {
        Part::All => tracks,
        _ => {
            let s = split(&tracks, fractions, seed)?;
            match part {
                Part::Train => s.train,
                Part::Val => s.val,
                _ => s.test,
            }
        }
    };
    let m = evaluate_tracks(&model, &chosen, &windows)?;
    info!(
        "acc {:.4} f1 {:.4} precision {:.4} recall {:.4} auc {:?}",
        m.acc, m.f1, m.precision, m.recall, m.auc
    );
    write_json(out, &m)?;
    let (ckpt_sha, _) = sha256_file(ckpt)?;
    let config = json!({ "checkpoint": ckpt, "checkpoint_sha256": ckpt_sha, "windows": windows });
    run.finish(&beside(out), config, None, &[out])?;
    Ok(())
}

fn profile(config: &Path, out: &Path) -> Result<(), CliError> {
    let run = ManifestBuilder::start("profile");
    let cfg = RunConfig::load(config)?;
    let report = TrouSpiNet::build(cfg.model.clone())?.profile();
    write_atomic(out, |w| w.write_all(report.to_csv().as_bytes()))?;
    info!(
        "params {} ({:+.1}% vs reference {:.1}M), FLOPs {} ({:.2}x reference {:.1}M)",
        report.total_params,
        100.0 * (report.total_params as f64 / REFERENCE_PARAMS - 1.0),
        REFERENCE_PARAMS / 1e6,
        report.total_flops,
        report.total_flops as f64 / REFERENCE_FLOPS,
        REFERENCE_FLOPS / 1e6
    );
    run.finish(
        &beside(out),
        snapshot(&cfg.model)?,
        Some(cfg.model.seed),
        &[out],
    )?;
    Ok(())
}

fn run_ablation(
    config: &Path,
    data: &Path,
    out: &Path,
    checkpoints: Option<&Path>,
) -> Result<(), CliError> {
    let run = ManifestBuilder::start("ablate");
    let cfg = RunConfig::load(config)?;
    let prepared = prepare_dataset(&load_split(&cfg, data)?, &cfg.windows)?;
    let source = match checkpoints {
        Some(dir) => AblationSource::Checkpoints(dir),
        None => AblationSource::Train(&cfg.train),
    };
    let rows = ablate(&cfg.model, &Variant::ALL, &prepared, &source)?;
    for r in &rows {
        info!(
            "{:<22} params {:>8} f1 {:.4} acc {:.4}",
            r.variant, r.params, r.metrics.f1, r.metrics.acc
        );
    }
    write_atomic(out, |w| w.write_all(ablation_csv(&rows).as_bytes()))?;
    run.finish(&beside(out), snapshot(&cfg)?, Some(cfg.train.seed), &[out])?;
    Ok(())
}

fn gradcheck(seed: u64, out: Option<&Path>) -> Result<(), CliError> {
    let entries = gradient_suite(seed)?;
    for e in &entries {
        info!(
            "{:<20} {:>6} scalars  max rel err {:.3e}  {}",
            e.name,
            e.scalars,
            e.max_relative_error,
            if e.passed { "ok" } else { "FAIL" }
        );
    }
    if let Some(path) = out {
        write_json(path, &entries)?;
    }
    let failed: Vec<&str> = entries
        .iter()
        .filter(|e| !e.passed)
        .map(|e| e.name.as_str())
        .collect();
    if failed.is_empty() {
        info!("all {} checks within {GRADIENT_TOLERANCE:e}", entries.len());
        Ok(())
    } else {
        Err(CliError::Check(format!(
            "gradient check exceeded {GRADIENT_TOLERANCE:e}: {}",
            failed.join(", ")
        )))
    }
}

fn verify(path: &Path) -> Result<(), CliError> {
    let manifest: RunManifest = read_json(path)?;
    let mut bad = Vec::new();
    for a in &manifest.artifacts {
        match sha256_file(&a.path) {
            Ok((sha, _)) if sha == a.sha256 => info!("ok   {}", a.path.display()),
            _ => {
                warn!("diff {}", a.path.display());
                bad.push(a.path.display().to_string());
            }
        }
    }
    if bad.is_empty() {
        Ok(())
    } else {
        Err(CliError::Check(format!(
            "artifacts differ from manifest: {}",
            bad.join(", ")
        )))
    }
}
