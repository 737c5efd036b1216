use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use log::{error, info};

use cplab_core::experiments::{emit_report, run_family, ExperimentReport, ExperimentSpec, Family};
use cplab_core::model::{Checkpoint, StModel};
use cplab_core::synth::{generate_corpus, load_dataset, store_dataset, SynthConfig};
use cplab_core::train::{evaluate_model, select_model, train, TrainConfig};

#[derive(Parser)]
#[command(name = "cplab", version, about = "Contrastive rPPG learning lab")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled video corpus.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on a stored corpus; writes per-epoch checkpoints, the selected
    /// checkpoint and the training log.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a stored corpus.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Run an experiment family.
    Exp {
        /// label_ratio, desync, noise, stats, ablation or saliency.
        family: Family,
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Use the full-size sweep grids.
        #[arg(long)]
        full: bool,
    },
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn synth(config: &Path, out: &Path) -> Result<()> {
    let cfg: SynthConfig = read_toml(config)?;
    let records = generate_corpus(&cfg)?;
    store_dataset(out, &records)?;
    info!("wrote {} videos to {}", records.len(), out.display());
    Ok(())
}

fn run_train(data: &Path, config: &Path, out: &Path) -> Result<()> {
    let cfg: TrainConfig = read_toml(config)?;
    let records = load_dataset(data)?;
    info!("training on {} videos for {} epochs", records.len(), cfg.epochs);
    let output = train::<f32>(&cfg, &records)?;
    fs::create_dir_all(out)?;
    for ckpt in &output.checkpoints {
        ckpt.save(&out.join(format!("epoch_{:03}.json", ckpt.epoch)))?;
    }
    let best = select_model(&output.checkpoints, &output.log)?;
    best.save(&out.join("best.json"))?;
    write_json(&out.join("log.json"), &output.log)?;
    output.log.write_steps_csv(fs::File::create(out.join("steps.csv"))?)?;
    info!("selected epoch {} of {}", best.epoch, output.checkpoints.len());
    Ok(())
}

fn run_eval(ckpt: &Path, data: &Path, report: &Path) -> Result<()> {
    let model: StModel<f32> = Checkpoint::load(ckpt)?.to_model()?;
    let records = load_dataset(data)?;
    let rep = evaluate_model(&model, &records)?;
    if let Some(dir) = report.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_json(report, &rep)?;
    rep.write_windows_csv(fs::File::create(report.with_extension("csv"))?)?;
    info!(
        "{} windows ({} failed): MAE {:?}, RMSE {:?}, SNR {:?}",
        rep.windows.len(),
        rep.n_failed,
        rep.mae,
        rep.rmse,
        rep.mean_snr_db
    );
    Ok(())
}

fn run_exp(family: Family, spec_path: &Path, out: &Path, full: bool) -> Result<()> {
    let mut spec: ExperimentSpec = read_toml(spec_path)?;
    if full {
        spec = spec.full();
    }
    let results = run_family(family, &spec)?;
    emit_report(&ExperimentReport { spec, results }, out)?;
    info!("report written to {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Command::Synth { config, out } => synth(config, out),
        Command::Train { data, config, out } => run_train(data, config, out),
        Command::Eval { ckpt, data, report } => run_eval(ckpt, data, report),
        Command::Exp {
            family,
            spec,
            out,
            full,
        } => run_exp(*family, spec, out, *full),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e:#}");
            ExitCode::FAILURE
        }
    }
}
