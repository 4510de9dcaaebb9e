use std::path::PathBuf;

use clap::{Parser, ValueEnum};

use super::config::{Precision, RunConfig};
use super::pipeline::{run_pipeline, Command, RunOptions};
use super::HarnessError;
use crate::upsample::Upsampler;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Cmd {
    Prep,
    Lrrt,
    TrainEncoder,
    TrainVocoder,
    Encode,
    Synth,
    EvalUnits,
    EvalAudio,
    EvalText,
    SchedPreview,
    /// Print the fully expanded configuration as TOML.
    ShowConfig,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PrecisionArg {
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum UpsamplerArg {
    Nearest,
    Linear,
    #[value(name = "fourier_tile", alias = "fourier-tile")]
    FourierTile,
    #[value(name = "fourier_pad", alias = "fourier-pad")]
    FourierPad,
}

/// Discrete speech units, unit-to-waveform vocoding and evaluation.
#[derive(Debug, Parser)]
#[command(name = "textless", version)]
pub struct Cli {
    #[arg(value_enum)]
    command: Cmd,
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named preset (base for --config files that do not set one).
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "runs/default")]
    out_dir: PathBuf,
    /// Worker threads; 1 gives bit-reproducible runs.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, value_enum)]
    precision: Option<PrecisionArg>,
    /// Override both vocoder upsampling stages.
    #[arg(long, value_enum)]
    upsampler: Option<UpsamplerArg>,
    /// Continue training from the existing checkpoint.
    #[arg(long)]
    resume: bool,
    /// Stop training before this step.
    #[arg(long)]
    until: Option<u64>,
    /// eval-text reference file (`id<TAB>text`).
    #[arg(long = "ref")]
    reference: Option<PathBuf>,
    /// eval-text hypothesis file (`id<TAB>text`).
    #[arg(long = "hyp")]
    hypothesis: Option<PathBuf>,
    /// synth: at most this many test utterances.
    #[arg(long)]
    max_items: Option<usize>,
}

fn build_config(cli: &Cli) -> Result<RunConfig, HarnessError> {
    let mut table = match &cli.config {
        Some(p) => std::fs::read_to_string(p)
            .map_err(|e| HarnessError::config("--config", format!("{}: {e}", p.display())))?
            .parse::<toml::Table>()
            .map_err(|e| HarnessError::config("--config", e.message().to_string()))?,
        None => toml::Table::new(),
    };
    if let Some(p) = &cli.preset {
        table.entry("preset").or_insert_with(|| toml::Value::String(p.clone()));
    }
    let base = match table.get("preset") {
        Some(toml::Value::String(p)) => RunConfig::preset(p)?,
        Some(_) => return Err(HarnessError::config("preset", "must be a string".into())),
        None => RunConfig::preset("toy")?,
    };
    if let Some(s) = cli.seed {
        table.insert("seed".into(), toml::Value::Integer(s as i64));
    }
    if let Some(t) = cli.threads {
        table.insert("threads".into(), toml::Value::Integer(t as i64));
    }
    if let Some(p) = cli.precision {
        let p = match p {
            PrecisionArg::F32 => Precision::F32,
            PrecisionArg::F64 => Precision::F64,
        };
        table.insert("precision".into(), toml::Value::try_from(p).expect("enum serialises"));
    }
    let mut cfg = RunConfig::from_table(base, table)?;
    if let Some(u) = cli.upsampler {
        let u = match u {
            UpsamplerArg::Nearest => Upsampler::Nearest,
            UpsamplerArg::Linear => Upsampler::Linear,
            UpsamplerArg::FourierTile => Upsampler::FourierTile,
            UpsamplerArg::FourierPad => Upsampler::FourierPad,
        };
        cfg = cfg.with_upsampler(u);
        cfg.validate()?;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    let cfg = build_config(&cli)?;
    if cfg.threads > 0 {
        // the global pool can only be built once per process; later calls are harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global();
    }
    let cmd = match cli.command {
        Cmd::ShowConfig => {
            print!("{}", cfg.to_toml());
            return Ok(());
        }
        Cmd::Prep => Command::Prep,
        Cmd::Lrrt => Command::Lrrt,
        Cmd::TrainEncoder => Command::TrainEncoder,
        Cmd::TrainVocoder => Command::TrainVocoder,
        Cmd::Encode => Command::Encode,
        Cmd::Synth => Command::Synth,
        Cmd::EvalUnits => Command::EvalUnits,
        Cmd::EvalAudio => Command::EvalAudio,
        Cmd::EvalText => Command::EvalText,
        Cmd::SchedPreview => Command::SchedPreview,
    };
    let opts = RunOptions {
        out_dir: cli.out_dir,
        resume: cli.resume,
        until: cli.until,
        reference: cli.reference,
        hypothesis: cli.hypothesis,
        max_items: cli.max_items,
    };
    let manifest = run_pipeline(cmd, &cfg, &opts)?;
    for (k, v) in &manifest.summary {
        println!("{k} = {v}");
    }
    eprintln!(
        "{} finished in {:.2}s; {} outputs under {}",
        manifest.command,
        manifest.wall_secs,
        manifest.outputs.len(),
        opts.out_dir.display()
    );
    Ok(())
}

/// Parse `args`, run the command and return the process exit code.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
