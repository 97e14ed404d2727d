use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use latent_rx::harness::config::{ExperimentConfig, ExperimentKind};
use latent_rx::harness::experiment::{
    ood_table, run_ood_sweep, run_sensitivity, run_snr_sweep_with_images, sensitivity_table,
    sweep_table, train_codec, train_denoiser, write_codec, write_denoiser,
};
use latent_rx::harness::report::CsvTable;
use latent_rx::harness::verify::{run_verify_theory, verify_table};
use latent_rx::Error;

const EXIT_CONFIG: u8 = 1;
const EXIT_CHECK: u8 = 2;

#[derive(Parser)]
#[command(name = "latent-rx", version, about = "SNR-adaptive diffusion receiver experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the linear codec and save it as codec.ltns
    TrainCodec(Common),
    /// Train the MLP noise predictor on codec latents
    TrainDenoiser(Common),
    /// Metrics across an SNR grid
    SnrSweep(Common),
    /// Perturb the timestep and scaling factor around their matched values
    Sensitivity(Common),
    /// Evaluate on a second source with the codec and denoiser of the first
    OodSweep(Common),
    /// Audit the closed forms and denoisers; exits 2 if any check fails
    VerifyTheory(Common),
}

#[derive(Args)]
struct Common {
    /// key = value config file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed, overrides the config
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overrides the config
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    quiet: bool,
}

impl Command {
    fn split(&self) -> (ExperimentKind, &Common) {
        match self {
            Command::TrainCodec(c) => (ExperimentKind::TrainCodec, c),
            Command::TrainDenoiser(c) => (ExperimentKind::TrainDenoiser, c),
            Command::SnrSweep(c) => (ExperimentKind::SnrSweep, c),
            Command::Sensitivity(c) => (ExperimentKind::Sensitivity, c),
            Command::OodSweep(c) => (ExperimentKind::OodSweep, c),
            Command::VerifyTheory(c) => (ExperimentKind::VerifyTheory, c),
        }
    }
}

fn load_config(kind: ExperimentKind, args: &Common) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(named) = cfg.experiment {
        if named != kind {
            return Err(Error::Config(format!(
                "experiment: config is for {named}, command is {kind}"
            )));
        }
    }
    cfg.experiment = Some(kind);
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn emit(table: &CsvTable, name: &str, cfg: &ExperimentConfig, quiet: bool) -> Result<(), Error> {
    let path = cfg.out_dir.join(name);
    table.write(&path)?;
    if !quiet {
        print!("{}", String::from_utf8_lossy(&table.to_bytes()?));
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

/// Returns whether every check passed.
fn run(kind: ExperimentKind, cfg: &ExperimentConfig, quiet: bool) -> Result<bool, Error> {
    let out = &cfg.out_dir;
    match kind {
        ExperimentKind::TrainCodec => {
            let codec = train_codec(cfg)?;
            write_codec(out, &codec)?;
            if !quiet {
                eprintln!(
                    "codec {}x{}, gamma_bar = {}; wrote {}",
                    codec.latent_dim(),
                    codec.data_dim(),
                    codec.gamma_bar(),
                    out.join("codec.ltns").display()
                );
            }
        }
        ExperimentKind::TrainDenoiser => {
            let run = train_denoiser(cfg)?;
            write_denoiser(out, &run)?;
            if !quiet {
                let trace = &run.trained.loss_trace;
                let tail = &trace[trace.len().saturating_sub(100)..];
                let recent = tail.iter().sum::<f64>() / tail.len().max(1) as f64;
                eprintln!(
                    "{} steps, mean loss over the last {} = {recent}; wrote {}",
                    trace.len(),
                    tail.len(),
                    out.join("denoiser.ltns").display()
                );
            }
        }
        ExperimentKind::SnrSweep => {
            let images = cfg.save_images.then(|| out.join("images"));
            let rows = run_snr_sweep_with_images(cfg, images.as_deref())?;
            emit(&sweep_table(&rows), "snr_sweep.csv", cfg, quiet)?;
        }
        ExperimentKind::Sensitivity => {
            emit(&sensitivity_table(&run_sensitivity(cfg)?), "sensitivity.csv", cfg, quiet)?;
        }
        ExperimentKind::OodSweep => {
            emit(&ood_table(&run_ood_sweep(cfg)?), "ood_sweep.csv", cfg, quiet)?;
        }
        ExperimentKind::VerifyTheory => {
            let checks = run_verify_theory(cfg)?;
            emit(&verify_table(&checks), "verify_theory.csv", cfg, quiet)?;
            return Ok(checks.iter().all(|c| c.passed));
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (kind, args) = cli.command.split();
    let cfg = match load_config(kind, args) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    match run(kind, &cfg, args.quiet) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: one or more checks failed");
            ExitCode::from(EXIT_CHECK)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}
