//! `sgdmc`: runs experiments from a TOML config and writes CSV/JSON results.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use sgdmc::experiment::{
    estimate_kernel, fit_codecs, run_forecast, run_regime_probe, run_scaling, run_training, write_estimate,
    write_forecast, write_regime, write_scaling, write_training, ExperimentConfig, ExperimentKind, ProviderKind,
};
use sgdmc::{Error, Result};

#[derive(Parser)]
#[command(name = "sgdmc", version, about = "Quantized SGD trajectories as Markov chains")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured SGD runs and write their trajectories.
    Simulate(Common),
    /// Train, then estimate and impute the per-coordinate transition blocks.
    Estimate(Common),
    /// Train, estimate, forecast from new starting points and compare.
    Forecast(Common),
    /// Classify the predicted next state in over- and underparametrized runs.
    RegimeProbe(Common),
    /// Estimation error against context length on two-state chains.
    Scaling(Common),
}

#[derive(Args)]
struct Common {
    /// TOML experiment config; defaults are used when omitted.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding the config.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Digit provider, overriding the config.
    #[arg(long, value_enum)]
    provider: Option<ProviderArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProviderArg {
    Oracle,
    Empirical,
    Remote,
}

impl From<ProviderArg> for ProviderKind {
    fn from(p: ProviderArg) -> Self {
        match p {
            ProviderArg::Oracle => ProviderKind::Oracle,
            ProviderArg::Empirical => ProviderKind::Empirical,
            ProviderArg::Remote => ProviderKind::Remote,
        }
    }
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Estimate(_) => "estimate",
            Command::Forecast(_) => "forecast",
            Command::RegimeProbe(_) => "regime-probe",
            Command::Scaling(_) => "scaling",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Simulate(c)
            | Command::Estimate(c)
            | Command::Forecast(c)
            | Command::RegimeProbe(c)
            | Command::Scaling(c) => c,
        }
    }

    fn default_kind(&self) -> ExperimentKind {
        match self {
            Command::RegimeProbe(_) => ExperimentKind::RegimeProbe,
            Command::Scaling(_) => ExperimentKind::ScalingLaws,
            _ => ExperimentKind::ConvexForecast,
        }
    }

    fn accepts(&self, kind: ExperimentKind) -> bool {
        match self {
            Command::Simulate(_) | Command::Estimate(_) => true,
            Command::Forecast(_) => {
                matches!(kind, ExperimentKind::ConvexForecast | ExperimentKind::NonconvexForecast)
            }
            Command::RegimeProbe(_) => kind == ExperimentKind::RegimeProbe,
            Command::Scaling(_) => kind == ExperimentKind::ScalingLaws,
        }
    }
}

fn load_config(cmd: &Command) -> Result<ExperimentConfig> {
    let c = cmd.common();
    let mut cfg = match &c.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::new(cmd.default_kind()),
    };
    if !cmd.accepts(cfg.kind) {
        return Err(Error::Config(format!(
            "subcommand {} cannot run a {:?} config",
            cmd.name(),
            cfg.kind
        )));
    }
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    if let Some(p) = c.provider {
        cfg.provider.kind = p.into();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cmd: &Command) -> Result<serde_json::Value> {
    let cfg = load_config(cmd)?;
    let out = match (&cmd.common().out, &cfg.out_dir) {
        (Some(dir), _) | (None, Some(dir)) => dir.clone(),
        (None, None) => Path::new("out").join(cmd.name()),
    };
    let mut record = json!({
        "command": cmd.name(),
        "out_dir": out.display().to_string(),
        "config_hash": cfg.hash(),
    });
    match cmd {
        Command::Simulate(_) => {
            let (_, trajs) = run_training(&cfg)?;
            write_training(&out, &cfg, &trajs)?;
            record["runs"] = json!(trajs.len());
        }
        Command::Estimate(_) => {
            let (_, trajs) = run_training(&cfg)?;
            let codecs = fit_codecs(&trajs, cfg.precision()?, cfg.quantizer.target)?;
            let (kernel, blocks) = estimate_kernel(&cfg, &trajs, &codecs)?;
            write_estimate(&out, &cfg, &trajs, &kernel, &blocks)?;
            record["blocks"] = json!(blocks);
        }
        Command::Forecast(_) => {
            let report = run_forecast(&cfg)?;
            write_forecast(&out, &cfg, &report)?;
            record["success_fraction"] = json!(report.comparison.success_fraction);
        }
        Command::RegimeProbe(_) => {
            let report = run_regime_probe(&cfg)?;
            write_regime(&out, &cfg, &report)?;
            record["over_dirac"] = json!(report.over.dirac_like);
            record["under_diffuse"] = json!(report.under.diffuse);
        }
        Command::Scaling(_) => {
            let report = run_scaling(&cfg)?;
            write_scaling(&out, &cfg, &report)?;
            record["curves"] = json!(report.curves.len());
        }
    }
    Ok(record)
}

fn error_record(kind: &str, message: &str) -> ExitCode {
    eprintln!("{}", json!({ "error": kind, "message": message }));
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("").trim_start_matches("error: ");
            return error_record("Usage", first);
        }
    };
    match run(&cli.command) {
        Ok(record) => {
            println!("{record}");
            ExitCode::SUCCESS
        }
        Err(e) => error_record(e.kind(), &e.to_string()),
    }
}
