//! Command-line surface: `simulate`, `fit`, `report`, and `regress`.
//!
//! Exit codes: 0 success, 2 validation error, 3 particle-filter degeneracy
//! (resumable with more particles).

mod config;
mod data;
mod report;
mod store;

use chrono::NaiveDate;
use clap::{Parser, Subcommand};
use config::{RescaleConfig, RunConfig};
use countsurge::mcmc::{GibbsRunner, McmcError};
use countsurge::simulate::{simulate_dataset, SimSpec};
use data::DataBundle;
use serde_json::json;
use std::path::PathBuf;
use store::{Checkpoint, StoreHeader, StoreWriter, STORE_VERSION};

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Degeneracy(String),
    Other(anyhow::Error),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(msg) => write!(f, "validation error: {msg}"),
            CliError::Degeneracy(msg) => write!(f, "filter degeneracy: {msg}"),
            CliError::Other(e) => write!(f, "{e}"),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Other(e)
    }
}

impl From<McmcError> for CliError {
    fn from(e: McmcError) -> Self {
        match e {
            McmcError::FilterDegeneracy { .. } | McmcError::ChainDegeneracy { .. } => {
                CliError::Degeneracy(e.to_string())
            }
            McmcError::Config(msg) => CliError::Validation(msg),
            other => CliError::Other(anyhow::anyhow!(other)),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "countsurge",
    about = "Multivariate count time-series model with latent intensities and amplification regimes",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Random seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Total Gibbs sweeps (overrides the config).
    #[arg(long, global = true)]
    sweeps: Option<usize>,
    /// Burn-in sweeps (overrides the config).
    #[arg(long, global = true)]
    burnin: Option<usize>,
    /// Particle count (overrides the config).
    #[arg(long, global = true)]
    particles: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Resume a fit from its checkpoint.
    #[arg(long, global = true)]
    resume: bool,
    /// Pause the fit after this many sweeps (checkpoint is written; resume
    /// later with --resume).
    #[arg(long, global = true)]
    stop_after: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (counts, covariates, latent truth).
    Simulate,
    /// Run the Gibbs sampler over an ingested panel.
    Fit,
    /// Emit decomposition, regime, and latent-path reports from a fit.
    Report,
    /// Regress a target series on the extracted intensity features.
    Regress {
        /// Target CSV (date, value); falls back to the config.
        #[arg(long)]
        target: Option<PathBuf>,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => {}
        Err(CliError::Validation(msg)) => {
            eprintln!("validation error: {msg}");
            std::process::exit(2);
        }
        Err(CliError::Degeneracy(msg)) => {
            eprintln!("filter degeneracy: {msg}");
            std::process::exit(3);
        }
        Err(CliError::Other(e)) => {
            eprintln!("error: {e}");
            std::process::exit(1);
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path).map_err(|e| CliError::Validation(e.to_string()))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.mcmc.seed = seed;
    }
    if let Some(sweeps) = cli.sweeps {
        cfg.mcmc.sweeps = sweeps;
    }
    if let Some(burnin) = cli.burnin {
        cfg.mcmc.burnin = burnin;
    }
    if let Some(particles) = cli.particles {
        cfg.mcmc.n_particles = particles;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    std::fs::create_dir_all(&cli.out)
        .map_err(|e| CliError::Other(anyhow::anyhow!("cannot create output dir: {e}")))?;
    let cfg = load_config(&cli)?;
    match &cli.command {
        Command::Simulate => cmd_simulate(&cli, cfg),
        Command::Fit => cmd_fit(&cli, cfg),
        Command::Report => cmd_report(&cli, cfg),
        Command::Regress { target } => cmd_regress(&cli, cfg, target.clone()),
    }
}

/// Synthetic dates for simulated datasets.
fn synthetic_dates(t_len: usize) -> Vec<NaiveDate> {
    let start = NaiveDate::from_ymd_opt(2020, 1, 1).expect("valid date");
    (0..t_len)
        .map(|t| start + chrono::Duration::days(t as i64))
        .collect()
}

fn cmd_simulate(cli: &Cli, cfg: RunConfig) -> Result<(), CliError> {
    let mut spec = cfg.sim.clone().unwrap_or_else(|| {
        SimSpec::demo(cli.seed.unwrap_or(0))
    });
    if let Some(seed) = cli.seed {
        spec.seed = seed;
    }
    spec.validate()
        .map_err(|e| CliError::Validation(e.to_string()))?;
    let (panel, paths) = simulate_dataset(&spec).map_err(|e| CliError::Validation(e.to_string()))?;
    let dates = synthetic_dates(spec.t_len);
    let out = &cli.out;

    let y: Vec<Vec<u64>> = (0..panel.n_series())
        .map(|j| panel.counts(j).to_vec())
        .collect();
    data::write_counts_csv(&out.join("counts.csv"), &dates, &y, panel.global_counts())?;

    let mut covariate_paths: Vec<Option<PathBuf>> = Vec::new();
    for j in 0..panel.n_series() {
        if panel.covariates(j).ncols() > 0 {
            let name = format!("covariates_series_{}.csv", j + 1);
            data::write_covariates_csv(&out.join(&name), &dates, panel.covariates(j))?;
            covariate_paths.push(Some(PathBuf::from(name)));
        } else {
            covariate_paths.push(None);
        }
    }
    let covariates_global = if panel.global_covariates().ncols() > 0 {
        let name = "covariates_global.csv";
        data::write_covariates_csv(&out.join(name), &dates, panel.global_covariates())?;
        Some(PathBuf::from(name))
    } else {
        None
    };

    let truth = json!({ "spec": spec, "paths": paths });
    std::fs::write(
        out.join("truth.json"),
        serde_json::to_string_pretty(&truth).expect("serialisable"),
    )
    .map_err(|e| CliError::Other(anyhow::anyhow!("write truth.json: {e}")))?;

    // Ready-to-run fit configuration; simulated counts are already on the
    // model scale, so rescaling is identity.
    let fit_config = RunConfig {
        data: config::DataConfig {
            counts: Some(PathBuf::from("counts.csv")),
            covariates: covariate_paths,
            covariates_global,
        },
        rescale: Some(RescaleConfig {
            series: vec![1.0; panel.n_series()],
            global: 1.0,
        }),
        hyper: cfg.hyper.clone(),
        mcmc: cfg.mcmc.clone(),
        sim: Some(spec),
        report: cfg.report.clone(),
        regress: cfg.regress.clone(),
        checkpoint_every: cfg.checkpoint_every,
    };
    std::fs::write(
        out.join("fit_config.json"),
        serde_json::to_string_pretty(&fit_config).expect("serialisable"),
    )
    .map_err(|e| CliError::Other(anyhow::anyhow!("write fit_config.json: {e}")))?;
    println!("simulated {} days x {} series into {}", dates.len(), y.len(), out.display());
    Ok(())
}

fn ingest(cfg: &RunConfig) -> Result<DataBundle, CliError> {
    let counts_path = cfg
        .data
        .counts
        .as_ref()
        .ok_or_else(|| CliError::Validation("config is missing data.counts".into()))?;
    let (dates, y, z) = data::read_counts_csv(counts_path)?;
    let n_series = y.len();

    let mut covariates: Vec<Option<nalgebra::DMatrix<f64>>> = Vec::with_capacity(n_series);
    for j in 0..n_series {
        match cfg.data.covariates.get(j).and_then(|c| c.as_ref()) {
            Some(path) => covariates.push(Some(data::read_covariates_csv(path, &dates)?)),
            None => covariates.push(None),
        }
    }
    let covariates_global = match &cfg.data.covariates_global {
        Some(path) => Some(data::read_covariates_csv(path, &dates)?),
        None => None,
    };
    let rescale = cfg
        .rescale
        .clone()
        .unwrap_or_else(|| RescaleConfig::conventional(n_series));
    data::build_panel(dates, y, z, covariates, covariates_global, &rescale)
}

/// Hashes identifying a fit: the model-defining configuration (priors and
/// rescaling), the full sampler configuration, and the ingested panel.
fn fit_hashes(cfg: &RunConfig, bundle: &DataBundle) -> (String, String, String) {
    let rescale = cfg
        .rescale
        .clone()
        .unwrap_or_else(|| RescaleConfig::conventional(bundle.panel.n_series()));
    let config_hash = store::hash_json(&json!({
        "hyper": cfg.hyper,
        "rescale": { "series": rescale.series, "global": rescale.global },
    }));
    let mcmc_hash = store::hash_json(&cfg.mcmc);
    let data_hash = store::hash_json(&json!({
        "dates": bundle.dates,
        "panel": bundle.panel,
    }));
    (config_hash, mcmc_hash, data_hash)
}

fn cmd_fit(cli: &Cli, cfg: RunConfig) -> Result<(), CliError> {
    let bundle = ingest(&cfg)?;
    let (config_hash, mcmc_hash, data_hash) = fit_hashes(&cfg, &bundle);
    let out = &cli.out;
    let store_path = out.join("draws.jsonl");
    let checkpoint_path = out.join("checkpoint.json");

    let mut runner;
    let mut writer;
    if cli.resume {
        let checkpoint = store::read_checkpoint(&checkpoint_path)?;
        if checkpoint.config_hash != config_hash
            || checkpoint.mcmc_hash != mcmc_hash
            || checkpoint.data_hash != data_hash
        {
            return Err(CliError::Validation(
                "checkpoint does not match the current configuration or data".into(),
            ));
        }
        // Validate the store header too before truncating.
        store::read_store(&store_path, Some(&config_hash), Some(&data_hash))?;
        writer = StoreWriter::reopen(&store_path, checkpoint.store_bytes)?;
        runner = GibbsRunner::resume(
            &bundle.panel,
            cfg.hyper.clone(),
            cfg.mcmc.clone(),
            checkpoint.state,
        )?;
        log::info!("resumed at sweep {}", runner.state().sweep);
    } else {
        writer = StoreWriter::create(
            &store_path,
            &StoreHeader {
                version: STORE_VERSION,
                seed: cfg.mcmc.seed,
                config_hash: config_hash.clone(),
                mcmc_hash: mcmc_hash.clone(),
                data_hash: data_hash.clone(),
            },
        )?;
        runner = GibbsRunner::new(&bundle.panel, cfg.hyper.clone(), cfg.mcmc.clone())?;
    }

    let checkpoint_every = cfg.checkpoint_every;
    let total = cfg.mcmc.sweeps;
    let stop_at = cli.stop_after.map(|s| s.min(total)).unwrap_or(total);
    while runner.state().sweep < stop_at {
        if let Some(record) = runner.step()? {
            writer.append(&record)?;
        }
        let sweep = runner.state().sweep;
        if checkpoint_every > 0 && sweep % checkpoint_every == 0 && sweep < total {
            let store_bytes = writer.flushed_len()?;
            store::write_checkpoint(
                &checkpoint_path,
                &Checkpoint {
                    version: STORE_VERSION,
                    seed: cfg.mcmc.seed,
                    config_hash: config_hash.clone(),
                    mcmc_hash: mcmc_hash.clone(),
                    data_hash: data_hash.clone(),
                    store_bytes,
                    state: runner.state().clone(),
                },
            )?;
        }
    }
    let store_bytes = writer.flushed_len()?;
    store::write_checkpoint(
        &checkpoint_path,
        &Checkpoint {
            version: STORE_VERSION,
            seed: cfg.mcmc.seed,
            config_hash: config_hash.clone(),
            mcmc_hash: mcmc_hash.clone(),
            data_hash: data_hash.clone(),
            store_bytes,
            state: runner.state().clone(),
        },
    )?;
    writer.finish()?;

    if runner.state().sweep < total {
        println!(
            "paused at sweep {} of {total}; continue with --resume",
            runner.state().sweep
        );
        return Ok(());
    }

    // Posterior summary and traces.
    let (_, records) = store::read_store(&store_path, Some(&config_hash), Some(&data_hash))?;
    let acceptance = runner.acceptance_report();
    let summary = report::summary_json(
        &records,
        &bundle.panel,
        &acceptance,
        cfg.mcmc.seed,
        &config_hash,
        &data_hash,
    );
    std::fs::write(
        out.join("summary.json"),
        serde_json::to_string_pretty(&summary).expect("serialisable"),
    )
    .map_err(|e| CliError::Other(anyhow::anyhow!("write summary.json: {e}")))?;
    report::write_loglik_trace(&out.join("loglik_trace.csv"), &records)?;
    report::write_acceptance_csv(&out.join("acceptance_rates.csv"), &acceptance)?;
    println!(
        "fit complete: {} retained draws in {}",
        records.len(),
        store_path.display()
    );
    Ok(())
}

fn load_fit(cli: &Cli, cfg: &RunConfig) -> Result<(DataBundle, Vec<countsurge::mcmc::DrawRecord>), CliError> {
    let bundle = ingest(cfg)?;
    let (config_hash, _mcmc_hash, data_hash) = fit_hashes(cfg, &bundle);
    let (_, records) = store::read_store(
        &cli.out.join("draws.jsonl"),
        Some(&config_hash),
        Some(&data_hash),
    )?;
    if records.is_empty() {
        return Err(CliError::Validation("draw store holds no draws".into()));
    }
    Ok((bundle, records))
}

fn cmd_report(cli: &Cli, cfg: RunConfig) -> Result<(), CliError> {
    let (bundle, records) = load_fit(cli, &cfg)?;
    report::write_reports(&cli.out, &bundle, &records, &cfg.report)?;
    println!("reports written to {}", cli.out.display());
    Ok(())
}

fn cmd_regress(cli: &Cli, cfg: RunConfig, target_flag: Option<PathBuf>) -> Result<(), CliError> {
    let (bundle, records) = load_fit(cli, &cfg)?;
    let target_path = target_flag
        .or_else(|| cfg.regress.target.clone())
        .ok_or_else(|| CliError::Validation("no target series given (use --target)".into()))?;
    let target = data::read_target_csv(&target_path)?;
    report::write_regressions(&cli.out, &bundle, &records, &target, &cfg)?;
    println!("regression tables written to {}", cli.out.display());
    Ok(())
}
