//! Command-line experiment runner: `run` samples one (scenario, method) pair and writes its
//! samples, metrics and manifest; `report` merges finished runs into a comparison table;
//! `plot` draws a run's failures as SVG.

pub mod config;
pub mod io;
pub mod plot;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::metrics::{
    compare_report, comparison_csv, comparison_text, failure_statistics, DispersionGrid,
    MetricsReport,
};
use crate::samplers::{
    direct_mc, initial_point, particle_gibbs, run_chain, with_thread_pool, NutsConfig, PgConfig,
    SampleBatch,
};
use crate::scenario::{Scenario, SmoothingConfig};

pub use config::{ConfigOverrides, ExperimentConfig, InitChoice, Method, ScenarioFn, ScenarioKind};

#[derive(Debug, Parser)]
#[command(
    name = "failprob",
    version,
    about = "Sample failures of sequential systems"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample one scenario with one method and write the run directory.
    Run(RunArgs),
    /// Merge finished runs into a comparison table.
    Report(ReportArgs),
    /// Draw a run's failures as SVG.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// `key=value` file with run settings (a run manifest works); flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub scenario: Option<ScenarioKind>,
    #[arg(long, value_enum)]
    pub method: Option<Method>,
    #[arg(long)]
    pub chains: Option<usize>,
    /// Reported draws per chain (HMC) or sweeps per chain (PG).
    #[arg(long)]
    pub samples: Option<usize>,
    /// Direct Monte Carlo draws [default: chains × samples].
    #[arg(long = "n")]
    pub mc_draws: Option<usize>,
    /// Smoothing variance [default: per scenario].
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub init: Option<InitChoice>,
    /// Particles per conditional SMC sweep.
    #[arg(long)]
    pub particles: Option<usize>,
    /// Scenario parameter override, e.g. `pendulum.sigma=0.5`; repeatable.
    #[arg(long = "param", value_name = "KEY=VALUE")]
    pub params: Vec<String>,
    /// Output directory [default: runs/<scenario>-<method>-<seed>].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Run directories.
    #[arg(required = true)]
    pub runs: Vec<PathBuf>,
    /// CSV file to write.
    #[arg(long, default_value = "report.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlotKind {
    Trajectories,
    #[value(name = "loglik_hist")]
    LoglikHist,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    pub run: PathBuf,
    #[arg(long, value_enum, default_value = "trajectories")]
    pub kind: PlotKind,
    /// SVG file to write [default: <run>/<kind>.svg].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses arguments, runs the command and reports errors on stderr.
pub fn main() -> std::process::ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            std::process::ExitCode::FAILURE
        }
    }
}

/// Runs the command line `args` (program name first) in-process.
pub fn run_args<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    dispatch(cli)
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(a) => run(&a),
        Command::Report(a) => report(&a),
        Command::Plot(a) => plot_run(&a),
    }
}

impl RunArgs {
    pub fn overrides(&self) -> Result<ConfigOverrides> {
        let mut o = match &self.config {
            Some(path) => ConfigOverrides::from_key_values(&io::read_to_string(path)?)?,
            None => ConfigOverrides::default(),
        };
        let mut params = BTreeMap::new();
        for p in &self.params {
            let (k, v) = p.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("--param expects KEY=VALUE, got `{p}`"))
            })?;
            params.insert(k.trim().to_string(), v.trim().to_string());
        }
        o = o.merge(ConfigOverrides {
            scenario: self.scenario,
            method: self.method,
            chains: self.chains,
            samples: self.samples,
            mc_draws: self.mc_draws,
            epsilon: self.epsilon,
            seed: self.seed,
            init: self.init,
            particles: self.particles,
            output_dir: self.out.clone(),
            params,
        });
        Ok(o)
    }
}

/// Batches of a finished run plus the chains that failed.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub batches: Vec<SampleBatch>,
    pub chain_errors: Vec<(usize, String)>,
    pub metrics: MetricsReport,
    pub dimension: usize,
}

struct Execute<'a>(&'a ExperimentConfig);

impl ScenarioFn<RunOutput> for Execute<'_> {
    fn call<S: Scenario>(self, scenario: &S) -> Result<RunOutput>
    where
        S::State<f64>: Send + Sync,
    {
        let cfg = self.0;
        let smoothing = SmoothingConfig::new(cfg.epsilon)?;
        let results: Vec<Result<SampleBatch>> = match cfg.method {
            Method::Hmc => {
                let nuts = NutsConfig::new(cfg.samples).with_prior_mass(scenario.prior());
                with_thread_pool(|| {
                    (0..cfg.chains)
                        .into_par_iter()
                        .map(|c| {
                            let x0 =
                                initial_point(scenario, &smoothing, cfg.init.into(), cfg.seed, c);
                            run_chain(scenario, &smoothing, &nuts, &x0, cfg.seed, c)
                        })
                        .collect()
                })
            }
            Method::Pg => {
                let pg = PgConfig::new(cfg.particles, cfg.samples);
                (0..cfg.chains)
                    .map(|c| particle_gibbs(scenario, &smoothing, &pg, cfg.seed, c))
                    .collect()
            }
            Method::Mc => vec![Ok(direct_mc(scenario, &smoothing, cfg.mc_draws, cfg.seed))],
        };
        let mut batches = Vec::new();
        let mut chain_errors = Vec::new();
        for (c, r) in results.into_iter().enumerate() {
            match r {
                Ok(b) => batches.push(b),
                Err(e) => chain_errors.push((c, e.to_string())),
            }
        }
        if batches.is_empty() {
            let detail: Vec<String> = chain_errors
                .iter()
                .map(|(c, e)| format!("chain {c}: {e}"))
                .collect();
            return Err(Error::InvalidConfig(format!(
                "every chain failed ({})",
                detail.join("; ")
            )));
        }
        let metrics = failure_statistics(scenario, &batches, &DispersionGrid::default())?;
        Ok(RunOutput {
            batches,
            chain_errors,
            metrics,
            dimension: scenario.dimension(),
        })
    }
}

/// Samples the configured experiment without touching the filesystem.
pub fn execute(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.with_scenario(Execute(cfg))
}

/// Writes samples, metrics and manifest of a finished run into `cfg.output_dir`.
pub fn write_run(cfg: &ExperimentConfig, out: &RunOutput, elapsed: f64) -> Result<()> {
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    io::write(
        &dir.join(io::SAMPLES_FILE),
        &io::samples_csv(&out.batches, out.dimension)?,
    )?;
    io::write(
        &dir.join(io::METRICS_FILE),
        &io::run_metrics_csv(
            cfg.scenario.as_str(),
            cfg.method.as_str(),
            &out.metrics,
            &out.batches,
        ),
    )?;
    let mut kv = cfg.to_key_values();
    kv.push(("dimension".into(), out.dimension.to_string()));
    kv.push(("failprob_version".into(), env!("CARGO_PKG_VERSION").into()));
    kv.push(("chains_completed".into(), out.batches.len().to_string()));
    for (c, e) in &out.chain_errors {
        kv.push((format!("chain.{c}.error"), e.replace('\n', " ")));
    }
    kv.push(("n_failures".into(), out.metrics.n_failures.to_string()));
    // Everything below varies between reruns.
    kv.push(("sampling_time_s".into(), out.metrics.total_time.to_string()));
    kv.push(("elapsed_s".into(), elapsed.to_string()));
    let now = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    kv.push(("created_unix_s".into(), now.to_string()));
    io::write(
        &dir.join(io::MANIFEST_FILE),
        &format!("# failprob run manifest\n{}", io::key_values(&kv)),
    )
}

fn run(args: &RunArgs) -> Result<()> {
    let cfg = args.overrides()?.resolve()?;
    let start = Instant::now();
    let out = execute(&cfg)?;
    write_run(&cfg, &out, start.elapsed().as_secs_f64())?;
    for (c, e) in &out.chain_errors {
        eprintln!("warning: chain {c} failed: {e}");
    }
    let m = &out.metrics;
    println!(
        "{} {}: {} failures in {} draws (rate {:.4}), C_disp {:.3}, {:.1} s -> {}",
        cfg.scenario,
        cfg.method,
        m.n_failures,
        m.n_samples,
        m.failure_rate,
        m.c_disp,
        start.elapsed().as_secs_f64(),
        cfg.output_dir.display()
    );
    Ok(())
}

struct Summarize(Vec<SampleBatch>);

impl ScenarioFn<MetricsReport> for Summarize {
    fn call<S: Scenario>(self, scenario: &S) -> Result<MetricsReport>
    where
        S::State<f64>: Send + Sync,
    {
        failure_statistics(scenario, &self.0, &DispersionGrid::default())
    }
}

/// Config and recomputed metrics of a run directory.
pub fn load_run(dir: &Path) -> Result<(ExperimentConfig, MetricsReport)> {
    let manifest = io::read_to_string(&dir.join(io::MANIFEST_FILE))?;
    let mut o = ConfigOverrides::from_key_values(&manifest)?;
    o.output_dir = Some(dir.to_path_buf());
    let cfg = o.resolve()?;
    let batches = io::parse_samples(&io::read_to_string(&dir.join(io::SAMPLES_FILE))?)?;
    if batches.is_empty() {
        return Err(Error::parse(
            io::SAMPLES_FILE,
            format!("{} holds no draws", dir.display()),
        ));
    }
    let mut report = cfg.with_scenario(Summarize(batches))?;
    if let Some(t) = io::lookup(&manifest, "sampling_time_s").and_then(|v| v.parse::<f64>().ok()) {
        report.total_time = t;
        report.failures_per_second = if t > 0.0 {
            report.n_failures as f64 / t
        } else {
            0.0
        };
    }
    Ok((cfg, report))
}

fn report(args: &ReportArgs) -> Result<()> {
    let mut reports = BTreeMap::new();
    let mut problems = Vec::new();
    for dir in &args.runs {
        match load_run(dir) {
            Ok((cfg, r)) => {
                let base = format!("{}/{}", cfg.scenario, cfg.method);
                let mut key = base.clone();
                let mut k = 2;
                while reports.contains_key(&key) {
                    key = format!("{base}#{k}");
                    k += 1;
                }
                reports.insert(key, r);
            }
            Err(e) => problems.push(format!("{}: {e}", dir.display())),
        }
    }
    for p in &problems {
        eprintln!("skipped {p}");
    }
    if reports.is_empty() {
        return Err(Error::InvalidConfig("no readable runs".into()));
    }
    let rows = compare_report(&reports);
    io::write(&args.out, &comparison_csv(&rows))?;
    print!("{}", comparison_text(&rows));
    Ok(())
}

struct Draw {
    kind: PlotKind,
    batches: Vec<SampleBatch>,
    title: String,
}

impl ScenarioFn<String> for Draw {
    fn call<S: Scenario>(self, scenario: &S) -> Result<String>
    where
        S::State<f64>: Send + Sync,
    {
        Ok(match self.kind {
            PlotKind::Trajectories => plot::trajectories_svg(scenario, &self.batches, &self.title),
            PlotKind::LoglikHist => plot::loglik_hist_svg(&self.batches, &self.title),
        })
    }
}

fn plot_run(args: &PlotArgs) -> Result<()> {
    let manifest = io::read_to_string(&args.run.join(io::MANIFEST_FILE))?;
    let mut o = ConfigOverrides::from_key_values(&manifest)?;
    o.output_dir = Some(args.run.clone());
    let cfg = o.resolve()?;
    let batches = io::parse_samples(&io::read_to_string(&args.run.join(io::SAMPLES_FILE))?)?;
    let name = match args.kind {
        PlotKind::Trajectories => "trajectories",
        PlotKind::LoglikHist => "loglik_hist",
    };
    let title = format!("{} {} failures", cfg.scenario, cfg.method);
    let svg = cfg.with_scenario(Draw {
        kind: args.kind,
        batches,
        title,
    })?;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| args.run.join(format!("{name}.svg")));
    io::write(&out, &svg)?;
    println!("{}", out.display());
    Ok(())
}
