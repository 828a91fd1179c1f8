//! `echoloop`: run, sweep and compare recommender feedback-loop simulations.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use echoloop::experiment::{
    self, generate_synthetic, synthetic, DatasetKind, DatasetSpec, ExperimentConfig, SweepParam,
    SweepSpec,
};
use echoloop::mitigation::MitigationConfig;
use echoloop::{theory, ModelParams};

#[derive(Parser)]
#[command(name = "echoloop", version, about = "Recommender feedback loops on social networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration over one or more seeds.
    Simulate(RunArgs),
    /// Run the configuration once per value of one parameter.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// alpha, beta, gamma, epsilon, m, links or c
        #[arg(long)]
        axis: Option<String>,
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
    },
    /// Compare two summary.json files.
    Compare {
        #[arg(long)]
        candidate: PathBuf,
        #[arg(long)]
        baseline: PathBuf,
        /// Also write the table as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic dataset to disk.
    Synth {
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 10_000)]
        m: usize,
        #[arg(long, default_value_t = 10)]
        c: usize,
        #[arg(long, default_value_t = 10_000)]
        links: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Run the built-in checks of the linearized theory.
    VerifyTheory {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum StrategyArg {
    None,
    UaAlpha,
    Fua,
    Dpp,
    Sar,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum FlavorArg {
    Ciao,
    Epinions,
    Other,
}

/// Flags shared by `simulate` and `sweep`. Every flag except `--seed` and
/// `--out-dir` may also come from the config file.
#[derive(Args, Debug, Default, Clone)]
struct RunArgs {
    /// TOML file whose keys mirror the long flag names (with `_`).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',', required = true)]
    seed: Vec<u64>,
    #[arg(long, required = true)]
    out_dir: Option<PathBuf>,

    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    c: Option<usize>,
    #[arg(long)]
    links: Option<usize>,
    #[arg(long)]
    items: Option<PathBuf>,
    #[arg(long)]
    interactions: Option<PathBuf>,
    #[arg(long)]
    trust: Option<PathBuf>,
    #[arg(long, value_enum)]
    flavor: Option<FlavorArg>,

    #[arg(long, allow_hyphen_values = true)]
    alpha: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    beta: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    gamma: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    epsilon: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    h: Option<usize>,

    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    metric_every: Option<usize>,
    #[arg(long)]
    ts_k: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    export_states: bool,

    #[arg(long, value_enum)]
    strategy: Option<StrategyArg>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    rescale_alpha: bool,
    #[arg(long, allow_hyphen_values = true)]
    rho: Option<f64>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    candidates: Option<usize>,
    #[arg(long)]
    omega: Option<f64>,
    #[arg(long)]
    strict_sar: bool,
}

/// Keys accepted in the config file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    n: Option<usize>,
    m: Option<usize>,
    c: Option<usize>,
    links: Option<usize>,
    items: Option<PathBuf>,
    interactions: Option<PathBuf>,
    trust: Option<PathBuf>,
    flavor: Option<FlavorArg>,
    alpha: Option<f64>,
    beta: Option<f64>,
    gamma: Option<f64>,
    epsilon: Option<f64>,
    eta: Option<f64>,
    h: Option<usize>,
    steps: Option<usize>,
    metric_every: Option<usize>,
    ts_k: Option<usize>,
    burn_in: Option<usize>,
    export_states: Option<bool>,
    strategy: Option<StrategyArg>,
    sigma: Option<f64>,
    rescale_alpha: Option<bool>,
    rho: Option<f64>,
    theta: Option<f64>,
    candidates: Option<usize>,
    omega: Option<f64>,
    strict_sar: Option<bool>,
    axis: Option<String>,
    values: Option<Vec<f64>>,
}

/// Bad input that is not an error of the library itself.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow!(Usage(msg.into()))
}

fn read_file_config(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn build_config(args: &RunArgs, file: &FileConfig) -> Result<ExperimentConfig> {
    let items = args.items.clone().or_else(|| file.items.clone());
    let interactions = args.interactions.clone().or_else(|| file.interactions.clone());
    let trust = args.trust.clone().or_else(|| file.trust.clone());
    let dataset = match (items, interactions, trust) {
        (Some(items), Some(interactions), Some(trust)) => DatasetSpec::Files {
            items,
            interactions,
            trust,
            flavor: match args.flavor.or(file.flavor) {
                Some(FlavorArg::Ciao) => DatasetKind::Ciao,
                Some(FlavorArg::Epinions) => DatasetKind::Epinions,
                _ => DatasetKind::Other,
            },
        },
        (None, None, None) => DatasetSpec::Synthetic {
            n: args.n.or(file.n).unwrap_or(1000),
            m: args.m.or(file.m).unwrap_or(10_000),
            c: args.c.or(file.c).unwrap_or(10),
            links: args.links.or(file.links).unwrap_or(10_000),
        },
        _ => {
            return Err(usage(
                "--items, --interactions and --trust must be given together",
            ))
        }
    };

    let d = ModelParams::default();
    let params = ModelParams {
        alpha: args.alpha.or(file.alpha).unwrap_or(d.alpha),
        beta: args.beta.or(file.beta).unwrap_or(d.beta),
        gamma: args.gamma.or(file.gamma).unwrap_or(d.gamma),
        epsilon: args.epsilon.or(file.epsilon).unwrap_or(d.epsilon),
        eta: args.eta.or(file.eta).unwrap_or(d.eta),
        h: args.h.or(file.h).unwrap_or(d.h),
    };

    let need = |v: Option<f64>, name: &str| v.ok_or_else(|| usage(format!("--strategy needs --{name}")));
    let mitigation = match args.strategy.or(file.strategy).unwrap_or(StrategyArg::None) {
        StrategyArg::None => MitigationConfig::None,
        StrategyArg::UaAlpha => MitigationConfig::UaAlpha {
            sigma: need(args.sigma.or(file.sigma), "sigma")?,
            rescale_by_n: args.rescale_alpha || file.rescale_alpha.unwrap_or(false),
        },
        StrategyArg::Fua => MitigationConfig::Fua {
            rho: need(args.rho.or(file.rho), "rho")?,
        },
        StrategyArg::Dpp => MitigationConfig::Dpp {
            theta: need(args.theta.or(file.theta), "theta")?,
            candidates: args.candidates.or(file.candidates),
        },
        StrategyArg::Sar => MitigationConfig::Sar {
            omega: need(args.omega.or(file.omega), "omega")?,
            strict: args.strict_sar || file.strict_sar.unwrap_or(false),
        },
    };

    Ok(ExperimentConfig {
        dataset,
        params,
        mitigation,
        steps: args.steps.or(file.steps).unwrap_or(1000),
        seeds: args.seed.clone(),
        metric_every: args.metric_every.or(file.metric_every),
        ts_k: args.ts_k.or(file.ts_k),
        burn_in: args.burn_in.or(file.burn_in).unwrap_or(0),
        export_final_states: args.export_states || file.export_states.unwrap_or(false),
        sweep: None,
    })
}

fn out_dir(args: &RunArgs) -> Result<&Path> {
    args.out_dir
        .as_deref()
        .ok_or_else(|| usage("--out-dir is required"))
}

fn simulate(args: &RunArgs) -> Result<()> {
    let file = read_file_config(args.config.as_deref())?;
    let config = build_config(args, &file)?;
    let dir = out_dir(args)?;
    let summary = experiment::run_experiment(&config, dir)?;
    for (metric, m) in &summary.metrics {
        let s = &m.time_average;
        match s.ci95 {
            Some(ci) => println!("{:<8} {:.6} ± {:.6}", metric.name(), s.mean, ci),
            None => println!("{:<8} {:.6}", metric.name(), s.mean),
        }
    }
    log::info!("wrote {}", dir.display());
    Ok(())
}

fn sweep(args: &RunArgs, axis: Option<&str>, values: Option<&[f64]>) -> Result<()> {
    let file = read_file_config(args.config.as_deref())?;
    let config = build_config(args, &file)?;
    let axis = axis
        .or(file.axis.as_deref())
        .ok_or_else(|| usage("sweep needs --axis"))?;
    let values = values
        .map(<[f64]>::to_vec)
        .or_else(|| file.values.clone())
        .ok_or_else(|| usage("sweep needs --values"))?;
    let spec = SweepSpec {
        axis: SweepParam::parse(axis)?,
        values,
    };
    let points = experiment::run_sweep(&config, &spec, out_dir(args)?)?;
    for p in &points {
        let rce = p.result.summary.time_average(experiment::Metric::Rce);
        println!("{}={} rce={}", spec.axis.name(), p.value, rce.map_or("-".into(), |v| format!("{v:.6}")));
    }
    Ok(())
}

fn compare(candidate: &Path, baseline: &Path, out: Option<&Path>) -> Result<()> {
    let c = experiment::read_summary(candidate)?;
    let b = experiment::read_summary(baseline)?;
    let rows = experiment::compare_runs(&c, &b)?;
    println!("{:<8} {:>12} {:>12} {:>10} {:>10}", "metric", "baseline", "candidate", "improv%", "p-value");
    let fmt = |x: Option<f64>, prec: usize| x.map_or("-".to_string(), |v| format!("{v:.prec$}"));
    for r in &rows {
        println!(
            "{:<8} {:>12.6} {:>12.6} {:>10} {:>10}",
            r.metric.name(),
            r.baseline,
            r.candidate,
            fmt(r.improvement_pct, 2),
            fmt(r.p_value, 4)
        );
    }
    if let Some(out) = out {
        let json = serde_json::to_string_pretty(&rows)? + "\n";
        fs::write(out, json).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}

fn synth(n: usize, m: usize, c: usize, links: usize, seed: u64, dir: &Path) -> Result<()> {
    let data = generate_synthetic(n, m, c, links, seed)?;
    synthetic::write_synthetic(&data, dir)?;
    println!("wrote {} users, {} items, {} links to {}", n, m, data.graph.edges().len(), dir.display());
    Ok(())
}

fn verify_theory(seed: u64) -> Result<bool> {
    let checks = theory::verification_report(seed)?;
    let mut ok = true;
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        ok &= c.passed;
    }
    Ok(ok)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Simulate(args) => simulate(&args)?,
        Command::Sweep { run, axis, values } => sweep(&run, axis.as_deref(), values.as_deref())?,
        Command::Compare {
            candidate,
            baseline,
            out,
        } => compare(&candidate, &baseline, out.as_deref())?,
        Command::Synth {
            n,
            m,
            c,
            links,
            seed,
            out_dir,
        } => synth(n, m, c, links, seed, &out_dir)?,
        Command::VerifyTheory { seed } => {
            if !verify_theory(seed)? {
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn is_validation(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        e.is::<Usage>()
            || e.downcast_ref::<echoloop::Error>()
                .is_some_and(echoloop::Error::is_validation)
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            if is_validation(&err) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
