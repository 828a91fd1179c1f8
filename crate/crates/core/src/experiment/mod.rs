//! Seeded experiments: dataset preparation, replicated runs, sweeps,
//! comparison and export.

pub mod io;
pub mod stats;
pub mod synthetic;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::{init_user_from_history, random_unit_vector, ItemCatalog, ModelParams, SocialGraph, UserStates};
use crate::dynamics::{MetricSchedule, RunOptions, Simulation};
use crate::error::{Error, Result};
use crate::metrics::{MetricSettings, MetricsRecord};
use crate::mitigation::MitigationConfig;
use crate::rng::{self, Purpose};

pub use stats::{Stat, WelchTest};
pub use synthetic::{generate_synthetic, write_synthetic, SyntheticDataset};

/// Which published dataset a file-backed run mirrors; selects the TS@k
/// default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Ciao,
    Epinions,
    #[default]
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    Synthetic {
        n: usize,
        m: usize,
        c: usize,
        links: usize,
    },
    Files {
        items: PathBuf,
        interactions: PathBuf,
        trust: PathBuf,
        #[serde(default)]
        flavor: DatasetKind,
    },
}

impl DatasetSpec {
    /// TS@k default: 50 for synthetic data, 300 for Ciao, 900 for Epinions.
    pub fn default_ts_k(&self) -> usize {
        match self {
            DatasetSpec::Files {
                flavor: DatasetKind::Ciao,
                ..
            } => 300,
            DatasetSpec::Files {
                flavor: DatasetKind::Epinions,
                ..
            } => 900,
            _ => 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Alpha,
    Beta,
    Gamma,
    Epsilon,
    M,
    Links,
    C,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Alpha => "alpha",
            SweepParam::Beta => "beta",
            SweepParam::Gamma => "gamma",
            SweepParam::Epsilon => "epsilon",
            SweepParam::M => "m",
            SweepParam::Links => "links",
            SweepParam::C => "c",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "alpha" => SweepParam::Alpha,
            "beta" => SweepParam::Beta,
            "gamma" => SweepParam::Gamma,
            "epsilon" => SweepParam::Epsilon,
            "m" => SweepParam::M,
            "links" => SweepParam::Links,
            "c" => SweepParam::C,
            other => {
                return Err(Error::InvalidRequest(format!(
                    "unknown sweep axis {other:?}; expected one of alpha, beta, gamma, epsilon, m, links, c"
                )))
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub axis: SweepParam,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub params: ModelParams,
    #[serde(default)]
    pub mitigation: MitigationConfig,
    pub steps: usize,
    pub seeds: Vec<u64>,
    /// Metric evaluation period; `None` uses the default for `steps`.
    #[serde(default)]
    pub metric_every: Option<usize>,
    /// TS@k; `None` uses the dataset default.
    #[serde(default)]
    pub ts_k: Option<usize>,
    /// Records with `t < burn_in` are left out of time averages.
    #[serde(default)]
    pub burn_in: usize,
    #[serde(default)]
    pub export_final_states: bool,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
}

impl ExperimentConfig {
    pub fn synthetic(n: usize, m: usize, c: usize, links: usize, steps: usize, seeds: Vec<u64>) -> Self {
        ExperimentConfig {
            dataset: DatasetSpec::Synthetic { n, m, c, links },
            params: ModelParams::default(),
            mitigation: MitigationConfig::None,
            steps,
            seeds,
            metric_every: None,
            ts_k: None,
            burn_in: 0,
            export_final_states: false,
            sweep: None,
        }
    }

    pub fn schedule(&self) -> MetricSchedule {
        match self.metric_every {
            Some(every) => MetricSchedule { every },
            None => MetricSchedule::default_for(self.steps),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::InvalidRequest("at least one seed is required".into()));
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            return Err(Error::InvalidRequest("seeds must be distinct".into()));
        }
        if self.steps == 0 {
            return Err(Error::InvalidRequest("steps must be >= 1".into()));
        }
        if self.metric_every == Some(0) {
            return Err(Error::InvalidRequest("metric_every must be >= 1".into()));
        }
        if self.burn_in >= self.steps {
            return Err(Error::InvalidRequest("burn_in must be smaller than steps".into()));
        }
        if self.ts_k == Some(0) {
            return Err(Error::InvalidRequest("ts_k must be >= 1".into()));
        }
        if let DatasetSpec::Synthetic { n, m, c, links } = self.dataset {
            if n < 2 || m == 0 || c == 0 {
                return Err(Error::InvalidRequest(
                    "synthetic data needs n >= 2, m >= 1 and c >= 1".into(),
                ));
            }
            if links > n * (n - 1) {
                return Err(Error::InvalidRequest(format!(
                    "{links} links requested but only {} ordered pairs exist",
                    n * (n - 1)
                )));
            }
            self.params.validate(m)?;
            self.mitigation.validate(m, self.params.h)?;
        }
        if let Some(sweep) = &self.sweep {
            validate_sweep(self, sweep)?;
        }
        Ok(())
    }
}

fn validate_sweep(config: &ExperimentConfig, sweep: &SweepSpec) -> Result<()> {
    if sweep.values.is_empty() {
        return Err(Error::InvalidRequest("sweep needs at least one value".into()));
    }
    for (k, v) in sweep.values.iter().enumerate() {
        if sweep.values[..k].contains(v) {
            return Err(Error::InvalidRequest(format!("sweep value {v} is repeated")));
        }
        let mut probe = config.clone();
        probe.sweep = None;
        apply_axis(&mut probe, sweep.axis, *v)?;
        probe.validate()?;
    }
    Ok(())
}

fn as_count(axis: SweepParam, v: f64) -> Result<usize> {
    if v.is_finite() && v >= 0.0 && v.fract() == 0.0 {
        Ok(v as usize)
    } else {
        Err(Error::InvalidRequest(format!(
            "{} must be a non-negative integer, got {v}",
            axis.name()
        )))
    }
}

/// Sets one axis of `config` to `v`.
pub fn apply_axis(config: &mut ExperimentConfig, axis: SweepParam, v: f64) -> Result<()> {
    let p = &mut config.params;
    match axis {
        SweepParam::Alpha => p.alpha = v,
        SweepParam::Beta => p.beta = v,
        SweepParam::Gamma => p.gamma = v,
        SweepParam::Epsilon => p.epsilon = v,
        SweepParam::M | SweepParam::Links | SweepParam::C => {
            let count = as_count(axis, v)?;
            let DatasetSpec::Synthetic { m, links, c, .. } = &mut config.dataset else {
                return Err(Error::InvalidRequest(format!(
                    "axis {} needs a synthetic dataset",
                    axis.name()
                )));
            };
            match axis {
                SweepParam::M => *m = count,
                SweepParam::Links => *links = count,
                _ => *c = count,
            }
        }
    }
    p.validate(match config.dataset {
        DatasetSpec::Synthetic { m, .. } => m,
        DatasetSpec::Files { .. } => usize::MAX,
    })
}

/// Everything needed to run one seed.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub catalog: ItemCatalog,
    pub graph: SocialGraph,
    pub initial: UserStates,
    /// Users whose history cancelled out and who were initialized randomly.
    pub random_inits: usize,
}

/// File-backed data shared by every seed.
#[derive(Debug, Clone)]
pub struct LoadedFiles {
    pub interactions: io::Interactions,
    pub trust: io::TrustGraph,
}

pub fn load_files(items: &Path, interactions: &Path, trust: &Path) -> Result<LoadedFiles> {
    let interactions = io::ingest_interactions(interactions, items)?;
    let trust = io::ingest_trust(trust, &interactions.users)?;
    Ok(LoadedFiles {
        interactions,
        trust,
    })
}

/// Initial states from histories; degenerate histories fall back to a random
/// unit vector drawn from the seed's stream for that user.
pub fn initial_states(files: &LoadedFiles, seed: u64) -> Result<(UserStates, usize)> {
    let data = &files.interactions;
    let c = data.catalog.num_categories();
    let mut random_inits = 0;
    let mut columns = Vec::with_capacity(data.histories.len());
    for (i, h) in data.histories.iter().enumerate() {
        match init_user_from_history(&h.positives, &h.negatives, &data.catalog) {
            Ok(v) => columns.push(v),
            Err(Error::DegenerateHistory) => {
                random_inits += 1;
                columns.push(random_unit_vector(
                    &mut rng::stream(seed, Purpose::UserInit, 2, i as u64),
                    c,
                ));
            }
            Err(e) => return Err(e),
        }
    }
    if random_inits > 0 {
        log::info!("{random_inits} users with degenerate histories initialized randomly");
    }
    Ok((UserStates::from_columns(&columns), random_inits))
}

fn prepare(config: &ExperimentConfig, files: Option<&LoadedFiles>, seed: u64) -> Result<PreparedData> {
    match (&config.dataset, files) {
        (DatasetSpec::Synthetic { n, m, c, links }, _) => {
            let d = generate_synthetic(*n, *m, *c, *links, seed)?;
            Ok(PreparedData {
                catalog: d.catalog,
                graph: d.graph,
                initial: d.states,
                random_inits: 0,
            })
        }
        (DatasetSpec::Files { .. }, Some(files)) => {
            let (initial, random_inits) = initial_states(files, seed)?;
            Ok(PreparedData {
                catalog: files.interactions.catalog.clone(),
                graph: files.trust.graph.clone(),
                initial,
                random_inits,
            })
        }
        (DatasetSpec::Files { .. }, None) => unreachable!("files are loaded before preparing seeds"),
    }
}

/// Output of one seed.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub records: Vec<MetricsRecord>,
    pub final_states: UserStates,
    pub padded_slates: usize,
    pub random_inits: usize,
}

/// The five tracked metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Rce,
    Ra,
    Nd,
    Pdv,
    TsAtK,
}

impl Metric {
    pub const ALL: [Metric; 5] = [Metric::Rce, Metric::Ra, Metric::Nd, Metric::Pdv, Metric::TsAtK];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Rce => "rce",
            Metric::Ra => "ra",
            Metric::Nd => "nd",
            Metric::Pdv => "pdv",
            Metric::TsAtK => "ts_at_k",
        }
    }

    /// Whether larger values count as an improvement.
    pub fn higher_is_better(self) -> bool {
        matches!(self, Metric::Rce | Metric::Ra | Metric::Nd)
    }

    pub fn value(self, r: &MetricsRecord) -> Option<f64> {
        match self {
            Metric::Rce => Some(r.rce),
            Metric::Ra => Some(r.ra),
            Metric::Nd => r.nd,
            Metric::Pdv => r.pdv,
            Metric::TsAtK => r.ts_at_k,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesPoint {
    pub t: usize,
    pub mean: f64,
    pub std: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ci95: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricSummary {
    /// Time average per seed, in seed order.
    pub per_seed: Vec<f64>,
    /// Mean, standard deviation and CI of the per-seed time averages.
    pub time_average: Stat,
    pub series: Vec<SeriesPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub strategy: String,
    pub seeds: Vec<u64>,
    pub steps: usize,
    pub metric_every: usize,
    pub burn_in: usize,
    pub ts_k: usize,
    pub padded_slates: usize,
    pub random_inits: usize,
    pub metrics: BTreeMap<Metric, MetricSummary>,
}

impl RunSummary {
    pub fn time_average(&self, metric: Metric) -> Option<f64> {
        self.metrics.get(&metric).map(|m| m.time_average.mean)
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub summary: RunSummary,
    pub runs: Vec<SeedRun>,
}

/// Runs every seed of `config` (in parallel) and aggregates. No files are
/// written.
pub fn execute(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let files = match &config.dataset {
        DatasetSpec::Files {
            items,
            interactions,
            trust,
            ..
        } => Some(load_files(items, interactions, trust)?),
        DatasetSpec::Synthetic { .. } => None,
    };
    if let Some(f) = &files {
        config.params.validate(f.interactions.catalog.num_items())?;
        config
            .mitigation
            .validate(f.interactions.catalog.num_items(), config.params.h)?;
    }
    let ts_k = config.ts_k.unwrap_or_else(|| config.dataset.default_ts_k());
    let schedule = config.schedule();

    let runs: Vec<SeedRun> = config
        .seeds
        .par_iter()
        .map(|&seed| {
            let data = prepare(config, files.as_ref(), seed)?;
            let sim = Simulation::new(&data.catalog, &data.graph, config.params, seed);
            let mut options = RunOptions::new(
                config.steps,
                MetricSettings {
                    pdv_seed: seed,
                    ..MetricSettings::with_ts_k(ts_k)
                },
            );
            options.schedule = schedule;
            let traj = sim.run(&data.initial, &config.mitigation, &options)?;
            Ok(SeedRun {
                seed,
                records: traj.records,
                final_states: traj.final_states,
                padded_slates: traj.padded_slates,
                random_inits: data.random_inits,
            })
        })
        .collect::<Result<_>>()?;

    let summary = summarize(config, ts_k, &runs);
    Ok(ExperimentResult { summary, runs })
}

fn summarize(config: &ExperimentConfig, ts_k: usize, runs: &[SeedRun]) -> RunSummary {
    let mut metrics = BTreeMap::new();
    for metric in Metric::ALL {
        let mut per_seed = Vec::with_capacity(runs.len());
        for run in runs {
            let vals: Vec<f64> = run
                .records
                .iter()
                .filter(|r| r.t >= config.burn_in)
                .filter_map(|r| metric.value(r))
                .collect();
            if vals.is_empty() {
                break;
            }
            per_seed.push(stats::mean(&vals));
        }
        if per_seed.len() != runs.len() {
            continue;
        }
        let steps: Vec<usize> = runs[0].records.iter().map(|r| r.t).collect();
        let series = steps
            .iter()
            .enumerate()
            .filter_map(|(k, &t)| {
                let xs: Vec<f64> = runs
                    .iter()
                    .filter_map(|run| metric.value(&run.records[k]))
                    .collect();
                (xs.len() == runs.len()).then(|| {
                    let s = Stat::of(&xs);
                    SeriesPoint {
                        t,
                        mean: s.mean,
                        std: s.std,
                        ci95: s.ci95,
                    }
                })
            })
            .collect();
        metrics.insert(
            metric,
            MetricSummary {
                time_average: Stat::of(&per_seed),
                per_seed,
                series,
            },
        );
    }
    RunSummary {
        strategy: config.mitigation.name().to_string(),
        seeds: config.seeds.clone(),
        steps: config.steps,
        metric_every: config.schedule().every,
        burn_in: config.burn_in,
        ts_k,
        padded_slates: runs.iter().map(|r| r.padded_slates).sum(),
        random_inits: runs.iter().map(|r| r.random_inits).sum(),
        metrics,
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| v.to_string())
}

/// `t,seed,rce,ra,nd,pdv,ts_at_k`, seeds in config order.
pub fn metrics_csv(runs: &[SeedRun]) -> String {
    let mut out = String::from("t,seed,rce,ra,nd,pdv,ts_at_k\n");
    for run in runs {
        for r in &run.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.t,
                run.seed,
                r.rce,
                r.ra,
                fmt_opt(r.nd),
                fmt_opt(r.pdv),
                fmt_opt(r.ts_at_k)
            );
        }
    }
    out
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_run_files(result: &ExperimentResult, config: &ExperimentConfig, out_dir: &Path) -> Result<()> {
    ensure_dir(out_dir)?;
    io::write_text(&out_dir.join("metrics.csv"), &metrics_csv(&result.runs))?;
    io::write_text(
        &out_dir.join("summary.json"),
        &(serde_json::to_string_pretty(&result.summary)? + "\n"),
    )?;
    if config.export_final_states {
        for run in &result.runs {
            io::export_states(
                &run.final_states,
                &out_dir.join(format!("final_states_seed{}.csv", run.seed)),
            )?;
        }
    }
    Ok(())
}

/// Runs `config` and writes `metrics.csv`, `summary.json` and, when
/// requested, `final_states_seed<seed>.csv` into `out_dir`.
pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path) -> Result<RunSummary> {
    let result = execute(config)?;
    write_run_files(&result, config, out_dir)?;
    Ok(result.summary)
}

#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub value: f64,
    pub result: ExperimentResult,
}

/// Runs the base config once per value of `sweep`.
pub fn sweep(config: &ExperimentConfig, sweep: &SweepSpec) -> Result<Vec<SweepPoint>> {
    let mut base = config.clone();
    base.sweep = None;
    validate_sweep(&base, sweep)?;
    sweep
        .values
        .iter()
        .map(|&value| {
            let mut cfg = base.clone();
            apply_axis(&mut cfg, sweep.axis, value)?;
            Ok(SweepPoint {
                value,
                result: execute(&cfg)?,
            })
        })
        .collect()
}

/// Long format `axis,axis_value,seed,t,metric,value`.
pub fn sweep_csv(axis: SweepParam, points: &[SweepPoint]) -> String {
    let mut out = String::from("axis,axis_value,seed,t,metric,value\n");
    for p in points {
        for run in &p.result.runs {
            for r in &run.records {
                for metric in Metric::ALL {
                    if let Some(v) = metric.value(r) {
                        let _ = writeln!(
                            out,
                            "{},{},{},{},{},{}",
                            axis.name(),
                            p.value,
                            run.seed,
                            r.t,
                            metric.name(),
                            v
                        );
                    }
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Serialize)]
struct SweepSummaryEntry<'a> {
    axis: &'static str,
    value: f64,
    summary: &'a RunSummary,
}

/// Runs the sweep and writes `sweep.csv` and `sweep_summary.json`.
pub fn run_sweep(config: &ExperimentConfig, spec: &SweepSpec, out_dir: &Path) -> Result<Vec<SweepPoint>> {
    let points = sweep(config, spec)?;
    ensure_dir(out_dir)?;
    io::write_text(&out_dir.join("sweep.csv"), &sweep_csv(spec.axis, &points))?;
    let entries: Vec<SweepSummaryEntry> = points
        .iter()
        .map(|p| SweepSummaryEntry {
            axis: spec.axis.name(),
            value: p.value,
            summary: &p.result.summary,
        })
        .collect();
    io::write_text(
        &out_dir.join("sweep_summary.json"),
        &(serde_json::to_string_pretty(&entries)? + "\n"),
    )?;
    Ok(points)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Improvement {
    pub metric: Metric,
    pub baseline: f64,
    pub candidate: f64,
    /// Signed so that positive means better; `None` when the baseline is 0.
    pub improvement_pct: Option<f64>,
    /// Welch two-sided p-value over per-seed time averages.
    pub p_value: Option<f64>,
    /// One-sided p-value for "candidate is better".
    pub p_better: Option<f64>,
}

/// Per-metric improvement of `candidate` over `baseline`.
pub fn compare_runs(candidate: &RunSummary, baseline: &RunSummary) -> Result<Vec<Improvement>> {
    if candidate.steps != baseline.steps
        || candidate.metric_every != baseline.metric_every
        || candidate.burn_in != baseline.burn_in
    {
        return Err(Error::InvalidRequest(
            "runs use different metric schedules".into(),
        ));
    }
    if candidate.seeds.len() != baseline.seeds.len() {
        return Err(Error::InvalidRequest("runs use different seed counts".into()));
    }
    let mut out = Vec::new();
    for metric in Metric::ALL {
        let (Some(c), Some(b)) = (candidate.metrics.get(&metric), baseline.metrics.get(&metric)) else {
            continue;
        };
        let (cm, bm) = (c.time_average.mean, b.time_average.mean);
        let sign = if metric.higher_is_better() { 1.0 } else { -1.0 };
        let improvement_pct = (bm != 0.0).then(|| sign * (cm - bm) / bm.abs() * 100.0 + 0.0);
        let test = stats::welch_t_test(&c.per_seed, &b.per_seed);
        out.push(Improvement {
            metric,
            baseline: bm,
            candidate: cm,
            improvement_pct,
            p_value: test.map(|t| t.p_two_sided),
            p_better: test.map(|t| {
                if metric.higher_is_better() {
                    t.p_greater
                } else {
                    1.0 - t.p_greater
                }
            }),
        });
    }
    Ok(out)
}

/// Reads a `summary.json` written by [`run_experiment`].
pub fn read_summary(path: &Path) -> Result<RunSummary> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let raw: RawSummary = serde_json::from_str(&text)?;
    Ok(raw.into())
}

#[derive(Deserialize)]
struct RawStat {
    mean: f64,
    std: f64,
    #[serde(default)]
    ci95: Option<f64>,
}

#[derive(Deserialize)]
struct RawPoint {
    t: usize,
    mean: f64,
    std: f64,
    #[serde(default)]
    ci95: Option<f64>,
}

#[derive(Deserialize)]
struct RawMetric {
    per_seed: Vec<f64>,
    time_average: RawStat,
    series: Vec<RawPoint>,
}

#[derive(Deserialize)]
struct RawSummary {
    strategy: String,
    seeds: Vec<u64>,
    steps: usize,
    metric_every: usize,
    burn_in: usize,
    ts_k: usize,
    padded_slates: usize,
    random_inits: usize,
    metrics: BTreeMap<String, RawMetric>,
}

impl From<RawSummary> for RunSummary {
    fn from(raw: RawSummary) -> Self {
        let metrics = raw
            .metrics
            .into_iter()
            .filter_map(|(name, m)| {
                let metric = Metric::ALL.into_iter().find(|k| k.name() == name)?;
                Some((
                    metric,
                    MetricSummary {
                        per_seed: m.per_seed,
                        time_average: Stat {
                            mean: m.time_average.mean,
                            std: m.time_average.std,
                            ci95: m.time_average.ci95,
                        },
                        series: m
                            .series
                            .into_iter()
                            .map(|p| SeriesPoint {
                                t: p.t,
                                mean: p.mean,
                                std: p.std,
                                ci95: p.ci95,
                            })
                            .collect(),
                    },
                ))
            })
            .collect();
        RunSummary {
            strategy: raw.strategy,
            seeds: raw.seeds,
            steps: raw.steps,
            metric_every: raw.metric_every,
            burn_in: raw.burn_in,
            ts_k: raw.ts_k,
            padded_slates: raw.padded_slates,
            random_inits: raw.random_inits,
            metrics,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn small(seeds: Vec<u64>, steps: usize) -> ExperimentConfig {
        ExperimentConfig::synthetic(12, 60, 4, 30, steps, seeds)
    }

    #[test]
    fn bookkeeping() {
        let result = execute(&small(vec![1, 2, 3], 10)).unwrap();
        let csv = metrics_csv(&result.runs);
        assert_eq!(csv.lines().count(), 31);
        assert_eq!(result.summary.metrics.len(), 5);
        let rce = &result.summary.metrics[&Metric::Rce];
        assert_eq!(rce.series.len(), 10);
        assert!(rce.time_average.ci95.is_some());
    }

    #[test]
    fn single_seed_has_no_interval() {
        let s = execute(&small(vec![4], 3)).unwrap().summary;
        assert!(s.metrics[&Metric::Rce].time_average.ci95.is_none());
        let cmp = compare_runs(&s, &s).unwrap();
        assert!(cmp.iter().all(|c| c.p_value.is_none()));
    }

    #[test]
    fn identical_runs_compare_as_zero() {
        let s = execute(&small(vec![1, 2, 3], 5)).unwrap().summary;
        for row in compare_runs(&s, &s).unwrap() {
            assert_eq!(row.improvement_pct, Some(0.0));
            assert_abs_diff_eq!(row.p_value.unwrap(), 1.0, epsilon = 1e-12);
        }
    }

    fn fake_summary(metric: Metric, per_seed: Vec<f64>) -> RunSummary {
        let mut metrics = BTreeMap::new();
        metrics.insert(
            metric,
            MetricSummary {
                time_average: Stat::of(&per_seed),
                per_seed,
                series: Vec::new(),
            },
        );
        RunSummary {
            strategy: "none".into(),
            seeds: vec![1, 2],
            steps: 10,
            metric_every: 1,
            burn_in: 0,
            ts_k: 5,
            padded_slates: 0,
            random_inits: 0,
            metrics,
        }
    }

    #[test]
    fn improvement_sign_follows_metric_direction() {
        let base = fake_summary(Metric::Rce, vec![1.19, 1.21]);
        let cand = fake_summary(Metric::Rce, vec![1.27, 1.29]);
        let row = &compare_runs(&cand, &base).unwrap()[0];
        assert_abs_diff_eq!(row.improvement_pct.unwrap(), 8.0 / 1.2, epsilon = 1e-9);

        let base = fake_summary(Metric::Pdv, vec![0.10, 0.10]);
        let cand = fake_summary(Metric::Pdv, vec![0.08, 0.08]);
        let row = &compare_runs(&cand, &base).unwrap()[0];
        assert_abs_diff_eq!(row.improvement_pct.unwrap(), 20.0, epsilon = 1e-9);
        let back = &compare_runs(&base, &cand).unwrap()[0];
        assert!(back.improvement_pct.unwrap() < 0.0);
    }

    #[test]
    fn mismatched_schedules_are_rejected() {
        let a = fake_summary(Metric::Rce, vec![1.0, 1.1]);
        let mut b = a.clone();
        b.metric_every = 10;
        assert!(matches!(compare_runs(&a, &b), Err(Error::InvalidRequest(_))));
    }

    #[test]
    fn config_validation() {
        assert!(small(vec![], 5).validate().is_err());
        assert!(small(vec![1, 1], 5).validate().is_err());
        assert!(small(vec![1], 0).validate().is_err());
        let mut cfg = small(vec![1], 5);
        cfg.sweep = Some(SweepSpec {
            axis: SweepParam::Gamma,
            values: vec![0.5, 1.5],
        });
        assert!(matches!(cfg.validate(), Err(Error::InvalidRequest(_))));
        cfg.sweep = Some(SweepSpec {
            axis: SweepParam::Alpha,
            values: vec![1.0, 1.0],
        });
        assert!(cfg.validate().is_err());
        cfg.sweep = Some(SweepSpec {
            axis: SweepParam::C,
            values: vec![2.5],
        });
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn sweep_runs_each_value() {
        let cfg = small(vec![1, 2], 3);
        let spec = SweepSpec {
            axis: SweepParam::Alpha,
            values: vec![0.0, 1.0, 5.0, 20.0],
        };
        let points = sweep(&cfg, &spec).unwrap();
        assert_eq!(points.len(), 4);
        let csv = sweep_csv(spec.axis, &points);
        assert_eq!(csv.lines().count(), 1 + 4 * 2 * 3 * 5);

        let spec = SweepSpec {
            axis: SweepParam::C,
            values: vec![5.0, 14.0],
        };
        let points = sweep(&cfg, &spec).unwrap();
        assert_eq!(points[1].result.runs[0].final_states.dim(), 14);
    }

    #[test]
    fn summary_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(vec![1, 2], 4);
        let s = run_experiment(&cfg, dir.path()).unwrap();
        let back = read_summary(&dir.path().join("summary.json")).unwrap();
        assert_eq!(back, s);
    }
}
