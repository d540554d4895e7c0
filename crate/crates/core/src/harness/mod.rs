//! Monte Carlo experiment harness: configs in, aggregated curves out.

mod aggregate;
mod config;
mod output;
mod plot;

use rayon::prelude::*;
use toml::Value;

pub use aggregate::{nearest_rank, Summary};
pub use config::{
    parse_value, AlgorithmConfig, BatchRule, BatchSpec, ConfigDocument, CountSpec, Derived, ExperimentConfig, Horizon,
    HorizonRule, LossConfig, PlotAxis, PlotConfig, RatesConfig, ResolvedAlgorithm, ScheduleConfig, StreamConfig,
    TopologyConfig,
};
pub use output::{read_results_csv, write_atomic, write_csv, write_raw_csv, CSV_HEADER, RAW_HEADER};
pub use plot::{render_svg, write_svg};

use crate::algorithms::{run, Evaluator, Learner, LearnerConfig, RunRecord, RunSpec};
use crate::error::{Error, Result};
use crate::losses::LossModel;
use crate::network::NetworkModel;
use crate::streams::{open_file_stream, trial_seed, unit_sphere_start, Sample, SampleSource};

/// Dense prefix of the checkpoint grid.
const DENSE_CHECKPOINTS: u64 = 1000;
const CHECKPOINT_RATIO: f64 = 1.2;

/// Iterations at which metrics are recorded: every `t ≤ 1000`, then the
/// rounded powers of 1.2 beyond that, then `iterations` itself.
pub fn checkpoint_grid(iterations: u64) -> Vec<u64> {
    let mut grid: Vec<u64> = (1..=iterations.min(DENSE_CHECKPOINTS)).collect();
    let mut k = (DENSE_CHECKPOINTS as f64).ln() / CHECKPOINT_RATIO.ln();
    k = k.ceil();
    loop {
        let t = CHECKPOINT_RATIO.powf(k).round() as u64;
        if t >= iterations {
            break;
        }
        if t > DENSE_CHECKPOINTS && grid.last() != Some(&t) {
            grid.push(t);
        }
        k += 1.0;
    }
    if grid.last() != Some(&iterations) {
        grid.push(iterations);
    }
    grid
}

/// Aggregated metrics of one algorithm at one checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub t: u64,
    pub t_prime: u64,
    pub sim_seconds: f64,
    /// One summary per metric.
    pub stats: Vec<Summary>,
    /// `raw[metric][trial]`.
    pub raw: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub id: String,
    pub label: String,
    pub minibatch: usize,
    pub nodes: usize,
    pub rounds: usize,
    pub discarded: usize,
    pub trial_count: usize,
    pub points: Vec<CurvePoint>,
}

impl Curve {
    /// Final value of `metric`'s mean.
    pub fn final_mean(&self, metric: usize) -> Option<f64> {
        self.points.last().map(|p| p.stats[metric].mean)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResults {
    pub experiment: String,
    pub metrics: Vec<String>,
    pub curves: Vec<Curve>,
}

impl ExperimentResults {
    pub fn metric_index(&self, name: &str) -> Option<usize> {
        self.metrics.iter().position(|m| m == name)
    }

    pub fn curve(&self, id: &str) -> Option<&Curve> {
        self.curves.iter().find(|c| c.id == id)
    }
}

/// Trial-independent state shared by every trial.
struct Prepared {
    config: ExperimentConfig,
    loss: LossModel,
    network: Option<NetworkModel>,
    algorithms: Vec<ResolvedAlgorithm>,
    metrics: Vec<crate::algorithms::Metric>,
    file_holdout: Vec<Sample>,
}

impl Prepared {
    fn new(config: ExperimentConfig) -> Result<Self> {
        let loss = config.loss_model()?;
        let network = config.network()?;
        let algorithms = config.resolve(network.as_ref())?;
        let metrics = config.parsed_metrics()?;
        let file_holdout = match config.stream.file_format() {
            Some((_, format, Some(path))) => {
                let mut stream = open_file_stream(&path, format)?;
                let mut out = Vec::new();
                for i in 1..=config.holdout as u64 {
                    match stream.fetch(i) {
                        Ok(s) => out.push(s),
                        Err(Error::EndOfStream(_)) => break,
                        Err(e) => return Err(e),
                    }
                }
                out
            }
            _ => Vec::new(),
        };
        Ok(Self {
            config,
            loss,
            network,
            algorithms,
            metrics,
            file_holdout,
        })
    }

    /// Records per algorithm for one trial.
    fn run_trial(&self, trial: usize) -> Result<Vec<Vec<RunRecord>>> {
        let seed = trial_seed(self.config.seed, trial as u64);
        let synthetic = self.config.stream.synthetic(seed)?;
        let (truth, holdout) = match &synthetic {
            Some(s) => (Some(s.truth().clone()), s.holdout(self.config.holdout)),
            None => (None, self.file_holdout.clone()),
        };
        let evaluator = Evaluator::new(self.loss.clone(), truth, holdout, self.metrics.clone())?;
        let dim = self.loss.param_dim();
        let w0 = if self.loss.kind.is_supervised() {
            vec![0.0; dim]
        } else {
            unit_sphere_start(seed, dim)
        };
        self.algorithms
            .iter()
            .map(|alg| {
                let mut learner_cfg = LearnerConfig::new(alg.kind, alg.nodes, alg.rounds, alg.schedule);
                learner_cfg.iterate = alg.iterate;
                learner_cfg.krasulina_scaling = alg.krasulina_scaling;
                let mut learner = Learner::new(learner_cfg, self.loss.clone(), w0.clone(), self.network.clone())?;
                let spec = RunSpec {
                    plan: alg.plan(),
                    iterations: alg.iterations,
                    seconds_per_iteration: alg.seconds_per_iteration,
                    checkpoints: checkpoint_grid(alg.iterations),
                };
                let mut source: Box<dyn SampleSource> = match (&synthetic, self.config.stream.file_format()) {
                    (Some(s), _) => Box::new(s.clone()),
                    (None, Some((path, format, _))) => Box::new(open_file_stream(path, format)?),
                    (None, None) => unreachable!("every stream is synthetic or file-backed"),
                };
                run(&mut learner, source.as_mut(), &spec, &evaluator)
            })
            .collect()
    }
}

/// Run every trial of `config` and aggregate per checkpoint.
///
/// `workers = 0` uses one worker per core. Results do not depend on the
/// worker count.
pub fn run_experiment(config: ExperimentConfig, workers: Option<usize>) -> Result<ExperimentResults> {
    let workers = workers.unwrap_or(config.workers);
    let prepared = Prepared::new(config)?;
    let trials = prepared.config.trials;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let outcomes: Vec<Result<Vec<Vec<RunRecord>>>> =
        pool.install(|| (0..trials).into_par_iter().map(|i| prepared.run_trial(i)).collect());
    let mut per_trial = Vec::with_capacity(trials);
    for (trial, outcome) in outcomes.into_iter().enumerate() {
        per_trial.push(outcome.map_err(|e| Error::Trial {
            trial,
            source: Box::new(e),
        })?);
    }

    let metric_names: Vec<String> = prepared.metrics.iter().map(ToString::to_string).collect();
    let curves = prepared
        .algorithms
        .iter()
        .enumerate()
        .map(|(a, alg)| {
            let checkpoints = per_trial[0][a].len();
            let points = (0..checkpoints)
                .map(|c| {
                    let head = &per_trial[0][a][c];
                    let raw: Vec<Vec<f64>> = (0..metric_names.len())
                        .map(|m| per_trial.iter().map(|trial| trial[a][c].values[m]).collect())
                        .collect();
                    CurvePoint {
                        t: head.t,
                        t_prime: head.t_prime,
                        sim_seconds: head.sim_seconds,
                        stats: raw.iter().map(|v| Summary::of(v)).collect(),
                        raw,
                    }
                })
                .collect();
            Curve {
                id: alg.id.clone(),
                label: alg.label.clone(),
                minibatch: alg.minibatch,
                nodes: alg.nodes,
                rounds: alg.rounds,
                discarded: alg.discarded,
                trial_count: trials,
                points,
            }
        })
        .collect();
    Ok(ExperimentResults {
        experiment: prepared.config.name.clone(),
        metrics: metric_names,
        curves,
    })
}

/// Run `doc` once per axis value and merge the curves, tagging each
/// algorithm id as `id@axis=value`.
pub fn run_sweep(doc: &ConfigDocument, axis: &str, values: &[Value], workers: Option<usize>) -> Result<ExperimentResults> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    // Every value is validated before any trial runs.
    let mut variants = Vec::with_capacity(values.len());
    for value in values {
        let shown = display_value(value);
        let tag = |e: Error| Error::Config(format!("{axis} = {shown}: {}", strip(e)));
        let mut variant = doc.clone();
        variant.set_axis(axis, value.clone()).map_err(tag)?;
        let config = variant.build().map_err(tag)?;
        config.resolve(config.network().map_err(tag)?.as_ref()).map_err(tag)?;
        variants.push((shown, config));
    }
    let mut merged: Option<ExperimentResults> = None;
    for (shown, config) in variants {
        let mut results = run_experiment(config, workers)?;
        for curve in &mut results.curves {
            curve.id = format!("{}@{axis}={shown}", curve.id);
            curve.label = format!("{} ({axis}={shown})", curve.label);
        }
        match &mut merged {
            None => merged = Some(results),
            Some(m) => m.curves.extend(results.curves),
        }
    }
    Ok(merged.expect("at least one value"))
}

/// Best sweep value per algorithm: the tagged curve with the smallest final
/// mean of `metric`, as `(algorithm id, axis value, final mean)` in first
/// appearance order. Curves with non-finite finals are skipped.
pub fn best_by_axis(results: &ExperimentResults, metric: &str) -> Result<Vec<(String, String, f64)>> {
    let m = results
        .metric_index(metric)
        .ok_or_else(|| Error::Config(format!("results have no metric {metric:?}")))?;
    let mut best: Vec<(String, String, f64)> = Vec::new();
    for c in &results.curves {
        let (base, value) = match c.id.split_once('@') {
            Some((b, tag)) => (b, tag.split_once('=').map_or(tag, |(_, v)| v)),
            None => (c.id.as_str(), ""),
        };
        let Some(v) = c.final_mean(m).filter(|v| v.is_finite()) else {
            continue;
        };
        match best.iter_mut().find(|(b, ..)| b == base) {
            Some(entry) if v < entry.2 => *entry = (base.to_string(), value.to_string(), v),
            Some(_) => {}
            None => best.push((base.to_string(), value.to_string(), v)),
        }
    }
    Ok(best)
}

fn display_value(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn strip(e: Error) -> String {
    match e {
        Error::Config(msg) => msg,
        other => other.to_string(),
    }
}
