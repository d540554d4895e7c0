//! Experiment configuration: a TOML document that can be edited with
//! dotted-path overrides before being deserialized and resolved into
//! concrete per-algorithm run plans.
//!
//! ```toml
//! name = "dmb_fig5a"
//! seed = 7
//! trials = 50
//! workers = 0                 # 0 = one worker per core
//! horizon = 100000            # samples t', or "n_squared" | "n_cubed" | "n_three_halves"
//! holdout = 0                 # held-out samples for risk_estimate
//! metrics = ["param_error"]
//!
//! [stream]                    # logistic_gaussian | conditional_gaussian | gaussian_covariance | file
//! kind = "logistic_gaussian"
//! dim = 5
//!
//! [loss]
//! kind = "logistic"           # logistic | hinge | pca_krasulina
//! expanse = 22.4              # ball radius D_W; default 10·√d for supervised losses
//!
//! [topology]                  # needed by consensus-based algorithms
//! kind = "k_regular_random"   # star | ring | complete | k_regular_random
//! nodes = 16
//! degree = 6
//! seed = 1
//! weights = "metropolis"      # metropolis | uniform
//!
//! [rates]                     # R_s, R_p, R_c; default 1e6, 1.25e5, 1e4
//! streaming = 1.0
//! processing = 1e12
//! messaging = 0.03125          # or mismatch = ρ, which sets R_c = (ρ + 1/R_p)·R_s/N
//!
//! [batch_rule]
//! factor = 0.1                # B/N = ⌈factor·ln t' / (ρ·ln(1/λ₂))⌉
//!
//! [algorithms.dmb_b10]        # one table per curve, in legend order
//! kind = "dmb"
//! B = 10                      # integer, "consensus_rule" or "inverse_mismatch"
//! N = 10                      # default: topology nodes (1 for centralized kinds)
//! mu = 0                      # integer or "auto" (from the rate model)
//! R = 1                       # integer or "max" (from the rate model)
//! schedule = { kind = "inv_sqrt", c = 0.1 }
//! iterate = "last"            # last | averaged
//!
//! [scales.full]               # applied with --scale full
//! horizon = 1000000
//! ```
//!
//! Schedules are `constant {eta}`, `inv_sqrt {c}`, `inv_t {c}`,
//! `adsgd_pair {c}`, `krasulina {c0, gap?, q?}`, `lan_optimal {lipschitz?,
//! expanse?}` and `dmb_bound {lipschitz?, sigma?, expanse?}`. Missing
//! bound constants are filled in from the problem: `D_W` from the loss,
//! the gap from the covariance spectrum, `L = max‖x̃‖²/4` and `σ²` as the
//! gradient variance at `w = 0`, both over 10⁴ stream samples drawn with the
//! master seed. `σ²` may instead be fixed with `loss.noise_variance`.

use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::algorithms::{AlgorithmKind, IterateChoice, KrasulinaScaling, Metric, StepSchedule};
use crate::error::{Error, Result};
use crate::losses::{LossKind, LossModel, SpectrumSpec};
use crate::network::{build_topology, NetworkModel, TopologyKind, WeightRule};
use crate::rates::{self, SystemRates};
use crate::streams::{FileFormat, SplitPlan, SyntheticStream};

/// Samples used to estimate `L` and `σ²` for bound-derived schedules.
const ESTIMATION_SAMPLES: u64 = 10_000;

/// Editable, not yet validated configuration document.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigDocument {
    table: Table,
    base_dir: Option<PathBuf>,
}

impl ConfigDocument {
    pub fn parse(text: &str) -> Result<Self> {
        let table: Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(Self { table, base_dir: None })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut doc = Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        doc.base_dir = path.parent().map(Path::to_path_buf);
        Ok(doc)
    }

    pub fn table(&self) -> &Table {
        &self.table
    }

    /// Apply the overrides listed under `[scales.<name>]`.
    pub fn apply_scale(&mut self, name: &str) -> Result<()> {
        let overrides = self
            .table
            .get("scales")
            .and_then(|s| s.get(name))
            .and_then(Value::as_table)
            .cloned()
            .ok_or_else(|| Error::Config(format!("config has no scale {name:?}")))?;
        for (path, value) in flatten(&overrides) {
            self.set(&path, value)?;
        }
        Ok(())
    }

    /// Set the value at a dotted path, creating intermediate tables.
    pub fn set(&mut self, path: &str, value: Value) -> Result<()> {
        let parts: Vec<&str> = path.split('.').collect();
        if parts.iter().any(|p| p.is_empty()) {
            return Err(Error::Config(format!("malformed key path {path:?}")));
        }
        let (last, head) = parts.split_last().expect("split yields at least one part");
        let mut cursor = &mut self.table;
        for part in head {
            let entry = cursor
                .entry(part.to_string())
                .or_insert_with(|| Value::Table(Table::new()));
            cursor = entry
                .as_table_mut()
                .ok_or_else(|| Error::Config(format!("{path:?}: {part:?} is not a table")))?;
        }
        cursor.insert(last.to_string(), value);
        Ok(())
    }

    /// Apply a `path=value` assignment; the value is parsed as TOML and
    /// falls back to a bare string.
    pub fn set_assignment(&mut self, assignment: &str) -> Result<()> {
        let (path, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {assignment:?} is not of the form key=value")))?;
        self.set(path.trim(), parse_value(raw.trim()))
    }

    /// Apply a sweep axis value. `B`, `mu`, `R` and `c` apply to every
    /// algorithm; `N` resizes the topology and every distributed algorithm
    /// that pins its node count; anything else is a dotted path.
    pub fn set_axis(&mut self, axis: &str, value: Value) -> Result<()> {
        let ids: Vec<(String, bool, bool)> = self
            .table
            .get("algorithms")
            .and_then(Value::as_table)
            .map(|algs| {
                algs.iter()
                    .map(|(id, t)| {
                        let centralized = t
                            .get("kind")
                            .and_then(Value::as_str)
                            .is_some_and(|k| k.starts_with("centralized") || k == "krasulina");
                        (id.clone(), centralized, t.get("N").is_some())
                    })
                    .collect()
            })
            .unwrap_or_default();
        match axis {
            "B" | "mu" | "R" => {
                for (id, ..) in &ids {
                    self.set(&format!("algorithms.{id}.{axis}"), value.clone())?;
                }
            }
            "c" => {
                for (id, ..) in &ids {
                    let key = match self.table["algorithms"][id.as_str()]
                        .get("schedule")
                        .and_then(|s| s.get("kind"))
                        .and_then(Value::as_str)
                    {
                        Some("krasulina") => "c0",
                        Some("constant") => "eta",
                        _ => "c",
                    };
                    self.set(&format!("algorithms.{id}.schedule.{key}"), value.clone())?;
                }
            }
            "N" => {
                self.set("topology.nodes", value.clone())?;
                for (id, centralized, pinned) in &ids {
                    if *pinned && !centralized {
                        self.set(&format!("algorithms.{id}.N"), value.clone())?;
                    }
                }
            }
            path => self.set(path, value)?,
        }
        Ok(())
    }

    pub fn build(&self) -> Result<ExperimentConfig> {
        let mut config = ExperimentConfig::deserialize(Value::Table(self.table.clone()))
            .map_err(|e| Error::Config(e.to_string()))?;
        if let (StreamConfig::File { path, holdout_path, .. }, Some(base)) = (&mut config.stream, &self.base_dir) {
            for p in std::iter::once(path).chain(holdout_path.iter_mut()) {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        config.validate()?;
        Ok(config)
    }
}

fn flatten(table: &Table) -> Vec<(String, Value)> {
    let mut out = Vec::new();
    for (k, v) in table {
        match v {
            Value::Table(inner) if !k.is_empty() && !is_leaf_table(k) => {
                for (p, val) in flatten(inner) {
                    out.push((format!("{k}.{p}"), val));
                }
            }
            other => out.push((k.clone(), other.clone())),
        }
    }
    out
}

/// Tables that are replaced wholesale rather than merged key by key.
fn is_leaf_table(key: &str) -> bool {
    key == "schedule"
}

pub fn parse_value(raw: &str) -> Value {
    toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub trials: usize,
    #[serde(default)]
    pub workers: usize,
    pub horizon: Horizon,
    #[serde(default)]
    pub holdout: usize,
    pub metrics: Vec<String>,
    pub stream: StreamConfig,
    pub loss: LossConfig,
    #[serde(default)]
    pub topology: Option<TopologyConfig>,
    #[serde(default)]
    pub rates: RatesConfig,
    #[serde(default)]
    pub batch_rule: BatchRuleConfig,
    pub algorithms: IndexMap<String, AlgorithmConfig>,
    #[serde(default)]
    pub plot: Option<PlotConfig>,
    #[serde(default)]
    pub scales: IndexMap<String, Table>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Horizon {
    Samples(u64),
    Rule(HorizonRule),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HorizonRule {
    NThreeHalves,
    NSquared,
    NCubed,
}

impl Horizon {
    pub fn samples(&self, nodes: Option<usize>) -> Result<u64> {
        match *self {
            Horizon::Samples(s) => Ok(s),
            Horizon::Rule(rule) => {
                let n = nodes.ok_or_else(|| Error::Config("horizon rule needs a topology".into()))? as f64;
                Ok(match rule {
                    HorizonRule::NThreeHalves => n.powf(1.5).round(),
                    HorizonRule::NSquared => n * n,
                    HorizonRule::NCubed => n * n * n,
                } as u64)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StreamConfig {
    LogisticGaussian {
        dim: usize,
    },
    ConditionalGaussian {
        dim: usize,
        sigma_x2: f64,
    },
    GaussianCovariance {
        dim: usize,
        /// Full spectrum; overrides `top`, `gap` and `floor`.
        #[serde(default)]
        eigenvalues: Option<Vec<f64>>,
        #[serde(default = "unit")]
        top: f64,
        #[serde(default = "default_gap")]
        gap: f64,
        #[serde(default = "default_gap")]
        floor: f64,
    },
    File {
        path: PathBuf,
        #[serde(default)]
        has_header: bool,
        #[serde(default)]
        label_column: bool,
        #[serde(default)]
        holdout_path: Option<PathBuf>,
    },
}

fn unit() -> f64 {
    1.0
}

fn default_gap() -> f64 {
    0.1
}

impl StreamConfig {
    pub fn dim(&self) -> Option<usize> {
        match self {
            StreamConfig::LogisticGaussian { dim }
            | StreamConfig::ConditionalGaussian { dim, .. }
            | StreamConfig::GaussianCovariance { dim, .. } => Some(*dim),
            StreamConfig::File { .. } => None,
        }
    }

    pub fn spectrum(&self) -> Result<Option<SpectrumSpec>> {
        match self {
            StreamConfig::GaussianCovariance {
                dim,
                eigenvalues,
                top,
                gap,
                floor,
            } => Ok(Some(match eigenvalues {
                Some(values) => {
                    if values.len() != *dim {
                        return Err(Error::Config(format!(
                            "stream has dim {dim} but {} eigenvalues",
                            values.len()
                        )));
                    }
                    SpectrumSpec::new(values.clone())?
                }
                None => SpectrumSpec::linear_decay(*dim, *top, *gap, *floor)?,
            })),
            _ => Ok(None),
        }
    }

    /// Synthetic stream for `seed`; `None` for file streams.
    pub fn synthetic(&self, seed: u64) -> Result<Option<SyntheticStream>> {
        Ok(Some(match self {
            StreamConfig::LogisticGaussian { dim } => SyntheticStream::logistic_gaussian(*dim, seed)?,
            StreamConfig::ConditionalGaussian { dim, sigma_x2 } => {
                SyntheticStream::conditional_gaussian(*dim, *sigma_x2, seed)?
            }
            StreamConfig::GaussianCovariance { .. } => {
                SyntheticStream::gaussian_covariance(self.spectrum()?.expect("covariance kind"), seed)?
            }
            StreamConfig::File { .. } => return Ok(None),
        }))
    }

    pub fn file_format(&self) -> Option<(PathBuf, FileFormat, Option<PathBuf>)> {
        match self {
            StreamConfig::File {
                path,
                has_header,
                label_column,
                holdout_path,
            } => Some((
                path.clone(),
                FileFormat {
                    has_header: *has_header,
                    label_column: *label_column,
                },
                holdout_path.clone(),
            )),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub kind: LossKind,
    /// Feature dimension; required only for file streams.
    #[serde(default)]
    pub dim: Option<usize>,
    /// Ball radius; `0` disables projection.
    #[serde(default)]
    pub expanse: Option<f64>,
    #[serde(default)]
    pub noise_variance: Option<f64>,
    #[serde(default)]
    pub smoothness: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyConfig {
    pub kind: TopologyKind,
    pub nodes: usize,
    #[serde(default)]
    pub degree: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub weights: WeightRule,
}

impl TopologyConfig {
    pub fn build(&self) -> Result<NetworkModel> {
        build_topology(self.kind, self.nodes, self.degree, self.seed, self.weights)
    }
}

/// Rates shared by every algorithm. Exactly one of `messaging` (`R_c`) and
/// `mismatch` (`ρ`) is set; a fixed `ρ` derives `R_c` per node count.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatesConfig {
    pub streaming: f64,
    pub processing: f64,
    #[serde(default)]
    pub messaging: Option<f64>,
    #[serde(default)]
    pub mismatch: Option<f64>,
}

impl Default for RatesConfig {
    fn default() -> Self {
        Self {
            streaming: 1e6,
            processing: 1.25e5,
            messaging: Some(1e4),
            mismatch: None,
        }
    }
}

impl RatesConfig {
    fn validate(&self) -> Result<()> {
        match (self.messaging, self.mismatch) {
            (Some(_), Some(_)) => Err(Error::Config("rates: give messaging or mismatch, not both".into())),
            (None, None) => Err(Error::Config("rates: messaging or mismatch is required".into())),
            _ => Ok(()),
        }
    }

    /// `R_c` for `nodes` nodes.
    pub fn messaging_rate(&self, nodes: usize) -> f64 {
        match (self.messaging, self.mismatch) {
            (Some(rc), _) => rc,
            (None, Some(rho)) => (rho + 1.0 / self.processing) * self.streaming / nodes as f64,
            (None, None) => unreachable!("validated"),
        }
    }

    pub fn system(&self, nodes: usize, minibatch: usize, rounds: usize) -> Result<SystemRates> {
        SystemRates::new(
            self.streaming,
            self.processing,
            self.messaging_rate(nodes),
            nodes,
            minibatch,
            rounds.max(1),
        )
    }

    pub fn mismatch(&self, nodes: usize) -> f64 {
        nodes as f64 * self.messaging_rate(nodes) / self.streaming - 1.0 / self.processing
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchRuleConfig {
    pub factor: f64,
}

impl Default for BatchRuleConfig {
    fn default() -> Self {
        Self { factor: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(untagged)]
pub enum BatchSpec {
    Fixed(usize),
    Rule(BatchRule),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchRule {
    /// `B/N = ⌈factor·ln t' / (ρ·ln(1/λ₂))⌉`.
    ConsensusRule,
    /// `B/N = round(1/ρ)`.
    InverseMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(untagged)]
pub enum CountSpec {
    Fixed(usize),
    Derived(Derived),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Derived {
    /// `μ` from the rate model.
    Auto,
    /// `R = max_rounds` from the rate model.
    Max,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub kind: String,
    #[serde(default)]
    pub c: Option<f64>,
    #[serde(default)]
    pub eta: Option<f64>,
    #[serde(default)]
    pub c0: Option<f64>,
    #[serde(default)]
    pub gap: Option<f64>,
    #[serde(default)]
    pub q: Option<f64>,
    #[serde(default)]
    pub lipschitz: Option<f64>,
    #[serde(default)]
    pub sigma: Option<f64>,
    #[serde(default)]
    pub expanse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmConfig {
    pub kind: AlgorithmKind,
    #[serde(default, rename = "B")]
    pub batch: Option<BatchSpec>,
    #[serde(default, rename = "N")]
    pub nodes: Option<usize>,
    #[serde(default)]
    pub mu: Option<CountSpec>,
    #[serde(default, rename = "R")]
    pub rounds: Option<CountSpec>,
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub iterate: Option<IterateChoice>,
    #[serde(default)]
    pub krasulina_scaling: Option<KrasulinaScaling>,
    /// Legend text; defaults to the algorithm id.
    #[serde(default)]
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlotConfig {
    pub metric: String,
    #[serde(default)]
    pub x: PlotAxis,
    #[serde(default)]
    pub title: Option<String>,
    #[serde(default)]
    pub x_label: Option<String>,
    #[serde(default)]
    pub y_label: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlotAxis {
    #[default]
    TPrime,
    T,
    SimSeconds,
}

/// Everything needed to run one algorithm curve.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedAlgorithm {
    pub id: String,
    pub label: String,
    pub kind: AlgorithmKind,
    pub minibatch: usize,
    pub nodes: usize,
    pub discarded: usize,
    pub rounds: usize,
    pub schedule: StepSchedule,
    pub iterate: IterateChoice,
    pub krasulina_scaling: KrasulinaScaling,
    pub iterations: u64,
    pub seconds_per_iteration: f64,
}

impl ResolvedAlgorithm {
    pub fn plan(&self) -> SplitPlan {
        SplitPlan::new(self.minibatch, self.nodes, self.discarded).expect("validated during resolution")
    }
}

/// Problem constants estimated once per experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProblemStats {
    pub lipschitz: f64,
    pub sigma2: f64,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        self.rates.validate()?;
        if self.algorithms.is_empty() {
            return Err(Error::Config("config lists no algorithms".into()));
        }
        if self.metrics.is_empty() {
            return Err(Error::Config("config lists no metrics".into()));
        }
        self.parsed_metrics()?;
        if let (Some(d), Some(ld)) = (self.stream.dim(), self.loss.dim) {
            if d != ld {
                return Err(Error::Config(format!("stream dim {d} disagrees with loss dim {ld}")));
            }
        }
        if matches!(self.stream, StreamConfig::File { .. }) && self.loss.dim.is_none() {
            return Err(Error::Config("file streams need loss.dim".into()));
        }
        let pca_stream = matches!(self.stream, StreamConfig::GaussianCovariance { .. });
        if pca_stream != (self.loss.kind == LossKind::PcaKrasulina) && !matches!(self.stream, StreamConfig::File { .. }) {
            return Err(Error::Config(format!(
                "loss {:?} does not match the stream kind",
                self.loss.kind
            )));
        }
        Ok(())
    }

    pub fn parsed_metrics(&self) -> Result<Vec<Metric>> {
        self.metrics.iter().map(|m| m.parse()).collect()
    }

    pub fn dim(&self) -> usize {
        self.stream.dim().or(self.loss.dim).expect("validated")
    }

    pub fn loss_model(&self) -> Result<LossModel> {
        let dim = self.dim();
        let mut model = LossModel::new(self.loss.kind, dim)?;
        model.smoothness = self.loss.smoothness;
        model.noise_variance = self.loss.noise_variance.unwrap_or(0.0);
        if self.loss.kind.is_supervised() {
            let radius = self.loss.expanse.unwrap_or(10.0 * (dim as f64).sqrt());
            if radius > 0.0 {
                model = model.with_expanse(radius)?;
            }
        } else if self.loss.expanse.is_some_and(|e| e > 0.0) {
            return Err(Error::Config("pca_krasulina iterates are unconstrained; drop loss.expanse".into()));
        }
        Ok(model)
    }

    pub fn network(&self) -> Result<Option<NetworkModel>> {
        self.topology.as_ref().map(TopologyConfig::build).transpose()
    }

    pub fn horizon_samples(&self) -> Result<u64> {
        self.horizon.samples(self.topology.as_ref().map(|t| t.nodes))
    }

    fn estimate_stats(&self, loss: &LossModel) -> Result<ProblemStats> {
        let Some(stream) = self.stream.synthetic(self.seed)? else {
            return Err(Error::Config(
                "bound-derived schedules on file streams need explicit lipschitz and sigma".into(),
            ));
        };
        let samples: Vec<_> = (1..=ESTIMATION_SAMPLES)
            .map(|i| stream.generate(i))
            .collect::<Result<_>>()?;
        let lipschitz = samples
            .iter()
            .map(|s| (crate::norm2(&s.features) + 1.0) / 4.0)
            .fold(0.0, f64::max);
        let sigma2 = match self.loss.noise_variance {
            Some(v) => v,
            None => crate::losses::estimate_noise_variance(loss, &vec![0.0; loss.param_dim()], &samples)?,
        };
        Ok(ProblemStats { lipschitz, sigma2 })
    }

    /// Resolve every algorithm into concrete `(B, N, μ, R, T)` and schedule.
    pub fn resolve(&self, network: Option<&NetworkModel>) -> Result<Vec<ResolvedAlgorithm>> {
        let horizon = self.horizon_samples()?;
        let loss = self.loss_model()?;
        let mut stats: Option<ProblemStats> = None;
        let mut out = Vec::with_capacity(self.algorithms.len());
        for (id, alg) in &self.algorithms {
            let ctx = |e: Error| Error::Config(format!("algorithm {id:?}: {}", strip_config(e)));
            let resolved = self
                .resolve_one(id, alg, network, horizon, &loss, &mut stats)
                .map_err(ctx)?;
            out.push(resolved);
        }
        Ok(out)
    }

    fn resolve_one(
        &self,
        id: &str,
        alg: &AlgorithmConfig,
        network: Option<&NetworkModel>,
        horizon: u64,
        loss: &LossModel,
        stats: &mut Option<ProblemStats>,
    ) -> Result<ResolvedAlgorithm> {
        let kind = alg.kind;
        let topo_nodes = self.topology.as_ref().map(|t| t.nodes);
        let nodes = if kind.is_centralized() {
            match alg.nodes {
                Some(n) if n != 1 => return Err(Error::Config(format!("{kind:?} runs on one node, got N = {n}"))),
                _ => 1,
            }
        } else {
            alg.nodes
                .or(topo_nodes)
                .ok_or_else(|| Error::Config("N is required without a topology".into()))?
        };
        // Network-wide batch rules are sized for the topology, also when a
        // centralized counterpart consumes the same samples.
        let rule_nodes = topo_nodes.unwrap_or(nodes);
        let minibatch = match alg.batch {
            Some(BatchSpec::Fixed(b)) => b,
            Some(BatchSpec::Rule(rule)) => {
                let rho = self.rates.mismatch(rule_nodes);
                if rho <= 0.0 {
                    return Err(Error::Config(format!("batch rule needs a positive mismatch ratio, got {rho}")));
                }
                // One message round needs a local batch of at least 1/ρ.
                let one_round = ((1.0 / rho) * (1.0 - 1e-9)).ceil() as usize;
                let local = match rule {
                    BatchRule::ConsensusRule => {
                        let lambda2 = network
                            .ok_or_else(|| Error::Config("consensus_rule needs a topology".into()))?
                            .lambda2();
                        let raw = if lambda2 == 0.0 {
                            1.0
                        } else {
                            self.batch_rule.factor * (horizon as f64).ln() / (rho * (1.0 / lambda2).ln())
                        };
                        (raw.ceil() as usize).max(one_round).max(1)
                    }
                    BatchRule::InverseMismatch => ((1.0 / rho).round() as usize).max(1),
                };
                local * rule_nodes
            }
            None if kind == AlgorithmKind::DgdNaive => nodes,
            None => return Err(Error::Config("B is required".into())),
        };
        SplitPlan::new(minibatch, nodes, 0)?;

        let rounds = match alg.rounds {
            Some(CountSpec::Fixed(r)) => r,
            Some(CountSpec::Derived(Derived::Max)) => max_rounds(&self.rates, nodes, minibatch)?,
            Some(CountSpec::Derived(Derived::Auto)) => {
                return Err(Error::Config("R accepts an integer or \"max\"".into()));
            }
            None if matches!(kind, AlgorithmKind::Dsgd | AlgorithmKind::Adsgd) && nodes > 1 => {
                max_rounds(&self.rates, nodes, minibatch)?
            }
            None if kind.is_centralized() || kind.is_local() => 0,
            None => 1,
        };

        let discarded = match alg.mu {
            Some(CountSpec::Fixed(m)) => m,
            Some(CountSpec::Derived(Derived::Auto)) => {
                rates::discarded_per_iteration(&self.rates.system(nodes, minibatch, rounds)?)
            }
            Some(CountSpec::Derived(Derived::Max)) => {
                return Err(Error::Config("mu accepts an integer or \"auto\"".into()));
            }
            None if kind == AlgorithmKind::DgdNaive => {
                rates::discarded_per_iteration(&self.rates.system(nodes, minibatch, rounds)?)
            }
            None => 0,
        };
        let plan = SplitPlan::new(minibatch, nodes, discarded)?;
        let iterations = horizon / plan.block();
        if iterations == 0 {
            return Err(Error::Config(format!(
                "horizon {horizon} is shorter than one iteration (B + mu = {})",
                plan.block()
            )));
        }

        let seconds_per_iteration = if kind.is_centralized() {
            minibatch as f64 / self.rates.streaming
        } else if kind.is_local() {
            minibatch as f64 / (nodes as f64 * self.rates.processing)
        } else {
            minibatch as f64 / (nodes as f64 * self.rates.processing) + rounds as f64 / self.rates.messaging_rate(nodes)
        };

        let schedule = self.resolve_schedule(&alg.schedule, loss, iterations, stats)?;
        Ok(ResolvedAlgorithm {
            id: id.to_string(),
            label: alg.label.clone().unwrap_or_else(|| id.to_string()),
            kind,
            minibatch,
            nodes,
            discarded,
            rounds,
            schedule,
            iterate: alg.iterate.unwrap_or_else(|| kind.default_iterate()),
            krasulina_scaling: alg.krasulina_scaling.unwrap_or_default(),
            iterations,
            seconds_per_iteration,
        })
    }

    fn resolve_schedule(
        &self,
        s: &ScheduleConfig,
        loss: &LossModel,
        iterations: u64,
        stats: &mut Option<ProblemStats>,
    ) -> Result<StepSchedule> {
        let need = |name: &str, v: Option<f64>| v.ok_or_else(|| Error::Config(format!("schedule {:?} needs {name}", s.kind)));
        let mut stats_now = || -> Result<ProblemStats> {
            if stats.is_none() {
                *stats = Some(self.estimate_stats(loss)?);
            }
            Ok(stats.expect("just set"))
        };
        let expanse = |v: Option<f64>| {
            v.or(loss.expanse)
                .ok_or_else(|| Error::Config(format!("schedule {:?} needs an expanse", s.kind)))
        };
        let schedule = match s.kind.as_str() {
            "constant" => StepSchedule::Constant { eta: need("eta", s.eta)? },
            "inv_sqrt" => StepSchedule::InvSqrt { c: need("c", s.c)? },
            "inv_t" => StepSchedule::InvT { c: need("c", s.c)? },
            "adsgd_pair" => StepSchedule::AdsgdPair { c: need("c", s.c)? },
            "krasulina" => {
                let gap = match s.gap {
                    Some(g) => g,
                    None => self
                        .stream
                        .spectrum()?
                        .map(|sp| sp.gap())
                        .ok_or_else(|| Error::Config("krasulina schedule needs gap".into()))?,
                };
                StepSchedule::Krasulina {
                    c0: need("c0", s.c0)?,
                    gap,
                    q: s.q.unwrap_or(0.0),
                }
            }
            "lan_optimal" => StepSchedule::LanOptimal {
                lipschitz: match s.lipschitz {
                    Some(l) => l,
                    None => stats_now()?.lipschitz,
                },
                expanse: expanse(s.expanse)?,
                horizon: iterations,
            },
            "dmb_bound" => {
                let (lipschitz, sigma) = match (s.lipschitz, s.sigma) {
                    (Some(l), Some(sg)) => (l, sg),
                    (l, sg) => {
                        let st = stats_now()?;
                        (l.unwrap_or(st.lipschitz), sg.unwrap_or(st.sigma2.sqrt()))
                    }
                };
                StepSchedule::DmbBound {
                    lipschitz,
                    sigma,
                    expanse: expanse(s.expanse)?,
                }
            }
            other => return Err(Error::Config(format!("unknown schedule kind {other:?}"))),
        };
        schedule.validate()?;
        Ok(schedule)
    }
}

fn max_rounds(rates: &RatesConfig, nodes: usize, minibatch: usize) -> Result<usize> {
    let budget = rates::max_rounds(&rates.system(nodes, minibatch, 1)?);
    if !budget.feasible {
        return Err(Error::Infeasible(format!(
            "no message round fits between splits for B = {minibatch}, N = {nodes}"
        )));
    }
    Ok(budget.rounds)
}

fn strip_config(e: Error) -> String {
    match e {
        Error::Config(msg) => msg,
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
name = "t"
horizon = 1000
metrics = ["param_error"]
[stream]
kind = "logistic_gaussian"
dim = 3
[loss]
kind = "logistic"
[algorithms.a]
kind = "dmb"
B = 10
N = 2
schedule = { kind = "inv_sqrt", c = 0.5 }
[scales.full]
horizon = 5000
"algorithms.a.B" = 20
"#;

    #[test]
    fn builds_and_resolves() {
        let cfg = ConfigDocument::parse(BASE).unwrap().build().unwrap();
        let algs = cfg.resolve(None).unwrap();
        assert_eq!(algs[0].minibatch, 10);
        assert_eq!(algs[0].iterations, 100);
        assert_eq!(algs[0].rounds, 1);
        assert!((cfg.loss_model().unwrap().expanse.unwrap() - 10.0 * 3f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn overrides_and_scales() {
        let mut doc = ConfigDocument::parse(BASE).unwrap();
        doc.set_assignment("algorithms.a.B=40").unwrap();
        let cfg = doc.build().unwrap();
        assert_eq!(cfg.resolve(None).unwrap()[0].minibatch, 40);

        let mut doc = ConfigDocument::parse(BASE).unwrap();
        doc.apply_scale("full").unwrap();
        let cfg = doc.build().unwrap();
        assert_eq!(cfg.horizon, Horizon::Samples(5000));
        assert_eq!(cfg.resolve(None).unwrap()[0].minibatch, 20);
        assert!(doc.clone().apply_scale("nope").is_err());
    }

    #[test]
    fn invalid_batch_names_value() {
        let mut doc = ConfigDocument::parse(BASE).unwrap();
        doc.set_axis("B", Value::Integer(15)).unwrap();
        let err = doc.build().unwrap().resolve(None).unwrap_err().to_string();
        assert!(err.contains("15"), "{err}");
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let mut doc = ConfigDocument::parse(BASE).unwrap();
        doc.set_assignment("algorithms.a.bogus=1").unwrap();
        assert!(doc.build().is_err());
        assert!(ConfigDocument::parse("name = ").is_err());
    }

    #[test]
    fn parse_value_falls_back_to_string() {
        assert_eq!(parse_value("3"), Value::Integer(3));
        assert_eq!(parse_value("2.5"), Value::Float(2.5));
        assert_eq!(parse_value("max"), Value::String("max".into()));
        assert_eq!(parse_value("\"auto\""), Value::String("auto".into()));
    }

    #[test]
    fn horizon_rules() {
        assert_eq!(Horizon::Rule(HorizonRule::NSquared).samples(Some(16)).unwrap(), 256);
        assert_eq!(Horizon::Rule(HorizonRule::NCubed).samples(Some(16)).unwrap(), 4096);
        assert_eq!(Horizon::Rule(HorizonRule::NThreeHalves).samples(Some(16)).unwrap(), 64);
        assert!(Horizon::Rule(HorizonRule::NSquared).samples(None).is_err());
    }
}
