//! Centralized, local and distributed learners plus the simulation driver.
//!
//! Every learner consumes, per iteration, one local mini-batch per node as
//! dealt by a [`SplitPlan`]. Aggregation is one of: exact averaging
//! (AllReduce), `R` rounds of consensus, or none.

mod metrics;
mod schedule;

use serde::{Deserialize, Serialize};

pub use metrics::{Evaluator, Metric, MetricKind};
pub use schedule::StepSchedule;

use crate::error::{Error, Result};
use crate::losses::LossModel;
use crate::network::{exact_mean, NetworkModel, NodeVectors};
use crate::streams::{Sample, SampleSource, SplitPlan};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgorithmKind {
    /// Single-machine mini-batch SGD with stepsize-weighted averaging.
    Centralized,
    /// Single-machine accelerated SGD.
    CentralizedAccelerated,
    /// Single-machine mini-batch Krasulina.
    Krasulina,
    Dmb,
    DmKrasulina,
    Dsgd,
    Adsgd,
    LocalSgd,
    LocalAsgd,
    DgdNaive,
    DgdMinibatch,
}

impl AlgorithmKind {
    pub fn is_centralized(self) -> bool {
        matches!(
            self,
            AlgorithmKind::Centralized | AlgorithmKind::CentralizedAccelerated | AlgorithmKind::Krasulina
        )
    }

    pub fn is_pca(self) -> bool {
        matches!(self, AlgorithmKind::Krasulina | AlgorithmKind::DmKrasulina)
    }

    pub fn is_local(self) -> bool {
        matches!(self, AlgorithmKind::LocalSgd | AlgorithmKind::LocalAsgd)
    }

    /// Consensus over a graph is needed (given `N > 1` and `R > 0`).
    pub fn uses_consensus(self) -> bool {
        matches!(
            self,
            AlgorithmKind::Dsgd | AlgorithmKind::Adsgd | AlgorithmKind::DgdNaive | AlgorithmKind::DgdMinibatch
        )
    }

    pub fn default_iterate(self) -> IterateChoice {
        match self {
            AlgorithmKind::Centralized | AlgorithmKind::Dsgd | AlgorithmKind::LocalSgd => IterateChoice::Averaged,
            _ => IterateChoice::Last,
        }
    }
}

/// Which iterate metrics are evaluated at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IterateChoice {
    Last,
    /// `(Σ η_τ)⁻¹ Σ η_τ w_{τ+1}`; only SGD-type learners keep it.
    Averaged,
}

/// How DM-Krasulina normalises local pseudo-gradients before averaging.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KrasulinaScaling {
    /// Un-normalised local sums over `B/N` samples.
    #[default]
    Sum,
    /// Local means.
    Mean,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnerConfig {
    pub kind: AlgorithmKind,
    pub nodes: usize,
    /// Consensus rounds per iteration; ignored by exact and local kinds.
    pub rounds: usize,
    pub schedule: StepSchedule,
    pub iterate: IterateChoice,
    pub krasulina_scaling: KrasulinaScaling,
}

impl LearnerConfig {
    pub fn new(kind: AlgorithmKind, nodes: usize, rounds: usize, schedule: StepSchedule) -> Self {
        Self {
            kind,
            nodes,
            rounds,
            schedule,
            iterate: kind.default_iterate(),
            krasulina_scaling: KrasulinaScaling::default(),
        }
    }
}

/// Projected SGD iterate with stepsize-weighted running average.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdState {
    pub w: Vec<f64>,
    pub w_av: Vec<f64>,
    pub eta_sum: f64,
}

impl SgdState {
    pub fn new(w0: Vec<f64>) -> Self {
        Self {
            w_av: w0.clone(),
            w: w0,
            eta_sum: 0.0,
        }
    }

    fn record_average(&mut self, eta: f64) {
        self.eta_sum += eta;
        let r = eta / self.eta_sum;
        for (a, w) in self.w_av.iter_mut().zip(&self.w) {
            *a += r * (w - *a);
        }
    }
}

/// `w ← [w − η g]` followed by the averaging update with weight `η`.
pub fn centralized_sgd_step(state: &mut SgdState, g: &[f64], eta: f64, loss: &LossModel) {
    for (w, gi) in state.w.iter_mut().zip(g) {
        *w -= eta * gi;
    }
    loss.project(&mut state.w);
    state.record_average(eta);
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcceleratedState {
    pub v: Vec<f64>,
    pub w: Vec<f64>,
}

impl AcceleratedState {
    pub fn new(w0: Vec<f64>) -> Self {
        Self { v: w0.clone(), w: w0 }
    }

    /// Search point `u = β⁻¹v + (1 − β⁻¹)w`.
    pub fn lookahead(&self, beta: f64) -> Vec<f64> {
        let r = 1.0 / beta;
        self.v.iter().zip(&self.w).map(|(v, w)| r * v + (1.0 - r) * w).collect()
    }
}

/// `v ← [u − η g]`, `w ← β⁻¹v + (1 − β⁻¹)w`, with `g` taken at `u`.
pub fn accelerated_sgd_step(state: &mut AcceleratedState, u: &[f64], g: &[f64], eta: f64, beta: f64, loss: &LossModel) {
    for ((v, ui), gi) in state.v.iter_mut().zip(u).zip(g) {
        *v = ui - eta * gi;
    }
    loss.project(&mut state.v);
    let r = 1.0 / beta;
    for (w, v) in state.w.iter_mut().zip(&state.v) {
        *w = r * v + (1.0 - r) * *w;
    }
}

#[derive(Debug, Clone, PartialEq)]
enum State {
    Shared(SgdState),
    Krasulina(Vec<f64>),
    PerNode(Vec<SgdState>),
    Dgd(Vec<SgdState>),
    Accelerated(Vec<AcceleratedState>),
}

/// One trial's learner: iterates for every node plus the iteration count.
#[derive(Debug, Clone)]
pub struct Learner {
    config: LearnerConfig,
    loss: LossModel,
    network: Option<NetworkModel>,
    state: State,
    t: u64,
}

impl Learner {
    /// All nodes start from `w0`. `network` is required when the kind
    /// mixes over a graph with `N > 1` and `R > 0`.
    pub fn new(config: LearnerConfig, loss: LossModel, w0: Vec<f64>, network: Option<NetworkModel>) -> Result<Self> {
        config.schedule.validate()?;
        let kind = config.kind;
        let n = config.nodes;
        if n == 0 {
            return Err(Error::invalid("learner needs at least one node"));
        }
        if kind.is_centralized() && n != 1 {
            return Err(Error::invalid(format!("{kind:?} runs on a single node, got N = {n}")));
        }
        if kind.is_pca() != (loss.kind == crate::losses::LossKind::PcaKrasulina) {
            return Err(Error::invalid(format!("{kind:?} does not fit loss {:?}", loss.kind)));
        }
        if w0.len() != loss.param_dim() {
            return Err(Error::DimensionMismatch {
                expected: loss.param_dim(),
                got: w0.len(),
            });
        }
        if kind.is_pca() && crate::norm2(&w0) == 0.0 {
            return Err(Error::ZeroNorm);
        }
        let needs_graph = kind.uses_consensus() && n > 1 && config.rounds > 0;
        match (&network, needs_graph) {
            (None, true) => return Err(Error::invalid(format!("{kind:?} with N = {n} needs a network"))),
            (Some(net), true) if net.nodes() != n => {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: net.nodes(),
                })
            }
            _ => {}
        }
        if matches!(kind, AlgorithmKind::DgdNaive | AlgorithmKind::DgdMinibatch) && config.rounds == 0 && n > 1 {
            return Err(Error::invalid("DGD needs at least one consensus round"));
        }
        let has_average = matches!(
            kind,
            AlgorithmKind::Centralized | AlgorithmKind::Dmb | AlgorithmKind::Dsgd | AlgorithmKind::LocalSgd
        ) || matches!(kind, AlgorithmKind::DgdNaive | AlgorithmKind::DgdMinibatch);
        if config.iterate == IterateChoice::Averaged && !has_average {
            return Err(Error::invalid(format!("{kind:?} keeps no averaged iterate")));
        }
        let state = match kind {
            AlgorithmKind::Centralized | AlgorithmKind::Dmb => State::Shared(SgdState::new(w0)),
            AlgorithmKind::Krasulina | AlgorithmKind::DmKrasulina => State::Krasulina(w0),
            AlgorithmKind::Dsgd | AlgorithmKind::LocalSgd => State::PerNode(vec![SgdState::new(w0); n]),
            AlgorithmKind::DgdNaive | AlgorithmKind::DgdMinibatch => State::Dgd(vec![SgdState::new(w0); n]),
            AlgorithmKind::CentralizedAccelerated | AlgorithmKind::Adsgd | AlgorithmKind::LocalAsgd => {
                State::Accelerated(vec![AcceleratedState::new(w0); n])
            }
        };
        Ok(Self {
            config,
            loss,
            network: if needs_graph { network } else { None },
            state,
            t: 0,
        })
    }

    pub fn config(&self) -> &LearnerConfig {
        &self.config
    }

    pub fn iteration(&self) -> u64 {
        self.t
    }

    /// Last iterate of every node (one entry when the iterate is shared).
    pub fn iterates(&self) -> Vec<&[f64]> {
        match &self.state {
            State::Shared(s) => vec![&s.w],
            State::Krasulina(w) => vec![w],
            State::PerNode(s) | State::Dgd(s) => s.iter().map(|s| s.w.as_slice()).collect(),
            State::Accelerated(s) => s.iter().map(|s| s.w.as_slice()).collect(),
        }
    }

    /// Iterates that metrics are evaluated at, per the configured choice.
    pub fn evaluated(&self) -> Vec<&[f64]> {
        if self.config.iterate == IterateChoice::Last {
            return self.iterates();
        }
        match &self.state {
            State::Shared(s) => vec![&s.w_av],
            State::PerNode(s) | State::Dgd(s) => s.iter().map(|s| s.w_av.as_slice()).collect(),
            _ => self.iterates(),
        }
    }

    fn mix(&self, vecs: &mut NodeVectors) -> Result<()> {
        if let Some(net) = &self.network {
            let mut scratch = Vec::new();
            net.consensus_in_place(vecs, &mut scratch, self.config.rounds)?;
        }
        Ok(())
    }

    /// Advance one iteration using `batches[n]` as node `n`'s local batch.
    pub fn step(&mut self, batches: &[Vec<Sample>]) -> Result<()> {
        let n = self.config.nodes;
        if batches.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: batches.len(),
            });
        }
        let local = batches[0].len();
        if local == 0 || batches.iter().any(|b| b.len() != local) {
            return Err(Error::invalid("local batches must be nonempty and of equal size"));
        }
        self.t += 1;
        let t = self.t;
        let eta = self.config.schedule.eta(t);
        let loss = &self.loss;
        let mut state = std::mem::replace(&mut self.state, State::Krasulina(Vec::new()));
        let result = (|| -> Result<()> {
            match &mut state {
                State::Shared(s) => {
                    let grads = batches
                        .iter()
                        .map(|b| local_mean_gradient(loss, &s.w, b))
                        .collect::<Result<NodeVectors>>()?;
                    let g = exact_mean(&grads)?;
                    centralized_sgd_step(s, &g, eta, loss);
                }
                State::Krasulina(w) => {
                    let scale = match self.config.krasulina_scaling {
                        KrasulinaScaling::Sum => 1.0,
                        KrasulinaScaling::Mean => 1.0 / local as f64,
                    };
                    let dirs = batches
                        .iter()
                        .map(|b| {
                            let mut acc = vec![0.0; w.len()];
                            for z in b {
                                loss.accumulate_gradient(w, z, scale, &mut acc)?;
                            }
                            Ok(acc)
                        })
                        .collect::<Result<NodeVectors>>()?;
                    let xi = exact_mean(&dirs)?;
                    for (wi, x) in w.iter_mut().zip(&xi) {
                        *wi += eta * x;
                    }
                }
                State::PerNode(nodes) => {
                    let mut grads = nodes
                        .iter()
                        .zip(batches)
                        .map(|(s, b)| local_mean_gradient(loss, &s.w, b))
                        .collect::<Result<NodeVectors>>()?;
                    self.mix(&mut grads)?;
                    for (s, g) in nodes.iter_mut().zip(&grads) {
                        centralized_sgd_step(s, g, eta, loss);
                    }
                }
                State::Dgd(nodes) => {
                    let grads = nodes
                        .iter()
                        .zip(batches)
                        .map(|(s, b)| local_mean_gradient(loss, &s.w, b))
                        .collect::<Result<NodeVectors>>()?;
                    let mut mixed: NodeVectors = nodes.iter().map(|s| s.w.clone()).collect();
                    self.mix(&mut mixed)?;
                    for ((s, g), m) in nodes.iter_mut().zip(&grads).zip(mixed) {
                        s.w = m;
                        centralized_sgd_step(s, g, eta, loss);
                    }
                }
                State::Accelerated(nodes) => {
                    let beta = self.config.schedule.beta(t);
                    let lookahead: NodeVectors = nodes.iter().map(|s| s.lookahead(beta)).collect();
                    let mut grads = lookahead
                        .iter()
                        .zip(batches)
                        .map(|(u, b)| local_mean_gradient(loss, u, b))
                        .collect::<Result<NodeVectors>>()?;
                    self.mix(&mut grads)?;
                    for ((s, u), g) in nodes.iter_mut().zip(&lookahead).zip(&grads) {
                        accelerated_sgd_step(s, u, g, eta, beta, loss);
                    }
                }
            }
            Ok(())
        })();
        self.state = state;
        result
    }
}

fn local_mean_gradient(loss: &LossModel, w: &[f64], batch: &[Sample]) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; w.len()];
    for z in batch {
        loss.accumulate_gradient(w, z, 1.0, &mut acc)?;
    }
    let inv = 1.0 / batch.len() as f64;
    acc.iter_mut().for_each(|a| *a *= inv);
    Ok(acc)
}

/// Fetch the per-node local batches of iteration `t`.
pub fn gather_batches(plan: &SplitPlan, t: u64, source: &mut dyn SampleSource) -> Result<Vec<Vec<Sample>>> {
    (1..=plan.nodes)
        .map(|n| {
            (1..=plan.local_batch())
                .map(|b| source.fetch(plan.index(t, n, b)?))
                .collect()
        })
        .collect()
}

/// Metrics of one trial at one checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub t: u64,
    /// Samples that have arrived at the splitter, `t·(B + μ)`.
    pub t_prime: u64,
    pub sim_seconds: f64,
    /// Samples discarded so far, `t·μ`.
    pub discarded: u64,
    /// One value per evaluator metric, in order.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub plan: SplitPlan,
    pub iterations: u64,
    /// Simulated wall time per iteration.
    pub seconds_per_iteration: f64,
    /// Sorted iteration numbers at which to emit records.
    pub checkpoints: Vec<u64>,
}

/// Drive `learner` for `spec.iterations` iterations over `source`.
pub fn run(learner: &mut Learner, source: &mut dyn SampleSource, spec: &RunSpec, evaluator: &Evaluator) -> Result<Vec<RunRecord>> {
    if spec.plan.nodes != learner.config.nodes {
        return Err(Error::DimensionMismatch {
            expected: learner.config.nodes,
            got: spec.plan.nodes,
        });
    }
    let mut records = Vec::with_capacity(spec.checkpoints.len());
    let mut next = spec.checkpoints.iter().peekable();
    for t in 1..=spec.iterations {
        let batches = gather_batches(&spec.plan, t, source)?;
        learner.step(&batches)?;
        while next.peek().is_some_and(|&&c| c < t) {
            next.next();
        }
        if next.peek() == Some(&&t) {
            next.next();
            records.push(RunRecord {
                t,
                t_prime: t * spec.plan.block(),
                sim_seconds: t as f64 * spec.seconds_per_iteration,
                discarded: t * spec.plan.discarded as u64,
                values: evaluator.evaluate(&learner.evaluated())?,
            });
        }
    }
    Ok(records)
}

fn run_checked(
    allowed: &[AlgorithmKind],
    learner: &mut Learner,
    source: &mut dyn SampleSource,
    spec: &RunSpec,
    evaluator: &Evaluator,
) -> Result<Vec<RunRecord>> {
    if !allowed.contains(&learner.config.kind) {
        return Err(Error::invalid(format!("unexpected learner kind {:?}", learner.config.kind)));
    }
    run(learner, source, spec, evaluator)
}

pub fn run_dmb(learner: &mut Learner, source: &mut dyn SampleSource, spec: &RunSpec, evaluator: &Evaluator) -> Result<Vec<RunRecord>> {
    run_checked(&[AlgorithmKind::Dmb], learner, source, spec, evaluator)
}

pub fn run_dm_krasulina(
    learner: &mut Learner,
    source: &mut dyn SampleSource,
    spec: &RunSpec,
    evaluator: &Evaluator,
) -> Result<Vec<RunRecord>> {
    run_checked(&[AlgorithmKind::DmKrasulina], learner, source, spec, evaluator)
}

pub fn run_dsgd(learner: &mut Learner, source: &mut dyn SampleSource, spec: &RunSpec, evaluator: &Evaluator) -> Result<Vec<RunRecord>> {
    run_checked(&[AlgorithmKind::Dsgd], learner, source, spec, evaluator)
}

pub fn run_adsgd(learner: &mut Learner, source: &mut dyn SampleSource, spec: &RunSpec, evaluator: &Evaluator) -> Result<Vec<RunRecord>> {
    run_checked(&[AlgorithmKind::Adsgd], learner, source, spec, evaluator)
}

pub fn run_baseline(
    learner: &mut Learner,
    source: &mut dyn SampleSource,
    spec: &RunSpec,
    evaluator: &Evaluator,
) -> Result<Vec<RunRecord>> {
    run_checked(
        &[
            AlgorithmKind::LocalSgd,
            AlgorithmKind::LocalAsgd,
            AlgorithmKind::DgdNaive,
            AlgorithmKind::DgdMinibatch,
            AlgorithmKind::Centralized,
            AlgorithmKind::CentralizedAccelerated,
            AlgorithmKind::Krasulina,
        ],
        learner,
        source,
        spec,
        evaluator,
    )
}
