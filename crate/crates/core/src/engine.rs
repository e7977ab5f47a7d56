//! Round-synchronous simulation of the learning protocol.
//!
//! One call to [`pdsl_round`] runs a full communication round for every
//! agent. All reads go to the state at the start of the round and all
//! writes are committed together at the end, so executing agents on a
//! thread pool gives the same result as executing them in order. Every
//! random draw comes from a substream keyed by `(seed, agents, round)`.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use thiserror::Error;

use crate::data::LabeledDataset;
use crate::model::{axpy, ModelError, ModelSpec};
use crate::privacy::{clip_in_place, perturb_in_place, PrivacyError};
use crate::rng::{substream, Domain};
use crate::shapley::{self, CoalitionContext, Estimator, ShapleyError, ShapleyReport};
use crate::topology::CommGraph;

/// Tolerance for the network-average recursions checked after every round,
/// relative to the magnitude of the averaged quantities.
pub const MEAN_RECURSION_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid engine configuration: {0}")]
    Config(String),
    #[error("non-finite value in agent {agent} after {step}")]
    NonFinite { agent: usize, step: &'static str },
    #[error("network-average {quantity} recursion violated in round {round}: residual {residual:e}")]
    MeanRecursion {
        quantity: &'static str,
        round: usize,
        residual: f64,
    },
    #[error("training needs at least one round")]
    NoRounds,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Privacy(#[from] PrivacyError),
    #[error(transparent)]
    Shapley(#[from] ShapleyError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineConfig {
    /// Momentum coefficient.
    pub alpha: f64,
    /// Learning rate.
    pub gamma: f64,
    pub batch_size: usize,
    /// Clipping threshold, `+inf` disables clipping.
    pub clip_c: f64,
    /// Noise standard deviation, fixed for the run.
    pub sigma: f64,
    pub estimator: Estimator,
    pub exact_cap: usize,
    /// Rescale aggregation weights to sum to one.
    pub convex_weights: bool,
    pub seed: u64,
    /// Evaluate agents on the rayon pool.
    pub parallel: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            gamma: 0.05,
            batch_size: 32,
            clip_c: 1.0,
            sigma: 0.0,
            estimator: Estimator::Exact,
            exact_cap: shapley::DEFAULT_EXACT_CAP,
            convex_weights: false,
            seed: 0,
            parallel: true,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |msg: String| Err(EngineError::Config(msg));
        if !(0.0..1.0).contains(&self.alpha) {
            return bad(format!("alpha must lie in [0, 1), got {}", self.alpha));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma must be finite and nonnegative, got {}", self.gamma));
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        if !(self.clip_c > 0.0) {
            return bad(format!("clipping threshold must be positive, got {}", self.clip_c));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be finite and nonnegative, got {}", self.sigma));
        }
        if let Estimator::MonteCarlo { permutations: Some(0) } = self.estimator {
            return bad("Monte Carlo permutation count must be positive".into());
        }
        Ok(())
    }
}

/// Epoch-based sampling without replacement over an agent's shard.
#[derive(Debug, Clone, PartialEq)]
struct BatchSampler {
    order: Vec<usize>,
    pos: usize,
    epoch: u64,
}

impl BatchSampler {
    fn new(shard: &[usize]) -> Self {
        Self {
            order: shard.to_vec(),
            pos: shard.len(),
            epoch: 0,
        }
    }

    // Batches never straddle epochs; a short tail is dropped and the shard
    // reshuffled. Batches larger than the shard are capped at the shard size.
    fn next_batch(&mut self, seed: u64, agent: usize, size: usize) -> Vec<usize> {
        let size = size.min(self.order.len());
        if self.pos + size > self.order.len() {
            let mut rng = substream(seed, Domain::Batch, agent as u64, 0, self.epoch);
            self.order.shuffle(&mut rng);
            self.epoch += 1;
            self.pos = 0;
        }
        let batch = self.order[self.pos..self.pos + size].to_vec();
        self.pos += size;
        batch
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub id: usize,
    /// Model parameters.
    pub x: Vec<f64>,
    /// Momentum buffer.
    pub u: Vec<f64>,
    /// Indices into the training set.
    pub shard: Vec<usize>,
    sampler: BatchSampler,
}

impl AgentState {
    pub fn new(id: usize, x0: Vec<f64>, shard: Vec<usize>) -> Self {
        let d = x0.len();
        let sampler = BatchSampler::new(&shard);
        Self {
            id,
            x: x0,
            u: vec![0.0; d],
            shard,
            sampler,
        }
    }
}

/// Identical starting point for every agent, drawn from `N(0, std^2)`.
pub fn initial_params(dim: usize, std: f64, seed: u64) -> Vec<f64> {
    let mut rng = substream(seed, Domain::Init, 0, 0, 0);
    let normal = Normal::new(0.0, std).expect("finite std");
    (0..dim).map(|_| normal.sample(&mut rng)).collect()
}

/// A clipped-then-noised gradient computed by `source` on its own batch at
/// `target`'s model.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedGradient {
    pub source: usize,
    pub target: usize,
    pub round: usize,
    /// Norm before clipping.
    pub raw_norm: f64,
    /// Norm after clipping, before noise.
    pub clipped_norm: f64,
    pub value: Vec<f64>,
}

/// Residuals of the network-average identities
/// `u_bar = alpha * u_bar_prev + mean(g_bar)` and
/// `x_bar = x_bar_prev - gamma * u_bar`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanRecursion {
    pub momentum_residual: f64,
    pub params_residual: f64,
}

/// Everything exchanged and computed in one round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundArtifacts {
    pub round: usize,
    /// `received[i]` holds the gradients delivered to agent `i`, one per
    /// member of `M_i`, in neighbour order.
    pub received: Vec<Vec<PerturbedGradient>>,
    /// `candidates[i][k] = x_i - gamma * received[i][k].value`.
    pub candidates: Vec<Vec<Vec<f64>>>,
    pub reports: Vec<ShapleyReport>,
    /// Shapley-weighted aggregate gradient per agent.
    pub aggregated: Vec<Vec<f64>>,
    /// Momentum before mixing.
    pub momentum_pre_mix: Vec<Vec<f64>>,
    /// Parameters before mixing.
    pub params_pre_mix: Vec<Vec<f64>>,
    /// Loss of each agent's batch at its own model.
    pub batch_losses: Vec<f64>,
    pub mean_recursion: MeanRecursion,
}

impl RoundArtifacts {
    /// Pre-clip norm of each agent's gradient at its own model.
    pub fn local_grad_norms(&self) -> Vec<f64> {
        self.received
            .iter()
            .enumerate()
            .map(|(i, rs)| {
                rs.iter()
                    .find(|g| g.source == i)
                    .map_or(f64::NAN, |g| g.raw_norm)
            })
            .collect()
    }
}

fn map_agents<T, F>(parallel: bool, m: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    if parallel {
        (0..m).into_par_iter().map(f).collect()
    } else {
        (0..m).map(f).collect()
    }
}

fn ensure_finite(v: &[f64], agent: usize, step: &'static str) -> Result<(), EngineError> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(EngineError::NonFinite { agent, step })
    }
}

fn mean_of(vectors: impl Iterator<Item = impl AsRef<[f64]>>, dim: usize) -> Vec<f64> {
    let mut acc = vec![0.0; dim];
    let mut n = 0usize;
    for v in vectors {
        axpy(1.0, v.as_ref(), &mut acc);
        n += 1;
    }
    acc.iter_mut().for_each(|a| *a /= n as f64);
    acc
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().map(|x| x.abs()).fold(0.0, f64::max)
}

// Clipped and noised gradient of `source`'s batch at `params`.
#[allow(clippy::too_many_arguments)]
fn perturbed_gradient(
    spec: &ModelSpec,
    train: &LabeledDataset,
    batch: &[usize],
    params: &[f64],
    cfg: &EngineConfig,
    domain: Domain,
    source: usize,
    target: usize,
    round: usize,
) -> Result<(f64, PerturbedGradient), EngineError> {
    let (loss, mut g) = spec.loss_and_grad(params, train, batch)?;
    ensure_finite(&g, source, "gradient")?;
    let raw_norm = clip_in_place(&mut g, cfg.clip_c)?;
    let clipped_norm = crate::privacy::l2_norm(&g);
    let mut rng = substream(cfg.seed, domain, source as u64, target as u64, round as u64);
    perturb_in_place(&mut g, cfg.sigma, &mut rng);
    Ok((
        loss,
        PerturbedGradient {
            source,
            target,
            round,
            raw_norm,
            clipped_norm,
            value: g,
        },
    ))
}

/// One round of the Shapley-weighted private protocol for every agent.
///
/// Per agent `i`, using round-start state only:
/// 1. every `j` in `M_i` (including `i`) computes the gradient of its own
///    batch at `x_i`, clips it to `C` and adds `N(0, sigma^2 I)` noise;
/// 2. candidate models `x_i - gamma * g_hat_{j,i}` are scored by Shapley
///    value on the validation set, normalized and turned into weights
///    `pi_{i,j}`;
/// 3. `g_bar_i = sum_j pi_{i,j} g_hat_{j,i}`, `u_hat_i = alpha u_i + g_bar_i`,
///    `x_hat_i = x_i - gamma u_hat_i`;
/// 4. momentum and parameters are gossip-averaged with `W`.
#[allow(clippy::too_many_arguments)]
pub fn pdsl_round(
    agents: &mut [AgentState],
    graph: &CommGraph,
    spec: &ModelSpec,
    train: &LabeledDataset,
    validation: &LabeledDataset,
    cfg: &EngineConfig,
    round: usize,
) -> Result<RoundArtifacts, EngineError> {
    let m = agents.len();
    assert_eq!(m, graph.agents(), "agent count must match the graph");
    let d = spec.dim();

    let batches: Vec<Vec<usize>> = agents
        .iter_mut()
        .map(|a| a.sampler.next_batch(cfg.seed, a.id, cfg.batch_size))
        .collect();
    let snapshot: &[AgentState] = agents;

    // gradients delivered to each agent i, computed by its neighbours at x_i
    let received: Vec<Vec<(f64, PerturbedGradient)>> = map_agents(cfg.parallel, m, |i| {
        graph
            .neighbors(i)
            .iter()
            .map(|&j| {
                perturbed_gradient(
                    spec,
                    train,
                    &batches[j],
                    &snapshot[i].x,
                    cfg,
                    Domain::Noise,
                    j,
                    i,
                    round,
                )
            })
            .collect::<Result<Vec<_>, _>>()
    })
    .into_iter()
    .collect::<Result<_, _>>()?;

    struct Local {
        candidates: Vec<Vec<f64>>,
        report: ShapleyReport,
        aggregated: Vec<f64>,
        u_hat: Vec<f64>,
        x_hat: Vec<f64>,
    }

    let locals: Vec<Local> = map_agents(cfg.parallel, m, |i| -> Result<Local, EngineError> {
        let agent = &snapshot[i];
        let neighbors = graph.neighbors(i).to_vec();
        let candidates: Vec<Vec<f64>> = received[i]
            .iter()
            .map(|(_, g)| {
                let mut c = agent.x.clone();
                axpy(-cfg.gamma, &g.value, &mut c);
                c
            })
            .collect();
        for c in &candidates {
            ensure_finite(c, i, "candidate model")?;
        }
        let ctx = CoalitionContext::new(neighbors.clone(), candidates.clone(), validation, spec)?;
        let mut rng = substream(cfg.seed, Domain::Shapley, i as u64, 0, round as u64);
        let (raw, used) = shapley::estimate(&ctx, cfg.estimator, cfg.exact_cap, &mut rng)?;
        let omega: Vec<f64> = neighbors.iter().map(|&j| graph.weight(i, j)).collect();
        let report = ShapleyReport::from_raw(neighbors, raw, &omega, cfg.convex_weights, used);

        let mut aggregated = vec![0.0; d];
        for (pi, (_, g)) in report.weights.iter().zip(&received[i]) {
            axpy(*pi, &g.value, &mut aggregated);
        }
        ensure_finite(&aggregated, i, "aggregation")?;
        let mut u_hat = aggregated.clone();
        axpy(cfg.alpha, &agent.u, &mut u_hat);
        let mut x_hat = agent.x.clone();
        axpy(-cfg.gamma, &u_hat, &mut x_hat);
        ensure_finite(&x_hat, i, "local update")?;
        Ok(Local {
            candidates,
            report,
            aggregated,
            u_hat,
            x_hat,
        })
    })
    .into_iter()
    .collect::<Result<_, _>>()?;

    let u_bar_prev = mean_of(snapshot.iter().map(|a| &a.u), d);
    let x_bar_prev = mean_of(snapshot.iter().map(|a| &a.x), d);

    // gossip, committed at the barrier
    let mixed: Vec<(Vec<f64>, Vec<f64>)> = map_agents(cfg.parallel, m, |i| {
        let mut u = vec![0.0; d];
        let mut x = vec![0.0; d];
        for &j in graph.neighbors(i) {
            let w = graph.weight(i, j);
            axpy(w, &locals[j].u_hat, &mut u);
            axpy(w, &locals[j].x_hat, &mut x);
        }
        (u, x)
    });
    for (i, (agent, (u, x))) in agents.iter_mut().zip(mixed).enumerate() {
        ensure_finite(&x, i, "gossip")?;
        agent.u = u;
        agent.x = x;
    }

    let u_bar = mean_of(agents.iter().map(|a| &a.u), d);
    let x_bar = mean_of(agents.iter().map(|a| &a.x), d);
    let g_bar = mean_of(locals.iter().map(|l| &l.aggregated), d);
    let mut u_expected = g_bar;
    axpy(cfg.alpha, &u_bar_prev, &mut u_expected);
    let mut x_expected = x_bar_prev;
    axpy(-cfg.gamma, &u_bar, &mut x_expected);
    let mean_recursion = MeanRecursion {
        momentum_residual: max_abs_diff(&u_bar, &u_expected),
        params_residual: max_abs_diff(&x_bar, &x_expected),
    };
    let u_scale = 1.0 + max_abs(&u_bar).max(max_abs(&u_expected));
    let x_scale = 1.0 + max_abs(&x_bar).max(max_abs(&x_expected));
    if mean_recursion.momentum_residual > MEAN_RECURSION_TOL * u_scale {
        return Err(EngineError::MeanRecursion {
            quantity: "momentum",
            round,
            residual: mean_recursion.momentum_residual,
        });
    }
    if mean_recursion.params_residual > MEAN_RECURSION_TOL * x_scale {
        return Err(EngineError::MeanRecursion {
            quantity: "parameter",
            round,
            residual: mean_recursion.params_residual,
        });
    }

    let mut artifacts = RoundArtifacts {
        round,
        received: Vec::with_capacity(m),
        candidates: Vec::with_capacity(m),
        reports: Vec::with_capacity(m),
        aggregated: Vec::with_capacity(m),
        momentum_pre_mix: Vec::with_capacity(m),
        params_pre_mix: Vec::with_capacity(m),
        batch_losses: Vec::with_capacity(m),
        mean_recursion,
    };
    for (i, (rs, local)) in received.into_iter().zip(locals).enumerate() {
        let own = rs.iter().find(|(_, g)| g.source == i).map_or(f64::NAN, |(l, _)| *l);
        artifacts.batch_losses.push(own);
        artifacts.received.push(rs.into_iter().map(|(_, g)| g).collect());
        artifacts.candidates.push(local.candidates);
        artifacts.reports.push(local.report);
        artifacts.aggregated.push(local.aggregated);
        artifacts.momentum_pre_mix.push(local.u_hat);
        artifacts.params_pre_mix.push(local.x_hat);
    }
    Ok(artifacts)
}

/// Output of one baseline round.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineArtifacts {
    pub round: usize,
    /// Each agent's own perturbed gradient.
    pub gradients: Vec<PerturbedGradient>,
    pub batch_losses: Vec<f64>,
}

impl BaselineArtifacts {
    pub fn local_grad_norms(&self) -> Vec<f64> {
        self.gradients.iter().map(|g| g.raw_norm).collect()
    }
}

/// Decentralized DP-SGD baseline: `x_i <- sum_j omega_ij x_j - gamma * g_hat_ii`
/// with the same clipping and noise as the main protocol.
#[allow(clippy::too_many_arguments)]
pub fn dpsgd_round(
    agents: &mut [AgentState],
    graph: &CommGraph,
    spec: &ModelSpec,
    train: &LabeledDataset,
    cfg: &EngineConfig,
    round: usize,
) -> Result<BaselineArtifacts, EngineError> {
    let m = agents.len();
    assert_eq!(m, graph.agents(), "agent count must match the graph");
    let d = spec.dim();
    let batches: Vec<Vec<usize>> = agents
        .iter_mut()
        .map(|a| a.sampler.next_batch(cfg.seed, a.id, cfg.batch_size))
        .collect();
    let snapshot: &[AgentState] = agents;

    let results: Vec<(f64, PerturbedGradient, Vec<f64>)> = map_agents(cfg.parallel, m, |i| {
        let (loss, g) = perturbed_gradient(
            spec,
            train,
            &batches[i],
            &snapshot[i].x,
            cfg,
            Domain::BaselineNoise,
            i,
            i,
            round,
        )?;
        let mut x = vec![0.0; d];
        for &j in graph.neighbors(i) {
            axpy(graph.weight(i, j), &snapshot[j].x, &mut x);
        }
        axpy(-cfg.gamma, &g.value, &mut x);
        ensure_finite(&x, i, "baseline update")?;
        Ok::<_, EngineError>((loss, g, x))
    })
    .into_iter()
    .collect::<Result<_, _>>()?;

    let mut gradients = Vec::with_capacity(m);
    let mut batch_losses = Vec::with_capacity(m);
    for (agent, (loss, g, x)) in agents.iter_mut().zip(results) {
        agent.x = x;
        gradients.push(g);
        batch_losses.push(loss);
    }
    Ok(BaselineArtifacts {
        round,
        gradients,
        batch_losses,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Pdsl,
    DpDpsgd,
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Algorithm::Pdsl => "pdsl",
            Algorithm::DpDpsgd => "dpsgd",
        })
    }
}

/// Per-round summary written to the metrics CSV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundMetrics {
    pub round: usize,
    /// Loss of the network-average model on the full training pool.
    pub global_loss: f64,
    /// Mean over agents of each model's loss on its own shard.
    pub avg_local_loss: f64,
    /// Accuracy of the network-average model on the held-out test data.
    pub test_accuracy: f64,
    /// Mean pre-clip norm of the agents' own stochastic gradients.
    pub mean_grad_norm: f64,
    /// Smallest realized normalized Shapley share; NaN for the baseline.
    pub min_phi_share: f64,
    pub sigma_used: f64,
}

/// Everything needed to run a simulation.
#[derive(Debug, Clone)]
pub struct TrainingSetup {
    pub graph: CommGraph,
    pub spec: ModelSpec,
    pub train: LabeledDataset,
    pub shards: Vec<Vec<usize>>,
    pub validation: LabeledDataset,
    pub test: LabeledDataset,
    pub config: EngineConfig,
    pub algorithm: Algorithm,
    /// Configured share floor used for calibration, if any.
    pub phi_min: Option<f64>,
    /// Standard deviation of the common initial point.
    pub init_std: f64,
}

/// A running simulation: setup plus mutable agent state.
#[derive(Debug, Clone)]
pub struct Simulation {
    setup: TrainingSetup,
    agents: Vec<AgentState>,
    round: usize,
    floor_violations: usize,
}

impl Simulation {
    pub fn new(setup: TrainingSetup) -> Result<Self, EngineError> {
        setup.config.validate()?;
        if setup.shards.len() != setup.graph.agents() {
            return Err(EngineError::Config(format!(
                "{} shards for {} agents",
                setup.shards.len(),
                setup.graph.agents()
            )));
        }
        if let Some(i) = setup.shards.iter().position(Vec::is_empty) {
            return Err(EngineError::Config(format!("agent {i} has an empty shard")));
        }
        let x0 = initial_params(setup.spec.dim(), setup.init_std, setup.config.seed);
        let agents = setup
            .shards
            .iter()
            .enumerate()
            .map(|(i, s)| AgentState::new(i, x0.clone(), s.clone()))
            .collect();
        Ok(Self {
            setup,
            agents,
            round: 0,
            floor_violations: 0,
        })
    }

    pub fn agents(&self) -> &[AgentState] {
        &self.agents
    }

    pub fn setup(&self) -> &TrainingSetup {
        &self.setup
    }

    /// Rounds in which the realized minimum share fell below the configured floor.
    pub fn floor_violations(&self) -> usize {
        self.floor_violations
    }

    pub fn mean_params(&self) -> Vec<f64> {
        mean_of(self.agents.iter().map(|a| &a.x), self.setup.spec.dim())
    }

    /// Runs one PDSL round and returns its raw artifacts.
    pub fn pdsl_step(&mut self) -> Result<RoundArtifacts, EngineError> {
        self.round += 1;
        let s = &self.setup;
        pdsl_round(
            &mut self.agents,
            &s.graph,
            &s.spec,
            &s.train,
            &s.validation,
            &s.config,
            self.round,
        )
    }

    /// Runs one baseline round and returns its raw artifacts.
    pub fn baseline_step(&mut self) -> Result<BaselineArtifacts, EngineError> {
        self.round += 1;
        let s = &self.setup;
        dpsgd_round(&mut self.agents, &s.graph, &s.spec, &s.train, &s.config, self.round)
    }

    /// Runs one round of the configured algorithm and summarizes it.
    pub fn step(&mut self) -> Result<(RoundMetrics, Option<RoundArtifacts>), EngineError> {
        let (grad_norms, min_share, artifacts) = match self.setup.algorithm {
            Algorithm::Pdsl => {
                let art = self.pdsl_step()?;
                let share = art
                    .reports
                    .iter()
                    .map(ShapleyReport::min_share)
                    .fold(f64::INFINITY, f64::min);
                if let Some(floor) = self.setup.phi_min {
                    if share < floor {
                        self.floor_violations += 1;
                        log::debug!(
                            "round {}: realized share {share} below configured floor {floor}",
                            self.round
                        );
                    }
                }
                (art.local_grad_norms(), share, Some(art))
            }
            Algorithm::DpDpsgd => {
                let art = self.baseline_step()?;
                (art.local_grad_norms(), f64::NAN, None)
            }
        };
        let metrics = self.metrics(&grad_norms, min_share)?;
        Ok((metrics, artifacts))
    }

    fn metrics(&self, grad_norms: &[f64], min_phi_share: f64) -> Result<RoundMetrics, EngineError> {
        let s = &self.setup;
        let x_bar = self.mean_params();
        let global_loss = s.spec.full_loss(&x_bar, &s.train)?;
        let mut local = 0.0;
        for a in &self.agents {
            local += s.spec.loss(&a.x, &s.train, &a.shard)?;
        }
        Ok(RoundMetrics {
            round: self.round,
            global_loss,
            avg_local_loss: local / self.agents.len() as f64,
            test_accuracy: s.spec.accuracy(&x_bar, &s.test)?,
            mean_grad_norm: grad_norms.iter().sum::<f64>() / grad_norms.len() as f64,
            min_phi_share,
            sigma_used: s.config.sigma,
        })
    }

    /// Runs `rounds` rounds, collecting one metrics row per round.
    pub fn run_training(&mut self, rounds: usize) -> Result<Vec<RoundMetrics>, EngineError> {
        if rounds == 0 {
            return Err(EngineError::NoRounds);
        }
        let mut out = Vec::with_capacity(rounds);
        for _ in 0..rounds {
            out.push(self.step()?.0);
        }
        if self.floor_violations > 0 {
            if let Some(floor) = self.setup.phi_min {
                log::warn!(
                    "realized minimum Shapley share fell below the configured floor {floor} in {} of {} rounds",
                    self.floor_violations,
                    self.round
                );
            }
        }
        Ok(out)
    }
}
