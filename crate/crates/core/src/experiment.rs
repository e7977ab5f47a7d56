//! Run configuration, the end-to-end experiment pipeline and CSV output.
//!
//! Both algorithms consume randomness identically up to the first round:
//! data generation, the validation split, the Dirichlet partition and the
//! initial point depend only on the seed, so a `pdsl` run and a `dpsgd`
//! run with the same seed start from the same shards and the same `x`.

use std::fmt;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::data::{
    dirichlet_partition, load_idx, make_validation_split, synth_classification, DataError,
    LabeledDataset, PartitionResult,
};
use crate::engine::{
    Algorithm, EngineConfig, EngineError, RoundArtifacts, Simulation, TrainingSetup,
};
pub use crate::engine::RoundMetrics;
use crate::model::{ModelKind, ModelSpec};
use crate::privacy::{calibrate_sigma, DpBudget, PrivacyError};
use crate::rng::{substream, Domain};
use crate::shapley::{Estimator, DEFAULT_EXACT_CAP};
use crate::topology::{CommGraph, TopologyError, TopologyKind};

/// Header of the per-round metrics CSV.
pub const METRICS_HEADER: [&str; 7] = [
    "round",
    "global_loss",
    "avg_local_loss",
    "test_accuracy",
    "mean_grad_norm",
    "min_phi_share",
    "sigma_used",
];

const AUDIT_HEADER: [&str; 8] = [
    "round",
    "agent",
    "neighbor",
    "raw",
    "normalized",
    "weight",
    "estimator",
    "clipped_norm",
];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown configuration key `{key}`")]
    UnknownKey { key: String },
    #[error("value `{value}` for `{key}` is out of range: {expected}")]
    OutOfRange {
        key: String,
        value: String,
        expected: String,
    },
    #[error("missing required key `{key}`: {reason}")]
    MissingRequired { key: String, reason: String },
    #[error("cannot parse `{value}` for `{key}`: {reason}")]
    Parse {
        key: String,
        value: String,
        reason: String,
    },
    #[error("line {line}: expected `key = value`, got `{content}`")]
    Syntax { line: usize, content: String },
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Privacy(#[from] PrivacyError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("csv output failed: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Synth,
    Mnist,
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetKind::Synth => "synth",
            DatasetKind::Mnist => "mnist",
        })
    }
}

impl FromStr for DatasetKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "synth" => Ok(Self::Synth),
            "mnist" => Ok(Self::Mnist),
            _ => Err("expected synth or mnist".into()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapleyMode {
    Exact,
    Mc,
}

impl FromStr for ShapleyMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exact" => Ok(Self::Exact),
            "mc" => Ok(Self::Mc),
            _ => Err("expected exact or mc".into()),
        }
    }
}

impl FromStr for Algorithm {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pdsl" => Ok(Self::Pdsl),
            "dpsgd" | "dp-dpsgd" => Ok(Self::DpDpsgd),
            _ => Err("expected pdsl or dpsgd".into()),
        }
    }
}

/// A fully validated experiment description.
///
/// Defaults: synthetic 3-class data in 10 dimensions (3000 training and
/// 1000 test samples, class means 3 apart), softmax model, ring of 8
/// agents, 100 rounds, batch 32, `alpha = 0.5`, `gamma = 0.05`,
/// `mu = 0.25`, `epsilon = 1`, `delta = 1e-5`, `C = 1`, calibrated sigma,
/// share floor `1 / max_i |M_i|`, exact Shapley values, 20% of the test
/// data as the validation set, seed 0, output `metrics.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: DatasetKind,
    /// Directory holding the four standard IDX files.
    pub mnist_dir: Option<PathBuf>,
    pub synth_classes: usize,
    pub synth_dim: usize,
    pub synth_train: usize,
    pub synth_test: usize,
    pub synth_separation: f64,
    pub model: ModelKind,
    pub hidden: usize,
    pub topology: TopologyKind,
    pub agents: usize,
    pub rounds: usize,
    pub batch: usize,
    pub alpha: f64,
    pub gamma: f64,
    pub mu: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub clip: f64,
    /// Fixed noise level; calibrated from the budget when absent.
    pub sigma: Option<f64>,
    /// Share floor for calibration; `1 / max_i |M_i|` when absent.
    pub phi_min: Option<f64>,
    pub shapley: ShapleyMode,
    /// Monte Carlo permutations; `4 |M_i|` when absent.
    pub mc_permutations: Option<usize>,
    pub exact_cap: usize,
    pub convex_weights: bool,
    pub validation_fraction: f64,
    pub init_std: f64,
    pub algo: Algorithm,
    pub seed: u64,
    pub parallel: bool,
    pub out: PathBuf,
    /// Optional per-round Shapley audit CSV.
    pub shapley_out: Option<PathBuf>,
    /// Optional `index,agent` shard assignment CSV.
    pub shards_out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetKind::Synth,
            mnist_dir: None,
            synth_classes: 3,
            synth_dim: 10,
            synth_train: 3000,
            synth_test: 1000,
            synth_separation: 3.0,
            model: ModelKind::SoftmaxRegression,
            hidden: 32,
            topology: TopologyKind::Ring,
            agents: 8,
            rounds: 100,
            batch: 32,
            alpha: 0.5,
            gamma: 0.05,
            mu: 0.25,
            epsilon: 1.0,
            delta: 1e-5,
            clip: 1.0,
            sigma: None,
            phi_min: None,
            shapley: ShapleyMode::Exact,
            mc_permutations: None,
            exact_cap: DEFAULT_EXACT_CAP,
            convex_weights: false,
            validation_fraction: 0.2,
            init_std: 0.01,
            algo: Algorithm::Pdsl,
            seed: 0,
            parallel: true,
            out: PathBuf::from("metrics.csv"),
            shapley_out: None,
            shards_out: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::Parse {
        key: key.into(),
        value: value.into(),
        reason: e.to_string(),
    })
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(ConfigError::Parse {
            key: key.into(),
            value: value.into(),
            reason: "expected true or false".into(),
        }),
    }
}

// `none` clears an optional setting
fn parse_opt<T: FromStr>(key: &str, value: &str) -> Result<Option<T>, ConfigError>
where
    T::Err: fmt::Display,
{
    if value == "none" || value.is_empty() {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn out_of_range(key: &str, value: impl fmt::Display, expected: &str) -> ConfigError {
    ConfigError::OutOfRange {
        key: key.into(),
        value: value.to_string(),
        expected: expected.into(),
    }
}

/// Splits a config file into `(key, value)` pairs. Blank lines and
/// everything after `#` are ignored.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut pairs = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line: n + 1,
            content: raw.to_string(),
        })?;
        let k = k.trim();
        if k.is_empty() {
            return Err(ConfigError::Syntax {
                line: n + 1,
                content: raw.to_string(),
            });
        }
        pairs.push((k.to_string(), v.trim().to_string()));
    }
    Ok(pairs)
}

impl RunConfig {
    /// Applies one setting. Keys accept `-` or `_` as separators.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let norm = key.trim().replace('-', "_");
        let k = norm.as_str();
        match k {
            "dataset" => self.dataset = parse(k, value)?,
            "mnist_dir" => self.mnist_dir = parse_opt(k, value)?,
            "synth_classes" => self.synth_classes = parse(k, value)?,
            "synth_dim" => self.synth_dim = parse(k, value)?,
            "synth_train" => self.synth_train = parse(k, value)?,
            "synth_test" => self.synth_test = parse(k, value)?,
            "synth_separation" => self.synth_separation = parse(k, value)?,
            "model" => self.model = parse(k, value)?,
            "hidden" => self.hidden = parse(k, value)?,
            "topology" => self.topology = parse(k, value)?,
            "agents" => self.agents = parse(k, value)?,
            "rounds" => self.rounds = parse(k, value)?,
            "batch" => self.batch = parse(k, value)?,
            "alpha" => self.alpha = parse(k, value)?,
            "gamma" => self.gamma = parse(k, value)?,
            "mu" => self.mu = parse(k, value)?,
            "epsilon" => self.epsilon = parse(k, value)?,
            "delta" => self.delta = parse(k, value)?,
            "clip" => self.clip = parse(k, value)?,
            "sigma" => self.sigma = parse_opt(k, value)?,
            "phi_min" => self.phi_min = parse_opt(k, value)?,
            "shapley" => self.shapley = parse(k, value)?,
            "mc_permutations" => self.mc_permutations = parse_opt(k, value)?,
            "exact_cap" => self.exact_cap = parse(k, value)?,
            "convex_weights" => self.convex_weights = parse_bool(k, value)?,
            "validation_fraction" => self.validation_fraction = parse(k, value)?,
            "init_std" => self.init_std = parse(k, value)?,
            "algo" => self.algo = parse(k, value)?,
            "seed" => self.seed = parse(k, value)?,
            "parallel" => self.parallel = parse_bool(k, value)?,
            "out" => self.out = parse(k, value)?,
            "shapley_out" => self.shapley_out = parse_opt(k, value)?,
            "shards_out" => self.shards_out = parse_opt(k, value)?,
            _ => return Err(ConfigError::UnknownKey { key: key.to_string() }),
        }
        Ok(())
    }

    /// Checks every range; called by [`load_config`].
    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = |key: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(out_of_range(key, v, "must be positive and finite"))
            }
        };
        let at_least = |key: &str, v: usize, min: usize| {
            if v >= min {
                Ok(())
            } else {
                Err(out_of_range(key, v, &format!("must be at least {min}")))
            }
        };
        if self.dataset == DatasetKind::Mnist && self.mnist_dir.is_none() {
            return Err(ConfigError::MissingRequired {
                key: "mnist_dir".into(),
                reason: "dataset = mnist reads the IDX files from this directory".into(),
            });
        }
        at_least("synth_classes", self.synth_classes, 2)?;
        at_least("synth_dim", self.synth_dim, 1)?;
        at_least("synth_train", self.synth_train, 1)?;
        at_least("synth_test", self.synth_test, 2)?;
        if !(self.synth_separation >= 0.0 && self.synth_separation.is_finite()) {
            return Err(out_of_range(
                "synth_separation",
                self.synth_separation,
                "must be finite and nonnegative",
            ));
        }
        at_least("hidden", self.hidden, 1)?;
        at_least("agents", self.agents, 1)?;
        at_least("rounds", self.rounds, 1)?;
        at_least("batch", self.batch, 1)?;
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(out_of_range("alpha", self.alpha, "must lie in [0, 1)"));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(out_of_range("gamma", self.gamma, "must be finite and nonnegative"));
        }
        positive("mu", self.mu)?;
        positive("epsilon", self.epsilon)?;
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(out_of_range("delta", self.delta, "must lie in (0, 1)"));
        }
        if !(self.clip > 0.0) {
            return Err(out_of_range("clip", self.clip, "must be positive (inf disables clipping)"));
        }
        if let Some(s) = self.sigma {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(out_of_range("sigma", s, "must be finite and nonnegative"));
            }
        } else if !self.clip.is_finite() {
            return Err(out_of_range(
                "clip",
                self.clip,
                "calibrating sigma needs a finite clipping threshold",
            ));
        }
        if let Some(p) = self.phi_min {
            if !(p > 0.0 && p <= 1.0) {
                return Err(out_of_range("phi_min", p, "must lie in (0, 1]"));
            }
        }
        if let Some(r) = self.mc_permutations {
            at_least("mc_permutations", r, 1)?;
        }
        at_least("exact_cap", self.exact_cap, 1)?;
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(out_of_range(
                "validation_fraction",
                self.validation_fraction,
                "must lie in (0, 1)",
            ));
        }
        if !(self.init_std >= 0.0 && self.init_std.is_finite()) {
            return Err(out_of_range("init_std", self.init_std, "must be finite and nonnegative"));
        }
        Ok(())
    }

    fn estimator(&self) -> Estimator {
        match self.shapley {
            ShapleyMode::Exact => Estimator::Exact,
            ShapleyMode::Mc => Estimator::MonteCarlo {
                permutations: self.mc_permutations,
            },
        }
    }
}

/// Builds a config from defaults, then an optional file, then `overrides`
/// (later settings win), and validates the result.
pub fn load_config(
    path: Option<&Path>,
    overrides: &[(String, String)],
) -> Result<RunConfig, ConfigError> {
    let mut cfg = RunConfig::default();
    if let Some(p) = path {
        let text = fs::read_to_string(p).map_err(|source| ConfigError::Io {
            path: p.display().to_string(),
            source,
        })?;
        for (k, v) in parse_config_text(&text)? {
            cfg.set(&k, &v)?;
        }
    }
    for (k, v) in overrides {
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Everything derived from a config before the first round.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub setup: TrainingSetup,
    pub partition: PartitionResult,
    pub phi_min: f64,
}

fn load_data(cfg: &RunConfig) -> Result<(LabeledDataset, LabeledDataset), ExperimentError> {
    match cfg.dataset {
        DatasetKind::Synth => {
            let gen = |n, stream| {
                synth_classification(
                    cfg.synth_classes,
                    cfg.synth_dim,
                    n,
                    cfg.synth_separation,
                    &mut substream(cfg.seed, Domain::Synth, stream, 0, 0),
                )
            };
            Ok((gen(cfg.synth_train, 0)?, gen(cfg.synth_test, 1)?))
        }
        DatasetKind::Mnist => {
            let dir = cfg.mnist_dir.as_ref().expect("validated");
            let train = load_idx(
                dir.join("train-images-idx3-ubyte"),
                dir.join("train-labels-idx1-ubyte"),
            )?;
            let test = load_idx(
                dir.join("t10k-images-idx3-ubyte"),
                dir.join("t10k-labels-idx1-ubyte"),
            )?;
            Ok((train, test))
        }
    }
}

/// Loads data, splits, partitions and calibrates without running anything.
pub fn prepare(cfg: &RunConfig) -> Result<Prepared, ExperimentError> {
    cfg.validate()?;
    let (train, test) = load_data(cfg)?;
    let split = make_validation_split(
        &test,
        cfg.validation_fraction,
        &mut substream(cfg.seed, Domain::Split, 0, 0, 0),
    )?;
    let partition = dirichlet_partition(
        &train,
        cfg.agents,
        cfg.mu,
        &mut substream(cfg.seed, Domain::Partition, 0, 0, 0),
    )?;
    let graph = CommGraph::build(cfg.topology, cfg.agents)?;
    let phi_min = cfg.phi_min.unwrap_or_else(|| DpBudget::default_phi_min(&graph));
    let sigma = match cfg.sigma {
        Some(s) => s,
        None => calibrate_sigma(
            &graph,
            &DpBudget {
                epsilon: cfg.epsilon,
                delta: cfg.delta,
                clip_c: cfg.clip,
                phi_min,
            },
        )?,
    };
    let classes = train.classes().max(test.classes());
    let spec = match cfg.model {
        ModelKind::SoftmaxRegression => ModelSpec::softmax(train.dim(), classes),
        ModelKind::Mlp1 => ModelSpec::mlp1(train.dim(), cfg.hidden, classes),
    };
    let config = EngineConfig {
        alpha: cfg.alpha,
        gamma: cfg.gamma,
        batch_size: cfg.batch,
        clip_c: cfg.clip,
        sigma,
        estimator: cfg.estimator(),
        exact_cap: cfg.exact_cap,
        convex_weights: cfg.convex_weights,
        seed: cfg.seed,
        parallel: cfg.parallel,
    };
    let setup = TrainingSetup {
        graph,
        spec,
        train,
        shards: partition.shards.clone(),
        validation: split.validation,
        test: split.remainder,
        config,
        algorithm: cfg.algo,
        phi_min: Some(phi_min),
        init_std: cfg.init_std,
    };
    Ok(Prepared {
        setup,
        partition,
        phi_min,
    })
}

/// Summary returned by a finished run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSummary {
    pub metrics: Vec<RoundMetrics>,
    pub sigma: f64,
    pub phi_min: f64,
    /// Rounds whose realized minimum share fell below `phi_min`.
    pub rounds_below_floor: Vec<usize>,
}

/// Rounds whose realized minimum Shapley share is below `floor`.
pub fn rounds_below_floor(metrics: &[RoundMetrics], floor: f64) -> Vec<usize> {
    metrics
        .iter()
        .filter(|m| m.min_phi_share < floor)
        .map(|m| m.round)
        .collect()
}

fn metrics_record(m: &RoundMetrics) -> [String; 7] {
    [
        m.round.to_string(),
        m.global_loss.to_string(),
        m.avg_local_loss.to_string(),
        m.test_accuracy.to_string(),
        m.mean_grad_norm.to_string(),
        m.min_phi_share.to_string(),
        m.sigma_used.to_string(),
    ]
}

fn write_audit<W: Write>(wtr: &mut csv::Writer<W>, art: &RoundArtifacts) -> csv::Result<()> {
    for (i, r) in art.reports.iter().enumerate() {
        for (k, &j) in r.neighbors.iter().enumerate() {
            wtr.write_record([
                art.round.to_string(),
                i.to_string(),
                j.to_string(),
                r.raw[k].to_string(),
                r.normalized[k].to_string(),
                r.weights[k].to_string(),
                r.estimator.to_string(),
                art.received[i][k].clipped_norm.to_string(),
            ])?;
        }
    }
    Ok(())
}

/// Runs the configured experiment, streaming metrics rows to `out` and,
/// if given, Shapley audit rows to `audit`.
///
/// On failure the rows written so far are kept and a `# error: ...`
/// comment line is appended before the error is returned.
pub fn run_to_writers<W: Write, A: Write>(
    cfg: &RunConfig,
    out: W,
    audit: Option<A>,
) -> Result<ExperimentSummary, ExperimentError> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(METRICS_HEADER)?;
    let mut audit = audit.map(csv::Writer::from_writer);
    if let Some(a) = audit.as_mut() {
        a.write_record(AUDIT_HEADER)?;
    }

    let mut metrics = Vec::with_capacity(cfg.rounds);
    let result = (|| -> Result<(f64, f64), ExperimentError> {
        let prepared = prepare(cfg)?;
        let sigma = prepared.setup.config.sigma;
        if let Some(path) = &cfg.shards_out {
            let f = File::create(path).map_err(|source| ExperimentError::Io {
                path: path.display().to_string(),
                source,
            })?;
            prepared.partition.write_csv(BufWriter::new(f))?;
        }
        log::info!(
            "{} on {} agents ({}), sigma = {sigma}, phi_min = {}",
            cfg.algo,
            cfg.agents,
            cfg.topology,
            prepared.phi_min
        );
        let mut sim = Simulation::new(prepared.setup)?;
        for _ in 0..cfg.rounds {
            let (m, art) = sim.step()?;
            wtr.write_record(metrics_record(&m))?;
            if let (Some(a), Some(art)) = (audit.as_mut(), art.as_ref()) {
                write_audit(a, art)?;
            }
            metrics.push(m);
        }
        if sim.floor_violations() > 0 {
            log::warn!(
                "realized minimum Shapley share fell below the configured floor {} in {} of {} rounds",
                prepared.phi_min,
                sim.floor_violations(),
                cfg.rounds
            );
        }
        Ok((sigma, prepared.phi_min))
    })();

    let io_err = |source: io::Error| ExperimentError::Io {
        path: cfg.out.display().to_string(),
        source,
    };
    if let Some(mut a) = audit {
        a.flush().map_err(io_err)?;
    }
    match result {
        Ok((sigma, phi_min)) => {
            wtr.flush().map_err(io_err)?;
            let rounds_below_floor = match cfg.algo {
                Algorithm::Pdsl => rounds_below_floor(&metrics, phi_min),
                Algorithm::DpDpsgd => Vec::new(),
            };
            Ok(ExperimentSummary {
                metrics,
                sigma,
                phi_min,
                rounds_below_floor,
            })
        }
        Err(e) => {
            let mut inner = wtr.into_inner().map_err(|e| io_err(e.into_error()))?;
            writeln!(inner, "# error: {e}").map_err(io_err)?;
            inner.flush().map_err(io_err)?;
            Err(e)
        }
    }
}

/// Runs the configured experiment and writes `cfg.out` (and the optional
/// audit and shard files).
pub fn run_experiment(cfg: &RunConfig) -> Result<ExperimentSummary, ExperimentError> {
    let create = |p: &Path| {
        File::create(p).map(BufWriter::new).map_err(|source| ExperimentError::Io {
            path: p.display().to_string(),
            source,
        })
    };
    let out = create(&cfg.out)?;
    let audit = cfg.shapley_out.as_deref().map(create).transpose()?;
    run_to_writers(cfg, out, audit)
}
