use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use pdsl::analysis::{convergence_bound, lr_window, min_rounds, TheoryConstants};
use pdsl::experiment::{load_config, run_experiment};
use pdsl::topology::{spectral_info, CommGraph, TopologyKind};

#[derive(Parser)]
#[command(name = "pdsl", version, about = "Private decentralized learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write per-round metrics as CSV.
    Run(RunArgs),
    /// Evaluate the learning-rate window, the convergence bound and the
    /// minimum round count for a set of constants.
    Analyze(AnalyzeArgs),
    /// Print a mixing matrix as CSV, with diagnostics on stderr.
    Topology(TopologyArgs),
}

#[derive(Args)]
#[command(allow_negative_numbers = true)]
struct RunArgs {
    /// key=value file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// synth or mnist
    #[arg(long)]
    dataset: Option<String>,
    /// Directory with the IDX files (dataset=mnist).
    #[arg(long)]
    mnist_dir: Option<PathBuf>,
    /// full, ring or bipartite
    #[arg(long)]
    topology: Option<String>,
    #[arg(long)]
    agents: Option<usize>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Dirichlet concentration of the data partition.
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    /// Clipping threshold (`inf` disables clipping; needs --sigma).
    #[arg(long)]
    clip: Option<f64>,
    /// Fixed noise level instead of calibrating it from the budget.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    phi_min: Option<f64>,
    /// exact or mc
    #[arg(long)]
    shapley: Option<String>,
    #[arg(long)]
    mc_permutations: Option<usize>,
    /// pdsl or dpsgd
    #[arg(long)]
    algo: Option<String>,
    /// softmax or mlp1
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Metrics CSV path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write a per-round Shapley audit CSV.
    #[arg(long)]
    shapley_out: Option<PathBuf>,
    /// Also write the shard assignment as CSV.
    #[arg(long)]
    shards_out: Option<PathBuf>,
    /// Evaluate agents on a single thread.
    #[arg(long)]
    serial: bool,
    /// Any other config key, as key=value. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    extra: Vec<String>,
}

impl RunArgs {
    fn overrides(&self) -> Result<Vec<(String, String)>> {
        let mut out = Vec::new();
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                out.push((k.to_string(), v));
            }
        };
        let s = |v: &Option<f64>| v.map(|x| x.to_string());
        let u = |v: &Option<usize>| v.map(|x| x.to_string());
        let p = |v: &Option<PathBuf>| v.as_ref().map(|x| x.display().to_string());
        put("dataset", self.dataset.clone());
        put("mnist_dir", p(&self.mnist_dir));
        put("topology", self.topology.clone());
        put("agents", u(&self.agents));
        put("rounds", u(&self.rounds));
        put("batch", u(&self.batch));
        put("alpha", s(&self.alpha));
        put("gamma", s(&self.gamma));
        put("mu", s(&self.mu));
        put("epsilon", s(&self.epsilon));
        put("delta", s(&self.delta));
        put("clip", s(&self.clip));
        put("sigma", s(&self.sigma));
        put("phi_min", s(&self.phi_min));
        put("shapley", self.shapley.clone());
        put("mc_permutations", u(&self.mc_permutations));
        put("algo", self.algo.clone());
        put("model", self.model.clone());
        put("seed", self.seed.map(|x| x.to_string()));
        put("out", p(&self.out));
        put("shapley_out", p(&self.shapley_out));
        put("shards_out", p(&self.shards_out));
        if self.serial {
            put("parallel", Some("false".into()));
        }
        for kv in &self.extra {
            let Some((k, v)) = kv.split_once('=') else {
                bail!("--set expects KEY=VALUE, got `{kv}`");
            };
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(out)
    }
}

#[derive(Args)]
#[command(allow_negative_numbers = true)]
struct AnalyzeArgs {
    /// Smoothness constant L.
    #[arg(long, default_value_t = 1.0)]
    l: f64,
    #[arg(long, default_value_t = 1.0)]
    zeta: f64,
    #[arg(long, default_value_t = 1.0)]
    kappa: f64,
    /// Spectral quantity of W; derived from --topology when omitted.
    #[arg(long)]
    rho: Option<f64>,
    /// Smallest nonzero mixing weight; derived from --topology when omitted.
    #[arg(long)]
    omega_min: Option<f64>,
    #[arg(long, default_value = "ring")]
    topology: TopologyKind,
    #[arg(long, default_value_t = 8)]
    agents: usize,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long, default_value_t = 0.001)]
    gamma: f64,
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    #[arg(long, default_value_t = 1.0)]
    clip: f64,
    /// Model dimension.
    #[arg(long, default_value_t = 33)]
    dim: usize,
    /// F(x_bar^0) - F*.
    #[arg(long, default_value_t = 1.0)]
    f_gap: f64,
    #[arg(long, default_value_t = 1000)]
    rounds: u64,
}

#[derive(Args)]
struct TopologyArgs {
    /// full, ring or bipartite
    #[arg(long, default_value = "ring")]
    kind: TopologyKind,
    #[arg(long, default_value_t = 8)]
    agents: usize,
    /// Write the matrix here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run(args: RunArgs) -> Result<()> {
    let cfg = load_config(args.config.as_deref(), &args.overrides()?)?;
    let summary = run_experiment(&cfg)
        .with_context(|| format!("run failed; partial metrics in {}", cfg.out.display()))?;
    let last = summary.metrics.last().expect("at least one round");
    println!(
        "{} rounds of {}: global loss {:.4}, test accuracy {:.4}, sigma {}",
        summary.metrics.len(),
        cfg.algo,
        last.global_loss,
        last.test_accuracy,
        summary.sigma
    );
    if !summary.rounds_below_floor.is_empty() {
        println!(
            "realized Shapley share below phi_min = {} in {} rounds",
            summary.phi_min,
            summary.rounds_below_floor.len()
        );
    }
    println!("metrics written to {}", cfg.out.display());
    Ok(())
}

fn analyze(args: AnalyzeArgs) -> Result<()> {
    let (rho, omega_min) = match (args.rho, args.omega_min) {
        (Some(r), Some(w)) => (r, w),
        (r, w) => {
            let g = CommGraph::build(args.topology, args.agents)?;
            (
                r.unwrap_or_else(|| spectral_info(&g).rho),
                w.unwrap_or_else(|| g.omega_min()),
            )
        }
    };
    let c = TheoryConstants {
        l: args.l,
        zeta: args.zeta,
        kappa: args.kappa,
        rho,
        alpha: args.alpha,
        gamma: args.gamma,
        sigma: args.sigma,
        clip_c: args.clip,
        d: args.dim,
        m: args.agents,
        omega_min,
        f_gap: args.f_gap,
    };
    println!("rho = {rho}, omega_min = {omega_min}");
    println!("learning-rate window: {}", lr_window(&c)?);
    match convergence_bound(&c, args.rounds) {
        Ok(b) => println!(
            "bound at T = {}: {} (transient {}, floor {})",
            args.rounds, b.total, b.transient, b.floor
        ),
        Err(e) => println!("bound at T = {}: {e}", args.rounds),
    }
    println!("minimum rounds: {}", min_rounds(&c));
    Ok(())
}

fn topology(args: TopologyArgs) -> Result<()> {
    let g = CommGraph::build(args.kind, args.agents)?;
    match &args.out {
        Some(p) => {
            let f = File::create(p).with_context(|| format!("cannot create {}", p.display()))?;
            g.write_csv(BufWriter::new(f))?;
        }
        None => g.write_csv(io::stdout().lock())?,
    }
    let mut err = io::stderr().lock();
    write!(err, "{}", g.validate())?;
    writeln!(err, "rho = {}", spectral_info(&g).rho)?;
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Run(a) => run(a),
        Command::Analyze(a) => analyze(a),
        Command::Topology(a) => topology(a),
    }
}
