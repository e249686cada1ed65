//! `cliquedyn`: simulate, estimate and check the clique-averaging model.
//!
//! Exit codes: 0 success, 1 verification or run failure, 2 usage or
//! configuration error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use clique_dynamics::config::load_config;
use clique_dynamics::detect::{classify, frozen_nodes_check, Thresholds};
use clique_dynamics::dynamics::{default_window, simulate, CliquePolicy, ModelParams, OpinionVector, Recording};
use clique_dynamics::export::{save_estimates_csv, save_jsonl, save_sweep_csv, save_trajectory_csv, RunManifest};
use clique_dynamics::initial::{classify_region, membership_istar, sample_e_k0, IStar};
use clique_dynamics::montecarlo::{
    density_validation, estimate_probability, phase_sweep, run_trials, verdicts_of, Event, ExperimentConfig,
    SweepAxis,
};
use clique_dynamics::order::{quotient_partition, t_star, theorem3_limit, verify_lemma1_bounds, Lemma1Bound};
use clique_dynamics::{Error, InitialSpec, RngSpec};

#[derive(Parser)]
#[command(name = "cliquedyn", version)]
#[command(about = "Clique-averaging bounded-confidence opinion dynamics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one trajectory and write it as CSV
    Simulate(SimulateArgs),
    /// Estimate event probabilities over many trials
    Montecarlo(MontecarloArgs),
    /// Fluctuation and consensus frequencies over a grid of eta or delta
    Sweep(SweepArgs),
    /// Region label and fixed-set membership of an initial vector
    Classify(ClassifyArgs),
    /// Check closed forms and bounds against simulation or enumeration
    #[command(subcommand)]
    Verify(VerifyCommand),
    /// Compare order-statistic histograms with the exact density
    DensityCheck(DensityArgs),
}

#[derive(Args)]
struct ModelArgs {
    /// Number of nodes
    #[arg(long)]
    n: usize,
    /// Clique size (defaults to n)
    #[arg(long)]
    m: Option<usize>,
    /// Step size in (0, 1]
    #[arg(long)]
    delta: f64,
    /// Confidence bound
    #[arg(long)]
    eta: f64,
    /// Draw cliques that never contain the observing node
    #[arg(long)]
    exclude_self: bool,
}

impl ModelArgs {
    fn params(&self) -> Result<ModelParams, Error> {
        let p = ModelParams::new(self.n, self.m.unwrap_or(self.n), self.delta, self.eta)?;
        if self.exclude_self {
            p.with_policy(CliquePolicy::UniformExcludingSelf)
        } else {
            Ok(p)
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    horizon: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Initial opinions; uniform draws when omitted
    #[arg(long, value_delimiter = ',')]
    x0: Option<Vec<f64>>,
    #[arg(long)]
    out: PathBuf,
    /// Manifest file (defaults to <out>.manifest.jsonl)
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct Overrides {
    #[arg(long)]
    trials: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    horizon: Option<u64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    /// Worker threads (also read from CLIQUEDYN_THREADS)
    #[arg(long)]
    threads: Option<usize>,
}

impl Overrides {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(v) = self.trials {
            cfg.trials = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.horizon {
            cfg.horizon = v;
        }
        if let Some(v) = self.eta {
            cfg.params.eta = v;
        }
        if let Some(v) = self.delta {
            cfg.params.delta = v;
        }
        if self.threads.is_some() {
            cfg.parallelism = self.threads;
        }
    }
}

#[derive(Args)]
struct MontecarloArgs {
    /// TOML experiment file
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
    /// Estimates table
    #[arg(long, default_value = "estimates.csv")]
    out: PathBuf,
    /// Per-trial classification records (JSON lines)
    #[arg(long)]
    results: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    Eta,
    Delta,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum, default_value = "eta")]
    axis: Axis,
    #[arg(long, value_delimiter = ',', required = true)]
    grid: Vec<f64>,
    #[command(flatten)]
    overrides: Overrides,
    #[arg(long, default_value = "sweep.csv")]
    out: PathBuf,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct ClassifyArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    x0: Vec<f64>,
    #[arg(long)]
    eta: f64,
}

#[derive(Subcommand)]
enum VerifyCommand {
    /// Limit of the single node inside the band when m = n
    Theorem3(Theorem3Args),
    /// First time node 2 enters the band when m = n
    Tstar(TstarArgs),
    /// Nodes that never move over the horizon
    Frozen(FrozenArgs),
    /// Quotient-class gap and diameter bounds
    Lemma1(Lemma1Args),
}

#[derive(Args)]
struct Theorem3Args {
    /// Must match the length of --x0 when given
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, value_delimiter = ',', required = true)]
    x0: Vec<f64>,
    #[arg(long)]
    eta: f64,
    #[arg(long)]
    delta: f64,
    /// 1-based sorted position of the moving node; found automatically when omitted
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = 2000)]
    horizon: u64,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
}

#[derive(Args)]
struct TstarArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    x0: Vec<f64>,
    #[arg(long)]
    eta: f64,
    #[arg(long)]
    delta: f64,
}

#[derive(Args)]
struct FrozenArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Explicit initial state; otherwise K-1 zeros, a middle node and ones
    #[arg(long, value_delimiter = ',')]
    x0: Option<Vec<f64>>,
    /// Position of the middle node in the constructed state
    #[arg(long = "K")]
    big_k: Option<usize>,
    /// Half-width of the middle node's interval around 1/2
    #[arg(long, default_value_t = 0.1)]
    beta: f64,
    /// 1-based nodes expected to stay frozen (default: all but K)
    #[arg(long, value_delimiter = ',')]
    nodes: Option<Vec<usize>>,
    #[arg(long, default_value_t = 100_000)]
    horizon: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct Lemma1Args {
    #[arg(long, value_delimiter = ',', required = true)]
    x0: Vec<f64>,
    #[arg(long)]
    m: usize,
    /// 1-based pivot position
    #[arg(long)]
    s: usize,
    #[arg(long, default_value_t = 1e-12)]
    slack: f64,
}

#[derive(Args)]
struct DensityArgs {
    #[arg(long)]
    n: usize,
    /// 1-based order-statistic indices (one or two)
    #[arg(long, value_delimiter = ',', required = true)]
    indices: Vec<usize>,
    #[arg(long, default_value_t = 100_000)]
    samples: u64,
    #[arg(long, default_value_t = 20)]
    bins: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Largest acceptable mean bin error relative to the peak density
    #[arg(long, default_value_t = 0.05)]
    max_error: f64,
}

enum Outcome {
    Ok,
    Failed,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => run_simulate(a),
        Command::Montecarlo(a) => run_montecarlo(a),
        Command::Sweep(a) => run_sweep(a),
        Command::Classify(a) => run_classify(a),
        Command::Verify(v) => match v {
            VerifyCommand::Theorem3(a) => verify_theorem3(a),
            VerifyCommand::Tstar(a) => verify_tstar(a),
            VerifyCommand::Frozen(a) => verify_frozen(a),
            VerifyCommand::Lemma1(a) => verify_lemma1(a),
        },
        Command::DensityCheck(a) => run_density(a),
    };
    match result {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Failed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Trial { source, .. } => exit_code(source),
        Error::InvalidConfiguration(_)
        | Error::InvalidArgument(_)
        | Error::PreconditionViolation(_)
        | Error::CapacityExceeded { .. }
        | Error::ConfigParse(_)
        | Error::Io { .. } => 2,
        _ => 1,
    }
}

fn manifest_path(out: &Path, explicit: Option<PathBuf>) -> PathBuf {
    explicit.unwrap_or_else(|| out.with_extension("manifest.jsonl"))
}

fn verdict_line(label: &str, pass: bool) -> Outcome {
    println!("{label}: {}", if pass { "PASS" } else { "FAIL" });
    if pass {
        Outcome::Ok
    } else {
        Outcome::Failed
    }
}

fn run_simulate(a: SimulateArgs) -> Result<Outcome, Error> {
    let params = a.model.params()?;
    let spec = RngSpec::new(a.seed);
    let mut rng = spec.trial(0);
    let initial = match a.x0 {
        Some(values) => InitialSpec::Explicit { values },
        None => InitialSpec::Uniform,
    };
    let config = ExperimentConfig::new(params, initial, a.horizon, 1, a.seed);
    config.initial.validate(&params)?;
    let mut manifest = RunManifest::start("simulate", a.seed, Some(config.clone()));
    let x0 = config.initial.sample(&params, &mut rng)?;
    let traj = simulate(&params, &x0, a.horizon, &mut rng, Recording::Full)?;
    save_trajectory_csv(&traj, &a.out)?;
    manifest.record_output(&a.out);
    println!("wrote {} ({} rows)", a.out.display(), a.horizon + 1);
    if a.horizon >= 2 * default_window(a.horizon) {
        let r = classify(&traj, &Thresholds::defaults(&traj))?;
        println!("verdict: {}", r.verdict);
    }
    manifest.finish(&manifest_path(&a.out, a.manifest))?;
    Ok(Outcome::Ok)
}

fn load_with(path: &Path, overrides: &Overrides) -> Result<ExperimentConfig, Error> {
    let mut cfg = load_config(path)?;
    overrides.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

fn run_montecarlo(a: MontecarloArgs) -> Result<Outcome, Error> {
    let cfg = load_with(&a.config, &a.overrides)?;
    let mut manifest = RunManifest::start("montecarlo", cfg.seed, Some(cfg.clone()));
    let results = run_trials(&cfg)?;
    let verdicts = verdicts_of(&results);
    let mut rows = Vec::new();
    for event in [Event::Consensus, Event::Disagreement, Event::PartialAgreement, Event::Fluctuation] {
        match estimate_probability(&verdicts, event) {
            Ok(e) => {
                println!(
                    "{:<18} {:.4} [{:.4}, {:.4}]  ({} of {} determined trials, {} undetermined)",
                    e.event,
                    e.point,
                    e.lower,
                    e.upper,
                    e.successes,
                    e.successes + e.failures,
                    e.undetermined
                );
                rows.push(e);
            }
            Err(Error::DegenerateEstimate(msg)) => println!("{:<18} no estimate: {msg}", event.name()),
            Err(e) => return Err(e),
        }
    }
    save_estimates_csv(&rows, &a.out)?;
    manifest.record_output(&a.out);
    if let Some(path) = &a.results {
        save_jsonl(&results, path)?;
        manifest.record_output(path);
    }
    manifest.finish(&manifest_path(&a.out, a.manifest))?;
    Ok(Outcome::Ok)
}

fn run_sweep(a: SweepArgs) -> Result<Outcome, Error> {
    let cfg = load_with(&a.config, &a.overrides)?;
    let axis = match a.axis {
        Axis::Eta => SweepAxis::Eta,
        Axis::Delta => SweepAxis::Delta,
    };
    let mut manifest = RunManifest::start("sweep", cfg.seed, Some(cfg.clone()));
    let rows = phase_sweep(&cfg, axis, &a.grid)?;
    for r in &rows {
        println!(
            "{:.4}  fluctuation {:.4} [{:.4}, {:.4}]  consensus {:.4}  undetermined {}",
            r.value,
            r.fluctuation.point,
            r.fluctuation.lower,
            r.fluctuation.upper,
            r.consensus.point,
            r.fluctuation.undetermined
        );
    }
    save_sweep_csv(&rows, axis, &a.out)?;
    manifest.record_output(&a.out);
    manifest.finish(&manifest_path(&a.out, a.manifest))?;
    Ok(Outcome::Ok)
}

fn run_classify(a: ClassifyArgs) -> Result<Outcome, Error> {
    OpinionVector::new(a.x0.clone())?;
    if !(a.eta > 0.0) {
        return Err(Error::InvalidArgument(format!("eta must be positive, got {}", a.eta)));
    }
    let class = classify_region(&a.x0, a.eta);
    let order: Vec<String> = class.order.iter().map(|i| (i + 1).to_string()).collect();
    println!("region: {}", class.label);
    println!("layout: {}", order.join(","));
    for (name, which) in [("istar1", IStar::One), ("istar2", IStar::Two), ("istar3", IStar::Three)] {
        println!("{name}: {}", membership_istar(&a.x0, a.eta, which));
    }
    Ok(Outcome::Ok)
}

fn global_params(n: usize, delta: f64, eta: f64) -> Result<ModelParams, Error> {
    ModelParams::new(n, n, delta, eta)
}

fn verify_theorem3(a: Theorem3Args) -> Result<Outcome, Error> {
    let n = a.x0.len();
    if a.n.is_some_and(|v| v != n) {
        return Err(Error::InvalidArgument(format!("--n {} but --x0 has {n} entries", a.n.unwrap())));
    }
    let params = global_params(n, a.delta, a.eta)?;
    let x0 = OpinionVector::new(a.x0)?;
    let k = match a.k {
        Some(k) => k,
        None => {
            let mean = x0.mean();
            let stats = clique_dynamics::order::ordered_statistics(&x0.values);
            (1..=n)
                .find(|&p| (0.0..=a.eta).contains(&(mean - stats.at(p))))
                .ok_or_else(|| Error::PreconditionViolation("no node lies within eta below the mean".into()))?
        }
    };
    let limit = theorem3_limit(&x0, k, &params)?;
    let node = clique_dynamics::order::ordered_statistics(&x0.values).permutation[k - 1];
    let traj = simulate(&params, &x0, a.horizon, &mut RngSpec::new(0).trial(0), Recording::Full)?;
    let got = traj.last.values[node];
    let others_fixed = (0..n)
        .filter(|&i| i != node)
        .all(|i| traj.last.values[i].to_bits() == x0.values[i].to_bits());
    println!("moving node: {} (sorted position {k})", node + 1);
    println!("limit {limit:.6}");
    println!("simulated {got:.12} after {} steps, error {:.3e}", a.horizon, (got - limit).abs());
    println!("other nodes unchanged: {others_fixed}");
    Ok(verdict_line("theorem3", (got - limit).abs() <= a.tol && others_fixed))
}

fn verify_tstar(a: TstarArgs) -> Result<Outcome, Error> {
    let n = a.x0.len();
    let params = global_params(n, a.delta, a.eta)?;
    let x0 = OpinionVector::new(a.x0)?;
    let predicted = t_star(&x0, &params)?;
    let traj = simulate(&params, &x0, predicted + 1, &mut RngSpec::new(0).trial(0), Recording::Full)?;
    let observed = (0..=predicted + 1).find(|&t| {
        let x = traj.state(t).expect("full record");
        let mean = x.iter().sum::<f64>() / n as f64;
        x[1] - mean <= a.eta
    });
    println!("t* = {predicted}");
    match observed {
        Some(t) => println!("simulated first crossing at t = {t}"),
        None => println!("no crossing by t = {}", predicted + 1),
    }
    Ok(verdict_line("tstar", observed == Some(predicted)))
}

fn verify_frozen(a: FrozenArgs) -> Result<Outcome, Error> {
    let params = a.model.params()?;
    let n = params.n;
    let mut rng = RngSpec::new(a.seed).trial(0);
    let (x0, default_nodes) = match (&a.x0, a.big_k) {
        (Some(values), _) => (OpinionVector::new(values.clone())?, None),
        (None, Some(k)) => {
            let x = sample_e_k0(&params, k, a.beta, rng.initial_stream())?;
            (x, Some((1..=n).filter(|&i| i != k).collect::<Vec<_>>()))
        }
        (None, None) => return Err(Error::InvalidArgument("give --x0 or --K".into())),
    };
    let nodes = a
        .nodes
        .or(default_nodes)
        .ok_or_else(|| Error::InvalidArgument("--nodes is required with --x0".into()))?;
    if let Some(&bad) = nodes.iter().find(|&&i| i == 0 || i > n) {
        return Err(Error::InvalidArgument(format!("node {bad} outside 1..={n}")));
    }
    let ids: Vec<usize> = nodes.iter().map(|i| i - 1).collect();
    let recording = Recording::auto(a.horizon, default_window(a.horizon));
    let traj = simulate(&params, &x0, a.horizon, &mut rng, recording)?;
    let frozen = frozen_nodes_check(&traj, &ids)?;
    let moved: Vec<String> = traj
        .stats()
        .iter()
        .enumerate()
        .filter(|(i, s)| ids.contains(i) && s.last_change.is_some())
        .map(|(i, _)| (i + 1).to_string())
        .collect();
    println!("checked nodes {:?} over {} steps", nodes, a.horizon);
    if !moved.is_empty() {
        println!("moved: {}", moved.join(","));
    }
    Ok(verdict_line("frozen", frozen))
}

fn bound_name(b: Lemma1Bound) -> &'static str {
    match b {
        Lemma1Bound::GapLower => "gap >= beta_s/m",
        Lemma1Bound::GapUpper => "gap <= max(D[s-1,s], D[s,s+1])/m",
        Lemma1Bound::DiameterLower => "diameter >= min(D[1,s-1], D[s+1,n])/m",
        Lemma1Bound::DiameterUpper => "diameter <= alpha_s",
        Lemma1Bound::AdjacentLower => "adjacent gap >= min_i D[i,i+1]/m",
        Lemma1Bound::AdjacentUpper => "adjacent gap <= alpha_s/m",
    }
}

fn verify_lemma1(a: Lemma1Args) -> Result<Outcome, Error> {
    let mut x = a.x0.clone();
    x.sort_by(f64::total_cmp);
    let analysis = quotient_partition(&x, a.s, a.m)?;
    println!(
        "{} classes (K_s = {}), alpha_s = {:.6}, beta_s = {:.6}",
        analysis.realized_classes(),
        analysis.k_s,
        analysis.alpha_s,
        analysis.beta_s
    );
    let report = verify_lemma1_bounds(&analysis, a.slack);
    if !report.precondition_met {
        println!("alpha_s = 0: no bound checked");
        return Ok(verdict_line("lemma1", false));
    }
    for bound in Lemma1Bound::ALL {
        let checks: Vec<_> = report.checks.iter().filter(|c| c.bound == bound).collect();
        if checks.is_empty() {
            continue;
        }
        let failed = checks.iter().filter(|c| !c.passed).count();
        println!("  {:<40} {}/{} classes ok", bound_name(bound), checks.len() - failed, checks.len());
        for c in checks.iter().filter(|c| !c.passed) {
            println!("    class {}: value {:.6e}, limit {:.6e}", c.class + 1, c.value, c.limit);
        }
    }
    Ok(verdict_line("lemma1", report.all_passed()))
}

fn run_density(a: DensityArgs) -> Result<Outcome, Error> {
    let r = density_validation(a.n, &a.indices, a.samples, a.bins, a.seed)?;
    println!(
        "mean abs error {:.4e}, peak {:.4}, relative {:.4}, normalization {:.5}",
        r.mean_abs_error, r.peak, r.relative_error, r.normalization
    );
    Ok(verdict_line("density", r.relative_error < a.max_error))
}
