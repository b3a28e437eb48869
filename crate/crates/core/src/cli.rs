//! Experiment harness: JSON config plus flag overrides, seeded parallel
//! sweeps, CSV/JSON output. Subcommands: simulate, scan-beta, check, mcmc,
//! selftest. Exit codes: 0 success, 1 validation error, 2 runtime failure,
//! 3 selftest failure.
//!
//! CSV rows are paired across the m grid: one set of configurations is
//! evaluated for every m, so p_hat(m) is monotone without extra noise.
//! For a fixed seed the output bytes are identical across runs and across
//! worker counts.

use crate::bounds;
use crate::error::{Error, Result};
use crate::links::ModelParams;
use crate::measure::{
    estimate_reach_profile, mcmc_reach_profile, quenched_reach_profile, InnerEstimator,
    McmcSchedule, Method, RatioEstimate,
};
use crate::trees::OffspringDistribution;
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

pub const CSV_HEADER: &str = "beta,theta,u,d_or_mu,n,m,method,p_hat,std_error,n_samples,seed";
pub const SCAN_CSV_HEADER: &str = "beta,theta,u,d_or_mu,n,m,method,p_hat,std_error,n_samples,seed,q_tilde,q_tilde_pow_m_minus_1,p_a_empty_upper,p_a_lower,long_loops_ok,decay_ok";

#[derive(Parser)]
#[command(name = "gwloops", version, about = "theta-weighted random loop models on trees")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate reach probabilities on a tree across the m grid.
    Simulate(RunArgs),
    /// Sweep a beta grid, joining estimates with the analytic columns.
    #[command(name = "scan-beta")]
    ScanBeta(RunArgs),
    /// Evaluate the long-loop and decay conditions as a JSON report.
    Check(CheckArgs),
    /// Simulate with the Metropolis sampler (method forced to mcmc).
    Mcmc(RunArgs),
    /// Run the built-in invariant suites.
    Selftest,
}

#[derive(Args, Clone, Default)]
pub struct RunArgs {
    /// JSON experiment config; flags override file values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Output path for the CSV (stdout when absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// Comma-separated beta grid.
    #[arg(long, value_delimiter = ',')]
    pub betas: Option<Vec<f64>>,
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub u: Option<f64>,
    /// Regular tree with d children per vertex.
    #[arg(long)]
    pub d: Option<u32>,
    /// Galton-Watson tree with Poisson(mu) offspring.
    #[arg(long)]
    pub mu: Option<f64>,
    /// Cut level (generations).
    #[arg(long)]
    pub n: Option<u32>,
    #[arg(long)]
    pub m: Option<u32>,
    /// Comma-separated m grid.
    #[arg(long, value_delimiter = ',')]
    pub ms: Option<Vec<u32>>,
    #[arg(long)]
    pub samples: Option<u64>,
    /// Galton-Watson realisations for quenched runs.
    #[arg(long)]
    pub trees: Option<u64>,
    /// importance | mcmc
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub burn_in: Option<u64>,
    #[arg(long)]
    pub thin: Option<u64>,
}

#[derive(Args, Clone, Default)]
pub struct CheckArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Deterministic offspring d.
    #[arg(long)]
    pub d: Option<u32>,
    /// Poisson offspring mean.
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// Use this epsilon for the long-loop conditions (searched when absent).
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Also search the least d with c_d < 1 for this q.
    #[arg(long)]
    pub q: Option<f64>,
    /// Window constants for the rescaled-offspring threshold search;
    /// requires a, b, c1, c2 together.
    #[arg(long)]
    pub a: Option<f64>,
    #[arg(long)]
    pub b: Option<f64>,
    #[arg(long)]
    pub c1: Option<f64>,
    #[arg(long)]
    pub c2: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    tree: Option<TreeSpec>,
    theta: Option<f64>,
    beta: Option<f64>,
    betas: Option<Vec<f64>>,
    u: Option<f64>,
    m: Option<u32>,
    ms: Option<Vec<u32>>,
    method: Option<String>,
    samples: Option<u64>,
    trees: Option<u64>,
    mcmc: Option<McmcConfig>,
    seed: Option<u64>,
    workers: Option<usize>,
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum TreeSpec {
    Regular { d: u32, n: u32 },
    Gw { offspring: OffspringDistribution, n: u32 },
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
struct McmcConfig {
    steps: u64,
    burn_in: u64,
    thin: u64,
}

/// Fully validated experiment description.
#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    pub tree: ResolvedTree,
    pub theta: f64,
    pub betas: Vec<f64>,
    pub u: f64,
    pub ms: Vec<u32>,
    pub method: Method,
    pub samples: u64,
    pub n_trees: u64,
    pub mcmc: McmcSchedule,
    pub seed: u64,
    pub workers: usize,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub enum ResolvedTree {
    Regular { d: u32, n: u32 },
    Gw { dist: OffspringDistribution, n: u32 },
}

impl ResolvedTree {
    pub fn cut_level(&self) -> u32 {
        match self {
            ResolvedTree::Regular { n, .. } => *n,
            ResolvedTree::Gw { n, .. } => *n,
        }
    }

    /// The d-or-mu CSV column: d for regular trees, the offspring mean for
    /// Galton-Watson trees.
    pub fn d_or_mean(&self) -> f64 {
        match self {
            ResolvedTree::Regular { d, .. } => *d as f64,
            ResolvedTree::Gw { dist, .. } => dist.mean(),
        }
    }

    /// Offspring law feeding the analytic columns (point mass at d for the
    /// regular tree).
    pub fn offspring(&self) -> OffspringDistribution {
        match self {
            ResolvedTree::Regular { d, .. } => OffspringDistribution::deterministic(*d),
            ResolvedTree::Gw { dist, .. } => dist.clone(),
        }
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidConfig(msg.into())
}

fn load_config_file(path: &PathBuf) -> Result<ConfigFile> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

/// Merge config file and flag overrides into a validated run description.
pub fn resolve(args: &RunArgs, force_method: Option<Method>) -> Result<ResolvedConfig> {
    let file = match &args.config {
        Some(p) => Some(load_config_file(p)?),
        None => None,
    };
    let f = file.as_ref();

    let tree = {
        let base = f.and_then(|f| f.tree.clone());
        match (args.d, args.mu) {
            (Some(_), Some(_)) => return Err(invalid("give either --d or --mu, not both")),
            (Some(d), None) => {
                let n = args.n.or(base.as_ref().map(tree_n)).ok_or_else(|| invalid("missing n"))?;
                ResolvedTree::Regular { d, n }
            }
            (None, Some(mu)) => {
                let n = args.n.or(base.as_ref().map(tree_n)).ok_or_else(|| invalid("missing n"))?;
                ResolvedTree::Gw { dist: OffspringDistribution::poisson(mu)?, n }
            }
            (None, None) => match base {
                Some(TreeSpec::Regular { d, n }) => {
                    ResolvedTree::Regular { d, n: args.n.unwrap_or(n) }
                }
                Some(TreeSpec::Gw { offspring, n }) => {
                    ResolvedTree::Gw { dist: offspring, n: args.n.unwrap_or(n) }
                }
                None => return Err(invalid("missing tree spec (config tree or --d/--mu with --n)")),
            },
        }
    };
    if let ResolvedTree::Regular { d, .. } = tree {
        if d < 1 {
            return Err(invalid("regular tree needs d >= 1"));
        }
    }

    let theta = args.theta.or(f.and_then(|f| f.theta)).ok_or_else(|| invalid("missing theta"))?;
    if !theta.is_finite() || theta < 1.0 {
        return Err(invalid(format!("theta must be >= 1, got {theta}")));
    }
    let betas = if let Some(b) = args.beta {
        vec![b]
    } else if let Some(bs) = &args.betas {
        bs.clone()
    } else if let Some(b) = f.and_then(|f| f.beta) {
        vec![b]
    } else if let Some(bs) = f.and_then(|f| f.betas.clone()) {
        bs
    } else {
        return Err(invalid("missing beta (or betas grid)"));
    };
    if betas.is_empty() {
        return Err(invalid("beta grid is empty"));
    }
    if betas.iter().any(|b| !b.is_finite() || *b < 0.0) {
        return Err(invalid("betas must be finite and >= 0"));
    }

    let u = args.u.or(f.and_then(|f| f.u)).unwrap_or(0.5);
    if !(0.0..=1.0).contains(&u) {
        return Err(invalid(format!("u must be in [0, 1], got {u}")));
    }

    let n = tree.cut_level();
    let ms = if let Some(m) = args.m {
        vec![m]
    } else if let Some(ms) = &args.ms {
        ms.clone()
    } else if let Some(m) = f.and_then(|f| f.m) {
        vec![m]
    } else if let Some(ms) = f.and_then(|f| f.ms.clone()) {
        ms
    } else {
        (0..=n).collect()
    };
    if ms.is_empty() {
        return Err(invalid("m grid is empty"));
    }
    if let Some(&m) = ms.iter().find(|&&m| m > n) {
        return Err(invalid(format!("m={m} exceeds the cut level n={n}")));
    }

    let method = match force_method {
        Some(m) => m,
        None => match args.method.as_deref().or(f.and_then(|f| f.method.as_deref())) {
            None | Some("importance") => Method::Importance,
            Some("mcmc") => Method::Mcmc,
            Some(other) => return Err(invalid(format!("unknown method '{other}'"))),
        },
    };

    let samples = args.samples.or(f.and_then(|f| f.samples)).unwrap_or(10_000);
    if samples < 2 {
        return Err(invalid("samples must be >= 2"));
    }
    let n_trees = args.trees.or(f.and_then(|f| f.trees)).unwrap_or(100);
    if n_trees < 1 {
        return Err(invalid("trees must be >= 1"));
    }

    let base_mcmc = f.and_then(|f| f.mcmc);
    let steps = args.steps.or(base_mcmc.map(|c| c.steps)).unwrap_or(200_000);
    let burn_in = args.burn_in.or(base_mcmc.map(|c| c.burn_in)).unwrap_or(steps / 10);
    let thin = args.thin.or(base_mcmc.map(|c| c.thin)).unwrap_or(10);
    let mcmc = McmcSchedule::new(steps, burn_in, thin)
        .map_err(|e| invalid(format!("bad mcmc schedule: {e}")))?;
    if mcmc.kept_states() < 4 {
        return Err(invalid("mcmc schedule keeps fewer than 4 states"));
    }

    let seed = args.seed.or(f.and_then(|f| f.seed)).ok_or_else(|| invalid("missing seed (no implicit entropy)"))?;
    let workers = args.workers.or(f.and_then(|f| f.workers)).unwrap_or(1);
    if workers < 1 {
        return Err(invalid("workers must be >= 1"));
    }
    let out = args.out.clone().or(f.and_then(|f| f.out.clone()));

    Ok(ResolvedConfig {
        tree,
        theta,
        betas,
        u,
        ms,
        method,
        samples,
        n_trees,
        mcmc,
        seed,
        workers,
        out,
    })
}

fn tree_n(spec: &TreeSpec) -> u32 {
    match spec {
        TreeSpec::Regular { n, .. } => *n,
        TreeSpec::Gw { n, .. } => *n,
    }
}

/// Paired estimates for one beta; exact degenerate answer at beta = 0
/// (no links can occur, so reach is the m = 0 indicator).
fn estimates_for_beta(cfg: &ResolvedConfig, beta: f64, beta_index: u64) -> Result<Vec<RatioEstimate>> {
    if beta == 0.0 {
        return Ok(cfg
            .ms
            .iter()
            .map(|&m| RatioEstimate {
                value: if m == 0 { 1.0 } else { 0.0 },
                raw_value: if m == 0 { 1.0 } else { 0.0 },
                numerator_sum: if m == 0 { 1.0 } else { 0.0 },
                denominator_sum: 1.0,
                n_samples: 0,
                std_error: 0.0,
                bootstrap_std_error: None,
                ess: 0.0,
                ess_warning: false,
                method: cfg.method,
            })
            .collect());
    }
    let params = ModelParams::new(cfg.theta, beta, cfg.u)?;
    let seed = crate::rng::mix_seed(cfg.seed, beta_index);
    match &cfg.tree {
        ResolvedTree::Regular { d, n } => {
            let tree = crate::trees::regular_tree(*d, *n)?;
            match cfg.method {
                Method::Importance => {
                    estimate_reach_profile(&tree, &params, &cfg.ms, cfg.samples, seed, cfg.workers)
                }
                Method::Mcmc => {
                    let (ests, _) = mcmc_reach_profile(&tree, &params, &cfg.mcmc, seed, &cfg.ms)?;
                    Ok(ests)
                }
            }
        }
        ResolvedTree::Gw { dist, n } => {
            let inner = match cfg.method {
                Method::Importance => InnerEstimator::Importance { n_samples: cfg.samples },
                Method::Mcmc => InnerEstimator::Mcmc(cfg.mcmc),
            };
            quenched_reach_profile(dist, *n, &cfg.ms, &params, cfg.n_trees, inner, seed, cfg.workers)
        }
    }
}

/// CSV of reach estimates over the beta and m grids.
pub fn cmd_simulate(cfg: &ResolvedConfig) -> Result<String> {
    let mut out = String::new();
    writeln!(out, "{CSV_HEADER}").unwrap();
    for (bi, &beta) in cfg.betas.iter().enumerate() {
        let ests = estimates_for_beta(cfg, beta, bi as u64)?;
        for (&m, est) in cfg.ms.iter().zip(&ests) {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                beta,
                cfg.theta,
                cfg.u,
                cfg.tree.d_or_mean(),
                cfg.tree.cut_level(),
                m,
                est.method,
                est.value,
                est.std_error,
                est.n_samples,
                cfg.seed
            )
            .unwrap();
        }
    }
    Ok(out)
}

/// CSV of estimates joined with the analytic columns (q_tilde, its powers,
/// the root-edge pattern bounds, and the condition verdicts).
pub fn cmd_scan_beta(cfg: &ResolvedConfig) -> Result<String> {
    if cfg.betas.windows(2).any(|w| w[0] > w[1]) {
        return Err(invalid("scan-beta needs a sorted beta grid"));
    }
    let offspring = cfg.tree.offspring();
    let d_mean = cfg.tree.d_or_mean();
    let mut out = String::new();
    writeln!(out, "{SCAN_CSV_HEADER}").unwrap();
    for (bi, &beta) in cfg.betas.iter().enumerate() {
        let ests = estimates_for_beta(cfg, beta, bi as u64)?;
        let qt = bounds::q_tilde(&offspring, cfg.theta, beta);
        let decay = qt < 1.0;
        let long_loops = bounds::find_epsilon(&offspring, cfg.theta, beta)
            .and_then(|eps| bounds::check_conditions(&offspring, cfg.theta, beta, eps).ok())
            .and_then(|r| r.long_loops)
            .unwrap_or(false);
        // Pattern-event bounds at the mean degree (exact for regular trees).
        let a_empty_upper = (-beta * d_mean / cfg.theta).exp();
        let t2 = cfg.theta * cfg.theta;
        let a_lower = ((t2 + beta * cfg.theta) / (t2 + (beta * cfg.theta).exp_m1())).powf(d_mean);
        for (&m, est) in cfg.ms.iter().zip(&ests) {
            let qt_pow = if m == 0 { f64::INFINITY } else { qt.powi(m as i32 - 1) };
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                beta,
                cfg.theta,
                cfg.u,
                d_mean,
                cfg.tree.cut_level(),
                m,
                est.method,
                est.value,
                est.std_error,
                est.n_samples,
                cfg.seed,
                qt,
                qt_pow,
                a_empty_upper,
                a_lower,
                long_loops,
                decay
            )
            .unwrap();
        }
    }
    Ok(out)
}

/// JSON condition report for an offspring law at (theta, beta), with the
/// optional integer searches merged in.
pub fn cmd_check(args: &CheckArgs) -> Result<String> {
    let file = match &args.config {
        Some(p) => Some(load_config_file(p)?),
        None => None,
    };
    let f = file.as_ref();
    let dist = match (args.d, args.mu) {
        (Some(_), Some(_)) => return Err(invalid("give either --d or --mu, not both")),
        (Some(d), None) => OffspringDistribution::deterministic(d),
        (None, Some(mu)) => OffspringDistribution::poisson(mu)?,
        (None, None) => match f.and_then(|f| f.tree.clone()) {
            Some(TreeSpec::Regular { d, .. }) => OffspringDistribution::deterministic(d),
            Some(TreeSpec::Gw { offspring, .. }) => offspring,
            None => return Err(invalid("missing offspring law (--d, --mu or config tree)")),
        },
    };
    let theta = args.theta.or(f.and_then(|f| f.theta)).ok_or_else(|| invalid("missing theta"))?;
    let beta = args.beta.or(f.and_then(|f| f.beta)).ok_or_else(|| invalid("missing beta"))?;
    if !theta.is_finite() || theta < 1.0 {
        return Err(invalid("theta must be >= 1"));
    }
    if !beta.is_finite() || beta < 0.0 {
        return Err(invalid("beta must be >= 0"));
    }

    let epsilon = args.epsilon.or_else(|| bounds::find_epsilon(&dist, theta, beta));
    let mut report = match epsilon {
        Some(eps) => bounds::check_conditions(&dist, theta, beta, eps)?,
        None => bounds::check_decay_condition(&dist, theta, beta),
    };
    if let Some(q) = args.q {
        let d0 = bounds::find_d0(q, theta)?;
        report.d0 = Some(d0.d0);
        report.c_d = Some(d0.c_d);
    }
    match (args.a, args.b, args.c1, args.c2) {
        (None, None, None, None) => {}
        (Some(a), Some(b), Some(c1), Some(c2)) => {
            let res = bounds::find_lambda0(&dist, a, b, c1, c2, theta)?;
            report.lambda0 = Some(res.lambda0);
            if report.epsilon.is_none() {
                report.epsilon = Some(res.epsilon);
            }
        }
        _ => return Err(invalid("the lambda0 search needs all of --a --b --c1 --c2")),
    }
    Ok(serde_json::to_string_pretty(&report)? + "\n")
}

/// One suite per module; a failure message names the broken invariant.
pub struct SelftestReport {
    pub results: Vec<(&'static str, std::result::Result<(), String>)>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|(_, r)| r.is_ok())
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (name, r) in &self.results {
            match r {
                Ok(()) => writeln!(out, "ok   {name}").unwrap(),
                Err(msg) => writeln!(out, "FAIL {name}: {msg}").unwrap(),
            }
        }
        writeln!(out, "{}", if self.passed() { "selftest: pass" } else { "selftest: FAIL" }).unwrap();
        out
    }
}

pub fn selftest() -> SelftestReport {
    let results = vec![
        ("trees", selftest_trees()),
        ("links", selftest_links()),
        ("loops", selftest_loops()),
        ("measure", selftest_measure()),
        ("bounds", selftest_bounds()),
    ];
    SelftestReport { results }
}

type SuiteResult = std::result::Result<(), String>;

fn check(cond: bool, msg: &str) -> SuiteResult {
    if cond {
        Ok(())
    } else {
        Err(msg.to_string())
    }
}

fn selftest_trees() -> SuiteResult {
    use crate::trees::*;
    let t = regular_tree(3, 3).map_err(|e| e.to_string())?;
    check(t.vertex_count() == 40, "regular(3,3) must have 40 vertices")?;
    let mut rng = crate::rng::derive_stream(1, 0);
    let gw = sample_gw_tree(&OffspringDistribution::deterministic(3), 3, &mut rng)
        .map_err(|e| e.to_string())?;
    check(gw.vertex_count() == 40, "deterministic offspring must match the regular tree")?;
    for v in 1..gw.vertex_count() as u32 {
        let p = gw.parent(v).unwrap();
        check(gw.generation(v) == gw.generation(p) + 1, "generation labels inconsistent")?;
    }
    let text = t.to_text();
    let back = Tree::from_text(&text).map_err(|e| e.to_string())?;
    check(back.vertex_count() == 40, "tree text round trip")?;
    Ok(())
}

fn selftest_links() -> SuiteResult {
    use crate::links::*;
    let tree = crate::trees::regular_tree(1, 1).unwrap();
    let params = ModelParams::new(1.0, 2.0, 0.5).unwrap();
    let mut rng = crate::rng::derive_stream(2, 0);
    let n = 40_000;
    let mut sum = 0.0;
    for _ in 0..n {
        sum += sample_links(&tree, &params, &mut rng).link_count(0) as f64;
    }
    let mean = sum / n as f64;
    let se = (2.0f64 / n as f64).sqrt();
    check((mean - 2.0).abs() <= 4.0 * se, "per-edge link count mean must be beta")?;
    let c = LinkConfig::empty(1);
    let c = c.with_inserted(0, Link { time: 0.5, kind: LinkKind::Cross }).unwrap();
    let c = c.with_inserted(0, Link { time: 0.2, kind: LinkKind::Bar }).unwrap();
    check(c.links(0)[0].time < c.links(0)[1].time, "insert must keep sortedness")?;
    let text = c.to_text();
    check(LinkConfig::from_text(&text, 1).unwrap() == c, "link text round trip")?;
    Ok(())
}

fn selftest_loops() -> SuiteResult {
    use crate::links::*;
    use crate::loops::*;
    let tree = crate::trees::regular_tree(1, 1).unwrap();
    for (k1, k2, want) in [
        (LinkKind::Cross, LinkKind::Cross, 2usize),
        (LinkKind::Bar, LinkKind::Bar, 2),
        (LinkKind::Cross, LinkKind::Bar, 1),
    ] {
        let mut c = LinkConfig::empty(1);
        c.with_inserted(0, Link { time: 0.2, kind: k1 })
            .and_then(|c2| c2.with_inserted(0, Link { time: 0.7, kind: k2 }))
            .map(|c2| c = c2)
            .map_err(|e| e.to_string())?;
        check(build_loops(&tree, &c).unwrap().loop_count() == want, "two-link kind table")?;
    }
    let tree = crate::trees::regular_tree(2, 3).unwrap();
    let params = ModelParams::new(2.0, 1.0, 0.5).unwrap();
    let mut rng = crate::rng::derive_stream(3, 0);
    let mut counter = LoopCounter::new();
    for _ in 0..500 {
        let c = sample_links(&tree, &params, &mut rng);
        let p = build_loops(&tree, &c).unwrap();
        if trace::count_loops(&tree, &c).unwrap() != p.loop_count() {
            return Err("tracer disagrees with union-find".into());
        }
        let stats = counter.count(&tree, &c);
        if stats.loop_count != p.loop_count() as u64 || stats.root_reach != p.root_reach() {
            return Err("fast counter disagrees with builder".into());
        }
        let r = check_prop1(&tree, &c).unwrap();
        if !r.holds {
            return Err("loop-count sandwich violated".into());
        }
    }
    Ok(())
}

fn selftest_measure() -> SuiteResult {
    use crate::measure::*;
    let tree = crate::trees::regular_tree(3, 1).unwrap();
    let params = ModelParams::new(1.0, 0.5, 0.5).unwrap();
    let est = estimate_reach_profile(&tree, &params, &[0, 1], 20_000, 5, 2).map_err(|e| e.to_string())?;
    check(est[0].value == 1.0, "reach 0 must be certain")?;
    let expected = 1.0 - (-1.5f64).exp();
    check(
        (est[1].value - expected).abs() <= 4.0 * est[1].std_error,
        "theta=1 reach-1 must match 1 - exp(-beta d)",
    )?;
    let a = estimate_reach_profile(&tree, &params, &[1], 8_192, 9, 1).unwrap();
    let b = estimate_reach_profile(&tree, &params, &[1], 8_192, 9, 2).unwrap();
    check(a[0].value.to_bits() == b[0].value.to_bits(), "estimates must not depend on workers")?;
    Ok(())
}

fn selftest_bounds() -> SuiteResult {
    use crate::bounds::*;
    let det = OffspringDistribution::deterministic(20);
    let qt = q_tilde(&det, 2.0, 0.05);
    check((qt - 0.5222425120319417).abs() < 1e-10, "frozen q_tilde value")?;
    check((c_d(1.0, 2.0, 20) - 0.5396276262936742).abs() < 1e-10, "frozen c_d value")?;
    let (lo, hi) = partition_bounds(3, 2.0, 0.5, &[2.0, 2.0, 2.0]);
    check((lo - 7.557864843856235).abs() < 1e-9 && (hi - 10.430255660721981).abs() < 1e-9, "frozen partition bounds")?;
    let mu = 5.0;
    let dist = OffspringDistribution::poisson(mu).unwrap();
    for &beta in &[0.01, 0.1, 0.5] {
        let closed = q_tilde(&dist, 2.0, beta);
        let c = (beta * 2.0f64).exp_m1() / 4.0;
        let direct = dist
            .expect(|k| {
                let k = k as f64;
                k * (-k * beta / 2.0).exp() * (1.0 + c).powf(k - 1.0)
            })
            .unwrap()
            * c;
        if (closed - direct).abs() / direct.abs().max(1e-300) > 1e-10 {
            return Err("poisson closed form vs truncated sum".into());
        }
    }
    check(q_tilde(&dist, 2.0, 0.05) < 1.0, "mu=5 beta=0.05 must be subcritical")?;
    Ok(())
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::InvalidConfig(_)
        | Error::InvalidParams(_)
        | Error::InvalidDistribution(_)
        | Error::InvalidSchedule(_)
        | Error::Parse(_) => 1,
        _ => 2,
    }
}

fn emit(text: &str, out: Option<&PathBuf>) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

/// Entry point of the gwloops binary.
pub fn run() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match cli.command {
        Command::Simulate(args) => resolve(&args, None)
            .and_then(|cfg| cmd_simulate(&cfg).map(|csv| (csv, cfg.out))),
        Command::ScanBeta(args) => resolve(&args, None)
            .and_then(|cfg| cmd_scan_beta(&cfg).map(|csv| (csv, cfg.out))),
        Command::Mcmc(args) => resolve(&args, Some(Method::Mcmc))
            .and_then(|cfg| cmd_simulate(&cfg).map(|csv| (csv, cfg.out))),
        Command::Check(args) => cmd_check(&args).map(|json| (json, args.out)),
        Command::Selftest => {
            let report = selftest();
            print!("{}", report.render());
            return if report.passed() { ExitCode::SUCCESS } else { ExitCode::from(3) };
        }
    };
    match outcome {
        Ok((text, out)) => match emit(&text, out.as_ref()) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
        },
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_args() -> RunArgs {
        RunArgs {
            seed: Some(42),
            theta: Some(2.0),
            beta: Some(0.5),
            d: Some(2),
            n: Some(2),
            samples: Some(2048),
            ..Default::default()
        }
    }

    #[test]
    fn resolve_requires_seed_and_tree() {
        let mut args = base_args();
        args.seed = None;
        assert!(matches!(resolve(&args, None), Err(Error::InvalidConfig(_))));
        let mut args = base_args();
        args.d = None;
        assert!(resolve(&args, None).is_err());
        let mut args = base_args();
        args.m = Some(5); // exceeds n = 2
        assert!(resolve(&args, None).is_err());
    }

    #[test]
    fn config_file_round_trip_and_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(
            &path,
            r#"{
                "tree": {"kind": "gw", "offspring": {"poisson": 2.5}, "n": 3},
                "theta": 1.5, "beta": 0.4, "u": 0.3,
                "ms": [0, 1, 2], "method": "importance",
                "samples": 512, "trees": 4, "seed": 7, "workers": 2
            }"#,
        )
        .unwrap();
        let args = RunArgs { config: Some(path.clone()), ..Default::default() };
        let cfg = resolve(&args, None).unwrap();
        assert!(matches!(cfg.tree, ResolvedTree::Gw { .. }));
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.ms, vec![0, 1, 2]);

        // Flags override file values.
        let args = RunArgs { config: Some(path), theta: Some(2.0), m: Some(1), ..Default::default() };
        let cfg = resolve(&args, None).unwrap();
        assert_eq!(cfg.theta, 2.0);
        assert_eq!(cfg.ms, vec![1]);
    }

    #[test]
    fn simulate_csv_shape_and_m0() {
        let cfg = resolve(&base_args(), None).unwrap();
        let csv = cmd_simulate(&cfg).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER);
        // m grid defaults to 0..=n; the m = 0 row estimates exactly 1.
        let first: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(first[5], "0");
        assert_eq!(first[7], "1");
        assert_eq!(csv.lines().count(), 1 + 3);
    }

    #[test]
    fn simulate_deterministic_across_runs_and_workers() {
        let mut args = base_args();
        args.workers = Some(1);
        let a = cmd_simulate(&resolve(&args, None).unwrap()).unwrap();
        args.workers = Some(4);
        let b = cmd_simulate(&resolve(&args, None).unwrap()).unwrap();
        let c = cmd_simulate(&resolve(&args, None).unwrap()).unwrap();
        assert_eq!(a, b);
        assert_eq!(b, c);
    }

    #[test]
    fn scan_beta_columns_and_zero_row() {
        let mut args = base_args();
        args.beta = None;
        args.betas = Some(vec![0.0, 0.25, 0.5]);
        args.m = Some(1);
        let cfg = resolve(&args, None).unwrap();
        let csv = cmd_scan_beta(&cfg).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), SCAN_CSV_HEADER);
        let zero: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(zero[0], "0");
        assert_eq!(zero[7], "0"); // p_hat(m=1) at beta = 0
        assert_eq!(zero[16], "true"); // decay condition trivially true (q_tilde = 0)

        // Unsorted grids are rejected.
        args.betas = Some(vec![0.5, 0.1]);
        let cfg = resolve(&args, None).unwrap();
        assert!(cmd_scan_beta(&cfg).is_err());
    }

    #[test]
    fn scan_beta_verdicts_flip_across_window() {
        // Large d: decay verdict below the window, long-loop verdict at
        // beta = 3/d (a = 3 > theta = 2).
        let d = 128u32;
        let args = RunArgs {
            seed: Some(1),
            theta: Some(2.0),
            betas: Some(vec![0.5 / d as f64, 3.0 / d as f64]),
            d: Some(d),
            n: Some(1),
            m: Some(1),
            samples: Some(256),
            ..Default::default()
        };
        let cfg = resolve(&args, None).unwrap();
        let csv = cmd_scan_beta(&cfg).unwrap();
        let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
        assert_eq!(rows[0][15], "false"); // long-loop conditions at subcritical beta
        assert_eq!(rows[0][16], "true"); // decay condition at subcritical beta
        assert_eq!(rows[1][15], "true"); // long-loop conditions inside the window
        assert_eq!(rows[1][16], "false"); // decay condition fails inside the window
    }

    #[test]
    fn methods_agree_at_theta_one() {
        // Same experiment through both estimator columns: the p_hat values
        // must agree within 3 combined standard errors.
        let mut args = RunArgs {
            seed: Some(11),
            theta: Some(1.0),
            beta: Some(0.5),
            d: Some(3),
            n: Some(3),
            m: Some(2),
            samples: Some(60_000),
            steps: Some(200_000),
            burn_in: Some(20_000),
            thin: Some(10),
            ..Default::default()
        };
        args.method = Some("importance".into());
        let a = cmd_simulate(&resolve(&args, None).unwrap()).unwrap();
        args.method = Some("mcmc".into());
        let b = cmd_simulate(&resolve(&args, None).unwrap()).unwrap();
        let row = |csv: &str| -> (f64, f64) {
            let cols: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
            (cols[7].parse().unwrap(), cols[8].parse().unwrap())
        };
        let (p_is, se_is) = row(&a);
        let (p_mc, se_mc) = row(&b);
        let se = (se_is * se_is + se_mc * se_mc).sqrt();
        assert!((p_is - p_mc).abs() <= 3.0 * se, "{p_is} vs {p_mc} (3se {})", 3.0 * se);
    }

    #[test]
    fn check_json_report() {
        let args = CheckArgs {
            mu: Some(5.0),
            theta: Some(2.0),
            beta: Some(0.05),
            q: Some(1.0),
            ..Default::default()
        };
        let json = cmd_check(&args).unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["decay"], serde_json::Value::Bool(true));
        assert!(v["q_tilde"].as_f64().unwrap() < 1.0);
        assert_eq!(v["d0"].as_u64().unwrap(), 3);

        // beta = 0: decay condition holds trivially.
        let args = CheckArgs { mu: Some(5.0), theta: Some(2.0), beta: Some(0.0), ..Default::default() };
        let json = cmd_check(&args).unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["decay"], serde_json::Value::Bool(true));
        assert_eq!(v["q_tilde"].as_f64().unwrap(), 0.0);
    }

    #[test]
    fn selftest_passes() {
        let report = selftest();
        assert!(report.passed(), "{}", report.render());
    }
}
