//! Estimators for the theta-weighted measure: the probability of an event B
//! is E[1_B theta^L] / E[theta^L] under the raw link law, estimated either
//! by reweighting independent draws (importance sampling) or by a
//! grand-canonical Metropolis chain. The quenched variant averages the
//! per-tree estimate over Galton-Watson realisations.
//!
//! Reproducibility: work is split into fixed-size blocks regardless of the
//! worker count; block b draws from the derived stream (seed, b) and block
//! partials are merged in block order. Estimates are therefore identical
//! bit for bit across runs and across worker counts.
//!
//! Weights are handled in integer-shifted form: with L0 the largest loop
//! count seen, every weight is theta^(L - L0) <= 1, which keeps ratios
//! exact for theta = 1 and overflow-free everywhere else.

use crate::error::{Error, Result};
use crate::links::{resample_links_into, LinkConfig, ModelParams};
use crate::loops::{build_loops, LoopCounter, LoopPartition};
use crate::rng::{derive_stream, mix_seed, uniform_time};
use crate::trees::{sample_gw_tree, OffspringDistribution, Tree};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

/// Samples per deterministic work block. Fixed so results do not depend on
/// the worker count.
const BLOCK_SIZE: u64 = 1024;

/// Derived-stream tag for bootstrap resampling (blocks use 0..n_blocks).
const BOOTSTRAP_STREAM: u64 = u64::MAX;

pub const DEFAULT_BOOTSTRAP_RESAMPLES: u32 = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Importance,
    Mcmc,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Method::Importance => write!(f, "importance"),
            Method::Mcmc => write!(f, "mcmc"),
        }
    }
}

/// Ratio estimate of a weighted probability with its standard error.
///
/// `value` is clamped to [0, 1]; `raw_value` is the unclamped ratio
/// `numerator_sum / denominator_sum` (sums are in the internal shifted
/// weight scale, so only their ratio is meaningful).
#[derive(Debug, Clone, Serialize)]
pub struct RatioEstimate {
    pub value: f64,
    pub raw_value: f64,
    pub numerator_sum: f64,
    pub denominator_sum: f64,
    pub n_samples: u64,
    pub std_error: f64,
    /// Block-bootstrap cross-check of `std_error` (importance only).
    pub bootstrap_std_error: Option<f64>,
    /// Effective sample size of the weights.
    pub ess: f64,
    /// Set when ess < 1% of n_samples: the estimate is weight-dominated.
    pub ess_warning: bool,
    pub method: Method,
}

/// Machine-readable record of one estimate, tied to the seed that
/// produced it.
#[derive(Debug, Clone, Serialize)]
pub struct ResultRecord {
    pub value: f64,
    pub std_error: f64,
    pub n_samples: u64,
    pub method: Method,
    pub seed: u64,
}

impl RatioEstimate {
    pub fn record(&self, seed: u64) -> ResultRecord {
        ResultRecord {
            value: self.value,
            std_error: self.std_error,
            n_samples: self.n_samples,
            method: self.method,
            seed,
        }
    }
}

/// Running sums of one block, in the theta^(L - shift) scale.
#[derive(Clone)]
struct BlockSums {
    shift: i64,
    started: bool,
    count: u64,
    b: f64,
    b2: f64,
    a: Vec<f64>,
    /// Per event: sum of 1_B w^2 (equals both sum a^2 and sum a*b for
    /// indicator numerators).
    ab2: Vec<f64>,
}

impl BlockSums {
    fn new(n_events: usize) -> BlockSums {
        BlockSums {
            shift: 0,
            started: false,
            count: 0,
            b: 0.0,
            b2: 0.0,
            a: vec![0.0; n_events],
            ab2: vec![0.0; n_events],
        }
    }

    fn rescale(&mut self, theta: f64, new_shift: i64) {
        let r = theta.powi((self.shift - new_shift) as i32);
        self.b *= r;
        self.b2 *= r * r;
        for v in self.a.iter_mut() {
            *v *= r;
        }
        for v in self.ab2.iter_mut() {
            *v *= r * r;
        }
        self.shift = new_shift;
    }

    fn push(&mut self, theta: f64, loop_count: u64, flags: &[bool]) {
        let l = loop_count as i64;
        if !self.started {
            self.started = true;
            self.shift = l;
        } else if l > self.shift {
            self.rescale(theta, l);
        }
        let w = theta.powi((l - self.shift) as i32);
        self.count += 1;
        self.b += w;
        self.b2 += w * w;
        for (i, &hit) in flags.iter().enumerate() {
            if hit {
                self.a[i] += w;
                self.ab2[i] += w * w;
            }
        }
    }

    fn merge(&mut self, theta: f64, mut other: BlockSums) {
        if !other.started {
            return;
        }
        if !self.started {
            *self = other;
            return;
        }
        let shift = self.shift.max(other.shift);
        self.rescale(theta, shift);
        other.rescale(theta, shift);
        self.count += other.count;
        self.b += other.b;
        self.b2 += other.b2;
        for (x, y) in self.a.iter_mut().zip(&other.a) {
            *x += y;
        }
        for (x, y) in self.ab2.iter_mut().zip(&other.ab2) {
            *x += y;
        }
    }
}

fn run_pool<T: Send>(workers: usize, job: impl FnOnce() -> T + Send) -> T {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .expect("worker pool");
    pool.install(job)
}

/// Draw `n_samples` configurations in deterministic blocks, evaluating
/// `eval(config, counter, flags) -> L` per sample.
fn importance_run<E>(
    tree: &Tree,
    params: &ModelParams,
    n_samples: u64,
    seed: u64,
    workers: usize,
    n_events: usize,
    eval: E,
) -> (BlockSums, Vec<BlockSums>)
where
    E: Fn(&LinkConfig, &mut LoopCounter, &mut [bool]) -> u64 + Sync,
{
    let n_blocks = n_samples.div_ceil(BLOCK_SIZE);
    let blocks: Vec<BlockSums> = run_pool(workers, || {
        (0..n_blocks)
            .into_par_iter()
            .map(|block| {
                let lo = block * BLOCK_SIZE;
                let hi = (lo + BLOCK_SIZE).min(n_samples);
                let mut rng = derive_stream(seed, block);
                let mut counter = LoopCounter::new();
                let mut config = LinkConfig::empty(tree.edge_count());
                let mut flags = vec![false; n_events];
                let mut sums = BlockSums::new(n_events);
                for _ in lo..hi {
                    resample_links_into(&mut config, params, &mut rng);
                    let l = eval(&config, &mut counter, &mut flags);
                    sums.push(params.theta, l, &flags);
                }
                sums
            })
            .collect()
    });
    let mut total = BlockSums::new(n_events);
    for b in &blocks {
        total.merge(params.theta, b.clone());
    }
    (total, blocks)
}

fn ratio_from_sums(total: &BlockSums, event: usize, method: Method) -> RatioEstimate {
    let a = total.a[event];
    let b = total.b;
    let ab2 = total.ab2[event];
    let raw = a / b;
    let var = ((1.0 - 2.0 * raw) * ab2 + raw * raw * total.b2) / (b * b);
    let ess = b * b / total.b2;
    RatioEstimate {
        value: raw.clamp(0.0, 1.0),
        raw_value: raw,
        numerator_sum: a,
        denominator_sum: b,
        n_samples: total.count,
        std_error: var.max(0.0).sqrt(),
        bootstrap_std_error: None,
        ess,
        ess_warning: ess < 0.01 * total.count as f64,
        method,
    }
}

/// Block bootstrap of the ratio (shared resample indices across events).
fn bootstrap_std_errors(
    blocks: &[BlockSums],
    theta: f64,
    seed: u64,
    n_events: usize,
    resamples: u32,
) -> Option<Vec<f64>> {
    if blocks.len() < 2 || resamples == 0 {
        return None;
    }
    let shift = blocks.iter().filter(|b| b.started).map(|b| b.shift).max()?;
    let scaled: Vec<(f64, Vec<f64>)> = blocks
        .iter()
        .map(|b| {
            let r = theta.powi((b.shift - shift) as i32);
            (b.b * r, b.a.iter().map(|&x| x * r).collect())
        })
        .collect();
    let mut rng = derive_stream(seed, BOOTSTRAP_STREAM);
    let mut sums = vec![(0.0f64, 0.0f64); n_events];
    let mut acc = vec![(0.0f64, 0.0f64); n_events]; // (sum r, sum r^2)
    for _ in 0..resamples {
        for s in sums.iter_mut() {
            *s = (0.0, 0.0);
        }
        for _ in 0..blocks.len() {
            let pick = rng.random_range(0..blocks.len());
            let (b, a) = &scaled[pick];
            for (i, s) in sums.iter_mut().enumerate() {
                s.0 += a[i];
                s.1 += b;
            }
        }
        for (i, s) in sums.iter().enumerate() {
            let r = if s.1 > 0.0 { s.0 / s.1 } else { 0.0 };
            acc[i].0 += r;
            acc[i].1 += r * r;
        }
    }
    let n = resamples as f64;
    Some(
        acc.iter()
            .map(|&(s, s2)| {
                let mean = s / n;
                (s2 / n - mean * mean).max(0.0).sqrt()
            })
            .collect(),
    )
}

/// Estimate P_theta(B) for an arbitrary event by reweighting `n_samples`
/// independent raw configurations. The event closure sees the tree, the
/// configuration and its loop partition.
pub fn estimate_weighted_prob<F>(
    event: F,
    tree: &Tree,
    params: &ModelParams,
    n_samples: u64,
    seed: u64,
    workers: usize,
) -> Result<RatioEstimate>
where
    F: Fn(&Tree, &LinkConfig, &LoopPartition) -> bool + Sync,
{
    if n_samples < 2 {
        return Err(Error::InvalidSchedule(format!("need at least 2 samples, got {n_samples}")));
    }
    let (total, blocks) = importance_run(tree, params, n_samples, seed, workers, 1, |config, _c, flags| {
        let partition = build_loops(tree, config).expect("edge ids match by construction");
        flags[0] = event(tree, config, &partition);
        partition.loop_count() as u64
    });
    let mut est = ratio_from_sums(&total, 0, Method::Importance);
    est.bootstrap_std_error = bootstrap_std_errors(&blocks, params.theta, seed, 1, DEFAULT_BOOTSTRAP_RESAMPLES)
        .map(|v| v[0]);
    Ok(est)
}

/// Paired estimates of P_theta[some root loop reaches generation m] for all
/// thresholds in `ms` on shared configurations; monotone in m exactly.
pub fn estimate_reach_profile(
    tree: &Tree,
    params: &ModelParams,
    ms: &[u32],
    n_samples: u64,
    seed: u64,
    workers: usize,
) -> Result<Vec<RatioEstimate>> {
    if n_samples < 2 {
        return Err(Error::InvalidSchedule(format!("need at least 2 samples, got {n_samples}")));
    }
    let (total, blocks) = importance_run(tree, params, n_samples, seed, workers, ms.len(), |config, counter, flags| {
        let stats = counter.count(tree, config);
        for (slot, &m) in flags.iter_mut().zip(ms) {
            *slot = stats.root_reach >= m;
        }
        stats.loop_count
    });
    let boots = bootstrap_std_errors(&blocks, params.theta, seed, ms.len(), DEFAULT_BOOTSTRAP_RESAMPLES);
    Ok((0..ms.len())
        .map(|i| {
            let mut est = ratio_from_sums(&total, i, Method::Importance);
            est.bootstrap_std_error = boots.as_ref().map(|v| v[i]);
            est
        })
        .collect())
}

/// Sample mean of theta^L under the raw law: the partition function
/// E[theta^L], kept in shifted form to survive large trees.
#[derive(Debug, Clone, Serialize)]
pub struct PartitionFnEstimate {
    pub value: f64,
    pub std_error: f64,
    /// ln E[theta^L]; always finite, even when `value` would overflow.
    pub log_value: f64,
    pub n_samples: u64,
}

pub fn estimate_partition_function(
    tree: &Tree,
    params: &ModelParams,
    n_samples: u64,
    seed: u64,
    workers: usize,
) -> Result<PartitionFnEstimate> {
    if n_samples < 2 {
        return Err(Error::InvalidSchedule(format!("need at least 2 samples, got {n_samples}")));
    }
    let (total, _) = importance_run(tree, params, n_samples, seed, workers, 0, |config, counter, _| {
        counter.count(tree, config).loop_count
    });
    let n = total.count as f64;
    let mean = total.b / n;
    let var = (total.b2 / n - mean * mean).max(0.0);
    let log_value = total.shift as f64 * params.theta.ln() + mean.ln();
    let scale = params.theta.powi(total.shift as i32);
    let value = scale * mean;
    let std_error = scale * (var / n).sqrt();
    if !value.is_finite() || !std_error.is_finite() {
        return Err(Error::PartitionOverflow { vertices: tree.vertex_count() });
    }
    Ok(PartitionFnEstimate { value, std_error, log_value, n_samples: total.count })
}

/// Schedule of a Metropolis run: total steps, burn-in, thinning stride and
/// how often the cached loop count is checked against a full rebuild.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McmcSchedule {
    pub n_steps: u64,
    pub burn_in: u64,
    pub thin: u64,
    pub checkpoint_interval: u64,
}

impl McmcSchedule {
    pub fn new(n_steps: u64, burn_in: u64, thin: u64) -> Result<McmcSchedule> {
        if n_steps <= burn_in {
            return Err(Error::InvalidSchedule(format!(
                "n_steps ({n_steps}) must exceed burn_in ({burn_in})"
            )));
        }
        if thin == 0 {
            return Err(Error::InvalidSchedule("thin must be >= 1".into()));
        }
        Ok(McmcSchedule { n_steps, burn_in, thin, checkpoint_interval: 10_000 })
    }

    pub fn kept_states(&self) -> u64 {
        (self.n_steps - self.burn_in) / self.thin
    }
}

#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct McmcDiagnostics {
    pub insert_proposed: u64,
    pub insert_accepted: u64,
    pub delete_proposed: u64,
    pub delete_accepted: u64,
    pub n_kept: u64,
    pub mean_links_per_edge: f64,
    pub links_per_edge_std_error: f64,
}

/// Grand-canonical Metropolis chain on link configurations targeting the
/// density proportional to theta^L against the raw Poisson law.
///
/// Moves: with probability 1/2 INSERT a link on a uniform edge at a uniform
/// time (cross with probability u), accepted with
/// min(1, theta^dL * beta|E| / (N+1)); with probability 1/2 DELETE a
/// uniformly chosen existing link, accepted with
/// min(1, theta^dL * N / (beta|E|)). DELETE on an empty configuration is a
/// rejected no-op. The kind probability matching the target mark fraction
/// makes the kind factor cancel in the acceptance ratio.
pub struct McmcChain<'t> {
    tree: &'t Tree,
    params: ModelParams,
    config: LinkConfig,
    /// Flat registry of (edge, time) for uniform deletion proposals.
    registry: Vec<(u32, f64)>,
    loop_count: u64,
    /// None after an accepted move; recomputed lazily by `root_reach`.
    root_reach_cache: Option<u32>,
    counter: LoopCounter,
    rng: ChaCha8Rng,
    steps_done: u64,
    checkpoint_interval: u64,
    pub insert_proposed: u64,
    pub insert_accepted: u64,
    pub delete_proposed: u64,
    pub delete_accepted: u64,
}

impl<'t> McmcChain<'t> {
    pub fn new(tree: &'t Tree, params: &ModelParams, seed: u64) -> McmcChain<'t> {
        let mut counter = LoopCounter::new();
        let config = LinkConfig::empty(tree.edge_count());
        let stats = counter.count(tree, &config);
        McmcChain {
            tree,
            params: *params,
            config,
            registry: Vec::new(),
            loop_count: stats.loop_count,
            root_reach_cache: Some(stats.root_reach),
            counter,
            rng: derive_stream(seed, 0),
            steps_done: 0,
            checkpoint_interval: 10_000,
            insert_proposed: 0,
            insert_accepted: 0,
            delete_proposed: 0,
            delete_accepted: 0,
        }
    }

    pub fn with_checkpoint_interval(mut self, interval: u64) -> Self {
        self.checkpoint_interval = interval.max(1);
        self
    }

    pub fn config(&self) -> &LinkConfig {
        &self.config
    }

    /// Cached loop count of the current state (log-weight is L ln theta).
    pub fn loop_count(&self) -> u64 {
        self.loop_count
    }

    /// Deepest generation reached by any loop through the root in the
    /// current state (cached between accepted moves).
    pub fn root_reach(&mut self) -> u32 {
        if let Some(r) = self.root_reach_cache {
            return r;
        }
        let stats = self.counter.count_candidates(
            self.tree,
            &self.config,
            self.registry.iter().map(|&(e, _)| e),
        );
        debug_assert_eq!(stats.loop_count, self.loop_count);
        self.root_reach_cache = Some(stats.root_reach);
        stats.root_reach
    }

    pub fn total_links(&self) -> usize {
        self.registry.len()
    }

    pub fn steps_done(&self) -> u64 {
        self.steps_done
    }

    pub fn step(&mut self) -> Result<()> {
        let ne = self.tree.edge_count();
        let beta_edges = self.params.beta * ne as f64;
        if self.rng.random::<f64>() < 0.5 {
            self.insert_proposed += 1;
            if ne > 0 {
                let e = self.rng.random_range(0..ne as u32);
                let mut time = uniform_time(&mut self.rng, self.params.beta);
                while self.config.links(e).iter().any(|l| l.time == time) {
                    time = uniform_time(&mut self.rng, self.params.beta);
                }
                let kind = if self.rng.random::<f64>() < self.params.u {
                    crate::links::LinkKind::Cross
                } else {
                    crate::links::LinkKind::Bar
                };
                let n_before = self.registry.len() as f64;
                self.config
                    .insert_in_place(e, crate::links::Link { time, kind })
                    .expect("duplicate times were resampled");
                let l_new = self.counter.count_loops_only(
                    self.tree,
                    &self.config,
                    self.registry.iter().map(|&(re, _)| re).chain(std::iter::once(e)),
                );
                let delta = l_new as i64 - self.loop_count as i64;
                let ratio = self.params.theta.powi(delta as i32) * beta_edges / (n_before + 1.0);
                if ratio >= 1.0 || self.rng.random::<f64>() < ratio {
                    self.registry.push((e, time));
                    self.loop_count = l_new;
                    self.root_reach_cache = None;
                    self.insert_accepted += 1;
                } else {
                    let pos = self.config.links(e).iter().position(|l| l.time == time).unwrap();
                    self.config.remove_in_place(e, pos)?;
                }
            }
        } else {
            self.delete_proposed += 1;
            if !self.registry.is_empty() {
                let n_before = self.registry.len() as f64;
                let pick = self.rng.random_range(0..self.registry.len());
                let (e, time) = self.registry[pick];
                let pos = self.config.links(e).iter().position(|l| l.time == time).unwrap();
                let link = self.config.remove_in_place(e, pos)?;
                let l_new = self.counter.count_loops_only(
                    self.tree,
                    &self.config,
                    self.registry.iter().map(|&(re, _)| re),
                );
                let delta = l_new as i64 - self.loop_count as i64;
                let ratio = self.params.theta.powi(delta as i32) * n_before / beta_edges;
                if ratio >= 1.0 || self.rng.random::<f64>() < ratio {
                    self.registry.swap_remove(pick);
                    self.loop_count = l_new;
                    self.root_reach_cache = None;
                    self.delete_accepted += 1;
                } else {
                    self.config.insert_in_place(e, link)?;
                }
            }
        }
        self.steps_done += 1;
        if self.steps_done.is_multiple_of(self.checkpoint_interval) {
            let actual = build_loops(self.tree, &self.config)?.loop_count() as u64;
            if actual != self.loop_count {
                return Err(Error::LoopCountDrift {
                    cached: self.loop_count,
                    actual,
                    step: self.steps_done,
                });
            }
        }
        Ok(())
    }
}

/// Batch-means standard error of a series of kept-state observations.
fn batch_means_std_error(series: &[f64]) -> f64 {
    let n = series.len();
    if n < 4 {
        return f64::NAN;
    }
    let n_batches = ((n as f64).sqrt() as usize).clamp(2, 256);
    let batch_len = n / n_batches;
    let mut means = Vec::with_capacity(n_batches);
    for b in 0..n_batches {
        let lo = b * batch_len;
        let m: f64 = series[lo..lo + batch_len].iter().sum::<f64>() / batch_len as f64;
        means.push(m);
    }
    let grand: f64 = means.iter().sum::<f64>() / n_batches as f64;
    let var: f64 =
        means.iter().map(|m| (m - grand) * (m - grand)).sum::<f64>() / (n_batches as f64 - 1.0);
    (var / n_batches as f64).sqrt()
}

fn mcmc_estimate_from_series(series: &[f64], n_kept: u64) -> RatioEstimate {
    let hits: f64 = series.iter().sum();
    let p = if n_kept > 0 { hits / n_kept as f64 } else { 0.0 };
    let se = batch_means_std_error(series);
    let se = if se.is_nan() { (p * (1.0 - p) / (n_kept.max(1)) as f64).sqrt() } else { se };
    let iid_var = p * (1.0 - p);
    let ess = if se > 0.0 && iid_var > 0.0 {
        (iid_var / (se * se * n_kept as f64)) * n_kept as f64
    } else {
        n_kept as f64
    };
    RatioEstimate {
        value: p.clamp(0.0, 1.0),
        raw_value: p,
        numerator_sum: hits,
        denominator_sum: n_kept as f64,
        n_samples: n_kept,
        std_error: se,
        bootstrap_std_error: None,
        ess,
        ess_warning: ess < 0.01 * n_kept as f64,
        method: Method::Mcmc,
    }
}

fn run_chain<Obs>(
    tree: &Tree,
    params: &ModelParams,
    schedule: &McmcSchedule,
    seed: u64,
    mut observe: Obs,
) -> Result<(McmcDiagnostics, u64)>
where
    Obs: FnMut(&mut McmcChain),
{
    let mut chain = McmcChain::new(tree, params, seed).with_checkpoint_interval(schedule.checkpoint_interval);
    let mut kept = 0u64;
    let mut link_series = Vec::new();
    let ne = tree.edge_count().max(1) as f64;
    for step in 1..=schedule.n_steps {
        chain.step()?;
        if step > schedule.burn_in && (step - schedule.burn_in).is_multiple_of(schedule.thin) {
            observe(&mut chain);
            link_series.push(chain.total_links() as f64 / ne);
            kept += 1;
        }
    }
    let mean_links = if kept > 0 { link_series.iter().sum::<f64>() / kept as f64 } else { 0.0 };
    let diag = McmcDiagnostics {
        insert_proposed: chain.insert_proposed,
        insert_accepted: chain.insert_accepted,
        delete_proposed: chain.delete_proposed,
        delete_accepted: chain.delete_accepted,
        n_kept: kept,
        mean_links_per_edge: mean_links,
        links_per_edge_std_error: batch_means_std_error(&link_series),
    };
    Ok((diag, kept))
}

/// Metropolis estimate of P_theta(B) for an arbitrary event; the event is
/// evaluated on thinned post-burn-in states and its frequency returned with
/// an autocorrelation-aware (batch means) standard error.
pub fn mcmc_sampler<F>(
    event: F,
    tree: &Tree,
    params: &ModelParams,
    schedule: &McmcSchedule,
    seed: u64,
) -> Result<(RatioEstimate, McmcDiagnostics)>
where
    F: Fn(&Tree, &LinkConfig, &LoopPartition) -> bool,
{
    let mut series = Vec::with_capacity(schedule.kept_states() as usize);
    let (diag, kept) = run_chain(tree, params, schedule, seed, |chain| {
        let partition = build_loops(tree, chain.config()).expect("chain config matches tree");
        series.push(if event(tree, chain.config(), &partition) { 1.0 } else { 0.0 });
    })?;
    Ok((mcmc_estimate_from_series(&series, kept), diag))
}

/// Paired MCMC estimates of the reach events for all thresholds in `ms`.
pub fn mcmc_reach_profile(
    tree: &Tree,
    params: &ModelParams,
    schedule: &McmcSchedule,
    seed: u64,
    ms: &[u32],
) -> Result<(Vec<RatioEstimate>, McmcDiagnostics)> {
    let mut series: Vec<Vec<f64>> =
        vec![Vec::with_capacity(schedule.kept_states() as usize); ms.len()];
    let (diag, kept) = run_chain(tree, params, schedule, seed, |chain| {
        let reach = chain.root_reach();
        for (s, &m) in series.iter_mut().zip(ms) {
            s.push(if reach >= m { 1.0 } else { 0.0 });
        }
    })?;
    Ok((series.iter().map(|s| mcmc_estimate_from_series(s, kept)).collect(), diag))
}

/// Inner estimator used per sampled tree in a quenched run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum InnerEstimator {
    Importance { n_samples: u64 },
    Mcmc(McmcSchedule),
}

impl InnerEstimator {
    pub fn method(&self) -> Method {
        match self {
            InnerEstimator::Importance { .. } => Method::Importance,
            InnerEstimator::Mcmc(_) => Method::Mcmc,
        }
    }
}

/// Quenched estimate: outer Monte Carlo over Galton-Watson trees cut at
/// level n, inner per-tree estimates of the reach events, one value per
/// threshold in `ms`. A tree extinct before generation m contributes exact
/// probability 0 for that m. The standard error is the between-tree spread
/// of the per-tree estimates, which folds in the inner noise.
#[allow(clippy::too_many_arguments)]
pub fn quenched_reach_profile(
    dist: &OffspringDistribution,
    n: u32,
    ms: &[u32],
    params: &ModelParams,
    n_trees: u64,
    inner: InnerEstimator,
    seed: u64,
    workers: usize,
) -> Result<Vec<RatioEstimate>> {
    if n_trees == 0 {
        return Err(Error::InvalidSchedule("need at least one tree".into()));
    }
    if let Some(&m) = ms.iter().find(|&&m| m > n) {
        return Err(Error::InvalidSchedule(format!(
            "event generation m={m} exceeds cut level n={n}"
        )));
    }
    let per_tree: Vec<Vec<f64>> = run_pool(workers, || {
        (0..n_trees)
            .into_par_iter()
            .map(|t| -> Result<Vec<f64>> {
                let mut tree_rng = derive_stream(seed, 2 * t);
                let tree = sample_gw_tree(dist, n, &mut tree_rng)?;
                let inner_seed = mix_seed(seed, 2 * t + 1);
                if tree.max_generation() < ms.iter().copied().min().unwrap_or(0) {
                    // Extinct before every requested generation.
                    return Ok(vec![0.0; ms.len()]);
                }
                match inner {
                    InnerEstimator::Importance { n_samples } => {
                        let ests = estimate_reach_profile(&tree, params, ms, n_samples, inner_seed, 1)?;
                        Ok(ests.into_iter().map(|e| e.value).collect())
                    }
                    InnerEstimator::Mcmc(schedule) => {
                        let (ests, _) = mcmc_reach_profile(&tree, params, &schedule, inner_seed, ms)?;
                        Ok(ests.into_iter().map(|e| e.value).collect())
                    }
                }
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let t = n_trees as f64;
    Ok((0..ms.len())
        .map(|i| {
            let values: Vec<f64> = per_tree.iter().map(|v| v[i]).collect();
            let sum: f64 = values.iter().sum();
            let mean = sum / t;
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (t - 1.0).max(1.0);
            let se = (var / t).sqrt();
            RatioEstimate {
                value: mean.clamp(0.0, 1.0),
                raw_value: mean,
                numerator_sum: sum,
                denominator_sum: t,
                n_samples: n_trees,
                std_error: se,
                bootstrap_std_error: None,
                ess: t,
                ess_warning: false,
                method: inner.method(),
            }
        })
        .collect())
}

/// Quenched estimate of the single event "some root loop reaches
/// generation m" (see `quenched_reach_profile`).
#[allow(clippy::too_many_arguments)]
pub fn estimate_quenched(
    dist: &OffspringDistribution,
    n: u32,
    m: u32,
    params: &ModelParams,
    n_trees: u64,
    n_samples_per_tree: u64,
    seed: u64,
    workers: usize,
) -> Result<RatioEstimate> {
    let mut v = quenched_reach_profile(
        dist,
        n,
        &[m],
        params,
        n_trees,
        InnerEstimator::Importance { n_samples: n_samples_per_tree },
        seed,
        workers,
    )?;
    Ok(v.pop().unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::links::{root_edge_profile, ModelParams};
    use crate::trees::regular_tree;

    fn star(d: u32) -> Tree {
        regular_tree(d, 1).unwrap()
    }

    #[test]
    fn theta_one_is_plain_monte_carlo() {
        // With theta = 1 every weight is exactly 1 and the estimate is the
        // sample frequency.
        let tree = star(3);
        let params = ModelParams::new(1.0, 0.5, 0.5).unwrap();
        let est = estimate_weighted_prob(
            |t, c, _| root_edge_profile(t, c).iter().all(|&k| k == 0),
            &tree,
            &params,
            20_000,
            7,
            2,
        )
        .unwrap();
        assert_eq!(est.denominator_sum, 20_000.0);
        assert_eq!(est.value, est.numerator_sum / 20_000.0);
        let expected = (-1.5f64).exp();
        assert!((est.value - expected).abs() <= 3.0 * est.std_error);
        assert!((est.ess - 20_000.0).abs() < 1e-9);
    }

    #[test]
    fn always_true_event_is_one_with_zero_error() {
        let tree = star(2);
        let params = ModelParams::new(2.0, 0.5, 0.5).unwrap();
        let est = estimate_weighted_prob(|_, _, _| true, &tree, &params, 5_000, 1, 1).unwrap();
        assert_eq!(est.value, 1.0);
        assert_eq!(est.std_error, 0.0);
    }

    #[test]
    fn weighted_empty_profile_respects_closed_form_bound() {
        // P_theta(A_empty) <= exp(-beta d / theta) on the star.
        let tree = star(3);
        let params = ModelParams::new(2.0, 0.5, 0.5).unwrap();
        let est = estimate_weighted_prob(
            |t, c, _| root_edge_profile(t, c).iter().all(|&k| k == 0),
            &tree,
            &params,
            200_000,
            11,
            2,
        )
        .unwrap();
        let bound = (-0.75f64).exp(); // 0.4723665527410147
        assert!(est.value <= bound + 3.0 * est.std_error, "{} vs {}", est.value, bound);
        // Delta-method and bootstrap errors should roughly agree.
        let boot = est.bootstrap_std_error.unwrap();
        assert!(boot > 0.0 && boot / est.std_error < 2.0 && est.std_error / boot < 2.0);
    }

    #[test]
    fn determinism_across_runs_and_worker_counts() {
        let tree = regular_tree(3, 2).unwrap();
        let params = ModelParams::new(1.5, 0.8, 0.3).unwrap();
        let a = estimate_reach_profile(&tree, &params, &[0, 1, 2], 10_000, 42, 1).unwrap();
        let b = estimate_reach_profile(&tree, &params, &[0, 1, 2], 10_000, 42, 3).unwrap();
        let c = estimate_reach_profile(&tree, &params, &[0, 1, 2], 10_000, 42, 3).unwrap();
        for ((x, y), z) in a.iter().zip(&b).zip(&c) {
            assert_eq!(x.value.to_bits(), y.value.to_bits());
            assert_eq!(x.std_error.to_bits(), y.std_error.to_bits());
            assert_eq!(y.value.to_bits(), z.value.to_bits());
        }
    }

    #[test]
    fn profile_is_exactly_monotone() {
        let tree = regular_tree(2, 3).unwrap();
        let params = ModelParams::new(2.0, 0.7, 0.5).unwrap();
        let ests = estimate_reach_profile(&tree, &params, &[0, 1, 2, 3], 20_000, 5, 2).unwrap();
        assert_eq!(ests[0].value, 1.0);
        for w in ests.windows(2) {
            assert!(w[0].value >= w[1].value);
        }
    }

    #[test]
    fn profile_matches_general_estimator() {
        // The fast profile path and the partition-building path are the
        // same estimator on the same stream.
        let tree = regular_tree(2, 2).unwrap();
        let params = ModelParams::new(1.5, 0.9, 0.5).unwrap();
        let profile = estimate_reach_profile(&tree, &params, &[2], 8_192, 9, 2).unwrap();
        let general =
            estimate_weighted_prob(|_, _, p| p.event_reach(2), &tree, &params, 8_192, 9, 2).unwrap();
        assert_eq!(profile[0].value.to_bits(), general.value.to_bits());
        assert_eq!(profile[0].std_error.to_bits(), general.std_error.to_bits());
    }

    #[test]
    fn partition_function_exact_cases() {
        // Single vertex: L = 1 always, estimate is exactly theta.
        let tree = regular_tree(1, 0).unwrap();
        let params = ModelParams::new(2.0, 0.5, 0.5).unwrap();
        let est = estimate_partition_function(&tree, &params, 1000, 3, 1).unwrap();
        assert_eq!(est.value, 2.0);
        assert_eq!(est.std_error, 0.0);

        // Single edge at theta = 1: exactly 1.
        let tree = regular_tree(1, 1).unwrap();
        let params = ModelParams::new(1.0, 1.0, 0.5).unwrap();
        let est = estimate_partition_function(&tree, &params, 1000, 3, 1).unwrap();
        assert_eq!(est.value, 1.0);
        assert_eq!(est.std_error, 0.0);
        assert_eq!(est.log_value, 0.0);
    }

    #[test]
    fn mcmc_theta_one_reproduces_raw_law() {
        // At theta = 1 the stationary law is the raw Poisson process; the
        // per-edge link count mean must match beta.
        let tree = star(2);
        let params = ModelParams::new(1.0, 1.5, 0.5).unwrap();
        let schedule = McmcSchedule::new(200_000, 5_000, 10).unwrap();
        let (_, diag) = mcmc_reach_profile(&tree, &params, &schedule, 13, &[1]).unwrap();
        assert!(
            (diag.mean_links_per_edge - 1.5).abs() <= 3.0 * diag.links_per_edge_std_error,
            "mean {} se {}",
            diag.mean_links_per_edge,
            diag.links_per_edge_std_error
        );
    }

    #[test]
    fn mcmc_agrees_with_importance_on_small_tree() {
        let tree = regular_tree(3, 1).unwrap();
        let params = ModelParams::new(2.0, 0.5, 0.5).unwrap();
        let is = estimate_reach_profile(&tree, &params, &[1], 200_000, 21, 2).unwrap();
        let schedule = McmcSchedule::new(400_000, 20_000, 10).unwrap();
        let (mc, _) = mcmc_reach_profile(&tree, &params, &schedule, 22, &[1]).unwrap();
        let diff = (is[0].value - mc[0].value).abs();
        let se = (is[0].std_error.powi(2) + mc[0].std_error.powi(2)).sqrt();
        assert!(diff <= 3.0 * se, "diff {diff} vs 3se {}", 3.0 * se);
    }

    #[test]
    fn mcmc_tiny_beta_stays_empty() {
        let tree = star(3);
        let params = ModelParams::new(2.0, 1e-12, 0.5).unwrap();
        let schedule = McmcSchedule::new(20_000, 1_000, 5).unwrap();
        let (ests, diag) = mcmc_reach_profile(&tree, &params, &schedule, 4, &[1]).unwrap();
        assert_eq!(ests[0].value, 0.0);
        assert_eq!(diag.mean_links_per_edge, 0.0);
        assert_eq!(diag.insert_accepted, 0);
    }

    #[test]
    fn mcmc_cached_count_matches_rebuild() {
        let tree = regular_tree(2, 2).unwrap();
        let params = ModelParams::new(1.5, 1.0, 0.5).unwrap();
        let mut chain = McmcChain::new(&tree, &params, 5).with_checkpoint_interval(100);
        for _ in 0..1_000 {
            chain.step().unwrap();
        }
        let rebuilt = build_loops(&tree, chain.config()).unwrap().loop_count() as u64;
        assert_eq!(chain.loop_count(), rebuilt);
    }

    #[test]
    fn quenched_trivial_cases() {
        let params = ModelParams::new(2.0, 0.5, 0.5).unwrap();
        // m = 0: always reached.
        let dist = OffspringDistribution::poisson(2.0).unwrap();
        let est = estimate_quenched(&dist, 3, 0, &params, 20, 200, 17, 2).unwrap();
        assert_eq!(est.value, 1.0);
        assert_eq!(est.std_error, 0.0);

        // Always-extinct offspring: never reaches generation 1.
        let dead = OffspringDistribution::empirical(vec![(0, 1.0)]).unwrap();
        let est = estimate_quenched(&dead, 3, 1, &params, 20, 200, 17, 1).unwrap();
        assert_eq!(est.value, 0.0);

        // m > n is rejected.
        let det = OffspringDistribution::deterministic(2);
        assert!(estimate_quenched(&det, 2, 3, &params, 4, 100, 1, 1).is_err());
    }

    #[test]
    fn quenched_deterministic_offspring_matches_direct_estimate() {
        let params = ModelParams::new(2.0, 0.5, 0.5).unwrap();
        let det = OffspringDistribution::deterministic(2);
        let est = estimate_quenched(&det, 2, 1, &params, 8, 4_096, 19, 2).unwrap();
        let direct =
            estimate_reach_profile(&regular_tree(2, 2).unwrap(), &params, &[1], 4_096, 19, 1).unwrap();
        assert!(
            (est.value - direct[0].value).abs() <= 4.0 * (est.std_error + direct[0].std_error),
            "{} vs {}",
            est.value,
            direct[0].value
        );
    }

    #[test]
    fn quenched_deterministic_across_workers() {
        let params = ModelParams::new(2.0, 0.3, 0.5).unwrap();
        let dist = OffspringDistribution::poisson(2.5).unwrap();
        let inner = InnerEstimator::Importance { n_samples: 512 };
        let a = quenched_reach_profile(&dist, 3, &[1, 2], &params, 16, inner, 23, 1).unwrap();
        let b = quenched_reach_profile(&dist, 3, &[1, 2], &params, 16, inner, 23, 3).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.value.to_bits(), y.value.to_bits());
            assert_eq!(x.std_error.to_bits(), y.std_error.to_bits());
        }
    }

    #[test]
    fn result_record_serializes() {
        let tree = star(2);
        let params = ModelParams::new(1.0, 0.5, 0.5).unwrap();
        let est = estimate_weighted_prob(|_, _, _| true, &tree, &params, 100, 1, 1).unwrap();
        let v = serde_json::to_value(est.record(42)).unwrap();
        for key in ["value", "std_error", "n_samples", "method", "seed"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["seed"], 42);
        assert_eq!(v["method"], "importance");
    }

    #[test]
    fn schedule_validation() {
        assert!(McmcSchedule::new(100, 100, 1).is_err());
        assert!(McmcSchedule::new(100, 10, 0).is_err());
        let params = ModelParams::new(1.0, 0.1, 0.5).unwrap();
        assert!(estimate_weighted_prob(|_, _, _| true, &star(1), &params, 1, 0, 1).is_err());
    }
}
