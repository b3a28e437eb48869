//! Cross-estimator invariants: the reweighting and Metropolis estimators
//! target the same measure and must agree within statistical error on
//! every event; the theta = 1 chain must reproduce the raw link law.

use gwloops::links::{root_edge_profile, LinkConfig, ModelParams};
use gwloops::loops::LoopPartition;
use gwloops::measure::{
    estimate_weighted_prob, mcmc_sampler, quenched_reach_profile, InnerEstimator, McmcChain,
    McmcSchedule,
};
use gwloops::trees::{regular_tree, OffspringDistribution, Tree};

type Event = fn(&Tree, &LinkConfig, &LoopPartition) -> bool;

fn event_all_at_most_one(t: &Tree, c: &LinkConfig, _p: &LoopPartition) -> bool {
    root_edge_profile(t, c).iter().all(|&k| k <= 1)
}

fn event_all_empty(t: &Tree, c: &LinkConfig, _p: &LoopPartition) -> bool {
    root_edge_profile(t, c).iter().all(|&k| k == 0)
}

fn event_reach_1(_t: &Tree, _c: &LinkConfig, p: &LoopPartition) -> bool {
    p.event_reach(1)
}

fn event_reach_2(_t: &Tree, _c: &LinkConfig, p: &LoopPartition) -> bool {
    p.event_reach(2)
}

#[test]
fn importance_and_mcmc_agree_on_event_grid() {
    let tree = regular_tree(2, 2).unwrap(); // 7 vertices
    let events: [(&str, Event); 4] = [
        ("at-most-one", event_all_at_most_one),
        ("all-empty", event_all_empty),
        ("reach-1", event_reach_1),
        ("reach-2", event_reach_2),
    ];
    let schedule = McmcSchedule::new(150_000, 15_000, 10).unwrap();
    let mut pair = 0u64;
    for &theta in &[1.0, 2.0] {
        for &u in &[0.0, 0.5, 1.0] {
            let params = ModelParams::new(theta, 0.8, u).unwrap();
            for (name, event) in events {
                pair += 1;
                let is = estimate_weighted_prob(event, &tree, &params, 60_000, 1000 + pair, 2).unwrap();
                let (mc, _) = mcmc_sampler(event, &tree, &params, &schedule, 2000 + pair).unwrap();
                let diff = (is.value - mc.value).abs();
                let se = (is.std_error.powi(2) + mc.std_error.powi(2)).sqrt();
                assert!(
                    diff <= 3.5 * se.max(1e-4),
                    "event {name} theta={theta} u={u}: importance {} vs mcmc {} (3.5se {})",
                    is.value,
                    mc.value,
                    3.5 * se
                );
            }
        }
    }
}

#[test]
fn theta_one_chain_link_times_are_uniform() {
    // Kolmogorov-Smirnov test of the pooled link times of the theta = 1
    // chain against the uniform law on [0, beta), at the 1% level.
    let tree = regular_tree(1, 1).unwrap();
    let beta = 1.0;
    let params = ModelParams::new(1.0, beta, 0.5).unwrap();
    let mut chain = McmcChain::new(&tree, &params, 77);
    let mut times = Vec::new();
    let (burn_in, thin, kept_target) = (2_000u64, 20u64, 10_000u64);
    let mut kept = 0;
    let mut step = 0u64;
    while kept < kept_target {
        chain.step().unwrap();
        step += 1;
        if step > burn_in && (step - burn_in).is_multiple_of(thin) {
            kept += 1;
            times.extend(chain.config().links(0).iter().map(|l| l.time / beta));
        }
    }
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = times.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &t) in times.iter().enumerate() {
        let upper = (i as f64 + 1.0) / n - t;
        let lower = t - i as f64 / n;
        d = d.max(upper).max(lower);
    }
    // 1% two-sided critical value, asymptotic: 1.6276 / sqrt(n).
    let critical = 1.6276 / n.sqrt();
    assert!(d <= critical, "KS statistic {d} above the 1% critical value {critical} (n = {n})");
}

#[test]
fn quenched_profile_is_monotone_in_m() {
    let dist = OffspringDistribution::poisson(3.0).unwrap();
    let params = ModelParams::new(1.5, 0.4, 0.5).unwrap();
    let ests = quenched_reach_profile(
        &dist,
        4,
        &[0, 1, 2, 3, 4],
        &params,
        40,
        InnerEstimator::Importance { n_samples: 2_000 },
        31,
        2,
    )
    .unwrap();
    assert_eq!(ests[0].value, 1.0);
    for w in ests.windows(2) {
        assert!(w[0].value >= w[1].value, "paired quenched profile must be monotone");
    }
}

#[test]
fn ess_warning_fires_on_weight_dominated_runs() {
    // A deep tree at theta = 2 has wildly varying weights; the effective
    // sample size collapses and the estimate must say so.
    let tree = regular_tree(3, 4).unwrap();
    let params = ModelParams::new(2.0, 1.0, 0.5).unwrap();
    let est = estimate_weighted_prob(|_, _, p| p.event_reach(1), &tree, &params, 4_096, 3, 2).unwrap();
    assert!(est.ess < 0.01 * 4096.0);
    assert!(est.ess_warning);
}

#[test]
fn partition_estimates_stay_inside_the_sandwich_on_stars() {
    // Star subtree factors are exactly theta each, so the closed-form
    // sandwich applies verbatim at every (d, beta, theta).
    use gwloops::bounds::partition_bounds;
    use gwloops::measure::estimate_partition_function;
    let mut seed = 500;
    for d in [2u32, 3] {
        let tree = regular_tree(d, 1).unwrap();
        for beta in [0.3, 0.8] {
            for theta in [1.5, 2.5] {
                seed += 1;
                let params = ModelParams::new(theta, beta, 0.5).unwrap();
                let est = estimate_partition_function(&tree, &params, 100_000, seed, 2).unwrap();
                let factors = vec![theta; d as usize];
                let (lo, hi) = partition_bounds(d, theta, beta, &factors);
                assert!(
                    est.value >= lo - 3.0 * est.std_error && est.value <= hi + 3.0 * est.std_error,
                    "d={d} beta={beta} theta={theta}: {} outside [{lo}, {hi}] +- 3*{}",
                    est.value,
                    est.std_error
                );
            }
        }
    }
}
