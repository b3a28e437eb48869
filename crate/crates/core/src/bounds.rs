//! Closed-form bounds, recursions and phase-transition conditions for the
//! theta-weighted loop model, evaluated for arbitrary offspring
//! distributions through their generating-function moments.
//!
//! All functions here take `theta` and `beta` as scalars and accept
//! beta = 0 (the limits are well defined and exercised by the condition
//! checks); sampling code keeps the stricter beta > 0 validation of
//! `ModelParams`. Exponentials that cancel at small beta go through expm1.

use crate::error::{Error, Result};
use crate::trees::OffspringDistribution;
use serde::Serialize;

/// (e^(beta theta) - 1) / theta^2: the per-link weight gain factor that
/// drives the upper bounds.
fn link_factor(theta: f64, beta: f64) -> f64 {
    (beta * theta).exp_m1() / (theta * theta)
}

/// (theta^2 + beta theta) / (theta^2 + e^(beta theta) - 1): the per-child
/// factor in the lower bound for the at-most-one-link event.
fn ratio_r(theta: f64, beta: f64) -> f64 {
    let t2 = theta * theta;
    (t2 + beta * theta) / (t2 + (beta * theta).exp_m1())
}

/// Sandwich for the partition function E[theta^L] of a tree whose root has
/// d children with given subtree factors E[theta^(L_Tj)]:
///
///   lower = theta e^(-beta d + beta d / theta)            * prod factors
///   upper = theta e^(-beta d) (1 + (e^(beta theta)-1)/theta^2)^d * prod
///
/// Always lower <= upper for theta >= 1.
pub fn partition_bounds(d: u32, theta: f64, beta: f64, subtree_factors: &[f64]) -> (f64, f64) {
    debug_assert!(subtree_factors.iter().all(|&f| f > 0.0));
    let product: f64 = subtree_factors.iter().product();
    let d_f = d as f64;
    let lower = theta * (-beta * d_f + beta * d_f / theta).exp() * product;
    let upper = theta * (-beta * d_f).exp() * (1.0 + link_factor(theta, beta)).powi(d as i32) * product;
    (lower, upper)
}

/// Bounds for the root-edge pattern events on a root with d children:
/// returns (upper bound on P_theta[all root edges empty],
///          lower bound on P_theta[all root edges carry at most one link]),
/// i.e. (e^(-beta d / theta), ((theta^2+beta theta)/(theta^2+e^(beta theta)-1))^d).
pub fn prob_a_bounds(d: u32, theta: f64, beta: f64) -> (f64, f64) {
    let upper_empty = (-beta * d as f64 / theta).exp();
    let lower_at_most_one = ratio_r(theta, beta).powi(d as i32);
    (upper_empty, lower_at_most_one)
}

/// The long-loop decay constant
///   q_tilde = E[X e^(-X beta/theta) (1 + (e^(beta theta)-1)/theta^2)^(X-1)]
///             * (e^(beta theta)-1)/theta^2,
/// evaluated through E[X s^(X-1)] at s = e^(-beta/theta)(1 + c); closed
/// form for Poisson offspring, exact finite sums otherwise.
pub fn q_tilde(dist: &OffspringDistribution, theta: f64, beta: f64) -> f64 {
    let c = link_factor(theta, beta);
    let e = (-beta / theta).exp();
    let s = e * (1.0 + c);
    c * e * dist.pgf_prime(s)
}

/// Lower-bound trace for the long-loop probabilities: entries m = 1..m_max
/// of a lower bound on 1 - zeta^m (zeta^m is the quenched probability that
/// a root loop fails to reach generation m), started from the base bound
/// zeta^1 <= E[e^(-beta X / theta)] and iterated through
///   1 - zeta^m >= E[r^X - (e^(-beta/theta)(1 + (beta/theta) zeta^(m-1)))^X],
/// together with the exponential-decay upper bounds sigma^m <= q_tilde^(m-1).
#[derive(Debug, Clone, Serialize)]
pub struct RecursionTrace {
    pub epsilon: f64,
    pub q_tilde: f64,
    /// Lower bounds on 1 - zeta^m, m = 1..=m_max; in [0, 1].
    pub one_minus_zeta_lower: Vec<f64>,
    /// Upper bounds min(1, q_tilde^(m-1)) on sigma^m, m = 1..=m_max.
    pub sigma_upper: Vec<f64>,
    /// Whether 1 - zeta^m >= epsilon held through m_max.
    pub invariant_maintained: bool,
}

pub fn zeta_recursion_lower(
    dist: &OffspringDistribution,
    theta: f64,
    beta: f64,
    epsilon: f64,
    m_max: u32,
) -> Result<RecursionTrace> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidParams(format!("epsilon must be in (0, 1), got {epsilon}")));
    }
    if m_max < 1 {
        return Err(Error::InvalidParams("m_max must be >= 1".into()));
    }
    let x = beta / theta;
    let r = ratio_r(theta, beta);
    let qt = q_tilde(dist, theta, beta);
    let pgf_r = dist.pgf(r);

    let mut one_minus_zeta_lower = Vec::with_capacity(m_max as usize);
    let mut sigma_upper = Vec::with_capacity(m_max as usize);
    // Base step: the failure event at m = 1 is exactly "all root edges
    // empty", bounded by E[e^(-beta X / theta)].
    let mut zeta = dist.pgf((-x).exp()).clamp(0.0, 1.0);
    one_minus_zeta_lower.push(1.0 - zeta);
    sigma_upper.push(1.0);
    for m in 2..=m_max {
        let s = (-x).exp() * (1.0 + x * zeta);
        let low = (pgf_r - dist.pgf(s)).clamp(0.0, 1.0);
        zeta = 1.0 - low;
        one_minus_zeta_lower.push(low);
        sigma_upper.push(qt.powi(m as i32 - 1).min(1.0));
    }
    let invariant_maintained = one_minus_zeta_lower.iter().all(|&v| v >= epsilon);
    Ok(RecursionTrace { epsilon, q_tilde: qt, one_minus_zeta_lower, sigma_upper, invariant_maintained })
}

/// Evaluated left/right sides and verdicts of the long-loop existence
/// conditions and the exponential-decay condition q_tilde < 1.
/// Optional search results are merged in by the callers that
/// perform them.
#[derive(Debug, Clone, Serialize)]
pub struct ConditionReport {
    pub distribution: String,
    pub theta: f64,
    pub beta: f64,
    pub epsilon: Option<f64>,
    /// E[e^(-beta X / theta)]; the long-loop conditions require <= 1 - epsilon.
    pub exp_moment: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exp_moment_bound: Option<f64>,
    /// E[r^X - s_epsilon^X]; the long-loop conditions require >= epsilon.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub long_loop_difference: Option<f64>,
    pub q_tilde: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub moment_ok: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub difference_ok: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub long_loops: Option<bool>,
    pub decay: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda0: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d0: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c_d: Option<f64>,
}

/// Evaluate both conditions at a given epsilon.
pub fn check_conditions(
    dist: &OffspringDistribution,
    theta: f64,
    beta: f64,
    epsilon: f64,
) -> Result<ConditionReport> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidParams(format!("epsilon must be in (0, 1), got {epsilon}")));
    }
    let mut report = check_decay_condition(dist, theta, beta);
    let (moment, difference) = part1_quantities(dist, theta, beta, epsilon);
    let moment_ok = moment <= 1.0 - epsilon;
    let difference_ok = difference >= epsilon;
    report.epsilon = Some(epsilon);
    report.exp_moment_bound = Some(1.0 - epsilon);
    report.long_loop_difference = Some(difference);
    report.moment_ok = Some(moment_ok);
    report.difference_ok = Some(difference_ok);
    report.long_loops = Some(moment_ok && difference_ok);
    Ok(report)
}

/// Evaluate only the decay condition q_tilde < 1 (no epsilon involved).
pub fn check_decay_condition(dist: &OffspringDistribution, theta: f64, beta: f64) -> ConditionReport {
    let qt = q_tilde(dist, theta, beta);
    ConditionReport {
        distribution: dist.describe(),
        theta,
        beta,
        epsilon: None,
        exp_moment: dist.pgf((-beta / theta).exp()),
        exp_moment_bound: None,
        long_loop_difference: None,
        q_tilde: qt,
        moment_ok: None,
        difference_ok: None,
        long_loops: None,
        decay: qt < 1.0,
        lambda0: None,
        d0: None,
        c_d: None,
    }
}

fn part1_quantities(dist: &OffspringDistribution, theta: f64, beta: f64, epsilon: f64) -> (f64, f64) {
    let x = beta / theta;
    let moment = dist.pgf((-x).exp());
    let r = ratio_r(theta, beta);
    let s = (-x).exp() * (1.0 + x * (1.0 - epsilon));
    let difference = dist.pgf(r) - dist.pgf(s);
    (moment, difference)
}

/// Grid search (1000 points on (0, 1/2], then two zoom rounds) for any
/// epsilon satisfying both long-loop conditions; absent when none exists on
/// the grid. A returned epsilon re-verifies through `check_conditions`.
pub fn find_epsilon(dist: &OffspringDistribution, theta: f64, beta: f64) -> Option<f64> {
    let margin = |eps: f64| -> f64 {
        let (moment, difference) = part1_quantities(dist, theta, beta, eps);
        ((1.0 - eps) - moment).min(difference - eps)
    };
    let mut lo = 0.0;
    let mut hi = 0.5;
    let mut best = (f64::NEG_INFINITY, 0.0);
    for _round in 0..3 {
        let step = (hi - lo) / 1000.0;
        for i in 1..=1000 {
            let eps = lo + step * i as f64;
            if eps <= 0.0 || eps > 0.5 {
                continue;
            }
            let m = margin(eps);
            if m > best.0 {
                best = (m, eps);
            }
        }
        lo = (best.1 - step).max(0.0);
        hi = (best.1 + step).min(0.5);
    }
    (best.0 >= 0.0).then_some(best.1)
}

/// Bisection for the beta where q_tilde crosses 1, bracketing
/// automatically and verifying monotonicity of q_tilde on the bracket.
/// Every beta below the returned value (within the bracket) is subcritical.
pub fn critical_beta_subcritical(dist: &OffspringDistribution, theta: f64) -> Result<f64> {
    let qt = |beta: f64| q_tilde(dist, theta, beta);
    let mut lo = 1e-3;
    let mut tries = 0;
    while qt(lo) >= 1.0 {
        lo /= 2.0;
        tries += 1;
        if tries > 200 {
            return Err(Error::NoSignChange { lo, hi: lo });
        }
    }
    let mut hi = lo.max(1e-3);
    tries = 0;
    while qt(hi) <= 1.0 {
        hi *= 2.0;
        tries += 1;
        if tries > 200 {
            return Err(Error::NoSignChange { lo, hi });
        }
    }
    // The bisection assumes q_tilde is increasing on [lo, hi]; verify on a
    // grid before trusting the root.
    let mut prev = qt(lo);
    for i in 1..=64 {
        let beta = lo + (hi - lo) * i as f64 / 64.0;
        let v = qt(beta);
        if v < prev - 1e-12 * prev.abs().max(1.0) {
            return Err(Error::NotMonotone { beta });
        }
        prev = v;
    }
    for _ in 0..1000 {
        let mid = 0.5 * (lo + hi);
        let v = qt(mid);
        if (v - 1.0).abs() <= 1e-9 {
            return Ok(mid);
        }
        if v < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi {
            return Ok(mid);
        }
    }
    Err(Error::SearchCapExceeded { cap: 1000, what: "bisection for q_tilde = 1".into() })
}

/// Result of the rescaled-offspring threshold search: the least integer
/// scaling lambda0 such that long loops are guaranteed across the whole
/// beta window, together with the epsilon that witnesses it.
#[derive(Debug, Clone, Serialize)]
pub struct Lambda0Result {
    pub lambda0: u32,
    pub epsilon: f64,
    pub band_probability: f64,
    /// Beta window [a, b] / (E[lambda0 X] c1 P(B_X)) certified at lambda0.
    pub beta_window: (f64, f64),
}

const INTEGER_SEARCH_CAP: u32 = 1_000_000;

/// For base offspring X, constants b >= a > theta and a mean band
/// [c1, c2] with positive mass, find the least integer lambda0 such that
/// the rescaled offspring lambda0 * X satisfies the long-loop conditions for
/// every beta in the window (verified on a 5-point grid).
pub fn find_lambda0(
    base: &OffspringDistribution,
    a: f64,
    b: f64,
    c1: f64,
    c2: f64,
    theta: f64,
) -> Result<Lambda0Result> {
    if !a.is_finite() || a <= theta {
        return Err(Error::NoValidEpsilon(format!("need a > theta, got a={a}, theta={theta}")));
    }
    if b < a || c1 <= 0.0 || c2 < c1 {
        return Err(Error::InvalidParams(format!("need b >= a and 0 < c1 <= c2, got b={b}, c1={c1}, c2={c2}")));
    }
    let p_band = base.prob_mean_band(c1, c2)?;
    if p_band <= 0.0 {
        return Err(Error::NoValidEpsilon(format!("mean band [{c1}, {c2}] has zero probability")));
    }
    if base.prob_positive()? <= 0.0 {
        return Err(Error::NoValidEpsilon("offspring is 0 almost surely".into()));
    }
    let mean = base.mean();

    // epsilon must satisfy
    //   (i)  E[1 - exp(-(a/(theta c1 P)) X / E[X])] >= epsilon
    //   (ii) exp(-(a/theta) epsilon / P) < 1 - epsilon / P,
    // and the threshold display gets easier the smaller
    //   h(eps) = eps/P + exp(-(a/theta) eps/P)
    // is, so pick the feasible epsilon minimising h.
    let kappa = a / (theta * c1 * p_band);
    let e_star = 1.0 - base.pgf((-kappa / mean).exp());
    let cap = e_star.min(0.5);
    if cap <= 0.0 {
        return Err(Error::NoValidEpsilon("condition (i) admits no epsilon".into()));
    }
    let h = |eps: f64| eps / p_band + (-(a / theta) * eps / p_band).exp();
    // Unconstrained minimiser of h, clamped into the feasible range.
    let eps_opt = (p_band * (theta / a) * (a / theta).ln()).clamp(cap / 1000.0, cap);
    let mut best = (h(eps_opt), eps_opt);
    for i in 1..=1000 {
        let eps = cap * i as f64 / 1000.0;
        let v = h(eps);
        if v < best.0 {
            best = (v, eps);
        }
    }
    let (h_best, epsilon) = best;
    if h_best >= 1.0 {
        return Err(Error::NoValidEpsilon("condition (ii) admits no epsilon below the cap".into()));
    }

    // Least lambda making the window display hold:
    //   (1 + (e^y - 1 - y)/theta^2)^(-lambda E[X] c2) >= h(epsilon),
    //   y = b theta / (c1 P lambda E[X]).
    let mut lambda = 1u32;
    loop {
        let d_bar = lambda as f64 * mean;
        let y = b * theta / (c1 * p_band * d_bar);
        let lhs = (-(d_bar * c2) * ((y.exp_m1() - y) / (theta * theta)).ln_1p()).exp();
        if lhs >= h_best {
            // Re-verify the long-loop conditions across the beta window.
            let scaled = OffspringDistribution::scaled(lambda, base.clone())?;
            let window_lo = a / (d_bar * c1 * p_band);
            let window_hi = b / (d_bar * c1 * p_band);
            let all_pass = (0..5).all(|i| {
                let beta = window_lo + (window_hi - window_lo) * i as f64 / 4.0;
                check_conditions(&scaled, theta, beta, epsilon)
                    .map(|r| r.long_loops == Some(true))
                    .unwrap_or(false)
            });
            if all_pass {
                return Ok(Lambda0Result {
                    lambda0: lambda,
                    epsilon,
                    band_probability: p_band,
                    beta_window: (window_lo, window_hi),
                });
            }
        }
        if lambda >= INTEGER_SEARCH_CAP {
            return Err(Error::SearchCapExceeded {
                cap: INTEGER_SEARCH_CAP as u64,
                what: "lambda0 search".into(),
            });
        }
        lambda += 1;
    }
}

/// The decay envelope c_d = (d/theta^2)(e^(q theta/d) - 1)
/// exp((d/theta^2)(e^(q theta/d) - q theta/d - 1)); tends to q/theta as
/// d grows, and dominates q_tilde(deterministic(d), beta = q/d).
pub fn c_d(q: f64, theta: f64, d: u32) -> f64 {
    let d_f = d as f64;
    let x = q * theta / d_f;
    let scale = d_f / (theta * theta);
    scale * x.exp_m1() * (scale * (x.exp_m1() - x)).exp()
}

#[derive(Debug, Clone, Serialize)]
pub struct D0Result {
    pub d0: u32,
    pub c_d: f64,
    /// q_tilde(deterministic(d0), beta = q/d0); always <= c_d.
    pub q_tilde_at_window: f64,
}

/// Least d with c_d < 1 that stays below 1 across the guard window
/// {d, ..., 4d} (the approach to the q/theta limit need not be monotone).
pub fn find_d0(q: f64, theta: f64) -> Result<D0Result> {
    if !q.is_finite() || !theta.is_finite() || q >= theta {
        return Err(Error::InvalidParams(format!("need q < theta, got q={q}, theta={theta}")));
    }
    let mut d = 1u32;
    while d <= INTEGER_SEARCH_CAP {
        if c_d(q, theta, d) >= 1.0 {
            d += 1;
            continue;
        }
        let hi = d.saturating_mul(4);
        match (d..=hi).find(|&d2| c_d(q, theta, d2) >= 1.0) {
            Some(bad) => d = bad + 1,
            None => {
                let cd = c_d(q, theta, d);
                let det = OffspringDistribution::deterministic(d);
                let qt = q_tilde(&det, theta, q / d as f64);
                debug_assert!(qt <= cd * (1.0 + 1e-12));
                return Ok(D0Result { d0: d, c_d: cd, q_tilde_at_window: qt });
            }
        }
    }
    Err(Error::SearchCapExceeded { cap: INTEGER_SEARCH_CAP as u64, what: "d0 search".into() })
}
