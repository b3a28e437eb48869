//! Rooted finite trees (d-ary or Galton-Watson realisations) and offspring
//! distributions with the moment functionals the analytic bounds need.
//!
//! Trees are stored as index-based arrays (parent array plus a CSR children
//! list) so the simulation hot path traverses them cache-friendly. They are
//! immutable after construction and safe to share read-only across workers.

use crate::error::{Error, Result};
use crate::rng;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

pub type VertexId = u32;
pub type EdgeId = u32;

const NO_VERTEX: u32 = u32::MAX;
const NO_EDGE: u32 = u32::MAX;

/// Default cap on Galton-Watson growth; supercritical offspring would
/// otherwise exhaust memory before the cut level is reached.
pub const DEFAULT_VERTEX_BUDGET: u64 = 10_000_000;

/// Hard cap for any tree: vertex ids are u32.
pub const MAX_VERTICES: u64 = (u32::MAX - 1) as u64;

/// A rooted tree cut at some level `n`. Vertex 0 is the root; edges are
/// (parent, child) pairs with stable ids in construction (BFS) order.
#[derive(Debug, Clone)]
pub struct Tree {
    parent: Vec<VertexId>,
    parent_edge: Vec<EdgeId>,
    child_offsets: Vec<u32>,
    child_list: Vec<VertexId>,
    generation: Vec<u32>,
    edges: Vec<(VertexId, VertexId)>,
    cut_level: u32,
    max_generation: u32,
}

impl Tree {
    /// Build from a parent array where `parent[0] == NO_VERTEX` and
    /// `parent[v] < v` for all other vertices (BFS/DFS order).
    fn from_parents(parent: Vec<VertexId>, cut_level: u32) -> Tree {
        let n = parent.len();
        assert!(n >= 1 && parent[0] == NO_VERTEX);
        let mut generation = vec![0u32; n];
        let mut counts = vec![0u32; n];
        for v in 1..n {
            let p = parent[v] as usize;
            debug_assert!(p < v);
            generation[v] = generation[p] + 1;
            counts[p] += 1;
        }
        let mut child_offsets = vec![0u32; n + 1];
        for v in 0..n {
            child_offsets[v + 1] = child_offsets[v] + counts[v];
        }
        let mut cursor = child_offsets.clone();
        let mut child_list = vec![0u32; n - 1];
        let mut parent_edge = vec![NO_EDGE; n];
        let mut edges = Vec::with_capacity(n - 1);
        for (v, &p) in parent.iter().enumerate().skip(1) {
            let p = p as usize;
            child_list[cursor[p] as usize] = v as VertexId;
            cursor[p] += 1;
        }
        // Edge ids in order of the child vertex so they are stable and
        // root edges come first on BFS-built trees.
        for v in 1..n {
            parent_edge[v] = edges.len() as EdgeId;
            edges.push((parent[v], v as VertexId));
        }
        let max_generation = generation.iter().copied().max().unwrap_or(0);
        Tree {
            parent,
            parent_edge,
            child_offsets,
            child_list,
            generation,
            edges,
            cut_level,
            max_generation,
        }
    }

    pub fn vertex_count(&self) -> usize {
        self.parent.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn root(&self) -> VertexId {
        0
    }

    pub fn parent(&self, v: VertexId) -> Option<VertexId> {
        let p = self.parent[v as usize];
        (p != NO_VERTEX).then_some(p)
    }

    /// Edge connecting `v` to its parent, if any.
    pub fn parent_edge(&self, v: VertexId) -> Option<EdgeId> {
        let e = self.parent_edge[v as usize];
        (e != NO_EDGE).then_some(e)
    }

    pub fn children(&self, v: VertexId) -> &[VertexId] {
        let lo = self.child_offsets[v as usize] as usize;
        let hi = self.child_offsets[v as usize + 1] as usize;
        &self.child_list[lo..hi]
    }

    pub fn generation(&self, v: VertexId) -> u32 {
        self.generation[v as usize]
    }

    pub fn edges(&self) -> &[(VertexId, VertexId)] {
        &self.edges
    }

    pub fn endpoints(&self, e: EdgeId) -> (VertexId, VertexId) {
        self.edges[e as usize]
    }

    /// The cut level `n` the tree was built with.
    pub fn cut_level(&self) -> u32 {
        self.cut_level
    }

    /// Deepest generation actually present (a GW tree may go extinct early).
    pub fn max_generation(&self) -> u32 {
        self.max_generation
    }

    /// Edge ids from the root to each of its children, in child order.
    pub fn root_edges(&self) -> Vec<EdgeId> {
        self.children(0)
            .iter()
            .map(|&c| self.parent_edge[c as usize])
            .collect()
    }

    /// One line per vertex: `id parent generation`, root parent is -1.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for v in 0..self.vertex_count() {
            let p = self.parent[v];
            let p = if p == NO_VERTEX { -1 } else { p as i64 };
            writeln!(out, "{} {} {}", v, p, self.generation[v]).unwrap();
        }
        out
    }

    /// Parse the `to_text` format, re-validating all tree invariants.
    pub fn from_text(text: &str) -> Result<Tree> {
        let mut parents: Vec<(u64, i64, u32)> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut it = line.split_whitespace();
            let id: u64 = it
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Parse(format!("line {}: missing vertex id", lineno + 1)))?;
            let parent: i64 = it
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Parse(format!("line {}: missing parent", lineno + 1)))?;
            let generation: u32 = it
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Parse(format!("line {}: missing generation", lineno + 1)))?;
            parents.push((id, parent, generation));
        }
        if parents.is_empty() {
            return Err(Error::Parse("empty tree text".into()));
        }
        let n = parents.len();
        let mut parent = vec![NO_VERTEX; n];
        let mut gen_check = vec![0u32; n];
        for (i, &(id, p, g)) in parents.iter().enumerate() {
            if id != i as u64 {
                return Err(Error::Parse(format!("vertex ids must be 0..{} in order, got {}", n - 1, id)));
            }
            if i == 0 {
                if p != -1 || g != 0 {
                    return Err(Error::Parse("root must have parent -1 and generation 0".into()));
                }
            } else {
                if p < 0 || p as usize >= i {
                    return Err(Error::Parse(format!("vertex {} has invalid parent {}", i, p)));
                }
                parent[i] = p as VertexId;
                gen_check[i] = g;
            }
        }
        let cut_level = parents.iter().map(|&(_, _, g)| g).max().unwrap_or(0);
        let tree = Tree::from_parents(parent, cut_level);
        for (v, (&gen, claim)) in tree.generation.iter().zip(&parents).enumerate() {
            if gen != claim.2 {
                return Err(Error::Parse(format!(
                    "vertex {} claims generation {} but parents imply {}",
                    v, claim.2, gen
                )));
            }
        }
        let _ = gen_check;
        Ok(tree)
    }
}

/// The d-regular tree rooted at vertex 0 with `n` generations: every vertex
/// of generation < n has exactly d children (the root included).
pub fn regular_tree(d: u32, n: u32) -> Result<Tree> {
    if d < 1 {
        return Err(Error::InvalidParams(format!("regular tree needs d >= 1, got {d}")));
    }
    let mut total: u128 = 0;
    let mut level: u128 = 1;
    for _ in 0..=n {
        total += level;
        if total > MAX_VERTICES as u128 {
            return Err(Error::TreeTooLarge { d, n, vertices: count_regular(d, n), max: MAX_VERTICES });
        }
        level *= d as u128;
    }
    let total = total as usize;
    let mut parent = Vec::with_capacity(total);
    parent.push(NO_VERTEX);
    let mut gen_start = 0usize; // first vertex of the current generation
    let mut gen_len = 1usize;
    for _ in 0..n {
        for v in gen_start..gen_start + gen_len {
            for _ in 0..d {
                parent.push(v as VertexId);
            }
        }
        gen_start += gen_len;
        gen_len *= d as usize;
    }
    debug_assert_eq!(parent.len(), total);
    Ok(Tree::from_parents(parent, n))
}

fn count_regular(d: u32, n: u32) -> u128 {
    let mut total: u128 = 0;
    let mut level: u128 = 1;
    for _ in 0..=n {
        total = total.saturating_add(level);
        level = level.saturating_mul(d as u128);
    }
    total
}

/// Sample a Galton-Watson tree cut at level `n` with the default vertex budget.
pub fn sample_gw_tree<R: Rng + ?Sized>(
    dist: &OffspringDistribution,
    n: u32,
    rng: &mut R,
) -> Result<Tree> {
    sample_gw_tree_with_budget(dist, n, DEFAULT_VERTEX_BUDGET, rng)
}

/// Sample a Galton-Watson tree cut at level `n`; fails once more than
/// `budget` vertices have been generated.
pub fn sample_gw_tree_with_budget<R: Rng + ?Sized>(
    dist: &OffspringDistribution,
    n: u32,
    budget: u64,
    rng: &mut R,
) -> Result<Tree> {
    let budget = budget.min(MAX_VERTICES);
    let mut parent = vec![NO_VERTEX];
    let mut gen_start = 0usize;
    for _ in 0..n {
        let gen_end = parent.len();
        if gen_start == gen_end {
            break; // extinct
        }
        for v in gen_start..gen_end {
            let k = dist.sample(rng);
            for _ in 0..k {
                if parent.len() as u64 >= budget {
                    return Err(Error::VertexBudgetExceeded { budget });
                }
                parent.push(v as VertexId);
            }
        }
        gen_start = gen_end;
    }
    Ok(Tree::from_parents(parent, n))
}

/// Offspring distribution of a Galton-Watson tree.
///
/// `scaled(lambda, X)` is the rescaled distribution `lambda * X` (point mass
/// moved from k to lambda*k), `empirical` an explicit pmf table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OffspringKind {
    Deterministic(u32),
    Poisson(f64),
    Scaled { lambda: u32, base: Box<OffspringDistribution> },
    Empirical(Vec<(u32, f64)>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffspringDistribution {
    #[serde(flatten)]
    kind: OffspringKind,
    #[serde(default = "default_tail_tolerance")]
    tail_tolerance: f64,
}

fn default_tail_tolerance() -> f64 {
    1e-12
}

/// Iteration cap for truncated infinite-support sums.
const MOMENT_ITERATION_CAP: u64 = 1_000_000;

impl OffspringDistribution {
    pub fn deterministic(d: u32) -> Self {
        OffspringDistribution { kind: OffspringKind::Deterministic(d), tail_tolerance: default_tail_tolerance() }
    }

    pub fn poisson(mu: f64) -> Result<Self> {
        if !mu.is_finite() || mu < 0.0 {
            return Err(Error::InvalidDistribution(format!("poisson mean must be finite and >= 0, got {mu}")));
        }
        Ok(OffspringDistribution { kind: OffspringKind::Poisson(mu), tail_tolerance: default_tail_tolerance() })
    }

    pub fn scaled(lambda: u32, base: OffspringDistribution) -> Result<Self> {
        if lambda < 1 {
            return Err(Error::InvalidDistribution("scaling factor lambda must be >= 1".into()));
        }
        Ok(OffspringDistribution {
            tail_tolerance: base.tail_tolerance,
            kind: OffspringKind::Scaled { lambda, base: Box::new(base) },
        })
    }

    /// Explicit pmf table; values must be non-negative and sum to 1 within
    /// the tail tolerance.
    pub fn empirical(pmf: Vec<(u32, f64)>) -> Result<Self> {
        Self::empirical_with_tolerance(pmf, default_tail_tolerance())
    }

    pub fn empirical_with_tolerance(mut pmf: Vec<(u32, f64)>, tol: f64) -> Result<Self> {
        if pmf.is_empty() {
            return Err(Error::InvalidDistribution("empirical pmf is empty".into()));
        }
        pmf.sort_by_key(|&(k, _)| k);
        for w in pmf.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::InvalidDistribution(format!("duplicate pmf entry for k={}", w[0].0)));
            }
        }
        let mut total = 0.0;
        for &(k, p) in &pmf {
            if !p.is_finite() || p < 0.0 {
                return Err(Error::InvalidDistribution(format!("pmf({k}) = {p} is not a probability")));
            }
            total += p;
        }
        if (total - 1.0).abs() > tol {
            return Err(Error::InvalidDistribution(format!(
                "pmf sums to {total}, off from 1 by more than the tolerance {tol:e}"
            )));
        }
        Ok(OffspringDistribution { kind: OffspringKind::Empirical(pmf), tail_tolerance: tol })
    }

    pub fn with_tail_tolerance(mut self, tol: f64) -> Self {
        self.tail_tolerance = tol;
        self
    }

    pub fn kind(&self) -> &OffspringKind {
        &self.kind
    }

    pub fn tail_tolerance(&self) -> f64 {
        self.tail_tolerance
    }

    pub fn mean(&self) -> f64 {
        match &self.kind {
            OffspringKind::Deterministic(d) => *d as f64,
            OffspringKind::Poisson(mu) => *mu,
            OffspringKind::Scaled { lambda, base } => *lambda as f64 * base.mean(),
            OffspringKind::Empirical(pmf) => pmf.iter().map(|&(k, p)| k as f64 * p).sum(),
        }
    }

    /// Short human-readable descriptor for reports and CSV.
    pub fn describe(&self) -> String {
        match &self.kind {
            OffspringKind::Deterministic(d) => format!("deterministic({d})"),
            OffspringKind::Poisson(mu) => format!("poisson({mu})"),
            OffspringKind::Scaled { lambda, base } => format!("scaled({lambda},{})", base.describe()),
            OffspringKind::Empirical(pmf) => format!("empirical({} atoms)", pmf.len()),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        match &self.kind {
            OffspringKind::Deterministic(d) => *d as u64,
            OffspringKind::Poisson(mu) => rng::poisson(rng, *mu),
            OffspringKind::Scaled { lambda, base } => *lambda as u64 * base.sample(rng),
            OffspringKind::Empirical(pmf) => {
                let u: f64 = rng.random();
                let mut cdf = 0.0;
                for &(k, p) in pmf {
                    cdf += p;
                    if u < cdf {
                        return k as u64;
                    }
                }
                pmf.last().unwrap().0 as u64
            }
        }
    }

    /// E[f(X)]. Exact finite sum for finite support; truncated series with
    /// tail mass below `tail_tolerance` for Poisson.
    pub fn expect<F: Fn(u64) -> f64>(&self, f: F) -> Result<f64> {
        self.expect_dyn(&f)
    }

    fn expect_dyn(&self, f: &dyn Fn(u64) -> f64) -> Result<f64> {
        match &self.kind {
            OffspringKind::Deterministic(d) => Ok(f(*d as u64)),
            OffspringKind::Empirical(pmf) => {
                Ok(pmf.iter().map(|&(k, p)| p * f(k as u64)).sum())
            }
            OffspringKind::Scaled { lambda, base } => {
                let lambda = *lambda as u64;
                base.expect_dyn(&|k| f(lambda * k))
            }
            OffspringKind::Poisson(mu) => self.poisson_series(*mu, f),
        }
    }

    fn poisson_series(&self, mu: f64, f: &dyn Fn(u64) -> f64) -> Result<f64> {
        if mu == 0.0 {
            return Ok(f(0));
        }
        let tol = self.tail_tolerance;
        // pmf by multiplicative recurrence in linear space when exp(-mu) is
        // representable, otherwise by the exact log-space recurrence.
        let log_space = mu > 500.0;
        let mut log_p = -mu;
        let mut p = if log_space { 0.0 } else { (-mu).exp() };
        let mut sum = 0.0;
        let mut mass = 0.0;
        let mut small_terms = 0;
        for k in 0..MOMENT_ITERATION_CAP {
            let pk = if log_space { log_p.exp() } else { p };
            let term = pk * f(k);
            sum += term;
            mass += pk;
            if mass >= 1.0 - tol {
                if term.abs() <= 1e-16 * sum.abs().max(f64::MIN_POSITIVE) {
                    small_terms += 1;
                    if small_terms >= 3 {
                        return Ok(sum);
                    }
                } else {
                    small_terms = 0;
                }
            }
            let next = (k + 1) as f64;
            if log_space {
                log_p += mu.ln() - next.ln();
            } else {
                p *= mu / next;
            }
        }
        Err(Error::TruncationDiverged { iterations: MOMENT_ITERATION_CAP, tolerance: tol })
    }

    /// Probability generating function E[s^X], with the Poisson closed form
    /// exp(-mu (1 - s)). Valid for any s >= 0.
    pub fn pgf(&self, s: f64) -> f64 {
        match &self.kind {
            OffspringKind::Deterministic(d) => pow_u32(s, *d),
            OffspringKind::Poisson(mu) => (-mu * (1.0 - s)).exp(),
            OffspringKind::Scaled { lambda, base } => base.pgf(pow_u32(s, *lambda)),
            OffspringKind::Empirical(pmf) => pmf.iter().map(|&(k, p)| p * pow_u32(s, k)).sum(),
        }
    }

    /// E[X s^(X-1)], the derivative of the pgf; Poisson closed form
    /// mu * exp(-mu (1 - s)).
    pub fn pgf_prime(&self, s: f64) -> f64 {
        match &self.kind {
            OffspringKind::Deterministic(d) => {
                if *d == 0 {
                    0.0
                } else {
                    *d as f64 * pow_u32(s, *d - 1)
                }
            }
            OffspringKind::Poisson(mu) => mu * (-mu * (1.0 - s)).exp(),
            OffspringKind::Scaled { lambda, base } => {
                let l = *lambda;
                l as f64 * pow_u32(s, l - 1) * base.pgf_prime(pow_u32(s, l))
            }
            OffspringKind::Empirical(pmf) => pmf
                .iter()
                .map(|&(k, p)| if k == 0 { 0.0 } else { p * k as f64 * pow_u32(s, k - 1) })
                .sum(),
        }
    }

    /// P[c1 <= X / E[X] <= c2], the mean-band event of the rescaling bound.
    /// Invariant under scaling: scaled(lambda, X) has the same band mass.
    pub fn prob_mean_band(&self, c1: f64, c2: f64) -> Result<f64> {
        let mean = self.mean();
        if mean == 0.0 {
            // X = 0 a.s.; X/E[X] undefined, band holds never.
            return Ok(0.0);
        }
        let lo = c1 * mean;
        let hi = c2 * mean;
        self.expect(|k| {
            let k = k as f64;
            if k >= lo - 1e-12 && k <= hi + 1e-12 {
                1.0
            } else {
                0.0
            }
        })
    }

    /// P[X > 0].
    pub fn prob_positive(&self) -> Result<f64> {
        Ok(1.0 - self.expect(|k| if k == 0 { 1.0 } else { 0.0 })?)
    }
}

fn pow_u32(s: f64, k: u32) -> f64 {
    // powi is exact enough here and much faster than powf.
    s.powi(k as i32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_stream;

    #[test]
    fn regular_tree_counts() {
        let t = regular_tree(2, 0).unwrap();
        assert_eq!(t.vertex_count(), 1);
        assert_eq!(t.edge_count(), 0);

        let t = regular_tree(2, 2).unwrap();
        assert_eq!(t.vertex_count(), 7); // 1 + 2 + 4
        let leaves: Vec<_> = (0..7).filter(|&v| t.children(v).is_empty()).collect();
        assert_eq!(leaves.len(), 4);
        assert!(leaves.iter().all(|&v| t.generation(v) == 2));

        let t = regular_tree(3, 3).unwrap();
        assert_eq!(t.vertex_count(), 40); // (3^4 - 1) / 2

        let t = regular_tree(1, 5).unwrap();
        assert_eq!(t.vertex_count(), 6); // path
    }

    #[test]
    fn regular_tree_structure() {
        let t = regular_tree(3, 2).unwrap();
        for v in 0..t.vertex_count() as u32 {
            if t.generation(v) < 2 {
                assert_eq!(t.children(v).len(), 3);
            } else {
                assert!(t.children(v).is_empty());
            }
            match t.parent(v) {
                None => assert_eq!(v, 0),
                Some(p) => assert_eq!(t.generation(v), t.generation(p) + 1),
            }
        }
        assert_eq!(t.edges().len(), t.vertex_count() - 1);
        assert_eq!(t.root_edges().len(), 3);
    }

    #[test]
    fn regular_tree_overflow_is_explicit() {
        let err = regular_tree(24, 8).unwrap_err();
        match err {
            Error::TreeTooLarge { d, n, vertices, .. } => {
                assert_eq!((d, n), (24, 8));
                assert!(vertices > 100_000_000_000);
            }
            other => panic!("expected TreeTooLarge, got {other}"),
        }
    }

    #[test]
    fn deterministic_gw_equals_regular() {
        let mut rng = derive_stream(3, 0);
        let dist = OffspringDistribution::deterministic(3);
        let gw = sample_gw_tree(&dist, 3, &mut rng).unwrap();
        let reg = regular_tree(3, 3).unwrap();
        assert_eq!(gw.vertex_count(), reg.vertex_count());
        for v in 0..gw.vertex_count() as u32 {
            assert_eq!(gw.parent(v), reg.parent(v));
            assert_eq!(gw.generation(v), reg.generation(v));
        }
    }

    #[test]
    fn gw_extinction_at_root() {
        let mut rng = derive_stream(4, 0);
        let dist = OffspringDistribution::empirical(vec![(0, 1.0)]).unwrap();
        let t = sample_gw_tree(&dist, 5, &mut rng).unwrap();
        assert_eq!(t.vertex_count(), 1);
    }

    #[test]
    fn gw_budget_is_enforced() {
        let mut rng = derive_stream(5, 0);
        let dist = OffspringDistribution::deterministic(10);
        let err = sample_gw_tree_with_budget(&dist, 8, 1000, &mut rng).unwrap_err();
        assert!(matches!(err, Error::VertexBudgetExceeded { budget: 1000 }));
    }

    #[test]
    fn gw_root_offspring_mean_poisson() {
        // Root child count over many draws matches the Poisson mean.
        let dist = OffspringDistribution::poisson(3.0).unwrap();
        let mut rng = derive_stream(42, 0);
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let t = sample_gw_tree(&dist, 2, &mut rng).unwrap();
            sum += t.children(0).len() as f64;
        }
        let mean = sum / n as f64;
        let se = (3.0 / n as f64).sqrt();
        assert!((mean - 3.0).abs() <= 3.0 * se, "mean {mean}");
    }

    #[test]
    fn gw_root_offspring_mean_scaled() {
        let base = OffspringDistribution::poisson(1.5).unwrap();
        let dist = OffspringDistribution::scaled(4, base).unwrap();
        assert_eq!(dist.mean(), 6.0);
        let mut rng = derive_stream(43, 0);
        let n = 100_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let k = dist.sample(&mut rng) as f64;
            sum += k;
            sumsq += k * k;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        let se = (var / n as f64).sqrt();
        assert!((mean - 6.0).abs() <= 3.0 * se, "mean {mean}");
    }

    #[test]
    fn generations_consistent_on_sampled_trees() {
        let dist = OffspringDistribution::poisson(2.0).unwrap();
        let mut rng = derive_stream(7, 0);
        for _ in 0..50 {
            let t = sample_gw_tree(&dist, 5, &mut rng).unwrap();
            for v in 1..t.vertex_count() as u32 {
                let p = t.parent(v).unwrap();
                assert_eq!(t.generation(v), t.generation(p) + 1);
                assert!(t.generation(v) <= 5);
                assert!(t.children(p).contains(&v));
            }
        }
    }

    #[test]
    fn text_round_trip() {
        let t = regular_tree(2, 3).unwrap();
        let text = t.to_text();
        let back = Tree::from_text(&text).unwrap();
        assert_eq!(back.vertex_count(), t.vertex_count());
        for v in 0..t.vertex_count() as u32 {
            assert_eq!(back.parent(v), t.parent(v));
            assert_eq!(back.generation(v), t.generation(v));
        }
        assert!(Tree::from_text("0 -1 0\n1 5 1\n").is_err());
        assert!(Tree::from_text("0 -1 0\n1 0 2\n").is_err());
    }

    #[test]
    fn moment_point_mass_and_empirical() {
        let d = OffspringDistribution::deterministic(7);
        assert_eq!(d.expect(|k| (k * k) as f64).unwrap(), 49.0);
        let e = OffspringDistribution::empirical(vec![(0, 0.25), (2, 0.75)]).unwrap();
        assert!((e.mean() - 1.5).abs() < 1e-15);
        assert!((e.pgf(0.5) - (0.25 + 0.75 * 0.25)).abs() < 1e-15);
    }

    #[test]
    fn empirical_validation() {
        assert!(OffspringDistribution::empirical(vec![(0, 0.5), (1, 0.6)]).is_err());
        assert!(OffspringDistribution::empirical(vec![(0, -0.1), (1, 1.1)]).is_err());
        assert!(OffspringDistribution::empirical(vec![(1, 0.5), (1, 0.5)]).is_err());
        assert!(OffspringDistribution::empirical_with_tolerance(vec![(0, 0.5), (1, 0.499)], 1e-2).is_ok());
    }

    #[test]
    fn poisson_pgf_closed_form_vs_series() {
        // Closed form exp(-mu (1 - s)) against the truncated-sum path.
        for &mu in &[0.5, 3.0, 17.0] {
            let dist = OffspringDistribution::poisson(mu).unwrap();
            for &s in &[0.1, (-0.25f64).exp(), 0.9, 1.0] {
                let closed = dist.pgf(s);
                let series = dist.expect(|k| s.powi(k as i32)).unwrap();
                let rel = (closed - series).abs() / closed.abs();
                assert!(rel <= 1e-10, "mu={mu} s={s} rel={rel}");
            }
        }
    }

    #[test]
    fn poisson_pgf_prime_closed_form_vs_series() {
        for &mu in &[0.5, 3.0, 17.0] {
            let dist = OffspringDistribution::poisson(mu).unwrap();
            for &s in &[0.3, 0.9, 1.02] {
                let closed = dist.pgf_prime(s);
                let series = dist
                    .expect(|k| if k == 0 { 0.0 } else { k as f64 * s.powi(k as i32 - 1) })
                    .unwrap();
                let rel = (closed - series).abs() / closed.abs();
                assert!(rel <= 1e-10, "mu={mu} s={s} rel={rel}");
            }
        }
    }

    #[test]
    fn scaled_pgf_consistency() {
        let base = OffspringDistribution::poisson(2.0).unwrap();
        let dist = OffspringDistribution::scaled(3, base).unwrap();
        let s: f64 = 0.8;
        let direct = dist.expect(|k| s.powi(k as i32)).unwrap();
        assert!((dist.pgf(s) - direct).abs() / direct <= 1e-10);
        let direct_prime = dist
            .expect(|k| if k == 0 { 0.0 } else { k as f64 * s.powi(k as i32 - 1) })
            .unwrap();
        assert!((dist.pgf_prime(s) - direct_prime).abs() / direct_prime <= 1e-10);
    }

    #[test]
    fn mean_band_probability() {
        let d = OffspringDistribution::deterministic(5);
        assert_eq!(d.prob_mean_band(1.0, 1.0).unwrap(), 1.0);
        assert_eq!(d.prob_mean_band(1.1, 2.0).unwrap(), 0.0);
        let p = OffspringDistribution::poisson(4.0).unwrap();
        // P[4 <= X <= 8] for Poisson(4)
        let direct: f64 = (4..=8)
            .map(|k| {
                let k = k as u64;
                (-4.0f64).exp() * 4.0f64.powi(k as i32) / (1..=k).map(|i| i as f64).product::<f64>()
            })
            .sum();
        assert!((p.prob_mean_band(1.0, 2.0).unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn serde_round_trip() {
        let dist = OffspringDistribution::scaled(4, OffspringDistribution::poisson(1.5).unwrap()).unwrap();
        let json = serde_json::to_string(&dist).unwrap();
        let back: OffspringDistribution = serde_json::from_str(&json).unwrap();
        assert_eq!(back, dist);
    }
}
