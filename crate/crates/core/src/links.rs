//! Cross/bar Poisson link processes on tree edges over the time circle
//! [0, beta).
//!
//! Sampling conditions on counts first (one Poisson draw per edge for the
//! total, crosses marked with probability u) and then places i.i.d. uniform
//! times, which realises the superposition of the two intensity-u and
//! intensity-(1-u) processes. Colliding times are resampled so per-edge
//! lists stay strictly increasing.

use crate::error::{Error, Result};
use crate::rng;
use crate::trees::{EdgeId, Tree};
use rand::Rng;
use std::fmt::Write as _;

/// Model parameters: loop weight theta >= 1, time-interval length beta > 0,
/// cross intensity fraction u in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    pub theta: f64,
    pub beta: f64,
    pub u: f64,
}

impl ModelParams {
    pub fn new(theta: f64, beta: f64, u: f64) -> Result<ModelParams> {
        if !theta.is_finite() || theta < 1.0 {
            return Err(Error::InvalidParams(format!("theta must be >= 1, got {theta}")));
        }
        if !beta.is_finite() || beta <= 0.0 {
            return Err(Error::InvalidParams(format!("beta must be > 0, got {beta}")));
        }
        if !u.is_finite() || !(0.0..=1.0).contains(&u) {
            return Err(Error::InvalidParams(format!("u must be in [0, 1], got {u}")));
        }
        Ok(ModelParams { theta, beta, u })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkKind {
    /// Trajectories continue in the same time direction.
    Cross,
    /// Trajectories reverse time direction.
    Bar,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Link {
    pub time: f64,
    pub kind: LinkKind,
}

/// Per-edge, time-sorted link lists. Edge ids match the `Tree` the
/// configuration was sampled for. Values are immutable once sampled;
/// mutation-style operations return new values.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkConfig {
    per_edge: Vec<Vec<Link>>,
}

impl LinkConfig {
    pub fn empty(edge_count: usize) -> LinkConfig {
        LinkConfig { per_edge: vec![Vec::new(); edge_count] }
    }

    pub fn edge_count(&self) -> usize {
        self.per_edge.len()
    }

    pub fn links(&self, e: EdgeId) -> &[Link] {
        &self.per_edge[e as usize]
    }

    pub fn link_count(&self, e: EdgeId) -> usize {
        self.per_edge[e as usize].len()
    }

    pub fn total_links(&self) -> usize {
        self.per_edge.iter().map(|l| l.len()).sum()
    }

    /// New configuration with `link` inserted on edge `e`, preserving
    /// sortedness. Fails on an exact duplicate time.
    pub fn with_inserted(&self, e: EdgeId, link: Link) -> Result<LinkConfig> {
        let mut next = self.clone();
        next.insert_in_place(e, link)?;
        Ok(next)
    }

    /// New configuration with link `index` of edge `e` removed.
    pub fn with_removed(&self, e: EdgeId, index: usize) -> Result<(LinkConfig, Link)> {
        let mut next = self.clone();
        let link = next.remove_in_place(e, index)?;
        Ok((next, link))
    }

    /// Builder-style in-place insert keeping the list sorted; the
    /// value-semantics counterpart is `with_inserted`.
    pub fn insert_in_place(&mut self, e: EdgeId, link: Link) -> Result<()> {
        let list = &mut self.per_edge[e as usize];
        match list.binary_search_by(|l| l.time.partial_cmp(&link.time).unwrap()) {
            Ok(_) => Err(Error::DuplicateLinkTime { edge: e, time: link.time }),
            Err(pos) => {
                list.insert(pos, link);
                Ok(())
            }
        }
    }

    /// Builder-style in-place removal; see `with_removed`.
    pub fn remove_in_place(&mut self, e: EdgeId, index: usize) -> Result<Link> {
        let list = &mut self.per_edge[e as usize];
        if index >= list.len() {
            return Err(Error::LinkIndexOutOfRange { edge: e, index, len: list.len() });
        }
        Ok(list.remove(index))
    }

    /// Text serialization: one line per link, `edge_id time kind` with kind
    /// X (cross) or B (bar). Round-trips exactly; times print with Rust's
    /// shortest round-trip float formatting.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (e, list) in self.per_edge.iter().enumerate() {
            for l in list {
                let kind = match l.kind {
                    LinkKind::Cross => "X",
                    LinkKind::Bar => "B",
                };
                writeln!(out, "{} {} {}", e, l.time, kind).unwrap();
            }
        }
        out
    }

    pub fn from_text(text: &str, edge_count: usize) -> Result<LinkConfig> {
        let mut config = LinkConfig::empty(edge_count);
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut it = line.split_whitespace();
            let e: usize = it
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Parse(format!("line {}: bad edge id", lineno + 1)))?;
            let time: f64 = it
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Parse(format!("line {}: bad time", lineno + 1)))?;
            let kind = match it.next() {
                Some("X") => LinkKind::Cross,
                Some("B") => LinkKind::Bar,
                other => return Err(Error::Parse(format!("line {}: bad kind {:?}", lineno + 1, other))),
            };
            if e >= edge_count {
                return Err(Error::Parse(format!("line {}: edge {} out of range", lineno + 1, e)));
            }
            config.insert_in_place(e as EdgeId, Link { time, kind })?;
        }
        Ok(config)
    }
}

/// Sample the cross/bar processes on every edge of `tree`:
/// total count per edge ~ Poisson(beta), each link a cross with
/// probability u, times i.i.d. uniform on [0, beta).
pub fn sample_links<R: Rng + ?Sized>(tree: &Tree, params: &ModelParams, rng: &mut R) -> LinkConfig {
    let mut config = LinkConfig::empty(tree.edge_count());
    for e in 0..tree.edge_count() {
        sample_edge(&mut config.per_edge[e], params, rng);
    }
    config
}

/// Resample every edge of an existing configuration in place, reusing its
/// buffers. Produces the same law as `sample_links`.
pub fn resample_links_into<R: Rng + ?Sized>(
    config: &mut LinkConfig,
    params: &ModelParams,
    rng: &mut R,
) {
    for list in &mut config.per_edge {
        sample_edge(list, params, rng);
    }
}

fn sample_edge<R: Rng + ?Sized>(list: &mut Vec<Link>, params: &ModelParams, rng: &mut R) {
    list.clear();
    let k = rng::poisson(rng, params.beta);
    if k == 0 {
        return;
    }
    for _ in 0..k {
        list.push(Link { time: rng::uniform_time(rng, params.beta), kind: LinkKind::Cross });
    }
    list.sort_by(|a, b| a.time.partial_cmp(&b.time).unwrap());
    // Simultaneous times have probability zero; resample the colliding draw
    // (exact bit equality) to keep strict ordering without changing the law.
    loop {
        let mut collided = false;
        for i in 1..list.len() {
            if list[i].time == list[i - 1].time {
                list[i].time = rng::uniform_time(rng, params.beta);
                collided = true;
            }
        }
        if !collided {
            break;
        }
        list.sort_by(|a, b| a.time.partial_cmp(&b.time).unwrap());
    }
    for l in list.iter_mut() {
        l.kind = if rng.random::<f64>() < params.u { LinkKind::Cross } else { LinkKind::Bar };
    }
}

/// Link counts on the edges from the root to each of its children, in child
/// order. The root-edge pattern events (all <= 1, all = 0, per-subset
/// patterns) are derived from this vector by the caller.
pub fn root_edge_profile(tree: &Tree, config: &LinkConfig) -> Vec<u32> {
    tree.root_edges()
        .iter()
        .map(|&e| config.link_count(e) as u32)
        .collect()
}
