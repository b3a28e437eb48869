//! Loop partition of V x [0, beta)_per induced by a link configuration.
//!
//! Each vertex carries a time circle which is cut at the times of its
//! incident links, giving arcs. A link at time t on edge {x, y} wires the
//! four arc ends meeting at t: a cross connects (arc of x ending at t) to
//! (arc of y beginning at t) and (arc of y ending at t) to (arc of x
//! beginning at t) — trajectories keep their time direction; a bar connects
//! ends to ends and beginnings to beginnings — trajectories reverse. Loops
//! are the connected components of the arcs under this wiring, computed by
//! union-find. A vertex with no incident links keeps one full-circle arc.
//!
//! The wiring rule is the module's central correctness decision; the
//! `trace` submodule re-derives the partition by literally following
//! trajectories and is used to cross-validate it.

use crate::error::{Error, Result};
use crate::links::{LinkConfig, LinkKind};
use crate::trees::{Tree, VertexId};

/// Shared precomputation: per-vertex sorted incident-link events and the
/// position of every link in both endpoint event lists.
struct Wiring {
    /// Arc/event CSR offsets; vertex v owns slots off[v]..off[v+1].
    off: Vec<u32>,
    /// Incident link count per vertex (0 means a single full-circle arc).
    cnt: Vec<u32>,
    /// Per event slot: time, edge and per-edge link index.
    ev_time: Vec<f64>,
    ev_edge: Vec<u32>,
    ev_link: Vec<u32>,
    /// Per global link: event position within each endpoint's sorted list.
    pos_a: Vec<u32>,
    pos_b: Vec<u32>,
    /// Per-edge offsets into the global link index space.
    link_off: Vec<u32>,
    n_arcs: usize,
}

impl Wiring {
    fn build(tree: &Tree, config: &LinkConfig) -> Result<Wiring> {
        if config.edge_count() != tree.edge_count() {
            return Err(Error::EdgeCountMismatch {
                tree_edges: tree.edge_count(),
                config_edges: config.edge_count(),
            });
        }
        let nv = tree.vertex_count();
        let ne = tree.edge_count();
        let mut cnt = vec![0u32; nv];
        let mut link_off = vec![0u32; ne + 1];
        for e in 0..ne {
            let k = config.link_count(e as u32) as u32;
            link_off[e + 1] = link_off[e] + k;
            let (a, b) = tree.endpoints(e as u32);
            cnt[a as usize] += k;
            cnt[b as usize] += k;
        }
        let total_links = link_off[ne] as usize;
        // One arc per event, one full-circle arc for untouched vertices.
        let mut off = vec![0u32; nv + 1];
        for v in 0..nv {
            off[v + 1] = off[v] + cnt[v].max(1);
        }
        let n_arcs = off[nv] as usize;

        let mut ev_time = vec![0.0f64; n_arcs];
        let mut ev_edge = vec![u32::MAX; n_arcs];
        let mut ev_link = vec![0u32; n_arcs];
        let mut cursor: Vec<u32> = (0..nv).map(|v| off[v]).collect();
        for e in 0..ne {
            let (a, b) = tree.endpoints(e as u32);
            for (i, l) in config.links(e as u32).iter().enumerate() {
                for &v in &[a, b] {
                    let slot = cursor[v as usize] as usize;
                    ev_time[slot] = l.time;
                    ev_edge[slot] = e as u32;
                    ev_link[slot] = i as u32;
                    cursor[v as usize] += 1;
                }
            }
        }
        // Sort each vertex's events by (time, edge, link index); the
        // tie-break only matters for measure-zero coincidences across edges.
        let mut order: Vec<u32> = Vec::new();
        for v in 0..nv {
            let lo = off[v] as usize;
            let hi = lo + cnt[v] as usize;
            if hi - lo <= 1 {
                continue;
            }
            order.clear();
            order.extend(lo as u32..hi as u32);
            order.sort_by(|&i, &j| {
                let (i, j) = (i as usize, j as usize);
                ev_time[i]
                    .partial_cmp(&ev_time[j])
                    .unwrap()
                    .then(ev_edge[i].cmp(&ev_edge[j]))
                    .then(ev_link[i].cmp(&ev_link[j]))
            });
            let times: Vec<f64> = order.iter().map(|&i| ev_time[i as usize]).collect();
            let edges: Vec<u32> = order.iter().map(|&i| ev_edge[i as usize]).collect();
            let links: Vec<u32> = order.iter().map(|&i| ev_link[i as usize]).collect();
            ev_time[lo..hi].copy_from_slice(&times);
            ev_edge[lo..hi].copy_from_slice(&edges);
            ev_link[lo..hi].copy_from_slice(&links);
        }
        // Record where each link landed in both endpoint lists.
        let mut pos_a = vec![0u32; total_links];
        let mut pos_b = vec![0u32; total_links];
        for v in 0..nv {
            let lo = off[v] as usize;
            for j in 0..cnt[v] as usize {
                let slot = lo + j;
                let e = ev_edge[slot];
                if e == u32::MAX {
                    continue;
                }
                let g = (link_off[e as usize] + ev_link[slot]) as usize;
                let (a, _) = tree.endpoints(e);
                if v as u32 == a {
                    pos_a[g] = j as u32;
                } else {
                    pos_b[g] = j as u32;
                }
            }
        }
        Ok(Wiring { off, cnt, ev_time, ev_edge, ev_link, pos_a, pos_b, link_off, n_arcs })
    }

    /// Arc beginning at event j of vertex v.
    fn arc_begin(&self, v: VertexId, j: u32) -> u32 {
        self.off[v as usize] + j
    }

    /// Arc ending at event j of vertex v.
    fn arc_end(&self, v: VertexId, j: u32) -> u32 {
        let k = self.cnt[v as usize];
        self.off[v as usize] + (j + k - 1) % k
    }
}

struct Dsu {
    parent: Vec<u32>,
}

impl Dsu {
    fn new(n: usize) -> Dsu {
        Dsu { parent: (0..n as u32).collect() }
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let p = self.parent[x as usize];
            self.parent[x as usize] = self.parent[p as usize];
            x = p;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let ra = self.find(a);
        let rb = self.find(b);
        if ra != rb {
            self.parent[rb as usize] = ra;
        }
    }
}

/// Arc decomposition of the space-time cylinder with loop labels.
#[derive(Debug, Clone)]
pub struct LoopPartition {
    arc_vertex: Vec<VertexId>,
    arc_start: Vec<f64>,
    arc_end: Vec<f64>,
    vertex_arc_off: Vec<u32>,
    loop_of_arc: Vec<u32>,
    loop_count: usize,
    loop_max_generation: Vec<u32>,
    loop_contains_root: Vec<bool>,
}

/// Build the loop partition of `tree` under `config` by arc wiring.
pub fn build_loops(tree: &Tree, config: &LinkConfig) -> Result<LoopPartition> {
    let w = Wiring::build(tree, config)?;
    let nv = tree.vertex_count();
    let mut dsu = Dsu::new(w.n_arcs);

    for e in 0..tree.edge_count() as u32 {
        let (x, y) = tree.endpoints(e);
        for (i, l) in config.links(e).iter().enumerate() {
            let g = (w.link_off[e as usize] + i as u32) as usize;
            let jx = w.pos_a[g];
            let jy = w.pos_b[g];
            match l.kind {
                LinkKind::Cross => {
                    dsu.union(w.arc_end(x, jx), w.arc_begin(y, jy));
                    dsu.union(w.arc_end(y, jy), w.arc_begin(x, jx));
                }
                LinkKind::Bar => {
                    dsu.union(w.arc_end(x, jx), w.arc_end(y, jy));
                    dsu.union(w.arc_begin(x, jx), w.arc_begin(y, jy));
                }
            }
        }
    }

    // Compact labels in first-seen arc order, folding per-loop stats.
    let mut label_of_root = vec![u32::MAX; w.n_arcs];
    let mut loop_of_arc = vec![0u32; w.n_arcs];
    let mut loop_max_generation = Vec::new();
    let mut loop_contains_root = Vec::new();
    let mut arc_vertex = vec![0 as VertexId; w.n_arcs];
    let mut arc_start = vec![0.0f64; w.n_arcs];
    let mut arc_end = vec![0.0f64; w.n_arcs];

    for v in 0..nv {
        let lo = w.off[v] as usize;
        let k = w.cnt[v] as usize;
        let arcs = k.max(1);
        for j in 0..arcs {
            let arc = lo + j;
            arc_vertex[arc] = v as VertexId;
            if k == 0 {
                // Full circle; start == end marks the wrap.
                arc_start[arc] = 0.0;
                arc_end[arc] = 0.0;
            } else {
                arc_start[arc] = w.ev_time[lo + j];
                arc_end[arc] = w.ev_time[lo + (j + 1) % k];
            }
            let root = dsu.find(arc as u32);
            let label = if label_of_root[root as usize] == u32::MAX {
                let l = loop_max_generation.len() as u32;
                label_of_root[root as usize] = l;
                loop_max_generation.push(0);
                loop_contains_root.push(false);
                l
            } else {
                label_of_root[root as usize]
            };
            loop_of_arc[arc] = label;
            let g = tree.generation(v as VertexId);
            if g > loop_max_generation[label as usize] {
                loop_max_generation[label as usize] = g;
            }
            if v == 0 {
                loop_contains_root[label as usize] = true;
            }
        }
    }

    Ok(LoopPartition {
        arc_vertex,
        arc_start,
        arc_end,
        vertex_arc_off: w.off,
        loop_of_arc,
        loop_count: loop_max_generation.len(),
        loop_max_generation,
        loop_contains_root,
    })
}

impl LoopPartition {
    /// Number of loops L.
    pub fn loop_count(&self) -> usize {
        self.loop_count
    }

    pub fn arc_count(&self) -> usize {
        self.arc_vertex.len()
    }

    /// Loop labels of the arcs of vertex `v` (may repeat).
    pub fn loops_of_vertex(&self, v: VertexId) -> impl Iterator<Item = u32> + '_ {
        let lo = self.vertex_arc_off[v as usize] as usize;
        let hi = self.vertex_arc_off[v as usize + 1] as usize;
        self.loop_of_arc[lo..hi].iter().copied()
    }

    pub fn loop_max_generation(&self, label: u32) -> u32 {
        self.loop_max_generation[label as usize]
    }

    pub fn loop_contains_root(&self, label: u32) -> bool {
        self.loop_contains_root[label as usize]
    }

    /// Deepest generation reached by any loop that visits the root.
    pub fn root_reach(&self) -> u32 {
        self.loops_of_vertex(0)
            .map(|l| self.loop_max_generation[l as usize])
            .max()
            .unwrap_or(0)
    }

    /// Event that some loop visiting the root reaches generation m.
    pub fn event_reach(&self, m: u32) -> bool {
        self.root_reach() >= m
    }

    /// Event that some loop visiting `x` fails to reach generation m.
    pub fn event_fail(&self, x: VertexId, m: u32) -> bool {
        self.loops_of_vertex(x)
            .any(|l| self.loop_max_generation[l as usize] < m)
    }

    /// Debug dump, one line per arc: `loop_id vertex arc_start arc_end`.
    /// An arc with end <= start wraps through beta; start == end is the
    /// full circle of an untouched vertex.
    pub fn debug_dump(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::new();
        for arc in 0..self.arc_count() {
            writeln!(
                out,
                "{} {} {} {}",
                self.loop_of_arc[arc], self.arc_vertex[arc], self.arc_start[arc], self.arc_end[arc]
            )
            .unwrap();
        }
        out
    }
}

/// Loop counts of the root subtrees T_1..T_d, each computed as if only the
/// links on the subtree's own edges existed (root edges ignored).
pub fn subtree_loop_counts(tree: &Tree, config: &LinkConfig) -> Result<Vec<u64>> {
    let mut stripped = config.clone();
    for &e in &tree.root_edges() {
        while stripped.link_count(e) > 0 {
            stripped.remove_in_place(e, 0)?;
        }
    }
    let partition = build_loops(tree, &stripped)?;

    let children = tree.children(0);
    let mut subtree_of = vec![u32::MAX; tree.vertex_count()];
    for (j, &c) in children.iter().enumerate() {
        subtree_of[c as usize] = j as u32;
    }
    for v in 1..tree.vertex_count() {
        if subtree_of[v] == u32::MAX {
            let p = tree.parent(v as VertexId).unwrap();
            subtree_of[v] = subtree_of[p as usize];
        }
    }

    let mut counted = vec![false; partition.loop_count()];
    let mut counts = vec![0u64; children.len()];
    for arc in 0..partition.arc_count() {
        let v = partition.arc_vertex[arc];
        if v == 0 {
            continue;
        }
        let label = partition.loop_of_arc[arc] as usize;
        if !counted[label] {
            counted[label] = true;
            counts[subtree_of[v as usize] as usize] += 1;
        }
    }
    Ok(counts)
}

/// Exact evaluation of the loop-count sandwich
/// -sum N <= L - (sum L_Tj + 1) <= sum (|N - 1| - 1)
/// over the root-edge decomposition, in integer arithmetic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Prop1Check {
    pub holds: bool,
    pub lower_slack: i64,
    pub upper_slack: i64,
    /// Some(ok) when all root-edge counts are in {0, 1}: the sandwich
    /// collapses to the equality L - (sum + 1) = -sum N, checked exactly.
    pub equality: Option<bool>,
}

pub fn check_prop1(tree: &Tree, config: &LinkConfig) -> Result<Prop1Check> {
    let l = build_loops(tree, config)?.loop_count() as i64;
    let subtree_sum: i64 = subtree_loop_counts(tree, config)?.iter().map(|&c| c as i64).sum();
    let profile = crate::links::root_edge_profile(tree, config);
    let n_sum: i64 = profile.iter().map(|&k| k as i64).sum();
    let upper: i64 = profile.iter().map(|&k| (k as i64 - 1).abs() - 1).sum();

    let mid = l - (subtree_sum + 1);
    let lower_slack = mid - (-n_sum);
    let upper_slack = upper - mid;
    let equality = profile.iter().all(|&k| k <= 1).then(|| mid == -n_sum);
    let holds = lower_slack >= 0 && upper_slack >= 0 && equality.unwrap_or(true);
    Ok(Prop1Check { holds, lower_slack, upper_slack, equality })
}

/// Fast loop counting for the sampling hot paths.
///
/// Only vertices touched by at least one link are materialised; every
/// untouched vertex contributes exactly one singleton loop. Behaviour is
/// identical to `build_loops` (checked by tests); buffers are reused across
/// calls.
pub struct LoopCounter {
    epoch: u32,
    mark: Vec<u32>,
    local: Vec<u32>,
    edge_mark: Vec<u32>,
    edge_list: Vec<u32>,
    occ: Vec<u32>,
    cnt: Vec<u32>,
    off: Vec<u32>,
    cursor: Vec<u32>,
    /// Per event slot: (time, edge, global link index).
    events: Vec<(f64, u32, u32)>,
    pos_a: Vec<u32>,
    pos_b: Vec<u32>,
    parent: Vec<u32>,
    comp_max_gen: Vec<u32>,
}

/// Result of a fast count: total loop count and the deepest generation
/// reached by any loop through the root.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoopStats {
    pub loop_count: u64,
    pub root_reach: u32,
}

impl Default for LoopCounter {
    fn default() -> Self {
        Self::new()
    }
}

impl LoopCounter {
    pub fn new() -> LoopCounter {
        LoopCounter {
            epoch: 0,
            mark: Vec::new(),
            local: Vec::new(),
            edge_mark: Vec::new(),
            edge_list: Vec::new(),
            occ: Vec::new(),
            cnt: Vec::new(),
            off: Vec::new(),
            cursor: Vec::new(),
            events: Vec::new(),
            pos_a: Vec::new(),
            pos_b: Vec::new(),
            parent: Vec::new(),
            comp_max_gen: Vec::new(),
        }
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let p = self.parent[x as usize];
            self.parent[x as usize] = self.parent[p as usize];
            x = p;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let ra = self.find(a);
        let rb = self.find(b);
        if ra != rb {
            self.parent[rb as usize] = ra;
        }
    }

    pub fn count(&mut self, tree: &Tree, config: &LinkConfig) -> LoopStats {
        self.count_candidates(tree, config, 0..config.edge_count() as u32)
    }

    /// Count while inspecting only `candidates`, which must cover every
    /// edge carrying a link (duplicates and empty edges are fine). Lets a
    /// sampler with a link registry skip the empty bulk of a large tree.
    pub fn count_candidates(
        &mut self,
        tree: &Tree,
        config: &LinkConfig,
        candidates: impl IntoIterator<Item = u32>,
    ) -> LoopStats {
        self.count_impl(tree, config, candidates, true)
    }

    /// Loop count only; skips the per-component generation pass that the
    /// reach query needs. For proposal loops where only dL matters.
    pub fn count_loops_only(
        &mut self,
        tree: &Tree,
        config: &LinkConfig,
        candidates: impl IntoIterator<Item = u32>,
    ) -> u64 {
        self.count_impl(tree, config, candidates, false).loop_count
    }

    fn count_impl(
        &mut self,
        tree: &Tree,
        config: &LinkConfig,
        candidates: impl IntoIterator<Item = u32>,
        want_reach: bool,
    ) -> LoopStats {
        debug_assert_eq!(tree.edge_count(), config.edge_count());
        let nv = tree.vertex_count();
        if self.mark.len() < nv {
            self.mark.resize(nv, 0);
            self.local.resize(nv, 0);
        }
        let ne = tree.edge_count();
        if self.edge_mark.len() < ne {
            self.edge_mark.resize(ne, 0);
        }
        self.epoch += 1;
        if self.epoch == 0 {
            // Wrapped; clear stamps once per 2^32 calls.
            self.mark.iter_mut().for_each(|m| *m = 0);
            self.edge_mark.iter_mut().for_each(|m| *m = 0);
            self.epoch = 1;
        }
        let epoch = self.epoch;

        // Collect occupied edges and vertices with incident counts.
        self.edge_list.clear();
        self.occ.clear();
        self.cnt.clear();
        let mut total_links = 0u32;
        for e in candidates {
            if self.edge_mark[e as usize] == epoch {
                continue;
            }
            self.edge_mark[e as usize] = epoch;
            let k = config.link_count(e) as u32;
            if k == 0 {
                continue;
            }
            self.edge_list.push(e);
            total_links += k;
            let (a, b) = tree.endpoints(e);
            for &v in &[a, b] {
                let vi = v as usize;
                if self.mark[vi] != epoch {
                    self.mark[vi] = epoch;
                    self.local[vi] = self.occ.len() as u32;
                    self.occ.push(v);
                    self.cnt.push(0);
                }
                self.cnt[self.local[vi] as usize] += k;
            }
        }
        let n_occ = self.occ.len();
        if n_occ == 0 {
            return LoopStats { loop_count: nv as u64, root_reach: 0 };
        }

        self.off.clear();
        self.off.push(0);
        for i in 0..n_occ {
            let prev = self.off[i];
            self.off.push(prev + self.cnt[i]);
        }
        let n_arcs = self.off[n_occ] as usize;
        self.events.clear();
        self.events.resize(n_arcs, (0.0, 0, 0));
        self.pos_a.clear();
        self.pos_a.resize(total_links as usize, 0);
        self.pos_b.clear();
        self.pos_b.resize(total_links as usize, 0);

        // Fill events, then sort each occupied vertex's slice in place.
        self.cursor.clear();
        self.cursor.extend_from_slice(&self.off[..n_occ]);
        let mut link_base = 0u32;
        for idx in 0..self.edge_list.len() {
            let e = self.edge_list[idx];
            let links = config.links(e);
            let (a, b) = tree.endpoints(e);
            for (i, l) in links.iter().enumerate() {
                for &v in &[a, b] {
                    let li = self.local[v as usize] as usize;
                    self.events[self.cursor[li] as usize] = (l.time, e, link_base + i as u32);
                    self.cursor[li] += 1;
                }
            }
            link_base += links.len() as u32;
        }
        for i in 0..n_occ {
            let lo = self.off[i] as usize;
            let hi = self.off[i + 1] as usize;
            if hi - lo > 1 {
                self.events[lo..hi].sort_unstable_by(|x, y| {
                    x.0.partial_cmp(&y.0).unwrap().then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2))
                });
            }
            for j in 0..hi - lo {
                let (_, e, g) = self.events[lo + j];
                let (a, _) = tree.endpoints(e);
                if self.occ[i] == a {
                    self.pos_a[g as usize] = j as u32;
                } else {
                    self.pos_b[g as usize] = j as u32;
                }
            }
        }

        self.parent.clear();
        self.parent.extend(0..n_arcs as u32);
        let mut g = 0u32;
        for idx in 0..self.edge_list.len() {
            let e = self.edge_list[idx];
            let links = config.links(e);
            let (x, y) = tree.endpoints(e);
            let (lx, ly) = (self.local[x as usize] as usize, self.local[y as usize] as usize);
            let (kx, ky) = (self.cnt[lx], self.cnt[ly]);
            let (ox, oy) = (self.off[lx], self.off[ly]);
            for l in links {
                let jx = self.pos_a[g as usize];
                let jy = self.pos_b[g as usize];
                let beg_x = ox + jx;
                let end_x = ox + (jx + kx - 1) % kx;
                let beg_y = oy + jy;
                let end_y = oy + (jy + ky - 1) % ky;
                match l.kind {
                    LinkKind::Cross => {
                        self.union(end_x, beg_y);
                        self.union(end_y, beg_x);
                    }
                    LinkKind::Bar => {
                        self.union(end_x, end_y);
                        self.union(beg_x, beg_y);
                    }
                }
                g += 1;
            }
        }

        // Component count; per-component max generation only when the
        // reach query is wanted.
        let mut components = 0u64;
        let root_reach = if want_reach {
            self.comp_max_gen.clear();
            self.comp_max_gen.resize(n_arcs, 0);
            for i in 0..n_occ {
                let gen = tree.generation(self.occ[i]);
                let lo = self.off[i];
                let hi = self.off[i + 1];
                for arc in lo..hi {
                    let r = self.find(arc);
                    if r == arc {
                        components += 1;
                    }
                    let slot = r as usize;
                    if gen > self.comp_max_gen[slot] {
                        self.comp_max_gen[slot] = gen;
                    }
                }
            }
            if self.mark[0] == epoch {
                let li = self.local[0] as usize;
                let lo = self.off[li];
                let hi = self.off[li + 1];
                let mut reach = 0;
                for arc in lo..hi {
                    let r = self.find(arc);
                    reach = reach.max(self.comp_max_gen[r as usize]);
                }
                reach
            } else {
                0
            }
        } else {
            for arc in 0..n_arcs as u32 {
                if self.find(arc) == arc {
                    components += 1;
                }
            }
            0
        };

        LoopStats { loop_count: (nv - n_occ) as u64 + components, root_reach }
    }
}

/// Literal trajectory tracing: the independent oracle for the wiring rule.
///
/// Follows the parametrisation step by step — move along a vertex in the
/// current time direction, jump at each link, keep direction on a cross,
/// reverse on a bar — and collects loops as the orbits of that walk.
/// Quadratic-ish and allocation-heavy; meant for small configurations.
pub mod trace {
    use super::*;

    #[derive(Clone, Copy, PartialEq, Eq)]
    enum Dir {
        Up,
        Down,
    }

    /// Per-arc loop labels and the loop count, by pure trajectory tracing.
    pub fn label_arcs(tree: &Tree, config: &LinkConfig) -> Result<(Vec<u32>, usize)> {
        let w = Wiring::build(tree, config)?;
        let n_arcs = w.n_arcs;
        let mut label = vec![u32::MAX; n_arcs];
        let mut loops = 0u32;

        for start in 0..n_arcs as u32 {
            if label[start as usize] != u32::MAX {
                continue;
            }
            let this = loops;
            loops += 1;
            let mut arc = start;
            let mut dir = Dir::Up;
            loop {
                label[arc as usize] = this;
                let (next_arc, next_dir) = step(tree, config, &w, arc, dir);
                if next_arc == start && next_dir == Dir::Up {
                    break;
                }
                arc = next_arc;
                dir = next_dir;
            }
        }
        Ok((label, loops as usize))
    }

    fn vertex_of_arc(w: &Wiring, arc: u32) -> (VertexId, u32) {
        // Binary search the CSR offsets for the owning vertex.
        let v = match w.off.binary_search(&arc) {
            Ok(mut i) => {
                while i + 1 < w.off.len() && w.off[i + 1] == arc {
                    i += 1;
                }
                i
            }
            Err(i) => i - 1,
        };
        (v as VertexId, arc - w.off[v])
    }

    fn step(tree: &Tree, config: &LinkConfig, w: &Wiring, arc: u32, dir: Dir) -> (u32, Dir) {
        let (v, j) = vertex_of_arc(w, arc);
        let k = w.cnt[v as usize];
        if k == 0 {
            // Untouched vertex: the full circle closes on itself.
            return (arc, Dir::Up);
        }
        // Moving up exits the arc at its end event; moving down at its start.
        let exit = match dir {
            Dir::Up => (j + 1) % k,
            Dir::Down => j,
        };
        let slot = (w.off[v as usize] + exit) as usize;
        let e = w.ev_edge[slot];
        let i = w.ev_link[slot];
        let (a, b) = tree.endpoints(e);
        let other = if v == a { b } else { a };
        let g = (w.link_off[e as usize] + i) as usize;
        let jo = if other == a { w.pos_a[g] } else { w.pos_b[g] };
        let kind = config.links(e)[i as usize].kind;
        match (dir, kind) {
            (Dir::Up, LinkKind::Cross) => (w.arc_begin(other, jo), Dir::Up),
            (Dir::Up, LinkKind::Bar) => (w.arc_end(other, jo), Dir::Down),
            (Dir::Down, LinkKind::Cross) => (w.arc_end(other, jo), Dir::Down),
            (Dir::Down, LinkKind::Bar) => (w.arc_begin(other, jo), Dir::Up),
        }
    }

    /// Loop count by tracing.
    pub fn count_loops(tree: &Tree, config: &LinkConfig) -> Result<usize> {
        Ok(label_arcs(tree, config)?.1)
    }

    /// Deepest generation reached by any loop through the root, by tracing.
    pub fn root_reach(tree: &Tree, config: &LinkConfig) -> Result<u32> {
        let w = Wiring::build(tree, config)?;
        let (labels, loops) = label_arcs(tree, config)?;
        let mut max_gen = vec![0u32; loops];
        let mut has_root = vec![false; loops];
        for v in 0..tree.vertex_count() {
            let lo = w.off[v] as usize;
            let hi = lo + w.cnt[v].max(1) as usize;
            for &label in &labels[lo..hi] {
                let l = label as usize;
                max_gen[l] = max_gen[l].max(tree.generation(v as VertexId));
                if v == 0 {
                    has_root[l] = true;
                }
            }
        }
        Ok(max_gen
            .iter()
            .zip(&has_root)
            .filter(|&(_, &root)| root)
            .map(|(&gen, _)| gen)
            .max()
            .unwrap_or(0))
    }
}
