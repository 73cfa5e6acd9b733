//! Free field sampling and level-set clusters on the cable system.
//!
//! Given the vertex values, the field on distinct edges and killing cables
//! is conditionally independent: along an edge it is a Brownian bridge (in
//! resistance time, variance rate 2) between the endpoint values, and along a
//! killing cable it is a bridge from the vertex value to `0`. Whether an edge
//! or a whole cable stays above a level is therefore a Bernoulli variable
//! with an explicit parameter, and clusters of `{φ ≥ h}` on the cable system
//! can be explored exactly from vertex values alone.

use std::cell::RefCell;
use std::collections::{HashMap, HashSet, VecDeque};
use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, InverseGaussian, StandardNormal};
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::graph::{Locus, RefinedGraph, Segment, WeightedGraph};
use crate::potential::{kernel_capacity, CableGreen, CablePoint, GreenKernel, GreenOperator};
use crate::rng::{splitmix64, Purpose, StreamKey};

/// Something a crossing decision is attached to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Link {
    Edge(usize),
    Cable(usize),
}

/// One realization of the field on the vertices of a graph.
///
/// Crossing decisions are drawn on first use from the sample's stream and
/// then frozen, so repeated queries for the same `(link, h)` agree.
pub struct FieldSample<'g> {
    graph: &'g WeightedGraph,
    values: Vec<f64>,
    key: StreamKey,
    salt: u64,
    crossings: RefCell<HashMap<(Link, u64), bool>>,
}

impl std::fmt::Debug for FieldSample<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FieldSample").field("key", &self.key).field("values", &self.values).finish()
    }
}

impl<'g> FieldSample<'g> {
    /// Wraps given vertex values; crossing decisions use `key`.
    pub fn from_values(graph: &'g WeightedGraph, values: Vec<f64>, key: StreamKey) -> Result<Self> {
        if values.len() != graph.len() {
            return Err(Error::GraphMismatch(format!("{} values for {} vertices", values.len(), graph.len())));
        }
        Ok(FieldSample { graph, values, key, salt: 0, crossings: RefCell::default() })
    }

    pub fn graph(&self) -> &'g WeightedGraph {
        self.graph
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, x: usize) -> f64 {
        self.values[x]
    }

    pub fn key(&self) -> StreamKey {
        self.key
    }

    /// `−φ` with fresh crossing randomness.
    pub fn negated(&self) -> FieldSample<'g> {
        FieldSample {
            graph: self.graph,
            values: self.values.iter().map(|v| -v).collect(),
            key: self.key,
            salt: splitmix64(self.salt ^ 0x6e65_6761_7465),
            crossings: RefCell::default(),
        }
    }

    fn decide(&self, link: Link, h: f64, p: f64) -> bool {
        if p <= 0.0 {
            return false;
        }
        let k = (link, h.to_bits());
        if let Some(&d) = self.crossings.borrow().get(&k) {
            return d;
        }
        let (purpose, id) = match link {
            Link::Edge(e) => (Purpose::Crossing, e as u64),
            Link::Cable(x) => (Purpose::CableEscape, x as u64),
        };
        let salt = splitmix64(self.salt ^ splitmix64(id ^ splitmix64(h.to_bits())));
        let u: f64 = self.key.rng(purpose, salt).random();
        let d = u < p;
        self.crossings.borrow_mut().insert(k, d);
        d
    }

    /// Whether the open edge `e` stays above `h`.
    pub fn crosses(&self, e: usize, h: f64) -> bool {
        let edge = self.graph.edge(e);
        let p = level_crossing_prob(self.values[edge.a], self.values[edge.b], edge.weight, h);
        self.decide(Link::Edge(e), h, p)
    }

    /// Whether the whole killing cable of `x` stays above `h`.
    pub fn cable_survives(&self, x: usize, h: f64) -> bool {
        let k = self.graph.kappa(x);
        if k <= 0.0 || self.values[x] <= h {
            return false;
        }
        let p = cable_escape_prob(self.values[x], k, h).unwrap_or(0.0);
        self.decide(Link::Cable(x), h, p)
    }
}

fn standard_normals<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Exact sample of the discrete field with covariance `G`.
pub fn sample_field<'g>(green: &'g GreenOperator, key: StreamKey) -> Result<FieldSample<'g>> {
    let n = green.graph().len();
    let z = standard_normals(&mut key.rng(Purpose::Field, 0), n);
    let values = green.sample_from_normals(&z)?;
    FieldSample::from_values(green.graph(), values, key)
}

/// Same as [`sample_field`] but driven by `−z`; the result is `−φ` of the
/// sample with the same key, with its own crossing randomness.
pub fn sample_field_negated<'g>(green: &'g GreenOperator, key: StreamKey) -> Result<FieldSample<'g>> {
    Ok(sample_field(green, key)?.negated())
}

fn same_graph(a: &WeightedGraph, b: &WeightedGraph) -> bool {
    a.len() == b.len() && a.edges() == b.edges() && a.kappas() == b.kappas()
}

/// Fills the interior points of a refinement given vertex values.
///
/// `noise(link, k)` supplies the standard normal for the `k`-th point of the
/// chain of `link`; the map from `(values, noise)` to the refined field is
/// linear, which the covariance checks exploit.
pub fn fill_refined<F: FnMut(Link, usize) -> f64>(values: &[f64], refined: &RefinedGraph, mut noise: F) -> Vec<f64> {
    let base = refined.base();
    let mut out = vec![0.0; refined.graph().len()];
    out[..base.len()].copy_from_slice(values);
    for (e, edge) in base.edges().iter().enumerate() {
        let chain = refined.edge_chain(e);
        if chain.len() <= 2 {
            continue;
        }
        let n = chain.len() - 1;
        let len = edge.rho();
        let target = values[edge.b];
        let mut prev = values[edge.a];
        let mut s = 0.0;
        for (k, &v) in chain[1..n].iter().enumerate() {
            let t = len * (k + 1) as f64 / n as f64;
            let mean = prev + (target - prev) * (t - s) / (len - s);
            let var = 2.0 * (t - s) * (len - t) / (len - s);
            prev = mean + var.sqrt() * noise(Link::Edge(e), k);
            out[v] = prev;
            s = t;
        }
    }
    for x in 0..base.len() {
        let chain = refined.cable_chain(x);
        if chain.len() <= 1 {
            continue;
        }
        let n = chain.len();
        let len = base.cable_rho(x);
        let mut prev = values[x];
        let mut s = 0.0;
        for (k, &v) in chain[1..].iter().enumerate() {
            let t = len * (k + 1) as f64 / n as f64;
            let mean = prev * (len - t) / (len - s);
            let var = 2.0 * (t - s) * (len - t) / (len - s);
            prev = mean + var.sqrt() * noise(Link::Cable(x), k);
            out[v] = prev;
            s = t;
        }
    }
    out
}

/// Extends a base sample to a refinement by conditionally independent
/// bridges; the joint law equals direct sampling on the refined graph.
pub fn sample_refined_field<'r>(coarse: &FieldSample<'_>, refined: &'r RefinedGraph) -> Result<FieldSample<'r>> {
    if !same_graph(coarse.graph(), refined.base()) {
        return Err(Error::GraphMismatch("field was not sampled on the refinement's base graph".into()));
    }
    let key = coarse.key;
    let salt = coarse.salt;
    // one generator per chain keeps values independent of visiting order
    let mut current: Option<(Link, rand_chacha::ChaCha8Rng)> = None;
    let values = fill_refined(&coarse.values, refined, |link, _| {
        if current.as_ref().map(|(l, _)| *l) != Some(link) {
            let id = match link {
                Link::Edge(e) => 2 * e as u64,
                Link::Cable(x) => 2 * x as u64 + 1,
            };
            current = Some((link, key.rng(Purpose::Bridge, splitmix64(salt ^ splitmix64(id)))));
        }
        current.as_mut().unwrap().1.sample(StandardNormal)
    });
    let mut sample = FieldSample::from_values(refined.graph(), values, key)?;
    sample.salt = splitmix64(salt ^ ((refined.n_edge() as u64) << 32 | refined.n_cable() as u64));
    Ok(sample)
}

/// Probability that the bridge on an edge of weight `λ` between values `a`
/// and `b` stays strictly above `h`.
pub fn level_crossing_prob(a: f64, b: f64, lambda: f64, h: f64) -> f64 {
    if a > h && b > h {
        -(-2.0 * lambda * (a - h) * (b - h)).exp_m1()
    } else {
        0.0
    }
}

/// Probability that the whole killing cable (rate `κ`) of a vertex with
/// value `a > h` stays above `h`; the cable ends at value `0`.
pub fn cable_escape_prob(a: f64, kappa: f64, h: f64) -> Result<f64> {
    if !(kappa > 0.0) {
        return Err(Error::InvalidArgument(format!("cable escape needs κ > 0, got {kappa}")));
    }
    if h >= 0.0 || a <= h {
        return Ok(0.0);
    }
    Ok(-(-2.0 * kappa * (a - h) * (-h)).exp_m1())
}

/// Capacity value, with `+∞` kept as a separate case.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Capacity {
    Finite(f64),
    Infinite,
}

impl Capacity {
    pub fn is_finite(&self) -> bool {
        matches!(self, Capacity::Finite(_))
    }

    /// The value as a float, `f64::INFINITY` for the infinite case.
    pub fn as_f64(&self) -> f64 {
        match *self {
            Capacity::Finite(c) => c,
            Capacity::Infinite => f64::INFINITY,
        }
    }
}

impl Serialize for Capacity {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Capacity::Finite(c) => s.serialize_f64(*c),
            Capacity::Infinite => s.serialize_str("inf"),
        }
    }
}

/// Whether the killing cable of a member stayed above the level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct CableRecord {
    pub vertex: usize,
    pub survived: bool,
}

/// Cluster of a root in `{φ ≥ h}`, seen on the vertices of one graph.
#[derive(Clone, Debug, Serialize)]
pub struct ClusterReport {
    pub root: usize,
    pub level: f64,
    /// Sorted member vertices.
    pub members: Vec<usize>,
    /// Sorted indices of edges along which the cluster passes.
    pub crossed_edges: Vec<usize>,
    pub cables: Vec<CableRecord>,
    pub compact: bool,
    pub capacity: Option<Capacity>,
    /// `(n_edge, n_cable)` of the graph explored; `(1, 0)` for a base graph.
    pub refinement: (u32, u32),
}

impl ClusterReport {
    fn empty(root: usize, level: f64, refinement: (u32, u32)) -> Self {
        ClusterReport {
            root,
            level,
            members: Vec::new(),
            crossed_edges: Vec::new(),
            cables: Vec::new(),
            compact: true,
            capacity: Some(Capacity::Finite(0.0)),
            refinement,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Explores the cluster of `x0` in `{φ ≥ h}` on the cable system of the
/// field's graph.
///
/// Edges are crossed with [`level_crossing_prob`]; for `h < 0` every member
/// with positive killing has its cable tested with [`cable_escape_prob`] and
/// a surviving cable makes the cluster non-compact.
pub fn explore_cluster(field: &FieldSample<'_>, x0: usize, h: f64) -> Result<ClusterReport> {
    let g = field.graph();
    if x0 >= g.len() {
        return Err(Error::IndexOutOfRange(x0));
    }
    if field.value(x0) < h {
        return Ok(ClusterReport::empty(x0, h, (1, 0)));
    }
    let mut member = vec![false; g.len()];
    let mut seen_edge = vec![false; g.edges().len()];
    let mut members = vec![x0];
    let mut crossed = Vec::new();
    member[x0] = true;
    let mut queue = VecDeque::from([x0]);
    while let Some(v) = queue.pop_front() {
        for &(w, e) in g.neighbors(v) {
            if seen_edge[e] || field.value(w) < h {
                continue;
            }
            seen_edge[e] = true;
            if field.crosses(e, h) {
                crossed.push(e);
                if !member[w] {
                    member[w] = true;
                    members.push(w);
                    queue.push_back(w);
                }
            }
        }
    }
    members.sort_unstable();
    crossed.sort_unstable();
    let cables: Vec<CableRecord> = members
        .iter()
        .filter(|&&x| g.kappa(x) > 0.0)
        .map(|&x| CableRecord { vertex: x, survived: h < 0.0 && field.cable_survives(x, h) })
        .collect();
    let compact = cables.iter().all(|c| !c.survived);
    Ok(ClusterReport {
        root: x0,
        level: h,
        members,
        crossed_edges: crossed,
        cables,
        compact,
        capacity: if compact { None } else { Some(Capacity::Infinite) },
        refinement: (1, 0),
    })
}

/// Samples the refined field and explores the cluster of base vertex `x0`
/// on the refined graph.
pub fn explore_refined_cluster<'r>(
    coarse: &FieldSample<'_>,
    refined: &'r RefinedGraph,
    x0: usize,
    h: f64,
) -> Result<(FieldSample<'r>, ClusterReport)> {
    if x0 >= refined.base().len() {
        return Err(Error::IndexOutOfRange(x0));
    }
    let field = if coarse.value(x0) < h {
        // the refined values are never looked at
        FieldSample::from_values(refined.graph(), vec![f64::NEG_INFINITY; refined.graph().len()], coarse.key)?
    } else {
        sample_refined_field(coarse, refined)?
    };
    let mut report = if coarse.value(x0) < h {
        ClusterReport::empty(x0, h, (1, 0))
    } else {
        explore_cluster(&field, x0, h)?
    };
    report.refinement = (refined.n_edge(), refined.n_cable());
    Ok((field, report))
}

/// Vertices of a member set that touch its complement or the cemetery:
/// the support of the equilibrium measure.
pub fn outer_boundary(graph: &WeightedGraph, members: &[usize]) -> Vec<usize> {
    let mut inside = vec![false; graph.len()];
    for &x in members {
        inside[x] = true;
    }
    members
        .iter()
        .copied()
        .filter(|&x| graph.kappa(x) > 0.0 || graph.neighbors(x).iter().any(|&(y, _)| !inside[y]))
        .collect()
}

/// Capacity of an explored cluster: `+∞` if it is not compact, otherwise the
/// discrete capacity of its member set under `kernel`, whose indices must be
/// those of `graph` (the graph the report was explored or projected on).
pub fn cluster_capacity<K: GreenKernel + ?Sized>(
    report: &ClusterReport,
    graph: &WeightedGraph,
    kernel: &K,
) -> Result<Capacity> {
    if !report.compact {
        return Ok(Capacity::Infinite);
    }
    if report.members.is_empty() {
        return Ok(Capacity::Finite(0.0));
    }
    let support = outer_boundary(graph, &report.members);
    Ok(Capacity::Finite(kernel_capacity(kernel, &support)?))
}

/// Position of the first zero of a Brownian bridge (variance rate 2) that
/// starts at `a > 0` and ends at `b` after resistance `len`, conditioned to
/// hit zero.
///
/// With `s = τ/(len − τ)`, the hitting position `τ` has an inverse Gaussian
/// law with mean `a/|b|` and shape `a²/(2 len)`, degenerating to a Lévy law
/// when `b = 0`.
pub fn bridge_first_passage<R: Rng>(rng: &mut R, a: f64, b: f64, len: f64) -> f64 {
    let shape = a * a / (2.0 * len);
    let s = if b == 0.0 {
        let z: f64 = rng.sample(StandardNormal);
        shape / (z * z)
    } else {
        match InverseGaussian::new(a / b.abs(), shape) {
            Ok(d) => d.sample(rng),
            Err(_) => 0.0,
        }
    };
    if s.is_infinite() {
        return len;
    }
    (len * s / (1.0 + s)).min(len)
}

/// Stub ends closer than this to their member are merged into it.
const STUB_MERGE: f64 = 1e-10;

fn locus_coordinate(refined: &RefinedGraph, v: usize) -> f64 {
    match refined.locus(v) {
        Locus::Vertex(_) => 0.0,
        Locus::Edge { t, .. } | Locus::Cable { t, .. } => t,
    }
}

/// Exact capacity of the cluster on the cable system, including the partial
/// sub-edges ("stubs") that leave the refined member set.
///
/// Along a sub-edge the cluster is not fully crossing, the field restricted
/// to it is a bridge conditioned to reach the level, and the cluster ends at
/// its first passage, sampled by [`bridge_first_passage`]. When both ends are
/// members the second stub is sampled from the remaining bridge. The
/// equilibrium measure of the resulting cable set sits on the stub ends, so
/// its capacity is `1ᵀ G_S⁻¹ 1` with the closed-form cable kernel.
///
/// `field` must be the refined field the report was explored on.
pub fn cable_cluster_capacity(
    report: &ClusterReport,
    field: &FieldSample<'_>,
    refined: &RefinedGraph,
    kernel: &CableGreen,
) -> Result<Capacity> {
    let rg = refined.graph();
    if !same_graph(field.graph(), rg) {
        return Err(Error::GraphMismatch("field does not live on the refined graph".into()));
    }
    if !report.compact {
        return Ok(Capacity::Infinite);
    }
    if report.members.is_empty() {
        return Ok(Capacity::Finite(0.0));
    }
    let h = report.level;
    let mut inside = vec![false; rg.len()];
    for &z in &report.members {
        inside[z] = true;
    }
    let crossed: HashSet<usize> = report.crossed_edges.iter().copied().collect();
    let mut merged = vec![false; rg.len()];
    let mut points: Vec<CablePoint> = Vec::new();
    let mut stub = |z: usize, segment: Option<Segment>, t_z: f64, dir: f64, tau: f64, points: &mut Vec<CablePoint>| {
        if tau <= STUB_MERGE {
            if !std::mem::replace(&mut merged[z], true) {
                points.push(refined.locus(z).into());
            }
        } else if let Some(seg) = segment {
            points.push(CablePoint::on(seg, t_z + dir * tau));
        }
    };
    for &z in &report.members {
        let a = field.value(z) - h;
        for &(w, e) in rg.neighbors(z) {
            if crossed.contains(&e) || (inside[w] && w < z) {
                continue;
            }
            let len = rg.edge(e).rho();
            let span = refined.span(e);
            let (t_z, t_w) = if rg.edge(e).a == z { (span.t_a, span.t_b) } else { (span.t_b, span.t_a) };
            let dir = (t_w - t_z).signum();
            let b = field.value(w) - h;
            let mut rng = field.key.rng(Purpose::Stub, splitmix64(field.salt ^ splitmix64(e as u64)));
            let tau = bridge_first_passage(&mut rng, a, b, len);
            stub(z, Some(span.segment), t_z, dir, tau, &mut points);
            if inside[w] {
                let back = bridge_first_passage(&mut rng, b, 0.0, len - tau);
                stub(w, Some(span.segment), t_w, -dir, back, &mut points);
            }
        }
        if rg.kappa(z) > 0.0 {
            // the rest of the killing cable, ending at value 0
            let len = 0.5 / rg.kappa(z);
            let x = match refined.locus(z) {
                Locus::Vertex(x) | Locus::Cable { vertex: x, .. } => x,
                Locus::Edge { .. } => return Err(Error::GraphMismatch("killed point inside an edge".into())),
            };
            let mut rng = field.key.rng(Purpose::Stub, splitmix64(field.salt ^ splitmix64(!(x as u64))));
            let tau = bridge_first_passage(&mut rng, a, -h, len);
            stub(z, Some(Segment::Cable(x)), locus_coordinate(refined, z), 1.0, tau, &mut points);
        }
    }
    let kernel = kernel.with_points(points);
    let all: Vec<usize> = (0..kernel.points().len()).collect();
    Ok(Capacity::Finite(kernel_capacity(&kernel, &all)?))
}

/// Restricts a report explored on `fine` to the points of a coarser
/// refinement `coarse` of the same base graph.
///
/// A coarse sub-edge is crossed exactly when all fine sub-edges inside it
/// are, so the projection has the law of an exploration on `coarse`.
pub fn project_report(report: &ClusterReport, fine: &RefinedGraph, coarse: &RefinedGraph) -> Result<ClusterReport> {
    let map = coarse.embed_into(fine)?;
    let mut projected = ClusterReport::empty(report.root, report.level, (coarse.n_edge(), coarse.n_cable()));
    if report.members.is_empty() {
        return Ok(projected);
    }
    let fine_members: HashSet<usize> = report.members.iter().copied().collect();
    let fine_crossed: HashSet<usize> = report.crossed_edges.iter().copied().collect();
    let base = coarse.base();
    let me = (fine.n_edge() / coarse.n_edge()) as usize;
    let mc = ((fine.n_cable() + 1) / (coarse.n_cable() + 1)) as usize;
    projected.members = (0..map.len()).filter(|&c| fine_members.contains(&map[c])).collect();
    let all_crossed = |edges: &[usize]| edges.iter().all(|e| fine_crossed.contains(e));
    let mut crossed = Vec::new();
    for e in 0..base.edges().len() {
        let fine_edges = fine.edge_chain_edges(e);
        for (k, &ce) in coarse.edge_chain_edges(e).iter().enumerate() {
            if all_crossed(&fine_edges[k * me..(k + 1) * me]) {
                crossed.push(ce);
            }
        }
    }
    let fine_survived: HashMap<usize, bool> = report.cables.iter().map(|c| (c.vertex, c.survived)).collect();
    let mut cables = Vec::new();
    for x in 0..base.len() {
        let fine_edges = fine.cable_chain_edges(x);
        for (k, &ce) in coarse.cable_chain_edges(x).iter().enumerate() {
            if all_crossed(&fine_edges[k * mc..(k + 1) * mc]) {
                crossed.push(ce);
            }
        }
        if base.kappa(x) > 0.0 {
            let coarse_chain = coarse.cable_chain(x);
            let terminal = *coarse_chain.last().unwrap();
            if fine_members.contains(&map[terminal]) {
                let from = (coarse_chain.len() - 1) * mc;
                let fine_terminal = *fine.cable_chain(x).last().unwrap();
                let survived = all_crossed(&fine_edges[from..])
                    && fine_survived.get(&fine_terminal).copied().unwrap_or(false);
                cables.push(CableRecord { vertex: terminal, survived });
            }
        }
    }
    crossed.sort_unstable();
    cables.sort_unstable_by_key(|c| c.vertex);
    projected.crossed_edges = crossed;
    projected.compact = cables.iter().all(|c| !c.survived);
    projected.cables = cables;
    projected.capacity = if projected.compact { None } else { Some(Capacity::Infinite) };
    Ok(projected)
}

/// Writes `(sample_id, vertex, phi)` rows, with a header if `header`.
pub fn write_field_csv<W: Write>(w: &mut csv::Writer<W>, sample_id: u64, field: &FieldSample<'_>, header: bool) -> Result<()> {
    if header {
        w.write_record(["sample_id", "vertex", "phi"])?;
    }
    for (x, v) in field.values().iter().enumerate() {
        w.write_record([sample_id.to_string(), field.graph().id(x).to_string(), format!("{v:.17e}")])?;
    }
    Ok(())
}

/// Writes a `(sample_id, level, n_vertices, compact, capacity)` row.
pub fn write_cluster_csv<W: Write>(w: &mut csv::Writer<W>, sample_id: u64, report: &ClusterReport, header: bool) -> Result<()> {
    if header {
        w.write_record(["sample_id", "level", "n_vertices", "compact", "capacity"])?;
    }
    let cap = match report.capacity {
        Some(Capacity::Finite(c)) => format!("{c:.17e}"),
        Some(Capacity::Infinite) => "inf".to_string(),
        None => String::new(),
    };
    w.write_record([
        sample_id.to_string(),
        report.level.to_string(),
        report.members.len().to_string(),
        report.compact.to_string(),
        cap,
    ])?;
    Ok(())
}
