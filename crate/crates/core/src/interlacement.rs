//! Random interlacements on finite transient graphs.
//!
//! On a finite graph every interlacement trajectory enters through the
//! killing cable of some vertex and leaves through another one, so at level
//! `u` the trajectories are a Poisson number, with mean `u·Σκ`, of killed
//! walks started from `κ/Σκ`. Nothing else is needed: the backward and
//! forward halves of doubly infinite paths never materialize.
//!
//! [`build_coupled_field`] combines a sample with an independent free field
//! into the signed field `σ̂_x √(2ℓ_x + φ_x²)`, which has the law of
//! `φ + √(2u)`.

use std::io::Write;

use petgraph::unionfind::UnionFind;
use rand::Rng;
use rand_distr::{Distribution, Exp, Gamma, Poisson};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gff::{FieldSample, Link};
use crate::graph::WeightedGraph;
use crate::rng::{Purpose, StreamKey};

/// Default cap on the number of steps of a single excursion.
pub const DEFAULT_MAX_STEPS: usize = 1_000_000;

/// A killed walk: the vertices visited in order and the time spent at each.
#[derive(Clone, Debug, Default, Serialize)]
pub struct Excursion {
    pub path: Vec<usize>,
    pub holding: Vec<f64>,
}

impl Excursion {
    pub fn start(&self) -> usize {
        self.path[0]
    }

    /// Vertex through whose killing cable the walk left.
    pub fn end(&self) -> usize {
        self.path[self.path.len() - 1]
    }
}

/// Trace of the interlacement at level `u` on the vertices and edges.
#[derive(Clone, Debug, Serialize)]
pub struct InterlacementSample {
    pub u: f64,
    pub excursions: Vec<Excursion>,
    /// Total local time per vertex.
    pub ell: Vec<f64>,
    /// Edges traversed by some excursion.
    pub crossed_edges: Vec<bool>,
    /// Vertices whose killing cable some excursion used, on entry or exit.
    pub crossed_cables: Vec<bool>,
}

impl InterlacementSample {
    pub fn len(&self) -> usize {
        self.ell.len()
    }

    pub fn is_empty(&self) -> bool {
        self.excursions.is_empty()
    }

    pub fn visited(&self, x: usize) -> bool {
        self.ell[x] > 0.0
    }

    /// Sorted list of visited vertices.
    pub fn visited_set(&self) -> Vec<usize> {
        (0..self.ell.len()).filter(|&x| self.visited(x)).collect()
    }

    /// Whether no excursion visits `set`.
    pub fn avoids(&self, set: &[usize]) -> bool {
        set.iter().all(|&x| !self.visited(x))
    }

    /// The crossed edges and cables, edges first.
    pub fn crossed(&self) -> Vec<Link> {
        let edges = self.crossed_edges.iter().enumerate().filter(|(_, &c)| c).map(|(e, _)| Link::Edge(e));
        let cables = self.crossed_cables.iter().enumerate().filter(|(_, &c)| c).map(|(x, _)| Link::Cable(x));
        edges.chain(cables).collect()
    }
}

// Per vertex: cumulative jump distribution over neighbors, remainder = kill.
struct JumpTable {
    rates: Vec<f64>,
    cumulative: Vec<Vec<f64>>,
}

impl JumpTable {
    fn new(g: &WeightedGraph) -> Self {
        let rates: Vec<f64> = (0..g.len()).map(|x| g.total_rate(x)).collect();
        let cumulative = (0..g.len())
            .map(|x| {
                let mut acc = 0.0;
                g.neighbors(x)
                    .iter()
                    .map(|&(_, e)| {
                        acc += g.edge(e).weight / rates[x];
                        acc
                    })
                    .collect()
            })
            .collect();
        JumpTable { rates, cumulative }
    }

    // index into neighbors(x), or None for killing
    fn jump<R: Rng>(&self, rng: &mut R, x: usize) -> Option<usize> {
        let u: f64 = rng.random();
        let c = &self.cumulative[x];
        let k = c.partition_point(|&p| p <= u);
        (k < c.len()).then_some(k)
    }
}

/// Reusable sampler for one graph.
pub struct InterlacementSampler<'g> {
    graph: &'g WeightedGraph,
    table: JumpTable,
    total_kappa: f64,
    start_cumulative: Vec<f64>,
    last_killed: usize,
    max_steps: usize,
}

impl<'g> InterlacementSampler<'g> {
    pub fn new(graph: &'g WeightedGraph) -> Result<Self> {
        graph.ensure_finite_killing()?;
        let total_kappa: f64 = graph.kappas().iter().sum();
        if !(total_kappa > 0.0) {
            return Err(Error::NotTransient);
        }
        let mut acc = 0.0;
        let start_cumulative = graph
            .kappas()
            .iter()
            .map(|k| {
                acc += k / total_kappa;
                acc
            })
            .collect();
        Ok(InterlacementSampler {
            graph,
            table: JumpTable::new(graph),
            total_kappa,
            start_cumulative,
            last_killed: graph.kappas().iter().rposition(|&k| k > 0.0).unwrap_or(0),
            max_steps: DEFAULT_MAX_STEPS,
        })
    }

    pub fn with_max_steps(mut self, max_steps: usize) -> Self {
        self.max_steps = max_steps;
        self
    }

    pub fn graph(&self) -> &'g WeightedGraph {
        self.graph
    }

    fn check_level(&self, u: f64) -> Result<()> {
        if !(u > 0.0) || !u.is_finite() {
            return Err(Error::InvalidArgument(format!("level u must be positive, got {u}")));
        }
        Ok(())
    }

    fn start<R: Rng>(&self, rng: &mut R) -> usize {
        let v: f64 = rng.random();
        // round-off can leave the last entry just below 1
        self.start_cumulative.partition_point(|&p| p <= v).min(self.last_killed)
    }

    /// Runs the jump chain of one excursion, calling `visit` on every vertex
    /// and `cross` on every edge traversed. Returns the killing vertex.
    fn walk<R: Rng>(&self, rng: &mut R, mut visit: impl FnMut(usize), mut cross: impl FnMut(usize)) -> Result<usize> {
        let mut x = self.start(rng);
        let mut steps = 0;
        loop {
            visit(x);
            steps += 1;
            if steps > self.max_steps {
                return Err(Error::TrajectoryOverflow(self.max_steps));
            }
            match self.table.jump(rng, x) {
                Some(k) => {
                    let (y, e) = self.graph.neighbors(x)[k];
                    cross(e);
                    x = y;
                }
                None => return Ok(x),
            }
        }
    }

    fn count<R: Rng>(&self, rng: &mut R, u: f64) -> usize {
        let mean = u * self.total_kappa;
        match Poisson::new(mean) {
            Ok(p) => p.sample(rng) as usize,
            Err(_) => 0,
        }
    }

    /// Full sample with trajectories and explicit holding times.
    pub fn sample(&self, u: f64, key: StreamKey) -> Result<InterlacementSample> {
        self.check_level(u)?;
        let g = self.graph;
        let mut rng = key.rng(Purpose::Excursions, 0);
        let n = self.count(&mut rng, u);
        let mut ell = vec![0.0; g.len()];
        let mut crossed_edges = vec![false; g.edges().len()];
        let mut crossed_cables = vec![false; g.len()];
        let mut excursions = Vec::with_capacity(n);
        for _ in 0..n {
            let mut path = Vec::new();
            let end = self.walk(&mut rng, |x| path.push(x), |e| crossed_edges[e] = true)?;
            let holding: Vec<f64> = path
                .iter()
                .map(|&x| Exp::new(self.table.rates[x]).map(|d| d.sample(&mut rng)).unwrap_or(0.0))
                .collect();
            for (&x, &t) in path.iter().zip(&holding) {
                ell[x] += t;
            }
            crossed_cables[path[0]] = true;
            crossed_cables[end] = true;
            excursions.push(Excursion { path, holding });
        }
        Ok(InterlacementSample { u, excursions, ell, crossed_edges, crossed_cables })
    }

    /// Local times only: visits are counted along the jump chain and the
    /// time at `x` is drawn at once as `Gamma(visits_x, 1/λ_x)`.
    pub fn local_times(&self, u: f64, key: StreamKey) -> Result<Vec<f64>> {
        self.check_level(u)?;
        let g = self.graph;
        let mut rng = key.rng(Purpose::Excursions, 1);
        let n = self.count(&mut rng, u);
        let mut visits = vec![0u64; g.len()];
        for _ in 0..n {
            self.walk(&mut rng, |x| visits[x] += 1, |_| ())?;
        }
        Ok(visits
            .iter()
            .zip(&self.table.rates)
            .map(|(&k, &rate)| {
                if k == 0 {
                    0.0
                } else {
                    Gamma::new(k as f64, 1.0 / rate).map(|d| d.sample(&mut rng)).unwrap_or(0.0)
                }
            })
            .collect())
    }
}

/// Samples the interlacement at level `u` on `g`.
pub fn sample_interlacement(g: &WeightedGraph, u: f64, key: StreamKey) -> Result<InterlacementSample> {
    InterlacementSampler::new(g)?.sample(u, key)
}

/// Probability that an edge or killing cable not already crossed joins the
/// coupling set, given field values and local times.
pub fn inclusion_prob(g: &WeightedGraph, link: Link, phi: &[f64], ell: &[f64], u: f64) -> f64 {
    match link {
        Link::Edge(e) => {
            let edge = g.edge(e);
            edge_inclusion_prob(edge.weight, phi[edge.a], phi[edge.b], ell[edge.a], ell[edge.b])
        }
        Link::Cable(x) => vertex_inclusion_prob(g.kappa(x), phi[x], ell[x], u),
    }
}

/// `1 − exp(−λ(φ_xφ_y + √((φ_x²+2ℓ_x)(φ_y²+2ℓ_y))))`.
pub fn edge_inclusion_prob(lambda: f64, phi_x: f64, phi_y: f64, ell_x: f64, ell_y: f64) -> f64 {
    let root = ((phi_x * phi_x + 2.0 * ell_x) * (phi_y * phi_y + 2.0 * ell_y)).sqrt();
    let exponent = (lambda * (phi_x * phi_y + root)).max(0.0);
    -(-exponent).exp_m1()
}

/// `1 − exp(−κ√(2u(φ_x²+2ℓ_x)))`.
pub fn vertex_inclusion_prob(kappa: f64, phi: f64, ell: f64, u: f64) -> f64 {
    let exponent = kappa * (2.0 * u * (phi * phi + 2.0 * ell)).sqrt();
    -(-exponent).exp_m1()
}

/// Free field and interlacement glued by random signs.
#[derive(Clone, Debug, Serialize)]
pub struct CoupledField {
    pub u: f64,
    pub phi: Vec<f64>,
    pub ell: Vec<f64>,
    /// Edges in the coupling set.
    pub edges: Vec<bool>,
    /// Vertices whose killing cable is in the coupling set.
    pub cables: Vec<bool>,
    /// Cluster label per vertex: the smallest vertex of its cluster.
    pub cluster: Vec<usize>,
    pub signs: Vec<i8>,
    pub psi: Vec<f64>,
}

impl CoupledField {
    /// Whether the sign at `x` was forced to `+1`.
    pub fn is_forced(&self, x: usize) -> bool {
        self.forced_roots().contains(&self.cluster[x])
    }

    fn forced_roots(&self) -> Vec<usize> {
        let mut roots: Vec<usize> = (0..self.phi.len())
            .filter(|&x| self.ell[x] > 0.0 || self.cables[x])
            .map(|x| self.cluster[x])
            .collect();
        roots.sort_unstable();
        roots.dedup();
        roots
    }
}

/// Builds `ψ_x = σ̂_x √(2ℓ_x + φ_x²)`.
///
/// Crossed edges and cables are always in the coupling set, the others join
/// independently with [`inclusion_prob`]. Clusters of the coupling set that
/// contain a visited vertex or an included cable get sign `+1`, the others
/// i.i.d. uniform signs, drawn in order of their smallest vertex.
pub fn build_coupled_field(phi: &FieldSample<'_>, sample: &InterlacementSample, key: StreamKey) -> Result<CoupledField> {
    let g = phi.graph();
    if sample.len() != g.len() || sample.crossed_edges.len() != g.edges().len() {
        return Err(Error::GraphMismatch("interlacement sample and field live on different graphs".into()));
    }
    let u = sample.u;
    let values = phi.values();
    let ell = &sample.ell;
    let mut rng = key.rng(Purpose::Inclusion, 0);
    let edges: Vec<bool> = (0..g.edges().len())
        .map(|e| {
            let p = inclusion_prob(g, Link::Edge(e), values, ell, u);
            let draw: f64 = rng.random();
            sample.crossed_edges[e] || draw < p
        })
        .collect();
    let cables: Vec<bool> = (0..g.len())
        .map(|x| {
            let p = inclusion_prob(g, Link::Cable(x), values, ell, u);
            let draw: f64 = rng.random();
            sample.crossed_cables[x] || draw < p
        })
        .collect();

    let mut uf = UnionFind::<usize>::new(g.len());
    for (e, edge) in g.edges().iter().enumerate() {
        if edges[e] {
            uf.union(edge.a, edge.b);
        }
    }
    // relabel by smallest member so the labels do not depend on union order
    let mut smallest = vec![usize::MAX; g.len()];
    for x in 0..g.len() {
        let r = uf.find(x);
        smallest[r] = smallest[r].min(x);
    }
    let cluster: Vec<usize> = (0..g.len()).map(|x| smallest[uf.find(x)]).collect();

    let mut forced = vec![false; g.len()];
    for x in 0..g.len() {
        if ell[x] > 0.0 || cables[x] {
            forced[cluster[x]] = true;
        }
    }
    let mut sign_rng = key.rng(Purpose::Signs, 0);
    let mut root_sign = vec![0i8; g.len()];
    for x in 0..g.len() {
        if cluster[x] == x {
            root_sign[x] = if forced[x] || sign_rng.random::<bool>() { 1 } else { -1 };
        }
    }
    let signs: Vec<i8> = cluster.iter().map(|&c| root_sign[c]).collect();
    let psi = (0..g.len()).map(|x| f64::from(signs[x]) * (2.0 * ell[x] + values[x] * values[x]).sqrt()).collect();
    Ok(CoupledField { u, phi: values.to_vec(), ell: ell.clone(), edges, cables, cluster, signs, psi })
}

/// `ℓ_x + φ_x²/2` per vertex.
pub fn squared_iso_pair(phi: &FieldSample<'_>, sample: &InterlacementSample) -> Result<Vec<f64>> {
    if sample.len() != phi.graph().len() {
        return Err(Error::GraphMismatch("interlacement sample and field live on different graphs".into()));
    }
    Ok(phi.values().iter().zip(&sample.ell).map(|(p, l)| l + p * p / 2.0).collect())
}

/// Writes `(sample_id, vertex, ell)` rows.
pub fn write_local_times_csv<W: Write>(
    w: &mut csv::Writer<W>,
    sample_id: u64,
    graph: &WeightedGraph,
    ell: &[f64],
    header: bool,
) -> Result<()> {
    if header {
        w.write_record(["sample_id", "vertex", "ell"])?;
    }
    for (x, l) in ell.iter().enumerate() {
        w.write_record([sample_id.to_string(), graph.id(x).to_string(), format!("{l:.17e}")])?;
    }
    Ok(())
}

/// Writes `(sample_id, vertex, psi)` rows.
pub fn write_psi_csv<W: Write>(
    w: &mut csv::Writer<W>,
    sample_id: u64,
    graph: &WeightedGraph,
    field: &CoupledField,
    header: bool,
) -> Result<()> {
    if header {
        w.write_record(["sample_id", "vertex", "psi"])?;
    }
    for (x, p) in field.psi.iter().enumerate() {
        w.write_record([sample_id.to_string(), graph.id(x).to_string(), format!("{p:.17e}")])?;
    }
    Ok(())
}

/// Writes one JSON line per excursion.
pub fn write_excursions_jsonl<W: Write>(mut w: W, sample_id: u64, sample: &InterlacementSample) -> Result<()> {
    for (k, exc) in sample.excursions.iter().enumerate() {
        let line = serde_json::json!({ "sample_id": sample_id, "excursion": k, "path": exc.path, "holding": exc.holding });
        writeln!(w, "{line}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytics::{chi_square_poisson, ks_two_sample, mean_stderr};
    use crate::graph::{generate_graph, GraphFamily};
    use crate::potential::{capacity_green_inverse, green_operator};
    use crate::gff::sample_field;

    fn grid(side: usize, kappa: f64) -> WeightedGraph {
        generate_graph(&GraphFamily::Grid { d: 2, side, lambda: 1.0, kappa, boundary_kappa: None }).unwrap()
    }

    #[test]
    fn rejects_bad_level_and_no_killing() {
        let g = grid(3, 0.5);
        assert!(sample_interlacement(&g, 0.0, StreamKey::new(0, 0)).is_err());
        assert!(sample_interlacement(&g, -1.0, StreamKey::new(0, 0)).is_err());
        let dead = g.with_kappa(vec![0.0; g.len()]).ok();
        if let Some(dead) = dead {
            assert!(InterlacementSampler::new(&dead).is_err());
        }
    }

    #[test]
    fn tiny_level_is_empty() {
        let g = grid(3, 0.5);
        let s = sample_interlacement(&g, 1e-12, StreamKey::new(3, 0)).unwrap();
        assert!(s.is_empty());
        assert!(s.ell.iter().all(|&l| l == 0.0));
    }

    #[test]
    fn structural_invariants() {
        let g = grid(4, 0.3);
        let sampler = InterlacementSampler::new(&g).unwrap();
        for i in 0..200 {
            let s = sampler.sample(1.0, StreamKey::new(5, i)).unwrap();
            for exc in &s.excursions {
                assert!(g.kappa(exc.start()) > 0.0);
                assert!(s.crossed_cables[exc.start()] && s.crossed_cables[exc.end()]);
                for w in exc.path.windows(2) {
                    let e = g.edge_between(w[0], w[1]).unwrap();
                    assert!(s.crossed_edges[e]);
                }
            }
            for x in 0..g.len() {
                let on_path = s.excursions.iter().any(|e| e.path.contains(&x));
                assert_eq!(s.visited(x), on_path);
            }
        }
    }

    #[test]
    fn trajectory_cap_is_enforced() {
        let g = generate_graph(&GraphFamily::Grid { d: 1, side: 200, lambda: 1.0, kappa: 1e-6, boundary_kappa: None }).unwrap();
        let sampler = InterlacementSampler::new(&g).unwrap().with_max_steps(5);
        let mut hit = false;
        for i in 0..20 {
            if let Err(Error::TrajectoryOverflow(5)) = sampler.sample(1e5, StreamKey::new(1, i)) {
                hit = true;
            }
        }
        assert!(hit);
    }

    #[test]
    fn mean_local_time_is_level() {
        let g = grid(3, 0.5);
        let sampler = InterlacementSampler::new(&g).unwrap();
        let u = 0.7;
        let samples: Vec<Vec<f64>> = (0..20_000).map(|i| sampler.sample(u, StreamKey::new(8, i)).unwrap().ell).collect();
        for x in 0..g.len() {
            let col: Vec<f64> = samples.iter().map(|s| s[x]).collect();
            let (m, se) = mean_stderr(&col);
            assert!((m - u).abs() <= 4.0 * se, "x={x}: {m} vs {u} (se {se})");
        }
    }

    #[test]
    fn excursion_count_is_poisson() {
        let g = grid(3, 0.5);
        let sampler = InterlacementSampler::new(&g).unwrap();
        let u = 0.4;
        let counts: Vec<u64> = (0..5000).map(|i| sampler.sample(u, StreamKey::new(9, i)).unwrap().excursions.len() as u64).collect();
        let r = chi_square_poisson(&counts, u * 4.5).unwrap().at_alpha(0.001);
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn vacancy_matches_capacity() {
        let g = grid(4, 0.5);
        let green = green_operator(&g).unwrap();
        let k = [5, 6, 9, 10];
        let cap = capacity_green_inverse(&green, &k).unwrap();
        let u = 0.3;
        let sampler = InterlacementSampler::new(&g).unwrap();
        let m = 20_000;
        let hits = (0..m).filter(|&i| sampler.sample(u, StreamKey::new(10, i)).unwrap().avoids(&k)).count();
        let p = hits as f64 / m as f64;
        let q = (-u * cap).exp();
        let se = (q * (1.0 - q) / m as f64).sqrt();
        assert!((p - q).abs() <= 4.0 * se, "{p} vs {q}");
    }

    #[test]
    fn gamma_path_has_same_law() {
        let g = grid(3, 0.5);
        let sampler = InterlacementSampler::new(&g).unwrap();
        let u = 1.0;
        let n = 4000;
        let full: Vec<f64> = (0..n).map(|i| sampler.sample(u, StreamKey::new(11, i)).unwrap().ell[4]).collect();
        let fast: Vec<f64> = (0..n).map(|i| sampler.local_times(u, StreamKey::new(12, i)).unwrap()[4]).collect();
        let r = ks_two_sample(&full, &fast).unwrap().at_alpha(0.001);
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn inclusion_prob_examples() {
        let lam = 0.8;
        let (a, b) = (0.7, 1.3);
        let p = edge_inclusion_prob(lam, a, b, 0.0, 0.0);
        assert!((p - (1.0 - (-2.0 * lam * a * b).exp())).abs() < 1e-15);
        assert_eq!(edge_inclusion_prob(lam, 0.0, 2.0, 0.0, 1.0), 0.0);
        assert_eq!(edge_inclusion_prob(lam, -0.5, 0.5, 0.0, 0.0), 0.0);
        assert_eq!(vertex_inclusion_prob(0.0, 1.0, 1.0, 1.0), 0.0);
        assert!(vertex_inclusion_prob(1.0, 1.0, 0.0, 1.0) > 0.0);
    }

    #[test]
    fn coupled_field_invariants() {
        let g = grid(4, 0.5);
        let green = green_operator(&g).unwrap();
        let sampler = InterlacementSampler::new(&g).unwrap();
        for i in 0..300 {
            let key = StreamKey::new(13, i);
            let phi = sample_field(&green, key).unwrap();
            let s = sampler.sample(1.0, key).unwrap();
            let c = build_coupled_field(&phi, &s, key).unwrap();
            for (e, edge) in g.edges().iter().enumerate() {
                if s.crossed_edges[e] {
                    assert!(c.edges[e]);
                }
                if c.edges[e] {
                    assert_eq!(c.signs[edge.a], c.signs[edge.b]);
                    assert_eq!(c.cluster[edge.a], c.cluster[edge.b]);
                }
            }
            for x in 0..g.len() {
                if s.visited(x) || c.cables[x] {
                    assert_eq!(c.signs[x], 1);
                    assert!(c.is_forced(x));
                }
                let want = (2.0 * s.ell[x] + phi.value(x).powi(2)).sqrt();
                assert!((c.psi[x].abs() - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn squared_pair_without_excursions() {
        let g = grid(3, 0.5);
        let green = green_operator(&g).unwrap();
        let phi = sample_field(&green, StreamKey::new(1, 1)).unwrap();
        let s = sample_interlacement(&g, 1e-12, StreamKey::new(1, 1)).unwrap();
        let v = squared_iso_pair(&phi, &s).unwrap();
        for x in 0..g.len() {
            assert_eq!(v[x], phi.value(x).powi(2) / 2.0);
        }
    }

    #[test]
    fn csv_and_jsonl_dumps() {
        let g = grid(2, 1.0);
        let s = sample_interlacement(&g, 2.0, StreamKey::new(2, 0)).unwrap();
        let mut w = csv::Writer::from_writer(Vec::new());
        write_local_times_csv(&mut w, 0, &g, &s.ell, true).unwrap();
        let text = String::from_utf8(w.into_inner().unwrap()).unwrap();
        assert_eq!(text.lines().count(), 1 + g.len());
        let mut buf = Vec::new();
        write_excursions_jsonl(&mut buf, 0, &s).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), s.excursions.len());
    }
}
