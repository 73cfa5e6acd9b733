//! Green operator, equilibrium measures and capacities.
//!
//! For a finite transient graph the killed Laplacian
//! `M = diag(λ_x) − (λ_{x,y})` is symmetric positive definite and the Green
//! function is `G = M⁻¹`. Capacities are available through two independent
//! routes: the escape probabilities of [`equilibrium_measure`] (one sparse
//! Dirichlet solve on the complement) and the Green-matrix inverse of
//! [`capacity_green_inverse`].
//!
//! [`CableGreen`] evaluates the Green function of the cable system at
//! arbitrary points of edges and killing cables in closed form from the
//! Green matrix of the base graph.

use std::collections::HashMap;
use std::io::Write;
use std::sync::{Arc, Mutex};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{Locus, RefinedGraph, Segment, WeightedGraph};
use crate::linalg::{DenseCholesky, SparseSym, SpdSolver};

/// Threshold below which [`capacity_green_inverse`] refuses to invert.
pub const RCOND_THRESHOLD: f64 = 1e-13;

#[derive(Clone, Copy, Debug)]
pub struct GreenOptions {
    /// Largest system factored directly; bigger ones use conjugate gradients.
    pub direct_limit: usize,
    pub cg_tol: f64,
    /// Number of Green columns kept in the cache.
    pub cache_columns: usize,
}

impl Default for GreenOptions {
    fn default() -> Self {
        GreenOptions { direct_limit: 50_000, cg_tol: 1e-12, cache_columns: 0 }
    }
}

#[derive(Debug, Default)]
struct ColumnCache {
    columns: HashMap<usize, (Arc<Vec<f64>>, u64)>,
    tick: u64,
    capacity: usize,
}

impl ColumnCache {
    fn get(&mut self, y: usize) -> Option<Arc<Vec<f64>>> {
        self.tick += 1;
        let tick = self.tick;
        self.columns.get_mut(&y).map(|(c, t)| {
            *t = tick;
            Arc::clone(c)
        })
    }

    fn insert(&mut self, y: usize, col: Arc<Vec<f64>>) {
        if self.capacity == 0 {
            return;
        }
        if self.columns.len() >= self.capacity {
            if let Some(&oldest) = self.columns.iter().min_by_key(|(_, (_, t))| *t).map(|(k, _)| k) {
                self.columns.remove(&oldest);
            }
        }
        self.tick += 1;
        self.columns.insert(y, (col, self.tick));
    }
}

/// Killed Laplacian `diag(λ_x) − (λ_{x,y})` of a graph.
pub fn killed_laplacian(g: &WeightedGraph) -> SparseSym {
    let mut m = SparseSym::new((0..g.len()).map(|x| g.total_rate(x)).collect());
    for e in g.edges() {
        m.add_pair(e.a, e.b, -e.weight);
    }
    m
}

/// Factorized killed Laplacian of a finite transient graph.
pub struct GreenOperator {
    graph: WeightedGraph,
    solver: SpdSolver,
    options: GreenOptions,
    cache: Mutex<ColumnCache>,
}

impl std::fmt::Debug for GreenOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GreenOperator")
            .field("vertices", &self.graph.len())
            .field("direct", &self.solver.is_direct())
            .finish()
    }
}

/// Factorizes the killed Laplacian of `g`.
pub fn green_operator(g: &WeightedGraph) -> Result<GreenOperator> {
    GreenOperator::new(g)
}

impl GreenOperator {
    pub fn new(g: &WeightedGraph) -> Result<Self> {
        Self::with_options(g, GreenOptions::default())
    }

    pub fn with_options(g: &WeightedGraph, options: GreenOptions) -> Result<Self> {
        g.ensure_finite_killing()?;
        g.ensure_transient()?;
        let solver = SpdSolver::new(killed_laplacian(g), options.direct_limit, options.cg_tol).map_err(|e| match e {
            Error::NotPositiveDefinite { .. } => Error::NotTransient,
            other => other,
        })?;
        let capacity = if options.cache_columns > 0 {
            options.cache_columns
        } else {
            (50_000_000 / g.len()).clamp(16, g.len().max(16))
        };
        Ok(GreenOperator {
            graph: g.clone(),
            solver,
            options,
            cache: Mutex::new(ColumnCache { capacity, ..Default::default() }),
        })
    }

    pub fn graph(&self) -> &WeightedGraph {
        &self.graph
    }

    pub fn options(&self) -> GreenOptions {
        self.options
    }

    pub fn is_direct(&self) -> bool {
        self.solver.is_direct()
    }

    /// Solves `M x = b`.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.solver.solve(b)
    }

    /// Column `g(·, y)`, cached.
    pub fn column(&self, y: usize) -> Result<Arc<Vec<f64>>> {
        if y >= self.graph.len() {
            return Err(Error::IndexOutOfRange(y));
        }
        if let Some(c) = self.cache.lock().unwrap().get(y) {
            return Ok(c);
        }
        let mut e = vec![0.0; self.graph.len()];
        e[y] = 1.0;
        let col = Arc::new(self.solver.solve(&e)?);
        self.cache.lock().unwrap().insert(y, Arc::clone(&col));
        Ok(col)
    }

    /// Green value `g(x, y)`.
    pub fn g(&self, x: usize, y: usize) -> Result<f64> {
        if x >= self.graph.len() {
            return Err(Error::IndexOutOfRange(x));
        }
        Ok(self.column(y)?[x])
    }

    /// Dense Green matrix restricted to `set` (row-major).
    pub fn restricted(&self, set: &[usize]) -> Result<Vec<f64>> {
        let k = set.len();
        let mut out = vec![0.0; k * k];
        for (j, &y) in set.iter().enumerate() {
            let col = self.column(y)?;
            for (i, &x) in set.iter().enumerate() {
                out[i * k + j] = col[x];
            }
        }
        // symmetrize away solver round-off
        for i in 0..k {
            for j in 0..i {
                let m = 0.5 * (out[i * k + j] + out[j * k + i]);
                out[i * k + j] = m;
                out[j * k + i] = m;
            }
        }
        Ok(out)
    }

    /// Maps standard normals to an exact sample of the centered Gaussian
    /// vector with covariance `G`.
    pub fn sample_from_normals(&self, z: &[f64]) -> Result<Vec<f64>> {
        let c = self.solver.cholesky().ok_or(Error::NeedsDirectFactorization)?;
        Ok(c.sample_from_normals(z))
    }

    /// Prepares Dirichlet problems with the given boundary set.
    pub fn dirichlet(&self, boundary: &[usize]) -> Result<DirichletSolver> {
        DirichletSolver::new(&self.graph, boundary, self.options)
    }

    /// Function equal to `values` on `boundary` and harmonic for the killed
    /// walk elsewhere, i.e. `h(x) = E_x[h(X_{H_B}); H_B < ζ]`.
    pub fn dirichlet_solve(&self, boundary: &[usize], values: &[f64]) -> Result<Vec<f64>> {
        if boundary.len() != values.len() {
            return Err(Error::InvalidArgument("one boundary value per boundary vertex".into()));
        }
        self.dirichlet(boundary)?.solve(values, None)
    }
}

/// Killed Laplacian restricted to the complement of a boundary set.
pub struct DirichletSolver {
    graph_len: usize,
    interior: Vec<usize>,
    position: Vec<Option<usize>>,
    boundary: Vec<usize>,
    // (interior position, boundary position, weight)
    couplings: Vec<(usize, usize, f64)>,
    solver: Option<SpdSolver>,
}

impl DirichletSolver {
    fn new(g: &WeightedGraph, boundary: &[usize], options: GreenOptions) -> Result<Self> {
        let n = g.len();
        let mut in_boundary = vec![None; n];
        for (k, &b) in boundary.iter().enumerate() {
            if b >= n {
                return Err(Error::IndexOutOfRange(b));
            }
            if in_boundary[b].replace(k).is_some() {
                return Err(Error::InvalidArgument(format!("vertex {} repeated in set", g.id(b))));
            }
        }
        let interior: Vec<usize> = (0..n).filter(|&x| in_boundary[x].is_none()).collect();
        let mut position = vec![None; n];
        for (i, &x) in interior.iter().enumerate() {
            position[x] = Some(i);
        }
        let mut m = SparseSym::new(interior.iter().map(|&x| g.total_rate(x)).collect());
        let mut couplings = Vec::new();
        for e in g.edges() {
            match (position[e.a], position[e.b]) {
                (Some(i), Some(j)) => m.add_pair(i, j, -e.weight),
                (Some(i), None) => couplings.push((i, in_boundary[e.b].unwrap(), e.weight)),
                (None, Some(j)) => couplings.push((j, in_boundary[e.a].unwrap(), e.weight)),
                (None, None) => {}
            }
        }
        let solver = if interior.is_empty() {
            None
        } else {
            Some(SpdSolver::new(m, options.direct_limit, options.cg_tol).map_err(|e| match e {
                Error::NotPositiveDefinite { .. } => Error::NotTransient,
                other => other,
            })?)
        };
        Ok(DirichletSolver { graph_len: n, interior, position, boundary: boundary.to_vec(), couplings, solver })
    }

    pub fn interior(&self) -> &[usize] {
        &self.interior
    }

    /// Solves `M_UU h_U = source_U + M_UB-coupling · values`, returning `h`
    /// on the whole graph with `h = values` on the boundary.
    pub fn solve(&self, values: &[f64], source: Option<&[f64]>) -> Result<Vec<f64>> {
        let mut rhs: Vec<f64> = match source {
            Some(s) => self.interior.iter().map(|&x| s[x]).collect(),
            None => vec![0.0; self.interior.len()],
        };
        for &(i, b, w) in &self.couplings {
            rhs[i] += w * values[b];
        }
        let mut h = vec![0.0; self.graph_len];
        for (&b, &v) in self.boundary.iter().zip(values) {
            h[b] = v;
        }
        if let Some(solver) = &self.solver {
            for (x, v) in self.interior.iter().zip(solver.solve(&rhs)?) {
                h[*x] = v;
            }
        }
        Ok(h)
    }

    /// Solves `M_UU w = e_x` for an interior vertex `x`: the Green function
    /// of the walk killed on the boundary, `w(z) = g_U(x, z)`.
    pub fn green_row(&self, x: usize) -> Result<Vec<f64>> {
        let i = self.position[x].ok_or_else(|| Error::InvalidArgument("vertex lies on the boundary".into()))?;
        let mut e = vec![0.0; self.interior.len()];
        e[i] = 1.0;
        self.solver.as_ref().expect("interior is non-empty").solve(&e)
    }
}

/// How a capacity or equilibrium measure was computed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CapacityMethod {
    EscapeProbability,
    GreenInverse,
}

/// Equilibrium measure of a set, listed in the order of `set`.
#[derive(Clone, Debug, Serialize)]
pub struct EquilibriumResult {
    pub set: Vec<usize>,
    pub measure: Vec<f64>,
    pub capacity: f64,
    pub method: CapacityMethod,
}

impl EquilibriumResult {
    pub fn get(&self, x: usize) -> f64 {
        self.set.iter().position(|&y| y == x).map_or(0.0, |i| self.measure[i])
    }
}

fn check_set(g: &WeightedGraph, set: &[usize]) -> Result<()> {
    if set.is_empty() {
        return Err(Error::InvalidArgument("set must be non-empty".into()));
    }
    let mut seen = vec![false; g.len()];
    for &x in set {
        if x >= g.len() {
            return Err(Error::IndexOutOfRange(x));
        }
        if std::mem::replace(&mut seen[x], true) {
            return Err(Error::InvalidArgument(format!("vertex {} repeated in set", g.id(x))));
        }
    }
    Ok(())
}

/// Equilibrium measure `e_A(x) = κ_x + Σ_{y∉A} λ_{x,y} P_y(killed before H_A)`.
pub fn equilibrium_measure(green: &GreenOperator, set: &[usize]) -> Result<EquilibriumResult> {
    let g = green.graph();
    check_set(g, set)?;
    let dir = green.dirichlet(set)?;
    let zeros = vec![0.0; set.len()];
    let escape = dir.solve(&zeros, Some(g.kappas()))?;
    let mut in_set = vec![false; g.len()];
    for &x in set {
        in_set[x] = true;
    }
    let measure: Vec<f64> = set
        .iter()
        .map(|&x| {
            g.kappa(x)
                + g.neighbors(x)
                    .iter()
                    .filter(|(y, _)| !in_set[*y])
                    .map(|&(y, e)| g.edge(e).weight * escape[y])
                    .sum::<f64>()
        })
        .collect();
    let capacity = measure.iter().sum();
    Ok(EquilibriumResult { set: set.to_vec(), measure, capacity, method: CapacityMethod::EscapeProbability })
}

/// Capacity `1ᵀ (G|_A)⁻¹ 1` of a set from its Green matrix.
pub fn capacity_green_inverse(green: &GreenOperator, set: &[usize]) -> Result<f64> {
    check_set(green.graph(), set)?;
    let m = green.restricted(set)?;
    capacity_from_matrix(m, set.len())
}

/// `1ᵀ K⁻¹ 1` for a symmetric positive definite matrix `K`.
pub fn capacity_from_matrix(m: Vec<f64>, k: usize) -> Result<f64> {
    let c = DenseCholesky::new(m, k).map_err(|_| Error::IllConditioned { rcond: 0.0 })?;
    let rcond = c.rcond_estimate();
    if rcond < RCOND_THRESHOLD {
        return Err(Error::IllConditioned { rcond });
    }
    Ok(c.solve(&vec![1.0; k]).iter().sum())
}

/// Entrance law of a set: `P_x(X_{H_K} = y, H_K < ζ)` for `y ∈ K` and the
/// mass killed before reaching `K`.
#[derive(Clone, Debug, Serialize)]
pub struct HittingDistribution {
    pub start: usize,
    pub targets: Vec<usize>,
    pub probabilities: Vec<f64>,
    pub killed: f64,
}

impl HittingDistribution {
    pub fn total(&self) -> f64 {
        self.probabilities.iter().sum::<f64>() + self.killed
    }

    pub fn get(&self, y: usize) -> f64 {
        self.targets.iter().position(|&t| t == y).map_or(0.0, |i| self.probabilities[i])
    }
}

/// Entrance law of `set` from `x`.
pub fn hitting_distribution(green: &GreenOperator, set: &[usize], x: usize) -> Result<HittingDistribution> {
    check_set(green.graph(), set)?;
    if x >= green.graph().len() {
        return Err(Error::IndexOutOfRange(x));
    }
    let dir = green.dirichlet(set)?;
    hitting_with(green.graph(), &dir, set, x)
}

fn hitting_with(g: &WeightedGraph, dir: &DirichletSolver, set: &[usize], x: usize) -> Result<HittingDistribution> {
    let mut probabilities = vec![0.0; set.len()];
    if let Some(k) = set.iter().position(|&y| y == x) {
        probabilities[k] = 1.0;
        return Ok(HittingDistribution { start: x, targets: set.to_vec(), probabilities, killed: 0.0 });
    }
    // g_U(x, ·) once; entrance law and killed mass are read off it
    let w = dir.green_row(x)?;
    let interior = dir.interior();
    let mut killed = 0.0;
    for (i, &z) in interior.iter().enumerate() {
        killed += w[i] * g.kappa(z);
    }
    for (k, &y) in set.iter().enumerate() {
        probabilities[k] = g
            .neighbors(y)
            .iter()
            .filter_map(|&(z, e)| dir.position[z].map(|i| w[i] * g.edge(e).weight))
            .sum();
    }
    Ok(HittingDistribution { start: x, targets: set.to_vec(), probabilities, killed })
}

/// Largest deviation in the sweeping identity
/// `Σ_{y∈K′} e_{K′}(y) P_y(X_{H_K} = x, H_K < ζ) = e_K(x)` over `x ∈ K`.
pub fn sweeping_residual(green: &GreenOperator, k: &[usize], k_prime: &[usize]) -> Result<f64> {
    let g = green.graph();
    check_set(g, k)?;
    check_set(g, k_prime)?;
    if k.iter().any(|x| !k_prime.contains(x)) {
        return Err(Error::NotSubset("K", "K′"));
    }
    let outer = equilibrium_measure(green, k_prime)?;
    let inner = equilibrium_measure(green, k)?;
    let dir = green.dirichlet(k)?;
    let mut swept = vec![0.0; k.len()];
    for (&y, &mass) in outer.set.iter().zip(&outer.measure) {
        let hit = hitting_with(g, &dir, k, y)?;
        for (s, p) in swept.iter_mut().zip(&hit.probabilities) {
            *s += mass * p;
        }
    }
    Ok(swept.iter().zip(&inner.measure).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
}

/// One row of [`capacity_growth_profile`].
#[derive(Clone, Debug, Serialize)]
pub struct GrowthPoint {
    pub radius: usize,
    pub ball_capacity: f64,
    pub path_capacity: f64,
}

/// Capacities of graph balls around `x0` and of geodesic paths from `x0`
/// with the same radius.
pub fn capacity_growth_profile(green: &GreenOperator, x0: usize, radii: &[usize]) -> Result<Vec<GrowthPoint>> {
    let g = green.graph();
    if x0 >= g.len() {
        return Err(Error::IndexOutOfRange(x0));
    }
    let dist = g.bfs_distances(x0);
    let ecc = dist.iter().copied().max().unwrap_or(0);
    let mut parent = vec![usize::MAX; g.len()];
    for v in 0..g.len() {
        if v != x0 {
            parent[v] = g.neighbors(v).iter().map(|&(w, _)| w).filter(|&w| dist[w] + 1 == dist[v]).min().unwrap();
        }
    }
    radii
        .iter()
        .map(|&r| {
            if r > ecc {
                return Err(Error::InvalidArgument(format!("radius {r} exceeds eccentricity {ecc}")));
            }
            let ball: Vec<usize> = (0..g.len()).filter(|&v| dist[v] <= r).collect();
            let mut end = (0..g.len()).find(|&v| dist[v] == r).unwrap();
            let mut path = vec![end];
            while end != x0 {
                end = parent[end];
                path.push(end);
            }
            Ok(GrowthPoint {
                radius: r,
                ball_capacity: equilibrium_measure(green, &ball)?.capacity,
                path_capacity: equilibrium_measure(green, &path)?.capacity,
            })
        })
        .collect()
}

/// Writes `(x, y, g)` rows for all pairs of `vertices`.
pub fn write_green_csv<W: Write>(green: &GreenOperator, vertices: &[usize], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["x", "y", "g"])?;
    for &y in vertices {
        let col = green.column(y)?;
        for &x in vertices {
            let g = green.graph();
            w.write_record([g.id(x).to_string(), g.id(y).to_string(), format!("{:.17e}", col[x])])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes `(x, e_A)` rows.
pub fn write_equilibrium_csv<W: Write>(result: &EquilibriumResult, g: &WeightedGraph, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["x", "e_A"])?;
    for (&x, &m) in result.set.iter().zip(&result.measure) {
        w.write_record([g.id(x).to_string(), format!("{m:.17e}")])?;
    }
    w.flush()?;
    Ok(())
}

/// Symmetric kernel on an indexed point set.
pub trait GreenKernel {
    fn value(&self, x: usize, y: usize) -> Result<f64>;
}

impl GreenKernel for GreenOperator {
    fn value(&self, x: usize, y: usize) -> Result<f64> {
        self.g(x, y)
    }
}

/// Capacity `1ᵀ K_B⁻¹ 1` of a point set under any kernel.
pub fn kernel_capacity<K: GreenKernel + ?Sized>(kernel: &K, points: &[usize]) -> Result<f64> {
    let k = points.len();
    if k == 0 {
        return Ok(0.0);
    }
    let mut m = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..=i {
            let v = kernel.value(points[i], points[j])?;
            m[i * k + j] = v;
            m[j * k + i] = v;
        }
    }
    capacity_from_matrix(m, k)
}

/// A point of the cable system of a base graph.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CablePoint {
    Vertex(usize),
    /// At resistance `t` from `edge.a` along edge `edge`.
    Edge { edge: usize, t: f64 },
    /// At resistance `t` from the vertex along its killing cable.
    Cable { vertex: usize, t: f64 },
}

impl From<Locus> for CablePoint {
    fn from(l: Locus) -> Self {
        match l {
            Locus::Vertex(x) => CablePoint::Vertex(x),
            Locus::Edge { edge, t, .. } => CablePoint::Edge { edge, t },
            Locus::Cable { vertex, t, .. } => CablePoint::Cable { vertex, t },
        }
    }
}

impl CablePoint {
    /// The point at coordinate `t` of a segment.
    pub fn on(segment: Segment, t: f64) -> Self {
        match segment {
            Segment::Edge(edge) => CablePoint::Edge { edge, t },
            Segment::Cable(vertex) => CablePoint::Cable { vertex, t },
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Decomposed {
    // up to two base vertices with linear weights
    v: [(usize, f64); 2],
    // segment carrying an independent bridge: (edge id or !vertex, t, length)
    bridge: Option<(usize, f64, f64)>,
}

/// Green function of the cable system, in closed form.
///
/// Along an edge of resistance `ρ` the field is the linear interpolation of
/// its endpoint values plus an independent Brownian bridge with covariance
/// `2 s (ρ − t) / ρ` for `s ≤ t`; along a killing cable it interpolates to
/// zero at the far end. Only the base Green matrix is needed.
#[derive(Clone, Debug)]
pub struct CableGreen {
    base: Arc<WeightedGraph>,
    n: usize,
    g: Arc<Vec<f64>>,
    points: Vec<CablePoint>,
}

impl CableGreen {
    /// Kernel on the vertices of a refined graph, indexed like the refined graph.
    pub fn for_refined(refined: &RefinedGraph, base_green: &GreenOperator) -> Result<Self> {
        let mut k = Self::new(base_green)?;
        k.points = refined.loci().iter().map(|&l| l.into()).collect();
        Ok(k)
    }

    /// Kernel over the base vertices; extend the point set with [`Self::with_points`].
    pub fn new(base_green: &GreenOperator) -> Result<Self> {
        let base = base_green.graph();
        let n = base.len();
        let all: Vec<usize> = (0..n).collect();
        let g = base_green.restricted(&all)?;
        Ok(CableGreen {
            base: Arc::new(base.clone()),
            n,
            g: Arc::new(g),
            points: (0..n).map(CablePoint::Vertex).collect(),
        })
    }

    /// Same kernel over a different point list (sharing the base matrix).
    pub fn with_points(&self, points: Vec<CablePoint>) -> Self {
        CableGreen { base: Arc::clone(&self.base), n: self.n, g: Arc::clone(&self.g), points }
    }

    pub fn points(&self) -> &[CablePoint] {
        &self.points
    }

    pub fn base(&self) -> &WeightedGraph {
        &self.base
    }

    pub fn base_value(&self, x: usize, y: usize) -> f64 {
        self.g[x * self.n + y]
    }

    fn decompose(&self, p: CablePoint) -> Decomposed {
        match p {
            CablePoint::Vertex(x) => Decomposed { v: [(x, 1.0), (x, 0.0)], bridge: None },
            CablePoint::Edge { edge, t } => {
                let e = self.base.edge(edge);
                let rho = e.rho();
                let s = t / rho;
                Decomposed { v: [(e.a, 1.0 - s), (e.b, s)], bridge: Some((edge, t, rho)) }
            }
            CablePoint::Cable { vertex, t } => {
                let rho = self.base.cable_rho(vertex);
                Decomposed { v: [(vertex, 1.0 - t / rho), (vertex, 0.0)], bridge: Some((!vertex, t, rho)) }
            }
        }
    }

    /// Covariance of the cable field at two points.
    pub fn covariance(&self, p: CablePoint, q: CablePoint) -> f64 {
        let (a, b) = (self.decompose(p), self.decompose(q));
        let mut s = 0.0;
        for &(x, cx) in &a.v {
            if cx == 0.0 {
                continue;
            }
            for &(y, cy) in &b.v {
                if cy != 0.0 {
                    s += cx * cy * self.base_value(x, y);
                }
            }
        }
        if let (Some((sa, ta, l)), Some((sb, tb, _))) = (a.bridge, b.bridge) {
            if sa == sb {
                let (lo, hi) = if ta <= tb { (ta, tb) } else { (tb, ta) };
                s += 2.0 * lo * (l - hi) / l;
            }
        }
        s
    }
}

impl GreenKernel for CableGreen {
    fn value(&self, x: usize, y: usize) -> Result<f64> {
        let p = *self.points.get(x).ok_or(Error::IndexOutOfRange(x))?;
        let q = *self.points.get(y).ok_or(Error::IndexOutOfRange(y))?;
        Ok(self.covariance(p, q))
    }
}
