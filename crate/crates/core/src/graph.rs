//! Weighted graphs with killing, the discrete skeleton of a cable system.
//!
//! A [`WeightedGraph`] carries symmetric conductances `λ_{x,y}` on its edges and
//! a killing rate `κ_x ∈ [0, ∞]` per vertex. Each edge stands for a cable of
//! resistance length `1/(2λ_{x,y})`, and each vertex with `κ_x > 0` carries a
//! killing cable of length `1/(2κ_x)` ending at the cemetery.
//!
//! Infinite killing is a Dirichlet boundary: [`induce_finite_killing`] removes
//! those vertices and replaces each edge leading into them by a half-length
//! cable ending at a killed mid-point. [`refine`] subdivides edges and killing
//! cables into equal-resistance chains without changing the trace of the
//! process on the original vertices.

use std::collections::{HashMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

/// Stable vertex identifier.
///
/// Generated and user-supplied graphs use `Int` or `Name`; the structured
/// variants are produced by [`induce_finite_killing`] and [`refine`] and keep
/// the locus of derived vertices readable.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VertexId {
    Int(i64),
    Name(String),
    /// Interior point `k` of the chain subdividing edge `a`-`b`, counted from `a`.
    EdgePoint { a: Box<VertexId>, b: Box<VertexId>, k: u32 },
    /// Point `k` of the chain subdividing the killing cable of `root`.
    CablePoint { root: Box<VertexId>, k: u32 },
    /// Killed mid-point of the edge from `inner` to the removed vertex `outer`.
    MidPoint { inner: Box<VertexId>, outer: Box<VertexId> },
}

impl fmt::Display for VertexId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VertexId::Int(i) => write!(f, "{i}"),
            VertexId::Name(s) => write!(f, "{s}"),
            VertexId::EdgePoint { a, b, k } => write!(f, "{a}~{b}#{k}"),
            VertexId::CablePoint { root, k } => write!(f, "{root}^{k}"),
            VertexId::MidPoint { inner, outer } => write!(f, "mid({inner}|{outer})"),
        }
    }
}

impl From<i64> for VertexId {
    fn from(i: i64) -> Self {
        VertexId::Int(i)
    }
}

impl From<&str> for VertexId {
    fn from(s: &str) -> Self {
        VertexId::Name(s.to_string())
    }
}

impl Serialize for VertexId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            VertexId::Int(i) => s.serialize_i64(*i),
            other => s.serialize_str(&other.to_string()),
        }
    }
}

impl<'de> Deserialize<'de> for VertexId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Value::deserialize(d)?;
        vertex_id_from_json(&v).map_err(serde::de::Error::custom)
    }
}

fn vertex_id_from_json(v: &Value) -> Result<VertexId> {
    match v {
        Value::Number(n) => n
            .as_i64()
            .map(VertexId::Int)
            .ok_or_else(|| Error::Spec(format!("vertex id {n} is not an integer"))),
        Value::String(s) => Ok(VertexId::Name(s.clone())),
        other => Err(Error::Spec(format!("invalid vertex id {other}"))),
    }
}

/// An undirected edge between vertex indices `a < b`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub weight: f64,
}

impl Edge {
    /// Resistance length of the cable, `1/(2λ)`.
    pub fn rho(&self) -> f64 {
        0.5 / self.weight
    }

    pub fn other(&self, v: usize) -> usize {
        if v == self.a {
            self.b
        } else {
            self.a
        }
    }
}

/// Connected, locally finite weighted graph with killing. Immutable once built.
#[derive(Clone, Debug)]
pub struct WeightedGraph {
    ids: Vec<VertexId>,
    index: HashMap<VertexId, usize>,
    edges: Vec<Edge>,
    adjacency: Vec<Vec<(usize, usize)>>,
    kappa: Vec<f64>,
}

impl WeightedGraph {
    /// Builds and validates a graph from vertex ids, index-based edges and
    /// per-vertex killing (`f64::INFINITY` allowed).
    pub fn new(ids: Vec<VertexId>, edges: Vec<(usize, usize, f64)>, kappa: Vec<f64>) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::EmptyGraph);
        }
        if kappa.len() != ids.len() {
            return Err(Error::Spec(format!(
                "{} killing values for {} vertices",
                kappa.len(),
                ids.len()
            )));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::DuplicateVertex(id.clone()));
            }
        }
        for (i, &k) in kappa.iter().enumerate() {
            if k.is_nan() || k < 0.0 {
                return Err(Error::InvalidKilling(ids[i].clone(), k));
            }
        }
        let n = ids.len();
        let mut adjacency = vec![Vec::new(); n];
        let mut seen = HashMap::with_capacity(edges.len());
        let mut out = Vec::with_capacity(edges.len());
        for (x, y, w) in edges {
            if x >= n {
                return Err(Error::IndexOutOfRange(x));
            }
            if y >= n {
                return Err(Error::IndexOutOfRange(y));
            }
            if x == y {
                return Err(Error::SelfLoop(ids[x].clone()));
            }
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::InvalidWeight(ids[x].clone(), ids[y].clone(), w));
            }
            let (a, b) = if x < y { (x, y) } else { (y, x) };
            if seen.insert((a, b), ()).is_some() {
                return Err(Error::DuplicateEdge(ids[a].clone(), ids[b].clone()));
            }
            let e = out.len();
            out.push(Edge { a, b, weight: w });
            adjacency[a].push((b, e));
            adjacency[b].push((a, e));
        }
        let g = WeightedGraph { ids, index, edges: out, adjacency, kappa };
        let components = g.component_count();
        if components != 1 {
            return Err(Error::Disconnected { components });
        }
        Ok(g)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[VertexId] {
        &self.ids
    }

    pub fn id(&self, v: usize) -> &VertexId {
        &self.ids[v]
    }

    pub fn index_of(&self, id: &VertexId) -> Result<usize> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownVertex(id.to_string()))
    }

    /// Looks up a vertex by its display form, e.g. `"12"` or `"a"`.
    pub fn find(&self, name: &str) -> Result<usize> {
        if let Ok(i) = name.parse::<i64>() {
            if let Some(&v) = self.index.get(&VertexId::Int(i)) {
                return Ok(v);
            }
        }
        if let Some(&v) = self.index.get(&VertexId::Name(name.to_string())) {
            return Ok(v);
        }
        self.ids
            .iter()
            .position(|id| id.to_string() == name)
            .ok_or_else(|| Error::UnknownVertex(name.to_string()))
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, e: usize) -> &Edge {
        &self.edges[e]
    }

    /// `(neighbor, edge index)` pairs incident to `v`.
    pub fn neighbors(&self, v: usize) -> &[(usize, usize)] {
        &self.adjacency[v]
    }

    pub fn kappa(&self, v: usize) -> f64 {
        self.kappa[v]
    }

    pub fn kappas(&self) -> &[f64] {
        &self.kappa
    }

    /// Total jump rate `λ_x = κ_x + Σ_y λ_{x,y}`.
    pub fn total_rate(&self, v: usize) -> f64 {
        self.kappa[v] + self.adjacency[v].iter().map(|&(_, e)| self.edges[e].weight).sum::<f64>()
    }

    /// Length `1/(2κ_x)` of the killing cable; infinite when `κ_x = 0`.
    pub fn cable_rho(&self, v: usize) -> f64 {
        if self.kappa[v] > 0.0 {
            0.5 / self.kappa[v]
        } else {
            f64::INFINITY
        }
    }

    pub fn edge_between(&self, x: usize, y: usize) -> Option<usize> {
        self.adjacency[x].iter().find(|&&(w, _)| w == y).map(|&(_, e)| e)
    }

    pub fn is_transient(&self) -> bool {
        self.kappa.iter().any(|&k| k > 0.0)
    }

    pub fn ensure_transient(&self) -> Result<()> {
        if self.is_transient() {
            Ok(())
        } else {
            Err(Error::NotTransient)
        }
    }

    pub fn ensure_finite_killing(&self) -> Result<()> {
        match self.kappa.iter().position(|k| k.is_infinite()) {
            Some(v) => Err(Error::InfiniteKilling(self.ids[v].clone())),
            None => Ok(()),
        }
    }

    /// Same vertices and edges with a different killing vector.
    pub fn with_kappa(&self, kappa: Vec<f64>) -> Result<Self> {
        let edges = self.edges.iter().map(|e| (e.a, e.b, e.weight)).collect();
        WeightedGraph::new(self.ids.clone(), edges, kappa)
    }

    /// Hop distances from `source` (`usize::MAX` if unreachable).
    pub fn bfs_distances(&self, source: usize) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.len()];
        let mut queue = VecDeque::from([source]);
        dist[source] = 0;
        while let Some(v) = queue.pop_front() {
            for &(w, _) in &self.adjacency[v] {
                if dist[w] == usize::MAX {
                    dist[w] = dist[v] + 1;
                    queue.push_back(w);
                }
            }
        }
        dist
    }

    fn component_count(&self) -> usize {
        let mut seen = vec![false; self.len()];
        let mut count = 0;
        for s in 0..self.len() {
            if seen[s] {
                continue;
            }
            count += 1;
            let mut stack = vec![s];
            seen[s] = true;
            while let Some(v) = stack.pop() {
                for &(w, _) in &self.adjacency[v] {
                    if !seen[w] {
                        seen[w] = true;
                        stack.push(w);
                    }
                }
            }
        }
        count
    }
}

/// Built-in graph families plus explicit edge lists.
#[derive(Clone, Debug, PartialEq)]
pub enum GraphFamily {
    /// `side^d` box of `Z^d`, row-major ordering, uniform weights.
    Grid {
        d: usize,
        side: usize,
        lambda: f64,
        kappa: f64,
        boundary_kappa: Option<f64>,
    },
    /// Ball of depth `depth` in the `degree`-regular tree, BFS ordering.
    RegularTree {
        degree: usize,
        depth: usize,
        lambda: f64,
        kappa: f64,
        leaf_kappa: Option<f64>,
    },
    EdgeList {
        vertices: Vec<VertexId>,
        edges: Vec<(VertexId, VertexId, f64)>,
        kappa: HashMap<VertexId, f64>,
    },
}

/// Builds a validated, transient graph from a family description.
pub fn generate_graph(family: &GraphFamily) -> Result<WeightedGraph> {
    let g = match family {
        GraphFamily::Grid { d, side, lambda, kappa, boundary_kappa } => {
            grid(*d, *side, *lambda, *kappa, *boundary_kappa)?
        }
        GraphFamily::RegularTree { degree, depth, lambda, kappa, leaf_kappa } => {
            regular_tree(*degree, *depth, *lambda, *kappa, *leaf_kappa)?
        }
        GraphFamily::EdgeList { vertices, edges, kappa } => edge_list(vertices, edges, kappa)?,
    };
    g.ensure_transient()?;
    Ok(g)
}

fn grid(d: usize, side: usize, lambda: f64, kappa: f64, boundary_kappa: Option<f64>) -> Result<WeightedGraph> {
    if d == 0 || side == 0 {
        return Err(Error::EmptyGraph);
    }
    let n = side
        .checked_pow(d as u32)
        .ok_or_else(|| Error::InvalidArgument("grid too large".into()))?;
    let ids = (0..n as i64).map(VertexId::Int).collect();
    let mut edges = Vec::with_capacity(d * n);
    let mut kap = vec![kappa; n];
    for v in 0..n {
        let mut rest = v;
        let mut on_boundary = false;
        // strides: last coordinate varies fastest
        for axis in (0..d).rev() {
            let c = rest % side;
            rest /= side;
            on_boundary |= c == 0 || c + 1 == side;
            let stride = side.pow((d - 1 - axis) as u32);
            if c + 1 < side {
                edges.push((v, v + stride, lambda));
            }
        }
        if let (Some(bk), true) = (boundary_kappa, on_boundary) {
            kap[v] = bk;
        }
    }
    edges.sort_by_key(|&(a, b, _)| (a, b));
    WeightedGraph::new(ids, edges, kap)
}

fn regular_tree(
    degree: usize,
    depth: usize,
    lambda: f64,
    kappa: f64,
    leaf_kappa: Option<f64>,
) -> Result<WeightedGraph> {
    if degree < 2 && depth > 0 {
        return Err(Error::InvalidArgument("tree degree must be at least 2".into()));
    }
    let mut level = vec![0usize];
    let mut edges = Vec::new();
    let mut next_id = 1usize;
    let mut leaves = Vec::new();
    for l in 0..depth {
        let mut next = Vec::new();
        for &v in &level {
            let children = if l == 0 { degree } else { degree - 1 };
            for _ in 0..children {
                edges.push((v, next_id, lambda));
                next.push(next_id);
                next_id += 1;
            }
        }
        level = next;
    }
    if depth > 0 {
        leaves = level;
    }
    let n = next_id;
    let mut kap = vec![kappa; n];
    if let Some(lk) = leaf_kappa {
        for v in leaves {
            kap[v] = lk;
        }
    }
    WeightedGraph::new((0..n as i64).map(VertexId::Int).collect(), edges, kap)
}

fn edge_list(
    vertices: &[VertexId],
    edges: &[(VertexId, VertexId, f64)],
    kappa: &HashMap<VertexId, f64>,
) -> Result<WeightedGraph> {
    let mut ids: Vec<VertexId> = vertices.to_vec();
    let mut index: HashMap<VertexId, usize> = ids.iter().cloned().enumerate().map(|(i, v)| (v, i)).collect();
    let mut intern = |id: &VertexId, ids: &mut Vec<VertexId>| -> usize {
        *index.entry(id.clone()).or_insert_with(|| {
            ids.push(id.clone());
            ids.len() - 1
        })
    };
    let mut es = Vec::with_capacity(edges.len());
    for (x, y, w) in edges {
        let a = intern(x, &mut ids);
        let b = intern(y, &mut ids);
        es.push((a, b, *w));
    }
    for id in kappa.keys() {
        if !ids.contains(id) {
            return Err(Error::UnknownVertex(id.to_string()));
        }
    }
    let kap = ids.iter().map(|id| kappa.get(id).copied().unwrap_or(0.0)).collect();
    WeightedGraph::new(ids, es, kap)
}

fn killing_from_json(v: &Value) -> Result<f64> {
    match v {
        Value::Number(n) => n.as_f64().ok_or_else(|| Error::Spec(format!("bad killing value {n}"))),
        Value::String(s) if matches!(s.as_str(), "inf" | "Inf" | "infinity" | "Infinity") => Ok(f64::INFINITY),
        other => Err(Error::Spec(format!("bad killing value {other}"))),
    }
}

fn field<'a>(obj: &'a Value, key: &str) -> Result<&'a Value> {
    obj.get(key).ok_or_else(|| Error::Spec(format!("missing field `{key}`")))
}

fn as_usize(v: &Value, key: &str) -> Result<usize> {
    v.as_u64()
        .map(|x| x as usize)
        .ok_or_else(|| Error::Spec(format!("`{key}` must be a non-negative integer")))
}

fn opt_f64(obj: &Value, key: &str, default: Option<f64>) -> Result<Option<f64>> {
    match obj.get(key) {
        None | Some(Value::Null) => Ok(default),
        Some(v) => killing_from_json(v).map(Some),
    }
}

fn req_f64(obj: &Value, key: &str, default: Option<f64>) -> Result<f64> {
    opt_f64(obj, key, default)?.ok_or_else(|| Error::Spec(format!("missing field `{key}`")))
}

fn explicit_from_json(obj: &Value) -> Result<GraphFamily> {
    let vertices = match obj.get("vertices") {
        Some(Value::Array(vs)) => vs.iter().map(vertex_id_from_json).collect::<Result<Vec<_>>>()?,
        None => Vec::new(),
        Some(_) => return Err(Error::Spec("`vertices` must be an array".into())),
    };
    let edges = field(obj, "edges")?
        .as_array()
        .ok_or_else(|| Error::Spec("`edges` must be an array".into()))?
        .iter()
        .map(|e| match e.as_array().map(Vec::as_slice) {
            Some([x, y, w]) => Ok((
                vertex_id_from_json(x)?,
                vertex_id_from_json(y)?,
                w.as_f64().ok_or_else(|| Error::Spec(format!("bad weight {w}")))?,
            )),
            _ => Err(Error::Spec(format!("edge {e} must be [x, y, weight]"))),
        })
        .collect::<Result<Vec<_>>>()?;
    let mut kappa = HashMap::new();
    if let Some(k) = obj.get("kappa") {
        let map = k.as_object().ok_or_else(|| Error::Spec("`kappa` must be an object".into()))?;
        for (name, val) in map {
            // keys are strings in JSON; prefer the integer id when one exists
            let id = match name.parse::<i64>() {
                Ok(i) if vertices.contains(&VertexId::Int(i)) || edges_mention(&edges, &VertexId::Int(i)) => {
                    VertexId::Int(i)
                }
                _ => VertexId::Name(name.clone()),
            };
            kappa.insert(id, killing_from_json(val)?);
        }
    }
    Ok(GraphFamily::EdgeList { vertices, edges, kappa })
}

fn edges_mention(edges: &[(VertexId, VertexId, f64)], id: &VertexId) -> bool {
    edges.iter().any(|(x, y, _)| x == id || y == id)
}

impl GraphFamily {
    /// Parses the graph spec JSON: either `{"family": ..., "params": {...}}`
    /// or an explicit `{"vertices", "edges", "kappa"}` object, where the
    /// killing value `"inf"` marks a Dirichlet vertex.
    pub fn from_json(v: &Value) -> Result<Self> {
        let Some(family) = v.get("family") else {
            return explicit_from_json(v);
        };
        let empty = Value::Object(Default::default());
        let params = v.get("params").unwrap_or(&empty);
        match family.as_str() {
            Some("grid") => Ok(GraphFamily::Grid {
                d: params.get("d").map(|x| as_usize(x, "d")).transpose()?.unwrap_or(2),
                side: as_usize(field(params, "side")?, "side")?,
                lambda: req_f64(params, "lambda", Some(1.0))?,
                kappa: req_f64(params, "kappa", None)?,
                boundary_kappa: opt_f64(params, "boundary_kappa", None)?,
            }),
            Some("regular_tree") => Ok(GraphFamily::RegularTree {
                degree: as_usize(field(params, "degree")?, "degree")?,
                depth: as_usize(field(params, "depth")?, "depth")?,
                lambda: req_f64(params, "lambda", Some(1.0))?,
                kappa: req_f64(params, "kappa", None)?,
                leaf_kappa: opt_f64(params, "leaf_kappa", None)?,
            }),
            Some("edge_list") => explicit_from_json(params),
            _ => Err(Error::Spec(format!("unknown graph family {family}"))),
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Self::from_json(&serde_json::from_str(s)?)
    }
}

/// Removes vertices with infinite killing, attaching a killed mid-point on
/// every edge that led from a finite vertex into a removed one.
///
/// For such an edge `{y, x}` with `κ_x = ∞`, the mid-point `a` gets
/// `λ_{y,a} = 2λ_{y,x}` and `κ_a = 2λ_{y,x}`; `y` keeps its own killing.
/// Edges between two removed vertices are dropped. A graph whose killing is
/// already finite is returned unchanged.
pub fn induce_finite_killing(g: &WeightedGraph) -> Result<WeightedGraph> {
    if g.kappa.iter().all(|k| k.is_finite()) {
        return Ok(g.clone());
    }
    let mut new_index = vec![usize::MAX; g.len()];
    let mut ids = Vec::new();
    let mut kappa = Vec::new();
    for v in 0..g.len() {
        if g.kappa[v].is_finite() {
            new_index[v] = ids.len();
            ids.push(g.ids[v].clone());
            kappa.push(g.kappa[v]);
        }
    }
    if ids.is_empty() {
        return Err(Error::EmptyGraph);
    }
    let mut edges = Vec::new();
    for e in &g.edges {
        let (fa, fb) = (g.kappa[e.a].is_finite(), g.kappa[e.b].is_finite());
        match (fa, fb) {
            (true, true) => edges.push((new_index[e.a], new_index[e.b], e.weight)),
            (false, false) => {}
            _ => {
                let (inner, outer) = if fa { (e.a, e.b) } else { (e.b, e.a) };
                let mid = ids.len();
                ids.push(VertexId::MidPoint {
                    inner: Box::new(g.ids[inner].clone()),
                    outer: Box::new(g.ids[outer].clone()),
                });
                kappa.push(2.0 * e.weight);
                edges.push((new_index[inner], mid, 2.0 * e.weight));
            }
        }
    }
    WeightedGraph::new(ids, edges, kappa)
}

/// Where a refined vertex sits in the base cable system.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Locus {
    /// An original vertex.
    Vertex(usize),
    /// Point `k` of `n` on base edge `edge`, at resistance `t` from `edge.a`.
    Edge { edge: usize, k: u32, n: u32, t: f64 },
    /// Point `k` on the killing cable of base vertex `vertex`, cut into
    /// `n + 1` equal pieces, at resistance `t` from the vertex.
    Cable { vertex: usize, k: u32, n: u32, t: f64 },
}

/// The base edge or killing cable that carries a refined edge.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Segment {
    Edge(usize),
    Cable(usize),
}

/// Placement of a refined edge inside its segment: resistance coordinates of
/// its endpoints `a` and `b` (measured from `edge.a`, or from the vertex for
/// a cable).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Span {
    pub segment: Segment,
    pub t_a: f64,
    pub t_b: f64,
}

/// A graph refined by equal-resistance subdivision of edges and killing
/// cables, with the locus of every refined vertex.
#[derive(Clone, Debug)]
pub struct RefinedGraph {
    base: WeightedGraph,
    refined: WeightedGraph,
    loci: Vec<Locus>,
    n_edge: u32,
    n_cable: u32,
    // refined vertex chain along each base edge, endpoints included
    edge_chains: Vec<Vec<usize>>,
    edge_chain_edges: Vec<Vec<usize>>,
    // base vertex followed by its cable points; empty tail if no cable
    cable_chains: Vec<Vec<usize>>,
    cable_chain_edges: Vec<Vec<usize>>,
    spans: Vec<Span>,
}

impl RefinedGraph {
    pub fn base(&self) -> &WeightedGraph {
        &self.base
    }

    pub fn graph(&self) -> &WeightedGraph {
        &self.refined
    }

    pub fn locus(&self, v: usize) -> Locus {
        self.loci[v]
    }

    pub fn loci(&self) -> &[Locus] {
        &self.loci
    }

    pub fn n_edge(&self) -> u32 {
        self.n_edge
    }

    pub fn n_cable(&self) -> u32 {
        self.n_cable
    }

    /// Refined vertices along base edge `e`, from `edge.a` to `edge.b`.
    pub fn edge_chain(&self, e: usize) -> &[usize] {
        &self.edge_chains[e]
    }

    /// Refined edge indices along base edge `e`, in chain order.
    pub fn edge_chain_edges(&self, e: usize) -> &[usize] {
        &self.edge_chain_edges[e]
    }

    /// Base vertex `x` followed by the points of its killing cable.
    pub fn cable_chain(&self, x: usize) -> &[usize] {
        &self.cable_chains[x]
    }

    pub fn cable_chain_edges(&self, x: usize) -> &[usize] {
        &self.cable_chain_edges[x]
    }

    /// Where refined edge `e` sits in the base cable system.
    pub fn span(&self, e: usize) -> Span {
        self.spans[e]
    }

    /// Index in `finer` of every vertex of `self`, matched by locus.
    ///
    /// Requires `finer` to refine the same base with subdivision counts that
    /// are multiples of ours (`n_edge`, and `n_cable + 1` for cables).
    pub fn embed_into(&self, finer: &RefinedGraph) -> Result<Vec<usize>> {
        if finer.base.len() != self.base.len() || finer.base.edges.len() != self.base.edges.len() {
            return Err(Error::GraphMismatch("refinements of different base graphs".into()));
        }
        let (ne, nc) = (self.n_edge, self.n_cable + 1);
        let (fe, fc) = (finer.n_edge, finer.n_cable + 1);
        if fe % ne != 0 || fc % nc != 0 {
            return Err(Error::GraphMismatch(format!(
                "subdivision ({fe}, {}) does not refine ({ne}, {})",
                fc - 1,
                nc - 1
            )));
        }
        let (me, mc) = (fe / ne, fc / nc);
        Ok(self
            .loci
            .iter()
            .map(|locus| match *locus {
                Locus::Vertex(x) => x,
                Locus::Edge { edge, k, .. } => finer.edge_chains[edge][(k * me) as usize],
                Locus::Cable { vertex, k, .. } => finer.cable_chains[vertex][(k * mc) as usize],
            })
            .collect())
    }
}

/// Subdivides every edge into `n_edge` equal-resistance pieces and every
/// killing cable into a chain of `n_cable` interior points.
///
/// Sub-edges of edge `{x,y}` get weight `n_edge·λ_{x,y}`. A cable of length
/// `ρ_x = 1/(2κ_x)` gets points at `t_k = k·ρ_x/(n_cable+1)`; consecutive
/// points are joined with weight `1/(2Δt)`, the vertex loses its killing and
/// the last point is killed at rate `κ_x/(1 − 2κ_x t_n)`.
pub fn refine(g: &WeightedGraph, n_edge: u32, n_cable: u32) -> Result<RefinedGraph> {
    if n_edge == 0 {
        return Err(Error::InvalidArgument("n_edge must be at least 1".into()));
    }
    g.ensure_finite_killing()?;
    let mut ids = g.ids.clone();
    let mut loci: Vec<Locus> = (0..g.len()).map(Locus::Vertex).collect();
    let mut kappa = g.kappa.clone();
    let mut edges: Vec<(usize, usize, f64)> = Vec::new();
    let mut edge_chains = Vec::with_capacity(g.edges.len());
    let mut edge_chain_edges = Vec::with_capacity(g.edges.len());

    for (ei, e) in g.edges.iter().enumerate() {
        let rho = e.rho();
        let mut chain = vec![e.a];
        for k in 1..n_edge {
            let v = ids.len();
            ids.push(VertexId::EdgePoint {
                a: Box::new(g.ids[e.a].clone()),
                b: Box::new(g.ids[e.b].clone()),
                k,
            });
            loci.push(Locus::Edge { edge: ei, k, n: n_edge, t: rho * k as f64 / n_edge as f64 });
            kappa.push(0.0);
            chain.push(v);
        }
        chain.push(e.b);
        let w = e.weight * n_edge as f64;
        let mut chain_edges = Vec::with_capacity(n_edge as usize);
        for pair in chain.windows(2) {
            chain_edges.push(edges.len());
            edges.push((pair[0], pair[1], w));
        }
        edge_chains.push(chain);
        edge_chain_edges.push(chain_edges);
    }

    let mut cable_chains = Vec::with_capacity(g.len());
    let mut cable_chain_edges = Vec::with_capacity(g.len());
    for x in 0..g.len() {
        let mut chain = vec![x];
        let mut chain_edges = Vec::new();
        let kx = g.kappa[x];
        if kx > 0.0 && n_cable > 0 {
            let rho = 0.5 / kx;
            let pieces = (n_cable + 1) as f64;
            let w = kx * pieces; // 1/(2·ρ/pieces)
            kappa[x] = 0.0;
            for k in 1..=n_cable {
                let v = ids.len();
                ids.push(VertexId::CablePoint { root: Box::new(g.ids[x].clone()), k });
                let t = rho * k as f64 / pieces;
                loci.push(Locus::Cable { vertex: x, k, n: n_cable, t });
                kappa.push(if k == n_cable { kx / (1.0 - 2.0 * kx * t) } else { 0.0 });
                chain_edges.push(edges.len());
                edges.push((*chain.last().unwrap(), v, w));
                chain.push(v);
            }
        }
        cable_chains.push(chain);
        cable_chain_edges.push(chain_edges);
    }

    let refined = WeightedGraph::new(ids, edges, kappa)?;
    let mut spans = vec![Span { segment: Segment::Edge(0), t_a: 0.0, t_b: 0.0 }; refined.edges().len()];
    let coordinate = |v: usize, segment: Segment| match (loci[v], segment) {
        (Locus::Edge { t, .. }, _) | (Locus::Cable { t, .. }, _) => t,
        (Locus::Vertex(x), Segment::Edge(e)) if x == g.edges[e].b => g.edges[e].rho(),
        (Locus::Vertex(_), _) => 0.0,
    };
    let chains = edge_chain_edges
        .iter()
        .enumerate()
        .map(|(e, c)| (Segment::Edge(e), c))
        .chain(cable_chain_edges.iter().enumerate().map(|(x, c)| (Segment::Cable(x), c)));
    for (segment, chain) in chains {
        for &re in chain {
            let edge = refined.edge(re);
            spans[re] = Span { segment, t_a: coordinate(edge.a, segment), t_b: coordinate(edge.b, segment) };
        }
    }
    Ok(RefinedGraph {
        base: g.clone(),
        refined,
        loci,
        n_edge,
        n_cable,
        edge_chains,
        edge_chain_edges,
        cable_chains,
        cable_chain_edges,
        spans,
    })
}

/// Uniform refinement at resolution `r`: every edge and every killing cable
/// is cut into `r` equal-resistance pieces (`n_edge = r`, `n_cable = r − 1`).
/// Resolutions that divide each other give nested point sets.
pub fn refine_uniform(g: &WeightedGraph, r: u32) -> Result<RefinedGraph> {
    if r == 0 {
        return Err(Error::InvalidArgument("resolution must be at least 1".into()));
    }
    refine(g, r, r - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn path(kappa: [f64; 3]) -> WeightedGraph {
        WeightedGraph::new(
            vec!["u".into(), "v".into(), "w".into()],
            vec![(0, 1, 1.0), (1, 2, 1.0)],
            kappa.to_vec(),
        )
        .unwrap()
    }

    #[test]
    fn smallest_grid_is_a_single_edge() {
        let g = generate_graph(&GraphFamily::Grid { d: 1, side: 2, lambda: 1.0, kappa: 1.0, boundary_kappa: None })
            .unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g.edges(), &[Edge { a: 0, b: 1, weight: 1.0 }]);
        assert_eq!(g.kappas(), &[1.0, 1.0]);
    }

    #[test]
    fn grid_is_row_major() {
        let g = generate_graph(&GraphFamily::Grid { d: 2, side: 3, lambda: 1.0, kappa: 0.5, boundary_kappa: None })
            .unwrap();
        assert_eq!(g.len(), 9);
        assert_eq!(g.edges().len(), 12);
        // (0,0)-(0,1) and (0,0)-(1,0)
        assert!(g.edge_between(0, 1).is_some());
        assert!(g.edge_between(0, 3).is_some());
        assert!(g.edge_between(2, 3).is_none());
        assert_eq!(g.neighbors(4).len(), 4);
    }

    #[test]
    fn depth_zero_tree_is_a_root() {
        let g = generate_graph(&GraphFamily::RegularTree {
            degree: 3,
            depth: 0,
            lambda: 1.0,
            kappa: 1.0,
            leaf_kappa: None,
        })
        .unwrap();
        assert_eq!(g.len(), 1);
        assert!(g.edges().is_empty());
    }

    #[test]
    fn tree_has_bfs_order_and_leaf_killing() {
        let g = generate_graph(&GraphFamily::RegularTree {
            degree: 3,
            depth: 2,
            lambda: 1.0,
            kappa: 0.0,
            leaf_kappa: Some(2.0),
        })
        .unwrap();
        assert_eq!(g.len(), 1 + 3 + 6);
        assert_eq!(g.neighbors(0).len(), 3);
        assert_eq!(g.neighbors(1).len(), 3);
        assert_eq!(g.kappa(0), 0.0);
        assert_eq!(g.kappa(9), 2.0);
    }

    #[test]
    fn edge_list_without_killing_is_recurrent() {
        let spec = GraphFamily::from_json_str(r#"{"vertices":["a","b"],"edges":[["a","b",2.0]],"kappa":{"a":0,"b":0}}"#)
            .unwrap();
        assert!(matches!(generate_graph(&spec), Err(Error::NotTransient)));
    }

    #[test]
    fn rejects_bad_edges() {
        let ids = vec![VertexId::Int(0), VertexId::Int(1), VertexId::Int(2)];
        assert!(matches!(
            WeightedGraph::new(ids.clone(), vec![(0, 1, 1.0)], vec![1.0; 3]),
            Err(Error::Disconnected { components: 2 })
        ));
        assert!(matches!(
            WeightedGraph::new(ids.clone(), vec![(0, 1, 0.0), (1, 2, 1.0)], vec![1.0; 3]),
            Err(Error::InvalidWeight(..))
        ));
        assert!(matches!(
            WeightedGraph::new(ids.clone(), vec![(0, 0, 1.0)], vec![1.0; 3]),
            Err(Error::SelfLoop(_))
        ));
        assert!(matches!(
            WeightedGraph::new(ids, vec![(0, 1, 1.0), (1, 0, 1.0), (1, 2, 1.0)], vec![1.0; 3]),
            Err(Error::DuplicateEdge(..))
        ));
        assert!(matches!(WeightedGraph::new(vec![], vec![], vec![]), Err(Error::EmptyGraph)));
    }

    #[test]
    fn json_family_and_inf_token() {
        let spec = GraphFamily::from_json_str(r#"{"family":"grid","params":{"d":2,"side":4,"kappa":0.25}}"#).unwrap();
        assert_eq!(
            spec,
            GraphFamily::Grid { d: 2, side: 4, lambda: 1.0, kappa: 0.25, boundary_kappa: None }
        );
        let spec =
            GraphFamily::from_json_str(r#"{"vertices":[1,2],"edges":[[1,2,1.5]],"kappa":{"1":"inf","2":0.5}}"#).unwrap();
        let GraphFamily::EdgeList { kappa, .. } = &spec else { panic!() };
        assert_eq!(kappa[&VertexId::Int(1)], f64::INFINITY);
        assert_eq!(kappa[&VertexId::Int(2)], 0.5);
    }

    #[test]
    fn induce_replaces_dirichlet_ends_by_midpoints() {
        let g = path([f64::INFINITY, 0.0, f64::INFINITY]);
        let h = induce_finite_killing(&g).unwrap();
        assert_eq!(h.len(), 3);
        assert_eq!(h.id(0), &VertexId::from("v"));
        assert_eq!(h.kappa(0), 0.0);
        for m in 1..3 {
            assert_eq!(h.kappa(m), 2.0);
            let e = h.edge_between(0, m).unwrap();
            assert_eq!(h.edge(e).weight, 2.0);
        }
        assert!(matches!(h.id(1), VertexId::MidPoint { .. }));
    }

    #[test]
    fn induce_is_identity_on_finite_killing() {
        let g = path([1.0, 0.0, 2.0]);
        let h = induce_finite_killing(&g).unwrap();
        assert_eq!(h.ids(), g.ids());
        assert_eq!(h.edges(), g.edges());
        assert_eq!(h.kappas(), g.kappas());
    }

    #[test]
    fn induce_rejects_fully_dirichlet_graph() {
        let g = WeightedGraph::new(vec![VertexId::Int(0)], vec![], vec![f64::INFINITY]).unwrap();
        assert!(matches!(induce_finite_killing(&g), Err(Error::EmptyGraph)));
        // removing the middle vertex splits the path
        let g = path([0.5, f64::INFINITY, 0.5]);
        assert!(matches!(induce_finite_killing(&g), Err(Error::Disconnected { .. })));
    }

    #[test]
    fn refine_splits_edge_in_half() {
        let g = WeightedGraph::new(vec![0.into(), 1.into()], vec![(0, 1, 1.0)], vec![1.0, 1.0]).unwrap();
        let r = refine(&g, 2, 0).unwrap();
        assert_eq!(r.graph().len(), 3);
        assert_eq!(r.edge_chain(0), &[0, 2, 1]);
        for &e in r.edge_chain_edges(0) {
            assert_eq!(r.graph().edge(e).weight, 2.0);
        }
        assert_eq!(r.graph().kappa(2), 0.0);
        assert_eq!(r.locus(2), Locus::Edge { edge: 0, k: 1, n: 2, t: 0.25 });
    }

    #[test]
    fn refine_cable_midpoint() {
        let g = WeightedGraph::new(vec![0.into()], vec![], vec![1.0]).unwrap();
        let r = refine(&g, 1, 1).unwrap();
        let z = r.cable_chain(0)[1];
        let e = r.graph().edge_between(0, z).unwrap();
        assert_relative_eq!(r.graph().edge(e).weight, 2.0);
        assert_relative_eq!(r.graph().kappa(z), 2.0);
        assert_eq!(r.graph().kappa(0), 0.0);
        assert_eq!(r.locus(z), Locus::Cable { vertex: 0, k: 1, n: 1, t: 0.25 });
    }

    #[test]
    fn spans_cover_segments() {
        let g = path([1.0, 0.0, 2.0]);
        let r = refine(&g, 3, 2).unwrap();
        let mut length: HashMap<Segment, f64> = HashMap::new();
        for e in 0..r.graph().edges().len() {
            let s = r.span(e);
            let d = (s.t_b - s.t_a).abs();
            assert_relative_eq!(d, r.graph().edge(e).rho(), max_relative = 1e-12);
            *length.entry(s.segment).or_default() += d;
        }
        assert_relative_eq!(length[&Segment::Edge(0)], 0.5, max_relative = 1e-12);
        assert_relative_eq!(length[&Segment::Edge(1)], 0.5, max_relative = 1e-12);
        // cable pieces plus the terminal killing length telescope to ρ_x
        let last = *r.cable_chain(2).last().unwrap();
        assert_relative_eq!(length[&Segment::Cable(2)] + 0.5 / r.graph().kappa(last), 0.25, max_relative = 1e-12);
        assert!(!length.contains_key(&Segment::Cable(1)));
    }

    #[test]
    fn identity_refinement() {
        let g = path([1.0, 0.0, 2.0]);
        let r = refine(&g, 1, 0).unwrap();
        assert_eq!(r.graph().ids(), g.ids());
        assert_eq!(r.graph().edges(), g.edges());
        assert_eq!(r.graph().kappas(), g.kappas());
    }

    #[test]
    fn embed_matches_loci() {
        let g = path([1.0, 0.0, 2.0]);
        let coarse = refine_uniform(&g, 2).unwrap();
        let fine = refine_uniform(&g, 4).unwrap();
        let map = coarse.embed_into(&fine).unwrap();
        for (c, &f) in map.iter().enumerate() {
            match (coarse.locus(c), fine.locus(f)) {
                (Locus::Vertex(a), Locus::Vertex(b)) => assert_eq!(a, b),
                (Locus::Edge { edge: a, t: s, .. }, Locus::Edge { edge: b, t, .. }) => {
                    assert_eq!(a, b);
                    assert_relative_eq!(s, t, max_relative = 1e-15);
                }
                (Locus::Cable { vertex: a, t: s, .. }, Locus::Cable { vertex: b, t, .. }) => {
                    assert_eq!(a, b);
                    assert_relative_eq!(s, t, max_relative = 1e-15);
                }
                other => panic!("locus mismatch {other:?}"),
            }
        }
        let three = refine_uniform(&g, 3).unwrap();
        assert!(three.embed_into(&fine).is_err());
    }
}
