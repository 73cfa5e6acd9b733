//! Experiment configuration: a JSON file whose fields can be overridden by
//! command-line flags, resolved into a graph plus numeric parameters.

use std::path::{Path, PathBuf};

use cablegff::{generate_graph, GraphFamily, WeightedGraph};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum TableFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Potential,
    CapLaw,
    Isom,
    Approx,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Potential => "potential",
            Command::CapLaw => "cap-law",
            Command::Isom => "isom",
            Command::Approx => "approx",
        }
    }
}

/// A vertex given by id (`12`, `"a"`) or, on grids, by coordinates (`[3, 3]`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VertexSpec {
    Coords(Vec<usize>),
    Index(i64),
    Name(String),
}

impl VertexSpec {
    /// Parses a flag value: `3,3` is a coordinate, anything else an id.
    pub fn parse_flag(s: &str) -> Self {
        if s.contains(',') {
            if let Ok(c) = s.split(',').map(|p| p.trim().parse::<usize>()).collect() {
                return VertexSpec::Coords(c);
            }
        }
        s.parse::<i64>().map_or_else(|_| VertexSpec::Name(s.to_string()), VertexSpec::Index)
    }
}

/// Fixed histogram bins over capacity values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Histogram {
    pub min: f64,
    pub max: f64,
    pub bins: usize,
}

impl Default for Histogram {
    fn default() -> Self {
        Histogram { min: 0.0, max: 40.0, bins: 40 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PotentialParams {
    pub tolerance: f64,
    pub refine_tolerance: f64,
    /// Extra seeded random vertex subsets on top of `{x0}`, the unit ball and
    /// the whole graph.
    pub random_sets: usize,
}

impl Default for PotentialParams {
    fn default() -> Self {
        PotentialParams { tolerance: 1e-10, refine_tolerance: 1e-9, random_sets: 3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CapLawParams {
    /// Largest KS distance accepted for the exact capacity at the finest level.
    pub ks_tolerance: f64,
    pub stderr_k: f64,
    /// Added to `stderr_k·stderr` in the Laplace comparison.
    pub laplace_slack: f64,
    /// Tail point `r = tail_multiple / g0`.
    pub tail_multiple: f64,
    pub tail_band: [f64; 2],
    /// Run the ±h comparison for negative levels.
    pub symmetry: bool,
    pub histogram: Histogram,
}

impl Default for CapLawParams {
    fn default() -> Self {
        CapLawParams {
            ks_tolerance: 0.015,
            stderr_k: 3.0,
            laplace_slack: 0.005,
            tail_multiple: 50.0,
            tail_band: [0.7, 1.3],
            symmetry: true,
            histogram: Histogram::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IsomParams {
    /// Sets for the vacancy formula; default `{x0}` and the balls of radius
    /// one and two around it.
    pub test_sets: Option<Vec<Vec<VertexSpec>>>,
    /// Number of random vertex pairs for the covariance check.
    pub pairs: usize,
    pub stderr_k: f64,
    /// Number of samples whose local times, signed fields and excursions are
    /// dumped.
    pub dump_samples: u64,
}

impl Default for IsomParams {
    fn default() -> Self {
        IsomParams { test_sets: None, pairs: 10, stderr_k: 3.0, dump_samples: 0 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Exhaustion {
    /// Sup-norm boxes around `x0`, grids only.
    #[default]
    Box,
    /// Graph-distance balls around `x0`.
    Ball,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApproxParams {
    pub exhaustion: Exhaustion,
    /// Radii of the domains; default from the first radius holding the block
    /// up to the first one covering the whole graph.
    pub radii: Option<Vec<usize>>,
    /// Fixed set whose capacity is tracked; default the unit square at `x0`.
    pub block: Option<Vec<VertexSpec>>,
    pub tolerance: f64,
    /// Samples per domain for the capacity law drift.
    pub drift_samples: u64,
}

impl Default for ApproxParams {
    fn default() -> Self {
        ApproxParams { exhaustion: Exhaustion::Box, radii: None, block: None, tolerance: 1e-12, drift_samples: 2000 }
    }
}

/// Everything a run needs, as read from JSON. Unset fields fall back to the
/// defaults of the command.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Graph spec object, or a path to a JSON file holding one.
    pub graph: Option<Value>,
    pub x0: Option<VertexSpec>,
    pub h: Option<Vec<f64>>,
    pub u: Option<Vec<f64>>,
    pub samples: Option<u64>,
    pub refine: Option<Vec<u32>>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    pub format: Option<TableFormat>,
    pub alpha: Option<f64>,
    pub potential: PotentialParams,
    pub cap_law: CapLawParams,
    pub isom: IsomParams,
    pub approx: ApproxParams,
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| CliError::config(format!("invalid config: {e}")))
    }
}

/// Default graph spec of each command: the settings of the standard runs.
pub fn default_graph(command: Command) -> Value {
    let (side, kappa) = match command {
        Command::Potential => (5, 1.0),
        Command::CapLaw => (8, 0.25),
        Command::Isom => (6, 0.5),
        Command::Approx => (16, 0.1),
    };
    serde_json::json!({ "family": "grid", "params": { "d": 2, "side": side, "lambda": 1.0, "kappa": kappa } })
}

/// Configuration with every default filled in and the graph built.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub command: Command,
    /// The graph spec as given, for the manifest.
    pub graph_spec: Value,
    pub family: GraphFamily,
    pub graph: WeightedGraph,
    pub x0: usize,
    pub h: Vec<f64>,
    pub u: Vec<f64>,
    pub samples: u64,
    pub refine: Vec<u32>,
    pub seed: u64,
    pub workers: usize,
    pub out: Option<PathBuf>,
    pub format: TableFormat,
    pub alpha: f64,
    pub potential: PotentialParams,
    pub cap_law: CapLawParams,
    pub isom: IsomParams,
    pub approx: ApproxParams,
}

fn load_graph_spec(v: &Value) -> Result<(Value, GraphFamily)> {
    let spec = match v {
        Value::String(s) if s.trim_start().starts_with('{') => {
            serde_json::from_str(s).map_err(|e| CliError::config(format!("invalid inline graph spec: {e}")))?
        }
        Value::String(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::config(format!("cannot read graph {path}: {e}")))?;
            serde_json::from_str(&text).map_err(|e| CliError::config(format!("invalid graph file {path}: {e}")))?
        }
        other => other.clone(),
    };
    let family = GraphFamily::from_json(&spec).map_err(|e| CliError::config(format!("graph spec: {e}")))?;
    Ok((spec, family))
}

/// Vertex index of a spec on `graph`.
pub fn resolve_vertex(spec: &VertexSpec, family: &GraphFamily, graph: &WeightedGraph) -> Result<usize> {
    match spec {
        VertexSpec::Coords(c) => match family {
            GraphFamily::Grid { d, side, .. } => {
                if c.len() != *d || c.iter().any(|&x| x >= *side) {
                    return Err(CliError::config(format!("coordinates {c:?} outside the {side}^{d} grid")));
                }
                Ok(c.iter().fold(0, |acc, &x| acc * side + x))
            }
            _ => Err(CliError::config("vertex coordinates need a grid graph")),
        },
        VertexSpec::Index(i) => graph.find(&i.to_string()).map_err(|e| CliError::config(e.to_string())),
        VertexSpec::Name(s) => graph.find(s).map_err(|e| CliError::config(e.to_string())),
    }
}

/// Grid coordinates of a vertex index.
pub fn grid_coords(index: usize, d: usize, side: usize) -> Vec<usize> {
    let mut c = vec![0; d];
    let mut rest = index;
    for k in (0..d).rev() {
        c[k] = rest % side;
        rest /= side;
    }
    c
}

fn central_vertex(family: &GraphFamily) -> usize {
    match family {
        GraphFamily::Grid { d, side, .. } => {
            let mid = (side - 1) / 2;
            (0..*d).fold(0, |acc, _| acc * side + mid)
        }
        _ => 0,
    }
}

impl ExperimentConfig {
    pub fn resolve(&self, command: Command) -> Result<Resolved> {
        let (graph_spec, family) = load_graph_spec(self.graph.as_ref().unwrap_or(&default_graph(command)))?;
        let graph = generate_graph(&family).map_err(|e| CliError::config(format!("graph: {e}")))?;
        let x0 = match &self.x0 {
            Some(spec) => resolve_vertex(spec, &family, &graph)?,
            None => central_vertex(&family),
        };
        let samples = self.samples.unwrap_or(match command {
            Command::Potential => 0,
            Command::CapLaw => 200_000,
            Command::Isom => 50_000,
            Command::Approx => self.approx.drift_samples,
        });
        let mut refine = self.refine.clone().unwrap_or_else(|| vec![1, 2, 4, 8]);
        refine.sort_unstable();
        refine.dedup();
        if refine.is_empty() || refine[0] == 0 {
            return Err(CliError::config("refinement levels must be positive"));
        }
        let finest = *refine.last().unwrap();
        if refine.iter().any(|r| finest % r != 0) {
            return Err(CliError::config(format!("refinement levels {refine:?} must all divide the finest one")));
        }
        let h = self.h.clone().unwrap_or_else(|| vec![0.0]);
        let u = self.u.clone().unwrap_or_else(|| match command {
            Command::Isom => vec![1.0],
            _ => vec![0.1, 0.5, 1.0, 2.0],
        });
        if h.iter().any(|x| !x.is_finite()) {
            return Err(CliError::config("levels h must be finite"));
        }
        if u.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
            return Err(CliError::config("levels u must be positive"));
        }
        let alpha = self.alpha.unwrap_or(0.01);
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(CliError::config("alpha must lie in (0, 1)"));
        }
        let workers = self.workers.unwrap_or(1);
        if workers == 0 {
            return Err(CliError::config("workers must be at least 1"));
        }
        if command == Command::Approx && self.approx.exhaustion == Exhaustion::Box && !matches!(family, GraphFamily::Grid { .. }) {
            return Err(CliError::config("box exhaustion needs a grid graph; use \"ball\""));
        }
        Ok(Resolved {
            command,
            graph_spec,
            family,
            graph,
            x0,
            h,
            u,
            samples,
            refine,
            seed: self.seed.unwrap_or(1),
            workers,
            out: self.out.clone(),
            format: self.format.unwrap_or_default(),
            alpha,
            potential: self.potential.clone(),
            cap_law: self.cap_law.clone(),
            isom: self.isom.clone(),
            approx: self.approx.clone(),
        })
    }
}

impl Resolved {
    /// Echo of the effective configuration for the manifest.
    pub fn echo(&self) -> Value {
        serde_json::json!({
            "command": self.command.name(),
            "graph": self.graph_spec,
            "vertices": self.graph.len(),
            "x0": self.graph.id(self.x0).to_string(),
            "h": self.h,
            "u": self.u,
            "samples": self.samples,
            "refine": self.refine,
            "seed": self.seed,
            "workers": self.workers,
            "format": self.format,
            "alpha": self.alpha,
            "potential": self.potential,
            "cap_law": self.cap_law,
            "isom": self.isom,
            "approx": self.approx,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_command() {
        let r = ExperimentConfig::default().resolve(Command::CapLaw).unwrap();
        assert_eq!(r.graph.len(), 64);
        assert_eq!(r.x0, 27);
        assert_eq!(r.samples, 200_000);
        assert_eq!(r.refine, vec![1, 2, 4, 8]);
        let r = ExperimentConfig::default().resolve(Command::Isom).unwrap();
        assert_eq!(r.x0, 14);
        assert_eq!(r.u, vec![1.0]);
    }

    #[test]
    fn vertex_specs() {
        assert_eq!(VertexSpec::parse_flag("3,3"), VertexSpec::Coords(vec![3, 3]));
        assert_eq!(VertexSpec::parse_flag("12"), VertexSpec::Index(12));
        assert_eq!(VertexSpec::parse_flag("a"), VertexSpec::Name("a".into()));
        let cfg = ExperimentConfig::from_json_str(r#"{"x0": [1, 2], "graph": {"family": "grid", "params": {"side": 4, "kappa": 1}}}"#).unwrap();
        assert_eq!(cfg.resolve(Command::Potential).unwrap().x0, 6);
        assert_eq!(grid_coords(6, 2, 4), vec![1, 2]);
    }

    #[test]
    fn bad_configs_are_config_errors() {
        let unknown = ExperimentConfig::from_json_str(r#"{"sampels": 3}"#).unwrap_err();
        assert_eq!(unknown.exit_code(), 2);
        let cfg = ExperimentConfig { refine: Some(vec![2, 3]), ..Default::default() };
        assert_eq!(cfg.resolve(Command::CapLaw).unwrap_err().exit_code(), 2);
        let cfg = ExperimentConfig::from_json_str(r#"{"graph": {"vertices": ["a", "b"], "edges": [["a", "b", 2.0]], "kappa": {"a": 0, "b": 0}}}"#).unwrap();
        assert_eq!(cfg.resolve(Command::Potential).unwrap_err().exit_code(), 2);
    }
}
