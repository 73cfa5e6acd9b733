//! Gaussian free field, random interlacements and cluster capacities on
//! finite cable systems.
//!
//! The crate is organised bottom-up:
//!
//! * [`graph`]: weighted graphs with killing, mid-point induction of
//!   Dirichlet boundaries and network-equivalent refinement;
//! * [`linalg`]: sparse SPD factorizations used by the Green operator;
//! * [`potential`]: Green functions, equilibrium measures, capacities and
//!   hitting distributions;
//! * [`gff`]: exact field sampling, cable crossing events, level-set
//!   cluster exploration and cluster capacities;
//! * [`interlacement`]: excursion sampler for random interlacements and the
//!   coupling with the free field;
//! * [`analytics`]: the closed-form capacity law and the statistical tests
//!   used to compare simulations against it.

pub mod analytics;
pub mod error;
pub mod gff;
pub mod graph;
pub mod interlacement;
pub mod linalg;
pub mod potential;
pub mod rng;

pub use error::{Error, Result};
pub use graph::{generate_graph, induce_finite_killing, refine, refine_uniform, GraphFamily, Locus, RefinedGraph, Segment, Span, VertexId, WeightedGraph};
pub use potential::{green_operator, CableGreen, EquilibriumResult, GreenKernel, GreenOperator};
pub use rng::{Purpose, StreamKey};

/// Version of this crate, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
