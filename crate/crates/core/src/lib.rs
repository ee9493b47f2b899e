//! Simulation and estimation toolkit for the frog model with death.
//!
//! Particles sit on the vertices of a graph, `Poisson(lambda)` per vertex.
//! Activated particles perform rate-1 continuous-time random walks for a fixed
//! lifespan `t` and wake every particle they visit. The set of vertices woken
//! from the origin is a dependent directed percolation cluster.

// `!(x > 0.0)` style guards are deliberate: they reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod estimate;
pub mod estimators;
pub mod experiments;
pub mod frogs;
pub mod graph;
pub mod rng;
pub mod walks;

pub use error::{Error, Result};
pub use estimate::Estimate;
pub use frogs::{Cluster, FrogParams, ParticleField, RestrictedActivation, Schedule, StopReason, StopRule};
pub use graph::{build_graph, BoundaryMode, Graph, GraphFamily, GraphSpec, Vertex};
pub use walks::{KilledWalkTable, Trajectory};
