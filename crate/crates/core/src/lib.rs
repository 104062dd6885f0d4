//! Corner-case traffic scenario generation by learned scene-graph
//! perturbation.
//!
//! The crate turns regular-driving frames into heterogeneous scene graphs,
//! trains an edge-featured graph-attention link predictor that rewrites a
//! regular graph into a corner-case graph, and replays predicted corner
//! cases in a small kinematic simulator against rule-based ego controllers.
//!
//! Runnable walkthroughs live in this crate's `examples/` directory.

pub mod graph;
pub mod extended;
pub mod numeric;
pub mod model;
pub mod metrics;
pub mod training;
pub mod scenario;
pub mod sim;
pub mod config;
pub mod pipeline;
