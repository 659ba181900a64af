//! Einsum-network probabilistic circuits: random binary region graphs,
//! log-space inference with C class heads, and full-batch EM.

mod em;
mod graph;
mod model;

pub use em::{em_fit, is_monotone, EmConfig};
pub use graph::{build_region_graph, Region, RegionGraph};
pub use model::{argmax_lowest, posterior_from_loglik, CircuitSpec, EinsumCircuit, NodeParams, TrainingInfo};
