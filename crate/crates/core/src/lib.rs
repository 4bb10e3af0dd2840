//! Multi-scale structure search for tensor networks.

// NaN must fail range checks, and index loops read best in the kernels
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod als;
pub mod discovery;
pub mod error;
pub mod graph;
pub mod io;
pub mod linalg;
pub mod lm;
pub mod metrics;
pub mod objective;
pub mod presets;
pub mod scale;
pub mod search;
pub mod synth;
pub mod tensor;
pub mod trals;

pub use error::{Result, RgtnError};
pub use graph::{EdgeId, NodeId, StructureSignature, TNGraph, TopologyPreset};
pub use objective::{CouplingConstants, LossBreakdown, Problem};
pub use search::{rg_search, Init, RGConfig, RGReport};
pub use tensor::DenseTensor;
