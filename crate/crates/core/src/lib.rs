//! Design-space exploration for convolutional DNN accelerators: an analytical
//! loop-nest cost model, a temporal mapping generator supporting uneven
//! per-operand blocking, and a memory hierarchy generator.

mod error;

pub mod archgen;
pub mod architecture;
pub mod cost;
pub mod extractor;
pub mod io;
pub mod mapping;
pub mod oracle;
pub mod presets;
pub mod tmg;
pub mod workload;

pub use error::{Error, Result};
pub use workload::{LayerSpec, LoopDim, Operand, Precision};
