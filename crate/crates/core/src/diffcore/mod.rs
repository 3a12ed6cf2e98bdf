//! Minimal reverse-mode differentiation engine, optimizer, and parameter registry.
//!
//! Everything learnable in the crate (encoder, time encoder, prompts,
//! condition-nets) lives in a [`ParamRegistry`] and is pulled into a fresh
//! [`Graph`] per forward pass.

mod adam;
mod gradcheck;
mod graph;
mod registry;
mod snapshot;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use gradcheck::{check_gradients, relative_error, GradCheckReport, REL_ERROR_FLOOR};
pub use graph::{Graph, Var};
pub use registry::{Param, ParamId, ParamRegistry};
pub use snapshot::{Snapshot, FORMAT_VERSION};
pub use tensor::Tensor;
