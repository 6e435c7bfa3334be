//! Minimal reverse-mode engine over static layer graphs.

mod adam;
pub mod checkpoint;
mod gradcheck;
mod graph;
pub mod ops;
mod real;
mod spectral;
mod tensor;

pub use adam::AdamState;
pub use gradcheck::{grad_check, grad_check_against, rel_err, CoordError, GradCheckConfig, GradCheckReport};
pub use graph::{Activations, Gradients, LayerSpec, Network, NetworkBuilder, Node, NodeId, Param};
pub use real::Real;
pub use spectral::{matrixize, spectral_norm, tensor_spectral_norm};
pub use tensor::Tensor;
