//! Dense-tensor kernel: reverse-mode autodiff over 64-bit matrices, the
//! attention primitive, gradient checking, Adam with warmup, parameter
//! sets, and bit-exact checkpoints.

pub mod adam;
pub mod checkpoint;
pub mod grad_check;
pub mod graph;
pub mod params;

pub use adam::AdamState;
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use grad_check::{grad_check, primitive_grad_errors};
pub use graph::{multi_head_attention, Graph, NodeId, LOG_FLOOR, MASK_NEG};
pub use params::{GradAccumulator, ParamNodes, ParamSet};
