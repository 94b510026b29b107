//! Dense tensors and reverse-mode differentiation with support for
//! differentiating through computed gradients.

mod array;
mod params;
mod tape;

pub use array::{Shape, Tensor};
pub use params::ParamVector;
pub use tape::{primitive_forward, NodeId, Primitive, Tape, Var};

#[cfg(test)]
mod tests;
