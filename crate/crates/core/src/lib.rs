#![cfg_attr(not(feature = "std"), no_std)]
#![allow(clippy::result_large_err, clippy::neg_cmp_op_on_partial_ord)]
//! Meta-learned implicit occupancy networks for reconstructing binary 3D
//! shapes from sparse planar observations.
//!
//! The crate is `no_std` (with `alloc`) when the default `std` feature is
//! disabled. File formats, timing and the command-line tooling live in the
//! companion `metashape` crate.

extern crate alloc;

pub mod clock;
pub mod error;
pub mod loss;
pub mod math;
pub mod meta;
pub mod metrics;
pub mod recon;
pub mod shapes;
pub mod siren;
pub mod tensor;
pub mod volume;

pub use error::{Error, Result};
