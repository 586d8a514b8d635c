//! Convex integration for the von Kármán system
//! `(grad v)^T grad v / 2 + sym grad w = A` on uniform planar grids.
//!
//! The crate builds oscillatory corrections that shrink the metric deficit
//! `A - metric(v, w)` while keeping `(v, w)` close in `C^0`.

// `!(x > 0.0)` guards also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::large_enum_variant)]

pub mod calculus;
pub mod conformal;
pub mod error;
pub mod export;
pub mod field;
pub mod grid;
pub mod mollify;
pub mod nash_kuiper;
pub mod norms;
pub mod par;
pub mod poisson;
pub mod primitive;
pub mod stage;
pub mod step;

pub use error::{Error, Result};
pub use field::{Field, Shape};
pub use grid::{Grid2, Rect};
