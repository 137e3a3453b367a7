//! Numerical laboratory for maximal surfaces in anti-de Sitter 3-space
//! parameterized by a hyperbolic metric and a holomorphic quadratic
//! differential, their holonomy, and their behaviour along pinching
//! (node-opening) families.

// negated float comparisons are deliberate: they reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ads;
pub mod domains;
pub mod error;
pub mod frame;
pub mod gauss;
pub mod grid;
pub mod pinch;
pub mod verify;

pub use error::{ErrorCategory, LabError, Result};
