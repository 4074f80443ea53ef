//! A numerical laboratory for quantum behaviour emerging from deterministic
//! dynamics.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod discrete;
pub mod fj;
pub mod koopman;
pub mod ode;
pub mod par;
pub mod pathint;
pub mod poly;
pub mod thooft;

pub use nalgebra;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
