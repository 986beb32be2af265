#![no_std]

extern crate alloc;

pub mod dynamics;
pub mod error;
pub mod gaussian;
pub mod lindblad;
pub mod linalg;
pub mod multilevel;
pub mod ode;
pub mod reconstruction;

pub use error::{Error, Result};
pub use gaussian::{GaussianState, Mode, Quadrature, SqueezeParams};
