//! Relativistic two-photon EPR correlators in reducible N-oscillator
//! representations of the photon field, and a finite-dimensional Fock-space
//! oracle that checks the closed forms by brute-force linear algebra.

pub mod cli;
pub mod correlators;
pub mod error;
pub mod fock_oracle;
pub mod measure;
pub mod spinor_tetrad;
pub mod states;
pub mod vacuum;

pub use error::{Error, Result};

use std::f64::consts::PI;

/// Reduces an angle to (-pi, pi].
pub fn wrap_angle(x: f64) -> f64 {
    let mut y = x.rem_euclid(2.0 * PI);
    if y > PI {
        y -= 2.0 * PI;
    }
    y
}
