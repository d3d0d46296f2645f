//! Numerical laboratory for nonlocal quadratic energies
//! `F_ε[u] = ½ ∫∫ ρ_ε(y−x) |u(y)−u(x)|² / |y−x|² dy dx`
//! and their local / nonlocal limits as `ε → 0`.

pub mod diagnostics;
pub mod energy;
pub mod experiments;
pub mod error;
pub mod kernels;
pub mod measures;
pub mod quad;
pub mod special;
pub mod testfuncs;

pub use error::{Error, Result};
