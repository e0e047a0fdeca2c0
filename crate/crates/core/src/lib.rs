//! Form-type k-Hessian equations `S_k(μ[u]) = h`, where μ collects the sums
//! of n−1 eigenvalues of the complex Hessian: operator algebra, radial
//! fundamental solutions, subsolutions, punctured-domain solvers and the
//! numerical checks built on them.

pub mod diagnostics;
pub mod error;
pub mod fundamental;
pub mod grid;
pub mod hessian;
pub mod radial;
pub mod sampling;
pub mod subsolution;
pub mod symfun;

pub use error::{Error, Result};
