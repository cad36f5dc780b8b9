//! Hybrid high-order (HHO) discretization of the Poisson problem
//! `-Δu = f` in `Ω`, `u = 0` on `∂Ω`, on matching simplicial meshes.
//!
//! Two right-hand sides are provided for the same HHO bilinear form:
//!
//! * the classical one, `σ̂ ↦ ∫ f σ_M`, defined only for `f ∈ L²`;
//! * a smoothed one, `σ̂ ↦ ⟨f, S_H σ̂⟩`, where `S_H` maps HHO pairs into
//!   `H¹₀`-conforming piecewise polynomials while preserving cell moments of
//!   degree `p-1` and face moments of degree `p`. It is defined for every
//!   load `f = f₀ - div g ∈ H⁻¹` and yields a quasi-optimal method.
//!
//! Module map:
//!
//! | module | contents |
//! |--------|----------|
//! | [`mesh`] | simplicial meshes, refinement, mesh files |
//! | [`polyquad`] | scaled monomial bases and quadrature |
//! | [`local_ops`] | projections, reconstruction, stabilization, elliptic projection |
//! | [`smoothing`] | bubbles, averaging, the moment-preserving smoother |
//! | [`system`] | assembly, static condensation, linear solves |
//! | [`analysis`] | errors, EOC, manufactured cases, stability constants |
//! | [`verification`] | structural identity checks |

pub mod analysis;
pub mod error;
pub mod field;
pub mod linalg;
pub mod local_ops;
pub mod mesh;
pub mod polyquad;
pub mod smoothing;
pub mod system;
pub mod verification;

pub use error::{Error, Result};
pub use field::{ScalarFn, VectorFn};
pub use mesh::{Point, SimplicialMesh};

/// Highest polynomial degree `p` of the discrete unknowns.
pub const MAX_DEGREE: usize = 3;

pub(crate) mod par {
    //! Thin wrapper so the crate builds with and without rayon.

    #[cfg(feature = "parallel")]
    pub fn map_collect<T, F>(n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }

    #[cfg(not(feature = "parallel"))]
    pub fn map_collect<T, F>(n: usize, f: F) -> Vec<T>
    where
        F: Fn(usize) -> T,
    {
        (0..n).map(f).collect()
    }
}
