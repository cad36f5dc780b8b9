//! Polynomial bases on cells and faces, and quadrature rules.

mod basis;
mod quadrature;

pub use basis::{dim_poly, dim_poly_face, monomial_exponents, CellBasis, FaceBasis};
pub use quadrature::{
    cell_points, exact_reference_monomial_integral, face_points, gauss_legendre, quad_for_degree, QuadratureRule,
    MAX_QUAD_DEGREE,
};

use crate::mesh::Point;

/// Per-run choice of extra quadrature order for non-polynomial integrands
/// (loads, exact solutions, interpolated fields).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QuadPolicy {
    pub extra: usize,
}

impl Default for QuadPolicy {
    fn default() -> Self {
        Self { extra: 2 }
    }
}

impl QuadPolicy {
    pub fn with_extra(extra: usize) -> Self {
        Self { extra }
    }

    /// Degree exact for every polynomial product in the local operators and the smoother.
    pub fn local(p: usize) -> usize {
        2 * (p + 3)
    }

    /// Degree used for projections of general fields onto `P^p`.
    pub fn projection(&self, p: usize) -> usize {
        Self::local(p) + self.extra
    }

    /// Degree used for load integrals against the smoother output (degree `2 + max(p, 1)`).
    pub fn load(&self, p: usize) -> usize {
        smoother_degree(p) + self.extra
    }

    /// Degree used for error integrals.
    pub fn error(p: usize) -> usize {
        2 * (p + 2) + 4
    }
}

/// Polynomial degree `d + max(p, 1)` of the smoother output in two dimensions.
pub fn smoother_degree(p: usize) -> usize {
    2 + p.max(1)
}

/// Integrates `f` over cell `k` with a rule exact to `degree`.
pub fn integrate_cell(mesh: &crate::SimplicialMesh, k: usize, degree: usize, mut f: impl FnMut(Point) -> f64) -> f64 {
    cell_points(mesh, k, degree).map(|(x, w)| w * f(x)).sum()
}
