//! Quadrature-evaluable fields.
//!
//! Every field is evaluated together with the index of the cell the point
//! belongs to, so piecewise-defined data (kinks along mesh lines, broken
//! polynomials) is unambiguous on interfaces.

use std::sync::Arc;

use crate::mesh::Point;

#[derive(Clone)]
pub struct ScalarFn(Arc<dyn Fn(usize, Point) -> f64 + Send + Sync>);

impl ScalarFn {
    /// A field given by one global formula.
    pub fn new(f: impl Fn(Point) -> f64 + Send + Sync + 'static) -> Self {
        Self(Arc::new(move |_, x| f(x)))
    }

    /// A field whose formula depends on the cell.
    pub fn cellwise(f: impl Fn(usize, Point) -> f64 + Send + Sync + 'static) -> Self {
        Self(Arc::new(f))
    }

    pub fn zero() -> Self {
        Self::new(|_| 0.0)
    }

    #[inline]
    pub fn eval(&self, cell: usize, x: Point) -> f64 {
        (self.0)(cell, x)
    }
}

impl std::fmt::Debug for ScalarFn {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("ScalarFn")
    }
}

#[derive(Clone)]
pub struct VectorFn(Arc<dyn Fn(usize, Point) -> Point + Send + Sync>);

impl VectorFn {
    pub fn new(f: impl Fn(Point) -> Point + Send + Sync + 'static) -> Self {
        Self(Arc::new(move |_, x| f(x)))
    }

    pub fn cellwise(f: impl Fn(usize, Point) -> Point + Send + Sync + 'static) -> Self {
        Self(Arc::new(f))
    }

    pub fn zero() -> Self {
        Self(Arc::new(|_, _| [0.0; 2]))
    }

    #[inline]
    pub fn eval(&self, cell: usize, x: Point) -> Point {
        (self.0)(cell, x)
    }
}

impl std::fmt::Debug for VectorFn {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("VectorFn")
    }
}
