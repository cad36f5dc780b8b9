use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::mesh::{Point, SimplicialMesh};

/// Highest polynomial degree for which rules are tabulated.
pub const MAX_QUAD_DEGREE: usize = 40;

/// Quadrature rule on the reference simplex of dimension 1 (edge) or 2 (triangle).
///
/// Points are stored in barycentric coordinates; weights are normalized so
/// that they sum to one (multiply by the simplex measure).
#[derive(Clone, Debug)]
pub struct QuadratureRule {
    simplex_dim: usize,
    bary: Vec<f64>,
    weights: Vec<f64>,
    degree: usize,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn simplex_dim(&self) -> usize {
        self.simplex_dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Barycentric coordinates of the points.
    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.bary.chunks(self.simplex_dim + 1)
    }
}

/// `n`-point Gauss–Legendre nodes and weights on `[0, 1]` (weights sum to one).
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "Gauss–Legendre needs at least one point");
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut t = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            // after the loop p1 = P_n(t), p0 = P_{n-1}(t)
            let (mut p0, mut p1) = (1.0, t);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * t * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (t * p1 - p0) / (t * t - 1.0);
            let dt = p1 / dp;
            t -= dt;
            if dt.abs() < 1e-16 {
                break;
            }
        }
        x[i] = 0.5 * (1.0 - t);
        w[i] = 1.0 / ((1.0 - t * t) * dp * dp);
    }
    (x, w)
}

fn edge_rule(degree: usize) -> QuadratureRule {
    let n = degree / 2 + 1;
    let (x, w) = gauss_legendre(n);
    QuadratureRule {
        simplex_dim: 1,
        bary: x.iter().flat_map(|&t| [1.0 - t, t]).collect(),
        weights: w,
        degree,
    }
}

fn triangle_rule(degree: usize) -> QuadratureRule {
    let sym = |pts: Vec<[f64; 3]>, weights: Vec<f64>| QuadratureRule {
        simplex_dim: 2,
        bary: pts.into_iter().flatten().collect(),
        weights,
        degree,
    };
    match degree {
        0 | 1 => sym(vec![[1.0 / 3.0; 3]], vec![1.0]),
        2 => {
            let (a, b) = (2.0 / 3.0, 1.0 / 6.0);
            sym(vec![[a, b, b], [b, a, b], [b, b, a]], vec![1.0 / 3.0; 3])
        }
        3..=5 => {
            // seven-point rule exact to degree 5
            let s = 15f64.sqrt();
            let (a1, a2) = ((6.0 - s) / 21.0, (6.0 + s) / 21.0);
            let (w1, w2) = ((155.0 - s) / 1200.0, (155.0 + s) / 1200.0);
            let (b1, b2) = (1.0 - 2.0 * a1, 1.0 - 2.0 * a2);
            sym(
                vec![
                    [1.0 / 3.0; 3],
                    [a1, a1, b1],
                    [a1, b1, a1],
                    [b1, a1, a1],
                    [a2, a2, b2],
                    [a2, b2, a2],
                    [b2, a2, a2],
                ],
                vec![9.0 / 40.0, w1, w1, w1, w2, w2, w2],
            )
        }
        _ => {
            // collapsed (Duffy) product of Gauss–Legendre rules: x = s, y = (1 - s) t
            let (xs, ws) = gauss_legendre((degree + 2).div_ceil(2));
            let (xt, wt) = gauss_legendre((degree + 1).div_ceil(2));
            let mut bary = Vec::with_capacity(3 * xs.len() * xt.len());
            let mut weights = Vec::with_capacity(xs.len() * xt.len());
            for (&s, &a) in xs.iter().zip(&ws) {
                for (&t, &b) in xt.iter().zip(&wt) {
                    let (x, y) = (s, (1.0 - s) * t);
                    bary.extend_from_slice(&[1.0 - x - y, x, y]);
                    weights.push(2.0 * a * b * (1.0 - s));
                }
            }
            QuadratureRule { simplex_dim: 2, bary, weights, degree }
        }
    }
}

static EDGE_RULES: OnceLock<Vec<QuadratureRule>> = OnceLock::new();
static TRIANGLE_RULES: OnceLock<Vec<QuadratureRule>> = OnceLock::new();

/// Rule on the reference simplex of dimension `simplex_dim` exact to `degree`.
pub fn quad_for_degree(simplex_dim: usize, degree: usize) -> Result<&'static QuadratureRule> {
    if degree > MAX_QUAD_DEGREE {
        return Err(Error::UnsupportedDegree { requested: degree, max: MAX_QUAD_DEGREE });
    }
    match simplex_dim {
        1 => Ok(&EDGE_RULES.get_or_init(|| (0..=MAX_QUAD_DEGREE).map(edge_rule).collect())[degree]),
        2 => Ok(&TRIANGLE_RULES.get_or_init(|| (0..=MAX_QUAD_DEGREE).map(triangle_rule).collect())[degree]),
        d => Err(Error::UnsupportedDimension(d + 1)),
    }
}

fn rule(simplex_dim: usize, degree: usize) -> &'static QuadratureRule {
    quad_for_degree(simplex_dim, degree.min(MAX_QUAD_DEGREE)).expect("simplex dimension 1 or 2")
}

/// Physical quadrature points and weights on cell `k`.
pub fn cell_points(mesh: &SimplicialMesh, k: usize, degree: usize) -> impl Iterator<Item = (Point, f64)> + '_ {
    let r = rule(2, degree);
    let area = mesh.geometry(k).area;
    r.points().zip(r.weights()).map(move |(l, &w)| (mesh.map_to_cell(k, l), w * area))
}

/// Physical quadrature points and weights on face `f`.
pub fn face_points(mesh: &SimplicialMesh, f: usize, degree: usize) -> impl Iterator<Item = (Point, f64)> + '_ {
    let r = rule(1, degree);
    let len = mesh.face(f).length;
    r.points().zip(r.weights()).map(move |(l, &w)| (mesh.map_to_face(f, l), w * len))
}

/// `∫ x^a y^b` over the reference triangle `(0,0), (1,0), (0,1)`: `a! b! / (a + b + 2)!`.
pub fn exact_reference_monomial_integral(a: u32, b: u32) -> f64 {
    let fact = |n: u32| (1..=n).map(f64::from).product::<f64>();
    fact(a) * fact(b) / fact(a + b + 2)
}
