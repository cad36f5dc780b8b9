use nalgebra::DMatrix;

use super::quadrature::{cell_points, face_points};
use crate::mesh::{Point, SimplicialMesh};

/// `dim P^q` in two variables.
pub fn dim_poly(q: usize) -> usize {
    (q + 1) * (q + 2) / 2
}

/// `dim P^q` on a face (one variable).
pub fn dim_poly_face(q: usize) -> usize {
    q + 1
}

/// Exponents `(a, b)` of the monomials of total degree `≤ q`, ordered by
/// total degree, then by decreasing power of `x`.
pub fn monomial_exponents(q: usize) -> Vec<(u32, u32)> {
    let mut out = Vec::with_capacity(dim_poly(q));
    for k in 0..=q as u32 {
        for a in (0..=k).rev() {
            out.push((a, k - a));
        }
    }
    out
}

/// Scaled monomials `((x - m_K) / h_K)^α`, `|α| ≤ q`, on one cell.
///
/// The bases of different degrees on the same cell are nested: the first
/// `dim_poly(q)` functions of degree `q + 1` are the degree-`q` basis.
#[derive(Clone, Debug)]
pub struct CellBasis {
    pub cell: usize,
    pub center: Point,
    pub scale: f64,
    pub degree: usize,
}

impl CellBasis {
    pub fn new(mesh: &SimplicialMesh, cell: usize, degree: usize) -> Self {
        let g = mesh.geometry(cell);
        Self { cell, center: g.barycenter, scale: g.diameter, degree }
    }

    pub fn len(&self) -> usize {
        dim_poly(self.degree)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn powers(&self, x: Point) -> (Vec<f64>, Vec<f64>) {
        let xi = (x[0] - self.center[0]) / self.scale;
        let eta = (x[1] - self.center[1]) / self.scale;
        let mut px = vec![1.0; self.degree + 1];
        let mut py = vec![1.0; self.degree + 1];
        for i in 1..=self.degree {
            px[i] = px[i - 1] * xi;
            py[i] = py[i - 1] * eta;
        }
        (px, py)
    }

    pub fn eval_into(&self, x: Point, out: &mut [f64]) {
        let (px, py) = self.powers(x);
        let mut i = 0;
        for k in 0..=self.degree {
            for a in (0..=k).rev() {
                out[i] = px[a] * py[k - a];
                i += 1;
            }
        }
    }

    pub fn eval(&self, x: Point) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.eval_into(x, &mut out);
        out
    }

    pub fn grad_into(&self, x: Point, out: &mut [Point]) {
        let (px, py) = self.powers(x);
        let s = 1.0 / self.scale;
        let mut i = 0;
        for k in 0..=self.degree {
            for a in (0..=k).rev() {
                let b = k - a;
                let gx = if a > 0 { a as f64 * px[a - 1] * py[b] * s } else { 0.0 };
                let gy = if b > 0 { b as f64 * px[a] * py[b - 1] * s } else { 0.0 };
                out[i] = [gx, gy];
                i += 1;
            }
        }
    }

    pub fn grad(&self, x: Point) -> Vec<Point> {
        let mut out = vec![[0.0; 2]; self.len()];
        self.grad_into(x, &mut out);
        out
    }

    /// Laplacians of the basis functions at `x`.
    pub fn laplacian(&self, x: Point) -> Vec<f64> {
        let (px, py) = self.powers(x);
        let s2 = 1.0 / (self.scale * self.scale);
        let mut out = Vec::with_capacity(self.len());
        for k in 0..=self.degree {
            for a in (0..=k).rev() {
                let b = k - a;
                let lx = if a > 1 { (a * (a - 1)) as f64 * px[a - 2] * py[b] } else { 0.0 };
                let ly = if b > 1 { (b * (b - 1)) as f64 * px[a] * py[b - 2] } else { 0.0 };
                out.push((lx + ly) * s2);
            }
        }
        out
    }

    /// `M_ij = ∫_K φ_i φ_j`.
    pub fn mass_matrix(&self, mesh: &SimplicialMesh) -> DMatrix<f64> {
        let n = self.len();
        let mut m = DMatrix::zeros(n, n);
        let mut phi = vec![0.0; n];
        for (x, w) in cell_points(mesh, self.cell, 2 * self.degree) {
            self.eval_into(x, &mut phi);
            for j in 0..n {
                for i in j..n {
                    m[(i, j)] += w * phi[i] * phi[j];
                }
            }
        }
        symmetrize_lower(&mut m);
        m
    }

    /// `K_ij = ∫_K ∇φ_i · ∇φ_j`.
    pub fn stiffness_matrix(&self, mesh: &SimplicialMesh) -> DMatrix<f64> {
        let n = self.len();
        let mut m = DMatrix::zeros(n, n);
        let mut g = vec![[0.0; 2]; n];
        for (x, w) in cell_points(mesh, self.cell, 2 * self.degree.max(1) - 2) {
            self.grad_into(x, &mut g);
            for j in 0..n {
                for i in j..n {
                    m[(i, j)] += w * (g[i][0] * g[j][0] + g[i][1] * g[j][1]);
                }
            }
        }
        symmetrize_lower(&mut m);
        m
    }
}

/// Scaled monomials `(((x - m_F) · τ_F) / h_F)^k`, `k ≤ q`, on one face.
#[derive(Clone, Debug)]
pub struct FaceBasis {
    pub face: usize,
    pub center: Point,
    pub tangent: Point,
    pub scale: f64,
    pub degree: usize,
}

impl FaceBasis {
    pub fn new(mesh: &SimplicialMesh, face: usize, degree: usize) -> Self {
        let f = mesh.face(face);
        Self { face, center: f.barycenter, tangent: f.tangent, scale: f.length, degree }
    }

    pub fn len(&self) -> usize {
        dim_poly_face(self.degree)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn eval_into(&self, x: Point, out: &mut [f64]) {
        let s = ((x[0] - self.center[0]) * self.tangent[0] + (x[1] - self.center[1]) * self.tangent[1]) / self.scale;
        out[0] = 1.0;
        for k in 1..=self.degree {
            out[k] = out[k - 1] * s;
        }
    }

    pub fn eval(&self, x: Point) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.eval_into(x, &mut out);
        out
    }

    pub fn mass_matrix(&self, mesh: &SimplicialMesh) -> DMatrix<f64> {
        let n = self.len();
        let mut m = DMatrix::zeros(n, n);
        let mut phi = vec![0.0; n];
        for (x, w) in face_points(mesh, self.face, 2 * self.degree) {
            self.eval_into(x, &mut phi);
            for j in 0..n {
                for i in j..n {
                    m[(i, j)] += w * phi[i] * phi[j];
                }
            }
        }
        symmetrize_lower(&mut m);
        m
    }
}

pub(crate) fn symmetrize_lower(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in j + 1..n {
            m[(j, i)] = m[(i, j)];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polyquad::integrate_cell;
    use nalgebra::SymmetricEigen;

    fn random_triangle(seed: u64) -> SimplicialMesh {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        loop {
            let v: Vec<Point> = (0..3).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
            if let Ok(m) = SimplicialMesh::new(v, vec![[0, 1, 2]]) {
                if m.shape_parameter().unwrap() < 30.0 {
                    return m;
                }
            }
        }
    }

    #[test]
    fn constant_basis_mass_is_area() {
        let m = random_triangle(1);
        let b = CellBasis::new(&m, 0, 0);
        let mm = b.mass_matrix(&m);
        assert_eq!(mm.shape(), (1, 1));
        assert!((mm[(0, 0)] - m.geometry(0).area).abs() < 1e-15);
        assert_eq!(b.eval([0.3, 0.1])[0], 1.0);
    }

    #[test]
    fn mass_matrices_are_spd() {
        for seed in 0..10 {
            let m = random_triangle(seed);
            for q in 0..=4 {
                let mm = CellBasis::new(&m, 0, q).mass_matrix(&m);
                assert_eq!(mm, mm.transpose());
                let eig = SymmetricEigen::new(mm.clone());
                assert!(eig.eigenvalues.iter().all(|&l| l > 0.0), "q = {q}");
                let fm = FaceBasis::new(&m, 0, q).mass_matrix(&m);
                assert!(SymmetricEigen::new(fm).eigenvalues.iter().all(|&l| l > 0.0));
            }
        }
    }

    #[test]
    fn stiffness_kernel_is_constants() {
        let m = random_triangle(3);
        for q in 1..=4 {
            let k = CellBasis::new(&m, 0, q).stiffness_matrix(&m);
            assert!(k.row(0).iter().all(|&v| v == 0.0));
            let eig = SymmetricEigen::new(k.clone());
            let scale = eig.eigenvalues.max();
            let zero = eig.eigenvalues.iter().filter(|&&l| l.abs() < 1e-12 * scale).count();
            assert_eq!(zero, 1, "q = {q}");
        }
    }

    #[test]
    fn p1_stiffness_on_reference_triangle() {
        // On (0,0), (1,0), (0,1): h = √2, and the gradients of the linear monomials
        // are e_x / h and e_y / h, so K = diag(0, A/h², A/h²) with A = 1/2.
        let m = SimplicialMesh::new(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], vec![[0, 1, 2]]).unwrap();
        let k = CellBasis::new(&m, 0, 1).stiffness_matrix(&m);
        let expect = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.0, 0.25, 0.25]));
        assert!((k - expect).abs().max() < 1e-15);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let m = random_triangle(5);
        let b = CellBasis::new(&m, 0, 4);
        let x = m.geometry(0).barycenter;
        let e = 1e-5;
        let g = b.grad(x);
        let lap = b.laplacian(x);
        let f = |dx: f64, dy: f64| b.eval([x[0] + dx, x[1] + dy]);
        let (fx1, fx0, fy1, fy0, f0) = (f(e, 0.0), f(-e, 0.0), f(0.0, e), f(0.0, -e), f(0.0, 0.0));
        for i in 0..b.len() {
            assert!((g[i][0] - (fx1[i] - fx0[i]) / (2.0 * e)).abs() < 1e-6);
            assert!((g[i][1] - (fy1[i] - fy0[i]) / (2.0 * e)).abs() < 1e-6);
            let l = (fx1[i] + fx0[i] + fy1[i] + fy0[i] - 4.0 * f0[i]) / (e * e);
            assert!((lap[i] - l).abs() < 1e-3 * (1.0 + lap[i].abs()));
        }
    }

    #[test]
    fn gram_conditioning_is_scale_invariant() {
        let mut mesh = SimplicialMesh::unit_square(1).unwrap();
        let cond = |m: &SimplicialMesh| {
            let e = SymmetricEigen::new(CellBasis::new(m, 0, 3).mass_matrix(m)).eigenvalues;
            e.max() / e.min()
        };
        let c0 = cond(&mesh);
        for _ in 0..3 {
            mesh = mesh.refine_red().unwrap();
            assert!((cond(&mesh) / c0 - 1.0).abs() < 0.01);
        }
        let area = integrate_cell(&mesh, 0, 0, |_| 1.0);
        assert!((area - mesh.geometry(0).area).abs() < 1e-16);
    }
}
