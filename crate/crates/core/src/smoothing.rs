//! The moment-preserving smoother `S_H σ̂ = Aσ̂ + B(σ̂ − Âσ̂)`.
//!
//! * `A` averages the reconstruction `Rσ̂` at the interior Lagrange nodes of
//!   degree `p+1` (or, in the Scott–Zhang-like variant, takes the value from
//!   the lowest-indexed cell containing the node).
//! * `B v̂ = B_Σ v_Σ + B_M(v_M − B_Σ v_Σ)` corrects cell moments of degree
//!   `p−1` with element bubbles and face moments of degree `p` with face
//!   bubbles.
//!
//! Outputs are broken polynomials of degree `2 + max(p, 1)`, continuous and
//! zero on the boundary. Two independent evaluation routes are provided: a
//! global one acting on whole fields ([`Smoother::apply`]) and a per-cell
//! matrix over the vertex patch of each cell ([`Smoother::cell_matrix`]),
//! which is what the smoothed right-hand side uses.

use std::collections::HashMap;
use std::str::FromStr;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::field::ScalarFn;
use crate::local_ops::{BrokenPoly, HhoField, LocalOperators};
use crate::mesh::{Point, SimplicialMesh};
use crate::polyquad::{
    cell_points, dim_poly, dim_poly_face, face_points, smoother_degree, CellBasis, FaceBasis, QuadPolicy,
};

/// `Φ_K = 27 λ₀λ₁λ₂`.
pub fn cell_bubble(lambda: [f64; 3]) -> f64 {
    27.0 * lambda[0] * lambda[1] * lambda[2]
}

/// `Φ_F|_K = 4 λ_a λ_b` for the local face opposite local vertex `opposite`.
pub fn face_bubble(lambda: [f64; 3], opposite: usize) -> f64 {
    4.0 * lambda[(opposite + 1) % 3] * lambda[(opposite + 2) % 3]
}

/// Barycentric multi-indices `α` with `|α| = q`, in descending lexicographic order of `(α₀, α₁)`.
pub fn multi_indices(q: usize) -> Vec<[usize; 3]> {
    let mut out = Vec::with_capacity(dim_poly(q));
    for i in (0..=q).rev() {
        for j in (0..=q - i).rev() {
            out.push([i, j, q - i - j]);
        }
    }
    out
}

/// Lagrange basis function of degree `q` attached to the node `α / q`.
pub fn lagrange_basis(q: usize, alpha: [usize; 3], lambda: [f64; 3]) -> f64 {
    let mut v = 1.0;
    for m in 0..3 {
        for l in 0..alpha[m] {
            v *= (q as f64 * lambda[m] - l as f64) / (l + 1) as f64;
        }
    }
    v
}

/// Partial derivatives of [`lagrange_basis`] with respect to the three barycentric coordinates.
pub fn lagrange_basis_dlambda(q: usize, alpha: [usize; 3], lambda: [f64; 3]) -> [f64; 3] {
    let factor = |m: usize| -> (f64, f64) {
        let mut v = 1.0;
        let mut dv = 0.0;
        for l in 0..alpha[m] {
            let t = (q as f64 * lambda[m] - l as f64) / (l + 1) as f64;
            let dt = q as f64 / (l + 1) as f64;
            dv = dv * t + v * dt;
            v *= t;
        }
        (v, dv)
    };
    let f = [factor(0), factor(1), factor(2)];
    [f[0].1 * f[1].0 * f[2].0, f[0].0 * f[1].1 * f[2].0, f[0].0 * f[1].0 * f[2].1]
}

/// Gradients of the barycentric coordinates on cell `k`.
pub fn barycentric_gradients(mesh: &SimplicialMesh, k: usize) -> [Point; 3] {
    let g = mesh.geometry(k);
    let faces = mesh.cell_faces(k);
    let mut out = [[0.0; 2]; 3];
    for m in 0..3 {
        let len = mesh.face(faces[m]).length;
        out[m] = [-g.normals[m][0] * len / (2.0 * g.area), -g.normals[m][1] * len / (2.0 * g.area)];
    }
    out
}

/// Choice of the averaging operator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Averaging {
    /// Arithmetic mean over all cells containing the node.
    #[default]
    Mean,
    /// Value from the lowest-indexed cell containing the node.
    ScottZhang,
}

impl FromStr for Averaging {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Self::Mean),
            "scott-zhang" => Ok(Self::ScottZhang),
            other => Err(Error::UnknownName { kind: "averaging variant", name: other.into() }),
        }
    }
}

impl std::fmt::Display for Averaging {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Mean => "mean",
            Self::ScottZhang => "scott-zhang",
        })
    }
}

/// Global Lagrange nodes of the continuous piecewise `P^q` space, `q ≥ 1`.
///
/// Nodes are numbered vertices first, then edge nodes face by face (from the
/// lower to the higher vertex index), then cell-interior nodes.
#[derive(Clone, Debug)]
pub struct LagrangeLayer {
    degree: usize,
    coords: Vec<Point>,
    boundary: Vec<bool>,
    node_cells: Vec<Vec<usize>>,
    cell_nodes: Vec<Vec<usize>>,
    indices: Vec<[usize; 3]>,
}

impl LagrangeLayer {
    pub fn new(mesh: &SimplicialMesh, q: usize) -> Result<Self> {
        if q == 0 {
            return Err(Error::UnsupportedDegree { requested: 0, max: crate::MAX_DEGREE + 1 });
        }
        let nv = mesh.vertices().len();
        let per_edge = q - 1;
        let indices = multi_indices(q);
        let interior: Vec<usize> = (0..indices.len()).filter(|&a| indices[a].iter().all(|&x| x > 0)).collect();
        let n_nodes = nv + mesh.n_faces() * per_edge + mesh.n_cells() * interior.len();
        let mut coords = vec![[0.0; 2]; n_nodes];
        let mut boundary = vec![false; n_nodes];
        let mut node_cells: Vec<Vec<usize>> = vec![Vec::new(); n_nodes];
        let mut cell_nodes = Vec::with_capacity(mesh.n_cells());
        for k in 0..mesh.n_cells() {
            let verts = mesh.cells()[k];
            let faces = mesh.cell_faces(k);
            let mut nodes = Vec::with_capacity(indices.len());
            for alpha in &indices {
                let nonzero: Vec<usize> = (0..3).filter(|&m| alpha[m] > 0).collect();
                let id = match nonzero.len() {
                    1 => {
                        let v = verts[nonzero[0]];
                        boundary[v] = mesh.is_boundary_vertex(v);
                        v
                    }
                    2 => {
                        let m = (0..3).find(|&m| alpha[m] == 0).expect("one zero");
                        let f = faces[m];
                        let face = mesh.face(f);
                        let upper = (0..3).find(|&i| verts[i] == face.vertices[1]).expect("face vertex");
                        let id = nv + f * per_edge + alpha[upper] - 1;
                        boundary[id] = !face.is_interior();
                        id
                    }
                    _ => {
                        let pos = interior.iter().position(|&a| indices[a] == *alpha).expect("interior node");
                        nv + mesh.n_faces() * per_edge + k * interior.len() + pos
                    }
                };
                let lam = alpha.map(|a| a as f64 / q as f64);
                coords[id] = mesh.map_to_cell(k, &lam);
                node_cells[id].push(k);
                nodes.push(id);
            }
            cell_nodes.push(nodes);
        }
        Ok(Self { degree: q, coords, boundary, node_cells, cell_nodes, indices })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn n_nodes(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self, z: usize) -> Point {
        self.coords[z]
    }

    pub fn is_boundary(&self, z: usize) -> bool {
        self.boundary[z]
    }

    /// `ω_z`, sorted by cell index.
    pub fn node_cells(&self, z: usize) -> &[usize] {
        &self.node_cells[z]
    }

    /// Global node ids of cell `k`, in the order of [`LagrangeLayer::multi_indices`].
    pub fn cell_nodes(&self, k: usize) -> &[usize] {
        &self.cell_nodes[k]
    }

    pub fn multi_indices(&self) -> &[[usize; 3]] {
        &self.indices
    }

    /// Averaged nodal value at `z`, given a cell-wise value `value(K)`; zero on the boundary.
    pub fn average(&self, z: usize, averaging: Averaging, mut value: impl FnMut(usize) -> f64) -> f64 {
        if self.boundary[z] {
            return 0.0;
        }
        let cells = &self.node_cells[z];
        match averaging {
            Averaging::Mean => cells.iter().map(|&k| value(k)).sum::<f64>() / cells.len() as f64,
            Averaging::ScottZhang => value(cells[0]),
        }
    }

    /// Evaluates `Σ_z values[z] Φ_z` on cell `k`.
    pub fn eval(&self, mesh: &SimplicialMesh, values: &[f64], k: usize, x: Point) -> f64 {
        let lam = mesh.barycentric(k, x);
        self.cell_nodes[k]
            .iter()
            .zip(&self.indices)
            .map(|(&z, &alpha)| values[z] * lagrange_basis(self.degree, alpha, lam))
            .sum()
    }

    /// Gradient of `Σ_z values[z] Φ_z` on cell `k`.
    pub fn grad(&self, mesh: &SimplicialMesh, values: &[f64], k: usize, x: Point) -> Point {
        let lam = mesh.barycentric(k, x);
        let gl = barycentric_gradients(mesh, k);
        let mut out = [0.0; 2];
        for (&z, &alpha) in self.cell_nodes[k].iter().zip(&self.indices) {
            let d = lagrange_basis_dlambda(self.degree, alpha, lam);
            for m in 0..3 {
                out[0] += values[z] * d[m] * gl[m][0];
                out[1] += values[z] * d[m] * gl[m][1];
            }
        }
        out
    }
}

/// Evaluation tables of one cell at the quadrature points used by the smoother.
struct CellTables {
    weights: Vec<f64>,
    /// `L²` projection onto the degree-`D*` monomials: `n_{D*} × n_qp`.
    proj: DMatrix<f64>,
    /// Degree-`(p+1)` Lagrange basis at the points: `n_qp × n_nodes`.
    lag: DMatrix<f64>,
    /// `Φ_K · q`, `q` the degree-`(p−1)` monomials: `n_qp × n_{p−1}`.
    bubble_low: DMatrix<f64>,
    /// Degree-`(p−1)` monomials times weights, transposed: `n_{p−1} × n_qp`.
    low_weighted: DMatrix<f64>,
    /// Per local face: `B_Σ` on this cell from unit face-basis coefficients of `B_F v`: `n_qp × n_f`.
    face_ext: [DMatrix<f64>; 3],
    /// Per local face: `∫_F ψ_r Φ_z` for the cell's Lagrange nodes: `n_f × n_nodes`.
    face_lag: [DMatrix<f64>; 3],
}

type MomentSolve = (DMatrix<f64>, Cholesky<f64, Dyn>);

/// The smoother for a fixed set of local operators and averaging variant.
pub struct Smoother<'a> {
    ops: &'a LocalOperators<'a>,
    averaging: Averaging,
    layer: LagrangeLayer,
    out_degree: usize,
    /// Face mass `M_F` and factorized weighted mass `∫_F ψ_r ψ_s Φ_F`, per mesh face.
    faces: Vec<MomentSolve>,
    /// Degree-`(p−1)` moments of the degree-`p` cell basis and factorized `∫_K q r Φ_K` (`p ≥ 1`).
    cells: Vec<Option<MomentSolve>>,
}

impl<'a> Smoother<'a> {
    pub fn new(ops: &'a LocalOperators<'a>, averaging: Averaging) -> Result<Self> {
        let mesh = ops.mesh();
        let p = ops.degree();
        let layer = LagrangeLayer::new(mesh, p + 1)?;
        let quad = QuadPolicy::local(p);
        let faces = (0..mesh.n_faces())
            .map(|f| {
                let fb = FaceBasis::new(mesh, f, p);
                let face = mesh.face(f);
                let mut w = DMatrix::zeros(fb.len(), fb.len());
                for (x, wt) in face_points(mesh, f, quad) {
                    let psi = fb.eval(x);
                    let t = crate::mesh::dot(crate::mesh::sub(x, mesh.vertices()[face.vertices[0]]), face.tangent)
                        / face.length;
                    let phi = 4.0 * t * (1.0 - t);
                    for i in 0..fb.len() {
                        for j in 0..fb.len() {
                            w[(i, j)] += wt * psi[i] * psi[j] * phi;
                        }
                    }
                }
                let chol = Cholesky::new(w).ok_or_else(|| Error::Internal("face bubble mass is singular".into()))?;
                Ok((fb.mass_matrix(mesh), chol))
            })
            .collect::<Result<Vec<_>>>()?;
        let cells = (0..mesh.n_cells())
            .map(|k| {
                if p == 0 {
                    return Ok(None);
                }
                let low = CellBasis::new(mesh, k, p - 1);
                let nl = low.len();
                let mut w = DMatrix::zeros(nl, nl);
                for (x, wt) in cell_points(mesh, k, quad) {
                    let q = low.eval(x);
                    let b = cell_bubble(mesh.barycentric(k, x));
                    for i in 0..nl {
                        for j in 0..nl {
                            w[(i, j)] += wt * q[i] * q[j] * b;
                        }
                    }
                }
                let mass = CellBasis::new(mesh, k, p).mass_matrix(mesh).rows(0, nl).into_owned();
                let chol = Cholesky::new(w).ok_or_else(|| Error::Internal("cell bubble mass is singular".into()))?;
                Ok(Some((mass, chol)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { ops, averaging, layer, out_degree: smoother_degree(p), faces, cells })
    }

    pub fn ops(&self) -> &'a LocalOperators<'a> {
        self.ops
    }

    pub fn averaging_variant(&self) -> Averaging {
        self.averaging
    }

    pub fn layer(&self) -> &LagrangeLayer {
        &self.layer
    }

    /// Polynomial degree `2 + max(p, 1)` of the output.
    pub fn out_degree(&self) -> usize {
        self.out_degree
    }

    fn degree(&self) -> usize {
        self.ops.degree()
    }

    fn tables(&self, k: usize) -> CellTables {
        let mesh = self.ops.mesh();
        let p = self.degree();
        let nf = dim_poly_face(p);
        let quad = 2 * self.out_degree;
        let pts: Vec<(Point, f64)> = cell_points(mesh, k, quad).collect();
        let nq = pts.len();
        let weights: Vec<f64> = pts.iter().map(|&(_, w)| w).collect();
        let lambdas: Vec<[f64; 3]> = pts.iter().map(|&(x, _)| mesh.barycentric(k, x)).collect();

        let out = CellBasis::new(mesh, k, self.out_degree);
        let mut mono = DMatrix::zeros(nq, out.len());
        for (i, &(x, _)) in pts.iter().enumerate() {
            mono.row_mut(i).copy_from_slice(&out.eval(x));
        }
        // weighted least squares through QR, which keeps the conditioning of the monomials unsquared
        let sqrt_w: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
        let scaled = DMatrix::from_fn(nq, out.len(), |i, j| mono[(i, j)] * sqrt_w[i]);
        let qr = scaled.qr();
        let qt_w = DMatrix::from_fn(out.len(), nq, |r, c| qr.q()[(c, r)] * sqrt_w[c]);
        let proj = qr.r().solve_upper_triangular(&qt_w).expect("monomials are independent at the points");

        let q = p + 1;
        let idx = self.layer.multi_indices();
        let lag = DMatrix::from_fn(nq, idx.len(), |i, a| lagrange_basis(q, idx[a], lambdas[i]));

        let (bubble_low, low_weighted) = if p >= 1 {
            let low = CellBasis::new(mesh, k, p - 1);
            let mut bl = DMatrix::zeros(nq, low.len());
            let mut lw = DMatrix::zeros(low.len(), nq);
            for (i, &(x, w)) in pts.iter().enumerate() {
                let v = low.eval(x);
                let b = cell_bubble(lambdas[i]);
                for j in 0..low.len() {
                    bl[(i, j)] = b * v[j];
                    lw[(j, i)] = w * v[j];
                }
            }
            (bl, lw)
        } else {
            (DMatrix::zeros(nq, 0), DMatrix::zeros(0, nq))
        };

        let faces = mesh.cell_faces(k);
        let face_ext = std::array::from_fn(|lf| {
            let fb = FaceBasis::new(mesh, faces[lf], p);
            let mut m = DMatrix::zeros(nq, nf);
            if p == 0 {
                for i in 0..nq {
                    m[(i, 0)] = face_bubble(lambdas[i], lf);
                }
            } else {
                // Σ_{z ∈ L^p ∩ F} (B_F v)(z) Φ_z Φ_F
                for alpha in multi_indices(p).into_iter().filter(|a| a[lf] == 0) {
                    let z = mesh.map_to_cell(k, &alpha.map(|v| v as f64 / p as f64));
                    let psi = fb.eval(z);
                    for i in 0..nq {
                        let v = lagrange_basis(p, alpha, lambdas[i]) * face_bubble(lambdas[i], lf);
                        for s in 0..nf {
                            m[(i, s)] += v * psi[s];
                        }
                    }
                }
            }
            m
        });
        let face_lag = std::array::from_fn(|lf| {
            let fb = FaceBasis::new(mesh, faces[lf], p);
            let mut m = DMatrix::zeros(nf, idx.len());
            for (x, w) in face_points(mesh, faces[lf], quad) {
                let psi = fb.eval(x);
                let lam = mesh.barycentric(k, x);
                for (a, &alpha) in idx.iter().enumerate() {
                    let phi = lagrange_basis(q, alpha, lam);
                    for r in 0..nf {
                        m[(r, a)] += w * psi[r] * phi;
                    }
                }
            }
            m
        });
        CellTables { weights, proj, lag, bubble_low, low_weighted, face_ext, face_lag }
    }

    /// Nodal values of `Aσ̂` on the degree-`(p+1)` layer.
    pub fn nodal_average(&self, field: &HhoField) -> Vec<f64> {
        let mesh = self.ops.mesh();
        let r = self.ops.reconstruct(field);
        (0..self.layer.n_nodes())
            .map(|z| {
                let x = self.layer.coords(z);
                self.layer.average(z, self.averaging, |k| r.eval(mesh, k, x))
            })
            .collect()
    }

    /// `Aσ̂`, continuous piecewise `P^{p+1}`, zero on the boundary.
    pub fn averaging(&self, field: &HhoField) -> BrokenPoly {
        let nodal = self.nodal_average(field);
        self.lagrange_to_broken(&nodal, self.degree() + 1)
    }

    /// Writes `Σ_z values[z] Φ_z` (degree-`(p+1)` layer) in the monomial basis of degree `degree ≥ p+1`.
    pub fn lagrange_to_broken(&self, values: &[f64], degree: usize) -> BrokenPoly {
        let mesh = self.ops.mesh();
        let mut out = BrokenPoly::zeros(mesh.n_cells(), self.out_degree);
        for k in 0..mesh.n_cells() {
            let t = self.tables(k);
            let a = DVector::from_iterator(t.lag.ncols(), self.layer.cell_nodes(k).iter().map(|&z| values[z]));
            out.cell_mut(k).copy_from_slice((&t.proj * (&t.lag * a)).as_slice());
        }
        truncate(&out, degree)
    }

    /// `B_Σ` and `B_M(v_M − B_Σ v_Σ)` at the quadrature points of every cell,
    /// from cell moments `∫_K q v_M` (`q ∈ P^{p−1}`) and interior-face moments
    /// `∫_F r v_Σ` (`r ∈ P^p`), both taken against the scaled monomials.
    fn bubble_parts(&self, cell_moments: &[DVector<f64>], face_moments: &[DVector<f64>]) -> (BrokenPoly, BrokenPoly) {
        let mesh = self.ops.mesh();
        let p = self.degree();
        let b_f: Vec<DVector<f64>> = mesh
            .interior_faces()
            .iter()
            .zip(face_moments)
            .map(|(&f, m)| self.faces[f].1.solve(m))
            .collect();
        let mut faces_out = BrokenPoly::zeros(mesh.n_cells(), self.out_degree);
        let mut cells_out = BrokenPoly::zeros(mesh.n_cells(), self.out_degree);
        for k in 0..mesh.n_cells() {
            let t = self.tables(k);
            let mut vals = DVector::zeros(t.weights.len());
            for (lf, f) in mesh.cell_faces(k).into_iter().enumerate() {
                if let Some(i) = mesh.interior_index(f) {
                    vals += &t.face_ext[lf] * &b_f[i];
                }
            }
            faces_out.cell_mut(k).copy_from_slice((&t.proj * &vals).as_slice());
            if p >= 1 {
                let (_, chol) = self.cells[k].as_ref().expect("p ≥ 1");
                let rhs = &cell_moments[k] - &t.low_weighted * &vals;
                let c = chol.solve(&rhs);
                let cell_vals = &t.bubble_low * c;
                cells_out.cell_mut(k).copy_from_slice((&t.proj * cell_vals).as_slice());
            }
        }
        (faces_out, cells_out)
    }

    fn fn_moments(&self, v_m: Option<&ScalarFn>, v_sigma: Option<&ScalarFn>) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
        let mesh = self.ops.mesh();
        let p = self.degree();
        let quad = self.ops.quadrature().projection(p);
        let cell = (0..mesh.n_cells())
            .map(|k| match (p, v_m) {
                (0, _) | (_, None) => DVector::zeros(if p == 0 { 0 } else { dim_poly(p - 1) }),
                (_, Some(v)) => {
                    let low = CellBasis::new(mesh, k, p - 1);
                    let mut m = DVector::zeros(low.len());
                    for (x, w) in cell_points(mesh, k, quad) {
                        m += DVector::from_vec(low.eval(x)) * (w * v.eval(k, x));
                    }
                    m
                }
            })
            .collect();
        let face = mesh
            .interior_faces()
            .iter()
            .map(|&f| {
                let fb = FaceBasis::new(mesh, f, p);
                let mut m = DVector::zeros(fb.len());
                if let Some(v) = v_sigma {
                    let k = mesh.face(f).cells.0;
                    for (x, w) in face_points(mesh, f, quad) {
                        m += DVector::from_vec(fb.eval(x)) * (w * v.eval(k, x));
                    }
                }
                m
            })
            .collect();
        (cell, face)
    }

    /// `B_M v = Σ_K (B_K v)Φ_K`; zero for `p = 0`.
    pub fn bubble_cell(&self, v: &ScalarFn) -> BrokenPoly {
        let (c, f) = self.fn_moments(Some(v), None);
        self.bubble_parts(&c, &f).1
    }

    /// `B_Σ v` for face data given as a function traced on the interior faces.
    pub fn bubble_face(&self, v: &ScalarFn) -> BrokenPoly {
        let (c, f) = self.fn_moments(None, Some(v));
        self.bubble_parts(&c, &f).0
    }

    /// `B v̂ = B_Σ v_Σ + B_M(v_M − B_Σ v_Σ)`.
    pub fn bubble_smoother(&self, v_m: &ScalarFn, v_sigma: &ScalarFn) -> BrokenPoly {
        let (c, f) = self.fn_moments(Some(v_m), Some(v_sigma));
        let (a, b) = self.bubble_parts(&c, &f);
        a.axpy(1.0, &b)
    }

    /// `B v̂` for an HHO field.
    pub fn bubble_smoother_field(&self, field: &HhoField) -> BrokenPoly {
        let (c, f) = self.field_moments(field, None);
        let (a, b) = self.bubble_parts(&c, &f);
        a.axpy(1.0, &b)
    }

    /// Moments of `σ̂ − Âσ̂` (or of `σ̂` when `nodal` is `None`).
    fn field_moments(&self, field: &HhoField, nodal: Option<&[f64]>) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
        let mesh = self.ops.mesh();
        let p = self.degree();
        let local_nodes = |k: usize| -> Option<DVector<f64>> {
            nodal.map(|v| DVector::from_iterator(self.layer.cell_nodes(k).len(), self.layer.cell_nodes(k).iter().map(|&z| v[z])))
        };
        let cell = (0..mesh.n_cells())
            .map(|k| {
                if p == 0 {
                    return DVector::zeros(0);
                }
                let (mass, _) = self.cells[k].as_ref().expect("p ≥ 1");
                let mut m = mass * DVector::from_column_slice(field.cell(k));
                if let Some(a) = local_nodes(k) {
                    let t = self.tables(k);
                    m -= &t.low_weighted * (&t.lag * a);
                }
                m
            })
            .collect();
        let face = mesh
            .interior_faces()
            .iter()
            .enumerate()
            .map(|(i, &f)| {
                let mut m = &self.faces[f].0 * DVector::from_column_slice(field.interior_face(i));
                if let Some(a) = local_nodes(mesh.face(f).cells.0) {
                    let k = mesh.face(f).cells.0;
                    let lf = mesh.cell_faces(k).iter().position(|&g| g == f).expect("incident face");
                    m -= &self.tables(k).face_lag[lf] * a;
                }
                m
            })
            .collect();
        (cell, face)
    }

    /// `S_H σ̂`, evaluated globally: reconstruction, nodal averaging, then bubbles.
    pub fn apply(&self, field: &HhoField) -> BrokenPoly {
        let nodal = self.nodal_average(field);
        let avg = self.lagrange_to_broken(&nodal, self.out_degree);
        let (c, f) = self.field_moments(field, Some(&nodal));
        let (bf, bc) = self.bubble_parts(&c, &f);
        avg.axpy(1.0, &bf).axpy(1.0, &bc)
    }

    /// Global unknowns that `(S_H σ̂)|_K` depends on: those of the cells sharing a
    /// vertex with `K`.
    pub fn patch_dofs(&self, k: usize) -> Vec<usize> {
        let mesh = self.ops.mesh();
        let dofs = self.ops.dofs();
        let mut out: Vec<usize> =
            mesh.vertex_patch(k).into_iter().flat_map(|c| dofs.local_to_global(mesh, c).into_iter().flatten()).collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// The matrix `L_K` with `(S_H σ̂)|_K = L_K σ̂|_patch`, rows in the degree-`D*`
    /// monomials of `K`, columns in the order of [`Smoother::patch_dofs`].
    pub fn cell_matrix(&self, k: usize) -> (Vec<usize>, DMatrix<f64>) {
        let mesh = self.ops.mesh();
        let dofs = self.ops.dofs();
        let p = self.degree();
        let patch = self.patch_dofs(k);
        let col: HashMap<usize, usize> = patch.iter().enumerate().map(|(i, &g)| (g, i)).collect();
        let np = patch.len();
        let t = self.tables(k);

        // reconstruction of every patch cell in terms of the patch unknowns
        let mut rec: HashMap<usize, DMatrix<f64>> = HashMap::new();
        for c in mesh.vertex_patch(k) {
            let local = &self.ops.cell(c).rec;
            let mut m = DMatrix::zeros(local.nrows(), np);
            for (j, g) in dofs.local_to_global(mesh, c).into_iter().enumerate() {
                if let Some(g) = g {
                    m.column_mut(col[&g]).copy_from(&local.column(j));
                }
            }
            rec.insert(c, m);
        }

        // nodal values of Aσ̂ at the nodes of K
        let q = p + 1;
        let nodes = self.layer.cell_nodes(k);
        let mut nodal = DMatrix::zeros(nodes.len(), np);
        for (a, &z) in nodes.iter().enumerate() {
            if self.layer.is_boundary(z) {
                continue;
            }
            let cells: &[usize] = match self.averaging {
                Averaging::Mean => self.layer.node_cells(z),
                Averaging::ScottZhang => &self.layer.node_cells(z)[..1],
            };
            let x = self.layer.coords(z);
            for &c in cells {
                let phi = DVector::from_vec(CellBasis::new(mesh, c, q).eval(x));
                let row = phi.transpose() * &rec[&c] / cells.len() as f64;
                let mut target = nodal.row_mut(a);
                target += row;
            }
        }
        let mut vals = &t.lag * &nodal;

        // face bubbles
        let mut faces_part = DMatrix::zeros(vals.nrows(), np);
        for (lf, f) in mesh.cell_faces(k).into_iter().enumerate() {
            let Some(i) = mesh.interior_index(f) else { continue };
            let (mass, chol) = &self.faces[f];
            let mut m = -(&t.face_lag[lf] * &nodal);
            for s in 0..dofs.n_f {
                let c = col[&dofs.face_dof(i, s)];
                for r in 0..dofs.n_f {
                    m[(r, c)] += mass[(r, s)];
                }
            }
            let b = chol.solve(&m);
            faces_part += &t.face_ext[lf] * b;
        }
        vals += &faces_part;

        // cell bubble
        if p >= 1 {
            let (mass, chol) = self.cells[k].as_ref().expect("p ≥ 1");
            let mut m = -(&t.low_weighted * &vals);
            for j in 0..dofs.n_c {
                let c = col[&dofs.cell_dof(k, j)];
                for r in 0..mass.nrows() {
                    m[(r, c)] += mass[(r, j)];
                }
            }
            vals += &t.bubble_low * chol.solve(&m);
        }
        (patch, &t.proj * vals)
    }

    /// All cell matrices.
    pub fn matrix(&self) -> SmootherMatrix {
        let cells = crate::par::map_collect(self.ops.mesh().n_cells(), |k| self.cell_matrix(k));
        SmootherMatrix { degree: self.out_degree, n_dofs: self.ops.dofs().n_dofs(), cells }
    }

    /// `r_i = Σ_K ℓ_K · L_K e_i`, where `ℓ_K` holds the load tested against the
    /// degree-`D*` monomials of `K`. Cell matrices are built on the fly.
    pub fn transpose_apply<F>(&self, local_load: F) -> Vec<f64>
    where
        F: Fn(usize, &CellBasis) -> DVector<f64> + Sync + Send,
    {
        let mesh = self.ops.mesh();
        let mut out = vec![0.0; self.ops.dofs().n_dofs()];
        const CHUNK: usize = 512;
        let n = mesh.n_cells();
        for start in (0..n).step_by(CHUNK) {
            let end = (start + CHUNK).min(n);
            let parts = crate::par::map_collect(end - start, |i| {
                let k = start + i;
                let (dofs, l) = self.cell_matrix(k);
                let load = local_load(k, &CellBasis::new(mesh, k, self.out_degree));
                (dofs, l.transpose() * load)
            });
            for (dofs, v) in parts {
                for (g, x) in dofs.into_iter().zip(v.iter()) {
                    out[g] += x;
                }
            }
        }
        out
    }
}

fn truncate(v: &BrokenPoly, degree: usize) -> BrokenPoly {
    if degree >= v.degree {
        return v.clone();
    }
    let n = dim_poly(degree);
    let mut out = BrokenPoly::zeros(v.n_cells(), degree);
    for k in 0..v.n_cells() {
        out.cell_mut(k).copy_from_slice(&v.cell(k)[..n]);
    }
    out
}

/// Stored cell matrices `L_K` of the smoother.
#[derive(Clone, Debug)]
pub struct SmootherMatrix {
    degree: usize,
    n_dofs: usize,
    cells: Vec<(Vec<usize>, DMatrix<f64>)>,
}

impl SmootherMatrix {
    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn cell(&self, k: usize) -> (&[usize], &DMatrix<f64>) {
        (&self.cells[k].0, &self.cells[k].1)
    }

    pub fn apply(&self, field: &HhoField) -> BrokenPoly {
        let mut out = BrokenPoly::zeros(self.cells.len(), self.degree);
        for (k, (dofs, l)) in self.cells.iter().enumerate() {
            let x = DVector::from_iterator(dofs.len(), dofs.iter().map(|&g| field.values[g]));
            out.cell_mut(k).copy_from_slice((l * x).as_slice());
        }
        out
    }

    /// Cells on which `S_H` of the unit field `e_i` is not identically zero.
    pub fn support(&self, i: usize) -> Vec<usize> {
        assert!(i < self.n_dofs);
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, (dofs, l))| dofs.binary_search(&i).is_ok_and(|c| l.column(c).amax() > 0.0))
            .map(|(k, _)| k)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::local_ops::DofMap;
    use crate::polyquad::integrate_cell;
    use rand::{Rng, SeedableRng};

    fn random_field(dofs: DofMap, seed: u64) -> HhoField {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        HhoField { dofs, values: (0..dofs.n_dofs()).map(|_| rng.gen_range(-1.0..1.0)).collect() }
    }

    #[test]
    fn bubbles_are_normalized() {
        let third = [1.0 / 3.0; 3];
        assert!((cell_bubble(third) - 1.0).abs() < 1e-15);
        for m in 0..3 {
            let mut mid = [0.5; 3];
            mid[m] = 0.0;
            assert!((face_bubble(mid, m) - 1.0).abs() < 1e-15);
            let mut on_other = [0.5; 3];
            on_other[(m + 1) % 3] = 0.0;
            assert_eq!(face_bubble(on_other, m), 0.0);
        }
        assert_eq!(cell_bubble([0.0, 0.3, 0.7]), 0.0);
    }

    #[test]
    fn lagrange_basis_is_nodal() {
        for q in 1..=4 {
            let idx = multi_indices(q);
            assert_eq!(idx.len(), dim_poly(q));
            for a in &idx {
                for b in &idx {
                    let lam = b.map(|v| v as f64 / q as f64);
                    let v = lagrange_basis(q, *a, lam);
                    assert!((v - if a == b { 1.0 } else { 0.0 }).abs() < 1e-14);
                }
            }
            let lam = [0.2, 0.3, 0.5];
            let sum: f64 = idx.iter().map(|&a| lagrange_basis(q, a, lam)).sum();
            assert!((sum - 1.0).abs() < 1e-14);
            // derivative check
            let e = 1e-6;
            for &a in &idx {
                let d = lagrange_basis_dlambda(q, a, lam);
                for m in 0..3 {
                    let mut lp = lam;
                    let mut lm = lam;
                    lp[m] += e;
                    lm[m] -= e;
                    let fd = (lagrange_basis(q, a, lp) - lagrange_basis(q, a, lm)) / (2.0 * e);
                    assert!((fd - d[m]).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn layer_counts_and_continuity() {
        let mesh = SimplicialMesh::unit_square(2).unwrap();
        for q in 1..=3 {
            let layer = LagrangeLayer::new(&mesh, q).unwrap();
            let expect = (2 * q + 1) * (2 * q + 1);
            assert_eq!(layer.n_nodes(), expect);
            let interior = (0..layer.n_nodes()).filter(|&z| !layer.is_boundary(z)).count();
            assert_eq!(interior, (2 * q - 1) * (2 * q - 1));
            // a random continuous function agrees across faces
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(q as u64);
            let vals: Vec<f64> = (0..layer.n_nodes()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            for &f in mesh.interior_faces() {
                let (a, b) = mesh.face(f).cells;
                for (x, _) in face_points(&mesh, f, 6) {
                    let va = layer.eval(&mesh, &vals, a, x);
                    let vb = layer.eval(&mesh, &vals, b.unwrap(), x);
                    assert!((va - vb).abs() < 1e-13);
                }
            }
            // nodal values are reproduced
            for z in 0..layer.n_nodes() {
                let k = layer.node_cells(z)[0];
                assert!((layer.eval(&mesh, &vals, k, layer.coords(z)) - vals[z]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn averaging_of_six_values() {
        // six triangles around the origin
        let mut verts = vec![[0.0, 0.0]];
        for i in 0..6 {
            let t = std::f64::consts::PI / 3.0 * i as f64;
            verts.push([t.cos(), t.sin()]);
        }
        let cells: Vec<[usize; 3]> = (0..6).map(|i| [0, 1 + i, 1 + (i + 1) % 6]).collect();
        let mesh = SimplicialMesh::new(verts, cells).unwrap();
        let layer = LagrangeLayer::new(&mesh, 1).unwrap();
        assert!(!layer.is_boundary(0));
        assert_eq!(layer.node_cells(0).len(), 6);
        assert_eq!(layer.average(0, Averaging::Mean, |k| (k + 1) as f64), 3.5);
        assert_eq!(layer.average(0, Averaging::ScottZhang, |k| (k + 1) as f64), 1.0);
        assert_eq!(layer.average(1, Averaging::Mean, |k| (k + 1) as f64), 0.0);
    }

    #[test]
    fn cell_bubble_of_constant() {
        let mesh = SimplicialMesh::new(vec![[0.0, 0.0], [1.0, 0.2], [0.3, 0.9]], vec![[0, 1, 2]]).unwrap();
        let ops = LocalOperators::new(&mesh, 1).unwrap();
        let sm = Smoother::new(&ops, Averaging::Mean).unwrap();
        let b = sm.bubble_cell(&ScalarFn::new(|_| 1.0));
        let m = mesh.geometry(0).barycenter;
        assert!((b.eval(&mesh, 0, m) - 20.0 / 9.0).abs() < 1e-12);

        let ops0 = LocalOperators::new(&mesh, 0).unwrap();
        let sm0 = Smoother::new(&ops0, Averaging::Mean).unwrap();
        assert_eq!(sm0.bubble_cell(&ScalarFn::new(|_| 1.0)).max_abs(), 0.0);
    }

    #[test]
    fn face_bubble_of_constant() {
        let mesh = SimplicialMesh::unit_square(1).unwrap();
        let ops = LocalOperators::new(&mesh, 0).unwrap();
        let sm = Smoother::new(&ops, Averaging::Mean).unwrap();
        let b = sm.bubble_face(&ScalarFn::new(|_| 1.0));
        let f = mesh.interior_faces()[0];
        let mf = mesh.face(f).barycenter;
        for k in 0..2 {
            assert!((b.eval(&mesh, k, mf) - 1.5).abs() < 1e-13);
        }
        assert_eq!(sm.bubble_face(&ScalarFn::zero()).max_abs(), 0.0);
    }

    fn check_moments(mesh: &SimplicialMesh, out: &BrokenPoly, field: &HhoField, p: usize) -> f64 {
        let mut worst: f64 = 0.0;
        if p >= 1 {
            for k in 0..mesh.n_cells() {
                let low = CellBasis::new(mesh, k, p - 1);
                let cell = CellBasis::new(mesh, k, p);
                for i in 0..low.len() {
                    let lhs = integrate_cell(mesh, k, 16, |x| out.eval(mesh, k, x) * low.eval(x)[i]);
                    let rhs = integrate_cell(mesh, k, 16, |x| {
                        cell.eval(x).iter().zip(field.cell(k)).map(|(a, b)| a * b).sum::<f64>() * low.eval(x)[i]
                    });
                    worst = worst.max((lhs - rhs).abs());
                }
            }
        }
        for (i, &f) in mesh.interior_faces().iter().enumerate() {
            let fb = FaceBasis::new(mesh, f, p);
            let (a, b) = mesh.face(f).cells;
            for r in 0..fb.len() {
                for k in [a, b.unwrap()] {
                    let lhs: f64 = face_points(mesh, f, 16).map(|(x, w)| w * out.eval(mesh, k, x) * fb.eval(x)[r]).sum();
                    let rhs: f64 = face_points(mesh, f, 16)
                        .map(|(x, w)| {
                            w * fb.eval(x)[r] * fb.eval(x).iter().zip(field.interior_face(i)).map(|(a, b)| a * b).sum::<f64>()
                        })
                        .sum();
                    worst = worst.max((lhs - rhs).abs());
                }
            }
        }
        worst
    }

    fn check_conformity(mesh: &SimplicialMesh, out: &BrokenPoly) -> f64 {
        let mut worst: f64 = 0.0;
        for f in 0..mesh.n_faces() {
            let face = mesh.face(f);
            let v0 = mesh.vertices()[face.vertices[0]];
            let v1 = mesh.vertices()[face.vertices[1]];
            for s in 0..5 {
                let t = (s as f64 + 0.5) / 5.0;
                let x = [v0[0] + t * (v1[0] - v0[0]), v0[1] + t * (v1[1] - v0[1])];
                let va = out.eval(mesh, face.cells.0, x);
                let vb = face.cells.1.map_or(0.0, |b| out.eval(mesh, b, x));
                worst = worst.max((va - vb).abs());
            }
        }
        worst
    }

    #[test]
    fn bubble_smoother_moments() {
        let mesh = SimplicialMesh::unit_square(1).unwrap();
        let ops = LocalOperators::new(&mesh, 1).unwrap();
        let sm = Smoother::new(&ops, Averaging::Mean).unwrap();
        let field = ops.interpolate(&ScalarFn::new(|_| 1.0));
        let b = sm.bubble_smoother(&ScalarFn::new(|_| 1.0), &ScalarFn::new(|_| 1.0));
        assert!(check_moments(&mesh, &b, &field, 1) < 1e-12);
        assert!(check_conformity(&mesh, &b) < 1e-12);
        assert!(b.max_abs_diff(&sm.bubble_smoother_field(&field)) < 1e-12);
        assert_eq!(sm.bubble_smoother_field(&HhoField::zeros(ops.dofs())).max_abs(), 0.0);
    }

    #[test]
    fn smoother_preserves_moments_and_conformity() {
        let mesh = SimplicialMesh::unit_square(3).unwrap();
        for p in 0..=2 {
            let ops = LocalOperators::new(&mesh, p).unwrap();
            for averaging in [Averaging::Mean, Averaging::ScottZhang] {
                let sm = Smoother::new(&ops, averaging).unwrap();
                for seed in 0..5 {
                    let field = random_field(ops.dofs(), seed);
                    let out = sm.apply(&field);
                    assert_eq!(out.degree, smoother_degree(p));
                    let m = check_moments(&mesh, &out, &field, p);
                    assert!(m < 1e-11, "p={p} {averaging}: moments {m:e}");
                    let c = check_conformity(&mesh, &out);
                    assert!(c < 1e-10, "p={p} {averaging}: conformity {c:e}");
                }
            }
        }
    }

    #[test]
    fn routes_agree() {
        let mesh = SimplicialMesh::unit_square(3).unwrap();
        for p in 0..=2 {
            let ops = LocalOperators::new(&mesh, p).unwrap();
            for averaging in [Averaging::Mean, Averaging::ScottZhang] {
                let sm = Smoother::new(&ops, averaging).unwrap();
                let mat = sm.matrix();
                let field = random_field(ops.dofs(), 42);
                let a = sm.apply(&field);
                let b = mat.apply(&field);
                assert!(a.max_abs_diff(&b) < 1e-10 * a.max_abs(), "p={p}: {:e}", a.max_abs_diff(&b));
                // transpose route
                let load = |k: usize, basis: &CellBasis| {
                    let _ = k;
                    DVector::from_fn(basis.len(), |i, _| (i as f64 + 1.0).recip())
                };
                let r = sm.transpose_apply(load);
                let direct: f64 = (0..mesh.n_cells())
                    .map(|k| {
                        let basis = CellBasis::new(&mesh, k, sm.out_degree());
                        load(k, &basis).dot(&DVector::from_column_slice(a.cell(k)))
                    })
                    .sum();
                let via: f64 = r.iter().zip(&field.values).map(|(x, y)| x * y).sum();
                assert!((direct - via).abs() < 1e-10 * direct.abs().max(1.0));
            }
        }
    }

    #[test]
    fn continuous_reconstruction_is_reproduced() {
        // q continuous piecewise P^{p+1}, zero on the boundary: S_H Î q = A Î q = q
        let mesh = SimplicialMesh::unit_square(3).unwrap();
        for p in 0..=2 {
            let ops = LocalOperators::new(&mesh, p).unwrap();
            let layer = LagrangeLayer::new(&mesh, p + 1).unwrap();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
            let vals: Vec<f64> =
                (0..layer.n_nodes()).map(|z| if layer.is_boundary(z) { 0.0 } else { rng.gen_range(-1.0..1.0) }).collect();
            let (m, l, v) = (mesh.clone(), layer.clone(), vals.clone());
            let q = ScalarFn::cellwise(move |k, x| l.eval(&m, &v, k, x));
            let field = ops.interpolate(&q);
            for averaging in [Averaging::Mean, Averaging::ScottZhang] {
                let sm = Smoother::new(&ops, averaging).unwrap();
                let out = sm.apply(&field);
                let avg = sm.averaging(&field);
                for k in 0..mesh.n_cells() {
                    for (x, _) in cell_points(&mesh, k, 4) {
                        let exact = layer.eval(&mesh, &vals, k, x);
                        assert!((out.eval(&mesh, k, x) - exact).abs() < 1e-11);
                        assert!((avg.eval(&mesh, k, x) - exact).abs() < 1e-11);
                    }
                }
            }
        }
    }

    #[test]
    fn variants_differ_on_discontinuous_reconstructions() {
        let mesh = SimplicialMesh::unit_square(2).unwrap();
        let ops = LocalOperators::new(&mesh, 1).unwrap();
        let field = random_field(ops.dofs(), 3);
        let a = Smoother::new(&ops, Averaging::Mean).unwrap().averaging(&field);
        let b = Smoother::new(&ops, Averaging::ScottZhang).unwrap().averaging(&field);
        assert!(a.max_abs_diff(&b) > 1e-3);
    }

    #[test]
    fn support_is_within_one_ring() {
        let mesh = SimplicialMesh::unit_square(4).unwrap();
        for p in 0..=1 {
            let ops = LocalOperators::new(&mesh, p).unwrap();
            let sm = Smoother::new(&ops, Averaging::Mean).unwrap();
            let mat = sm.matrix();
            let dofs = ops.dofs();
            // a cell unknown touches only cells sharing a vertex with it
            let k = 12;
            let ring = mesh.vertex_patch(k);
            for c in mat.support(dofs.cell_dof(k, 0)) {
                assert!(ring.contains(&c));
            }
            // a face unknown touches only cells sharing a vertex with ω_F
            let f = mesh.interior_faces()[7];
            let mut ring: Vec<usize> = mesh.face(f).cell_list().flat_map(|c| mesh.vertex_patch(c)).collect();
            ring.sort();
            for c in mat.support(dofs.face_dof(7, 0)) {
                assert!(ring.binary_search(&c).is_ok());
            }
        }
    }
}
