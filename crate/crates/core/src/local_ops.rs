//! Per-cell HHO operators: L² projections, the interpolant, the
//! reconstruction `R`, the stabilization operator `S` and form `s`, the local
//! bilinear form, and the broken elliptic projection `E`.
//!
//! Unknowns are enumerated cells first, then interior faces, each by index:
//! cell `K` owns global dofs `K·n_c .. (K+1)·n_c`, interior face `i` owns
//! `N·n_c + i·n_f ..`. Boundary faces carry no unknowns. On a cell, local
//! unknowns are the `n_c` cell coefficients followed by `n_f` coefficients for
//! each of the three local faces (boundary faces included, always zero).

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::field::{ScalarFn, VectorFn};
use crate::mesh::{Point, SimplicialMesh};
use crate::polyquad::{cell_points, dim_poly, dim_poly_face, face_points, CellBasis, FaceBasis, QuadPolicy};

/// Layout of the global HHO unknowns.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DofMap {
    pub degree: usize,
    pub n_cells: usize,
    pub n_interior_faces: usize,
    pub n_c: usize,
    pub n_f: usize,
}

impl DofMap {
    pub fn new(mesh: &SimplicialMesh, degree: usize) -> Self {
        Self {
            degree,
            n_cells: mesh.n_cells(),
            n_interior_faces: mesh.n_interior_faces(),
            n_c: dim_poly(degree),
            n_f: dim_poly_face(degree),
        }
    }

    pub fn n_cell_dofs(&self) -> usize {
        self.n_cells * self.n_c
    }

    pub fn n_face_dofs(&self) -> usize {
        self.n_interior_faces * self.n_f
    }

    pub fn n_dofs(&self) -> usize {
        self.n_cell_dofs() + self.n_face_dofs()
    }

    pub fn n_local(&self) -> usize {
        self.n_c + 3 * self.n_f
    }

    pub fn cell_dof(&self, k: usize, i: usize) -> usize {
        k * self.n_c + i
    }

    pub fn face_dof(&self, interior: usize, i: usize) -> usize {
        self.n_cell_dofs() + interior * self.n_f + i
    }

    /// Global index of every local unknown of cell `k`; `None` on boundary faces.
    pub fn local_to_global(&self, mesh: &SimplicialMesh, k: usize) -> Vec<Option<usize>> {
        let mut out: Vec<Option<usize>> = (0..self.n_c).map(|i| Some(self.cell_dof(k, i))).collect();
        for f in mesh.cell_faces(k) {
            match mesh.interior_index(f) {
                Some(j) => out.extend((0..self.n_f).map(|i| Some(self.face_dof(j, i)))),
                None => out.extend(std::iter::repeat_n(None, self.n_f)),
            }
        }
        out
    }
}

/// An element `(s_M, s_Σ)` of the HHO space, stored in global dof order.
#[derive(Clone, Debug, PartialEq)]
pub struct HhoField {
    pub dofs: DofMap,
    pub values: Vec<f64>,
}

impl HhoField {
    pub fn zeros(dofs: DofMap) -> Self {
        Self { dofs, values: vec![0.0; dofs.n_dofs()] }
    }

    pub fn from_values(dofs: DofMap, values: Vec<f64>) -> Result<Self> {
        if values.len() != dofs.n_dofs() {
            return Err(Error::DimensionMismatch { expected: dofs.n_dofs(), actual: values.len() });
        }
        Ok(Self { dofs, values })
    }

    /// The field whose only nonzero coefficient is global dof `i`.
    pub fn unit(dofs: DofMap, i: usize) -> Self {
        let mut f = Self::zeros(dofs);
        f.values[i] = 1.0;
        f
    }

    pub fn degree(&self) -> usize {
        self.dofs.degree
    }

    pub fn cell(&self, k: usize) -> &[f64] {
        &self.values[k * self.dofs.n_c..(k + 1) * self.dofs.n_c]
    }

    pub fn interior_face(&self, i: usize) -> &[f64] {
        let s = self.dofs.face_dof(i, 0);
        &self.values[s..s + self.dofs.n_f]
    }

    /// Coefficients on mesh face `f`, zero on boundary faces.
    pub fn face(&self, mesh: &SimplicialMesh, f: usize) -> Vec<f64> {
        match mesh.interior_index(f) {
            Some(i) => self.interior_face(i).to_vec(),
            None => vec![0.0; self.dofs.n_f],
        }
    }

    pub fn local(&self, mesh: &SimplicialMesh, k: usize) -> DVector<f64> {
        let map = self.dofs.local_to_global(mesh, k);
        DVector::from_iterator(map.len(), map.iter().map(|g| g.map_or(0.0, |i| self.values[i])))
    }

    pub fn max_abs_diff(&self, other: &HhoField) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    pub fn cell_part(&self) -> BrokenPoly {
        BrokenPoly { degree: self.degree(), coeffs: self.values[..self.dofs.n_cell_dofs()].to_vec() }
    }
}

/// A piecewise polynomial of degree `≤ degree`, in the scaled monomial basis of each cell.
#[derive(Clone, Debug, PartialEq)]
pub struct BrokenPoly {
    pub degree: usize,
    pub coeffs: Vec<f64>,
}

impl BrokenPoly {
    pub fn zeros(n_cells: usize, degree: usize) -> Self {
        Self { degree, coeffs: vec![0.0; n_cells * dim_poly(degree)] }
    }

    pub fn n_cells(&self) -> usize {
        self.coeffs.len() / dim_poly(self.degree)
    }

    pub fn cell(&self, k: usize) -> &[f64] {
        let n = dim_poly(self.degree);
        &self.coeffs[k * n..(k + 1) * n]
    }

    pub fn cell_mut(&mut self, k: usize) -> &mut [f64] {
        let n = dim_poly(self.degree);
        &mut self.coeffs[k * n..(k + 1) * n]
    }

    pub fn eval(&self, mesh: &SimplicialMesh, k: usize, x: Point) -> f64 {
        let phi = CellBasis::new(mesh, k, self.degree).eval(x);
        phi.iter().zip(self.cell(k)).map(|(a, b)| a * b).sum()
    }

    pub fn grad(&self, mesh: &SimplicialMesh, k: usize, x: Point) -> Point {
        let g = CellBasis::new(mesh, k, self.degree).grad(x);
        let c = self.cell(k);
        let mut out = [0.0; 2];
        for (gi, ci) in g.iter().zip(c) {
            out[0] += gi[0] * ci;
            out[1] += gi[1] * ci;
        }
        out
    }

    /// The same function written in the degree-`degree` basis (`degree ≥ self.degree`).
    pub fn promote(&self, degree: usize) -> BrokenPoly {
        assert!(degree >= self.degree);
        let (n0, n1) = (dim_poly(self.degree), dim_poly(degree));
        let mut out = BrokenPoly::zeros(self.n_cells(), degree);
        for k in 0..self.n_cells() {
            out.coeffs[k * n1..k * n1 + n0].copy_from_slice(self.cell(k));
        }
        out
    }

    /// `self + alpha · other`, in the larger of the two degrees.
    pub fn axpy(&self, alpha: f64, other: &BrokenPoly) -> BrokenPoly {
        let d = self.degree.max(other.degree);
        let mut out = self.promote(d);
        let o = other.promote(d);
        out.coeffs.iter_mut().zip(&o.coeffs).for_each(|(a, b)| *a += alpha * b);
        out
    }

    pub fn max_abs_diff(&self, other: &BrokenPoly) -> f64 {
        let d = self.degree.max(other.degree);
        let (a, b) = (self.promote(d), other.promote(d));
        a.coeffs.iter().zip(&b.coeffs).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Precomputed operators of one cell.
#[derive(Clone, Debug)]
pub struct CellOperators {
    /// `(Rŝ)|_K` coefficients (degree `p+1`) as a function of the local unknowns.
    pub rec: DMatrix<f64>,
    /// `(Sŝ)|_K` coefficients (degree `p+1`).
    pub stab_op: DMatrix<f64>,
    /// Consistency part `∫_K ∇Rŝ·∇Rσ̂` of the local bilinear form.
    pub consistency: DMatrix<f64>,
    /// Stabilization part of the local bilinear form.
    pub stabilization: DMatrix<f64>,
    /// Local matrix of `‖·‖_H²`.
    pub norm_h: DMatrix<f64>,
    /// Per local face, `Π_F(s_F − (Sŝ)|_K)` as a function of the local unknowns
    /// and the face mass matrix scaled by `h_F⁻¹`.
    pub face_residuals: Vec<(DMatrix<f64>, DMatrix<f64>)>,
    /// Stiffness of degree `p+1` without the constant, factorized.
    reduced_stiffness: Cholesky<f64, Dyn>,
    /// `∫_K φ_i` for the degree-`p+1` basis.
    means: DVector<f64>,
    /// Mass matrix of the degree-`p` basis, factorized.
    mass_p: Cholesky<f64, Dyn>,
}

impl CellOperators {
    pub fn matrix(&self) -> DMatrix<f64> {
        &self.consistency + &self.stabilization
    }
}

/// Local operators of every cell for a fixed degree `p`.
#[derive(Clone, Debug)]
pub struct LocalOperators<'m> {
    mesh: &'m SimplicialMesh,
    dofs: DofMap,
    quad: QuadPolicy,
    cells: Vec<CellOperators>,
    face_mass: Vec<Cholesky<f64, Dyn>>,
}

fn factor(m: DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m).ok_or_else(|| Error::Internal(format!("{what} is not positive definite")))
}

impl<'m> LocalOperators<'m> {
    pub fn new(mesh: &'m SimplicialMesh, p: usize) -> Result<Self> {
        Self::with_quadrature(mesh, p, QuadPolicy::default())
    }

    pub fn with_quadrature(mesh: &'m SimplicialMesh, p: usize, quad: QuadPolicy) -> Result<Self> {
        if p > crate::MAX_DEGREE {
            return Err(Error::UnsupportedDegree { requested: p, max: crate::MAX_DEGREE });
        }
        let dofs = DofMap::new(mesh, p);
        let cells = crate::par::map_collect(mesh.n_cells(), |k| build_cell(mesh, k, p));
        let cells = cells.into_iter().collect::<Result<Vec<_>>>()?;
        let face_mass = (0..mesh.n_faces())
            .map(|f| factor(FaceBasis::new(mesh, f, p).mass_matrix(mesh), "face mass matrix"))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { mesh, dofs, quad, cells, face_mass })
    }

    pub fn mesh(&self) -> &'m SimplicialMesh {
        self.mesh
    }

    pub fn dofs(&self) -> DofMap {
        self.dofs
    }

    pub fn degree(&self) -> usize {
        self.dofs.degree
    }

    pub fn quadrature(&self) -> QuadPolicy {
        self.quad
    }

    pub fn cell(&self, k: usize) -> &CellOperators {
        &self.cells[k]
    }

    /// `Π_M v` onto `P^q(M)`.
    pub fn project_broken(&self, v: &ScalarFn, q: usize) -> BrokenPoly {
        let mesh = self.mesh;
        let degree = self.quad.projection(q.max(self.degree()));
        let blocks = crate::par::map_collect(mesh.n_cells(), |k| {
            let basis = CellBasis::new(mesh, k, q);
            let mut rhs = DVector::zeros(basis.len());
            let mut phi = vec![0.0; basis.len()];
            for (x, w) in cell_points(mesh, k, degree) {
                basis.eval_into(x, &mut phi);
                let vx = v.eval(k, x);
                for (r, ph) in rhs.iter_mut().zip(&phi) {
                    *r += w * vx * ph;
                }
            }
            let mass = if q == self.degree() {
                self.cells[k].mass_p.solve(&rhs)
            } else {
                Cholesky::new(basis.mass_matrix(mesh)).expect("mass matrix is SPD").solve(&rhs)
            };
            mass.iter().copied().collect::<Vec<_>>()
        });
        BrokenPoly { degree: q, coeffs: blocks.concat() }
    }

    /// `Π_M v` onto `P^p(M)`.
    pub fn project_cell(&self, v: &ScalarFn) -> BrokenPoly {
        self.project_broken(v, self.degree())
    }

    /// `Π_F v` onto `P^p(F)` for every interior face, in interior-face order.
    /// The trace is taken from the first cell of each face.
    pub fn project_face(&self, v: &ScalarFn) -> Vec<f64> {
        let mesh = self.mesh;
        let degree = self.quad.projection(self.degree());
        let blocks = crate::par::map_collect(mesh.n_interior_faces(), |i| {
            let f = mesh.interior_faces()[i];
            let cell = mesh.face(f).cells.0;
            let basis = FaceBasis::new(mesh, f, self.degree());
            let mut rhs = DVector::zeros(basis.len());
            let mut psi = vec![0.0; basis.len()];
            for (x, w) in face_points(mesh, f, degree) {
                basis.eval_into(x, &mut psi);
                let vx = v.eval(cell, x);
                for (r, ps) in rhs.iter_mut().zip(&psi) {
                    *r += w * vx * ps;
                }
            }
            self.face_mass[f].solve(&rhs).iter().copied().collect::<Vec<_>>()
        });
        blocks.concat()
    }

    /// `Î v = (Π_M v, Π_Σ v)`.
    pub fn interpolate(&self, v: &ScalarFn) -> HhoField {
        let mut values = self.project_cell(v).coeffs;
        values.extend(self.project_face(v));
        HhoField { dofs: self.dofs, values }
    }

    fn apply_local(&self, field: &HhoField, op: impl Fn(&CellOperators) -> &DMatrix<f64>) -> BrokenPoly {
        let mut out = BrokenPoly::zeros(self.mesh.n_cells(), self.degree() + 1);
        for k in 0..self.mesh.n_cells() {
            let c = op(&self.cells[k]) * field.local(self.mesh, k);
            out.cell_mut(k).copy_from_slice(c.as_slice());
        }
        out
    }

    /// `Rŝ` of degree `p+1`.
    pub fn reconstruct(&self, field: &HhoField) -> BrokenPoly {
        self.apply_local(field, |c| &c.rec)
    }

    /// `Sŝ = s_M + (I − Π_M)Rŝ` of degree `p+1`.
    pub fn stab_operator(&self, field: &HhoField) -> BrokenPoly {
        self.apply_local(field, |c| &c.stab_op)
    }

    fn local_form(&self, a: &HhoField, b: &HhoField, op: impl Fn(&CellOperators) -> &DMatrix<f64>) -> f64 {
        (0..self.mesh.n_cells())
            .map(|k| {
                let (la, lb) = (a.local(self.mesh, k), b.local(self.mesh, k));
                la.dot(&(op(&self.cells[k]) * lb))
            })
            .sum()
    }

    /// `s(a, b)`, evaluated from the face residuals so that it vanishes to
    /// roundoff squared on its kernel.
    pub fn stab_form(&self, a: &HhoField, b: &HhoField) -> f64 {
        (0..self.mesh.n_cells())
            .map(|k| {
                let (la, lb) = (a.local(self.mesh, k), b.local(self.mesh, k));
                self.cells[k]
                    .face_residuals
                    .iter()
                    .map(|(d, m)| {
                        let (ra, rb) = (d * &la, d * &lb);
                        ra.dot(&(m * rb))
                    })
                    .sum::<f64>()
            })
            .sum()
    }

    /// `b_H(a, b) = ∫ ∇_M Ra·∇_M Rb + s(a, b)`.
    pub fn bilinear_b(&self, a: &HhoField, b: &HhoField) -> f64 {
        self.local_form(a, b, |c| &c.consistency) + self.stab_form(a, b)
    }

    /// `‖ŝ‖_H² = Σ_K ‖∇s_M‖_K² + Σ_{F∈F_K} h_F⁻¹‖s_Σ − s_M‖_F²`.
    pub fn norm_h_squared(&self, field: &HhoField) -> f64 {
        self.local_form(field, field, |c| &c.norm_h)
    }

    /// Broken elliptic projection `Ev` of degree `p+1`.
    pub fn elliptic_project(&self, v: &ScalarFn, grad: &VectorFn) -> BrokenPoly {
        let mesh = self.mesh;
        let q = self.degree() + 1;
        let degree = self.quad.projection(self.degree());
        let blocks = crate::par::map_collect(mesh.n_cells(), |k| {
            let basis = CellBasis::new(mesh, k, q);
            let n = basis.len();
            let mut rhs = DVector::zeros(n - 1);
            let mut g = vec![[0.0; 2]; n];
            let mut mean_v = 0.0;
            for (x, w) in cell_points(mesh, k, degree) {
                basis.grad_into(x, &mut g);
                let gv = grad.eval(k, x);
                for i in 1..n {
                    rhs[i - 1] += w * (gv[0] * g[i][0] + gv[1] * g[i][1]);
                }
                mean_v += w * v.eval(k, x);
            }
            let cell = &self.cells[k];
            let c = cell.reduced_stiffness.solve(&rhs);
            let mut out = vec![0.0; n];
            out[1..].copy_from_slice(c.as_slice());
            let rest: f64 = (1..n).map(|i| cell.means[i] * out[i]).sum();
            out[0] = (mean_v - rest) / cell.means[0];
            out
        });
        BrokenPoly { degree: q, coeffs: blocks.concat() }
    }

    /// `Π_M` of a broken polynomial of degree `p+1` onto `P^p(M)`.
    pub fn project_down(&self, v: &BrokenPoly) -> BrokenPoly {
        assert_eq!(v.degree, self.degree() + 1);
        let mesh = self.mesh;
        let p = self.degree();
        let mut out = BrokenPoly::zeros(mesh.n_cells(), p);
        for k in 0..mesh.n_cells() {
            let m = CellBasis::new(mesh, k, p + 1).mass_matrix(mesh);
            let nc = dim_poly(p);
            let rhs = m.rows(0, nc) * DVector::from_column_slice(v.cell(k));
            out.cell_mut(k).copy_from_slice(self.cells[k].mass_p.solve(&rhs).as_slice());
        }
        out
    }
}

fn build_cell(mesh: &SimplicialMesh, k: usize, p: usize) -> Result<CellOperators> {
    let nc = dim_poly(p);
    let nf = dim_poly_face(p);
    let nl = nc + 3 * nf;
    let basis_r = CellBasis::new(mesh, k, p + 1);
    let nr = basis_r.len();
    let geo = mesh.geometry(k);
    let quad_deg = QuadPolicy::local(p);

    let stiff = basis_r.stiffness_matrix(mesh);
    let mass_r = basis_r.mass_matrix(mesh);
    let mass_p = factor(mass_r.view((0, 0), (nc, nc)).into_owned(), "cell mass matrix")?;
    let means = DVector::from_iterator(nr, (0..nr).map(|i| {
        cell_points(mesh, k, p + 1).map(|(x, w)| w * basis_r.eval(x)[i]).sum::<f64>()
    }));

    // right-hand side of the local Neumann problem: ∫∇s_M·∇q + Σ_F ∫_F (s_F − s_M) ∇q·n
    let mut rhs = DMatrix::zeros(nr, nl);
    rhs.view_mut((0, 0), (nr, nc)).copy_from(&stiff.view((0, 0), (nr, nc)));
    let mut phi = vec![0.0; nr];
    let mut grad = vec![[0.0; 2]; nr];
    let face_bases: Vec<FaceBasis> = mesh.cell_faces(k).into_iter().map(|f| FaceBasis::new(mesh, f, p)).collect();
    let mut psi = vec![0.0; nf];
    // face traces ∫_F ψ_a φ_i and face masses
    let mut traces = Vec::with_capacity(3);
    let mut face_masses = Vec::with_capacity(3);
    for (lf, f) in mesh.cell_faces(k).into_iter().enumerate() {
        let n = geo.normals[lf];
        let fb = &face_bases[lf];
        let mut t = DMatrix::zeros(nf, nr);
        for (x, w) in face_points(mesh, f, quad_deg) {
            basis_r.eval_into(x, &mut phi);
            basis_r.grad_into(x, &mut grad);
            fb.eval_into(x, &mut psi);
            for i in 0..nr {
                let gn = grad[i][0] * n[0] + grad[i][1] * n[1];
                for j in 0..nc {
                    rhs[(i, j)] -= w * phi[j] * gn;
                }
                for a in 0..nf {
                    rhs[(i, nc + lf * nf + a)] += w * psi[a] * gn;
                    t[(a, i)] += w * psi[a] * phi[i];
                }
            }
        }
        traces.push(t);
        face_masses.push(fb.mass_matrix(mesh));
    }

    let reduced = stiff.view((1, 1), (nr - 1, nr - 1)).into_owned();
    let reduced_stiffness = factor(reduced, "local stiffness matrix")?;
    let sol = reduced_stiffness.solve(&rhs.rows(1, nr - 1).into_owned());
    let mut rec = DMatrix::zeros(nr, nl);
    rec.view_mut((1, 0), (nr - 1, nl)).copy_from(&sol);
    for j in 0..nl {
        let cell_mean = if j < nc { means[j] } else { 0.0 };
        let rest: f64 = (1..nr).map(|i| means[i] * rec[(i, j)]).sum();
        rec[(0, j)] = (cell_mean - rest) / means[0];
    }

    // S = s_M + (I − Π_M) R, with Π_M R read off the nested mass matrix
    let proj = mass_p.solve(&(mass_r.rows(0, nc) * &rec));
    let mut stab_op = rec.clone();
    {
        let mut top = stab_op.rows_mut(0, nc);
        top -= &proj;
        for j in 0..nc {
            top[(j, j)] += 1.0;
        }
    }

    let consistency = {
        let m = rec.transpose() * &stiff * &rec;
        (&m + m.transpose()) * 0.5
    };

    // stabilization and coercivity norm
    let mut stabilization = DMatrix::zeros(nl, nl);
    let mut norm_h = DMatrix::zeros(nl, nl);
    let mut face_residuals = Vec::with_capacity(3);
    norm_h.view_mut((0, 0), (nc, nc)).copy_from(&stiff.view((0, 0), (nc, nc)));
    for lf in 0..3 {
        let h_f = mesh.face(mesh.cell_faces(k)[lf]).length;
        let mf = &face_masses[lf];
        let mf_chol = factor(mf.clone(), "face mass matrix")?;
        let mut sel = DMatrix::zeros(nf, nl);
        for a in 0..nf {
            sel[(a, nc + lf * nf + a)] = 1.0;
        }
        let d = &sel - mf_chol.solve(&(&traces[lf] * &stab_op));
        stabilization += d.transpose() * mf * &d / h_f;
        face_residuals.push((d, mf / h_f));
        let mut cell_trace = DMatrix::zeros(nr, nl);
        for j in 0..nc {
            cell_trace[(j, j)] = 1.0;
        }
        let dh = &sel - mf_chol.solve(&(&traces[lf] * &cell_trace));
        norm_h += dh.transpose() * mf * &dh / h_f;
    }
    let stabilization = (&stabilization + stabilization.transpose()) * 0.5;
    let norm_h = (&norm_h + norm_h.transpose()) * 0.5;

    Ok(CellOperators {
        rec,
        stab_op,
        consistency,
        stabilization,
        norm_h,
        face_residuals,
        reduced_stiffness, means, mass_p })
}
