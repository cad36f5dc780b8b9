//! Global assembly of `b_H`, the classical and smoothed right-hand sides,
//! static condensation onto the interior-face unknowns and the linear solve.

use std::str::FromStr;
use std::sync::OnceLock;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::field::{ScalarFn, VectorFn};
use crate::linalg::{conjugate_gradient, CsrMatrix, SparseCholesky};
use crate::local_ops::{DofMap, HhoField, LocalOperators};
use crate::polyquad::{cell_points, CellBasis};
use crate::smoothing::Smoother;

/// A load `f = f₀ − div g`, acting as `⟨f, v⟩ = ∫ f₀ v + ∫ g·∇v`.
#[derive(Clone, Debug, Default)]
pub struct LoadFunctional {
    pub f0: Option<ScalarFn>,
    pub g: Option<VectorFn>,
}

/// Which parts of a [`LoadFunctional`] are present.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LoadKind {
    Zero,
    L2Density,
    DivergenceForm,
    Composite,
}

impl LoadFunctional {
    pub fn density(f0: ScalarFn) -> Self {
        Self { f0: Some(f0), g: None }
    }

    pub fn divergence(g: VectorFn) -> Self {
        Self { f0: None, g: Some(g) }
    }

    pub fn composite(f0: ScalarFn, g: VectorFn) -> Self {
        Self { f0: Some(f0), g: Some(g) }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn kind(&self) -> LoadKind {
        match (&self.f0, &self.g) {
            (None, None) => LoadKind::Zero,
            (Some(_), None) => LoadKind::L2Density,
            (None, Some(_)) => LoadKind::DivergenceForm,
            (Some(_), Some(_)) => LoadKind::Composite,
        }
    }
}

/// Discretization of the load.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Method {
    /// `σ̂ ↦ ∫ f σ_M`, for `f ∈ L²` only.
    Classical,
    /// `σ̂ ↦ ⟨f, S_H σ̂⟩`.
    #[default]
    Smoothed,
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classical" => Ok(Self::Classical),
            "smoothed" => Ok(Self::Smoothed),
            other => Err(Error::UnknownName { kind: "method", name: other.into() }),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Classical => "classical",
            Self::Smoothed => "smoothed",
        })
    }
}

/// Linear solver for the condensed face system.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum Solver {
    #[default]
    Cholesky,
    /// Jacobi-preconditioned CG to the given relative residual.
    ConjugateGradient { tolerance: f64 },
}

/// `∫ f₀ σ_M` against every cell basis function; face entries are zero.
pub fn rhs_classical(ops: &LocalOperators, load: &LoadFunctional) -> Result<Vec<f64>> {
    if load.g.is_some() {
        return Err(Error::MethodInapplicable(
            "the classical right-hand side needs an L² load; this load has a divergence part".into(),
        ));
    }
    let mesh = ops.mesh();
    let dofs = ops.dofs();
    let mut out = vec![0.0; dofs.n_dofs()];
    let Some(f0) = &load.f0 else { return Ok(out) };
    let degree = ops.quadrature().load(ops.degree());
    let blocks = crate::par::map_collect(mesh.n_cells(), |k| {
        let basis = CellBasis::new(mesh, k, ops.degree());
        let mut r = vec![0.0; basis.len()];
        let mut phi = vec![0.0; basis.len()];
        for (x, w) in cell_points(mesh, k, degree) {
            basis.eval_into(x, &mut phi);
            let f = w * f0.eval(k, x);
            r.iter_mut().zip(&phi).for_each(|(a, b)| *a += f * b);
        }
        r
    });
    out[..dofs.n_cell_dofs()].copy_from_slice(&blocks.concat());
    Ok(out)
}

/// `⟨f, ψ_j⟩ = ∫_K f₀ ψ_j + g·∇ψ_j` for the monomials `ψ_j` of `basis`.
pub fn local_load(load: &LoadFunctional, k: usize, basis: &CellBasis, degree: usize, mesh: &crate::SimplicialMesh) -> DVector<f64> {
    let n = basis.len();
    let mut out = DVector::zeros(n);
    let mut phi = vec![0.0; n];
    let mut grad = vec![[0.0; 2]; n];
    for (x, w) in cell_points(mesh, k, degree) {
        if let Some(f0) = &load.f0 {
            basis.eval_into(x, &mut phi);
            let f = w * f0.eval(k, x);
            for j in 0..n {
                out[j] += f * phi[j];
            }
        }
        if let Some(g) = &load.g {
            basis.grad_into(x, &mut grad);
            let gv = g.eval(k, x);
            for j in 0..n {
                out[j] += w * (gv[0] * grad[j][0] + gv[1] * grad[j][1]);
            }
        }
    }
    out
}

/// `⟨f, S_H σ̂⟩` for every basis field `σ̂`; only the vertex patch of each cell is visited.
pub fn rhs_smoothed(smoother: &Smoother, load: &LoadFunctional) -> Vec<f64> {
    let ops = smoother.ops();
    if load.kind() == LoadKind::Zero {
        return vec![0.0; ops.dofs().n_dofs()];
    }
    let mesh = ops.mesh();
    let degree = ops.quadrature().load(ops.degree());
    smoother.transpose_apply(|k, basis| local_load(load, k, basis, degree, mesh))
}

/// Right-hand side for either method.
pub fn rhs(ops: &LocalOperators, smoother: Option<&Smoother>, method: Method, load: &LoadFunctional) -> Result<Vec<f64>> {
    match method {
        Method::Classical => rhs_classical(ops, load),
        Method::Smoothed => {
            let sm = smoother.ok_or_else(|| Error::Internal("smoothed method needs a smoother".into()))?;
            Ok(rhs_smoothed(sm, load))
        }
    }
}

/// The uncondensed matrix of `b_H` on all unknowns, cells first.
pub fn full_matrix(ops: &LocalOperators) -> CsrMatrix {
    local_matrix_sum(ops, |k| ops.cell(k).matrix())
}

/// Assembles `Σ_K` of per-cell matrices on the local unknowns.
pub fn local_matrix_sum(ops: &LocalOperators, local: impl Fn(usize) -> DMatrix<f64>) -> CsrMatrix {
    let mesh = ops.mesh();
    let dofs = ops.dofs();
    let mut triplets = Vec::new();
    for k in 0..mesh.n_cells() {
        let map = dofs.local_to_global(mesh, k);
        let a = local(k);
        for (i, gi) in map.iter().enumerate() {
            let Some(gi) = gi else { continue };
            for (j, gj) in map.iter().enumerate() {
                if let Some(gj) = gj {
                    triplets.push((*gi, *gj, a[(i, j)]));
                }
            }
        }
    }
    CsrMatrix::from_triplets(dofs.n_dofs(), &triplets)
}

struct CellElimination {
    tt: Cholesky<f64, Dyn>,
    tf: DMatrix<f64>,
    map: Vec<Option<usize>>,
}

/// `b_H` condensed onto the interior-face unknowns.
pub struct CondensedSystem {
    dofs: DofMap,
    matrix: CsrMatrix,
    cells: Vec<CellElimination>,
    factor: OnceLock<SparseCholesky>,
}

impl CondensedSystem {
    pub fn assemble(ops: &LocalOperators) -> Result<Self> {
        let mesh = ops.mesh();
        let dofs = ops.dofs();
        let nc = dofs.n_c;
        let offset = dofs.n_cell_dofs();
        let parts = crate::par::map_collect(mesh.n_cells(), |k| -> Result<(CellElimination, DMatrix<f64>)> {
            let a = ops.cell(k).matrix();
            let nl = a.nrows();
            let tt = Cholesky::new(a.view((0, 0), (nc, nc)).into_owned())
                .ok_or_else(|| Error::Internal(format!("cell block of cell {k} is not positive definite")))?;
            let tf = a.view((0, nc), (nc, nl - nc)).into_owned();
            let ff = a.view((nc, nc), (nl - nc, nl - nc)).into_owned();
            let schur = &ff - tf.transpose() * tt.solve(&tf);
            let schur = (&schur + schur.transpose()) * 0.5;
            Ok((CellElimination { tt, tf, map: dofs.local_to_global(mesh, k)[nc..].to_vec() }, schur))
        });
        let mut cells = Vec::with_capacity(mesh.n_cells());
        let mut triplets = Vec::new();
        for part in parts {
            let (cell, schur) = part?;
            for (i, gi) in cell.map.iter().enumerate() {
                let Some(gi) = gi else { continue };
                for (j, gj) in cell.map.iter().enumerate() {
                    if let Some(gj) = gj {
                        triplets.push((gi - offset, gj - offset, schur[(i, j)]));
                    }
                }
            }
            cells.push(cell);
        }
        let matrix = CsrMatrix::from_triplets(dofs.n_face_dofs(), &triplets);
        Ok(Self { dofs, matrix, cells, factor: OnceLock::new() })
    }

    pub fn dofs(&self) -> DofMap {
        self.dofs
    }

    /// The condensed matrix on interior-face unknowns.
    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    fn cholesky(&self) -> Result<&SparseCholesky> {
        if let Some(f) = self.factor.get() {
            return Ok(f);
        }
        let f = SparseCholesky::factor(&self.matrix)?;
        Ok(self.factor.get_or_init(|| f))
    }

    fn cell_rhs(&self, rhs: &[f64], k: usize) -> DVector<f64> {
        let nc = self.dofs.n_c;
        DVector::from_column_slice(&rhs[k * nc..(k + 1) * nc])
    }

    /// Solves `b_H(Û, e_i) = rhs_i` for every global unknown `i`.
    pub fn solve(&self, rhs: &[f64], solver: Solver) -> Result<HhoField> {
        if rhs.len() != self.dofs.n_dofs() {
            return Err(Error::DimensionMismatch { expected: self.dofs.n_dofs(), actual: rhs.len() });
        }
        let offset = self.dofs.n_cell_dofs();
        let mut face_rhs = rhs[offset..].to_vec();
        for (k, cell) in self.cells.iter().enumerate() {
            let y = cell.tf.transpose() * cell.tt.solve(&self.cell_rhs(rhs, k));
            for (i, g) in cell.map.iter().enumerate() {
                if let Some(g) = g {
                    face_rhs[g - offset] -= y[i];
                }
            }
        }
        let faces = if face_rhs.is_empty() {
            Vec::new()
        } else {
            match solver {
                Solver::Cholesky => self.cholesky()?.solve(&face_rhs),
                Solver::ConjugateGradient { tolerance } => {
                    conjugate_gradient(&self.matrix, &face_rhs, tolerance, 20 * face_rhs.len() + 100)?.0
                }
            }
        };
        let mut values = vec![0.0; self.dofs.n_dofs()];
        values[offset..].copy_from_slice(&faces);
        for (k, cell) in self.cells.iter().enumerate() {
            let uf = DVector::from_iterator(cell.map.len(), cell.map.iter().map(|g| g.map_or(0.0, |g| faces[g - offset])));
            let ut = cell.tt.solve(&(self.cell_rhs(rhs, k) - &cell.tf * uf));
            values[k * self.dofs.n_c..(k + 1) * self.dofs.n_c].copy_from_slice(ut.as_slice());
        }
        HhoField::from_values(self.dofs, values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::SimplicialMesh;
    use crate::smoothing::{Averaging, LagrangeLayer};
    use nalgebra::SymmetricEigen;
    use std::f64::consts::PI;

    fn sine_load() -> LoadFunctional {
        LoadFunctional::density(ScalarFn::new(|x| 2.0 * PI * PI * (PI * x[0]).sin() * (PI * x[1]).sin()))
    }

    #[test]
    fn load_kinds() {
        assert_eq!(LoadFunctional::zero().kind(), LoadKind::Zero);
        assert_eq!(sine_load().kind(), LoadKind::L2Density);
        assert_eq!(LoadFunctional::divergence(VectorFn::zero()).kind(), LoadKind::DivergenceForm);
        assert_eq!(LoadFunctional::composite(ScalarFn::zero(), VectorFn::zero()).kind(), LoadKind::Composite);
    }

    #[test]
    fn classical_rhs_examples() {
        let mesh = SimplicialMesh::unit_square(2).unwrap();
        let ops = LocalOperators::new(&mesh, 0).unwrap();
        assert!(rhs_classical(&ops, &LoadFunctional::zero()).unwrap().iter().all(|&v| v == 0.0));
        let one = rhs_classical(&ops, &LoadFunctional::density(ScalarFn::new(|_| 1.0))).unwrap();
        for k in 0..mesh.n_cells() {
            assert!((one[k] - mesh.geometry(k).area).abs() < 1e-15);
        }
        assert!(one[mesh.n_cells()..].iter().all(|&v| v == 0.0));
        let err = rhs_classical(&ops, &LoadFunctional::divergence(VectorFn::zero())).unwrap_err();
        assert!(matches!(err, Error::MethodInapplicable(_)));
        // sine load against a high-order oracle
        let ops = LocalOperators::with_quadrature(&mesh, 1, crate::polyquad::QuadPolicy::with_extra(20)).unwrap();
        let r = rhs_classical(&ops, &sine_load()).unwrap();
        let f0 = sine_load().f0.unwrap();
        for k in 0..mesh.n_cells() {
            let basis = CellBasis::new(&mesh, k, 1);
            for i in 0..3 {
                let exact: f64 = cell_points(&mesh, k, 30).map(|(x, w)| w * f0.eval(k, x) * basis.eval(x)[i]).sum();
                assert!((r[3 * k + i] - exact).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matrix_is_symmetric_and_positive() {
        let mesh = SimplicialMesh::unit_square(1).unwrap();
        let ops = LocalOperators::new(&mesh, 0).unwrap();
        let a = full_matrix(&ops);
        assert_eq!(a.asymmetry(), 0.0);
        let eig = SymmetricEigen::new(a.to_dense()).eigenvalues;
        assert!(eig.min() > 0.0);
        let mesh = SimplicialMesh::unit_square(3).unwrap();
        for p in 0..=2 {
            let ops = LocalOperators::new(&mesh, p).unwrap();
            let sys = CondensedSystem::assemble(&ops).unwrap();
            assert!(sys.matrix().asymmetry() < 1e-13);
            let eig = SymmetricEigen::new(sys.matrix().to_dense()).eigenvalues;
            assert!(eig.min() > 0.0);
        }
    }

    #[test]
    fn condensation_matches_full_solve() {
        let mesh = SimplicialMesh::unit_square(4).unwrap();
        for p in 0..=2 {
            let ops = LocalOperators::new(&mesh, p).unwrap();
            let sys = CondensedSystem::assemble(&ops).unwrap();
            let r = rhs_classical(&ops, &sine_load()).unwrap();
            let u = sys.solve(&r, Solver::Cholesky).unwrap();
            let full = full_matrix(&ops);
            let dense = full.to_dense().cholesky().unwrap().solve(&DVector::from_vec(r.clone()));
            let diff = u.values.iter().zip(dense.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(diff < 1e-10, "p={p}: {diff:e}");
            let res = full.mul_vec(&u.values).iter().zip(&r).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(res < 1e-10);
            let cg = sys.solve(&r, Solver::ConjugateGradient { tolerance: 1e-13 }).unwrap();
            assert!(cg.max_abs_diff(&u) < 1e-9);
            assert!(sys.solve(&vec![0.0; r.len()], Solver::Cholesky).unwrap().values.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn smoothed_rhs_of_zero_load_is_zero() {
        let mesh = SimplicialMesh::unit_square(2).unwrap();
        let ops = LocalOperators::new(&mesh, 1).unwrap();
        let sm = Smoother::new(&ops, Averaging::Mean).unwrap();
        assert!(rhs_smoothed(&sm, &LoadFunctional::zero()).iter().all(|&v| v == 0.0));
        let zero_fns = LoadFunctional::composite(ScalarFn::zero(), VectorFn::zero());
        assert!(rhs_smoothed(&sm, &zero_fns).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn divergence_load_of_continuous_solution_is_reproduced() {
        let mesh = SimplicialMesh::unit_square(4).unwrap();
        for p in 0..=2 {
            let ops = LocalOperators::new(&mesh, p).unwrap();
            let layer = LagrangeLayer::new(&mesh, p + 1).unwrap();
            let vals: Vec<f64> = (0..layer.n_nodes())
                .map(|z| {
                    let x = layer.coords(z);
                    if layer.is_boundary(z) {
                        0.0
                    } else {
                        (3.0 * x[0] + x[1]).sin()
                    }
                })
                .collect();
            let (m1, l1, v1) = (mesh.clone(), layer.clone(), vals.clone());
            let u = ScalarFn::cellwise(move |k, x| l1.eval(&m1, &v1, k, x));
            let (m2, l2, v2) = (mesh.clone(), layer.clone(), vals.clone());
            let g = VectorFn::cellwise(move |k, x| l2.grad(&m2, &v2, k, x));
            let sys = CondensedSystem::assemble(&ops).unwrap();
            for averaging in [Averaging::Mean, Averaging::ScottZhang] {
                let sm = Smoother::new(&ops, averaging).unwrap();
                let r = rhs_smoothed(&sm, &LoadFunctional::divergence(g.clone()));
                let sol = sys.solve(&r, Solver::Cholesky).unwrap();
                let exact = ops.interpolate(&u);
                let d = sol.max_abs_diff(&exact);
                assert!(d < 1e-9, "p={p} {averaging}: {d:e}");
            }
        }
    }
}
