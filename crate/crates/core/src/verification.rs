//! Structural identity checks of the discretization and the smoother.
//!
//! Every check reports the measured residual next to its tolerance, so a
//! failing run shows how far off it is.

use std::collections::HashMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::analysis::{coercivity_constant, CaseKind, ManufacturedCase, SolveOptions};
use crate::linalg::SparseCholesky;
use crate::local_ops::{DofMap, HhoField, LocalOperators};
use crate::mesh::SimplicialMesh;
use crate::polyquad::{cell_points, dim_poly, face_points, CellBasis, FaceBasis, QuadPolicy};
use crate::smoothing::{Averaging, LagrangeLayer, Smoother, SmootherMatrix};
use crate::system::{full_matrix, CondensedSystem, Method, Solver};
use crate::{Result, ScalarFn, VectorFn};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Bound {
    /// Passes when `measured ≤ tolerance`.
    Upper,
    /// Passes when `measured ≥ tolerance`.
    Lower,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub measured: f64,
    pub tolerance: f64,
    pub bound: Bound,
    pub passed: bool,
}

impl CheckResult {
    fn upper(name: String, measured: f64, tolerance: f64) -> Self {
        Self { name, measured, tolerance, bound: Bound::Upper, passed: measured <= tolerance }
    }

    fn lower(name: String, measured: f64, tolerance: f64) -> Self {
        Self { name, measured, tolerance, bound: Bound::Lower, passed: measured >= tolerance }
    }
}

impl std::fmt::Display for CheckResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let op = match self.bound {
            Bound::Upper => "<=",
            Bound::Lower => ">=",
        };
        let status = if self.passed { "pass" } else { "FAIL" };
        write!(f, "{status} {:<44} {:.3e} {op} {:.1e}", self.name, self.measured, self.tolerance)
    }
}

/// What to run.
#[derive(Clone, Debug, PartialEq)]
pub struct SuiteConfig {
    pub sizes: Vec<usize>,
    pub degrees: Vec<usize>,
    pub averaging: Vec<Averaging>,
    pub seed: u64,
    pub random_fields: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            sizes: vec![2, 4, 8],
            degrees: vec![0, 1, 2],
            averaging: vec![Averaging::Mean, Averaging::ScottZhang],
            seed: 2024,
            random_fields: 100,
        }
    }
}

/// Runs every check on unit-square meshes for each size, degree and averaging variant.
pub fn run_suite(config: &SuiteConfig) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for &n in &config.sizes {
        let mesh = SimplicialMesh::unit_square(n)?;
        out.extend(run_on_mesh(&mesh, &format!("n={n}"), config)?);
    }
    Ok(out)
}

/// Runs every check on one mesh.
pub fn run_on_mesh(mesh: &SimplicialMesh, label: &str, config: &SuiteConfig) -> Result<Vec<CheckResult>> {
    let mut out = vec![mesh_invariants(mesh, label)];
    for &p in &config.degrees {
        let ops = LocalOperators::with_quadrature(mesh, p, QuadPolicy::with_extra(20))?;
        let tag = format!("p={p} {label}");
        out.push(reconstruction_of_interpolant(&ops, &tag));
        out.push(stabilization_kernel(&ops, &tag, config.seed));
        out.push(CheckResult::lower(format!("coercivity {tag}"), coercivity_constant(&ops, config.seed)?, 1e-6));
        out.push(condensation_exactness(&ops, &tag, config.seed)?);
        for &averaging in &config.averaging {
            let sm = Smoother::new(&ops, averaging)?;
            let matrix = sm.matrix();
            let tag = format!("{tag} {averaging}");
            out.push(moment_preservation(&sm, &matrix, &tag, config.seed, config.random_fields));
            out.push(conformity(&sm, &matrix, &tag));
            out.push(orthogonality(&sm, &matrix, &tag));
            out.push(locality(&sm, &matrix, &tag));
            out.push(discrete_consistency(&ops, averaging, &tag)?);
        }
    }
    Ok(out)
}

/// Cell normals close up, orientation is positive and the shape parameter is finite.
pub fn mesh_invariants(mesh: &SimplicialMesh, label: &str) -> CheckResult {
    let mut worst: f64 = 0.0;
    for k in 0..mesh.n_cells() {
        let g = mesh.geometry(k);
        let faces = mesh.cell_faces(k);
        let mut s = [0.0; 2];
        for (lf, f) in faces.into_iter().enumerate() {
            let len = mesh.face(f).length;
            s[0] += len * g.normals[lf][0];
            s[1] += len * g.normals[lf][1];
        }
        worst = worst.max(s[0].abs().max(s[1].abs()) / g.diameter);
        if !(g.area > 0.0) {
            worst = f64::INFINITY;
        }
    }
    if mesh.shape_parameter().is_err() {
        worst = f64::INFINITY;
    }
    CheckResult::upper(format!("mesh invariants {label}"), worst, 1e-13)
}

fn sine() -> (ScalarFn, VectorFn) {
    (
        ScalarFn::new(|x| (PI * x[0]).sin() * (PI * x[1]).sin()),
        VectorFn::new(|x| [PI * (PI * x[0]).cos() * (PI * x[1]).sin(), PI * (PI * x[0]).sin() * (PI * x[1]).cos()]),
    )
}

/// `R Î v = E v` for `v = sin(πx) sin(πy)`, relative to `max |Ev|`.
pub fn reconstruction_of_interpolant(ops: &LocalOperators, tag: &str) -> CheckResult {
    let (u, g) = sine();
    let r = ops.reconstruct(&ops.interpolate(&u));
    let e = ops.elliptic_project(&u, &g);
    CheckResult::upper(format!("reconstruction of interpolant {tag}"), r.max_abs_diff(&e) / e.max_abs(), 1e-10)
}

/// Nodal values of a random continuous piecewise `P^{p+1}` function vanishing on the boundary.
fn random_continuous(mesh: &SimplicialMesh, q: usize, seed: u64) -> Result<ScalarFn> {
    let layer = LagrangeLayer::new(mesh, q)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vals: Vec<f64> =
        (0..layer.n_nodes()).map(|z| if layer.is_boundary(z) { 0.0 } else { rng.gen_range(-1.0..1.0) }).collect();
    let mesh = mesh.clone();
    Ok(ScalarFn::cellwise(move |k, x| layer.eval(&mesh, &vals, k, x)))
}

/// `s(Îq, Îq) = 0` for a random `q ∈ P^{p+1} ∩ C⁰ ∩ H¹₀`.
pub fn stabilization_kernel(ops: &LocalOperators, tag: &str, seed: u64) -> CheckResult {
    let q = random_continuous(ops.mesh(), ops.degree() + 1, seed).expect("layer of a valid mesh");
    let iq = ops.interpolate(&q);
    CheckResult::upper(format!("stabilization kernel {tag}"), ops.stab_form(&iq, &iq).abs(), 1e-18)
}

fn random_field(dofs: DofMap, rng: &mut ChaCha8Rng) -> HhoField {
    HhoField { dofs, values: (0..dofs.n_dofs()).map(|_| rng.gen_range(-1.0..1.0)).collect() }
}

/// Static condensation against a direct solve of the uncondensed system,
/// relative to the size of the solution.
pub fn condensation_exactness(ops: &LocalOperators, tag: &str, seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b: Vec<f64> = (0..ops.dofs().n_dofs()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let condensed = CondensedSystem::assemble(ops)?.solve(&b, Solver::Cholesky)?;
    let full = SparseCholesky::factor(&full_matrix(ops))?.solve(&b);
    let scale = full.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = condensed.values.iter().zip(&full).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    Ok(CheckResult::upper(format!("condensation {tag}"), diff / scale, 1e-10))
}

/// Largest cell residual `|∫_K q (S_H σ̂ − σ_M)| / |K|` over the degree-`(p−1)`
/// monomials and face residual `|∫_F r (S_H σ̂ − σ_F)| / |F|` over the
/// degree-`p` face monomials, for seeded random fields.
pub fn moment_preservation(sm: &Smoother, matrix: &SmootherMatrix, tag: &str, seed: u64, fields: usize) -> CheckResult {
    let ops = sm.ops();
    let mesh = ops.mesh();
    let p = ops.degree();
    let d = sm.out_degree();
    let quad = 2 * d;
    // ∫_K q ψ (degree-(p−1) against the output basis) and ∫_K q φ (against the cell basis)
    let cell_tables: Vec<Option<(DMatrix<f64>, DMatrix<f64>)>> = (0..mesh.n_cells())
        .map(|k| {
            if p == 0 {
                return None;
            }
            let low = CellBasis::new(mesh, k, p - 1);
            let out = CellBasis::new(mesh, k, d);
            let area = mesh.geometry(k).area;
            let mut a = DMatrix::zeros(low.len(), out.len());
            for (x, w) in cell_points(mesh, k, quad) {
                let (ql, qo) = (low.eval(x), out.eval(x));
                for i in 0..ql.len() {
                    for j in 0..qo.len() {
                        a[(i, j)] += w * ql[i] * qo[j] / area;
                    }
                }
            }
            let b = CellBasis::new(mesh, k, p).mass_matrix(mesh).rows(0, dim_poly(p - 1)) / area;
            Some((a, b))
        })
        .collect();
    let face_tables: Vec<(usize, usize, DMatrix<f64>, DMatrix<f64>)> = mesh
        .interior_faces()
        .iter()
        .enumerate()
        .map(|(i, &f)| {
            let k = mesh.face(f).cells.0;
            let fb = FaceBasis::new(mesh, f, p);
            let out = CellBasis::new(mesh, k, d);
            let len = mesh.face(f).length;
            let mut a = DMatrix::zeros(fb.len(), out.len());
            for (x, w) in face_points(mesh, f, quad) {
                let (r, qo) = (fb.eval(x), out.eval(x));
                for s in 0..r.len() {
                    for j in 0..qo.len() {
                        a[(s, j)] += w * r[s] * qo[j] / len;
                    }
                }
            }
            (i, k, a, fb.mass_matrix(mesh) / len)
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..fields {
        let field = random_field(ops.dofs(), &mut rng);
        let s = matrix.apply(&field);
        for (k, t) in cell_tables.iter().enumerate() {
            if let Some((a, b)) = t {
                let r = a * DVector::from_column_slice(s.cell(k)) - b * DVector::from_column_slice(field.cell(k));
                worst = worst.max(r.amax());
            }
        }
        for (i, k, a, m) in &face_tables {
            let r = a * DVector::from_column_slice(s.cell(*k))
                - m * DVector::from_column_slice(field.interior_face(*i));
            worst = worst.max(r.amax());
        }
    }
    CheckResult::upper(format!("moment preservation {tag}"), worst, 1e-11)
}

/// Values of `S_H e_j` at points `xs` of cell `k`, keyed by global unknown `j`.
fn point_values(sm: &Smoother, matrix: &SmootherMatrix, k: usize, xs: &[[f64; 2]]) -> HashMap<usize, Vec<f64>> {
    let mesh = sm.ops().mesh();
    let (dofs, l) = matrix.cell(k);
    let basis = CellBasis::new(mesh, k, matrix.degree());
    let rows: Vec<DVector<f64>> = xs.iter().map(|&x| DVector::from_vec(basis.eval(x))).collect();
    dofs.iter()
        .enumerate()
        .map(|(c, &g)| (g, rows.iter().map(|phi| phi.dot(&l.column(c))).collect()))
        .collect()
}

/// `H¹₀` conformity of `S_H e_j` for every basis field: jumps across interior
/// faces and traces on boundary faces at five points per face.
pub fn conformity(sm: &Smoother, matrix: &SmootherMatrix, tag: &str) -> CheckResult {
    let mesh = sm.ops().mesh();
    let mut worst: f64 = 0.0;
    for (f, face) in mesh.faces().iter().enumerate() {
        let xs: Vec<[f64; 2]> =
            [0.0, 0.2, 0.5, 0.7, 1.0].iter().map(|&t| mesh.map_to_face(f, &[1.0 - t, t])).collect();
        let a = point_values(sm, matrix, face.cells.0, &xs);
        match face.cells.1 {
            Some(k2) => {
                let b = point_values(sm, matrix, k2, &xs);
                for (g, va) in &a {
                    let vb = b.get(g);
                    for (i, x) in va.iter().enumerate() {
                        worst = worst.max((x - vb.map_or(0.0, |v| v[i])).abs());
                    }
                }
                for (g, vb) in &b {
                    if !a.contains_key(g) {
                        worst = worst.max(vb.iter().fold(0.0f64, |m, v| m.max(v.abs())));
                    }
                }
            }
            None => {
                for va in a.values() {
                    worst = worst.max(va.iter().fold(0.0f64, |m, v| m.max(v.abs())));
                }
            }
        }
    }
    CheckResult::upper(format!("conformity {tag}"), worst, 1e-10)
}

/// `max_{i,j} |∫ ∇_M Rφ_i · ∇_M (Rφ_j − S_H φ_j)|` over all basis fields.
pub fn orthogonality(sm: &Smoother, matrix: &SmootherMatrix, tag: &str) -> CheckResult {
    let ops = sm.ops();
    let mesh = ops.mesh();
    let dofs = ops.dofs();
    let n = dofs.n_dofs();
    let mut o = DMatrix::<f64>::zeros(n, n);
    for k in 0..mesh.n_cells() {
        let stiff = CellBasis::new(mesh, k, matrix.degree()).stiffness_matrix(mesh);
        let rec = &ops.cell(k).rec;
        let nr = rec.nrows();
        let map = dofs.local_to_global(mesh, k);
        let (patch, l) = matrix.cell(k);
        // ∇Rφ_i against ∇(Rφ_j) and ∇(S_H φ_j)
        let left = rec.transpose() * stiff.rows(0, nr);
        let rr = left.columns(0, nr) * rec;
        let rs = &left * l;
        for (i, gi) in map.iter().enumerate() {
            let Some(gi) = *gi else { continue };
            for (j, gj) in map.iter().enumerate() {
                if let Some(gj) = gj {
                    o[(gi, *gj)] += rr[(i, j)];
                }
            }
            for (c, &gj) in patch.iter().enumerate() {
                o[(gi, gj)] -= rs[(i, c)];
            }
        }
    }
    CheckResult::upper(format!("orthogonality {tag}"), o.amax(), 1e-10)
}

/// Cells on which `S_H` of a cell or face basis field is nonzero although they
/// share no vertex with a cell adjacent to that entity.
pub fn locality(sm: &Smoother, matrix: &SmootherMatrix, tag: &str) -> CheckResult {
    let ops = sm.ops();
    let mesh = ops.mesh();
    let dofs = ops.dofs();
    let mut outside = 0usize;
    let mut probe = |j: usize, entity_vertices: Vec<usize>| {
        for k in matrix.support(j) {
            if !mesh.cells()[k].iter().any(|v| entity_vertices.contains(v)) {
                outside += 1;
            }
        }
    };
    for k in (0..mesh.n_cells()).step_by(7.max(mesh.n_cells() / 16)) {
        probe(dofs.cell_dof(k, 0), mesh.cells()[k].to_vec());
    }
    for (i, &f) in mesh.interior_faces().iter().enumerate().step_by(5.max(mesh.n_interior_faces() / 16).max(1)) {
        let vertices = mesh.face(f).cell_list().flat_map(|k| mesh.cells()[k]).collect();
        probe(dofs.face_dof(i, 0), vertices);
    }
    CheckResult::upper(format!("one-ring support {tag}"), outside as f64, 0.0)
}

/// The smoothed method returns `Î u` for a continuous piecewise `P^{p+1}` solution.
pub fn discrete_consistency(ops: &LocalOperators, averaging: Averaging, tag: &str) -> Result<CheckResult> {
    let case = ManufacturedCase::new(CaseKind::PolyConsistency, ops.mesh(), ops.degree())?;
    let opts = SolveOptions {
        degree: ops.degree(),
        method: Method::Smoothed,
        averaging,
        solver: Solver::Cholesky,
        quadrature: ops.quadrature(),
    };
    let sol = crate::analysis::solve_load(ops, &case.load, &opts)?;
    let diff = sol.max_abs_diff(&ops.interpolate(&case.u));
    Ok(CheckResult::upper(format!("discrete consistency {tag}"), diff, 1e-9))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_passes() {
        let config = SuiteConfig { sizes: vec![2, 3], random_fields: 5, ..Default::default() };
        let results = run_suite(&config).unwrap();
        for r in &results {
            assert!(r.passed, "{r}");
        }
        assert_eq!(results.len(), 2 * (1 + 3 * (4 + 2 * 5)));
    }

    #[test]
    fn two_triangle_mesh_passes_mesh_check() {
        let mesh = SimplicialMesh::new(
            vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]],
            vec![[0, 1, 2], [1, 3, 2]],
        )
        .unwrap();
        assert!(mesh_invariants(&mesh, "").passed);
    }
}
