//! Error norms, convergence studies, manufactured problems and stability
//! constants.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use serde::Serialize;

use crate::field::{ScalarFn, VectorFn};
use crate::linalg::{lanczos_max_generalized, SparseCholesky};
use crate::local_ops::{BrokenPoly, HhoField, LocalOperators};
use crate::mesh::{Point, SimplicialMesh};
use crate::polyquad::{cell_points, CellBasis, QuadPolicy};
use crate::smoothing::{Averaging, LagrangeLayer, Smoother};
use crate::system::{full_matrix, local_matrix_sum, rhs, CondensedSystem, LoadFunctional, Method, Solver};
use crate::{Error, Result};

/// Per-cell `(‖∇(u − r)‖², ‖u − r‖²)` of a broken polynomial, summed in cell order.
fn broken_errors(mesh: &SimplicialMesh, r: &BrokenPoly, u: &ScalarFn, grad: &VectorFn, degree: usize) -> (f64, f64) {
    let parts = crate::par::map_collect(mesh.n_cells(), |k| {
        let basis = CellBasis::new(mesh, k, r.degree);
        let c = r.cell(k);
        let mut phi = vec![0.0; basis.len()];
        let mut g = vec![[0.0; 2]; basis.len()];
        let (mut e1, mut e0) = (0.0, 0.0);
        for (x, w) in cell_points(mesh, k, degree) {
            basis.eval_into(x, &mut phi);
            basis.grad_into(x, &mut g);
            let v: f64 = phi.iter().zip(c).map(|(a, b)| a * b).sum();
            let mut gv = [0.0; 2];
            for (gi, ci) in g.iter().zip(c) {
                gv[0] += gi[0] * ci;
                gv[1] += gi[1] * ci;
            }
            let gu = grad.eval(k, x);
            e1 += w * ((gu[0] - gv[0]).powi(2) + (gu[1] - gv[1]).powi(2));
            e0 += w * (u.eval(k, x) - v).powi(2);
        }
        (e1, e0)
    });
    parts.into_iter().fold((0.0, 0.0), |(a, b), (c, d)| (a + c, b + d))
}

/// `(‖∇_M(u − RÛ)‖, s(Û, Û)^½)`.
pub fn error_h1_broken(ops: &LocalOperators, u: &ScalarFn, grad: &VectorFn, field: &HhoField) -> (f64, f64) {
    let r = ops.reconstruct(field);
    let (e1, _) = broken_errors(ops.mesh(), &r, u, grad, QuadPolicy::error(ops.degree()));
    (e1.sqrt(), ops.stab_form(field, field).max(0.0).sqrt())
}

/// `‖u − RÛ‖`.
pub fn error_l2(ops: &LocalOperators, u: &ScalarFn, field: &HhoField) -> f64 {
    let r = ops.reconstruct(field);
    broken_errors(ops.mesh(), &r, u, &VectorFn::zero(), QuadPolicy::error(ops.degree())).1.sqrt()
}

/// `‖U_M − Π_M u‖`.
pub fn supercloseness(ops: &LocalOperators, u: &ScalarFn, field: &HhoField) -> f64 {
    let mesh = ops.mesh();
    let pu = ops.project_cell(u);
    let parts = crate::par::map_collect(mesh.n_cells(), |k| {
        let m = CellBasis::new(mesh, k, ops.degree()).mass_matrix(mesh);
        let d = DVector::from_iterator(m.nrows(), field.cell(k).iter().zip(pu.cell(k)).map(|(a, b)| a - b));
        d.dot(&(&m * &d))
    });
    parts.iter().sum::<f64>().max(0.0).sqrt()
}

/// `(Σ_K ‖∇(u − Eu)‖²_K)^½`, the broken best-approximation error of degree `p+1`.
pub fn best_error_h1(ops: &LocalOperators, u: &ScalarFn, grad: &VectorFn) -> f64 {
    let e = ops.elliptic_project(u, grad);
    broken_errors(ops.mesh(), &e, u, grad, QuadPolicy::error(ops.degree())).0.sqrt()
}

/// `log(e_i / e_{i+1}) / log(h_i / h_{i+1})` for consecutive levels; `None` on the first.
pub fn eoc(errors: &[f64], h: &[f64]) -> Vec<Option<f64>> {
    assert_eq!(errors.len(), h.len());
    (0..errors.len())
        .map(|i| (i > 0).then(|| (errors[i - 1] / errors[i]).ln() / (h[i - 1] / h[i]).ln()))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regularity {
    Smooth,
    KinkAligned,
    CornerSingular,
}

/// Names of the built-in manufactured problems.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CaseKind {
    /// `u = sin(πx) sin(πy)`, `f₀ = 2π² u`.
    SmoothSine,
    /// Continuous piecewise `P^{p+1}` interpolant of a pyramid, load `g = ∇u`.
    PolyConsistency,
    /// `u = φ(x) sin(πy)` with the hat `φ` peaking at `x = 1/2`, load `g = ∇u` only.
    KinkAligned,
}

impl CaseKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::SmoothSine => "smooth-sine",
            Self::PolyConsistency => "poly-consistency",
            Self::KinkAligned => "kink-aligned",
        }
    }
}

impl FromStr for CaseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        builtin_cases()
            .iter()
            .copied()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::UnknownName { kind: "case", name: s.into() })
    }
}

impl std::fmt::Display for CaseKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

pub fn builtin_cases() -> &'static [CaseKind] {
    &[CaseKind::SmoothSine, CaseKind::PolyConsistency, CaseKind::KinkAligned]
}

/// An exact solution with its gradient and a consistent load on a given mesh.
#[derive(Clone, Debug)]
pub struct ManufacturedCase {
    pub kind: CaseKind,
    pub u: ScalarFn,
    pub grad: VectorFn,
    pub load: LoadFunctional,
    pub regularity: Regularity,
    /// Expected EOC of the energy error and of the `L²` error.
    pub h1_rate: f64,
    pub l2_rate: f64,
}

fn hat(t: f64) -> f64 {
    1.0 - (2.0 * t - 1.0).abs()
}

impl ManufacturedCase {
    /// Instantiates `kind` on `mesh` for degree `p`.
    ///
    /// The kink case needs every cell on one side of `x = 1/2`.
    pub fn new(kind: CaseKind, mesh: &SimplicialMesh, p: usize) -> Result<Self> {
        let p1 = p as f64 + 1.0;
        match kind {
            CaseKind::SmoothSine => {
                let u = ScalarFn::new(|x| (PI * x[0]).sin() * (PI * x[1]).sin());
                let grad = VectorFn::new(|x| {
                    [PI * (PI * x[0]).cos() * (PI * x[1]).sin(), PI * (PI * x[0]).sin() * (PI * x[1]).cos()]
                });
                let f0 = ScalarFn::new(|x| 2.0 * PI * PI * (PI * x[0]).sin() * (PI * x[1]).sin());
                Ok(Self {
                    kind,
                    u,
                    grad,
                    load: LoadFunctional::density(f0),
                    regularity: Regularity::Smooth,
                    h1_rate: p1,
                    l2_rate: p1 + 1.0,
                })
            }
            CaseKind::PolyConsistency => {
                let layer = LagrangeLayer::new(mesh, p + 1)?;
                let vals: Vec<f64> = (0..layer.n_nodes())
                    .map(|z| {
                        let x = layer.coords(z);
                        if layer.is_boundary(z) {
                            0.0
                        } else {
                            (1.0 - (2.0 * x[0] - 1.0).abs().max((2.0 * x[1] - 1.0).abs())).max(0.0)
                        }
                    })
                    .collect();
                let (m1, l1, v1) = (mesh.clone(), layer.clone(), vals.clone());
                let u = ScalarFn::cellwise(move |k, x| l1.eval(&m1, &v1, k, x));
                let (m2, l2, v2) = (mesh.clone(), layer, vals);
                let grad = VectorFn::cellwise(move |k, x| l2.grad(&m2, &v2, k, x));
                Ok(Self {
                    kind,
                    u,
                    load: LoadFunctional::divergence(grad.clone()),
                    grad,
                    regularity: Regularity::Smooth,
                    h1_rate: p1,
                    l2_rate: p1 + 1.0,
                })
            }
            CaseKind::KinkAligned => {
                for k in 0..mesh.n_cells() {
                    let xs = mesh.cell_vertices(k).map(|v| v[0] - 0.5);
                    let below = xs.iter().all(|&x| x <= 1e-12);
                    let above = xs.iter().all(|&x| x >= -1e-12);
                    if !below && !above {
                        return Err(Error::InvalidMesh(format!(
                            "cell {k} crosses the line x = 1/2; the kink case needs an aligned mesh (even n)"
                        )));
                    }
                }
                let left: Vec<bool> = (0..mesh.n_cells()).map(|k| mesh.geometry(k).barycenter[0] < 0.5).collect();
                let u = ScalarFn::new(|x| hat(x[0]) * (PI * x[1]).sin());
                let grad = VectorFn::cellwise(move |k, x| {
                    let slope = if left[k] { 2.0 } else { -2.0 };
                    [slope * (PI * x[1]).sin(), hat(x[0]) * PI * (PI * x[1]).cos()]
                });
                Ok(Self {
                    kind,
                    u,
                    load: LoadFunctional::divergence(grad.clone()),
                    grad,
                    regularity: Regularity::KinkAligned,
                    h1_rate: p1,
                    l2_rate: p1 + 1.0,
                })
            }
        }
    }

    /// Largest mismatch between the load and `u`, measured at cell barycenters
    /// by central differences: `−Δu − f₀` for density loads, `∇u − g` for
    /// divergence loads.
    pub fn validate(&self, mesh: &SimplicialMesh) -> f64 {
        let mut worst: f64 = 0.0;
        for k in 0..mesh.n_cells() {
            let geo = mesh.geometry(k);
            let x = geo.barycenter;
            let e = 1e-3 * geo.inradius;
            let u = |d: Point| self.u.eval(k, [x[0] + d[0], x[1] + d[1]]);
            let du = [(u([e, 0.0]) - u([-e, 0.0])) / (2.0 * e), (u([0.0, e]) - u([0.0, -e])) / (2.0 * e)];
            let d2 = (u([e, 0.0]) + u([-e, 0.0]) + u([0.0, e]) + u([0.0, -e]) - 4.0 * u([0.0, 0.0])) / (e * e);
            let mut defect = 0.0;
            if let Some(g) = &self.load.g {
                let gv = g.eval(k, x);
                defect += (du[0] - gv[0]).abs().max((du[1] - gv[1]).abs());
            }
            if let Some(f0) = &self.load.f0 {
                defect += (-d2 - f0.eval(k, x)).abs();
            }
            worst = worst.max(defect);
        }
        worst
    }
}

/// Discretization options for one solve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveOptions {
    pub degree: usize,
    pub method: Method,
    pub averaging: Averaging,
    pub solver: Solver,
    pub quadrature: QuadPolicy,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            degree: 1,
            method: Method::Smoothed,
            averaging: Averaging::Mean,
            solver: Solver::Cholesky,
            quadrature: QuadPolicy::default(),
        }
    }
}

/// Builds the right-hand side for `opts.method` and solves `b_H(Û, ·) = rhs`.
pub fn solve_load(ops: &LocalOperators, load: &LoadFunctional, opts: &SolveOptions) -> Result<HhoField> {
    let smoother = match opts.method {
        Method::Smoothed => Some(Smoother::new(ops, opts.averaging)?),
        Method::Classical => None,
    };
    let b = rhs(ops, smoother.as_ref(), opts.method, load)?;
    CondensedSystem::assemble(ops)?.solve(&b, opts.solver)
}

/// One level of a convergence study.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LevelRow {
    pub level: usize,
    pub h: f64,
    #[serde(rename = "e_H1")]
    pub e_h1: f64,
    pub e_stab: f64,
    #[serde(rename = "e_L2")]
    pub e_l2: f64,
    pub e_super: f64,
    #[serde(rename = "best_H1")]
    pub best_h1: f64,
    /// `(e_H1² + e_stab²)^½ / best_H1`.
    pub ratio: f64,
    /// EOC of `(e_H1² + e_stab²)^½`.
    #[serde(rename = "eoc_H1")]
    pub eoc_h1: Option<f64>,
    #[serde(rename = "eoc_L2")]
    pub eoc_l2: Option<f64>,
}

impl LevelRow {
    pub fn energy(&self) -> f64 {
        self.e_h1.hypot(self.e_stab)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub case: CaseKind,
    pub degree: usize,
    pub method: String,
    pub averaging: String,
    pub rows: Vec<LevelRow>,
}

fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

impl ConvergenceReport {
    pub const CSV_HEADER: &'static str = "level,h,e_H1,e_stab,e_L2,e_super,best_H1,ratio,eoc_H1,eoc_L2";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let opt = |v: Option<f64>| v.map(fmt17).unwrap_or_default();
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{}",
                r.level,
                fmt17(r.h),
                fmt17(r.e_h1),
                fmt17(r.e_stab),
                fmt17(r.e_l2),
                fmt17(r.e_super),
                fmt17(r.best_h1),
                fmt17(r.ratio),
                opt(r.eoc_h1),
                opt(r.eoc_l2)
            );
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// EOC of an arbitrary column.
    pub fn eoc_of(&self, column: impl Fn(&LevelRow) -> f64) -> Vec<Option<f64>> {
        let e: Vec<f64> = self.rows.iter().map(&column).collect();
        let h: Vec<f64> = self.rows.iter().map(|r| r.h).collect();
        eoc(&e, &h)
    }

    /// Two-column `h error` data for plotting.
    pub fn plot_data(&self, column: impl Fn(&LevelRow) -> f64) -> String {
        self.rows.iter().map(|r| format!("{} {}\n", fmt17(r.h), fmt17(column(r)))).collect()
    }

    pub fn last_eoc_h1(&self) -> Option<f64> {
        self.rows.last().and_then(|r| r.eoc_h1)
    }

    pub fn last_eoc_l2(&self) -> Option<f64> {
        self.rows.last().and_then(|r| r.eoc_l2)
    }
}

/// Runs `kind` on every mesh of `meshes` (coarse to fine).
pub fn converge(kind: CaseKind, meshes: &[SimplicialMesh], opts: &SolveOptions) -> Result<ConvergenceReport> {
    let mut rows = Vec::with_capacity(meshes.len());
    for (level, mesh) in meshes.iter().enumerate() {
        let case = ManufacturedCase::new(kind, mesh, opts.degree)?;
        let ops = LocalOperators::with_quadrature(mesh, opts.degree, opts.quadrature)?;
        let sol = solve_load(&ops, &case.load, opts)?;
        let (e_h1, e_stab) = error_h1_broken(&ops, &case.u, &case.grad, &sol);
        let best_h1 = best_error_h1(&ops, &case.u, &case.grad);
        let energy = e_h1.hypot(e_stab);
        rows.push(LevelRow {
            level,
            h: mesh.h_max(),
            e_h1,
            e_stab,
            e_l2: error_l2(&ops, &case.u, &sol),
            e_super: supercloseness(&ops, &case.u, &sol),
            best_h1,
            ratio: if best_h1 > 0.0 { energy / best_h1 } else { f64::NAN },
            eoc_h1: None,
            eoc_l2: None,
        });
    }
    let mut report = ConvergenceReport {
        case: kind,
        degree: opts.degree,
        method: opts.method.to_string(),
        averaging: opts.averaging.to_string(),
        rows,
    };
    let e1 = report.eoc_of(LevelRow::energy);
    let e0 = report.eoc_of(|r| r.e_l2);
    for (r, (a, b)) in report.rows.iter_mut().zip(e1.into_iter().zip(e0)) {
        r.eoc_h1 = a;
        r.eoc_l2 = b;
    }
    Ok(report)
}

/// Unit-square meshes with `n` subdivisions per side, for each `n`.
pub fn unit_square_levels(ns: &[usize]) -> Result<Vec<SimplicialMesh>> {
    ns.iter().map(|&n| SimplicialMesh::unit_square(n)).collect()
}

fn random_start(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Per-cell `D_K = R̃_K − L_K` on the patch unknowns, with `R̃_K` the
/// reconstruction written in the smoother's output basis, and the stiffness
/// matrix of that basis.
fn difference_operators(smoother: &Smoother) -> Vec<(Vec<usize>, DMatrix<f64>, DMatrix<f64>)> {
    let ops = smoother.ops();
    let mesh = ops.mesh();
    let dofs = ops.dofs();
    let d = smoother.out_degree();
    crate::par::map_collect(mesh.n_cells(), |k| {
        let (patch, l) = smoother.cell_matrix(k);
        let mut diff = -l;
        let rec = &ops.cell(k).rec;
        for (j, g) in dofs.local_to_global(mesh, k).into_iter().enumerate() {
            let Some(g) = g else { continue };
            let c = patch.binary_search(&g).expect("cell unknowns lie in the patch");
            for i in 0..rec.nrows() {
                diff[(i, c)] += rec[(i, j)];
            }
        }
        (patch, diff, CellBasis::new(mesh, k, d).stiffness_matrix(mesh))
    })
}

fn apply_difference_gram(parts: &[(Vec<usize>, DMatrix<f64>, DMatrix<f64>)], n: usize, x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; n];
    for (patch, diff, stiff) in parts {
        let xl = DVector::from_iterator(patch.len(), patch.iter().map(|&g| x[g]));
        let v = diff.transpose() * (stiff * (diff * xl));
        for (&g, vi) in patch.iter().zip(v.iter()) {
            y[g] += vi;
        }
    }
    y
}

/// The smallest `C_H` with `‖∇_M(Rσ̂ − S_H σ̂)‖ ≤ C_H ‖σ̂‖_a` on the discrete
/// space, where `‖σ̂‖_a² = b_H(σ̂, σ̂)`: the square root of the largest
/// eigenvalue of the Gram matrix of `∇_M(R − S_H)` relative to `b_H`.
pub fn smoother_stability_constant(smoother: &Smoother, seed: u64) -> Result<f64> {
    let ops = smoother.ops();
    let n = ops.dofs().n_dofs();
    let b = full_matrix(ops);
    let chol = SparseCholesky::factor(&b)?;
    let parts = difference_operators(smoother);
    let lmax = lanczos_max_generalized(
        n,
        |x| apply_difference_gram(&parts, n, x),
        |x| b.mul_vec(x),
        |x| chol.solve(x),
        &random_start(n, seed),
        1e-10,
        400,
    );
    Ok(lmax.max(0.0).sqrt())
}

/// Dense counterpart of [`smoother_stability_constant`], for small meshes.
pub fn smoother_stability_constant_dense(smoother: &Smoother) -> Result<f64> {
    let ops = smoother.ops();
    let n = ops.dofs().n_dofs();
    let b = full_matrix(ops).to_dense();
    let parts = difference_operators(smoother);
    let mut g = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        g.column_mut(i).copy_from_slice(&apply_difference_gram(&parts, n, &e));
    }
    Ok(generalized_max(&g, &b)?.max(0.0).sqrt())
}

fn generalized_max(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    let l = b.clone().cholesky().ok_or_else(|| Error::Internal("matrix is not positive definite".into()))?.l();
    let li = l.try_inverse().ok_or_else(|| Error::Internal("singular factor".into()))?;
    let m = &li * a * li.transpose();
    let m = (&m + m.transpose()) * 0.5;
    Ok(nalgebra::SymmetricEigen::new(m).eigenvalues.max())
}

/// The largest `c` with `c ‖σ̂‖_H² ≤ b_H(σ̂, σ̂)` on the discrete space.
pub fn coercivity_constant(ops: &LocalOperators, seed: u64) -> Result<f64> {
    let n = ops.dofs().n_dofs();
    let b = full_matrix(ops);
    let h = local_matrix_sum(ops, |k| ops.cell(k).norm_h.clone());
    let chol = SparseCholesky::factor(&b)?;
    let lmax = lanczos_max_generalized(
        n,
        |x| h.mul_vec(x),
        |x| b.mul_vec(x),
        |x| chol.solve(x),
        &random_start(n, seed),
        1e-10,
        400,
    );
    Ok(1.0 / lmax)
}

/// Dense counterpart of [`coercivity_constant`].
pub fn coercivity_constant_dense(ops: &LocalOperators) -> Result<f64> {
    let b = full_matrix(ops).to_dense();
    let h = local_matrix_sum(ops, |k| ops.cell(k).norm_h.clone()).to_dense();
    Ok(1.0 / generalized_max(&h, &b)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eoc_of_hand_values() {
        let r = eoc(&[1.0, 0.25], &[1.0, 0.5]);
        assert_eq!(r[0], None);
        assert!((r[1].unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn cases_satisfy_their_invariants() {
        let mesh = SimplicialMesh::unit_square(4).unwrap();
        for p in 0..=2 {
            for &kind in builtin_cases() {
                let case = ManufacturedCase::new(kind, &mesh, p).unwrap();
                let d = case.validate(&mesh);
                assert!(d < 1e-4, "{kind} p={p}: {d:e}");
            }
        }
    }

    #[test]
    fn kink_case_needs_aligned_mesh() {
        let odd = SimplicialMesh::unit_square(3).unwrap();
        assert!(matches!(ManufacturedCase::new(CaseKind::KinkAligned, &odd, 0), Err(Error::InvalidMesh(_))));
        assert!(ManufacturedCase::new(CaseKind::KinkAligned, &odd.refine_red().unwrap(), 0).is_ok());
    }

    #[test]
    fn case_names_round_trip() {
        for &kind in builtin_cases() {
            assert_eq!(kind.name().parse::<CaseKind>().unwrap(), kind);
        }
        assert!("corner".parse::<CaseKind>().is_err());
    }

    #[test]
    fn error_against_quadrature_oracle() {
        // RÛ of a fixed field against u = x y: compare with a brute midpoint-refined sum
        let mesh = SimplicialMesh::unit_square(2).unwrap();
        let ops = LocalOperators::new(&mesh, 1).unwrap();
        let field = HhoField {
            dofs: ops.dofs(),
            values: (0..ops.dofs().n_dofs()).map(|i| ((i * 7 % 5) as f64 - 2.0) / 3.0).collect(),
        };
        let u = ScalarFn::new(|x| x[0] * x[1]);
        let grad = VectorFn::new(|x| [x[1], x[0]]);
        let r = ops.reconstruct(&field);
        let (h1, _) = error_h1_broken(&ops, &u, &grad, &field);
        let l2 = error_l2(&ops, &u, &field);
        let (mut o1, mut o0) = (0.0, 0.0);
        for k in 0..mesh.n_cells() {
            for (x, w) in cell_points(&mesh, k, 20) {
                let g = r.grad(&mesh, k, x);
                o1 += w * ((x[1] - g[0]).powi(2) + (x[0] - g[1]).powi(2));
                o0 += w * (x[0] * x[1] - r.eval(&mesh, k, x)).powi(2);
            }
        }
        assert!((h1 - o1.sqrt()).abs() < 1e-12 * o1.sqrt());
        assert!((l2 - o0.sqrt()).abs() < 1e-12 * o0.sqrt());
    }

    #[test]
    fn best_error_vanishes_on_polynomials() {
        let mesh = SimplicialMesh::unit_square(3).unwrap();
        let ops = LocalOperators::new(&mesh, 1).unwrap();
        let u = ScalarFn::new(|x| x[0] * x[0] - 3.0 * x[0] * x[1]);
        let grad = VectorFn::new(|x| [2.0 * x[0] - 3.0 * x[1], -3.0 * x[0]]);
        assert!(best_error_h1(&ops, &u, &grad) < 1e-12);
    }

    #[test]
    fn best_error_bounds_energy_error() {
        let mesh = SimplicialMesh::unit_square(4).unwrap();
        for p in 0..=1 {
            let report = converge(CaseKind::SmoothSine, std::slice::from_ref(&mesh), &SolveOptions { degree: p, ..Default::default() })
                .unwrap();
            assert!(report.rows[0].ratio >= 1.0 - 1e-9);
        }
    }

    #[test]
    fn poly_case_is_reproduced() {
        let mesh = SimplicialMesh::unit_square(4).unwrap();
        for p in 0..=2 {
            let r = converge(CaseKind::PolyConsistency, std::slice::from_ref(&mesh), &SolveOptions { degree: p, ..Default::default() })
                .unwrap();
            let row = &r.rows[0];
            assert!(row.e_h1 < 1e-9 && row.e_stab < 1e-9 && row.e_l2 < 1e-9, "{row:?}");
        }
    }

    #[test]
    fn classical_refuses_kink_load() {
        let mesh = SimplicialMesh::unit_square(2).unwrap();
        let opts = SolveOptions { degree: 0, method: Method::Classical, ..Default::default() };
        assert!(matches!(converge(CaseKind::KinkAligned, &[mesh], &opts), Err(Error::MethodInapplicable(_))));
    }

    #[test]
    fn csv_has_fixed_schema() {
        let meshes = unit_square_levels(&[2, 4]).unwrap();
        let r = converge(CaseKind::SmoothSine, &meshes, &SolveOptions { degree: 0, ..Default::default() }).unwrap();
        let csv = r.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], ConvergenceReport::CSV_HEADER);
        assert_eq!(lines.len(), 3);
        assert!(lines[1].ends_with(",,"));
        assert_eq!(lines[2].split(',').count(), 10);
        let json: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(json["rows"][1]["eoc_H1"].as_f64(), r.rows[1].eoc_h1);
    }

    #[test]
    fn stability_constants_match_dense_oracle() {
        let mesh = SimplicialMesh::unit_square(2).unwrap();
        for p in 0..=1 {
            let ops = LocalOperators::new(&mesh, p).unwrap();
            let sm = Smoother::new(&ops, Averaging::Mean).unwrap();
            let c = smoother_stability_constant(&sm, 1).unwrap();
            let cd = smoother_stability_constant_dense(&sm).unwrap();
            assert!((c - cd).abs() < 1e-6 * cd, "p={p}: {c} vs {cd}");
            let a = coercivity_constant(&ops, 1).unwrap();
            let ad = coercivity_constant_dense(&ops).unwrap();
            assert!((a - ad).abs() < 1e-6 * ad, "p={p}: {a} vs {ad}");
            assert!(a > 0.0);
        }
    }
}
