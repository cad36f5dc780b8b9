//! Plain Rust entry points behind the wasm bindings.

use hho_core::analysis::{
    converge, error_h1_broken, error_l2, solve_load, unit_square_levels, CaseKind, ManufacturedCase, SolveOptions,
};
use hho_core::local_ops::{BrokenPoly, HhoField, LocalOperators};
use hho_core::smoothing::{Averaging, Smoother};
use hho_core::system::Method;
use hho_core::{SimplicialMesh, MAX_DEGREE};

pub const MAX_N: usize = 48;
pub const MAX_SAMPLES: usize = 8;

/// Piecewise-linear picture of a broken polynomial: flat triangle list.
#[derive(Debug, Clone, PartialEq)]
pub struct Picture {
    /// `x, y` per vertex, three vertices per triangle.
    pub coords: Vec<f64>,
    /// One value per vertex.
    pub values: Vec<f64>,
    pub summary: String,
}

impl Picture {
    fn sample(mesh: &SimplicialMesh, samples: usize, mut f: impl FnMut(usize, [f64; 2]) -> f64) -> Self {
        let s = samples.max(1);
        let mut coords = Vec::new();
        let mut values = Vec::new();
        let node = |i: usize, j: usize| [1.0 - (i + j) as f64 / s as f64, i as f64 / s as f64, j as f64 / s as f64];
        for k in 0..mesh.n_cells() {
            let mut push = |tri: [(usize, usize); 3]| {
                for (i, j) in tri {
                    let x = mesh.map_to_cell(k, &node(i, j));
                    coords.extend_from_slice(&x);
                    values.push(f(k, x));
                }
            };
            for i in 0..s {
                for j in 0..s - i {
                    push([(i, j), (i + 1, j), (i, j + 1)]);
                    if i + j + 1 < s {
                        push([(i + 1, j), (i + 1, j + 1), (i, j + 1)]);
                    }
                }
            }
        }
        Self { coords, values, summary: String::new() }
    }

    fn of(mesh: &SimplicialMesh, poly: &BrokenPoly, samples: usize) -> Self {
        Self::sample(mesh, samples, |k, x| poly.eval(mesh, k, x))
    }

    pub fn n_triangles(&self) -> usize {
        self.values.len() / 3
    }

    pub fn range(&self) -> (f64, f64) {
        self.values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

fn bounded(name: &str, value: usize, lo: usize, hi: usize) -> Result<usize, String> {
    if (lo..=hi).contains(&value) {
        Ok(value)
    } else {
        Err(format!("{name} must lie in {lo}..={hi}, got {value}"))
    }
}

fn options(degree: usize, method: &str, averaging: &str) -> Result<SolveOptions, String> {
    Ok(SolveOptions {
        degree: bounded("degree", degree, 0, MAX_DEGREE)?,
        method: method.parse::<Method>().map_err(|e| e.to_string())?,
        averaging: averaging.parse::<Averaging>().map_err(|e| e.to_string())?,
        ..SolveOptions::default()
    })
}

/// Solves a manufactured problem on the `n x n` unit square and samples the reconstruction.
pub fn solve_picture(
    case: &str,
    degree: usize,
    n: usize,
    method: &str,
    averaging: &str,
    samples: usize,
) -> Result<Picture, String> {
    let opts = options(degree, method, averaging)?;
    let kind: CaseKind = case.parse().map_err(|e: hho_core::Error| e.to_string())?;
    let mesh = SimplicialMesh::unit_square(bounded("n", n, 1, MAX_N)?).map_err(|e| e.to_string())?;
    let case = ManufacturedCase::new(kind, &mesh, degree).map_err(|e| e.to_string())?;
    let ops = LocalOperators::new(&mesh, degree).map_err(|e| e.to_string())?;
    let sol = solve_load(&ops, &case.load, &opts).map_err(|e| e.to_string())?;
    let r = ops.reconstruct(&sol);
    let mut pic = Picture::of(&mesh, &r, bounded("samples", samples, 1, MAX_SAMPLES)?);
    let (e1, es) = error_h1_broken(&ops, &case.u, &case.grad, &sol);
    pic.summary = format!(
        "{} cells, {} unknowns, energy error {:.3e}, L2 error {:.3e}",
        mesh.n_cells(),
        ops.dofs().n_dofs(),
        e1.hypot(es),
        error_l2(&ops, &case.u, &sol)
    );
    Ok(pic)
}

/// Applies the smoother to one HHO basis function.
///
/// `entity` is `"cell"` or `"face"`; faces are numbered among interior faces.
pub fn smoother_picture(
    degree: usize,
    n: usize,
    averaging: &str,
    entity: &str,
    index: usize,
    component: usize,
    samples: usize,
) -> Result<Picture, String> {
    let opts = options(degree, "smoothed", averaging)?;
    let mesh = SimplicialMesh::unit_square(bounded("n", n, 1, MAX_N)?).map_err(|e| e.to_string())?;
    let ops = LocalOperators::new(&mesh, degree).map_err(|e| e.to_string())?;
    let dofs = ops.dofs();
    let dof = match entity {
        "cell" => {
            bounded("cell", index, 0, mesh.n_cells() - 1)?;
            dofs.cell_dof(index, bounded("component", component, 0, dofs.n_cell_dofs() - 1)?)
        }
        "face" => {
            if mesh.n_interior_faces() == 0 {
                return Err("the mesh has no interior faces".into());
            }
            bounded("face", index, 0, mesh.n_interior_faces() - 1)?;
            dofs.face_dof(index, bounded("component", component, 0, dofs.n_face_dofs() - 1)?)
        }
        other => return Err(format!("entity must be `cell` or `face`, got `{other}`")),
    };
    let smoother = Smoother::new(&ops, opts.averaging).map_err(|e| e.to_string())?;
    let out = smoother.apply(&HhoField::unit(dofs, dof));
    let support = (0..mesh.n_cells()).filter(|&k| out.cell(k).iter().any(|c| *c != 0.0)).count();
    let mut pic = Picture::of(&mesh, &out, bounded("samples", samples, 1, MAX_SAMPLES)?);
    pic.summary = format!(
        "degree {} output, supported on {} of {} cells, max |value| {:.3e}",
        smoother.out_degree(),
        support,
        mesh.n_cells(),
        out.max_abs()
    );
    Ok(pic)
}

/// Convergence table on the unit square meshes `n = base, 2 base, ...` as CSV.
pub fn convergence_csv(
    case: &str,
    degree: usize,
    method: &str,
    averaging: &str,
    base: usize,
    levels: usize,
) -> Result<String, String> {
    let opts = options(degree, method, averaging)?;
    let kind: CaseKind = case.parse().map_err(|e: hho_core::Error| e.to_string())?;
    let levels = bounded("levels", levels, 1, 6)?;
    let ns: Vec<usize> = (0..levels).map(|l| base << l).collect();
    bounded("finest n", *ns.last().expect("at least one level"), 1, MAX_N)?;
    let meshes = unit_square_levels(&ns).map_err(|e| e.to_string())?;
    Ok(converge(kind, &meshes, &opts).map_err(|e| e.to_string())?.to_csv())
}
