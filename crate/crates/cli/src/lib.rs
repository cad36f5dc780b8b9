//! Batch driver behind the `hho` binary: verification suites, convergence
//! studies and single solves configured by a JSON file.

pub mod config;

use std::path::{Path, PathBuf};

use hho_core::analysis::{converge, solve_load, ConvergenceReport, LevelRow, ManufacturedCase, SolveOptions};
use hho_core::local_ops::LocalOperators;
use hho_core::system::LoadFunctional;
use hho_core::verification::{run_on_mesh, run_suite, Bound, CheckResult, SuiteConfig};
use hho_core::SimplicialMesh;
use serde::Serialize;

pub use config::{CaseChoice, Command, RunConfig, Settings};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("method inapplicable: {0}")]
    Inapplicable(String),
    #[error(transparent)]
    Core(#[from] hho_core::Error),
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
}

impl CliError {
    /// 2 for problems with the input, 1 for everything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) | Self::Inapplicable(_) => 2,
            Self::Core(hho_core::Error::MethodInapplicable(_)) => 2,
            Self::Core(hho_core::Error::Parse { .. } | hho_core::Error::UnknownName { .. }) => 2,
            _ => 1,
        }
    }
}

/// What a run produced.
#[derive(Debug)]
pub struct Outcome {
    /// False when a verification check failed.
    pub passed: bool,
    /// Human-readable summary lines.
    pub lines: Vec<String>,
    pub files: Vec<PathBuf>,
}

fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

fn write(dir: &Path, name: &str, contents: &str, files: &mut Vec<PathBuf>) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|source| CliError::Write { path: dir.to_path_buf(), source })?;
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|source| CliError::Write { path: path.clone(), source })?;
    files.push(path);
    Ok(())
}

fn solve_options(s: &Settings) -> SolveOptions {
    SolveOptions {
        degree: s.degree,
        method: s.method,
        averaging: s.averaging,
        solver: s.solver,
        quadrature: s.quadrature,
    }
}

/// Runs `settings.command`; `mesh` replaces the unit-square meshes.
pub fn run(settings: &Settings, mesh: Option<&Path>, out: &Path) -> Result<Outcome, CliError> {
    match settings.command {
        Command::Verify => run_verify(settings, mesh, out),
        Command::Converge => run_converge(settings, mesh, out),
        Command::Solve => run_solve(settings, mesh, out),
    }
}

#[derive(Serialize)]
struct VerifyReport<'a> {
    passed: bool,
    checks: &'a [CheckResult],
}

pub fn run_verify(settings: &Settings, mesh: Option<&Path>, out: &Path) -> Result<Outcome, CliError> {
    let suite = SuiteConfig {
        sizes: settings.sizes.clone(),
        degrees: settings.degrees.clone(),
        averaging: settings.variants.clone(),
        seed: settings.seed,
        random_fields: settings.random_fields,
    };
    let checks = match mesh {
        None => run_suite(&suite)?,
        Some(path) => match SimplicialMesh::read(path) {
            Ok(m) => run_on_mesh(&m, "mesh", &suite)?,
            Err(e) => vec![CheckResult {
                name: format!("mesh invariants ({e})"),
                measured: f64::INFINITY,
                tolerance: 0.0,
                bound: Bound::Upper,
                passed: false,
            }],
        },
    };
    let passed = checks.iter().all(|c| c.passed);
    let mut lines: Vec<String> = checks.iter().map(|c| c.to_string()).collect();
    let failed = checks.iter().filter(|c| !c.passed).count();
    lines.push(format!("{} checks, {failed} failed", checks.len()));
    let mut files = Vec::new();
    let json = serde_json::to_string_pretty(&VerifyReport { passed, checks: &checks }).expect("report serializes");
    let stem = settings.output.clone().unwrap_or_else(|| "verify".into());
    write(out, &format!("{stem}.json"), &(json + "\n"), &mut files)?;
    Ok(Outcome { passed, lines, files })
}

fn meshes(settings: &Settings, mesh: Option<&Path>) -> Result<Vec<SimplicialMesh>, CliError> {
    match mesh {
        None => Ok(hho_core::analysis::unit_square_levels(&settings.levels)?),
        Some(path) => {
            let mut out = vec![SimplicialMesh::read(path)?];
            for _ in 0..settings.refinements {
                let next = out.last().expect("nonempty").refine_red()?;
                out.push(next);
            }
            Ok(out)
        }
    }
}

fn default_stem(settings: &Settings) -> String {
    format!("{}-{}-p{}-{}-{}", settings.command, settings.case, settings.degree, settings.method, settings.averaging)
}

pub fn run_converge(settings: &Settings, mesh: Option<&Path>, out: &Path) -> Result<Outcome, CliError> {
    let CaseChoice::Builtin(kind) = settings.case else {
        return Err(CliError::Config("field `case`: the zero load has no error to converge".into()));
    };
    let meshes = meshes(settings, mesh)?;
    if meshes.len() < 2 {
        return Err(CliError::Config("a convergence study needs at least two levels".into()));
    }
    let report = converge(kind, &meshes, &solve_options(settings))?;
    let stem = settings.output.clone().unwrap_or_else(|| default_stem(settings));
    let mut files = Vec::new();
    write(out, &format!("{stem}.csv"), &report.to_csv(), &mut files)?;
    write(out, &format!("{stem}.json"), &(report.to_json() + "\n"), &mut files)?;
    let columns: [(&str, fn(&LevelRow) -> f64); 5] = [
        ("e_H1", |r| r.e_h1),
        ("e_stab", |r| r.e_stab),
        ("e_L2", |r| r.e_l2),
        ("e_super", |r| r.e_super),
        ("best_H1", |r| r.best_h1),
    ];
    for (name, column) in columns {
        write(out, &format!("{stem}-{name}.dat"), &report.plot_data(column), &mut files)?;
    }
    Ok(Outcome { passed: true, lines: summary(&report), files })
}

fn summary(report: &ConvergenceReport) -> Vec<String> {
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.3}"));
    let mut lines = vec![format!(
        "{} p={} {} ({} averaging)",
        report.case, report.degree, report.method, report.averaging
    )];
    lines.push(format!(
        "{:>5} {:>10} {:>10} {:>10} {:>10} {:>10} {:>7} {:>7} {:>7}",
        "level", "h", "energy", "L2", "super", "best", "ratio", "eoc_E", "eoc_L2"
    ));
    for r in &report.rows {
        lines.push(format!(
            "{:>5} {:>10.3e} {:>10.3e} {:>10.3e} {:>10.3e} {:>10.3e} {:>7.3} {:>7} {:>7}",
            r.level,
            r.h,
            r.energy(),
            r.e_l2,
            r.e_super,
            r.best_h1,
            r.ratio,
            opt(r.eoc_h1),
            opt(r.eoc_l2)
        ));
    }
    lines
}

/// Points `Σ λ_i v_i` with `λ` on the lattice of spacing `1/s` of cell `k`.
fn lattice(mesh: &SimplicialMesh, k: usize, s: usize) -> impl Iterator<Item = [f64; 2]> + '_ {
    (0..=s).flat_map(move |i| {
        (0..=s - i).map(move |j| {
            let (a, b) = (i as f64 / s as f64, j as f64 / s as f64);
            mesh.map_to_cell(k, &[1.0 - a - b, a, b])
        })
    })
}

pub fn run_solve(settings: &Settings, mesh: Option<&Path>, out: &Path) -> Result<Outcome, CliError> {
    let mesh = match mesh {
        Some(path) => SimplicialMesh::read(path)?,
        None => SimplicialMesh::unit_square(*settings.levels.last().expect("validated"))?,
    };
    let case = match settings.case {
        CaseChoice::Builtin(kind) => Some(ManufacturedCase::new(kind, &mesh, settings.degree)?),
        CaseChoice::Zero => None,
    };
    let load = case.as_ref().map_or_else(LoadFunctional::zero, |c| c.load.clone());
    let ops = LocalOperators::with_quadrature(&mesh, settings.degree, settings.quadrature)?;
    let sol = solve_load(&ops, &load, &solve_options(settings))?;
    let r = ops.reconstruct(&sol);
    let mut csv = String::from("x,y,value\n");
    let mut max_err: f64 = 0.0;
    for k in 0..mesh.n_cells() {
        for x in lattice(&mesh, k, settings.samples) {
            let v = r.eval(&mesh, k, x);
            if let Some(c) = &case {
                max_err = max_err.max((v - c.u.eval(k, x)).abs());
            }
            csv.push_str(&format!("{},{},{}\n", fmt17(x[0]), fmt17(x[1]), fmt17(v)));
        }
    }
    let stem = settings.output.clone().unwrap_or_else(|| default_stem(settings));
    let mut files = Vec::new();
    write(out, &format!("{stem}.csv"), &csv, &mut files)?;
    let mut lines = vec![format!(
        "{} cells, {} unknowns, {} samples",
        mesh.n_cells(),
        ops.dofs().n_dofs(),
        csv.lines().count() - 1
    )];
    if case.is_some() {
        lines.push(format!("max |RU - u| at the samples: {max_err:.3e}"));
    }
    Ok(Outcome { passed: true, lines, files })
}
