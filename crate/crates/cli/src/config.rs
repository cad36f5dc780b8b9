//! JSON run configuration.
//!
//! Every field is optional; see [`RunConfig`] for defaults. Unknown fields are
//! rejected so typos surface as errors instead of silently using a default.

use std::path::Path;

use hho_core::analysis::CaseKind;
use hho_core::polyquad::QuadPolicy;
use hho_core::smoothing::Averaging;
use hho_core::system::{Method, Solver};
use serde::Deserialize;

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Verify,
    Converge,
    Solve,
}

impl std::fmt::Display for Command {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Verify => "verify",
            Self::Converge => "converge",
            Self::Solve => "solve",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// `cholesky` or `cg`.
    pub kind: String,
    /// Relative residual tolerance of `cg`.
    pub tolerance: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { kind: "cholesky".into(), tolerance: 1e-12 }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// If present, must match the subcommand.
    pub command: Option<Command>,
    /// A built-in case name, or `zero` for the zero load.
    pub case: String,
    pub degree: usize,
    /// Unit-square subdivisions per level; `solve` uses the last one.
    pub levels: Vec<usize>,
    /// Number of red refinements of a mesh file given with `--mesh`.
    pub refinements: usize,
    pub method: String,
    pub averaging: String,
    pub solver: SolverConfig,
    /// Seed of the random fields in `verify`.
    pub seed: u64,
    pub random_fields: usize,
    /// Mesh sizes, degrees and averaging variants covered by `verify`.
    pub sizes: Vec<usize>,
    pub degrees: Vec<usize>,
    pub variants: Vec<String>,
    /// Lattice subdivisions per cell in the `solve` dump.
    pub samples: usize,
    /// File name stem of the outputs; defaults to one derived from the run.
    pub output: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            command: None,
            case: "smooth-sine".into(),
            degree: 1,
            levels: vec![8, 16, 32, 64],
            refinements: 3,
            method: "smoothed".into(),
            averaging: "mean".into(),
            solver: SolverConfig::default(),
            seed: 2024,
            random_fields: 100,
            sizes: vec![2, 4, 8],
            degrees: vec![0, 1, 2],
            variants: vec!["mean".into(), "scott-zhang".into()],
            samples: 3,
            output: None,
        }
    }
}

/// The load of a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CaseChoice {
    Builtin(CaseKind),
    Zero,
}

impl std::fmt::Display for CaseChoice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Builtin(k) => k.fmt(f),
            Self::Zero => f.write_str("zero"),
        }
    }
}

/// A checked configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct Settings {
    pub command: Command,
    pub case: CaseChoice,
    pub degree: usize,
    pub levels: Vec<usize>,
    pub refinements: usize,
    pub method: Method,
    pub averaging: Averaging,
    pub solver: Solver,
    pub quadrature: QuadPolicy,
    pub seed: u64,
    pub random_fields: usize,
    pub sizes: Vec<usize>,
    pub degrees: Vec<usize>,
    pub variants: Vec<Averaging>,
    pub samples: usize,
    pub output: Option<String>,
}

fn field_error(field: &str, message: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("field `{field}`: {message}"))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Checks the configuration for `command`; `quad_extra` overrides the load quadrature.
    pub fn validate(&self, command: Command, quad_extra: Option<usize>) -> Result<Settings, CliError> {
        if let Some(c) = self.command {
            if c != command {
                return Err(field_error("command", format!("`{c}` does not match the subcommand `{command}`")));
            }
        }
        let case = match self.case.as_str() {
            "zero" => CaseChoice::Zero,
            name => CaseChoice::Builtin(name.parse().map_err(|e| field_error("case", e))?),
        };
        let check_degree = |field: &str, p: usize| {
            if p > hho_core::MAX_DEGREE {
                Err(field_error(field, format!("degree {p} exceeds the maximum {}", hho_core::MAX_DEGREE)))
            } else {
                Ok(())
            }
        };
        check_degree("degree", self.degree)?;
        for &p in &self.degrees {
            check_degree("degrees", p)?;
        }
        let method: Method = self.method.parse().map_err(|e| field_error("method", e))?;
        let averaging: Averaging = self.averaging.parse().map_err(|e| field_error("averaging", e))?;
        let variants = self
            .variants
            .iter()
            .map(|v| v.parse().map_err(|e| field_error("variants", e)))
            .collect::<Result<Vec<Averaging>, _>>()?;
        let solver = match self.solver.kind.as_str() {
            "cholesky" => Solver::Cholesky,
            "cg" => {
                if !(self.solver.tolerance > 0.0) {
                    return Err(field_error("solver.tolerance", "must be positive"));
                }
                Solver::ConjugateGradient { tolerance: self.solver.tolerance }
            }
            other => return Err(field_error("solver.kind", format!("unknown solver `{other}` (cholesky, cg)"))),
        };
        if self.levels.contains(&0) {
            return Err(field_error("levels", "subdivisions must be positive"));
        }
        if self.sizes.contains(&0) {
            return Err(field_error("sizes", "subdivisions must be positive"));
        }
        match command {
            Command::Converge if self.levels.len() < 2 => {
                return Err(field_error("levels", "a convergence study needs at least two levels"))
            }
            Command::Converge if case == CaseChoice::Zero => {
                return Err(field_error("case", "the zero load has no error to converge"))
            }
            Command::Solve if self.levels.is_empty() => return Err(field_error("levels", "no mesh size given")),
            _ => {}
        }
        if self.samples == 0 {
            return Err(field_error("samples", "must be positive"));
        }
        if method == Method::Classical && matches!(case, CaseChoice::Builtin(CaseKind::PolyConsistency | CaseKind::KinkAligned))
        {
            return Err(CliError::Inapplicable(format!(
                "the classical method needs an L² load, but case `{}` is given as g = ∇u",
                self.case
            )));
        }
        Ok(Settings {
            command,
            case,
            degree: self.degree,
            levels: self.levels.clone(),
            refinements: self.refinements,
            method,
            averaging,
            solver,
            quadrature: quad_extra.map(QuadPolicy::with_extra).unwrap_or_default(),
            seed: self.seed,
            random_fields: self.random_fields,
            sizes: self.sizes.clone(),
            degrees: self.degrees.clone(),
            variants,
            samples: self.samples,
            output: self.output.clone(),
        })
    }
}
