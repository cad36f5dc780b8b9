use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hho_cli::{run, CliError, Command, RunConfig};

#[derive(Parser)]
#[command(name = "hho", version, about = "HHO Poisson solver: verification suites, convergence studies, solves")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(clap::Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Mesh file replacing the unit-square meshes.
    #[arg(long)]
    mesh: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Sub {
    /// Run the structural identity checks.
    Verify(Common),
    /// Run a convergence study and write CSV, JSON and plot data.
    Converge(Common),
    /// Solve once and dump the reconstruction sampled on each cell.
    Solve(Common),
}

fn quad_extra() -> Result<Option<usize>, CliError> {
    match std::env::var("HHO_QUAD_EXTRA") {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Config(format!("HHO_QUAD_EXTRA must be a non-negative integer, got `{v}`"))),
        Err(_) => Ok(None),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = match cli.command {
        Sub::Verify(a) => (Command::Verify, a),
        Sub::Converge(a) => (Command::Converge, a),
        Sub::Solve(a) => (Command::Solve, a),
    };
    if let Some(n) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("warning: could not set thread count: {e}");
        }
    }
    let result = quad_extra()
        .and_then(|extra| RunConfig::read(&args.config)?.validate(command, extra))
        .and_then(|settings| run(&settings, args.mesh.as_deref(), &args.out));
    match result {
        Ok(outcome) => {
            for line in &outcome.lines {
                println!("{line}");
            }
            for f in &outcome.files {
                println!("wrote {}", f.display());
            }
            if outcome.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
