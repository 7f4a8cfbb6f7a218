use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mdelast::elements::Variant;
use mdelast::verify::CaseId;
use mdelast_cli::{cmd_check, cmd_converge, cmd_solve, Outcome, RunOptions};

/// Mixed finite elements for linear elasticity with thin inclusions.
#[derive(Parser)]
#[command(name = "mdelast", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a problem and write VTK files and a summary.
    Solve(Common),
    /// Convergence study of a manufactured solution.
    Converge {
        #[command(flatten)]
        common: Common,
        /// Manufactured case: MMS-1, MMS-2, MMS-3 or affine.
        #[arg(long, default_value = "MMS-2")]
        case: CaseId,
        /// Number of uniformly refined levels (at least 3).
        #[arg(long, default_value_t = 4)]
        levels: usize,
        /// Inclusion aperture of the case.
        #[arg(long, default_value_t = 1e-2)]
        epsilon: f64,
    },
    /// Property checks: space conditions, complex property, conservation, inf-sup.
    Check {
        #[command(flatten)]
        common: Common,
        /// Estimate the inf-sup constant for apertures 1, 1e-2 and 1e-4 instead of over two levels.
        #[arg(long)]
        eps_sweep: bool,
    },
}

#[derive(Args)]
struct Common {
    /// Geometry file (JSON); the shipped default geometry when omitted.
    #[arg(long)]
    geometry: Option<PathBuf>,
    /// Material and load file (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Target mesh size (coarsest level for studies).
    #[arg(long)]
    h: Option<f64>,
    /// Element family: full or reduced.
    #[arg(long)]
    family: Option<Variant>,
    /// Polynomial order k.
    #[arg(long)]
    order: Option<usize>,
    /// Output prefix.
    #[arg(long, default_value = "mdelast")]
    out: PathBuf,
    /// Omit the timestamp line from text outputs.
    #[arg(long)]
    no_timestamp: bool,
}

impl Common {
    fn options(self) -> RunOptions {
        RunOptions {
            geometry: self.geometry,
            config: self.config,
            h: self.h,
            family: self.family,
            order: self.order,
            out: self.out,
            timestamp: !self.no_timestamp,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Solve(c) => cmd_solve(&c.options()),
        Command::Converge {
            common,
            case,
            levels,
            epsilon,
        } => cmd_converge(&common.options(), case, levels, epsilon),
        Command::Check { common, eps_sweep } => cmd_check(&common.options(), eps_sweep),
    };
    match result {
        Ok(out) => report(&out),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn report(out: &Outcome) -> ExitCode {
    for f in &out.files {
        println!("wrote {}", f.display());
    }
    for f in &out.failures {
        eprintln!("FAILED: {f}");
    }
    ExitCode::from(out.exit_code() as u8)
}
