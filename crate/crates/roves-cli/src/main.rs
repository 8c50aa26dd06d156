//! `roves` — physics-aware road editing for 3D Gaussian driving scenes.
//!
//! Exit codes: 0 on success, 1 on internal errors (including diverging
//! integration), 2 on bad inputs or config. `ROVES_LOG` sets verbosity.

use clap::{Args, Parser, Subcommand};
use roves_cli::commands::{self, CommandCtx};
use roves_cli::config::Overrides;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "roves", version, about = "Physics-aware road editing pipeline")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Pipeline config JSON; relative paths inside resolve against its directory.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (default: the config's directory).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the Gaussian scale tightening factor.
    #[arg(long)]
    sigma: Option<f64>,
    /// Override the color blend weight.
    #[arg(long)]
    beta: Option<f64>,
    /// Override the lightness shift weight.
    #[arg(long)]
    lambda: Option<f64>,
    /// Override the integration step [s].
    #[arg(long)]
    dt: Option<f64>,
    /// Override the height-field cell size [m].
    #[arg(long)]
    cell_size: Option<f64>,
    /// Override the vehicle preset.
    #[arg(long, value_parser = ["ego", "front"])]
    preset: Option<String>,
}

impl Common {
    fn ctx(&self) -> roves_core::Result<CommandCtx> {
        let overrides = Overrides {
            sigma: self.sigma,
            beta: self.beta,
            lambda: self.lambda,
            dt: self.dt,
            cell_size: self.cell_size,
            preset: self.preset.clone(),
        };
        CommandCtx::new(&self.config, &overrides, self.out.clone())
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Write the deterministic synthetic fixture set.
    Fixtures {
        #[arg(long)]
        out: PathBuf,
    },
    /// Back-project the masked depth map to a metric point cloud.
    Lift {
        #[command(flatten)]
        common: Common,
    },
    /// Lift, optionally color-transfer, initialize primitives, merge.
    Insert {
        #[command(flatten)]
        common: Common,
    },
    /// Color-transfer the lifted cloud against the reference patch.
    Transfer {
        #[command(flatten)]
        common: Common,
    },
    /// Build the signed-residual ground height field of the edited scene.
    Heightfield {
        #[command(flatten)]
        common: Common,
    },
    /// Drive the half-car over the edited road and correct the poses.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Re-apply corrections from a stored simulation CSV.
    CorrectPoses {
        #[command(flatten)]
        common: Common,
    },
    /// Compare two series CSVs or two PNGs and print a JSON report.
    Metrics {
        a: PathBuf,
        b: PathBuf,
        /// Mask for the first image (nonzero = included).
        #[arg(long)]
        mask_a: Option<PathBuf>,
        /// Mask for the second image.
        #[arg(long)]
        mask_b: Option<PathBuf>,
        /// CSV column to compare (default: the last field of each row).
        #[arg(long)]
        column: Option<usize>,
    },
}

fn run(cli: Cli) -> roves_core::Result<String> {
    match cli.cmd {
        Cmd::Fixtures { out } => commands::cmd_fixtures(&out),
        Cmd::Lift { common } => commands::cmd_lift(&common.ctx()?),
        Cmd::Insert { common } => commands::cmd_insert(&common.ctx()?),
        Cmd::Transfer { common } => commands::cmd_transfer(&common.ctx()?),
        Cmd::Heightfield { common } => commands::cmd_heightfield(&common.ctx()?),
        Cmd::Simulate { common } => commands::cmd_simulate(&common.ctx()?),
        Cmd::CorrectPoses { common } => commands::cmd_correct_poses(&common.ctx()?),
        Cmd::Metrics { a, b, mask_a, mask_b, column } => {
            commands::cmd_metrics(&a, &b, mask_a.as_deref(), mask_b.as_deref(), column)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ROVES_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(output) => {
            print!("{output}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                roves_core::Error::Diverged { .. } => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}
