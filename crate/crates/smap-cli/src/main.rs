//! `smap`: experiment runner over `smap-core`.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use smap_core::SmapError;

use config::{resolve, Law, Suite, A0};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] SmapError),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) => e.exit_code() as u8,
            CliError::Config(_) | CliError::Io(_) => 2,
        }
    }
}

#[derive(Parser)]
#[command(name = "smap", version, about = "Profiles, modulation ODEs, radial evolution and inequality checks near the harmonic map Q")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Serialize)]
struct Common {
    /// JSON document with configuration keys; flags given here override it.
    #[arg(long, global = true)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = ".", global = true)]
    #[serde(skip)]
    out: PathBuf,
}

macro_rules! flags {
    ($(#[$m:meta])* $name:ident { $($(#[$fm:meta])* $field:ident : $ty:ty),* $(,)? }) => {
        $(#[$m])*
        #[derive(Args, Serialize)]
        struct $name {
            #[command(flatten)]
            #[serde(skip)]
            common: Common,
            $(
                $(#[$fm])*
                #[arg(long)]
                #[serde(skip_serializing_if = "Option::is_none")]
                $field: Option<$ty>,
            )*
        }
    };
}

flags!(ProfilesArgs {
    /// Concentration speed `b`.
    b: f64,
    /// Phase speed `a`.
    a: f64,
    b_star: f64,
    grid_n: usize,
    y_min: f64,
    y_max: f64,
    /// Localization scale of `Φ_M`.
    m: f64,
});

flags!(OdeArgs {
    b0: f64,
    a0: f64,
    #[arg(value_enum)]
    law: Law,
    s_end: f64,
    rtol: f64,
    stop_on_escape: bool,
});

flags!(ShootArgs {
    b0: f64,
    #[arg(value_enum)]
    law: Law,
    /// Shooting horizon: stop once `b` has fallen by this factor.
    horizon_b_ratio: f64,
    b_star: f64,
    s_end: f64,
});

flags!(EvolveArgs {
    b0: f64,
    /// A number, or `shoot` for the trapped value.
    a0: A0,
    #[arg(value_enum)]
    law: Law,
    horizon_b_ratio: f64,
    grid_n: usize,
    r_min: f64,
    r_max: f64,
    t_end: f64,
    lambda_min: f64,
    dt_factor: f64,
    extract_every: usize,
    snapshot_every: usize,
});

flags!(DecomposeArgs {
    /// Snapshot CSV written by `evolve`.
    snapshot: PathBuf,
    lambda: f64,
    theta: f64,
    a: f64,
    b: f64,
    guess_lambda: f64,
    guess_theta: f64,
    guess_a: f64,
    guess_b: f64,
    b_max: f64,
    grid_n: usize,
    r_min: f64,
    r_max: f64,
});

flags!(VerifyArgs {
    #[arg(value_enum)]
    suite: Suite,
    seed: u64,
    samples: usize,
    grid_n: usize,
    y_min: f64,
    y_max: f64,
    m: f64,
    coercivity_n: usize,
    b: f64,
    flux_grid_n: usize,
});

#[derive(Subcommand)]
enum Command {
    /// Build the profile set and residual at one (a, b).
    Profiles(ProfilesArgs),
    /// Integrate the modulation ODE from (a₀, b₀).
    Ode(OdeArgs),
    /// Shoot for the trapped a₀ and fit the blow-up law.
    Shoot(ShootArgs),
    /// Evolve synthesized data with the radial solver.
    Evolve(EvolveArgs),
    /// Extract (λ, Θ, a, b) and the radiation from a field.
    Decompose(DecomposeArgs),
    /// Run inequality and identity checks.
    Verify(VerifyArgs),
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("SMAP_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|n| *n > 0).ok_or_else(|| CliError::Config(format!("SMAP_THREADS = {raw:?} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError::Config(e.to_string()))
}

fn run(cli: Cli) -> Result<ExitCode, CliError> {
    configure_threads()?;
    match cli.command {
        Command::Profiles(a) => commands::profiles(&resolve(a.common.config.as_deref(), &a)?, &a.common.out)?,
        Command::Ode(a) => commands::ode(&resolve(a.common.config.as_deref(), &a)?, &a.common.out)?,
        Command::Shoot(a) => commands::shoot(&resolve(a.common.config.as_deref(), &a)?, &a.common.out)?,
        Command::Evolve(a) => commands::evolve(&resolve(a.common.config.as_deref(), &a)?, &a.common.out)?,
        Command::Decompose(a) => commands::decompose(&resolve(a.common.config.as_deref(), &a)?, &a.common.out)?,
        Command::Verify(a) => {
            if !commands::verify(&resolve(a.common.config.as_deref(), &a)?, &a.common.out)? {
                eprintln!("smap: verification failed; see verification_report.json");
                return Ok(ExitCode::from(4));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("smap: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
