mod commands;
mod config;
mod output;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand};
use couette_core::{GridScheme, NormPair, SimConfig};

use config::{
    load, parse_scheme, GridFlags, ResolventConfig, ResolventFlags, SemigroupConfig, SemigroupFlags, SimFlags,
    SweepConfig, SweepFlags, VerifyConfig,
};

/// Resolvent, semigroup and nonlinear stability runs for the Couette vortex.
#[derive(Parser, Debug)]
#[command(name = "couette", version)]
struct Cli {
    /// Directory for result files.
    #[arg(long, global = true, env = "COUETTE_OUT_DIR", default_value = "couette-out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Pseudospectral bound of L_k over one B or a list.
    Resolvent(ResolventArgs),
    /// Linear propagation: Gearhart-Pruess check and operator-norm decay.
    Semigroup(SemigroupArgs),
    /// Nonlinear run from ring initial data.
    Simulate(SimulateArgs),
    /// Amplitude thresholds over a list of B.
    Sweep(SweepArgs),
    /// Audit battery; exits nonzero if any audit fails.
    Verify(VerifyArgs),
}

#[derive(Args, Debug)]
struct GridArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    r_max: Option<f64>,
    /// uniform or stretched
    #[arg(long, value_parser = parse_scheme)]
    scheme: Option<GridScheme>,
}

impl GridArgs {
    fn flags(&self) -> GridFlags {
        GridFlags { n: self.n, r_max: self.r_max, scheme: self.scheme }
    }
}

#[derive(Args, Debug)]
struct ResolventArgs {
    /// JSON config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    k: Option<i32>,
    #[arg(long = "B", visible_alias = "b", required_unless_present_any = ["b_list", "config"], conflicts_with = "b_list")]
    b: Option<f64>,
    /// Comma-separated values of B.
    #[arg(long = "B-list", visible_alias = "b-list", value_delimiter = ',')]
    b_list: Option<Vec<f64>>,
    /// Fit log psi against log B over the list.
    #[arg(long)]
    fit: bool,
    #[command(flatten)]
    grid: GridArgs,
    /// l2, x, hm1 or x-hm1
    #[arg(long)]
    pair: Option<NormPair>,
    /// Coarse scan points per sign.
    #[arg(long)]
    points: Option<usize>,
}

#[derive(Args, Debug)]
struct SemigroupArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    k: Option<i32>,
    #[arg(long = "B", visible_alias = "b", allow_hyphen_values = true)]
    b: Option<f64>,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    tau_end: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Args, Debug)]
struct SimArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    r_max: Option<f64>,
    #[arg(long = "B", visible_alias = "b", allow_hyphen_values = true)]
    b: Option<f64>,
    #[arg(long)]
    k_max: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
    /// Defaults to a multiple of the linear decay time.
    #[arg(long)]
    tau_end: Option<f64>,
    /// Store every n-th step.
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    amplitude: Option<f64>,
    /// Ring radius.
    #[arg(long)]
    r_c: Option<f64>,
    /// Comma-separated positive harmonics to seed.
    #[arg(long, value_delimiter = ',')]
    harmonics: Option<Vec<i32>>,
    #[arg(long)]
    energy_c: Option<f64>,
}

impl SimArgs {
    fn flags(&self) -> SimFlags {
        SimFlags {
            n: self.n,
            r_max: self.r_max,
            b: self.b,
            k_max: self.k_max,
            dt: self.dt,
            tau_end: self.tau_end,
            stride: self.stride,
            amplitude: self.amplitude,
            r_c: self.r_c,
            harmonics: self.harmonics.clone(),
            energy_c: self.energy_c,
        }
    }
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    sim: SimArgs,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated values of B.
    #[arg(long = "B-list", visible_alias = "b-list", value_delimiter = ',')]
    b_list: Option<Vec<f64>>,
    /// Fixed amplitudes; without them each B gets a bracketing search.
    #[arg(long, value_delimiter = ',')]
    amplitudes: Option<Vec<f64>>,
    #[arg(long)]
    start: Option<f64>,
    #[arg(long)]
    grow: Option<f64>,
    #[arg(long)]
    cap: Option<f64>,
    #[arg(long)]
    bisections: Option<usize>,
    #[command(flatten)]
    sim: SimArgs,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Coarse grid and fewer samples.
    #[arg(long)]
    quick: bool,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

fn run(cli: Cli) -> Result<ExitCode> {
    let out = cli.out_dir.as_path();
    match cli.command {
        Command::Resolvent(a) => {
            let flags = ResolventFlags {
                k: a.k,
                b: a.b,
                b_list: a.b_list,
                fit: a.fit,
                grid: a.grid.flags(),
                pair: a.pair,
                points: a.points,
            };
            let cfg = load::<ResolventConfig>(a.config.as_deref())?.resolve(flags)?;
            if cfg.bs().is_empty() {
                Cli::command().error(ErrorKind::MissingRequiredArgument, "one of --B or --B-list is required").exit();
            }
            commands::resolvent(&cfg, out)?;
        }
        Command::Semigroup(a) => {
            let flags = SemigroupFlags {
                k: a.k,
                b: a.b,
                grid: a.grid.flags(),
                samples: a.samples,
                seed: a.seed,
                tau_end: a.tau_end,
                dt: a.dt,
                tol: a.tol,
            };
            let cfg = load::<SemigroupConfig>(a.config.as_deref())?.resolve(flags)?;
            commands::semigroup(&cfg, out)?;
        }
        Command::Simulate(a) => {
            let mut cfg = load::<SimConfig>(a.config.as_deref())?;
            a.sim.flags().apply(&mut cfg);
            config::check_sim(&cfg)?;
            commands::simulate_cmd(&cfg, out)?;
        }
        Command::Sweep(a) => {
            let flags = SweepFlags {
                sim: a.sim.flags(),
                b_list: a.b_list,
                amplitudes: a.amplitudes,
                start: a.start,
                grow: a.grow,
                cap: a.cap,
                bisections: a.bisections,
            };
            let cfg = load::<SweepConfig>(a.config.as_deref())?.resolve(flags)?;
            commands::sweep(&cfg, out)?;
        }
        Command::Verify(a) => {
            let mut cfg = match (&a.config, a.quick) {
                (Some(p), _) => load::<VerifyConfig>(Some(p))?,
                (None, true) => VerifyConfig::quick(),
                (None, false) => VerifyConfig::default(),
            };
            if a.quick && a.config.is_some() {
                cfg = VerifyConfig { quick: true, n: 256, samples: cfg.samples.min(10), ..cfg };
            }
            if let Some(n) = a.n {
                cfg.n = n;
            }
            if let Some(s) = a.seed {
                cfg.seed = s;
            }
            if !verify::verify(&cfg, out)? {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
