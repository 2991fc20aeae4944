use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dfl_cli::config::Settings;
use dfl_cli::error::CliError;
use dfl_cli::output::write_outputs;
use dfl_cli::scenarios;

/// Fidelity-bound experiments for monitored collective spins.
#[derive(Parser)]
#[command(name = "dfl", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Flat key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed (shorthand for seed=U64).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default out/<scenario>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Trajectory count (shorthand for trajectories=K).
    #[arg(long)]
    trajectories: Option<usize>,
    /// Integrator step (shorthand for dt=X).
    #[arg(long)]
    dt: Option<f64>,
    /// Final time (shorthand for t_final=X).
    #[arg(long = "t-final")]
    t_final: Option<f64>,
    /// Extra key=value overrides, applied last.
    #[arg(value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Analytic bound table over an (N, m_t, gamma) grid.
    Bounds(CommonArgs),
    /// Single-atom steady-state fidelity sweep against every bound.
    QubitSweep(CommonArgs),
    /// Four-atom steady-state sweeps, one table per (m_t, kappa) cell.
    N4Sweep(CommonArgs),
    /// Steady-state fidelity against atom number with rate scaling.
    NScaling(CommonArgs),
    /// Window-averaged photocurrent feedback on a damped qubit.
    MarkovianQubit(CommonArgs),
    /// Undamped transient study from random coherent states.
    GammaZero(CommonArgs),
    /// Classical population SDE run for one parameter point.
    ClassicalBds(CommonArgs),
}

impl Command {
    fn common(&self) -> &CommonArgs {
        match self {
            Command::Bounds(c)
            | Command::QubitSweep(c)
            | Command::N4Sweep(c)
            | Command::NScaling(c)
            | Command::MarkovianQubit(c)
            | Command::GammaZero(c)
            | Command::ClassicalBds(c) => c,
        }
    }

    fn scenario_name(&self) -> &'static str {
        match self {
            Command::Bounds(_) => "bounds",
            Command::QubitSweep(_) => "qubit_sweep",
            Command::N4Sweep(_) => "n4_sweep",
            Command::NScaling(_) => "n_scaling",
            Command::MarkovianQubit(_) => "markovian_qubit",
            Command::GammaZero(_) => "gamma_zero",
            Command::ClassicalBds(_) => "classical_bds",
        }
    }
}

fn init_thread_pool() -> Result<(), CliError> {
    if let Ok(raw) = std::env::var("DFL_THREADS") {
        let n: usize = raw
            .parse()
            .map_err(|_| CliError::Usage(format!("DFL_THREADS = {raw:?} is not an integer")))?;
        if n == 0 {
            return Err(CliError::Usage("DFL_THREADS must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot size the worker pool: {e}")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    init_thread_pool()?;
    let common = cli.command.common();

    let mut settings = Settings::from_sources(common.config.as_deref(), &[])?;
    if let Some(seed) = common.seed {
        settings.set("seed", seed.to_string());
    }
    if let Some(k) = common.trajectories {
        settings.set("trajectories", k.to_string());
    }
    if let Some(dt) = common.dt {
        settings.set("dt", dt.to_string());
    }
    if let Some(t) = common.t_final {
        settings.set("t_final", t.to_string());
    }
    for raw in &common.overrides {
        let (key, value) = raw
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("expected key=value, got {raw:?}")))?;
        settings.set(key.trim(), value.trim().to_string());
    }

    let output = match &cli.command {
        Command::Bounds(_) => scenarios::bounds(&mut settings)?,
        Command::QubitSweep(_) => scenarios::qubit_sweep(&mut settings)?,
        Command::N4Sweep(_) => scenarios::n4_sweep(&mut settings)?,
        Command::NScaling(_) => scenarios::n_scaling(&mut settings)?,
        Command::MarkovianQubit(_) => scenarios::markovian_qubit(&mut settings)?,
        Command::GammaZero(_) => scenarios::gamma_zero(&mut settings)?,
        Command::ClassicalBds(_) => scenarios::classical_bds(&mut settings)?,
    };
    let effective = settings.finish()?;
    let master_seed = effective.get("seed").and_then(|s| s.parse().ok()).unwrap_or(0);

    for warning in &output.warnings {
        eprintln!("warning: {warning}");
    }
    let out_dir = common
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("out").join(cli.command.scenario_name()));
    let written = write_outputs(&out_dir, &output, &effective, master_seed)?;
    for path in &written {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
