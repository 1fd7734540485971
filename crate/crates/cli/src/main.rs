//! `dbss`: solve, sweep and simulate bike-sharing network configurations.
//!
//! Exit codes: 0 success, 3 invalid input, 4 fixed point not converged,
//! 5 state space above `--max-states`, 1 anything else.

mod output;
mod sweep;

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use dbss_core::model::DEFAULT_STATE_CAP;
use dbss_core::routing::{default_initial_rates, solve_nodes};
use dbss_core::{
    compute_measures, simulate, Error, FixedPointOptions, IterationTrace, MeasureReport, Normalization,
    ProductFormSolution, RelativeRates, SimConfig, SimEstimates, SystemConfig, Topology,
};

use output::write_atomic;

#[derive(Parser)]
#[command(name = "dbss", version, about = "Stationary analysis of dockless bike-sharing networks")]
struct Cli {
    /// Worker threads for sweep points and node solves; 0 uses every core.
    #[arg(long, global = true, env = "DBSS_WORKERS", default_value_t = 0)]
    workers: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Relative rates, product-form law and measures for one configuration.
    Solve {
        #[command(flatten)]
        io: IoArgs,
        #[command(flatten)]
        solve: SolveOpts,
        #[command(flatten)]
        sim: SimOpts,
        /// Also run the simulator and write its estimates.
        #[arg(long, env = "DBSS_SIMULATE")]
        simulate: bool,
    },
    /// Solve over a parameter grid, one row of sweep.csv per point.
    Sweep {
        #[command(flatten)]
        io: IoArgs,
        #[command(flatten)]
        grid: sweep::GridArgs,
        #[command(flatten)]
        solve: SolveOpts,
        #[command(flatten)]
        sim: SimOpts,
        #[arg(long, env = "DBSS_SIMULATE")]
        simulate: bool,
    },
    /// Simulation only.
    Simulate {
        #[command(flatten)]
        io: IoArgs,
        #[command(flatten)]
        sim: SimOpts,
    },
}

#[derive(Args, Clone)]
struct IoArgs {
    /// TOML configuration file.
    #[arg(long, env = "DBSS_CONFIG")]
    config: PathBuf,
    /// Output directory, created when missing.
    #[arg(long, env = "DBSS_OUT", default_value = "out")]
    out: PathBuf,
}

#[derive(Args, Clone, Debug)]
pub struct SolveOpts {
    /// Refuse to enumerate more network states than this.
    #[arg(long, env = "DBSS_MAX_STATES", default_value_t = DEFAULT_STATE_CAP)]
    max_states: u128,
    /// Fixed-point residual target.
    #[arg(long, env = "DBSS_EPSILON", default_value_t = 1e-10)]
    epsilon: f64,
    #[arg(long, env = "DBSS_MAX_ITERATIONS", default_value_t = 10_000)]
    max_iterations: usize,
    /// Normalization constant and marginals by convolution over nodes,
    /// without enumerating the state space. No state cap applies.
    #[arg(long, env = "DBSS_NODE_MARGINAL_ONLY")]
    node_marginal_only: bool,
    /// How the relative rates are scaled after each iteration.
    #[arg(long, env = "DBSS_ANCHOR", value_enum, default_value_t = Anchor::TotalMass)]
    anchor: Anchor,
}

#[derive(Args, Clone, Debug)]
pub struct SimOpts {
    #[arg(long, env = "DBSS_HORIZON", default_value_t = 1e5)]
    horizon: f64,
    #[arg(long, env = "DBSS_WARMUP", default_value_t = 1e3)]
    warmup: f64,
    #[arg(long, env = "DBSS_SEED", default_value_t = 1)]
    seed: u64,
    #[arg(long, env = "DBSS_REPLICATIONS", default_value_t = 20)]
    replications: usize,
}

impl SimOpts {
    fn config(&self) -> SimConfig {
        SimConfig {
            horizon: self.horizon,
            warmup: self.warmup,
            seed: self.seed,
            replications: self.replications,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Anchor {
    /// Relative rates sum to the number of nodes.
    TotalMass,
    /// The first region's rate is 1.
    FirstRegion,
}

/// Bad command-line input that clap cannot catch.
#[derive(Debug)]
pub struct InputError(pub String);

impl fmt::Display for InputError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

pub struct Solved {
    pub topology: Topology,
    pub rates: RelativeRates,
    pub trace: IterationTrace,
    pub solution: ProductFormSolution,
    pub measures: MeasureReport,
}

pub fn load_config(path: &Path) -> anyhow::Result<SystemConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| InputError(format!("cannot read {}: {e}", path.display())))?;
    let config = SystemConfig::from_toml_str(&text)?;
    config.ensure_valid(&Topology::from_config(&config))?;
    Ok(config)
}

pub fn solve_config(config: &SystemConfig, opts: &SolveOpts) -> dbss_core::Result<Solved> {
    let topology = Topology::from_config(config);
    config.ensure_valid(&topology)?;
    let options = FixedPointOptions {
        epsilon: opts.epsilon,
        max_iterations: opts.max_iterations,
        normalization: match opts.anchor {
            Anchor::TotalMass => Normalization::TotalMass,
            Anchor::FirstRegion => Normalization::FirstRegion,
        },
        ..FixedPointOptions::default()
    };
    let init = default_initial_rates(config, &topology);
    let (rates, trace) = dbss_core::solve_relative_rates(config, &topology, &init, &options)?;
    let nodes = solve_nodes(config, &topology, rates.values())?;
    let solution = if opts.node_marginal_only {
        ProductFormSolution::by_convolution(config, &topology, &rates, nodes)?
    } else {
        ProductFormSolution::new(config, &topology, &rates, nodes, opts.max_states)?
    };
    let measures = compute_measures(&solution, config);
    Ok(Solved { topology, rates, trace, solution, measures })
}

pub fn write_solved(dir: &Path, solved: &Solved) -> std::io::Result<()> {
    write_atomic(&dir.join("relative_rates.csv"), |w| solved.rates.write_csv(w))?;
    write_atomic(&dir.join("trace.csv"), |w| solved.trace.write_csv(w))?;
    write_atomic(&dir.join("measures.csv"), |w| solved.measures.write_csv(w))?;
    write_atomic(&dir.join("marginals.csv"), |w| solved.solution.write_marginals_csv(w))
}

pub fn write_simulation(dir: &Path, topology: &Topology, est: &SimEstimates) -> std::io::Result<()> {
    write_atomic(&dir.join("sim_measures.csv"), |w| est.write_measures_csv(w))?;
    write_atomic(&dir.join("sim_histograms.csv"), |w| est.write_histograms_csv(topology, w))?;
    write_atomic(&dir.join("sim_summary.csv"), |w| {
        writeln!(w, "replication,events,arrivals,lost_users,conservation_violations,illegal_states")?;
        for (i, r) in est.replications.iter().enumerate() {
            writeln!(
                w,
                "{i},{},{},{},{},{}",
                r.events, r.arrivals, r.lost_users, r.conservation_violations, r.illegal_states
            )?;
        }
        Ok(())
    })
}

fn run_solve(io: &IoArgs, opts: &SolveOpts, sim: Option<&SimOpts>) -> anyhow::Result<()> {
    let config = load_config(&io.config)?;
    let sim = sim.map(|s| s.config());
    if let Some(s) = &sim {
        s.validate()?;
    }
    let start = Instant::now();
    let solved = match solve_config(&config, opts) {
        Ok(s) => s,
        Err(Error::NotConverged { iterations, residual, trace }) => {
            // Keep the trace for diagnosis; nothing else is written.
            fs::create_dir_all(&io.out)?;
            write_atomic(&io.out.join("trace.csv"), |w| trace.write_csv(w))?;
            return Err(Error::NotConverged { iterations, residual, trace }.into());
        }
        Err(e @ Error::StateCapExceeded { .. }) => {
            return Err(anyhow::Error::new(e).context("rerun with --node-marginal-only or a larger --max-states"))
        }
        Err(e) => return Err(e.into()),
    };
    log::info!(
        "solved in {:.3}s, {} iterations, residual {:e}",
        start.elapsed().as_secs_f64(),
        solved.trace.records.len(),
        solved.trace.last_residual()
    );
    fs::create_dir_all(&io.out).with_context(|| format!("creating {}", io.out.display()))?;
    write_solved(&io.out, &solved)?;
    if let Some(s) = sim {
        let est = simulate(&config, &solved.topology, &s)?;
        write_simulation(&io.out, &solved.topology, &est)?;
    }
    println!("{}", MeasureReport::CSV_HEADER);
    println!("{}", solved.measures.csv_row());
    Ok(())
}

fn run_simulate(io: &IoArgs, sim: &SimOpts) -> anyhow::Result<()> {
    let config = load_config(&io.config)?;
    let sim = sim.config();
    sim.validate()?;
    let topology = Topology::from_config(&config);
    let est = simulate(&config, &topology, &sim)?;
    fs::create_dir_all(&io.out)?;
    write_simulation(&io.out, &topology, &est)?;
    let mut out = Vec::new();
    est.write_measures_csv(&mut out)?;
    print!("{}", String::from_utf8_lossy(&out));
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.chain().any(|e| e.is::<InputError>()) {
        return 3;
    }
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(Error::InvalidConfig(_) | Error::Parse(_) | Error::InvalidSimConfig(_)) => 3,
        Some(Error::NotConverged { .. }) => 4,
        Some(Error::StateCapExceeded { .. }) => 5,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.workers).build_global() {
        log::warn!("thread pool already set up: {e}");
    }
    let result = match &cli.command {
        Command::Solve { io, solve, sim, simulate } => run_solve(io, solve, simulate.then_some(sim)),
        Command::Sweep { io, grid, solve, sim, simulate } => {
            sweep::run(&io.config, &io.out, grid, solve, simulate.then_some(sim))
        }
        Command::Simulate { io, sim } => run_simulate(io, sim),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
