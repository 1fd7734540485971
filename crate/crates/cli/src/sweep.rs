use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use clap::Args;
use dbss_core::{simulate, SimConfig, SystemConfig, Topology};
use rayon::prelude::*;

use crate::output::write_atomic;
use crate::{load_config, solve_config, write_simulation, write_solved, InputError, SimOpts, SolveOpts};

/// Parameters accepted by `--sweep`.
const SWEEP_PARAMS: &[&str] = &["alpha", "w", "r", "K", "M", "Z"];

#[derive(Args, Clone, Debug)]
#[group(required = true, multiple = false)]
pub struct GridArgs {
    /// One axis, e.g. `alpha=0.01,0.02,0.05`. Parameters: alpha, w, r, K, M, Z.
    #[arg(long, env = "DBSS_SWEEP")]
    sweep: Option<String>,
    /// Batch-size pairs, e.g. `(1,6);(2,6);(3,6)`. Each Z must be a multiple of M.
    #[arg(long, env = "DBSS_PAIRS")]
    pairs: Option<String>,
}

struct Point {
    /// Values of the grid columns, in header order.
    values: Vec<String>,
    config: SystemConfig,
}

fn parse_axis(spec: &str) -> Result<(String, Vec<String>), InputError> {
    let (name, values) = spec
        .split_once('=')
        .ok_or_else(|| InputError(format!("--sweep expects PARAM=v1,v2,..., got {spec:?}")))?;
    let name = name.trim();
    if !SWEEP_PARAMS.contains(&name) {
        return Err(InputError(format!(
            "cannot sweep {name:?}; choose one of {}",
            SWEEP_PARAMS.join(", ")
        )));
    }
    let values: Vec<String> = values.split(',').map(|v| v.trim().to_string()).collect();
    if values.iter().any(|v| v.is_empty()) {
        return Err(InputError(format!("empty value in --sweep {spec:?}")));
    }
    Ok((name.to_string(), values))
}

fn set_param(config: &mut SystemConfig, name: &str, value: &str) -> Result<(), InputError> {
    fn parse<T: FromStr>(name: &str, value: &str) -> Result<T, InputError> {
        value
            .parse()
            .map_err(|_| InputError(format!("bad value {value:?} for {name}")))
    }
    match name {
        "alpha" => config.alpha = parse(name, value)?,
        "w" => config.w = parse(name, value)?,
        "r" => config.r = parse(name, value)?,
        "K" => config.fleet = parse(name, value)?,
        "M" => config.remove_batch = parse(name, value)?,
        "Z" => config.dispatch_batch = parse(name, value)?,
        _ => unreachable!("checked by parse_axis"),
    }
    Ok(())
}

pub fn parse_pairs(spec: &str) -> Result<Vec<(usize, usize)>, InputError> {
    let bad = || InputError(format!("--pairs expects (M,Z);(M,Z)..., got {spec:?}"));
    let mut out = Vec::new();
    for item in spec.split(';').map(str::trim).filter(|s| !s.is_empty()) {
        let inner = item.strip_prefix('(').and_then(|s| s.strip_suffix(')')).ok_or_else(bad)?;
        let (m, z) = inner.split_once(',').ok_or_else(bad)?;
        let m: usize = m.trim().parse().map_err(|_| bad())?;
        let z: usize = z.trim().parse().map_err(|_| bad())?;
        if m == 0 || !z.is_multiple_of(m) {
            return Err(InputError(format!("pair ({m},{z}): Z must be a positive multiple of M")));
        }
        out.push((m, z));
    }
    if out.is_empty() {
        return Err(bad());
    }
    Ok(out)
}

fn grid(base: &SystemConfig, args: &GridArgs) -> Result<(Vec<String>, Vec<Point>), InputError> {
    if let Some(spec) = &args.sweep {
        let (name, values) = parse_axis(spec)?;
        let mut points = Vec::new();
        for v in values {
            let mut config = base.clone();
            set_param(&mut config, &name, &v)?;
            points.push(Point { values: vec![v], config });
        }
        return Ok((vec![name], points));
    }
    let pairs = parse_pairs(args.pairs.as_deref().unwrap_or_default())?;
    let points = pairs
        .into_iter()
        .map(|(m, z)| {
            let mut config = base.clone();
            config.remove_batch = m;
            config.dispatch_batch = z;
            Point { values: vec![m.to_string(), z.to_string()], config }
        })
        .collect();
    Ok((vec!["M".into(), "Z".into()], points))
}

struct Row {
    values: Vec<String>,
    outcome: Result<Vec<String>, String>,
    seconds: f64,
}

const MEASURE_COLUMNS: &[&str] = &[
    "eta", "xi", "F_A", "gamma1", "gamma2", "E_unusable", "E_usable", "audit_total", "residual", "iterations",
];
const SIM_COLUMNS: &[&str] = &["sim_eta", "sim_eta_se", "sim_xi", "sim_xi_se", "sim_F_A", "sim_F_A_se"];

fn run_point(dir: &Path, point: &Point, solve: &SolveOpts, sim: Option<&SimConfig>) -> anyhow::Result<Vec<String>> {
    let solved = solve_config(&point.config, solve)?;
    fs::create_dir_all(dir)?;
    write_solved(dir, &solved)?;
    let m = &solved.measures;
    let mut cells: Vec<String> = [m.eta, m.xi, m.f_a, m.gamma1, m.gamma2, m.e_unusable, m.e_usable, m.audit.total()]
        .iter()
        .map(|x| format!("{x:.12e}"))
        .collect();
    cells.push(format!("{:.6e}", solved.trace.last_residual()));
    cells.push(solved.trace.records.len().to_string());
    if let Some(sim) = sim {
        let topology = Topology::from_config(&point.config);
        let est = simulate(&point.config, &topology, sim)?;
        write_simulation(dir, &topology, &est)?;
        for e in [est.eta, est.xi, est.f_a] {
            cells.push(format!("{:.12e}", e.mean));
            cells.push(format!("{:.12e}", e.se));
        }
    }
    Ok(cells)
}

pub fn run(config: &Path, out: &Path, args: &GridArgs, solve: &SolveOpts, sim: Option<&SimOpts>) -> anyhow::Result<()> {
    let base = load_config(config)?;
    let (columns, points) = grid(&base, args)?;
    let sim = sim.map(|s| s.config());
    if let Some(s) = &sim {
        s.validate()?;
    }
    fs::create_dir_all(out)?;
    let rows: Vec<Row> = points
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let start = Instant::now();
            let outcome = run_point(&out.join(format!("point_{i:03}")), p, solve, sim.as_ref())
                .map_err(|e| format!("{e:#}"));
            if let Err(e) = &outcome {
                log::warn!("sweep point {i} failed: {e}");
            }
            Row { values: p.values.clone(), outcome, seconds: start.elapsed().as_secs_f64() }
        })
        .collect();

    let mut header: Vec<&str> = vec!["point"];
    header.extend(columns.iter().map(String::as_str));
    header.extend(["status", "error"]);
    header.extend(MEASURE_COLUMNS);
    if sim.is_some() {
        header.extend(SIM_COLUMNS);
    }
    header.push("wall_seconds");
    let width = MEASURE_COLUMNS.len() + if sim.is_some() { SIM_COLUMNS.len() } else { 0 };

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header)?;
    let mut failed = 0;
    for (i, row) in rows.iter().enumerate() {
        let mut rec = vec![i.to_string()];
        rec.extend(row.values.iter().cloned());
        match &row.outcome {
            Ok(cells) => {
                rec.extend(["ok".to_string(), String::new()]);
                rec.extend(cells.iter().cloned());
            }
            Err(e) => {
                failed += 1;
                rec.extend(["failed".to_string(), e.clone()]);
                rec.extend(std::iter::repeat_n(String::new(), width));
            }
        }
        rec.push(format!("{:.3}", row.seconds));
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| anyhow::anyhow!("{e}"))?;
    write_atomic(&out.join("sweep.csv"), |f| f.write_all(&bytes))?;
    eprintln!("{} of {} sweep points solved", rows.len() - failed, rows.len());
    Ok(())
}
