//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage error (bad flags, missing input files),
//! 2 data error (malformed files, failed simulations, empty results).

use crate::analysis::{self, write_spill_report};
use crate::containers::{default_specs, load_container_specs, ContainerSpec};
use crate::exec::{with_workers, Execution};
use crate::fluidsim::{
    simulate_pour_observed, write_dump_rows, PourScene, SolverConfig, DUMP_HEADER,
};
use crate::kinematics::DEFAULT_SAMPLE_DT;
use crate::selector::{cost_map, select_best, zero_spill_threshold, PourQuery};
use crate::sweep::{
    build_grid, load_database, run_sweep, write_database, GridSpec, PourDatabase, SweepSettings,
};
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

/// Environment variable naming the container spec file.
pub const SPECS_ENV: &str = "POURPLAN_SPECS";

#[derive(Debug, Parser)]
#[command(
    name = "pourplan",
    version,
    about = "Plan pours from a database of simulated pours"
)]
pub struct Cli {
    /// Container spec file (defaults to the bundled specs)
    #[arg(long, global = true, env = SPECS_ENV, value_name = "PATH")]
    pub specs: Option<PathBuf>,
    /// More log output on stderr (repeat for more)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one pour and print its outcome
    Simulate(SimulateArgs),
    /// Simulate a parameter grid and write the pour database
    Sweep(SweepArgs),
    /// Pick the cheapest pour for a start and goal volume
    Query(QueryArgs),
    /// Minimum cost over a grid of start and goal volumes
    CostMap(CostMapArgs),
    /// Spill table, or metrics against measured pours
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SolverArgs {
    /// Liquid volume per particle, mL
    #[arg(long, default_value_t = 1.0, value_name = "ML")]
    pub particle_volume: f64,
    /// Solver substep, s
    #[arg(long, default_value_t = 0.002, value_name = "S")]
    pub dt: f64,
    /// Standing container that receives the pour
    #[arg(long, default_value = "flask", value_name = "ID")]
    pub receiver: String,
}

impl SolverArgs {
    fn settings(&self) -> SweepSettings {
        let mut s = SweepSettings {
            receiver: self.receiver.clone(),
            ..SweepSettings::default()
        };
        s.solver.particle_volume = self.particle_volume;
        s.solver.dt = self.dt;
        s
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Pouring container id
    #[arg(long, value_name = "ID")]
    pub container: String,
    /// Start volume, mL
    #[arg(long, value_name = "ML")]
    pub v_start: f64,
    /// Stop angle, degrees (0 keeps the container upright)
    #[arg(long, value_name = "DEG")]
    pub theta_stop: f64,
    /// Hold time at the stop angle, s
    #[arg(long, default_value_t = 1.0, value_name = "S")]
    pub t_stop: f64,
    /// Rotation speed, deg/s
    #[arg(long, default_value_t = crate::sweep::DEFAULT_OMEGA_DEG_S, value_name = "DEG_S")]
    pub omega: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Threads for the solver
    #[arg(long, default_value_t = 1, value_name = "N")]
    pub workers: usize,
    /// Write particle positions to this CSV
    #[arg(long, value_name = "PATH")]
    pub dump: Option<PathBuf>,
    /// Steps between dumped frames
    #[arg(long, default_value_t = 25, value_name = "STEPS")]
    pub dump_every: u64,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Desk,
    Full,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Grid to simulate
    #[arg(long, value_enum, default_value = "desk")]
    pub preset: Preset,
    /// Database seed; per-scene seeds derive from it
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Scenes simulated at once (defaults to the number of cores)
    #[arg(long, value_name = "N")]
    pub workers: Option<usize>,
    /// Rotation speed, deg/s
    #[arg(long, value_name = "DEG_S")]
    pub omega: Option<f64>,
    /// Database file to write (stdout if omitted)
    #[arg(long, short, value_name = "PATH")]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    /// Pour database
    #[arg(long, value_name = "PATH")]
    pub db: PathBuf,
    /// Pouring container id
    #[arg(long, value_name = "ID")]
    pub container: String,
    /// Measured start volume, mL
    #[arg(long, value_name = "ML")]
    pub start: f64,
    /// Volume to pour, mL
    #[arg(long, value_name = "ML")]
    pub goal: f64,
    /// Where to write the grip trajectory
    #[arg(long, default_value = "trajectory.csv", value_name = "PATH")]
    pub trajectory: PathBuf,
    /// Trajectory sample spacing, s
    #[arg(long, default_value_t = DEFAULT_SAMPLE_DT, value_name = "S")]
    pub sample_dt: f64,
}

#[derive(Debug, Args)]
pub struct CostMapArgs {
    /// Pour database
    #[arg(long, value_name = "PATH")]
    pub db: PathBuf,
    /// Pouring container id
    #[arg(long, value_name = "ID")]
    pub container: String,
    /// Smallest start volume, mL
    #[arg(long, default_value_t = 0.0, value_name = "ML")]
    pub start_min: f64,
    /// Largest start volume, mL (defaults to the largest in the database)
    #[arg(long, value_name = "ML")]
    pub start_max: Option<f64>,
    /// Grid step for start and goal, mL
    #[arg(long, default_value_t = 1.0, value_name = "ML")]
    pub step: f64,
    /// Output CSV (stdout if omitted)
    #[arg(long, short, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Pour database
    #[arg(long, value_name = "PATH")]
    pub db: PathBuf,
    /// Only this container
    #[arg(long, value_name = "ID")]
    pub container: Option<String>,
    /// Measured pours to compare against
    #[arg(long, value_name = "PATH")]
    pub real: Option<PathBuf>,
    /// Output CSV (stdout if omitted)
    #[arg(long, short, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) => f.write_str(m),
        }
    }
}

fn data(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

/// Parses `args` (program name first), runs the command and returns the
/// exit code. Diagnostics go to stderr.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn load_specs(path: Option<&Path>) -> Result<BTreeMap<String, ContainerSpec>, CliError> {
    match path {
        None => Ok(default_specs()),
        Some(p) => {
            require_file(p)?;
            load_container_specs(p).map_err(data)
        }
    }
}

fn require_file(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(format!("no such file: {}", path.display())))
    }
}

fn require_parent(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => Err(usage(format!(
            "output directory does not exist: {}",
            dir.display()
        ))),
        _ => Ok(()),
    }
}

fn spec<'a>(
    specs: &'a BTreeMap<String, ContainerSpec>,
    id: &str,
) -> Result<&'a ContainerSpec, CliError> {
    specs.get(id).ok_or_else(|| {
        let known: Vec<&str> = specs.keys().map(String::as_str).collect();
        usage(format!(
            "unknown container '{id}' (known: {})",
            known.join(", ")
        ))
    })
}

/// Writes through `f` to `path`, or to stdout.
fn with_output(
    path: Option<&Path>,
    f: impl FnOnce(&mut dyn Write) -> io::Result<()>,
) -> Result<(), CliError> {
    let result = match path {
        Some(p) => {
            let file = File::create(p).map_err(|e| data(format!("{}: {e}", p.display())))?;
            let mut w = BufWriter::new(file);
            f(&mut w).and_then(|_| w.flush())
        }
        None => {
            let stdout = io::stdout();
            let mut w = stdout.lock();
            f(&mut w).and_then(|_| w.flush())
        }
    };
    result.map_err(|e| data(format!("write failed: {e}")))
}

fn open_db(path: &Path) -> Result<PourDatabase, CliError> {
    require_file(path)?;
    load_database(path).map_err(data)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Simulate(a) => simulate(cli, a),
        Command::Sweep(a) => sweep(cli, a),
        Command::Query(a) => query(cli, a),
        Command::CostMap(a) => cost_map_cmd(a),
        Command::Report(a) => report(a),
    }
}

fn simulate(cli: &Cli, a: &SimulateArgs) -> Result<(), CliError> {
    if let Some(p) = &a.dump {
        require_parent(p)?;
    }
    if a.workers == 0 {
        return Err(usage("--workers must be at least 1"));
    }
    let specs = load_specs(cli.specs.as_deref())?;
    let settings = a.solver.settings();
    let mut config: SolverConfig = settings.solver.clone();
    config.validate().map_err(usage)?;
    let pouring = spec(&specs, &a.container)?;
    let receiver = spec(&specs, &settings.receiver)?;
    let scene = PourScene::new(
        pouring,
        receiver,
        &settings.layout,
        a.v_start,
        a.theta_stop.to_radians(),
        a.t_stop,
        a.omega.to_radians(),
        a.seed,
    )
    .map_err(usage)?;
    if a.workers > 1 {
        config.execution = Execution::Parallel;
    }

    let mut dump = match &a.dump {
        Some(p) => {
            let f = File::create(p).map_err(|e| data(format!("{}: {e}", p.display())))?;
            let mut w = BufWriter::new(f);
            writeln!(w, "{DUMP_HEADER}").map_err(data)?;
            Some(w)
        }
        None => None,
    };
    let mut dump_error = None;
    let every = if dump.is_some() {
        a.dump_every.max(1)
    } else {
        0
    };
    let outcome = with_workers(a.workers, || {
        simulate_pour_observed(&scene, &config, every, |step, state, classes| {
            if let Some(w) = dump.as_mut() {
                if let Err(e) = write_dump_rows(w, step, state, classes) {
                    dump_error.get_or_insert(e);
                }
            }
        })
    })
    .map_err(data)?;
    if let Some(mut w) = dump {
        if let Some(e) = dump_error {
            return Err(data(format!("particle dump: {e}")));
        }
        w.flush().map_err(data)?;
    }
    if !outcome.valid {
        return Err(data("the simulation became unstable"));
    }
    if !outcome.settled {
        log::warn!("liquid had not come to rest when the settling cap was reached");
    }
    with_output(None, |w| {
        writeln!(
            w,
            "container,v_start_ml,theta_stop_deg,t_stop_s,seed,v_received_ml,v_spill_ml,v_remaining_ml,settled,steps"
        )?;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            a.container,
            outcome.v_start,
            a.theta_stop,
            a.t_stop,
            a.seed,
            outcome.v_received,
            outcome.v_spill,
            outcome.v_remaining,
            outcome.settled,
            outcome.steps
        )
    })
}

fn sweep(cli: &Cli, a: &SweepArgs) -> Result<(), CliError> {
    if let Some(p) = &a.out {
        require_parent(p)?;
    }
    let workers = a
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if workers == 0 {
        return Err(usage("--workers must be at least 1"));
    }
    let specs = load_specs(cli.specs.as_deref())?;
    let mut grid = match a.preset {
        Preset::Desk => GridSpec::desk(),
        Preset::Full => GridSpec::full(),
    };
    if let Some(w) = a.omega {
        grid.omega_deg_s = w;
    }
    let params = build_grid(&grid, a.seed).map_err(usage)?;
    log::info!("simulating {} scenes on {workers} workers", params.len());
    let started = std::time::Instant::now();
    let db = run_sweep(&params, &specs, &a.solver.settings(), workers).map_err(data)?;
    log::info!(
        "{} records in {:.1} s",
        db.records.len(),
        started.elapsed().as_secs_f64()
    );
    with_output(a.out.as_deref(), |w| write_database(&db, w))
}

fn query(cli: &Cli, a: &QueryArgs) -> Result<(), CliError> {
    require_parent(&a.trajectory)?;
    let db = open_db(&a.db)?;
    let specs = load_specs(cli.specs.as_deref())?;
    let q = PourQuery::new(&a.container, a.start, a.goal).map_err(usage)?;
    let sel = select_best(&db, &q).map_err(data)?;
    let p = &sel.record.params;

    let settings = SweepSettings::default();
    let scene = PourScene::new(
        spec(&specs, &p.container)?,
        spec(&specs, &settings.receiver)?,
        &settings.layout,
        p.v_start,
        p.theta_stop(),
        p.t_stop,
        p.omega(),
        p.seed,
    )
    .map_err(data)?;
    let trajectory = scene.trajectory(a.sample_dt).map_err(data)?;
    let file = File::create(&a.trajectory)
        .map_err(|e| data(format!("{}: {e}", a.trajectory.display())))?;
    let mut w = BufWriter::new(file);
    trajectory
        .write_csv(&mut w)
        .and_then(|_| w.flush())
        .map_err(data)?;

    with_output(None, |w| {
        writeln!(
            w,
            "record_index,container,v_start_ml,theta_stop_deg,t_stop_s,v_received_ml,v_spill_ml,cost_ml"
        )?;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            sel.index,
            p.container,
            p.v_start,
            p.theta_stop_deg,
            p.t_stop,
            sel.record.v_received,
            sel.record.v_spill,
            sel.cost
        )
    })
}

fn cost_map_cmd(a: &CostMapArgs) -> Result<(), CliError> {
    if let Some(p) = &a.out {
        require_parent(p)?;
    }
    let db = open_db(&a.db)?;
    let start_max = match a.start_max {
        Some(v) => v,
        None => db
            .for_container(&a.container)
            .map(|(_, r)| r.params.v_start)
            .fold(0.0, f64::max),
    };
    let map = cost_map(&db, &a.container, a.start_min, start_max, a.step).map_err(data)?;
    eprintln!(
        "{} cells, mean cost {:.2} mL, max cost {:.2} mL",
        map.cells.len(),
        map.mean_cost(),
        map.cells.iter().map(|c| c.min_cost).fold(0.0, f64::max)
    );
    with_output(a.out.as_deref(), |w| map.write_csv(w))
}

fn report(a: &ReportArgs) -> Result<(), CliError> {
    if let Some(p) = &a.real {
        require_file(p)?;
    }
    if let Some(p) = &a.out {
        require_parent(p)?;
    }
    let db = open_db(&a.db)?;
    if let Some(real) = &a.real {
        let report = analysis::sim_to_real_report(&db, real).map_err(data)?;
        eprintln!("{}", report.summary());
        return with_output(a.out.as_deref(), |w| report.write_csv(w));
    }
    let rows = analysis::spill_report(&db, a.container.as_deref()).map_err(data)?;
    let containers: std::collections::BTreeSet<&str> =
        rows.iter().map(|r| r.container.as_str()).collect();
    for c in containers {
        let (theta, spill): (Vec<f64>, Vec<f64>) = rows
            .iter()
            .filter(|r| r.container == c)
            .map(|r| (r.theta_stop_deg, r.v_spill))
            .unzip();
        let rho = analysis::spearman(&theta, &spill)
            .map_or_else(|| "n/a".to_string(), |r| format!("{r:.3}"));
        let threshold = zero_spill_threshold(&db, c, 1.0)
            .map_or_else(|| "n/a".to_string(), |t| format!("{t} mL"));
        eprintln!(
            "{c}: {} pours, stop angle/spill rank correlation {rho}, spill-free up to {threshold}",
            theta.len()
        );
    }
    with_output(a.out.as_deref(), |w| write_spill_report(&rows, w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn clap_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn exit_codes() {
        assert_eq!(run_cli(["pourplan", "--help"]), 0);
        assert_eq!(run_cli(["pourplan", "frobnicate"]), 1);
        assert_eq!(run_cli(["pourplan", "query", "--bogus"]), 1);
        assert_eq!(
            run_cli(["pourplan", "report", "--db", "/nonexistent/pours.csv"]),
            1
        );
    }
}
