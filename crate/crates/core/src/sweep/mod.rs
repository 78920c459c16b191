//! Parameter grids over (container, start volume, stop angle, stop time),
//! the sweep runner and the pour database.

mod db;

pub use db::{load_database, read_database, save_database, write_database, CSV_HEADER};

use crate::containers::{specs_hash, ContainerSpec};
use crate::exec::{with_workers, Execution};
use crate::fluidsim::{simulate_pour, PourScene, SceneLayout, SimError, SolverConfig};
use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};

/// Format version written to and required from database files.
pub const DB_VERSION: &str = "v1";

/// Rotation speed used by both presets (deg/s).
pub const DEFAULT_OMEGA_DEG_S: f64 = 30.0;

#[derive(Debug, thiserror::Error)]
pub enum SweepError {
    #[error("invalid sweep configuration: {0}")]
    Config(String),
    #[error("unknown container '{0}'")]
    UnknownContainer(String),
    #[error("all {0} scenes were invalid; the database would be empty")]
    EmptyDatabase(usize),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("{path}: {reason}")]
    Io { path: String, reason: String },
    #[error("database version '{found}' is not supported (expected '{expected}')")]
    VersionMismatch { found: String, expected: String },
    #[error("malformed database row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },
    #[error("inconsistent database: {0}")]
    Inconsistent(String),
}

/// One grid point. Angles are kept in degrees so that the database file
/// round-trips exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct PourParams {
    pub container: String,
    /// mL
    pub v_start: f64,
    pub theta_stop_deg: f64,
    /// Hold time at the stop angle, s.
    pub t_stop: f64,
    pub omega_deg_s: f64,
    pub seed: u64,
}

impl PourParams {
    pub fn theta_stop(&self) -> f64 {
        self.theta_stop_deg.to_radians()
    }

    pub fn omega(&self) -> f64 {
        self.omega_deg_s.to_radians()
    }

    fn check(&self, spec: &ContainerSpec) -> Result<(), SweepError> {
        let bad = |what: String| Err(SweepError::Config(format!("{}: {what}", self.container)));
        if !(self.v_start > 0.0 && self.v_start <= spec.capacity_ml()) {
            return bad(format!(
                "v_start {} mL outside (0, {}]",
                self.v_start,
                spec.capacity_ml()
            ));
        }
        if !(self.theta_stop_deg > 0.0 && self.theta_stop_deg <= 180.0) {
            return bad(format!(
                "theta_stop {} deg outside (0, 180]",
                self.theta_stop_deg
            ));
        }
        if !(self.t_stop.is_finite() && self.t_stop >= 0.0) {
            return bad(format!("t_stop {} s is negative", self.t_stop));
        }
        if !(self.omega_deg_s.is_finite() && self.omega_deg_s > 0.0) {
            return bad(format!("omega {} deg/s must be positive", self.omega_deg_s));
        }
        Ok(())
    }
}

/// A simulated pour as stored in the database (volumes in mL).
#[derive(Debug, Clone, PartialEq)]
pub struct PourRecord {
    pub params: PourParams,
    pub v_received: f64,
    pub v_spill: f64,
    pub v_remaining: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatabaseMeta {
    pub version: String,
    /// mL per particle
    pub particle_volume: f64,
    pub omega_deg_s: f64,
    pub spec_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PourDatabase {
    pub meta: DatabaseMeta,
    pub records: Vec<PourRecord>,
}

impl PourDatabase {
    /// Records of one container, with their indices into `records`.
    pub fn for_container<'a>(
        &'a self,
        container: &str,
    ) -> impl Iterator<Item = (usize, &'a PourRecord)> + 'a {
        let container = container.to_owned();
        self.records
            .iter()
            .enumerate()
            .filter(move |(_, r)| r.params.container == container)
    }
}

/// Values along one grid axis.
#[derive(Debug, Clone, PartialEq)]
pub enum Axis {
    /// `start, start + step, ...` up to and including `stop`.
    Range {
        start: f64,
        stop: f64,
        step: f64,
    },
    Values(Vec<f64>),
}

impl Axis {
    pub fn values(&self, name: &str) -> Result<Vec<f64>, SweepError> {
        match *self {
            Axis::Range { start, stop, step } => {
                if !(start.is_finite() && stop.is_finite() && step.is_finite()) || step <= 0.0 {
                    return Err(SweepError::Config(format!(
                        "{name}: step must be positive and bounds finite"
                    )));
                }
                if stop < start {
                    return Err(SweepError::Config(format!(
                        "{name}: empty range {start}..{stop}"
                    )));
                }
                // tolerate round-off in (stop - start) / step
                let n = ((stop - start) / step + 1e-9).floor() as usize + 1;
                Ok((0..n).map(|k| start + k as f64 * step).collect())
            }
            Axis::Values(ref v) => {
                if v.is_empty() {
                    return Err(SweepError::Config(format!("{name}: no values")));
                }
                Ok(v.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContainerAxes {
    pub container: String,
    pub v_start: Axis,
    pub theta_stop_deg: Axis,
    pub t_stop: Axis,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub containers: Vec<ContainerAxes>,
    pub omega_deg_s: f64,
}

fn range(start: f64, stop: f64, step: f64) -> Axis {
    Axis::Range { start, stop, step }
}

impl GridSpec {
    /// The laptop-sized default grid (832 scenes).
    pub fn desk() -> Self {
        let t_stop = Axis::Values(vec![0.5, 1.0, 2.0, 4.0]);
        Self {
            containers: vec![
                ContainerAxes {
                    container: "flask".into(),
                    v_start: range(25.0, 150.0, 25.0),
                    theta_stop_deg: range(40.0, 160.0, 10.0),
                    t_stop: t_stop.clone(),
                },
                ContainerAxes {
                    container: "media_bottle".into(),
                    v_start: range(50.0, 500.0, 50.0),
                    theta_stop_deg: range(40.0, 160.0, 10.0),
                    t_stop,
                },
            ],
            omega_deg_s: DEFAULT_OMEGA_DEG_S,
        }
    }

    /// A 6,805-scene grid. Only the total is fixed; the spacing of the
    /// cells is a guess.
    pub fn full() -> Self {
        Self {
            containers: vec![
                ContainerAxes {
                    container: "flask".into(),
                    v_start: range(10.0, 150.0, 10.0),
                    theta_stop_deg: range(30.0, 180.0, 5.0),
                    t_stop: Axis::Values(vec![0.5, 1.0, 2.0, 3.0, 4.0]),
                },
                ContainerAxes {
                    container: "media_bottle".into(),
                    v_start: range(25.0, 500.0, 25.0),
                    theta_stop_deg: range(45.0, 180.0, 5.0),
                    t_stop: Axis::Values(vec![0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0]),
                },
            ],
            omega_deg_s: DEFAULT_OMEGA_DEG_S,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "desk" => Some(Self::desk()),
            "full" => Some(Self::full()),
            _ => None,
        }
    }
}

/// SplitMix64 finaliser.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of grid point `index` in a database seeded with `database_seed`.
pub fn scene_seed(database_seed: u64, index: usize) -> u64 {
    splitmix64(splitmix64(database_seed) ^ index as u64)
}

/// Cartesian product in container, v_start, theta_stop, t_stop order.
pub fn build_grid(grid: &GridSpec, database_seed: u64) -> Result<Vec<PourParams>, SweepError> {
    if !(grid.omega_deg_s.is_finite() && grid.omega_deg_s > 0.0) {
        return Err(SweepError::Config("omega must be positive".into()));
    }
    if grid.containers.is_empty() {
        return Err(SweepError::Config("no containers in grid".into()));
    }
    let mut out = Vec::new();
    for axes in &grid.containers {
        let vs = axes.v_start.values("v_start")?;
        let thetas = axes.theta_stop_deg.values("theta_stop")?;
        let ts = axes.t_stop.values("t_stop")?;
        for &v in &vs {
            for &theta in &thetas {
                for &t in &ts {
                    let index = out.len();
                    out.push(PourParams {
                        container: axes.container.clone(),
                        v_start: v,
                        theta_stop_deg: theta,
                        t_stop: t,
                        omega_deg_s: grid.omega_deg_s,
                        seed: scene_seed(database_seed, index),
                    });
                }
            }
        }
    }
    Ok(out)
}

/// Fixed scene and solver settings shared by every grid point.
#[derive(Debug, Clone)]
pub struct SweepSettings {
    pub solver: SolverConfig,
    pub layout: SceneLayout,
    /// Id of the standing container every pour goes into.
    pub receiver: String,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            solver: SolverConfig::default(),
            layout: SceneLayout::default(),
            receiver: "flask".into(),
        }
    }
}

fn lookup<'a>(
    specs: &'a BTreeMap<String, ContainerSpec>,
    id: &str,
) -> Result<&'a ContainerSpec, SweepError> {
    specs
        .get(id)
        .ok_or_else(|| SweepError::UnknownContainer(id.to_string()))
}

/// Simulates every grid point on `workers` threads. Records come back in
/// grid order; unstable scenes are dropped and counted in the log.
pub fn run_sweep(
    grid: &[PourParams],
    specs: &BTreeMap<String, ContainerSpec>,
    settings: &SweepSettings,
    workers: usize,
) -> Result<PourDatabase, SweepError> {
    if workers == 0 {
        return Err(SweepError::Config("worker count must be at least 1".into()));
    }
    if grid.is_empty() {
        return Err(SweepError::Config("empty grid".into()));
    }
    settings.solver.validate().map_err(SweepError::Config)?;
    let omega = grid[0].omega_deg_s;
    let receiver = lookup(specs, &settings.receiver)?;
    let mut used: BTreeMap<&str, &ContainerSpec> = BTreeMap::new();
    used.insert(&receiver.id, receiver);
    for p in grid {
        let spec = lookup(specs, &p.container)?;
        p.check(spec)?;
        if p.omega_deg_s != omega {
            return Err(SweepError::Config("grid mixes rotation speeds".into()));
        }
        used.insert(&spec.id, spec);
    }

    // scenes run one per worker; each solver stays sequential
    let mut solver = settings.solver.clone();
    solver.execution = Execution::Sequential;
    let done = AtomicUsize::new(0);
    let every = (grid.len() / 10).max(1);
    let outcomes = with_workers(workers, || {
        Execution::Parallel.map(grid, |p| {
            let scene = PourScene::new(
                &specs[&p.container],
                receiver,
                &settings.layout,
                p.v_start,
                p.theta_stop(),
                p.t_stop,
                p.omega(),
                p.seed,
            )?;
            let outcome = simulate_pour(&scene, &solver)?;
            log::debug!(
                "{} {} mL {} deg {} s: received {} spilled {}",
                p.container,
                p.v_start,
                p.theta_stop_deg,
                p.t_stop,
                outcome.v_received,
                outcome.v_spill
            );
            let finished = done.fetch_add(1, Ordering::Relaxed) + 1;
            if finished.is_multiple_of(every) {
                log::info!("{finished} of {} scenes simulated", grid.len());
            }
            Ok::<_, SimError>(outcome)
        })
    });

    let mut records = Vec::with_capacity(grid.len());
    for (p, outcome) in grid.iter().zip(outcomes) {
        let o = outcome?;
        if o.valid {
            records.push(PourRecord {
                params: p.clone(),
                v_received: o.v_received,
                v_spill: o.v_spill,
                v_remaining: o.v_remaining,
            });
        }
    }
    let dropped = grid.len() - records.len();
    if records.is_empty() {
        return Err(SweepError::EmptyDatabase(dropped));
    }
    if dropped > 0 {
        log::warn!("dropped {dropped} of {} scenes as unstable", grid.len());
    }
    Ok(PourDatabase {
        meta: DatabaseMeta {
            version: DB_VERSION.into(),
            particle_volume: settings.solver.particle_volume,
            omega_deg_s: omega,
            spec_hash: specs_hash(used.into_values()),
        },
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::containers::default_specs;

    fn small_grid() -> GridSpec {
        GridSpec {
            containers: vec![ContainerAxes {
                container: "flask".into(),
                v_start: Axis::Values(vec![50.0, 100.0]),
                theta_stop_deg: Axis::Values(vec![60.0, 90.0, 120.0]),
                t_stop: Axis::Values(vec![1.0, 2.0]),
            }],
            omega_deg_s: DEFAULT_OMEGA_DEG_S,
        }
    }

    #[test]
    fn small_grid_has_twelve_points_in_order() {
        let g = build_grid(&small_grid(), 3).unwrap();
        assert_eq!(g.len(), 12);
        let keys: Vec<(f64, f64, f64)> = g
            .iter()
            .map(|p| (p.v_start, p.theta_stop_deg, p.t_stop))
            .collect();
        let mut sorted = keys.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(keys, sorted);
        assert_eq!(g[5].seed, scene_seed(3, 5));
        assert_ne!(g[0].seed, g[1].seed);
    }

    #[test]
    fn preset_sizes() {
        assert_eq!(build_grid(&GridSpec::desk(), 7).unwrap().len(), 832);
        assert_eq!(build_grid(&GridSpec::full(), 7).unwrap().len(), 6805);
    }

    #[test]
    fn wide_step_gives_single_value() {
        let axis = Axis::Range {
            start: 40.0,
            stop: 60.0,
            step: 100.0,
        };
        assert_eq!(axis.values("theta").unwrap(), vec![40.0]);
    }

    #[test]
    fn empty_ranges_are_rejected() {
        let bad = [
            Axis::Range {
                start: 50.0,
                stop: 40.0,
                step: 10.0,
            },
            Axis::Range {
                start: 40.0,
                stop: 50.0,
                step: 0.0,
            },
            Axis::Values(vec![]),
        ];
        for axis in bad {
            let mut grid = small_grid();
            grid.containers[0].theta_stop_deg = axis;
            assert!(matches!(build_grid(&grid, 1), Err(SweepError::Config(_))));
        }
    }

    #[test]
    fn range_end_survives_round_off() {
        let axis = Axis::Range {
            start: 0.1,
            stop: 0.7,
            step: 0.1,
        };
        assert_eq!(axis.values("t").unwrap().len(), 7);
    }

    #[test]
    fn single_point_sweep() {
        let specs = default_specs();
        let mut grid = build_grid(&small_grid(), 1).unwrap();
        grid.truncate(1);
        let db = run_sweep(&grid, &specs, &SweepSettings::default(), 1).unwrap();
        assert_eq!(db.records.len(), 1);
        assert_eq!(db.records[0].params, grid[0]);
        let r = &db.records[0];
        assert_eq!(r.v_received + r.v_spill + r.v_remaining, r.params.v_start);
        assert_eq!(db.meta.version, DB_VERSION);
    }

    #[test]
    fn unknown_container_and_overfill_are_config_errors() {
        let specs = default_specs();
        let mut grid = build_grid(&small_grid(), 1).unwrap();
        grid.truncate(1);
        grid[0].container = "beaker".into();
        assert!(matches!(
            run_sweep(&grid, &specs, &SweepSettings::default(), 1),
            Err(SweepError::UnknownContainer(_))
        ));
        grid[0].container = "flask".into();
        grid[0].v_start = 1000.0;
        assert!(matches!(
            run_sweep(&grid, &specs, &SweepSettings::default(), 1),
            Err(SweepError::Config(_))
        ));
    }
}
