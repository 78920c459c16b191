use super::solver::{Boundaries, MovingCollider, Solver, SolverConfig};
use super::state::ParticleState;
use super::SimError;
use crate::containers::{ContainerSpec, SdfCollider, ML};
use crate::kinematics::{generate_trajectory, AngleProfile, PourFrame, PourPlane, Trajectory};
use nalgebra::{Isometry3, Point3, Translation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::FRAC_PI_2;
use std::io::{self, Write};

/// Lattice jitter as a fraction of the spacing.
const JITTER: f64 = 0.05;
const FILL_SHRINK: f64 = 0.95;
const FILL_ATTEMPTS: usize = 12;

/// Where things sit in the world.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneLayout {
    /// World position of the pour pivot.
    pub cor: Point3<f64>,
    /// Start tilt of the pouring container, rad.
    pub pre_tilt: f64,
    /// Vertical distance from the pivot down to the receiving opening, m.
    pub receiver_gap: f64,
    /// Horizontal shift of the receiving opening along the pour direction
    /// (`-x`), m. Must stay within its opening radius.
    pub receiver_lead: f64,
    /// Wall thickness of both containers, m.
    pub wall: f64,
}

impl Default for SceneLayout {
    fn default() -> Self {
        Self {
            cor: Point3::new(0.0, 0.25, 0.0),
            pre_tilt: crate::kinematics::DEFAULT_PRE_TILT,
            receiver_gap: 0.005,
            receiver_lead: 0.013,
            wall: crate::containers::DEFAULT_WALL_THICKNESS,
        }
    }
}

/// One pour: a pouring container driven about its exit point above a
/// standing receiving container on a table.
#[derive(Debug, Clone, PartialEq)]
pub struct PourScene {
    pub pouring: ContainerSpec,
    pub frame: PourFrame,
    pub profile: AngleProfile,
    pub receiving: ContainerSpec,
    pub receiving_pose: Isometry3<f64>,
    /// Table height, m.
    pub table_height: f64,
    /// Requested start volume, mL.
    pub v_start: f64,
    pub seed: u64,
    pub wall: f64,
}

impl PourScene {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        pouring: &ContainerSpec,
        receiving: &ContainerSpec,
        layout: &SceneLayout,
        v_start: f64,
        theta_stop: f64,
        t_stop: f64,
        omega: f64,
        seed: u64,
    ) -> Result<Self, SimError> {
        if !(v_start.is_finite() && v_start > 0.0) {
            return Err(SimError::Config(format!(
                "start volume must be positive, got {v_start} mL"
            )));
        }
        if v_start > pouring.capacity_ml() {
            return Err(SimError::Overfill {
                id: pouring.id.clone(),
                volume: v_start,
                capacity: pouring.capacity_ml(),
            });
        }
        let frame =
            PourFrame::with_cor(pouring, layout.cor, PourPlane::default(), layout.pre_tilt)?;
        let profile = AngleProfile::new(theta_stop, t_stop, omega)?;

        // standing: body below, neck up
        let rotation = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), -FRAC_PI_2);
        if !(0.0..=receiving.opening_radius).contains(&layout.receiver_lead) {
            return Err(SimError::Config(format!(
                "receiver lead {} m must lie in [0, {}]",
                layout.receiver_lead, receiving.opening_radius
            )));
        }
        let target = layout.cor - Vector3::new(layout.receiver_lead, layout.receiver_gap, 0.0);
        let t = target - rotation * receiving.shape.opening_centre();
        let receiving_pose = Isometry3::from_parts(Translation3::from(t), rotation);

        let (lo, hi) = receiving.shape.interior_bounds();
        let mut floor = f64::INFINITY;
        for corner in 0..8 {
            let c = Point3::new(
                if corner & 1 == 0 { lo.x } else { hi.x },
                if corner & 2 == 0 { lo.y } else { hi.y },
                if corner & 4 == 0 { lo.z } else { hi.z },
            );
            floor = floor.min((receiving_pose * c).y);
        }
        Ok(Self {
            pouring: pouring.clone(),
            frame,
            profile,
            receiving: receiving.clone(),
            receiving_pose,
            table_height: floor - layout.wall,
            v_start,
            seed,
            wall: layout.wall,
        })
    }

    /// Pouring container placement at pour angle `theta`.
    pub fn pouring_pose(&self, theta: f64) -> Isometry3<f64> {
        self.frame.container_pose_unchecked(theta)
    }

    /// Executable grip motion for this scene.
    pub fn trajectory(&self, sample_dt: f64) -> Result<Trajectory, SimError> {
        Ok(generate_trajectory(
            &self.frame,
            self.profile.theta_stop,
            self.profile.t_stop,
            self.profile.omega,
            sample_dt,
        )?)
    }

    fn pouring_collider(&self, theta: f64) -> SdfCollider {
        SdfCollider::new(&self.pouring, self.wall, self.pouring_pose(theta))
    }

    fn receiving_collider(&self) -> SdfCollider {
        SdfCollider::new(&self.receiving, self.wall, self.receiving_pose)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParticleClass {
    Remaining,
    Received,
    Spilled,
}

impl ParticleClass {
    pub fn as_str(self) -> &'static str {
        match self {
            ParticleClass::Remaining => "remaining",
            ParticleClass::Received => "received",
            ParticleClass::Spilled => "spilled",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ClassCounts {
    pub remaining: usize,
    pub received: usize,
    pub spilled: usize,
}

impl ClassCounts {
    pub fn total(&self) -> usize {
        self.remaining + self.received + self.spilled
    }

    fn add(&mut self, class: ParticleClass) {
        match class {
            ParticleClass::Remaining => self.remaining += 1,
            ParticleClass::Received => self.received += 1,
            ParticleClass::Spilled => self.spilled += 1,
        }
    }
}

/// Settled result of one scene. Volumes are particle counts times the
/// particle volume.
#[derive(Debug, Clone, PartialEq)]
pub struct PourOutcome {
    pub v_start: f64,
    pub v_received: f64,
    pub v_spill: f64,
    pub v_remaining: f64,
    pub counts: ClassCounts,
    pub particle_volume: f64,
    /// Speed criterion reached before the settling cap.
    pub settled: bool,
    /// `false` when the solver blew up; such scenes are discarded.
    pub valid: bool,
    pub steps: u64,
}

impl PourOutcome {
    fn from_counts(counts: ClassCounts, particle_volume: f64) -> Self {
        Self {
            v_start: counts.total() as f64 * particle_volume,
            v_received: counts.received as f64 * particle_volume,
            v_spill: counts.spilled as f64 * particle_volume,
            v_remaining: counts.remaining as f64 * particle_volume,
            counts,
            particle_volume,
            settled: false,
            valid: true,
            steps: 0,
        }
    }
}

/// Particle volume giving `target_particles` for a full container, mL.
pub fn calibrate_particle_volume(
    spec: &ContainerSpec,
    target_particles: usize,
) -> Result<f64, SimError> {
    if target_particles < 50 {
        return Err(SimError::Config(format!(
            "at least 50 particles per container needed, got {target_particles}"
        )));
    }
    Ok(spec.capacity_ml() / target_particles as f64)
}

fn classify_one(
    p: &Point3<f64>,
    pouring: &SdfCollider,
    receiving: &SdfCollider,
    table: f64,
) -> ParticleClass {
    if p.y < table {
        ParticleClass::Spilled
    } else if pouring.contains_interior(p) {
        ParticleClass::Remaining
    } else if receiving.contains_interior(p) {
        ParticleClass::Received
    } else {
        ParticleClass::Spilled
    }
}

fn classes_at(state: &ParticleState, scene: &PourScene, theta: f64) -> Vec<ParticleClass> {
    let pouring = scene.pouring_collider(theta);
    let receiving = scene.receiving_collider();
    state
        .positions
        .iter()
        .map(|p| classify_one(p, &pouring, &receiving, scene.table_height))
        .collect()
}

/// Sorts particles by where they ended up, with the pouring container back
/// in its start pose.
pub fn classify_particles(state: &ParticleState, scene: &PourScene) -> ClassCounts {
    let mut counts = ClassCounts::default();
    for c in classes_at(state, scene, 0.0) {
        counts.add(c);
    }
    counts
}

/// Seeds `round(volume / particle_volume)` particles in the lowest part of
/// the container at `pose`, on a jittered lattice.
fn seed_particles(
    spec: &ContainerSpec,
    pose: &Isometry3<f64>,
    volume: f64,
    seed: u64,
    config: &SolverConfig,
    wall: f64,
) -> Result<ParticleState, SimError> {
    if !(volume.is_finite() && volume > 0.0) {
        return Err(SimError::Config(format!(
            "fill volume must be positive, got {volume} mL"
        )));
    }
    if volume > spec.capacity_ml() {
        return Err(SimError::Overfill {
            id: spec.id.clone(),
            volume,
            capacity: spec.capacity_ml(),
        });
    }
    let pv = config.particle_volume;
    let n = (volume / pv).round() as usize;
    if n == 0 {
        log::warn!(
            "{volume} mL is below half a particle ({pv} mL); '{}' starts empty",
            spec.id
        );
        return Ok(ParticleState::empty(pv));
    }

    let collider = SdfCollider::new(spec, wall, *pose);
    let margin = config.margin();
    // world-aligned lattice, so the lowest `n` sites form a level surface
    let (blo, bhi) = spec.shape.interior_bounds();
    let (mut lo, mut hi) = (
        Point3::from([f64::INFINITY; 3]),
        Point3::from([f64::NEG_INFINITY; 3]),
    );
    for corner in 0..8 {
        let local = Point3::new(
            if corner & 1 == 0 { blo.x } else { bhi.x },
            if corner & 2 == 0 { blo.y } else { bhi.y },
            if corner & 4 == 0 { blo.z } else { bhi.z },
        );
        let w = pose * local;
        lo = lo.inf(&w);
        hi = hi.sup(&w);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spacing = (pv * ML).cbrt();
    for _ in 0..FILL_ATTEMPTS {
        let counts = [0, 1, 2].map(|k| ((hi[k] - lo[k]) / spacing).floor() as usize + 1);
        let mut candidates: Vec<Point3<f64>> = Vec::new();
        for i in 0..counts[0] {
            for j in 0..counts[1] {
                for k in 0..counts[2] {
                    let mut q = Point3::new(
                        lo.x + (i as f64 + 0.5) * spacing,
                        lo.y + (j as f64 + 0.5) * spacing,
                        lo.z + (k as f64 + 0.5) * spacing,
                    );
                    for c in 0..3 {
                        q[c] += rng.gen_range(-JITTER..JITTER) * spacing;
                    }
                    if collider.interior_sdf(&q) < -margin {
                        candidates.push(q);
                    }
                }
            }
        }
        if candidates.len() >= n {
            // lowest first; the sort is stable so ties keep lattice order
            candidates.sort_by(|a, b| a.y.total_cmp(&b.y));
            candidates.truncate(n);
            return Ok(ParticleState::new(candidates, pv));
        }
        spacing *= FILL_SHRINK;
    }
    Err(SimError::Config(format!(
        "could not place {n} particles in '{}'",
        spec.id
    )))
}

/// Steps until every particle moved slower than the settling speed over the
/// last `settle_check_every` steps, or `cap` steps ran. Speed is net
/// displacement over that window, so solver jitter of a few microns per
/// step does not count as motion. Returns whether it settled and whether
/// the solver stayed stable.
fn settle(
    solver: &mut Solver,
    state: &mut ParticleState,
    bounds: &Boundaries,
    cap: u64,
    steps: &mut u64,
    on_step: &mut dyn FnMut(u64, &ParticleState),
) -> (bool, bool) {
    let config = solver.config().clone();
    let window = config.settle_check_every as u64;
    let limit = config.settle_speed * window as f64 * config.dt;
    let mut anchor = state.positions.clone();
    let mut taken = 0u64;
    while taken < cap {
        let report = solver.step(state, bounds, config.dt);
        taken += 1;
        *steps += 1;
        on_step(*steps, state);
        if report.unstable {
            return (false, false);
        }
        if taken.is_multiple_of(window) {
            let moved = state
                .positions
                .iter()
                .zip(&anchor)
                .map(|(p, a)| (p - a).norm())
                .fold(0.0, f64::max);
            if moved < limit {
                return (true, true);
            }
            anchor.copy_from_slice(&state.positions);
        }
    }
    (false, true)
}

/// Fills `spec` standing at `pose` and lets the liquid come to rest.
pub fn fill_container(
    spec: &ContainerSpec,
    pose: &Isometry3<f64>,
    volume: f64,
    seed: u64,
    config: &SolverConfig,
) -> Result<ParticleState, SimError> {
    config.validate().map_err(SimError::Config)?;
    let wall = crate::containers::DEFAULT_WALL_THICKNESS;
    let mut state = seed_particles(spec, pose, volume, seed, config, wall)?;
    let bounds = Boundaries {
        colliders: vec![MovingCollider::fixed(SdfCollider::new(spec, wall, *pose))],
        table: None,
    };
    let mut solver = Solver::new(config.clone());
    let mut steps = 0;
    settle(
        &mut solver,
        &mut state,
        &bounds,
        config.warmup_cap_steps as u64,
        &mut steps,
        &mut |_, _| {},
    );
    Ok(state)
}

/// Runs a whole scene.
pub fn simulate_pour(scene: &PourScene, config: &SolverConfig) -> Result<PourOutcome, SimError> {
    simulate_pour_observed(scene, config, 0, |_, _, _| {})
}

/// As [`simulate_pour`], calling `observer(step, state, classes)` every
/// `every` steps (never when `every` is 0).
pub fn simulate_pour_observed<F>(
    scene: &PourScene,
    config: &SolverConfig,
    every: u64,
    mut observer: F,
) -> Result<PourOutcome, SimError>
where
    F: FnMut(u64, &ParticleState, &[ParticleClass]),
{
    config.validate().map_err(SimError::Config)?;
    let start_pose = scene.pouring_pose(0.0);
    let mut state = seed_particles(
        &scene.pouring,
        &start_pose,
        scene.v_start,
        scene.seed,
        config,
        scene.wall,
    )?;
    let mut bounds = Boundaries {
        colliders: vec![
            MovingCollider::fixed(scene.pouring_collider(0.0)),
            MovingCollider::fixed(scene.receiving_collider()),
        ],
        table: Some(scene.table_height),
    };
    let mut solver = Solver::new(config.clone());
    let dt = config.dt;
    let mut steps = 0u64;
    let mut notify = |step: u64, state: &ParticleState, theta: f64| {
        if every > 0 && step.is_multiple_of(every) {
            observer(step, state, &classes_at(state, scene, theta));
        }
    };
    notify(0, &state, 0.0);

    let (_, stable) = settle(
        &mut solver,
        &mut state,
        &bounds,
        config.warmup_cap_steps as u64,
        &mut steps,
        &mut |k, s| notify(k, s, 0.0),
    );
    let mut stable = stable;

    let duration = scene.profile.duration();
    let motion_steps = (duration / dt).ceil() as u64;
    for k in 1..=motion_steps {
        if !stable {
            break;
        }
        let t = (k as f64 * dt).min(duration);
        let theta = scene.profile.theta_at(t);
        let pour = &mut bounds.colliders[0];
        pour.previous = *pour.current.pose();
        pour.current.set_pose(scene.pouring_pose(theta));
        let report = solver.step(&mut state, &bounds, dt);
        steps += 1;
        stable = !report.unstable;
        notify(steps, &state, theta);
    }

    let mut settled = false;
    if stable {
        let pour = &mut bounds.colliders[0];
        pour.previous = *pour.current.pose();
        let cap = (config.settle_cap / dt).ceil() as u64;
        let (s, st) = settle(
            &mut solver,
            &mut state,
            &bounds,
            cap,
            &mut steps,
            &mut |k, s| notify(k, s, 0.0),
        );
        settled = s;
        stable = st;
    }
    notify(steps, &state, 0.0);

    let mut outcome =
        PourOutcome::from_counts(classify_particles(&state, scene), config.particle_volume);
    outcome.settled = settled;
    outcome.valid = stable && state.is_valid();
    outcome.steps = steps;
    if !outcome.valid {
        log::warn!("scene with seed {} became unstable", scene.seed);
    }
    Ok(outcome)
}

/// Header of the particle dump.
pub const DUMP_HEADER: &str = "step,particle_id,x_m,y_m,z_m,class";

/// Appends one frame of the particle dump.
pub fn write_dump_rows<W: Write>(
    out: &mut W,
    step: u64,
    state: &ParticleState,
    classes: &[ParticleClass],
) -> io::Result<()> {
    for (i, (p, c)) in state.positions.iter().zip(classes).enumerate() {
        writeln!(
            out,
            "{step},{i},{:.6},{:.6},{:.6},{}",
            p.x,
            p.y,
            p.z,
            c.as_str()
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::containers::default_specs;
    use crate::kinematics::DEFAULT_OMEGA;

    fn flask() -> ContainerSpec {
        default_specs()["flask"].clone()
    }

    fn scene(v: f64, theta_deg: f64, t_stop: f64, seed: u64) -> PourScene {
        let f = flask();
        PourScene::new(
            &f,
            &f,
            &SceneLayout::default(),
            v,
            theta_deg.to_radians(),
            t_stop,
            DEFAULT_OMEGA,
            seed,
        )
        .unwrap()
    }

    #[test]
    fn fill_counts() {
        let config = SolverConfig::default();
        let f = flask();
        let pose = Isometry3::identity();
        let s = seed_particles(&f, &pose, 100.0, 1, &config, 0.002).unwrap();
        assert_eq!(s.count(), 100);
        let s = fill_container(&f, &pose, 0.4, 1, &config).unwrap();
        assert_eq!(s.count(), 0);
        let err = fill_container(&f, &pose, 400.0, 1, &config).unwrap_err();
        assert!(matches!(err, SimError::Overfill { .. }));
    }

    #[test]
    fn settled_fill_stays_inside() {
        let config = SolverConfig::default();
        let f = flask();
        let pose = Isometry3::identity();
        let s = fill_container(&f, &pose, 80.0, 3, &config).unwrap();
        let collider = SdfCollider::new(&f, 0.002, pose);
        assert_eq!(s.count(), 80);
        for p in &s.positions {
            assert!(collider.contains_interior(p), "{p}");
        }
    }

    #[test]
    fn calibration() {
        let specs = default_specs();
        let mut bottle = specs["media_bottle"].clone();
        bottle.capacity = 600.0 * ML;
        assert!((calibrate_particle_volume(&bottle, 600).unwrap() - 1.0).abs() < 1e-12);
        let flask_pv = calibrate_particle_volume(&specs["flask"], 500).unwrap();
        assert!((flask_pv - 0.5).abs() < 1e-12);
        assert!(calibrate_particle_volume(&bottle, 10).is_err());
    }

    #[test]
    fn receiver_sits_under_pivot() {
        let sc = scene(50.0, 90.0, 1.0, 0);
        let opening = sc.receiving_pose * sc.receiving.shape.opening_centre();
        let cor = sc.frame.cor_world();
        assert!((opening.x - cor.x).abs() <= sc.receiving.opening_radius);
        assert!(opening.y < cor.y);
        let exit = sc.frame.exit_point(&sc.pouring_pose(0.0));
        assert!((exit - cor).norm() < 1e-9);
        assert!(sc.table_height < opening.y);
    }

    #[test]
    fn classification_partitions() {
        let sc = scene(50.0, 90.0, 1.0, 0);
        let recv_centre = sc.receiving_pose * Point3::new(0.05, 0.0225, 0.0);
        let pouring = sc.pouring_collider(0.0);
        let receiving = sc.receiving_collider();
        assert_eq!(
            classify_one(&recv_centre, &pouring, &receiving, sc.table_height),
            ParticleClass::Received
        );
        let below = Point3::new(0.0, sc.table_height - 0.05, 0.0);
        assert_eq!(
            classify_one(&below, &pouring, &receiving, sc.table_height),
            ParticleClass::Spilled
        );

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let n = rng.gen_range(0..60);
            let pts = (0..n)
                .map(|_| {
                    Point3::new(
                        rng.gen_range(-0.15..0.15),
                        rng.gen_range(0.0..0.35),
                        rng.gen_range(-0.05..0.05),
                    )
                })
                .collect();
            let state = ParticleState::new(pts, 1.0);
            assert_eq!(classify_particles(&state, &sc).total(), n);
        }
    }

    #[test]
    fn dump_format() {
        let state = ParticleState::new(vec![Point3::new(0.1, 0.2, 0.3)], 1.0);
        let mut out = Vec::new();
        write_dump_rows(&mut out, 7, &state, &[ParticleClass::Received]).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "7,0,0.100000,0.200000,0.300000,received\n"
        );
    }

    #[test]
    fn no_tilt_no_flow() {
        let config = SolverConfig::default();
        let out = simulate_pour(&scene(60.0, 0.0, 0.0, 9), &config).unwrap();
        assert!(out.valid);
        assert_eq!(out.v_received, 0.0);
        assert_eq!(out.v_spill, 0.0);
        assert_eq!(out.v_remaining, 60.0);
    }
}
