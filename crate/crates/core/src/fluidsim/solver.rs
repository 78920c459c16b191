//! Position-based fluid step.
//!
//! One substep is: gravity prediction, neighbour search, a fixed number of
//! Jacobi sweeps over a unilateral density constraint plus a short-range
//! pair contact, projection out of every collider after each sweep, and a
//! velocity update from the position change with wall friction.
//!
//! Density uses the poly6 kernel and gradients the spiky kernel; the rest
//! density is the kernel sum over a cubic lattice whose cell volume equals
//! the particle volume, so a particle sitting in a perfect lattice has zero
//! constraint error.

use super::neighbors::NeighborList;
use super::state::ParticleState;
use crate::containers::{SdfCollider, ML};
use crate::exec::Execution;
use nalgebra::{Isometry3, Point3, Vector3};
use std::f64::consts::PI;

/// Largest accepted substep.
pub const MAX_DT: f64 = 0.005;

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Substep length, s.
    pub dt: f64,
    /// Constraint sweeps per substep.
    pub iterations: usize,
    /// Liquid volume per particle, mL.
    pub particle_volume: f64,
    /// m/s², acting along `-y`.
    pub gravity: f64,
    /// Kernel support radius in lattice spacings.
    pub kernel_scale: f64,
    /// Minimum pair distance in lattice spacings.
    pub contact_scale: f64,
    /// Collision radius of a particle in lattice spacings.
    pub margin_scale: f64,
    /// Constraint softness relative to the lattice gradient norm.
    pub relaxation: f64,
    /// Largest particle correction per sweep in lattice spacings.
    pub max_correction_scale: f64,
    /// Jacobi under-relaxation of the density correction.
    pub jacobi_weight: f64,
    /// Coulomb friction coefficient against container walls.
    pub wall_friction: f64,
    /// Same for the table.
    pub table_friction: f64,
    /// Settled once no particle has moved farther than this speed times
    /// the check window over the last window, m/s.
    pub settle_speed: f64,
    pub settle_check_every: usize,
    /// Longest settling phase after the motion, s.
    pub settle_cap: f64,
    /// Longest warm-up after seeding, in steps.
    pub warmup_cap_steps: usize,
    /// Any particle faster than this marks the scene unstable, m/s.
    pub instability_speed: f64,
    pub execution: Execution,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            dt: 0.002,
            iterations: 3,
            particle_volume: 1.0,
            gravity: 9.81,
            kernel_scale: 1.6,
            contact_scale: 0.6,
            margin_scale: 0.3,
            relaxation: 1.0,
            max_correction_scale: 0.25,
            jacobi_weight: 1.0,
            wall_friction: 0.1,
            table_friction: 0.5,
            settle_speed: 0.01,
            settle_check_every: 50,
            settle_cap: 60.0,
            warmup_cap_steps: 1500,
            instability_speed: 50.0,
            execution: Execution::Sequential,
        }
    }
}

impl SolverConfig {
    /// Edge of the cube holding one particle's volume, m.
    pub fn spacing(&self) -> f64 {
        (self.particle_volume * ML).cbrt()
    }

    /// Collision radius used against walls and the table, m.
    pub fn margin(&self) -> f64 {
        self.margin_scale * self.spacing()
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.dt > 0.0 && self.dt <= MAX_DT) {
            return Err(format!("dt {} s outside (0, {MAX_DT}]", self.dt));
        }
        if !(self.particle_volume.is_finite() && self.particle_volume > 0.0) {
            return Err("particle volume must be positive".into());
        }
        if self.kernel_scale <= 1.0 {
            return Err("kernel support must exceed one spacing".into());
        }
        if self.settle_check_every == 0 {
            return Err("settle check interval must be positive".into());
        }
        Ok(())
    }
}

/// A collider at its pose at the end of the step, plus where it was at the
/// start of the step (for contact velocities).
#[derive(Debug, Clone)]
pub struct MovingCollider {
    pub current: SdfCollider,
    pub previous: Isometry3<f64>,
}

impl MovingCollider {
    pub fn fixed(collider: SdfCollider) -> Self {
        let previous = *collider.pose();
        Self {
            current: collider,
            previous,
        }
    }

    /// Velocity of the collider's material point currently at `p`.
    fn velocity_at(&self, p: &Point3<f64>, dt: f64) -> Vector3<f64> {
        let body = self.current.pose().inverse_transform_point(p);
        (p - self.previous * body) / dt
    }
}

/// Everything particles collide with.
#[derive(Debug, Clone, Default)]
pub struct Boundaries {
    pub colliders: Vec<MovingCollider>,
    /// Height of an infinite horizontal floor, if any.
    pub table: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Surface {
    Free,
    Wall(usize),
    Table,
}

/// Last surface a particle was pushed out of during a step.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Contact {
    surface: Surface,
    normal: Vector3<f64>,
}

const NO_CONTACT: Contact = Contact {
    surface: Surface::Free,
    normal: Vector3::new(0.0, 0.0, 0.0),
};

#[derive(Debug, Clone, Copy, Default)]
struct PairTerm {
    weight: f64,
    /// Spiky gradient magnitude.
    slope: f64,
    distance: f64,
    dir: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub max_speed: f64,
    pub unstable: bool,
}

/// Precomputed kernel constants.
#[derive(Debug, Clone, Copy)]
struct Kernel {
    h: f64,
    h2: f64,
    poly6: f64,
    spiky: f64,
}

impl Kernel {
    fn new(h: f64) -> Self {
        Self {
            h,
            h2: h * h,
            poly6: 315.0 / (64.0 * PI * h.powi(9)),
            spiky: 45.0 / (PI * h.powi(6)),
        }
    }

    #[inline]
    fn weight_sq(&self, r2: f64) -> f64 {
        if r2 >= self.h2 {
            0.0
        } else {
            let d = self.h2 - r2;
            self.poly6 * d * d * d
        }
    }

    /// Magnitude of the spiky gradient (points from j to i).
    #[inline]
    fn gradient(&self, r: f64) -> f64 {
        if r >= self.h {
            0.0
        } else {
            let d = self.h - r;
            self.spiky * d * d
        }
    }
}

/// Reusable solver with scratch buffers.
#[derive(Debug, Clone)]
pub struct Solver {
    config: SolverConfig,
    kernel: Kernel,
    rest_density: f64,
    softness: f64,
    contact_distance: f64,
    margin: f64,
    max_correction: f64,
    neighbors: NeighborList,
    owners: Vec<u32>,
    pairs: Vec<PairTerm>,
    predicted: Vec<Point3<f64>>,
    next: Vec<Point3<f64>>,
    lambdas: Vec<f64>,
    contacts: Vec<Contact>,
    moved: Vec<(Point3<f64>, Contact)>,
}

impl Solver {
    pub fn new(config: SolverConfig) -> Self {
        let spacing = config.spacing();
        let kernel = Kernel::new(config.kernel_scale * spacing);
        let (rest_density, grad_sq) = lattice_sums(&kernel, spacing);
        let softness = config.relaxation * grad_sq / (rest_density * rest_density);
        Self {
            contact_distance: config.contact_scale * spacing,
            max_correction: config.max_correction_scale * spacing,
            margin: config.margin(),
            config,
            kernel,
            rest_density,
            softness,
            neighbors: NeighborList::default(),
            owners: Vec::new(),
            pairs: Vec::new(),
            predicted: Vec::new(),
            next: Vec::new(),
            lambdas: Vec::new(),
            contacts: Vec::new(),
            moved: Vec::new(),
        }
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    /// Kernel sum at a lattice site.
    pub fn rest_density(&self) -> f64 {
        self.rest_density
    }

    /// Advances `state` by one substep of length `dt`.
    pub fn step(&mut self, state: &mut ParticleState, bounds: &Boundaries, dt: f64) -> StepReport {
        debug_assert!(dt > 0.0 && dt <= MAX_DT, "dt out of range");
        let n = state.count();
        if n == 0 {
            return StepReport {
                max_speed: 0.0,
                unstable: false,
            };
        }
        let exec = self.config.execution;
        let gravity = Vector3::new(0.0, -self.config.gravity * dt, 0.0);

        self.predicted.clear();
        self.predicted.extend(
            state
                .positions
                .iter()
                .zip(&state.velocities)
                .map(|(x, v)| x + (v + gravity) * dt),
        );
        self.next.resize(n, Point3::origin());
        self.lambdas.resize(n, 0.0);
        self.contacts.clear();
        self.contacts.resize(n, NO_CONTACT);
        self.moved.resize(n, (Point3::origin(), NO_CONTACT));

        self.neighbors.rebuild(&self.predicted, self.kernel.h, exec);
        self.owners.clear();
        for i in 0..n {
            let count = self.neighbors.offsets[i + 1] - self.neighbors.offsets[i];
            self.owners.extend(std::iter::repeat_n(i as u32, count));
        }
        self.pairs
            .resize(self.neighbors.indices.len(), PairTerm::default());

        for _ in 0..self.config.iterations {
            self.solve_sweep(bounds);
        }

        // velocity update and friction
        let inv_dt = 1.0 / dt;
        let mut max_speed: f64 = 0.0;
        let mut unstable = false;
        for i in 0..n {
            let x_new = self.predicted[i];
            let mut v = (x_new - state.positions[i]) * inv_dt;
            if v.norm() > self.config.instability_speed || !v.iter().all(|c| c.is_finite()) {
                unstable = true;
            }
            // Coulomb friction bounded by the normal speed the contact
            // had to cancel this step
            let contact = self.contacts[i];
            let incoming = state.velocities[i] + gravity;
            match contact.surface {
                Surface::Free => {}
                Surface::Wall(c) => {
                    let base = bounds.colliders[c].velocity_at(&x_new, dt);
                    let pushed = (-(incoming - base).dot(&contact.normal)).max(0.0);
                    let mu = self.config.wall_friction;
                    v = base + slide(v - base, contact.normal, mu * pushed);
                }
                Surface::Table => {
                    let pushed = (-incoming.dot(&contact.normal)).max(0.0);
                    v = slide(v, contact.normal, self.config.table_friction * pushed);
                }
            }
            max_speed = max_speed.max(v.norm());
            state.velocities[i] = v;
            state.positions[i] = x_new;
        }
        StepReport {
            max_speed,
            unstable,
        }
    }

    fn solve_sweep(&mut self, bounds: &Boundaries) {
        let exec = self.config.execution;
        let kernel = self.kernel;
        let predicted = &self.predicted;
        let owners = &self.owners;
        let indices = &self.neighbors.indices;

        exec.fill(&mut self.pairs, |p| {
            let i = owners[p] as usize;
            let j = indices[p] as usize;
            let d = predicted[i] - predicted[j];
            let r2 = d.norm_squared();
            let r = r2.sqrt();
            let dir = if r > 1e-12 {
                d / r
            } else if i < j {
                Vector3::y()
            } else {
                -Vector3::y()
            };
            PairTerm {
                weight: kernel.weight_sq(r2),
                slope: kernel.gradient(r),
                distance: r,
                dir,
            }
        });

        let pairs = &self.pairs;
        let offsets = &self.neighbors.offsets;
        let rest = self.rest_density;
        let softness = self.softness;
        let self_weight = kernel.weight_sq(0.0);
        exec.fill(&mut self.lambdas, |i| {
            let terms = &pairs[offsets[i]..offsets[i + 1]];
            let density = self_weight + terms.iter().map(|t| t.weight).sum::<f64>();
            let c = density / rest - 1.0;
            if c <= 0.0 {
                return 0.0;
            }
            let mut grad_i = Vector3::zeros();
            let mut sum_sq = 0.0;
            for t in terms {
                let g = t.dir * (t.slope / rest);
                grad_i += g;
                sum_sq += g.norm_squared();
            }
            -c / (sum_sq + grad_i.norm_squared() + softness)
        });

        let lambdas = &self.lambdas;
        let contact = self.contact_distance;
        let margin = self.margin;
        let max_correction = self.max_correction;
        let weight = self.config.jacobi_weight / rest;
        let colliders = &bounds.colliders;
        let table = bounds.table;
        let contacts = &self.contacts;
        exec.fill(&mut self.moved, |i| {
            let terms = &pairs[offsets[i]..offsets[i + 1]];
            let js = &indices[offsets[i]..offsets[i + 1]];
            let li = lambdas[i];
            let mut delta = Vector3::zeros();
            for (t, &j) in terms.iter().zip(js) {
                let s = li + lambdas[j as usize];
                if s != 0.0 {
                    // the kernel gradient with respect to x_i points towards j
                    delta -= t.dir * (s * t.slope * weight);
                }
                if t.distance < contact {
                    delta += t.dir * (0.5 * (contact - t.distance));
                }
            }
            let len = delta.norm();
            if len > max_correction {
                delta *= max_correction / len;
            }
            let mut p = predicted[i] + delta;
            let mut hit = contacts[i];
            for (c, mc) in colliders.iter().enumerate() {
                if mc.current.may_touch(&p, margin) {
                    if let Some(normal) = mc.current.project(&mut p, margin) {
                        hit.surface = Surface::Wall(c);
                        hit.normal = normal;
                    }
                }
            }
            if let Some(floor) = table {
                if p.y < floor + margin {
                    hit.surface = Surface::Table;
                    hit.normal = Vector3::y();
                    p.y = floor + margin;
                }
            }
            (p, hit)
        });
        for (i, (p, hit)) in self.moved.iter().enumerate() {
            self.predicted[i] = *p;
            self.contacts[i] = *hit;
        }
    }
}

/// Removes inward normal velocity and up to `friction` (a speed) of the
/// tangential part.
#[inline]
fn slide(v: Vector3<f64>, normal: Vector3<f64>, friction: f64) -> Vector3<f64> {
    let vn = v.dot(&normal);
    let tangential = v - normal * vn;
    let speed = tangential.norm();
    let keep = if speed > friction {
        1.0 - friction / speed
    } else {
        0.0
    };
    normal * vn.max(0.0) + tangential * keep
}

/// Kernel sum and summed squared gradient at a site of a cubic lattice.
fn lattice_sums(kernel: &Kernel, spacing: f64) -> (f64, f64) {
    let reach = (kernel.h / spacing).ceil() as i32;
    let mut density = 0.0;
    let mut grad_sq = 0.0;
    for i in -reach..=reach {
        for j in -reach..=reach {
            for k in -reach..=reach {
                let r = spacing * ((i * i + j * j + k * k) as f64).sqrt();
                density += kernel.weight_sq(r * r);
                if r > 0.0 {
                    grad_sq += kernel.gradient(r).powi(2);
                }
            }
        }
    }
    (density, grad_sq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::containers::{SdfCollider, DEFAULT_WALL_THICKNESS};

    fn solver() -> Solver {
        Solver::new(SolverConfig::default())
    }

    #[test]
    fn ballistic_particle() {
        let mut s = solver();
        let mut state = ParticleState::new(vec![Point3::new(0.0, 1.0, 0.0)], 1.0);
        let report = s.step(&mut state, &Boundaries::default(), 0.005);
        assert!((state.velocities[0].y + 9.81 * 0.005).abs() < 1e-12);
        assert!(!report.unstable);
        // 10 ms is above MAX_DT, so cover it with a second 5 ms substep
        s.step(&mut state, &Boundaries::default(), 0.005);
        assert!((state.velocities[0].y + 0.0981).abs() < 1e-12);
    }

    #[test]
    fn particle_inside_wall_is_projected() {
        let spec = crate::containers::test_support::bottle(25.0, 100.0, 10.0);
        let collider = SdfCollider::new(&spec, DEFAULT_WALL_THICKNESS, Isometry3::identity());
        let bounds = Boundaries {
            colliders: vec![MovingCollider::fixed(collider.clone())],
            table: None,
        };
        let config = SolverConfig {
            margin_scale: 0.0,
            gravity: 0.0,
            ..SolverConfig::default()
        };
        let mut s = Solver::new(config);
        let mut state = ParticleState::new(vec![Point3::new(0.05, 0.0255, 0.0)], 1.0);
        assert!(collider.sdf(&state.positions[0]) < 0.0);
        s.step(&mut state, &bounds, 0.002);
        let d = collider.sdf(&state.positions[0]);
        assert!((0.0..1e-5).contains(&d), "{d}");
    }

    #[test]
    fn overlapping_pair_separates() {
        let config = SolverConfig {
            gravity: 0.0,
            ..SolverConfig::default()
        };
        let spacing = config.spacing();
        let mut s = Solver::new(config);
        let gap = 0.3 * spacing;
        let mut state = ParticleState::new(
            vec![Point3::new(0.0, 0.0, 0.0), Point3::new(gap, 0.0, 0.0)],
            1.0,
        );
        s.step(&mut state, &Boundaries::default(), 0.002);
        let after = (state.positions[1] - state.positions[0]).norm();
        assert!(after > gap, "{after} <= {gap}");
    }

    #[test]
    fn lattice_site_is_at_rest_density() {
        let config = SolverConfig::default();
        let spacing = config.spacing();
        let s = Solver::new(config);
        let kernel = s.kernel;
        let mut sum = 0.0;
        for i in -3i32..=3 {
            for j in -3i32..=3 {
                for k in -3i32..=3 {
                    let r2 = spacing * spacing * (i * i + j * j + k * k) as f64;
                    sum += kernel.weight_sq(r2);
                }
            }
        }
        assert!((sum / s.rest_density() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn slide_removes_inward_motion() {
        let v = slide(Vector3::new(1.0, -2.0, 0.0), Vector3::y(), 0.25);
        assert_eq!(v, Vector3::new(0.75, 0.0, 0.0));
        let v = slide(Vector3::new(0.1, -2.0, 0.0), Vector3::y(), 0.25);
        assert_eq!(v, Vector3::zeros());
        let v = slide(Vector3::new(0.0, 2.0, 0.0), Vector3::y(), 0.5);
        assert_eq!(v, Vector3::new(0.0, 2.0, 0.0));
    }

    #[test]
    fn parallel_step_is_bit_identical() {
        let mut pts = Vec::new();
        for i in 0..8 {
            for j in 0..8 {
                for k in 0..6 {
                    pts.push(Point3::new(
                        i as f64 * 0.009 + 0.0005 * (j as f64),
                        j as f64 * 0.009,
                        k as f64 * 0.009 - 0.0003 * (i as f64),
                    ));
                }
            }
        }
        let bounds = Boundaries {
            colliders: vec![],
            table: Some(-0.005),
        };
        let mut a = ParticleState::new(pts.clone(), 1.0);
        let mut b = ParticleState::new(pts, 1.0);
        let mut seq = solver();
        let mut par = Solver::new(SolverConfig {
            execution: Execution::Parallel,
            ..SolverConfig::default()
        });
        for _ in 0..20 {
            seq.step(&mut a, &bounds, 0.002);
            par.step(&mut b, &bounds, 0.002);
        }
        assert_eq!(a, b);
    }
}
