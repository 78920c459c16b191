use nalgebra::{Point3, Vector3};

/// Particle positions and velocities; every particle carries the same
/// liquid volume.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleState {
    pub positions: Vec<Point3<f64>>,
    pub velocities: Vec<Vector3<f64>>,
    /// mL per particle.
    pub particle_volume: f64,
}

impl ParticleState {
    pub fn new(positions: Vec<Point3<f64>>, particle_volume: f64) -> Self {
        let velocities = vec![Vector3::zeros(); positions.len()];
        Self {
            positions,
            velocities,
            particle_volume,
        }
    }

    pub fn empty(particle_volume: f64) -> Self {
        Self::new(Vec::new(), particle_volume)
    }

    pub fn count(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn max_speed(&self) -> f64 {
        self.velocities.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Checks the structural invariants.
    pub fn is_valid(&self) -> bool {
        self.positions.len() == self.velocities.len()
            && self.particle_volume > 0.0
            && self
                .positions
                .iter()
                .all(|p| p.iter().all(|c| c.is_finite()))
            && self
                .velocities
                .iter()
                .all(|v| v.iter().all(|c| c.is_finite()))
    }
}
