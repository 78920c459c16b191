//! Desk-scale particle fluid for pour scenes.
//!
//! A scene fills the pouring container in its start pose, drives it along
//! the pour motion as a kinematic collider above a standing receiving
//! container, lets the liquid settle and finally sorts every particle into
//! remaining, received or spilled.

mod neighbors;
mod scene;
mod solver;
mod state;

pub use neighbors::NeighborList;
pub use scene::{
    calibrate_particle_volume, classify_particles, fill_container, simulate_pour,
    simulate_pour_observed, write_dump_rows, ClassCounts, ParticleClass, PourOutcome, PourScene,
    SceneLayout, DUMP_HEADER,
};
pub use solver::{Boundaries, MovingCollider, Solver, SolverConfig, StepReport, MAX_DT};
pub use state::ParticleState;

use crate::kinematics::KinematicsError;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SimError {
    #[error("{volume} mL exceeds the {capacity} mL capacity of '{id}'")]
    Overfill {
        id: String,
        volume: f64,
        capacity: f64,
    },
    #[error("invalid simulation setting: {0}")]
    Config(String),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
}
