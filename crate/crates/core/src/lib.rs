//! Pouring planner for lab containers with small openings.
//!
//! Pours are generated as rotations about the liquid exit point, simulated
//! with a small position-based particle fluid over a parameter grid, and the
//! resulting database is searched for the cheapest pour for a requested
//! start and goal volume.

pub mod analysis;
pub mod cli;
pub mod containers;
pub mod exec;
pub mod fluidsim;
pub mod kinematics;
pub mod selector;
pub mod sweep;
