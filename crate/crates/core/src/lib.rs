//! Learned grasp-distance fields over SE(3) poses and their use as a goal cost
//! in goal-set CHOMP trajectory optimization.

pub mod error;
pub mod field;
pub mod grasp;
pub mod kinematics;
pub mod levelset;
pub mod model;
pub mod optim;
pub mod planner;
pub mod se3;
pub mod seeds;
pub mod suite;
pub mod train;

pub use error::{Error, Result};
