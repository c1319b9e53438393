//! Sim-to-real adaptation of a drone-racing gate pose regressor through an
//! odometry-driven state-consistency loss.

pub mod evaluation;
pub mod losses;
pub mod pose_algebra;
pub mod regressor;
pub mod scene_sim;
pub mod training;
