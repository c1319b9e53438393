use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::pose_algebra::{compose, Pose, Rotation};

/// Drift is a random walk on (x, y, z, yaw) in the world frame; noise is a
/// per-reading perturbation in the body frame. Roll and pitch are left
/// untouched.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OdometryModel {
    /// m/√s per axis
    pub drift_rate: f64,
    /// rad/√s
    pub yaw_drift_rate: f64,
    /// m per axis
    pub noise_std: f64,
    /// rad
    pub yaw_noise_std: f64,
}

impl Default for OdometryModel {
    fn default() -> Self {
        OdometryModel::exact()
    }
}

impl OdometryModel {
    pub fn exact() -> Self {
        OdometryModel { drift_rate: 0.0, yaw_drift_rate: 0.0, noise_std: 0.0, yaw_noise_std: 0.0 }
    }

    pub fn onboard() -> Self {
        OdometryModel { drift_rate: 0.02, yaw_drift_rate: 0.005, noise_std: 0.005, yaw_noise_std: 0.002 }
    }

    pub fn is_valid(&self) -> bool {
        [self.drift_rate, self.yaw_drift_rate, self.noise_std, self.yaw_noise_std]
            .iter()
            .all(|v| v.is_finite() && *v >= 0.0)
    }
}

fn planar_pose(x: f64, y: f64, z: f64, yaw: f64) -> Pose {
    Pose::from_parts(Rotation::rot_z(yaw), [x, y, z])
}

fn gaussian<R: Rng + ?Sized>(std: f64, rng: &mut R) -> f64 {
    if std > 0.0 {
        Normal::new(0.0, std).expect("finite std").sample(rng)
    } else {
        0.0
    }
}

/// `measured[i] = drift[i] ∘ truth[i] ∘ noise[i]` with `drift[0] = I`.
pub fn simulate_odometry<R: Rng + ?Sized>(truth: &[Pose], model: &OdometryModel, dt: f64, rng: &mut R) -> Vec<Pose> {
    let sq = dt.max(0.0).sqrt();
    let mut drift = [0.0f64; 4];
    truth
        .iter()
        .enumerate()
        .map(|(i, pose)| {
            if i > 0 {
                for k in 0..3 {
                    drift[k] += gaussian(model.drift_rate * sq, rng);
                }
                drift[3] += gaussian(model.yaw_drift_rate * sq, rng);
            }
            let noise = planar_pose(
                gaussian(model.noise_std, rng),
                gaussian(model.noise_std, rng),
                gaussian(model.noise_std, rng),
                gaussian(model.yaw_noise_std, rng),
            );
            let d = planar_pose(drift[0], drift[1], drift[2], drift[3]);
            compose(&compose(&d, pose), &noise)
        })
        .collect()
}
