use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{gate_relative_pose, CameraIntrinsics, SimError};
use crate::pose_algebra::{Pose, Rotation, Vec3};

/// Consecutive orientation rejections before giving up.
pub const MAX_REJECTIONS: usize = 1000;

/// Random-waypoint flight in front of the gate. Distances are measured
/// along the gate normal, lateral offsets across it, altitude above the
/// floor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrajectoryConfig {
    pub distance: [f64; 2],
    pub lateral: [f64; 2],
    pub altitude: [f64; 2],
    /// m/s
    pub max_speed: f64,
    /// rad/s, applies to the yaw offset and tilt.
    pub max_yaw_rate: f64,
    /// Largest deviation of the heading from looking at the gate center.
    pub yaw_offset: f64,
    pub max_tilt: f64,
    pub waypoint_interval_s: f64,
    /// Time constant of the first-order position filter.
    pub smoothing_s: f64,
    /// Keep-out border, as a fraction of the image size.
    pub fov_margin: f64,
    pub min_depth: f64,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        TrajectoryConfig {
            distance: [1.2, 4.5],
            lateral: [-1.5, 1.5],
            altitude: [0.7, 1.6],
            max_speed: 1.0,
            max_yaw_rate: 0.6,
            yaw_offset: 0.3,
            max_tilt: 0.05,
            waypoint_interval_s: 2.0,
            smoothing_s: 0.4,
            fov_margin: 0.12,
            min_depth: 0.8,
        }
    }
}

impl TrajectoryConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let ranges = [self.distance, self.lateral, self.altitude];
        let finite = ranges.iter().flatten().all(|v| v.is_finite());
        if !finite || ranges.iter().any(|r| r[0] > r[1]) || self.distance[0] <= 0.0 {
            return Err(SimError::Config("trajectory ranges must be finite, ordered and in front of the gate".into()));
        }
        let non_neg = [self.max_speed, self.max_yaw_rate, self.yaw_offset, self.max_tilt, self.smoothing_s, self.min_depth];
        if non_neg.iter().any(|v| !(v.is_finite() && *v >= 0.0))
            || !(self.waypoint_interval_s > 0.0)
            || !(0.0..0.5).contains(&self.fov_margin)
        {
            return Err(SimError::Config("trajectory rates must be non-negative and the margin below 0.5".into()));
        }
        Ok(())
    }
}

/// Gate center at least `min_depth` ahead and inside the image minus a
/// border of `margin` on every side.
pub fn gate_in_fov(rel: &Pose, cam: &CameraIntrinsics, margin: f64, min_depth: f64) -> bool {
    if rel.t[0] < min_depth.max(f64::MIN_POSITIVE) {
        return false;
    }
    match cam.project(&rel.t) {
        Some((u, v)) => {
            let (mu, mv) = (margin * cam.width as f64, margin * cam.height as f64);
            u >= mu && u <= cam.width as f64 - mu && v >= mv && v <= cam.height as f64 - mv
        }
        None => false,
    }
}

#[derive(Clone, Copy)]
struct Attitude {
    yaw_offset: f64,
    pitch: f64,
    roll: f64,
}

impl Attitude {
    fn sample<R: Rng + ?Sized>(cfg: &TrajectoryConfig, rng: &mut R) -> Self {
        let sym = |rng: &mut R, a: f64| if a > 0.0 { rng.random_range(-a..=a) } else { 0.0 };
        Attitude {
            yaw_offset: sym(rng, cfg.yaw_offset),
            pitch: sym(rng, cfg.max_tilt),
            roll: sym(rng, cfg.max_tilt),
        }
    }

    fn step_toward(&mut self, target: &Attitude, max_step: f64) {
        let step = |cur: &mut f64, tgt: f64| *cur += (tgt - *cur).clamp(-max_step, max_step);
        step(&mut self.yaw_offset, target.yaw_offset);
        step(&mut self.pitch, target.pitch);
        step(&mut self.roll, target.roll);
    }
}

fn sample_waypoint<R: Rng + ?Sized>(cfg: &TrajectoryConfig, gate_world: &Pose, rng: &mut R) -> Vec3 {
    let pick = |rng: &mut R, r: [f64; 2]| if r[1] > r[0] { rng.random_range(r[0]..=r[1]) } else { r[0] };
    let d = pick(rng, cfg.distance);
    let l = pick(rng, cfg.lateral);
    let alt = pick(rng, cfg.altitude);
    let mut p = gate_world.transform_point(&[-d, l, 0.0]);
    p[2] = alt;
    p
}

fn drone_pose(pos: Vec3, att: &Attitude, gate_world: &Pose) -> Pose {
    let look = (gate_world.t[1] - pos[1]).atan2(gate_world.t[0] - pos[0]);
    let rot = Rotation::from_euler_zyx(look + att.yaw_offset, att.pitch, att.roll);
    Pose::from_parts(rot, pos)
}

/// Drone→world poses at `fps` for `n_frames`, keeping the gate center in
/// view. Orientations that violate the field-of-view predicate are
/// resampled.
pub fn sample_trajectory<R: Rng + ?Sized>(
    cfg: &TrajectoryConfig,
    gate_world: &Pose,
    cam: &CameraIntrinsics,
    n_frames: usize,
    fps: f64,
    rng: &mut R,
) -> Result<Vec<Pose>, SimError> {
    cfg.validate()?;
    if !(fps > 0.0) {
        return Err(SimError::Config("frame rate must be positive".into()));
    }
    let dt = 1.0 / fps;
    let alpha = dt / (cfg.smoothing_s + dt);
    let waypoint_steps = ((cfg.waypoint_interval_s * fps).round() as usize).max(1);

    let start = sample_waypoint(cfg, gate_world, rng);
    let (mut raw, mut pos) = (start, start);
    let mut target = start;
    let mut att = Attitude::sample(cfg, rng);
    let mut att_target = att;
    let mut poses = Vec::with_capacity(n_frames);

    for i in 0..n_frames {
        if i > 0 {
            if i % waypoint_steps == 0 {
                target = sample_waypoint(cfg, gate_world, rng);
                att_target = Attitude::sample(cfg, rng);
            }
            let delta = crate::pose_algebra::sub(&target, &raw);
            let dist = crate::pose_algebra::norm(&delta);
            let max_step = cfg.max_speed * dt;
            if dist > 0.0 {
                let s = (max_step / dist).min(1.0);
                raw = crate::pose_algebra::add(&raw, &crate::pose_algebra::scale(&delta, s));
            }
            for k in 0..3 {
                pos[k] += alpha * (raw[k] - pos[k]);
            }
            att.step_toward(&att_target, cfg.max_yaw_rate * dt);
        }

        let mut pose = drone_pose(pos, &att, gate_world);
        let mut rejections = 0;
        while !gate_in_fov(&gate_relative_pose(gate_world, &pose), cam, cfg.fov_margin, cfg.min_depth) {
            rejections += 1;
            if rejections >= MAX_REJECTIONS {
                return Err(SimError::TrajectoryInfeasible(rejections));
            }
            // Shrink toward a level, gate-centered heading as attempts pile up.
            let shrink = 1.0 - rejections as f64 / MAX_REJECTIONS as f64;
            let a = Attitude::sample(cfg, rng);
            att = Attitude { yaw_offset: a.yaw_offset * shrink, pitch: a.pitch * shrink, roll: a.roll * shrink };
            att_target = att;
            pose = drone_pose(pos, &att, gate_world);
        }
        poses.push(pose);
    }
    Ok(poses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene_sim::GateGeometry;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (Pose, CameraIntrinsics) {
        (GateGeometry::default().world_pose(), CameraIntrinsics::desk())
    }

    /// Independent projection check: gate center expressed in the drone
    /// frame through the transposed rotation, then the pinhole equations.
    fn oracle_visible(drone: &Pose, gate: &Pose, cam: &CameraIntrinsics, cfg: &TrajectoryConfig) -> bool {
        let d = [gate.t[0] - drone.t[0], gate.t[1] - drone.t[1], gate.t[2] - drone.t[2]];
        let m = drone.rot.matrix();
        let c: Vec<f64> = (0..3).map(|j| (0..3).map(|i| m[i][j] * d[i]).sum()).collect();
        if c[0] < cfg.min_depth {
            return false;
        }
        let u = cam.cx - cam.focal_px * c[1] / c[0];
        let v = cam.cy - cam.focal_px * c[2] / c[0];
        let (mu, mv) = (cfg.fov_margin * cam.width as f64, cfg.fov_margin * cam.height as f64);
        (mu..=cam.width as f64 - mu).contains(&u) && (mv..=cam.height as f64 - mv).contains(&v)
    }

    #[test]
    fn long_path_stays_in_view() {
        let (gate, cam) = setup();
        let cfg = TrajectoryConfig::default();
        let path = sample_trajectory(&cfg, &gate, &cam, 750, 25.0, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(path.len(), 750);
        assert!(path.iter().all(|p| oracle_visible(p, &gate, &cam, &cfg)));
        // Smooth: bounded per-frame displacement.
        for w in path.windows(2) {
            let step = crate::pose_algebra::norm(&crate::pose_algebra::sub(&w[1].t, &w[0].t));
            assert!(step <= cfg.max_speed / 25.0 + 1e-12);
        }
    }

    #[test]
    fn zero_rates_hover() {
        let (gate, cam) = setup();
        let cfg = TrajectoryConfig { max_speed: 0.0, max_yaw_rate: 0.0, ..TrajectoryConfig::default() };
        let path = sample_trajectory(&cfg, &gate, &cam, 50, 25.0, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        assert!(path.iter().all(|p| p.max_abs_diff(&path[0]) == 0.0));
        assert!(oracle_visible(&path[0], &gate, &cam, &cfg));
    }

    #[test]
    fn seeds_give_distinct_paths() {
        let (gate, cam) = setup();
        let cfg = TrajectoryConfig::default();
        let a = sample_trajectory(&cfg, &gate, &cam, 100, 25.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = sample_trajectory(&cfg, &gate, &cam, 100, 25.0, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let max = a.iter().zip(&b).map(|(p, q)| p.max_abs_diff(q)).fold(0.0, f64::max);
        assert!(max > 0.0);
    }

    #[test]
    fn impossible_region_is_reported() {
        let (gate, cam) = setup();
        // Hovering two meters below the gate center at one meter distance
        // can never see it with tilt limited to zero.
        let cfg = TrajectoryConfig {
            distance: [1.0, 1.0],
            altitude: [-1.0, -1.0],
            max_tilt: 0.0,
            ..TrajectoryConfig::default()
        };
        let err = sample_trajectory(&cfg, &gate, &cam, 5, 25.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap_err();
        assert!(matches!(err, SimError::TrajectoryInfeasible(MAX_REJECTIONS)));
    }
}
