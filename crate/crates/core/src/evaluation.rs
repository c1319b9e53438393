//! Bias calibration, error metrics and correlation on labeled test frames.

use serde::{Deserialize, Serialize};

use crate::pose_algebra::{vector9_to_pose, wrap_angle, yaw_unchecked, Pose, PoseVector9};
use crate::regressor::ModelParams;
use crate::scene_sim::{derive_seed, Sequence};
use crate::training::{finetune_sc, predict, FinetuneConfig, InputFilter, TrainError};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("no data: {0}")]
    DataEmpty(&'static str),
    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("correlation is undefined for a constant series")]
    ZeroVariance,
    #[error("{0} metrics are not reported")]
    Unsupported(&'static str),
    #[error("test sequence {0} has no ground truth")]
    MissingGroundTruth(usize),
    #[error("prediction {0} has a degenerate rotation")]
    DegeneratePrediction(usize),
    #[error("invalid evaluation configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Train(#[from] TrainError),
}

/// Pose components with a defined metric.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Component {
    X,
    Y,
    Z,
    Yaw,
    Roll,
    Pitch,
}

impl Component {
    /// Per-frame values; roll and pitch are rejected.
    pub fn series(self, poses: &[Pose]) -> Result<Vec<f64>, EvalError> {
        let axis = |k: usize| poses.iter().map(|p| p.t[k]).collect();
        match self {
            Component::X => Ok(axis(0)),
            Component::Y => Ok(axis(1)),
            Component::Z => Ok(axis(2)),
            Component::Yaw => Ok(poses.iter().map(yaw_unchecked).collect()),
            Component::Roll => Err(EvalError::Unsupported("roll")),
            Component::Pitch => Err(EvalError::Unsupported("pitch")),
        }
    }
}

fn check_aligned<A, B>(a: &[A], b: &[B]) -> Result<(), EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(EvalError::DataEmpty("metrics need at least one frame"));
    }
    Ok(())
}

/// Mean of `gt.t − pred.t`, in meters.
pub fn calibrate_bias(preds: &[Pose], gts: &[Pose]) -> Result<[f64; 3], EvalError> {
    check_aligned(preds, gts)?;
    let n = preds.len() as f64;
    let mut off = [0.0; 3];
    for (p, g) in preds.iter().zip(gts) {
        for k in 0..3 {
            off[k] += g.t[k] - p.t[k];
        }
    }
    Ok(off.map(|o| o / n))
}

/// Adds `offset` to every predicted position; orientations are untouched.
pub fn apply_offset(preds: &[Pose], offset: [f64; 3]) -> Vec<Pose> {
    preds
        .iter()
        .map(|p| Pose::from_parts(p.rot, [p.t[0] + offset[0], p.t[1] + offset[1], p.t[2] + offset[2]]))
        .collect()
}

/// Mean absolute errors; positions in cm, yaw in degrees on the wrapped difference.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mae {
    pub x_cm: f64,
    pub y_cm: f64,
    pub z_cm: f64,
    pub yaw_deg: f64,
}

pub fn mae(preds: &[Pose], gts: &[Pose]) -> Result<Mae, EvalError> {
    check_aligned(preds, gts)?;
    let n = preds.len() as f64;
    let mut acc = [0.0; 4];
    for (p, g) in preds.iter().zip(gts) {
        for k in 0..3 {
            acc[k] += (p.t[k] - g.t[k]).abs();
        }
        acc[3] += wrap_angle(yaw_unchecked(p) - yaw_unchecked(g)).abs();
    }
    Ok(Mae {
        x_cm: 100.0 * acc[0] / n,
        y_cm: 100.0 * acc[1] / n,
        z_cm: 100.0 * acc[2] / n,
        yaw_deg: (acc[3] / n).to_degrees(),
    })
}

/// Mean over frames and the three axes of the squared position error, cm².
pub fn mse_xyz_cm2(preds: &[Pose], gts: &[Pose]) -> Result<f64, EvalError> {
    check_aligned(preds, gts)?;
    let sum: f64 = preds
        .iter()
        .zip(gts)
        .map(|(p, g)| (0..3).map(|k| (100.0 * (p.t[k] - g.t[k])).powi(2)).sum::<f64>())
        .sum();
    Ok(sum / (3 * preds.len()) as f64)
}

/// Sample Pearson correlation.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64, EvalError> {
    check_aligned(a, b)?;
    if a.len() < 2 {
        return Err(EvalError::DataEmpty("correlation needs two samples"));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    // Relative threshold: a series that is constant up to round-off counts as constant.
    let scale = |m: f64| (m.abs().max(1.0) * 1e-12).powi(2) * n;
    if saa <= scale(ma) || sbb <= scale(mb) {
        return Err(EvalError::ZeroVariance);
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

pub fn circular_mean(angles: &[f64]) -> f64 {
    let (s, c) = angles.iter().fold((0.0, 0.0), |(s, c), a| (s + a.sin(), c + a.cos()));
    s.atan2(c)
}

/// Circular correlation of two angle series, sine deviations from their
/// circular means.
pub fn circular_pearson(a: &[f64], b: &[f64]) -> Result<f64, EvalError> {
    check_aligned(a, b)?;
    if a.len() < 2 {
        return Err(EvalError::DataEmpty("correlation needs two samples"));
    }
    let (ma, mb) = (circular_mean(a), circular_mean(b));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (sx, sy) = ((x - ma).sin(), (y - mb).sin());
        sab += sx * sy;
        saa += sx * sx;
        sbb += sy * sy;
    }
    let floor = 1e-24 * a.len() as f64;
    if saa <= floor || sbb <= floor {
        return Err(EvalError::ZeroVariance);
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

fn defined(r: Result<f64, EvalError>) -> Result<Option<f64>, EvalError> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(EvalError::ZeroVariance) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Where the position offset is estimated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum CalibrationPolicy {
    /// Offset from the whole test set, which is also scored.
    #[default]
    FullTestSet,
    /// Offset from the first `sequences` test sequences, which are then
    /// excluded from scoring.
    HeldOut { sequences: usize },
    None,
}

/// Metrics of one method on one test set. Undefined correlations are `None`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub mse_xyz_cm2: f64,
    pub mae: Mae,
    pub rho_x: Option<f64>,
    pub rho_y: Option<f64>,
    pub rho_z: Option<f64>,
    pub rho_yaw: Option<f64>,
    pub offset: [f64; 3],
    pub n_test: usize,
}

/// Metrics of already calibrated predictions.
pub fn metrics(preds: &[Pose], gts: &[Pose]) -> Result<Metrics, EvalError> {
    check_aligned(preds, gts)?;
    let series = |c: Component, p: &[Pose]| c.series(p);
    let rho = |c: Component| -> Result<Option<f64>, EvalError> { defined(pearson(&series(c, preds)?, &series(c, gts)?)) };
    Ok(Metrics {
        mse_xyz_cm2: mse_xyz_cm2(preds, gts)?,
        mae: mae(preds, gts)?,
        rho_x: rho(Component::X)?,
        rho_y: rho(Component::Y)?,
        rho_z: rho(Component::Z)?,
        rho_yaw: defined(circular_pearson(&series(Component::Yaw, preds)?, &series(Component::Yaw, gts)?))?,
        offset: [0.0; 3],
        n_test: preds.len(),
    })
}

/// Calibrates per `policy` and scores. `seq_lens` gives the number of
/// frames of each test sequence, in order.
pub fn evaluate_poses(
    preds: &[Pose],
    gts: &[Pose],
    seq_lens: &[usize],
    policy: CalibrationPolicy,
) -> Result<Metrics, EvalError> {
    check_aligned(preds, gts)?;
    if seq_lens.iter().sum::<usize>() != preds.len() {
        return Err(EvalError::Config("sequence lengths do not cover the predictions".into()));
    }
    let (offset, start) = match policy {
        CalibrationPolicy::None => ([0.0; 3], 0),
        CalibrationPolicy::FullTestSet => (calibrate_bias(preds, gts)?, 0),
        CalibrationPolicy::HeldOut { sequences } => {
            if sequences == 0 || sequences >= seq_lens.len() {
                return Err(EvalError::Config(format!(
                    "held-out calibration needs between 1 and {} sequences",
                    seq_lens.len().saturating_sub(1)
                )));
            }
            let cut: usize = seq_lens[..sequences].iter().sum();
            (calibrate_bias(&preds[..cut], &gts[..cut])?, cut)
        }
    };
    let calibrated = apply_offset(&preds[start..], offset);
    Ok(Metrics { offset, ..metrics(&calibrated, &gts[start..])? })
}

/// Ground-truth poses and per-sequence frame counts of a labeled test split.
pub fn test_labels(test: &[&Sequence]) -> Result<(Vec<Pose>, Vec<usize>), EvalError> {
    let mut gts = Vec::new();
    let mut lens = Vec::with_capacity(test.len());
    for s in test {
        for x in &s.samples {
            gts.push(x.gt_gate.ok_or(EvalError::MissingGroundTruth(s.index))?);
        }
        lens.push(s.samples.len());
    }
    if gts.is_empty() {
        return Err(EvalError::DataEmpty("test split has no frames"));
    }
    Ok((gts, lens))
}

/// Decodes raw network outputs; a degenerate 6D block is an error.
pub fn decode_predictions(raw: &[[f64; 9]]) -> Result<Vec<Pose>, EvalError> {
    raw.iter()
        .enumerate()
        .map(|(i, r)| vector9_to_pose(&PoseVector9::from_slice(r)).map_err(|_| EvalError::DegeneratePrediction(i)))
        .collect()
}

/// Eval-mode inference on every test frame, then calibration and scoring.
pub fn evaluate(
    params: &ModelParams,
    test: &[&Sequence],
    filter: InputFilter,
    policy: CalibrationPolicy,
) -> Result<Metrics, EvalError> {
    let (gts, lens) = test_labels(test)?;
    let images: Vec<_> = test.iter().flat_map(|s| s.samples.iter().map(|x| &x.image)).collect();
    let preds = decode_predictions(&predict(params, &images, filter, 64)?)?;
    evaluate_poses(&preds, &gts, &lens, policy)
}

/// Scores a predictor that emits the same pose for every frame.
pub fn evaluate_constant(pose: &PoseVector9, test: &[&Sequence], policy: CalibrationPolicy) -> Result<Metrics, EvalError> {
    let (gts, lens) = test_labels(test)?;
    let p = vector9_to_pose(pose).map_err(|_| EvalError::DegeneratePrediction(0))?;
    evaluate_poses(&vec![p; gts.len()], &gts, &lens, policy)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub method: String,
    pub metrics: Metrics,
    pub seed: u64,
}

const METRIC_HEADER: &str = "mse_xyz_cm2,mae_x_cm,mae_y_cm,mae_z_cm,mae_yaw_deg,rho_x,rho_y,rho_z,rho_yaw,n_test";

fn metric_fields(m: &Metrics) -> String {
    let rho = |r: Option<f64>| r.map(|v| format!("{v:.6}")).unwrap_or_default();
    format!(
        "{:.6},{:.6},{:.6},{:.6},{:.6},{},{},{},{},{}",
        m.mse_xyz_cm2,
        m.mae.x_cm,
        m.mae.y_cm,
        m.mae.z_cm,
        m.mae.yaw_deg,
        rho(m.rho_x),
        rho(m.rho_y),
        rho(m.rho_z),
        rho(m.rho_yaw),
        m.n_test
    )
}

/// One row per method; undefined correlations are empty fields.
pub fn results_csv(rows: &[ResultRow]) -> String {
    let mut out = format!("method,{METRIC_HEADER},seed\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.method, metric_fields(&r.metrics), r.seed));
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub sequences: usize,
    pub metrics: Metrics,
    pub seed: u64,
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = format!("sequences,{METRIC_HEADER},seed\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.sequences, metric_fields(&r.metrics), r.seed));
    }
    out
}

/// Fine-tuning seed for a run that uses `sequences` training sequences;
/// shared by the main experiment and the ablation so their full-set runs
/// coincide.
pub fn finetune_seed(run_seed: u64, sequences: usize) -> u64 {
    derive_seed(derive_seed(run_seed, 0xF17E), sequences as u64)
}

/// Fine-tunes from `pretrained` on the first `n` real training sequences
/// for each `n` in `counts`, then evaluates.
#[allow(clippy::too_many_arguments)]
pub fn ablation(
    counts: &[usize],
    pretrained: &ModelParams,
    real_train: &[&Sequence],
    real_val: &[&Sequence],
    test: &[&Sequence],
    cfg: &FinetuneConfig,
    policy: CalibrationPolicy,
    run_seed: u64,
) -> Result<Vec<AblationRow>, EvalError> {
    if let Some(&n) = counts.iter().find(|&&n| n == 0 || n > real_train.len()) {
        return Err(EvalError::Config(format!("sequence count {n} is outside 1..={}", real_train.len())));
    }
    counts
        .iter()
        .map(|&n| {
            let seed = finetune_seed(run_seed, n);
            let out = finetune_sc(cfg, pretrained, &real_train[..n], real_val, seed, None)?;
            let metrics = evaluate(&out.params, test, cfg.input_filter, policy)?;
            Ok(AblationRow { sequences: n, metrics, seed: run_seed })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose_algebra::Rotation;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_poses(n: usize, seed: u64) -> Vec<Pose> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let yaw = rng.random_range(-PI..PI);
                let t = [rng.random_range(1.0..4.0), rng.random_range(-1.0..1.0), rng.random_range(-0.5..0.5)];
                Pose::from_parts(Rotation::from_euler_zyx(yaw, rng.random_range(-0.1..0.1), 0.0), t)
            })
            .collect()
    }

    fn shifted(p: &[Pose], d: [f64; 3]) -> Vec<Pose> {
        apply_offset(p, d)
    }

    #[test]
    fn calibration_examples() {
        let gts = random_poses(50, 1);
        assert_eq!(calibrate_bias(&gts, &gts).unwrap(), [0.0; 3]);
        let preds = shifted(&gts, [-0.5, 0.0, 0.0]);
        let off = calibrate_bias(&preds, &gts).unwrap();
        assert!((off[0] - 0.5).abs() < 1e-12 && off[1].abs() < 1e-12 && off[2].abs() < 1e-12);
        let m = mae(&apply_offset(&preds, off), &gts).unwrap();
        assert!(m.x_cm < 1e-9);
        assert!(matches!(calibrate_bias(&[], &[]), Err(EvalError::DataEmpty(_))));
    }

    #[test]
    fn calibration_zeroes_mean_error_and_is_idempotent() {
        let gts = random_poses(200, 2);
        let preds = random_poses(200, 3);
        let off = calibrate_bias(&preds, &gts).unwrap();
        let cal = apply_offset(&preds, off);
        for k in 0..3 {
            let mean: f64 = cal.iter().zip(&gts).map(|(p, g)| p.t[k] - g.t[k]).sum::<f64>() / 200.0;
            assert!(mean.abs() < 1e-12);
        }
        let again = calibrate_bias(&cal, &gts).unwrap();
        assert!(again.iter().all(|o| o.abs() < 1e-12));
        for (a, b) in cal.iter().zip(&preds) {
            assert_eq!(a.rot, b.rot);
        }
    }

    #[test]
    fn mae_examples() {
        let gts = random_poses(20, 4);
        let z = mae(&gts, &gts).unwrap();
        assert_eq!((z.x_cm, z.y_cm, z.z_cm, z.yaw_deg), (0.0, 0.0, 0.0, 0.0));
        let m = mae(&shifted(&gts, [0.1, 0.0, 0.0]), &gts).unwrap();
        assert!((m.x_cm - 10.0).abs() < 1e-9);
        let a = Pose::from_parts(Rotation::rot_z(179f64.to_radians()), [0.0; 3]);
        let b = Pose::from_parts(Rotation::rot_z((-179f64).to_radians()), [0.0; 3]);
        assert!((mae(&[a], &[b]).unwrap().yaw_deg - 2.0).abs() < 1e-9);
        assert!(matches!(mae(&[a], &[]), Err(EvalError::LengthMismatch(1, 0))));
    }

    #[test]
    fn mse_counts_every_axis() {
        let gts = random_poses(10, 5);
        let m = mse_xyz_cm2(&shifted(&gts, [0.1, 0.2, 0.0]), &gts).unwrap();
        assert!((m - (100.0 + 400.0) / 3.0).abs() < 1e-9);
    }

    #[test]
    fn pearson_examples() {
        let a: Vec<f64> = (0..30).map(|i| (i as f64 * 0.37).sin() + 0.1 * i as f64).collect();
        let neg: Vec<f64> = a.iter().map(|x| -x).collect();
        let off: Vec<f64> = a.iter().map(|x| x + 7.5).collect();
        assert!((pearson(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&neg, &a).unwrap() + 1.0).abs() < 1e-12);
        assert!((pearson(&off, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(pearson(&[2.0; 5], &a[..5]), Err(EvalError::ZeroVariance)));
        assert!(matches!(pearson(&[1.0], &[1.0]), Err(EvalError::DataEmpty(_))));
    }

    #[test]
    fn pearson_against_covariance_oracle() {
        // Covariance and variances by the two-pass textbook formulas with n − 1.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a: Vec<f64> = (0..100).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = a.iter().map(|x| 0.5 * x + rng.random_range(-0.5..0.5)).collect();
        let n = a.len() as f64;
        let mean = |v: &[f64]| v.iter().sum::<f64>() / n;
        let (ma, mb) = (mean(&a), mean(&b));
        let cov = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (n - 1.0);
        let sa = (a.iter().map(|x| (x - ma).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let sb = (b.iter().map(|y| (y - mb).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((pearson(&a, &b).unwrap() - cov / (sa * sb)).abs() < 1e-12);
    }

    #[test]
    fn circular_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a: Vec<f64> = (0..200).map(|_| rng.random_range(-1.0..1.0)).collect();
        assert!((circular_pearson(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let rotated: Vec<f64> = a.iter().map(|x| wrap_angle(x + 2.5)).collect();
        assert!((circular_pearson(&rotated, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(circular_pearson(&[0.3; 4], &a[..4]), Err(EvalError::ZeroVariance)));
    }

    #[test]
    fn circular_independent_uniform_is_near_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 10_000;
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(-PI..PI)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-PI..PI)).collect();
        assert!(circular_pearson(&a, &b).unwrap().abs() < 0.05);
    }

    #[test]
    fn roll_and_pitch_are_unsupported() {
        let p = random_poses(3, 9);
        assert!(matches!(Component::Roll.series(&p), Err(EvalError::Unsupported("roll"))));
        assert!(matches!(Component::Pitch.series(&p), Err(EvalError::Unsupported("pitch"))));
        assert_eq!(Component::Z.series(&p).unwrap()[1], p[1].t[2]);
    }

    #[test]
    fn perfect_and_constant_predictors() {
        let gts = random_poses(60, 10);
        let m = evaluate_poses(&gts, &gts, &[60], CalibrationPolicy::FullTestSet).unwrap();
        assert_eq!(m.mse_xyz_cm2, 0.0);
        assert_eq!(m.mae.yaw_deg, 0.0);
        for r in [m.rho_x, m.rho_y, m.rho_z, m.rho_yaw] {
            assert!((r.unwrap() - 1.0).abs() < 1e-12);
        }

        let mean = crate::training::mean_predictor(&gts).unwrap();
        let p = vector9_to_pose(&mean).unwrap();
        let m = evaluate_poses(&vec![p; 60], &gts, &[60], CalibrationPolicy::FullTestSet).unwrap();
        assert_eq!((m.rho_x, m.rho_y, m.rho_z, m.rho_yaw), (None, None, None, None));
        let mad = gts.iter().map(|g| (g.t[0] - p.t[0]).abs()).sum::<f64>() / 60.0 * 100.0;
        assert!((m.mae.x_cm - mad).abs() < 1e-9);
    }

    #[test]
    fn held_out_policy_scores_only_the_rest() {
        let gts = random_poses(30, 11);
        let preds = shifted(&gts, [0.2, -0.1, 0.0]);
        let m = evaluate_poses(&preds, &gts, &[10, 20], CalibrationPolicy::HeldOut { sequences: 1 }).unwrap();
        assert_eq!(m.n_test, 20);
        assert!(m.mse_xyz_cm2 < 1e-18);
        assert!((m.offset[0] + 0.2).abs() < 1e-12);
        let raw = evaluate_poses(&preds, &gts, &[10, 20], CalibrationPolicy::None).unwrap();
        assert!((raw.mae.x_cm - 20.0).abs() < 1e-9);
        assert!(evaluate_poses(&preds, &gts, &[10, 20], CalibrationPolicy::HeldOut { sequences: 2 }).is_err());
        assert!(evaluate_poses(&preds, &gts, &[10, 10], CalibrationPolicy::None).is_err());
    }

    #[test]
    fn results_csv_leaves_undefined_rho_empty() {
        let m = Metrics {
            mse_xyz_cm2: 1.5,
            mae: Mae { x_cm: 1.0, y_cm: 2.0, z_cm: 3.0, yaw_deg: 4.0 },
            rho_x: None,
            rho_y: Some(0.5),
            rho_z: None,
            rho_yaw: None,
            offset: [0.0; 3],
            n_test: 7,
        };
        let csv = results_csv(&[ResultRow { method: "mean-predictor".into(), metrics: m, seed: 3 }]);
        assert_eq!(
            csv,
            "method,mse_xyz_cm2,mae_x_cm,mae_y_cm,mae_z_cm,mae_yaw_deg,rho_x,rho_y,rho_z,rho_yaw,n_test,seed\n\
             mean-predictor,1.500000,1.000000,2.000000,3.000000,4.000000,,0.500000,,,7,3\n"
        );
        assert!(ablation_csv(&[]).starts_with("sequences,mse_xyz_cm2,"));
    }

    #[test]
    fn empty_ablation_is_empty() {
        let p = crate::regressor::init_model(&crate::regressor::ModelConfig::default(), 0).unwrap();
        let rows = ablation(&[], &p, &[], &[], &[], &FinetuneConfig::desk(), CalibrationPolicy::FullTestSet, 0).unwrap();
        assert!(rows.is_empty());
        let err = ablation(&[1], &p, &[], &[], &[], &FinetuneConfig::desk(), CalibrationPolicy::FullTestSet, 0);
        assert!(matches!(err, Err(EvalError::Config(_))));
    }

    proptest! {
        #[test]
        fn correlations_ignore_offsets_mae_does_not(seed in any::<u64>(), dx in -2.0f64..2.0, dyaw in -3.0f64..3.0) {
            let gts = random_poses(40, seed);
            let preds = random_poses(40, seed ^ 0xABCD);
            let moved: Vec<Pose> = preds
                .iter()
                .map(|p| Pose::from_parts(Rotation::rot_z(dyaw).mul(&p.rot), [p.t[0] + dx, p.t[1], p.t[2]]))
                .collect();
            let a = metrics(&preds, &gts).unwrap();
            let b = metrics(&moved, &gts).unwrap();
            prop_assert!((a.rho_x.unwrap() - b.rho_x.unwrap()).abs() < 1e-9);
            prop_assert!((a.rho_yaw.unwrap() - b.rho_yaw.unwrap()).abs() < 1e-9);
            let cal_a = evaluate_poses(&preds, &gts, &[40], CalibrationPolicy::FullTestSet).unwrap();
            prop_assert!((cal_a.rho_x.unwrap() - a.rho_x.unwrap()).abs() < 1e-12);
            if dx.abs() > 0.5 {
                prop_assert!(b.mae.x_cm != a.mae.x_cm);
            }
        }
    }
}
