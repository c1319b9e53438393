//! Training objectives with analytic gradients.
//!
//! All losses take network outputs as `[N, 9]` tensors laid out as
//! `[t (3), first rotation column (3), second rotation column (3)]` and
//! return gradients of the same shape, ready for `regressor::backward`.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::pose_algebra::{
    gram_schmidt, mat_mul, mat_transpose, mat_vec, pose_to_vector9, Mat3, Pose, Rot6D, Vec3, WarpOrder,
};
use crate::regressor::Tensor;

pub const POSE_DIM: usize = 9;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum LossError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("empty batch")]
    EmptyBatch,
    #[error("need at least {need} samples per side, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("bandwidths must be positive and finite")]
    BadBandwidth,
}

/// Per-component weights: position entries and 6D entries.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub position: f64,
    pub rotation: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { position: 1.0, rotation: 1.0 }
    }
}

impl LossWeights {
    fn component(&self, c: usize) -> f64 {
        if c < 3 {
            self.position
        } else {
            self.rotation
        }
    }
}

fn check_rows(t: &Tensor, cols: usize, rows: Option<usize>) -> Result<usize, LossError> {
    let shape = t.shape();
    let ok = shape.len() == 2 && shape[1] == cols && rows.is_none_or(|r| shape[0] == r);
    if !ok {
        return Err(LossError::ShapeMismatch {
            expected: match rows {
                Some(r) => format!("[{r}, {cols}]"),
                None => format!("[N, {cols}]"),
            },
            got: format!("{shape:?}"),
        });
    }
    Ok(shape[0])
}

fn encode(p: &Pose) -> [f64; POSE_DIM] {
    pose_to_vector9(p).to_array()
}

/// Mean squared error over the batch and the nine components against
/// encoded ground-truth poses.
pub fn pose_loss(pred: &Tensor, gt: &[Pose], w: &LossWeights) -> Result<(f64, Tensor), LossError> {
    let n = check_rows(pred, POSE_DIM, Some(gt.len()))?;
    if n == 0 {
        return Err(LossError::EmptyBatch);
    }
    let norm = 1.0 / (n * POSE_DIM) as f64;
    let mut grad = Tensor::zeros(vec![n, POSE_DIM]);
    let mut loss = 0.0;
    for (i, g) in gt.iter().enumerate() {
        let target = encode(g);
        let row = pred.row(i);
        for c in 0..POSE_DIM {
            let d = row[c] - target[c];
            let wc = w.component(c);
            loss += wc * d * d;
            grad.data_mut()[i * POSE_DIM + c] = 2.0 * wc * d * norm;
        }
    }
    Ok((loss * norm, grad))
}

/// Result of the state-consistency loss over a batch of pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct ScOutput {
    /// Mean over valid pairs; 0 when every pair was skipped.
    pub value: f64,
    pub grad1: Tensor,
    pub grad2: Tensor,
    pub valid: usize,
    /// Pairs whose first prediction has no valid rotation decode.
    pub skipped: usize,
}

/// Warps the first prediction of each pair with the odometry poses and
/// compares the re-encoded result against the second prediction.
/// `odom[i] = (o1, o2)` are drone→world poses at the two capture times.
pub fn state_consistency_loss(
    pred1: &Tensor,
    pred2: &Tensor,
    odom: &[(Pose, Pose)],
    order: WarpOrder,
    w: &LossWeights,
) -> Result<ScOutput, LossError> {
    let n = check_rows(pred1, POSE_DIM, Some(odom.len()))?;
    check_rows(pred2, POSE_DIM, Some(n))?;
    if n == 0 {
        return Err(LossError::EmptyBatch);
    }

    struct PairTerm {
        i: usize,
        resid: [f64; POSE_DIM],
        gs: crate::pose_algebra::GramSchmidt,
        left: Pose,
        right: Pose,
    }

    let mut terms = Vec::with_capacity(n);
    let mut skipped = 0;
    for (i, (o1, o2)) in odom.iter().enumerate() {
        let p1 = pred1.row(i);
        let gs = match gram_schmidt(&Rot6D([p1[3], p1[4], p1[5], p1[6], p1[7], p1[8]])) {
            Ok(gs) if p1[..3].iter().all(|v| v.is_finite()) => gs,
            _ => {
                skipped += 1;
                continue;
            }
        };
        let p1_hat = Pose::from_parts(gs.rotation(), [p1[0], p1[1], p1[2]]);
        let (left, right) = order.factors(o1, o2);
        let warped = encode(&left.compose(&p1_hat).compose(&right));
        let p2 = pred2.row(i);
        let mut resid = [0.0; POSE_DIM];
        for c in 0..POSE_DIM {
            resid[c] = warped[c] - p2[c];
        }
        terms.push(PairTerm { i, resid, gs, left, right });
    }

    let valid = terms.len();
    let mut grad1 = Tensor::zeros(vec![n, POSE_DIM]);
    let mut grad2 = Tensor::zeros(vec![n, POSE_DIM]);
    if valid == 0 {
        return Ok(ScOutput { value: 0.0, grad1, grad2, valid, skipped });
    }
    let norm = 1.0 / (valid * POSE_DIM) as f64;
    let mut value = 0.0;
    for term in &terms {
        let mut e = [0.0; POSE_DIM];
        for c in 0..POSE_DIM {
            let wc = w.component(c);
            value += wc * term.resid[c] * term.resid[c];
            e[c] = 2.0 * wc * term.resid[c] * norm;
            grad2.data_mut()[term.i * POSE_DIM + c] = -e[c];
        }
        // Warped rotation  Lr·R1·Rr, warped translation  Lr·(R1·Rt + t1) + Lt.
        let g_wt: Vec3 = [e[0], e[1], e[2]];
        let mut g_wr: Mat3 = [[0.0; 3]; 3];
        for r in 0..3 {
            g_wr[r][0] = e[3 + r];
            g_wr[r][1] = e[6 + r];
        }
        let lrt = mat_transpose(term.left.rot.matrix());
        let rrt = mat_transpose(term.right.rot.matrix());
        let g_t1 = mat_vec(&lrt, &g_wt);
        let mut g_r1 = mat_mul(&mat_mul(&lrt, &g_wr), &rrt);
        let rt = term.right.t;
        for r in 0..3 {
            for c in 0..3 {
                g_r1[r][c] += g_t1[r] * rt[c];
            }
        }
        let col = |j: usize| [g_r1[0][j], g_r1[1][j], g_r1[2][j]];
        let g6 = term.gs.backward(&col(0), &col(1), &col(2));
        let row = &mut grad1.data_mut()[term.i * POSE_DIM..(term.i + 1) * POSE_DIM];
        row[..3].copy_from_slice(&g_t1);
        row[3..].copy_from_slice(&g6);
    }
    Ok(ScOutput { value: value * norm, grad1, grad2, valid, skipped })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MmdEstimator {
    #[default]
    Unbiased,
    Biased,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MmdOutput {
    pub value: f64,
    pub grad_src: Tensor,
    pub grad_tgt: Tensor,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Median pairwise distance of the pooled sample scaled by 0.5, 1 and 2.
/// Falls back to a unit median when all points coincide.
pub fn median_bandwidths(src: &Tensor, tgt: &Tensor) -> Vec<f64> {
    let rows: Vec<&[f64]> = (0..src.shape()[0]).map(|i| src.row(i)).chain((0..tgt.shape()[0]).map(|i| tgt.row(i))).collect();
    let mut d = Vec::with_capacity(rows.len() * rows.len() / 2);
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            d.push(sq_dist(rows[i], rows[j]).sqrt());
        }
    }
    d.sort_by(f64::total_cmp);
    let med = if d.is_empty() {
        0.0
    } else if d.len() % 2 == 1 {
        d[d.len() / 2]
    } else {
        0.5 * (d[d.len() / 2 - 1] + d[d.len() / 2])
    };
    let med = if med > 0.0 && med.is_finite() { med } else { 1.0 };
    vec![0.5 * med, med, 2.0 * med]
}

/// Multi-kernel Gaussian MMD², summed over bandwidths.
pub fn mmd_loss(src: &Tensor, tgt: &Tensor, bandwidths: &[f64], est: MmdEstimator) -> Result<MmdOutput, LossError> {
    let n = check_rows(src, src.shape().get(1).copied().unwrap_or(0), None)?;
    let dim = src.shape()[1];
    let m = check_rows(tgt, dim, None)?;
    let need = if est == MmdEstimator::Unbiased { 2 } else { 1 };
    if n.min(m) < need {
        return Err(LossError::TooFewSamples { need, got: n.min(m) });
    }
    if bandwidths.is_empty() || bandwidths.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(LossError::BadBandwidth);
    }
    let (wxx, wyy) = match est {
        MmdEstimator::Unbiased => (1.0 / (n * (n - 1)) as f64, 1.0 / (m * (m - 1)) as f64),
        MmdEstimator::Biased => (1.0 / (n * n) as f64, 1.0 / (m * m) as f64),
    };
    let wxy = 2.0 / (n * m) as f64;

    let mut value = 0.0;
    let mut gs = vec![0.0; n * dim];
    let mut gt = vec![0.0; m * dim];
    // Kernel sum over all bandwidths and its radial derivative factor.
    let kern = |d2: f64| -> (f64, f64) {
        bandwidths.iter().fold((0.0, 0.0), |(k, dk), s| {
            let v = (-d2 / (2.0 * s * s)).exp();
            (k + v, dk - v / (s * s))
        })
    };

    // Within-sample terms; each unordered pair counts twice.
    let mut within = |x: &Tensor, cnt: usize, weight: f64, grad: &mut [f64]| {
        for i in 0..cnt {
            if est == MmdEstimator::Biased {
                value += weight * bandwidths.len() as f64;
            }
            for j in i + 1..cnt {
                let (a, b) = (x.row(i), x.row(j));
                let (k, dk) = kern(sq_dist(a, b));
                value += 2.0 * weight * k;
                for c in 0..dim {
                    let g = 2.0 * weight * dk * (a[c] - b[c]);
                    grad[i * dim + c] += g;
                    grad[j * dim + c] -= g;
                }
            }
        }
    };
    within(src, n, wxx, &mut gs);
    within(tgt, m, wyy, &mut gt);

    for i in 0..n {
        for j in 0..m {
            let (a, b) = (src.row(i), tgt.row(j));
            let (k, dk) = kern(sq_dist(a, b));
            value -= wxy * k;
            for c in 0..dim {
                let g = -wxy * dk * (a[c] - b[c]);
                gs[i * dim + c] += g;
                gt[j * dim + c] -= g;
            }
        }
    }
    Ok(MmdOutput {
        value,
        grad_src: Tensor::new(vec![n, dim], gs).expect("sized above"),
        grad_tgt: Tensor::new(vec![m, dim], gt).expect("sized above"),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct WdOutput {
    pub value: f64,
    pub grad_a: Vec<f64>,
    pub grad_b: Vec<f64>,
    /// Gradients wrt each group's `(scale, shift)`.
    pub grad_coeffs: Vec<(f64, f64)>,
}

/// `Σ_l ‖W_b − a_l·W_a − b_l‖²` over parameter groups `l`.
pub fn weight_dependence_loss(
    params_a: &[f64],
    params_b: &[f64],
    groups: &[Range<usize>],
    coeffs: &[(f64, f64)],
) -> Result<WdOutput, LossError> {
    if params_a.len() != params_b.len() {
        return Err(LossError::ShapeMismatch {
            expected: format!("{} parameters", params_a.len()),
            got: format!("{}", params_b.len()),
        });
    }
    if groups.len() != coeffs.len() || groups.iter().any(|g| g.end > params_a.len()) {
        return Err(LossError::ShapeMismatch {
            expected: format!("{} in-range groups", coeffs.len()),
            got: format!("{} groups", groups.len()),
        });
    }
    let mut grad_a = vec![0.0; params_a.len()];
    let mut grad_b = vec![0.0; params_b.len()];
    let mut grad_coeffs = Vec::with_capacity(groups.len());
    let mut value = 0.0;
    for (g, &(scale, shift)) in groups.iter().zip(coeffs) {
        let (mut gs, mut gh) = (0.0, 0.0);
        for i in g.clone() {
            let r = params_b[i] - scale * params_a[i] - shift;
            value += r * r;
            grad_b[i] += 2.0 * r;
            grad_a[i] -= 2.0 * r * scale;
            gs -= 2.0 * r * params_a[i];
            gh -= 2.0 * r;
        }
        grad_coeffs.push((gs, gh));
    }
    Ok(WdOutput { value, grad_a, grad_b, grad_coeffs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose_algebra::test_support::{random_pose, random_rotation};
    use crate::pose_algebra::{compose, inverse, Rotation};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tensor(rows: &[[f64; 9]]) -> Tensor {
        Tensor::new(vec![rows.len(), 9], rows.iter().flatten().copied().collect()).unwrap()
    }

    fn fd_check<F: Fn(&Tensor) -> f64>(f: F, x: &Tensor, analytic: &Tensor, tol: f64) {
        let eps = 1e-6;
        for k in 0..x.len() {
            let mut plus = x.clone();
            plus.data_mut()[k] += eps;
            let mut minus = x.clone();
            minus.data_mut()[k] -= eps;
            let fd = (f(&plus) - f(&minus)) / (2.0 * eps);
            let a = analytic.data()[k];
            let err = (fd - a).abs() / a.abs().max(fd.abs()).max(1e-8);
            assert!(err < tol || (fd - a).abs() < 1e-9, "component {k}: fd {fd} vs analytic {a}");
        }
    }

    #[test]
    fn pose_loss_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let gt: Vec<Pose> = (0..3).map(|_| random_pose(&mut rng)).collect();
        let exact = tensor(&gt.iter().map(encode).collect::<Vec<_>>());
        let (l, g) = pose_loss(&exact, &gt, &LossWeights::default()).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.data().iter().all(|v| *v == 0.0));

        let one = [Pose::from_parts(Rotation::rot_z(0.4), [1.0, 2.0, 3.0])];
        let mut row = encode(&one[0]);
        row[0] += 1.0;
        let (l, _) = pose_loss(&tensor(&[row]), &one, &LossWeights::default()).unwrap();
        assert!((l - 1.0 / 9.0).abs() < 1e-15);

        let pred = Tensor::new(vec![3, 9], (0..27).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let w = LossWeights { position: 2.0, rotation: 0.5 };
        let (_, g) = pose_loss(&pred, &gt, &w).unwrap();
        fd_check(|x| pose_loss(x, &gt, &w).unwrap().0, &pred, &g, 1e-6);
    }

    #[test]
    fn pose_loss_rejects_misaligned_batches() {
        let pred = Tensor::zeros(vec![2, 9]);
        assert!(matches!(pose_loss(&pred, &[Pose::IDENTITY], &LossWeights::default()), Err(LossError::ShapeMismatch { .. })));
        assert_eq!(pose_loss(&Tensor::zeros(vec![0, 9]), &[], &LossWeights::default()), Err(LossError::EmptyBatch));
    }

    /// Scene with a gate fixed in the world and two drone poses.
    fn consistent_pair(rng: &mut ChaCha8Rng) -> (Pose, Pose, Pose, Pose) {
        let gate = random_pose(rng);
        let d1 = random_pose(rng);
        let d2 = random_pose(rng);
        let p1 = compose(&inverse(&d1), &gate);
        let p2 = compose(&inverse(&d2), &gate);
        (p1, p2, d1, d2)
    }

    #[test]
    fn sc_zero_for_ground_truth_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let (p1, p2, d1, d2) = consistent_pair(&mut rng);
            let out = state_consistency_loss(
                &tensor(&[encode(&p1)]),
                &tensor(&[encode(&p2)]),
                &[(d1, d2)],
                WarpOrder::Textbook,
                &LossWeights::default(),
            )
            .unwrap();
            assert!(out.value < 1e-12, "{}", out.value);
        }
    }

    #[test]
    fn sc_same_pose_and_translation_example() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let o = random_pose(&mut rng);
        let p = random_pose(&mut rng);
        for order in [WarpOrder::Printed, WarpOrder::Textbook] {
            let out = state_consistency_loss(&tensor(&[encode(&p)]), &tensor(&[encode(&p)]), &[(o, o)], order, &LossWeights::default()).unwrap();
            assert!(out.value < 1e-24);
        }
        let base = Pose::from_translation([1.0, 0.5, -0.2]);
        let mut shifted = encode(&base);
        shifted[0] += 0.3;
        let out = state_consistency_loss(
            &tensor(&[encode(&base)]),
            &tensor(&[shifted]),
            &[(Pose::IDENTITY, Pose::IDENTITY)],
            WarpOrder::Textbook,
            &LossWeights::default(),
        )
        .unwrap();
        assert!((out.value - 0.01).abs() < 1e-15);
    }

    #[test]
    fn sc_degenerate_pairs_are_skipped() {
        let good = encode(&Pose::IDENTITY);
        let mut bad = good;
        bad[3..].copy_from_slice(&[0.0; 6]);
        let out = state_consistency_loss(
            &tensor(&[bad, good]),
            &tensor(&[good, good]),
            &[(Pose::IDENTITY, Pose::IDENTITY); 2],
            WarpOrder::Textbook,
            &LossWeights::default(),
        )
        .unwrap();
        assert_eq!((out.valid, out.skipped), (1, 1));
        assert!(out.grad1.row(0).iter().all(|v| *v == 0.0));
        let all_bad = state_consistency_loss(
            &tensor(&[bad]),
            &tensor(&[good]),
            &[(Pose::IDENTITY, Pose::IDENTITY)],
            WarpOrder::Textbook,
            &LossWeights::default(),
        )
        .unwrap();
        assert_eq!((all_bad.valid, all_bad.value), (0, 0.0));
    }

    #[test]
    fn sc_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 4;
        let noise = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..9).map(|_| rng.random_range(-0.3..0.3)).collect() };
        let mut r1 = Vec::new();
        let mut r2 = Vec::new();
        let mut odom = Vec::new();
        for _ in 0..n {
            let (p1, p2, d1, d2) = consistent_pair(&mut rng);
            r1.extend(encode(&p1).iter().zip(noise(&mut rng)).map(|(a, b)| a + b));
            r2.extend(encode(&p2).iter().zip(noise(&mut rng)).map(|(a, b)| a + b));
            odom.push((d1, d2));
        }
        let x1 = Tensor::new(vec![n, 9], r1).unwrap();
        let x2 = Tensor::new(vec![n, 9], r2).unwrap();
        let w = LossWeights { position: 1.5, rotation: 0.7 };
        for order in [WarpOrder::Textbook, WarpOrder::Printed] {
            let out = state_consistency_loss(&x1, &x2, &odom, order, &w).unwrap();
            fd_check(|x| state_consistency_loss(x, &x2, &odom, order, &w).unwrap().value, &x1, &out.grad1, 1e-5);
            fd_check(|x| state_consistency_loss(&x1, x, &odom, order, &w).unwrap().value, &x2, &out.grad2, 1e-5);
        }
    }

    #[test]
    fn sc_invariant_to_global_reanchoring() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let (p1, p2, d1, d2) = consistent_pair(&mut rng);
            // Perturb the second prediction so the loss is not trivially 0.
            let q2 = compose(&p2, &Pose::from_parts(Rotation::rot_x(0.1), [0.05, -0.02, 0.1]));
            let k = random_pose(&mut rng);
            let base = state_consistency_loss(
                &tensor(&[encode(&p1)]),
                &tensor(&[encode(&q2)]),
                &[(d1, d2)],
                WarpOrder::Textbook,
                &LossWeights::default(),
            )
            .unwrap()
            .value;
            let zero = state_consistency_loss(
                &tensor(&[encode(&compose(&p1, &k))]),
                &tensor(&[encode(&compose(&p2, &k))]),
                &[(d1, d2)],
                WarpOrder::Textbook,
                &LossWeights::default(),
            )
            .unwrap()
            .value;
            assert!(zero < 1e-9 && base > 1e-6);
        }
    }

    #[test]
    fn mmd_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = Tensor::new(vec![5, 3], (0..15).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let same = mmd_loss(&x, &x, &[0.5, 1.0], MmdEstimator::Biased).unwrap();
        assert!(same.value.abs() < 1e-12);

        let d: f64 = 1.3;
        let sigma = 0.8;
        let src = Tensor::new(vec![4, 2], [0.0, 0.0].repeat(4)).unwrap();
        let tgt = Tensor::new(vec![3, 2], [d, 0.0].repeat(3)).unwrap();
        let expected = 2.0 * (1.0 - (-d * d / (2.0 * sigma * sigma)).exp());
        for est in [MmdEstimator::Unbiased, MmdEstimator::Biased] {
            let v = mmd_loss(&src, &tgt, &[sigma], est).unwrap().value;
            assert!((v - expected).abs() < 1e-12);
        }
        assert_eq!(
            mmd_loss(&Tensor::zeros(vec![1, 2]), &tgt, &[1.0], MmdEstimator::Unbiased),
            Err(LossError::TooFewSamples { need: 2, got: 1 })
        );
    }

    #[test]
    fn mmd_unbiased_dips_at_most_slightly_negative() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 40;
        let mut min = f64::MAX;
        for _ in 0..50 {
            let a = Tensor::new(vec![n, 2], (0..2 * n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let b = Tensor::new(vec![n, 2], (0..2 * n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let bw = median_bandwidths(&a, &b);
            min = min.min(mmd_loss(&a, &b, &bw, MmdEstimator::Unbiased).unwrap().value);
        }
        // Kernel sums are bounded by the number of bandwidths (3).
        assert!(min > -3.0 * 4.0 / n as f64, "{min}");
    }

    #[test]
    fn mmd_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = Tensor::new(vec![4, 3], (0..12).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let b = Tensor::new(vec![5, 3], (0..15).map(|_| rng.random_range(0.0..2.0)).collect()).unwrap();
        let bw = [0.4, 0.9, 1.7];
        for est in [MmdEstimator::Unbiased, MmdEstimator::Biased] {
            let out = mmd_loss(&a, &b, &bw, est).unwrap();
            fd_check(|x| mmd_loss(x, &b, &bw, est).unwrap().value, &a, &out.grad_src, 1e-5);
            fd_check(|x| mmd_loss(&a, x, &bw, est).unwrap().value, &b, &out.grad_tgt, 1e-5);
        }
    }

    #[test]
    fn median_heuristic_scales() {
        let a = Tensor::new(vec![2, 1], vec![0.0, 1.0]).unwrap();
        let b = Tensor::new(vec![1, 1], vec![3.0]).unwrap();
        // Pairwise distances 1, 3, 2 → median 2.
        assert_eq!(median_bandwidths(&a, &b), vec![1.0, 2.0, 4.0]);
        let z = Tensor::zeros(vec![2, 1]);
        assert_eq!(median_bandwidths(&z, &z), vec![0.5, 1.0, 2.0]);
    }

    #[test]
    fn weight_dependence_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
        let groups = vec![0..4, 4..10];
        let ident = [(1.0, 0.0), (1.0, 0.0)];
        assert_eq!(weight_dependence_loss(&a, &a, &groups, &ident).unwrap().value, 0.0);
        let doubled: Vec<f64> = a.iter().map(|v| 2.0 * v).collect();
        assert!(weight_dependence_loss(&a, &doubled, &groups, &[(2.0, 0.0), (2.0, 0.0)]).unwrap().value < 1e-24);
        let delta: Vec<f64> = (0..10).map(|_| rng.random_range(-0.1..0.1)).collect();
        let b: Vec<f64> = a.iter().zip(&delta).map(|(x, d)| x + d).collect();
        let v = weight_dependence_loss(&a, &b, &groups, &ident).unwrap().value;
        let expected: f64 = delta.iter().map(|d| d * d).sum();
        assert!((v - expected).abs() < 1e-12);
    }

    #[test]
    fn weight_dependence_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let a: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let groups = vec![0..2, 2..6];
        let coeffs = [(0.8, 0.1), (1.3, -0.2)];
        let out = weight_dependence_loss(&a, &b, &groups, &coeffs).unwrap();
        let f = |a: &[f64], b: &[f64], c: &[(f64, f64)]| weight_dependence_loss(a, b, &groups, c).unwrap().value;
        let eps = 1e-6;
        for i in 0..6 {
            let (mut ap, mut am) = (a.clone(), a.clone());
            ap[i] += eps;
            am[i] -= eps;
            assert!(((f(&ap, &b, &coeffs) - f(&am, &b, &coeffs)) / (2.0 * eps) - out.grad_a[i]).abs() < 1e-7);
            let (mut bp, mut bm) = (b.clone(), b.clone());
            bp[i] += eps;
            bm[i] -= eps;
            assert!(((f(&a, &bp, &coeffs) - f(&a, &bm, &coeffs)) / (2.0 * eps) - out.grad_b[i]).abs() < 1e-7);
        }
        for l in 0..2 {
            let mut cp = coeffs;
            let mut cm = coeffs;
            cp[l].0 += eps;
            cm[l].0 -= eps;
            assert!(((f(&a, &b, &cp) - f(&a, &b, &cm)) / (2.0 * eps) - out.grad_coeffs[l].0).abs() < 1e-7);
            let mut cp = coeffs;
            let mut cm = coeffs;
            cp[l].1 += eps;
            cm[l].1 -= eps;
            assert!(((f(&a, &b, &cp) - f(&a, &b, &cm)) / (2.0 * eps) - out.grad_coeffs[l].1).abs() < 1e-7);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn pose_loss_zero_iff_equal(seed in 0u64..10_000, k in 0usize..9, delta in -1.0f64..1.0) {
            prop_assume!(delta.abs() > 1e-6);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let gt = [Pose::from_parts(random_rotation(&mut rng), [rng.random_range(-3.0..3.0), 0.2, 1.0])];
            let mut row = encode(&gt[0]);
            let (l0, _) = pose_loss(&tensor(&[row]), &gt, &LossWeights::default()).unwrap();
            prop_assert_eq!(l0, 0.0);
            row[k] += delta;
            let (l1, _) = pose_loss(&tensor(&[row]), &gt, &LossWeights::default()).unwrap();
            prop_assert!(l1 > 0.0);
        }
    }
}
