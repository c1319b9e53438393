use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{build_batch, check_image_size, labeled_frames, shuffled, Clock, InputFilter, TrainError};
use crate::losses::{median_bandwidths, mmd_loss, pose_loss, weight_dependence_loss, LossWeights, MmdEstimator};
use crate::pose_algebra::Pose;
use crate::regressor::{adamw_step, backward, forward, AdamWHyper, AdamWState, Mode, ModelParams, Tensor};
use crate::scene_sim::{derive_seed, AugmentationConfig, Image, Sequence};

/// Two-stream domain adaptation: stream A learns the pose on sim frames;
/// stream B learns the same task while its penultimate features on real
/// frames are pulled toward A's sim features and its weights are tied to
/// A's through a per-layer linear relation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DaConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamWHyper,
    pub lambda_mmd: f64,
    pub lambda_w: f64,
    pub estimator: MmdEstimator,
    pub loss_weights: LossWeights,
    pub augment: bool,
    pub input_filter: InputFilter,
    pub record_wall_time: bool,
}

impl Default for DaConfig {
    fn default() -> Self {
        DaConfig {
            epochs: 5,
            batch_size: 32,
            optimizer: AdamWHyper { lr: 3e-4, weight_decay: 1e-2, ..AdamWHyper::default() },
            lambda_mmd: 1.0,
            lambda_w: 1e-3,
            estimator: MmdEstimator::Unbiased,
            loss_weights: LossWeights::default(),
            augment: true,
            input_filter: InputFilter::None,
            record_wall_time: false,
        }
    }
}

/// Per-epoch means of the individual terms.
#[derive(Clone, Debug, PartialEq)]
pub struct DaCurveRow {
    pub epoch: usize,
    pub pose_loss_a: f64,
    pub pose_loss_b: f64,
    pub mmd: f64,
    pub weight_dependence: f64,
    pub wall_seconds: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct DaOutcome {
    /// Stream B, the model deployed on real frames.
    pub params: ModelParams,
    pub stream_a: ModelParams,
    /// Learned `(scale, shift)` per parameter group.
    pub coeffs: Vec<(f64, f64)>,
    pub curves: Vec<DaCurveRow>,
}

pub fn da_curves_csv(rows: &[DaCurveRow]) -> String {
    let mut out = String::from("epoch,pose_loss_a,pose_loss_b,mmd,weight_dependence,wall_seconds\n");
    for r in rows {
        let wall = r.wall_seconds.map(|w| format!("{w:.9e}")).unwrap_or_default();
        out.push_str(&format!(
            "{},{:.9e},{:.9e},{:.9e},{:.9e},{}\n",
            r.epoch, r.pose_loss_a, r.pose_loss_b, r.mmd, r.weight_dependence, wall
        ));
    }
    out
}

fn unlabeled_images<'a>(seqs: &[&'a Sequence]) -> Vec<&'a Image> {
    seqs.iter().flat_map(|s| s.samples.iter().map(|x| &x.image)).collect()
}

/// Both streams start from `init`.
pub fn train_da_baseline(
    cfg: &DaConfig,
    init: &ModelParams,
    sim_train: &[&Sequence],
    real_train: &[&Sequence],
    sim_augmentation: &AugmentationConfig,
    seed: u64,
) -> Result<DaOutcome, TrainError> {
    if cfg.batch_size < 2 {
        return Err(TrainError::Config("batch size must be at least 2".into()));
    }
    let sim = labeled_frames(sim_train);
    let real = unlabeled_images(real_train);
    if sim.is_empty() {
        return Err(TrainError::DataEmpty("domain adaptation needs labeled sim frames"));
    }
    if real.is_empty() {
        return Err(TrainError::DataEmpty("domain adaptation needs real frames"));
    }
    check_image_size(init, sim[0].0)?;
    check_image_size(init, real[0])?;

    let clock = Clock::new(cfg.record_wall_time);
    let size = init.config().input_size;
    let aug = if cfg.augment { *sim_augmentation } else { AugmentationConfig::none() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut real_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 2));
    let groups: Vec<Range<usize>> = init.groups().into_iter().map(|g| g.range).collect();

    let mut a = init.clone();
    let mut b = init.clone();
    let mut opt_a = AdamWState::new(a.len());
    let mut opt_b = AdamWState::new(b.len());
    let mut coeffs: Vec<f64> = groups.iter().flat_map(|_| [1.0, 0.0]).collect();
    let mut opt_c = AdamWState::new(coeffs.len());
    let coeff_hyper = AdamWHyper { weight_decay: 0.0, ..cfg.optimizer };
    let mut curves = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let order = shuffled(sim.len(), &mut rng);
        let mut sums = [0.0f64; 4];
        let mut steps = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let bs = chunk.len();
            let imgs: Vec<&Image> = chunk.iter().map(|&i| sim[i].0).collect();
            let gts: Vec<Pose> = chunk.iter().map(|&i| sim[i].1).collect();
            let xs = build_batch(&imgs, size, Some((&aug, &mut rng)), cfg.input_filter)?;

            let (loss_a, grads_a_fwd, stats_a, feats_a) = {
                let mut f = forward(&a, &xs, Mode::Train)?;
                let (l, g) = pose_loss(&f.output, &gts, &cfg.loss_weights)?;
                let grads = backward(&mut f.tape, &g, None)?;
                (l, grads, f.batch_stats.expect("train mode"), f.features)
            };

            let with_real = cfg.lambda_mmd > 0.0;
            let xb = if with_real {
                let picks: Vec<&Image> = (0..bs).map(|_| real[real_rng.random_range(0..real.len())]).collect();
                let xr = build_batch(&picks, size, None, cfg.input_filter)?;
                let mut data = xs.data().to_vec();
                data.extend_from_slice(xr.data());
                Tensor::new(vec![2 * bs, 1, size, size], data)?
            } else {
                xs.clone()
            };
            let (loss_b, mmd_value, grads_b_fwd, stats_b) = {
                let mut f = forward(&b, &xb, Mode::Train)?;
                let rows = xb.shape()[0];
                let sim_out = Tensor::new(vec![bs, 9], f.output.data()[..bs * 9].to_vec())?;
                let (l, g_sim) = pose_loss(&sim_out, &gts, &cfg.loss_weights)?;
                let mut g_out = g_sim.into_data();
                g_out.resize(rows * 9, 0.0);
                let hidden = f.features.shape()[1];
                let (mmd_value, feat_grad) = if with_real {
                    let tgt = Tensor::new(vec![bs, hidden], f.features.data()[bs * hidden..].to_vec())?;
                    let bw = median_bandwidths(&feats_a, &tgt);
                    let m = mmd_loss(&feats_a, &tgt, &bw, cfg.estimator)?;
                    let mut fg = vec![0.0; bs * hidden];
                    fg.extend(m.grad_tgt.data().iter().map(|g| cfg.lambda_mmd * g));
                    (m.value, Some(Tensor::new(vec![rows, hidden], fg)?))
                } else {
                    (0.0, None)
                };
                let grads = backward(&mut f.tape, &Tensor::new(vec![rows, 9], g_out)?, feat_grad.as_ref())?;
                (l, mmd_value, grads, f.batch_stats.expect("train mode"))
            };

            let mut grads_a = grads_a_fwd;
            let mut grads_b = grads_b_fwd;
            let mut wd_value = 0.0;
            if cfg.lambda_w > 0.0 {
                let pairs: Vec<(f64, f64)> = coeffs.chunks(2).map(|c| (c[0], c[1])).collect();
                let wd = weight_dependence_loss(a.values(), b.values(), &groups, &pairs)?;
                wd_value = wd.value;
                for (g, w) in grads_a.iter_mut().zip(&wd.grad_a) {
                    *g += cfg.lambda_w * w;
                }
                for (g, w) in grads_b.iter_mut().zip(&wd.grad_b) {
                    *g += cfg.lambda_w * w;
                }
                let gc: Vec<f64> = wd.grad_coeffs.iter().flat_map(|&(s, h)| [cfg.lambda_w * s, cfg.lambda_w * h]).collect();
                adamw_step(&mut coeffs, &gc, &mut opt_c, &coeff_hyper);
            }
            adamw_step(a.values_mut(), &grads_a, &mut opt_a, &cfg.optimizer);
            adamw_step(b.values_mut(), &grads_b, &mut opt_b, &cfg.optimizer);
            a.apply_batch_stats(&stats_a);
            b.apply_batch_stats(&stats_b);
            for (s, v) in sums.iter_mut().zip([loss_a, loss_b, mmd_value, wd_value]) {
                *s += v;
            }
            steps += 1;
        }
        let k = steps.max(1) as f64;
        curves.push(DaCurveRow {
            epoch,
            pose_loss_a: sums[0] / k,
            pose_loss_b: sums[1] / k,
            mmd: sums[2] / k,
            weight_dependence: sums[3] / k,
            wall_seconds: clock.elapsed(),
        });
    }
    let coeffs = coeffs.chunks(2).map(|c| (c[0], c[1])).collect();
    Ok(DaOutcome { params: b, stream_a: a, coeffs, curves })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regressor::{init_model, ModelConfig};
    use crate::scene_sim::{generate_dataset, CameraIntrinsics, Dataset, DatasetConfig, Split, SplitSpec, SplitsConfig};

    fn data(seed: u64) -> Dataset {
        let none = SplitSpec { sequences: 0, duration_s: 0.0 };
        let spec = SplitSpec { sequences: 3, duration_s: 0.8 };
        let cfg = DatasetConfig {
            camera: CameraIntrinsics::default().scaled_to(16),
            splits: SplitsConfig { sim_train: spec, sim_val: none, real_train: spec, real_val: none, real_test: none },
            ..DatasetConfig::default()
        };
        generate_dataset(&cfg, seed).unwrap()
    }

    fn model() -> ModelParams {
        init_model(&ModelConfig { channels: vec![4, 8], kernel_size: 3, stride: 1, hidden: 16, input_size: 16 }, 4).unwrap()
    }

    #[test]
    fn zero_weights_make_streams_identical() {
        let ds = data(1);
        let cfg = DaConfig { epochs: 2, batch_size: 8, lambda_mmd: 0.0, lambda_w: 0.0, ..DaConfig::default() };
        let aug = ds.config.sim.train_augmentation;
        let out = train_da_baseline(&cfg, &model(), &ds.split(Split::SimTrain), &ds.split(Split::RealTrain), &aug, 3).unwrap();
        assert_eq!(out.params, out.stream_a);
        assert_ne!(out.params, model());
    }

    /// MMD between A's sim features and B's real features, eval mode.
    fn feature_gap(out_a: &ModelParams, out_b: &ModelParams, ds: &Dataset) -> f64 {
        let sim: Vec<&Image> = ds.split(Split::SimTrain).iter().flat_map(|s| s.samples.iter().map(|x| &x.image)).collect();
        let real = unlabeled_images(&ds.split(Split::RealTrain));
        let xs = build_batch(&sim, 16, None, InputFilter::None).unwrap();
        let xr = build_batch(&real, 16, None, InputFilter::None).unwrap();
        let fa = forward(out_a, &xs, Mode::Eval).unwrap().features;
        let fb = forward(out_b, &xr, Mode::Eval).unwrap().features;
        mmd_loss(&fa, &fb, &median_bandwidths(&fa, &fb), MmdEstimator::Biased).unwrap().value
    }

    #[test]
    fn mmd_term_shrinks_and_runs_repeat() {
        let ds = data(2);
        let cfg = DaConfig { epochs: 8, batch_size: 12, lambda_mmd: 5.0, augment: false, ..DaConfig::default() };
        let run = || train_da_baseline(&cfg, &model(), &ds.split(Split::SimTrain), &ds.split(Split::RealTrain), &AugmentationConfig::none(), 6).unwrap();
        let out = run();
        assert!(out.curves.last().unwrap().mmd < out.curves[0].mmd, "{:?}", out.curves);
        let before = feature_gap(&model(), &model(), &ds);
        let after = feature_gap(&out.stream_a, &out.params, &ds);
        assert!(after < before, "{before} -> {after}");
        let again = run();
        assert_eq!(again.params, out.params);
        assert_eq!(again.curves, out.curves);
    }

    #[test]
    fn empty_inputs_are_errors() {
        let ds = data(3);
        let none = AugmentationConfig::none();
        let err = train_da_baseline(&DaConfig::default(), &model(), &ds.split(Split::SimTrain), &[], &none, 0).unwrap_err();
        assert!(matches!(err, TrainError::DataEmpty(_)));
    }
}
