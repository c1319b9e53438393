use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    argmin, build_batch, check_image_size, predict, save_epoch_checkpoint, Clock, CurveRow, InputFilter, TrainError,
    TrainOutcome,
};
use crate::losses::{state_consistency_loss, LossWeights};
use crate::pose_algebra::{Pose, WarpOrder};
use crate::regressor::{adamw_step, backward, forward, AdamWHyper, AdamWState, Mode, ModelParams, Tensor};
use crate::scene_sim::{derive_seed, Image, Sequence};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairStrategy {
    RandomInSequence,
    #[default]
    MaxGapBounded,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PairSamplerConfig {
    pub strategy: PairStrategy,
    pub max_gap_s: f64,
    pub pairs_per_epoch: usize,
}

impl Default for PairSamplerConfig {
    fn default() -> Self {
        PairSamplerConfig { strategy: PairStrategy::MaxGapBounded, max_gap_s: 2.0, pairs_per_epoch: 512 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub pairs_per_batch: usize,
    pub sampler: PairSamplerConfig,
    /// Size of the validation pair set, drawn once per run.
    pub val_pairs: usize,
    pub optimizer: AdamWHyper,
    pub warp_order: WarpOrder,
    pub loss_weights: LossWeights,
    pub input_filter: InputFilter,
    pub checkpoint_every: usize,
    pub record_wall_time: bool,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig::desk()
    }
}

impl FinetuneConfig {
    pub fn desk() -> Self {
        FinetuneConfig {
            epochs: 30,
            pairs_per_batch: 32,
            sampler: PairSamplerConfig::default(),
            val_pairs: 256,
            optimizer: AdamWHyper { lr: 3e-4, weight_decay: 1e-2, ..AdamWHyper::default() },
            warp_order: WarpOrder::default(),
            loss_weights: LossWeights::default(),
            input_filter: InputFilter::None,
            checkpoint_every: 0,
            record_wall_time: false,
        }
    }

    /// Full schedule with the original fine-tuning learning rate.
    pub fn full_schedule() -> Self {
        FinetuneConfig {
            epochs: 100,
            optimizer: AdamWHyper { lr: 1e-6, ..FinetuneConfig::desk().optimizer },
            ..FinetuneConfig::desk()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.pairs_per_batch == 0 || self.sampler.pairs_per_epoch == 0 || self.val_pairs == 0 {
            return Err(TrainError::Config("pair counts must be positive".into()));
        }
        if !(self.sampler.max_gap_s > 0.0) {
            return Err(TrainError::Config("maximum pair gap must be positive".into()));
        }
        Ok(())
    }
}

/// Two frames `i ≠ j` of sequence `seq` (an index into the slice handed
/// to the sampler).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FramePair {
    pub seq: usize,
    pub i: usize,
    pub j: usize,
}

/// Draws `n` intra-sequence pairs. The first frame is uniform over all
/// frames; the second is uniform over the allowed partners.
pub fn sample_pairs(
    seqs: &[&Sequence],
    cfg: &PairSamplerConfig,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<FramePair>, TrainError> {
    let mut offsets = Vec::with_capacity(seqs.len());
    let mut total = 0usize;
    for s in seqs {
        offsets.push(total);
        total += s.samples.len();
    }
    if seqs.iter().all(|s| s.samples.len() < 2) {
        return Err(TrainError::DataEmpty("pairs need a sequence with at least two frames"));
    }
    let mut out = Vec::with_capacity(n);
    let mut misses = 0usize;
    while out.len() < n {
        let g = rng.random_range(0..total);
        let seq = offsets.partition_point(|&o| o <= g) - 1;
        let i = g - offsets[seq];
        let samples = &seqs[seq].samples;
        let (lo, hi) = match cfg.strategy {
            PairStrategy::RandomInSequence => (0, samples.len()),
            PairStrategy::MaxGapBounded => {
                let t = samples[i].time;
                (
                    samples.partition_point(|s| s.time < t - cfg.max_gap_s),
                    samples.partition_point(|s| s.time <= t + cfg.max_gap_s),
                )
            }
        };
        if hi - lo < 2 {
            misses += 1;
            if misses > 1000 * n.max(1) {
                return Err(TrainError::DataEmpty("no frame has a partner within the allowed gap"));
            }
            continue;
        }
        let mut j = rng.random_range(lo..hi - 1);
        if j >= i {
            j += 1;
        }
        out.push(FramePair { seq, i, j });
    }
    Ok(out)
}

fn pair_images<'a>(seqs: &[&'a Sequence], pairs: &[FramePair]) -> Vec<&'a Image> {
    let first = pairs.iter().map(|p| &seqs[p.seq].samples[p.i].image);
    let second = pairs.iter().map(|p| &seqs[p.seq].samples[p.j].image);
    first.chain(second).collect()
}

fn pair_odometry(seqs: &[&Sequence], pairs: &[FramePair]) -> Vec<(Pose, Pose)> {
    pairs.iter().map(|p| (seqs[p.seq].samples[p.i].odom, seqs[p.seq].samples[p.j].odom)).collect()
}

fn split_rows(t: &Tensor, half: usize) -> Result<(Tensor, Tensor), TrainError> {
    let d = t.data();
    let w = t.shape()[1];
    Ok((
        Tensor::new(vec![half, w], d[..half * w].to_vec())?,
        Tensor::new(vec![half, w], d[half * w..].to_vec())?,
    ))
}

/// Fine-tunes on unlabeled sequences with the state-consistency loss only.
/// Model selection uses the same loss on a validation pair set frozen for
/// the whole run; the initialization (epoch 0) is a candidate.
pub fn finetune_sc(
    cfg: &FinetuneConfig,
    init: &ModelParams,
    train: &[&Sequence],
    val: &[&Sequence],
    seed: u64,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let first = |seqs: &[&Sequence]| seqs.iter().flat_map(|s| s.samples.first()).next().map(|s| s.image.clone());
    let train_img = first(train).ok_or(TrainError::DataEmpty("fine-tuning needs training frames"))?;
    let val_img = first(val).ok_or(TrainError::DataEmpty("fine-tuning needs validation frames"))?;
    check_image_size(init, &train_img)?;
    check_image_size(init, &val_img)?;

    let clock = Clock::new(cfg.record_wall_time);
    let size = init.config().input_size;
    let mut val_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));
    let val_set = sample_pairs(val, &cfg.sampler, cfg.val_pairs, &mut val_rng)?;
    let val_images = pair_images(val, &val_set);
    let val_odom = pair_odometry(val, &val_set);
    let validate = |p: &ModelParams| -> Result<f64, TrainError> {
        let preds = predict(p, &val_images, cfg.input_filter, 64)?;
        let t = Tensor::new(vec![preds.len(), 9], preds.iter().flatten().copied().collect())?;
        let (p1, p2) = split_rows(&t, val_set.len())?;
        let out = state_consistency_loss(&p1, &p2, &val_odom, cfg.warp_order, &cfg.loss_weights)?;
        if out.valid == 0 {
            return Err(TrainError::AllPairsDegenerate);
        }
        Ok(out.value)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = init.clone();
    let mut opt = AdamWState::new(params.len());
    let mut curves = vec![CurveRow { epoch: 0, train_loss: None, val_loss: validate(&params)?, wall_seconds: clock.elapsed() }];
    let mut best = params.clone();
    let mut best_val = curves[0].val_loss;

    for epoch in 1..=cfg.epochs {
        let pairs = sample_pairs(train, &cfg.sampler, cfg.sampler.pairs_per_epoch, &mut rng)?;
        let (mut loss_sum, mut valid_sum) = (0.0, 0usize);
        for chunk in pairs.chunks(cfg.pairs_per_batch) {
            let x = build_batch(&pair_images(train, chunk), size, None, cfg.input_filter)?;
            let odom = pair_odometry(train, chunk);
            let (out, grads, stats) = {
                let mut f = forward(&params, &x, Mode::Train)?;
                let (p1, p2) = split_rows(&f.output, chunk.len())?;
                let out = state_consistency_loss(&p1, &p2, &odom, cfg.warp_order, &cfg.loss_weights)?;
                if out.valid == 0 {
                    continue;
                }
                let mut g = out.grad1.data().to_vec();
                g.extend_from_slice(out.grad2.data());
                let grads = backward(&mut f.tape, &Tensor::new(vec![2 * chunk.len(), 9], g)?, None)?;
                (out, grads, f.batch_stats.expect("train mode reports batch statistics"))
            };
            adamw_step(params.values_mut(), &grads, &mut opt, &cfg.optimizer);
            params.apply_batch_stats(&stats);
            loss_sum += out.value * out.valid as f64;
            valid_sum += out.valid;
        }
        if valid_sum == 0 {
            return Err(TrainError::AllPairsDegenerate);
        }
        let val_loss = validate(&params)?;
        curves.push(CurveRow { epoch, train_loss: Some(loss_sum / valid_sum as f64), val_loss, wall_seconds: clock.elapsed() });
        if val_loss < best_val {
            best_val = val_loss;
            best = params.clone();
        }
        save_epoch_checkpoint(checkpoint_dir, cfg.checkpoint_every, epoch, &params, &opt)?;
    }
    let best_epoch = argmin(curves.iter().map(|r| r.val_loss)).unwrap_or(0);
    Ok(TrainOutcome { params: best, best_epoch, curves, final_params: params, optimizer: opt })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regressor::{init_model, ModelConfig};
    use crate::scene_sim::{
        generate_dataset, CameraIntrinsics, DatasetConfig, DomainConfig, OdometryModel, Split, SplitSpec, SplitsConfig,
        TrajectoryConfig,
    };

    fn real_only(seqs: usize, duration: f64) -> SplitsConfig {
        let none = SplitSpec { sequences: 0, duration_s: 0.0 };
        SplitsConfig {
            sim_train: none,
            sim_val: none,
            real_train: SplitSpec { sequences: seqs, duration_s: duration },
            real_val: SplitSpec { sequences: 2, duration_s: duration },
            real_test: none,
        }
    }

    fn small_model(seed: u64) -> ModelParams {
        init_model(&ModelConfig { channels: vec![4, 8], kernel_size: 3, stride: 1, hidden: 16, input_size: 16 }, seed).unwrap()
    }

    fn small_cfg() -> FinetuneConfig {
        FinetuneConfig {
            epochs: 3,
            pairs_per_batch: 8,
            val_pairs: 32,
            sampler: PairSamplerConfig { pairs_per_epoch: 32, ..PairSamplerConfig::default() },
            optimizer: AdamWHyper { lr: 1e-3, ..FinetuneConfig::desk().optimizer },
            ..FinetuneConfig::desk()
        }
    }

    #[test]
    fn pairs_respect_sequence_and_gap() {
        let cfg = DatasetConfig { camera: CameraIntrinsics::default().scaled_to(16), splits: real_only(3, 6.0), ..DatasetConfig::default() };
        let ds = generate_dataset(&cfg, 1).unwrap();
        let seqs = ds.split(Split::RealTrain);
        let sampler = PairSamplerConfig { max_gap_s: 0.5, ..PairSamplerConfig::default() };
        let pairs = sample_pairs(&seqs, &sampler, 2000, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let mut max_gap: f64 = 0.0;
        for p in &pairs {
            assert_ne!(p.i, p.j);
            let s = &seqs[p.seq].samples;
            let gap = (s[p.i].time - s[p.j].time).abs();
            assert!(gap <= 0.5 + 1e-12);
            max_gap = max_gap.max(gap);
        }
        assert!((max_gap - 0.48).abs() < 1e-9);
        let free = PairSamplerConfig { strategy: PairStrategy::RandomInSequence, ..sampler };
        let pairs = sample_pairs(&seqs, &free, 2000, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let far = pairs.iter().filter(|p| p.i.abs_diff(p.j) > 30).count();
        assert!(far > 1000);
    }

    #[test]
    fn consistent_model_stays_put() {
        // Hovering drone and exact odometry; the model ignores its input
        // and emits one valid pose, so the loss and its gradient vanish.
        let cfg = DatasetConfig {
            camera: CameraIntrinsics::default().scaled_to(16),
            real: DomainConfig { tag: crate::scene_sim::DomainTag::Real, ..DomainConfig::sim() },
            real_odometry: OdometryModel::exact(),
            trajectory: TrajectoryConfig { max_speed: 0.0, max_yaw_rate: 0.0, ..TrajectoryConfig::default() },
            splits: real_only(2, 1.0),
            ..DatasetConfig::default()
        };
        let ds = generate_dataset(&cfg, 4).unwrap();
        let mut init = small_model(1);
        let pose = crate::pose_algebra::pose_to_vector9(&Pose::from_parts(
            crate::pose_algebra::Rotation::from_euler_zyx(0.2, 0.05, -0.1),
            [2.5, 0.3, -0.2],
        ));
        for g in init.groups() {
            match g.name.as_str() {
                "out.weight" => init.values_mut()[g.range].fill(0.0),
                "out.bias" => init.values_mut()[g.range].copy_from_slice(&pose.to_array()),
                _ => {}
            }
        }
        // Decay would shrink the emitted 6D columns and break consistency.
        // A small ε lets Adam blow round-off gradients up to full steps.
        let optimizer = AdamWHyper { weight_decay: 0.0, eps: 1.0, ..small_cfg().optimizer };
        let ft = FinetuneConfig { optimizer, ..small_cfg() };
        let out = finetune_sc(&ft, &init, &ds.split(Split::RealTrain), &ds.split(Split::RealVal), 3, None).unwrap();
        assert!(out.curves.iter().all(|r| r.val_loss < 1e-10), "{:?}", out.curves);
        assert!(out.optimizer.step > 0);
        for (a, b) in out.final_params.values().iter().zip(init.values()) {
            assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn smoke_run_lowers_validation_loss_and_repeats() {
        let cfg = DatasetConfig { camera: CameraIntrinsics::default().scaled_to(16), splits: real_only(3, 4.0), ..DatasetConfig::default() };
        let ds = generate_dataset(&cfg, 5).unwrap();
        let ft = FinetuneConfig { epochs: 6, ..small_cfg() };
        let run = || finetune_sc(&ft, &small_model(7), &ds.split(Split::RealTrain), &ds.split(Split::RealVal), 9, None).unwrap();
        let a = run();
        assert!(a.curves.last().unwrap().val_loss < a.curves[0].val_loss, "{:?}", a.curves);
        let b = run();
        assert_eq!(a.curves, b.curves);
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn missing_frames_are_reported() {
        let init = small_model(1);
        assert!(matches!(finetune_sc(&small_cfg(), &init, &[], &[], 0, None), Err(TrainError::DataEmpty(_))));
    }
}
