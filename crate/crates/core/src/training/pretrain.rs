use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    argmin, build_batch, check_image_size, labeled_frames, predict, save_epoch_checkpoint, shuffled, Clock, CurveRow,
    InputFilter, TrainError, TrainOutcome,
};
use crate::losses::{pose_loss, LossWeights};
use crate::pose_algebra::Pose;
use crate::regressor::{adamw_step, backward, forward, AdamWHyper, AdamWState, Mode, ModelParams, Tensor};
use crate::scene_sim::{AugmentationConfig, Sequence};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamWHyper,
    pub loss_weights: LossWeights,
    /// Applies the sim domain's training-time augmentation.
    pub augment: bool,
    pub input_filter: InputFilter,
    /// Save a checkpoint every this many epochs; 0 disables.
    pub checkpoint_every: usize,
    pub record_wall_time: bool,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig::desk()
    }
}

impl PretrainConfig {
    pub fn desk() -> Self {
        PretrainConfig {
            epochs: 20,
            batch_size: 32,
            optimizer: AdamWHyper { lr: 1e-3, weight_decay: 1e-2, ..AdamWHyper::default() },
            loss_weights: LossWeights::default(),
            augment: true,
            input_filter: InputFilter::None,
            checkpoint_every: 0,
            record_wall_time: false,
        }
    }

    pub fn full_schedule() -> Self {
        PretrainConfig { epochs: 100, ..PretrainConfig::desk() }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size < 2 {
            return Err(TrainError::Config("batch size must be at least 2 for batch norm".into()));
        }
        if !(self.optimizer.lr.is_finite() && self.optimizer.lr >= 0.0) {
            return Err(TrainError::Config("learning rate must be finite and non-negative".into()));
        }
        Ok(())
    }
}

fn mean_pose_loss(preds: &[[f64; 9]], gts: &[Pose], w: &LossWeights) -> Result<f64, TrainError> {
    let t = Tensor::new(vec![preds.len(), 9], preds.iter().flatten().copied().collect())?;
    Ok(pose_loss(&t, gts, w)?.0)
}

/// AdamW on the pose loss over labeled sim frames; keeps the parameters
/// with the lowest validation loss (epoch 0 is the initialization).
pub fn pretrain(
    cfg: &PretrainConfig,
    init: &ModelParams,
    train: &[&Sequence],
    val: &[&Sequence],
    augmentation: &AugmentationConfig,
    seed: u64,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let train_frames = labeled_frames(train);
    let val_frames = labeled_frames(val);
    if train_frames.is_empty() {
        return Err(TrainError::DataEmpty("pretraining needs labeled training frames"));
    }
    if val_frames.is_empty() {
        return Err(TrainError::DataEmpty("pretraining needs labeled validation frames"));
    }
    check_image_size(init, train_frames[0].0)?;
    check_image_size(init, val_frames[0].0)?;

    let clock = Clock::new(cfg.record_wall_time);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let aug = if cfg.augment { *augmentation } else { AugmentationConfig::none() };
    let size = init.config().input_size;
    let val_images: Vec<_> = val_frames.iter().map(|f| f.0).collect();
    let val_gts: Vec<Pose> = val_frames.iter().map(|f| f.1).collect();
    let validate = |p: &ModelParams| -> Result<f64, TrainError> {
        let preds = predict(p, &val_images, cfg.input_filter, 64)?;
        mean_pose_loss(&preds, &val_gts, &cfg.loss_weights)
    };

    let mut params = init.clone();
    let mut opt = AdamWState::new(params.len());
    let mut curves = vec![CurveRow { epoch: 0, train_loss: None, val_loss: validate(&params)?, wall_seconds: clock.elapsed() }];
    let mut best = params.clone();
    let mut best_val = curves[0].val_loss;

    for epoch in 1..=cfg.epochs {
        let order = shuffled(train_frames.len(), &mut rng);
        let (mut loss_sum, mut count) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let imgs: Vec<_> = chunk.iter().map(|&i| train_frames[i].0).collect();
            let gts: Vec<Pose> = chunk.iter().map(|&i| train_frames[i].1).collect();
            let x = build_batch(&imgs, size, Some((&aug, &mut rng)), cfg.input_filter)?;
            let (loss, grads, stats) = {
                let mut f = forward(&params, &x, Mode::Train)?;
                let (loss, g) = pose_loss(&f.output, &gts, &cfg.loss_weights)?;
                let grads = backward(&mut f.tape, &g, None)?;
                (loss, grads, f.batch_stats.expect("train mode reports batch statistics"))
            };
            adamw_step(params.values_mut(), &grads, &mut opt, &cfg.optimizer);
            params.apply_batch_stats(&stats);
            loss_sum += loss * chunk.len() as f64;
            count += chunk.len();
        }
        let val_loss = validate(&params)?;
        curves.push(CurveRow {
            epoch,
            train_loss: (count > 0).then(|| loss_sum / count as f64),
            val_loss,
            wall_seconds: clock.elapsed(),
        });
        if val_loss < best_val {
            best_val = val_loss;
            best = params.clone();
        }
        save_epoch_checkpoint(checkpoint_dir, cfg.checkpoint_every, epoch, &params, &opt)?;
    }
    let best_epoch = argmin(curves.iter().map(|r| r.val_loss)).unwrap_or(0);
    Ok(TrainOutcome { params: best, best_epoch, curves, final_params: params, optimizer: opt })
}
