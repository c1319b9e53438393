//! Sim pretraining, state-consistency fine-tuning and the baselines.

mod da;
mod finetune;
mod pretrain;

pub use da::{da_curves_csv, train_da_baseline, DaConfig, DaCurveRow, DaOutcome};
pub use finetune::{finetune_sc, sample_pairs, FinetuneConfig, FramePair, PairSamplerConfig, PairStrategy};
pub use pretrain::{pretrain, PretrainConfig};

use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::losses::LossError;
use crate::pose_algebra::{gram_schmidt, pose_to_vector9, Pose, PoseVector9, Rot6D};
use crate::regressor::{checkpoint, forward, stack_images, AdamWState, Mode, ModelParams, RegressorError, Tensor};
use crate::scene_sim::{apply_augmentations, pencil_filter, AugmentationConfig, Image, Sample, Sequence};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("no data: {0}")]
    DataEmpty(&'static str),
    #[error("every state-consistency pair had a degenerate rotation decode")]
    AllPairsDegenerate,
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Regressor(#[from] RegressorError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Image preprocessing applied before the network, identical at training
/// and test time.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputFilter {
    #[default]
    None,
    Pencil,
}

impl InputFilter {
    pub fn apply(self, img: &Image) -> Image {
        match self {
            InputFilter::None => img.clone(),
            InputFilter::Pencil => pencil_filter(img),
        }
    }
}

/// One row of a training curve. Epoch 0 evaluates the initial parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct CurveRow {
    pub epoch: usize,
    pub train_loss: Option<f64>,
    pub val_loss: f64,
    pub wall_seconds: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the lowest validation loss.
    pub params: ModelParams,
    pub best_epoch: usize,
    pub curves: Vec<CurveRow>,
    pub final_params: ModelParams,
    pub optimizer: AdamWState,
}

/// Renders curves as CSV: `epoch,train_loss,val_loss,wall_seconds`.
pub fn curves_csv(rows: &[CurveRow]) -> String {
    let mut out = String::from("epoch,train_loss,val_loss,wall_seconds\n");
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.9e}")).unwrap_or_default();
    for r in rows {
        out.push_str(&format!("{},{},{:.9e},{}\n", r.epoch, opt(r.train_loss), r.val_loss, opt(r.wall_seconds)));
    }
    out
}

pub(crate) struct Clock {
    start: Option<Instant>,
}

impl Clock {
    pub(crate) fn new(enabled: bool) -> Self {
        Clock { start: enabled.then(Instant::now) }
    }

    pub(crate) fn elapsed(&self) -> Option<f64> {
        self.start.map(|s| s.elapsed().as_secs_f64())
    }
}

pub(crate) fn save_epoch_checkpoint(
    dir: Option<&Path>,
    every: usize,
    epoch: usize,
    params: &ModelParams,
    opt: &AdamWState,
) -> Result<(), TrainError> {
    if let Some(dir) = dir {
        if every > 0 && epoch.is_multiple_of(every) {
            std::fs::create_dir_all(dir)?;
            checkpoint::save(&dir.join(format!("epoch_{epoch:04}.gapw")), params, Some(opt))?;
        }
    }
    Ok(())
}

/// Index of the first minimum.
pub(crate) fn argmin(values: impl IntoIterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.into_iter().enumerate() {
        if best.is_none_or(|(_, b)| v < b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

pub(crate) fn check_image_size(params: &ModelParams, img: &Image) -> Result<(), TrainError> {
    let s = params.config().input_size;
    if img.width() != s || img.height() != s {
        return Err(TrainError::Config(format!(
            "images are {}×{} but the model expects {s}×{s}",
            img.width(),
            img.height()
        )));
    }
    Ok(())
}

/// Augments (optionally), filters and stacks images into a network batch.
pub(crate) fn build_batch(
    images: &[&Image],
    size: usize,
    aug: Option<(&AugmentationConfig, &mut ChaCha8Rng)>,
    filter: InputFilter,
) -> Result<Tensor, TrainError> {
    let prepared: Vec<Image> = match aug {
        Some((cfg, rng)) if !cfg.is_identity() => {
            images.iter().map(|img| filter.apply(&apply_augmentations(img, cfg, rng))).collect()
        }
        _ => images.iter().map(|img| filter.apply(img)).collect(),
    };
    Ok(stack_images(prepared.iter().map(|i| i.pixels()), size)?)
}

/// Eval-mode network outputs for every image, in order.
pub fn predict(
    params: &ModelParams,
    images: &[&Image],
    filter: InputFilter,
    batch_size: usize,
) -> Result<Vec<[f64; 9]>, TrainError> {
    let size = params.config().input_size;
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(batch_size.max(1)) {
        let x = build_batch(chunk, size, None, filter)?;
        let f = forward(params, &x, Mode::Eval)?;
        for i in 0..chunk.len() {
            out.push(f.output.row(i).try_into().expect("9 outputs per row"));
        }
    }
    Ok(out)
}

/// Fisher–Yates shuffle of `0..n`.
pub(crate) fn shuffled(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    idx
}

/// Labeled frames of the given sequences, in order.
pub(crate) fn labeled_frames<'a>(seqs: &[&'a Sequence]) -> Vec<(&'a Image, Pose)> {
    seqs.iter()
        .flat_map(|s| s.samples.iter())
        .filter_map(|s: &Sample| s.gt_gate.map(|g| (&s.image, g)))
        .collect()
}

/// Constant prediction: mean position and the re-orthonormalized mean of
/// the 6D encodings.
pub fn mean_predictor(labels: &[Pose]) -> Result<PoseVector9, TrainError> {
    if labels.is_empty() {
        return Err(TrainError::DataEmpty("mean predictor needs labels"));
    }
    let n = labels.len() as f64;
    let mut acc = [0.0; 9];
    for p in labels {
        for (a, v) in acc.iter_mut().zip(pose_to_vector9(p).to_array()) {
            *a += v / n;
        }
    }
    let gs = gram_schmidt(&Rot6D([acc[3], acc[4], acc[5], acc[6], acc[7], acc[8]]))
        .map_err(|_| TrainError::Config("mean rotation is degenerate".into()))?;
    Ok(pose_to_vector9(&Pose::from_parts(gs.rotation(), [acc[0], acc[1], acc[2]])))
}

/// The zero-shot baseline deploys the sim-trained model unchanged.
pub fn run_zero_shot(params: &ModelParams) -> ModelParams {
    params.clone()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose_algebra::{yaw_unchecked, Rotation};
    use crate::regressor::{init_model, ModelConfig};

    #[test]
    fn mean_predictor_examples() {
        let p = Pose::from_parts(Rotation::from_euler_zyx(0.3, 0.1, -0.2), [2.0, 0.1, -0.3]);
        let m = mean_predictor(&[p]).unwrap();
        let expected = pose_to_vector9(&p).to_array();
        assert!(m.to_array().iter().zip(expected).all(|(a, b)| (a - b).abs() < 1e-12));

        let a = Pose::from_parts(Rotation::rot_z(0.4), [1.0, 0.0, 0.0]);
        let b = Pose::from_parts(Rotation::rot_z(-0.4), [3.0, 0.0, 0.0]);
        let m = mean_predictor(&[a, b]).unwrap();
        let pose = crate::pose_algebra::vector9_to_pose(&m).unwrap();
        assert!(yaw_unchecked(&pose).abs() < 1e-12);
        assert_eq!(pose.t, [2.0, 0.0, 0.0]);
        assert!(matches!(mean_predictor(&[]), Err(TrainError::DataEmpty(_))));
    }

    #[test]
    fn zero_shot_is_identity_and_checkpoint_stable() {
        let p = init_model(&ModelConfig::default(), 1).unwrap();
        let z = run_zero_shot(&p);
        assert_eq!(z, p);
        let bytes = checkpoint::to_bytes(&z, None);
        assert_eq!(checkpoint::from_bytes(&bytes).unwrap().0, p);
    }

    #[test]
    fn curves_csv_leaves_optional_fields_empty() {
        let rows = vec![
            CurveRow { epoch: 0, train_loss: None, val_loss: 0.5, wall_seconds: None },
            CurveRow { epoch: 1, train_loss: Some(0.25), val_loss: 0.125, wall_seconds: None },
        ];
        assert_eq!(
            curves_csv(&rows),
            "epoch,train_loss,val_loss,wall_seconds\n0,,5.000000000e-1,\n1,2.500000000e-1,1.250000000e-1,\n"
        );
    }

    #[test]
    fn argmin_takes_first_minimum() {
        assert_eq!(argmin([3.0, 1.0, 2.0, 1.0]), Some(1));
        assert_eq!(argmin(std::iter::empty()), None);
    }
}
