//! Predicted gate drawn over a frame, written as binary PGM.

use gate_adapt::evaluation::decode_predictions;
use gate_adapt::pose_algebra::{vector9_to_pose, Pose};
use gate_adapt::scene_sim::{gate_mask, CameraIntrinsics, GateGeometry, Image, Sample};
use gate_adapt::training::predict;

use crate::{CliError, Method, Run};

/// Pixels covered at least half by a gate beam placed at `pred`.
pub fn overlay_mask(pred: &Pose, cam: &CameraIntrinsics, gate: &GateGeometry) -> Vec<bool> {
    gate_mask(pred, cam, gate).into_iter().map(|c| c >= 0.5).collect()
}

/// Paints the predicted beams white.
pub fn draw(img: &Image, pred: &Pose, cam: &CameraIntrinsics, gate: &GateGeometry) -> Image {
    let mask = overlay_mask(pred, cam, gate);
    let px = img.pixels().iter().zip(mask).map(|(&p, m)| if m { 1.0 } else { p }).collect();
    Image::new(img.width(), img.height(), px).expect("overlay keeps pixels in range")
}

pub fn to_pgm(img: &Image) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.to_u8());
    out
}

pub(crate) fn predict_frames(run: &Run, method: Method, frames: &[&Sample]) -> Result<Vec<Pose>, CliError> {
    match method {
        Method::Oracle => frames
            .iter()
            .map(|s| s.gt_gate.ok_or_else(|| CliError::Invalid("the oracle overlay needs a labeled split".into())))
            .collect(),
        Method::MeanPredictor => {
            let p = vector9_to_pose(&run.mean_pose()?).map_err(|_| CliError::Invalid("mean pose is degenerate".into()))?;
            Ok(vec![p; frames.len()])
        }
        m => {
            let params = run.method_model(m)?.expect("trained method");
            let images: Vec<&Image> = frames.iter().map(|s| &s.image).collect();
            let filter = Run::method_filter(m);
            Ok(decode_predictions(&predict(&params, &images, filter, 64)?)?)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use gate_adapt::pose_algebra::Rotation;
    use gate_adapt::scene_sim::{render_scene, Background};

    fn iou(a: &[bool], b: &[bool]) -> f64 {
        let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
        let union = a.iter().zip(b).filter(|(x, y)| **x || **y).count();
        inter as f64 / union as f64
    }

    #[test]
    fn true_pose_overlay_matches_dark_pixels() {
        let cam = CameraIntrinsics::desk();
        let gate = GateGeometry::default();
        let bg = Background::uniform(0.7);
        for (yaw, t) in [(0.0, [2.0, 0.0, 0.1]), (0.3, [3.0, 0.4, -0.2]), (-0.5, [1.6, -0.3, 0.0])] {
            let rel = Pose::from_parts(Rotation::rot_z(yaw), t);
            let img = render_scene(&rel, &cam, &gate, &bg, 0.1);
            // Half-covered pixels land exactly on the midpoint 0.4.
            let dark: Vec<bool> = img.pixels().iter().map(|&p| p <= 0.4 + 1e-6).collect();
            let score = iou(&overlay_mask(&rel, &cam, &gate), &dark);
            assert!(score > 0.8, "iou {score} at {t:?}");
        }
    }

    #[test]
    fn out_of_view_prediction_draws_nothing() {
        let cam = CameraIntrinsics::desk();
        let img = Image::filled(cam.width, cam.height, 0.3);
        let behind = Pose::from_translation([-2.0, 0.0, 0.0]);
        assert_eq!(draw(&img, &behind, &cam, &GateGeometry::default()), img);
    }

    #[test]
    fn pgm_header_and_payload() {
        let img = Image::new(2, 1, vec![0.0, 1.0]).unwrap();
        assert_eq!(to_pgm(&img), b"P5\n2 1\n255\n\x00\xff".to_vec());
    }
}
