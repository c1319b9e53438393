//! Synthetic two-domain gate scenes.
//!
//! A single square racing gate stands in a static room. A drone flies
//! smooth random trajectories in front of it while a pinhole camera looks
//! along the body `x` axis. The *sim* domain renders clean images; the
//! *real* domain adds a photometric shift (blur, vignetting, multiplicative
//! noise, exposure changes), a cluttered background, and drifting, noisy
//! odometry in place of the true drone poses.

mod augment;
mod dataset;
mod io;
mod odometry;
mod render;
mod trajectory;

pub use augment::{apply_augmentations, gaussian_blur, pencil_filter, AugmentationConfig};
pub use dataset::{
    derive_seed, generate_dataset, generate_sequence, Dataset, DatasetConfig, Sample, Sequence, Split, SplitSpec, SplitsConfig,
};
pub use io::{
    decode_sequence, read_dataset, read_manifest, read_sequence_file, sequence_file_name, write_dataset, write_sequence_file,
    Manifest, ManifestEntry, SEQ_MAGIC, SEQ_VERSION,
};
pub use odometry::{simulate_odometry, OdometryModel};
pub use render::{gate_mask, render_background, render_gate, render_scene, Background, BackgroundConfig};
pub use trajectory::{gate_in_fov, sample_trajectory, TrajectoryConfig};

use serde::{Deserialize, Serialize};

use crate::pose_algebra::{compose, inverse, Pose, Vec3};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("trajectory infeasible: {0} consecutive field-of-view rejections")]
    TrajectoryInfeasible(usize),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("dataset format: {0}")]
    Format(String),
    #[error(transparent)]
    Pose(#[from] crate::pose_algebra::PoseError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Outer dimensions of a rectangular gate made of four square beams.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GateGeometry {
    pub width: f64,
    pub height: f64,
    /// Height of the lower edge above the floor.
    pub bottom_height: f64,
    pub beam_thickness: f64,
}

impl Default for GateGeometry {
    fn default() -> Self {
        GateGeometry { width: 1.0, height: 0.8, bottom_height: 0.75, beam_thickness: 0.08 }
    }
}

/// Axis-aligned box in the gate frame: center and half extents.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Beam {
    pub center: Vec3,
    pub half: Vec3,
}

impl Beam {
    pub fn corners(&self) -> [Vec3; 8] {
        let mut out = [[0.0; 3]; 8];
        for (i, c) in out.iter_mut().enumerate() {
            for k in 0..3 {
                let sign = if (i >> k) & 1 == 1 { 1.0 } else { -1.0 };
                c[k] = self.center[k] + sign * self.half[k];
            }
        }
        out
    }

    /// The 12 box edges as corner index pairs.
    pub const EDGES: [(usize, usize); 12] = [
        (0, 1), (2, 3), (4, 5), (6, 7),
        (0, 2), (1, 3), (4, 6), (5, 7),
        (0, 4), (1, 5), (2, 6), (3, 7),
    ];
}

impl GateGeometry {
    pub fn validate(&self) -> Result<(), SimError> {
        let ok = [self.width, self.height, self.bottom_height, self.beam_thickness]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0)
            && 2.0 * self.beam_thickness < self.width.min(self.height);
        if ok {
            Ok(())
        } else {
            Err(SimError::Config("gate dimensions must be positive and exceed twice the beam thickness".into()))
        }
    }

    pub fn center_height(&self) -> f64 {
        self.bottom_height + 0.5 * self.height
    }

    /// Gate frame: origin at the opening's center, `x` along the normal,
    /// `y` across, `z` up.
    pub fn beams(&self) -> [Beam; 4] {
        let th = 0.5 * self.beam_thickness;
        let (hw, hh) = (0.5 * self.width, 0.5 * self.height);
        let side_half_z = hh - 2.0 * th;
        [
            Beam { center: [0.0, 0.0, hh - th], half: [th, hw, th] },
            Beam { center: [0.0, 0.0, -hh + th], half: [th, hw, th] },
            Beam { center: [0.0, hw - th, 0.0], half: [th, th, side_half_z] },
            Beam { center: [0.0, -hw + th, 0.0], half: [th, th, side_half_z] },
        ]
    }

    /// Gate standing at the world origin, facing `-x`.
    pub fn world_pose(&self) -> Pose {
        Pose::from_translation([0.0, 0.0, self.center_height()])
    }
}

/// Pinhole intrinsics; pixel `(u, v)` grows right and down.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraIntrinsics {
    pub width: usize,
    pub height: usize,
    pub focal_px: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Default for CameraIntrinsics {
    /// 160×160 with a 110 px focal length (≈72° horizontal field of view).
    fn default() -> Self {
        CameraIntrinsics { width: 160, height: 160, focal_px: 110.0, cx: 80.0, cy: 80.0 }
    }
}

impl CameraIntrinsics {
    /// Same field of view at a square resolution of `size` pixels.
    pub fn scaled_to(&self, size: usize) -> Self {
        let s = size as f64 / self.width as f64;
        CameraIntrinsics {
            width: size,
            height: size,
            focal_px: self.focal_px * s,
            cx: self.cx * s,
            cy: self.cy * s,
        }
    }

    /// Desk-scale 64×64 camera.
    pub fn desk() -> Self {
        CameraIntrinsics::default().scaled_to(64)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.width == 0 || self.height == 0 || !(self.focal_px > 0.0) {
            return Err(SimError::Config("camera needs a positive resolution and focal length".into()));
        }
        Ok(())
    }

    /// Projects a camera-frame point (`x` forward, `y` left, `z` up).
    pub fn project(&self, p: &Vec3) -> Option<(f64, f64)> {
        if p[0] <= 0.0 {
            return None;
        }
        Some((self.cx - self.focal_px * p[1] / p[0], self.cy - self.focal_px * p[2] / p[0]))
    }

    /// Camera-frame direction through the center of pixel `(px, py)`.
    pub fn ray(&self, px: usize, py: usize) -> Vec3 {
        let u = px as f64 + 0.5;
        let v = py as f64 + 0.5;
        [self.focal_px, self.cx - u, self.cy - v]
    }
}

/// Grayscale image with intensities in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    pixels: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, pixels: Vec<f32>) -> Result<Self, SimError> {
        if pixels.len() != width * height {
            return Err(SimError::Format(format!("{} pixels for a {width}×{height} image", pixels.len())));
        }
        if pixels.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(SimError::Format("pixel intensity outside [0, 1]".into()));
        }
        Ok(Image { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Image { width, height, pixels: vec![value.clamp(0.0, 1.0); width * height] }
    }

    pub(crate) fn from_clamped(width: usize, height: usize, mut pixels: Vec<f32>) -> Self {
        for p in pixels.iter_mut() {
            *p = if p.is_nan() { 0.0 } else { p.clamp(0.0, 1.0) };
        }
        Image { width, height, pixels }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.pixels[y * self.width + x]
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().map(|&p| p as f64).sum::<f64>() / self.pixels.len().max(1) as f64
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.pixels.iter().map(|&p| (p * 255.0).round() as u8).collect()
    }

    pub fn from_u8(width: usize, height: usize, bytes: &[u8]) -> Result<Self, SimError> {
        Image::new(width, height, bytes.iter().map(|&b| b as f32 / 255.0).collect())
    }

    /// Rounds to the 8-bit grid used on disk.
    pub fn quantized(&self) -> Image {
        Image::from_u8(self.width, self.height, &self.to_u8()).expect("quantized pixels are in range")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainTag {
    Sim,
    Real,
}

/// Appearance of one domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub tag: DomainTag,
    /// Applied to every stored frame at generation time.
    pub shift: AugmentationConfig,
    /// Applied on the fly while training on this domain.
    pub train_augmentation: AugmentationConfig,
    pub background: BackgroundConfig,
    pub gate_intensity: f64,
}

impl DomainConfig {
    /// Clean renders with half-strength training-time augmentation.
    pub fn sim() -> Self {
        DomainConfig {
            tag: DomainTag::Sim,
            shift: AugmentationConfig::none(),
            train_augmentation: AugmentationConfig::real_shift().scaled(0.5),
            background: BackgroundConfig::plain(),
            gate_intensity: 0.1,
        }
    }

    pub fn real() -> Self {
        DomainConfig {
            tag: DomainTag::Real,
            shift: AugmentationConfig::real_shift(),
            train_augmentation: AugmentationConfig::none(),
            background: BackgroundConfig::textured(),
            gate_intensity: 0.1,
        }
    }
}

/// Pose of the gate as seen from the drone: `drone⁻¹ ∘ gate`.
pub fn gate_relative_pose(gate_world: &Pose, drone_world: &Pose) -> Pose {
    compose(&inverse(drone_world), gate_world)
}
