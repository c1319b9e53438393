use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::render::{render_scene, Background};
use super::{
    apply_augmentations, gate_relative_pose, sample_trajectory, simulate_odometry, CameraIntrinsics, DomainConfig,
    DomainTag, GateGeometry, Image, OdometryModel, SimError, TrajectoryConfig,
};
use crate::pose_algebra::Pose;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    SimTrain,
    SimVal,
    RealTrain,
    RealVal,
    RealTest,
}

impl Split {
    pub const ALL: [Split; 5] = [Split::SimTrain, Split::SimVal, Split::RealTrain, Split::RealVal, Split::RealTest];

    pub fn domain(self) -> DomainTag {
        match self {
            Split::SimTrain | Split::SimVal => DomainTag::Sim,
            _ => DomainTag::Real,
        }
    }

    /// Real train and validation splits never carry gate labels.
    pub fn has_gt(self) -> bool {
        !matches!(self, Split::RealTrain | Split::RealVal)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub sequences: usize,
    pub duration_s: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitsConfig {
    pub sim_train: SplitSpec,
    pub sim_val: SplitSpec,
    pub real_train: SplitSpec,
    pub real_val: SplitSpec,
    pub real_test: SplitSpec,
}

impl Default for SplitsConfig {
    /// Desk scale: many short sim clips, 60 ten-second real recordings.
    fn default() -> Self {
        SplitsConfig {
            sim_train: SplitSpec { sequences: 200, duration_s: 0.8 },
            sim_val: SplitSpec { sequences: 25, duration_s: 0.8 },
            real_train: SplitSpec { sequences: 60, duration_s: 10.0 },
            real_val: SplitSpec { sequences: 6, duration_s: 10.0 },
            real_test: SplitSpec { sequences: 10, duration_s: 10.0 },
        }
    }
}

impl SplitsConfig {
    pub fn get(&self, split: Split) -> SplitSpec {
        match split {
            Split::SimTrain => self.sim_train,
            Split::SimVal => self.sim_val,
            Split::RealTrain => self.real_train,
            Split::RealVal => self.real_val,
            Split::RealTest => self.real_test,
        }
    }

    pub fn total_sequences(&self) -> usize {
        Split::ALL.iter().map(|s| self.get(*s).sequences).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub camera: CameraIntrinsics,
    pub gate: GateGeometry,
    pub trajectory: TrajectoryConfig,
    pub sim: DomainConfig,
    pub real: DomainConfig,
    pub sim_odometry: OdometryModel,
    pub real_odometry: OdometryModel,
    pub fps: f64,
    pub splits: SplitsConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            camera: CameraIntrinsics::desk(),
            gate: GateGeometry::default(),
            trajectory: TrajectoryConfig::default(),
            sim: DomainConfig::sim(),
            real: DomainConfig::real(),
            sim_odometry: OdometryModel::exact(),
            real_odometry: OdometryModel::onboard(),
            fps: 25.0,
            splits: SplitsConfig::default(),
        }
    }
}

impl DatasetConfig {
    pub fn domain(&self, tag: DomainTag) -> &DomainConfig {
        match tag {
            DomainTag::Sim => &self.sim,
            DomainTag::Real => &self.real,
        }
    }

    pub fn odometry(&self, tag: DomainTag) -> &OdometryModel {
        match tag {
            DomainTag::Sim => &self.sim_odometry,
            DomainTag::Real => &self.real_odometry,
        }
    }

    pub fn frames_per_sequence(&self, split: Split) -> usize {
        (self.splits.get(split).duration_s * self.fps).round() as usize
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.camera.validate()?;
        self.gate.validate()?;
        self.trajectory.validate()?;
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(SimError::Config("fps must be positive".into()));
        }
        if !(self.sim_odometry.is_valid() && self.real_odometry.is_valid()) {
            return Err(SimError::Config("odometry parameters must be non-negative".into()));
        }
        if self.camera.width > u16::MAX as usize || self.camera.height > u16::MAX as usize {
            return Err(SimError::Config("image side exceeds 65535".into()));
        }
        for split in Split::ALL {
            let spec = self.splits.get(split);
            if !(spec.duration_s.is_finite() && spec.duration_s >= 0.0) {
                return Err(SimError::Config(format!("{split:?}: duration must be non-negative")));
            }
            if spec.sequences > 0 && self.frames_per_sequence(split) == 0 {
                return Err(SimError::Config(format!("{split:?}: sequences must hold at least one frame")));
            }
        }
        if self.splits.total_sequences() == 0 {
            return Err(SimError::Config("at least one sequence is required".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Image,
    /// Measured drone→world pose.
    pub odom: Pose,
    /// Gate relative to the drone; absent on unlabeled splits.
    pub gt_gate: Option<Pose>,
    pub time: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    pub index: usize,
    pub split: Split,
    pub seed: u64,
    pub samples: Vec<Sample>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub master_seed: u64,
    pub sequences: Vec<Sequence>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> Vec<&Sequence> {
        self.sequences.iter().filter(|s| s.split == split).collect()
    }

    pub fn frame_count(&self, split: Split) -> usize {
        self.split(split).iter().map(|s| s.samples.len()).sum()
    }
}

/// SplitMix64 finalizer applied to `master + (index + 1)·γ`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One recording: trajectory, odometry, background, then frames.
pub fn generate_sequence(cfg: &DatasetConfig, split: Split, index: usize, seed: u64) -> Result<Sequence, SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tag = split.domain();
    let domain = cfg.domain(tag);
    let n = cfg.frames_per_sequence(split);
    let gate_world = cfg.gate.world_pose();
    let truth = sample_trajectory(&cfg.trajectory, &gate_world, &cfg.camera, n, cfg.fps, &mut rng)?;
    let odom = simulate_odometry(&truth, cfg.odometry(tag), 1.0 / cfg.fps, &mut rng);
    let bg = Background::sample(&domain.background, &mut rng);
    let samples = truth
        .iter()
        .zip(odom)
        .enumerate()
        .map(|(i, (pose, odom))| {
            let rel = gate_relative_pose(&gate_world, pose);
            let clean = render_scene(&rel, &cfg.camera, &cfg.gate, &bg, domain.gate_intensity);
            let image = apply_augmentations(&clean, &domain.shift, &mut rng).quantized();
            Sample { image, odom, gt_gate: split.has_gt().then_some(rel), time: i as f64 / cfg.fps }
        })
        .collect();
    Ok(Sequence { index, split, seed, samples })
}

/// All splits, sequences numbered consecutively in split order. Sequences
/// are generated in parallel; each draws only from its derived seed.
pub fn generate_dataset(cfg: &DatasetConfig, master_seed: u64) -> Result<Dataset, SimError> {
    cfg.validate()?;
    let mut jobs = Vec::new();
    for split in Split::ALL {
        for _ in 0..cfg.splits.get(split).sequences {
            jobs.push(split);
        }
    }
    let sequences = jobs
        .par_iter()
        .enumerate()
        .map(|(i, &split)| generate_sequence(cfg, split, i, derive_seed(master_seed, i as u64)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Dataset { config: cfg.clone(), master_seed, sequences })
}
