//! Pipeline stages behind the `gate-adapt` executable.
//!
//! All stages share one run directory:
//!
//! ```text
//! <out>/dataset/                 manifest.json + seq_NNNN.bin
//! <out>/pretrain/                model.gapw, curves.csv
//! <out>/finetune/                model.gapw, curves.csv
//! <out>/baselines/<name>/        model.gapw or pose.json, curves.csv
//! <out>/evaluate/results.csv
//! <out>/ablate/ablation.csv
//! <out>/overlay/frame_NNNNN.pgm
//! ```
//!
//! Every stage directory also receives the resolved `config.json`.

pub mod config;
pub mod overlay;

use std::path::{Path, PathBuf};

use gate_adapt::evaluation::{
    ablation, ablation_csv, evaluate, evaluate_constant, evaluate_poses, finetune_seed, results_csv, test_labels, EvalError,
    AblationRow, Metrics, ResultRow,
};
use gate_adapt::pose_algebra::PoseVector9;
use gate_adapt::regressor::{checkpoint, init_model, ModelParams, RegressorError};
use gate_adapt::scene_sim::{derive_seed, generate_dataset, read_dataset, write_dataset, Dataset, SimError, Split};
use gate_adapt::training::{
    curves_csv, da_curves_csv, finetune_sc, mean_predictor, pretrain, run_zero_shot, train_da_baseline, InputFilter,
    PretrainConfig, TrainError,
};

pub use config::{EvaluationConfig, ExperimentConfig, Method, OverlayConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config {path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("missing {what} at {path} (run the `{stage}` stage first)")]
    Missing { what: &'static str, path: PathBuf, stage: &'static str },
    #[error("checkpoint {path} was trained with a different model configuration")]
    IncompatibleCheckpoint { path: PathBuf },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Regressor(#[from] RegressorError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }
}

/// Baselines trained by the `baseline` subcommand.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Baseline {
    MeanPredictor,
    ZeroShot,
    Pencil,
    Da,
}

impl Baseline {
    pub const ALL: [Baseline; 4] = [Baseline::MeanPredictor, Baseline::ZeroShot, Baseline::Pencil, Baseline::Da];

    pub fn method(self) -> Method {
        match self {
            Baseline::MeanPredictor => Method::MeanPredictor,
            Baseline::ZeroShot => Method::ZeroShot,
            Baseline::Pencil => Method::Pencil,
            Baseline::Da => Method::Da,
        }
    }

    pub fn parse(name: &str) -> Result<Self, CliError> {
        Baseline::ALL
            .into_iter()
            .find(|b| b.method().name() == name)
            .ok_or_else(|| CliError::Invalid(format!("unknown baseline `{name}` (expected mean-predictor, zero-shot, pencil or da)")))
    }
}

const MODEL_FILE: &str = "model.gapw";
const MEAN_FILE: &str = "pose.json";

/// Seeds of the individual stages, all derived from the run seed.
pub mod seeds {
    use super::derive_seed;
    pub fn init(run: u64) -> u64 {
        derive_seed(run, 10)
    }
    pub fn pretrain(run: u64) -> u64 {
        derive_seed(run, 11)
    }
    pub fn pencil(run: u64) -> u64 {
        derive_seed(run, 12)
    }
    pub fn da(run: u64) -> u64 {
        derive_seed(run, 13)
    }
}

/// A run directory plus its resolved configuration.
pub struct Run {
    pub cfg: ExperimentConfig,
    pub out: PathBuf,
}

impl Run {
    pub fn new(cfg: ExperimentConfig, out: &Path) -> Self {
        Run { cfg, out: out.to_path_buf() }
    }

    fn stage_dir(&self, rel: &str) -> Result<PathBuf, CliError> {
        let dir = self.out.join(rel);
        std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        write_file(&dir.join("config.json"), self.cfg.to_json().as_bytes())?;
        Ok(dir)
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.cfg.dataset_dir.clone().unwrap_or_else(|| self.out.join("dataset"))
    }

    pub fn method_dir(&self, m: Method) -> PathBuf {
        match m {
            Method::Ours => self.out.join("finetune"),
            other => self.out.join("baselines").join(other.name()),
        }
    }

    pub fn load_dataset(&self) -> Result<Dataset, CliError> {
        let dir = self.dataset_dir();
        if !dir.join("manifest.json").is_file() {
            return Err(CliError::Missing { what: "dataset", path: dir, stage: "generate" });
        }
        Ok(read_dataset(&dir)?)
    }

    fn load_model(&self, path: PathBuf, stage: &'static str) -> Result<ModelParams, CliError> {
        if !path.is_file() {
            return Err(CliError::Missing { what: "checkpoint", path, stage });
        }
        let (params, _) = checkpoint::load(&path)?;
        if params.config() != &self.cfg.model {
            return Err(CliError::IncompatibleCheckpoint { path });
        }
        Ok(params)
    }

    pub fn pretrained(&self) -> Result<ModelParams, CliError> {
        self.load_model(self.out.join("pretrain").join(MODEL_FILE), "pretrain")
    }

    fn check_camera(&self, ds: &Dataset) -> Result<(), CliError> {
        let (w, h) = (ds.config.camera.width, ds.config.camera.height);
        let s = self.cfg.model.input_size;
        if w != s || h != s {
            return Err(CliError::Invalid(format!("dataset frames are {w}×{h} but the model expects {s}×{s}")));
        }
        Ok(())
    }

    pub fn generate(&self) -> Result<(), CliError> {
        let ds = generate_dataset(&self.cfg.dataset, self.cfg.seed)?;
        let dir = self.out.join("dataset");
        write_dataset(&dir, &ds)?;
        write_file(&dir.join("config.json"), self.cfg.to_json().as_bytes())?;
        Ok(())
    }

    fn pretrain_with(&self, cfg: &PretrainConfig, seed: u64, dir: &Path, ds: &Dataset) -> Result<(), CliError> {
        let init = init_model(&self.cfg.model, seeds::init(self.cfg.seed))?;
        let out = pretrain(
            cfg,
            &init,
            &ds.split(Split::SimTrain),
            &ds.split(Split::SimVal),
            &ds.config.sim.train_augmentation,
            seed,
            Some(&dir.join("checkpoints")),
        )?;
        checkpoint::save(&dir.join(MODEL_FILE), &out.params, None)?;
        write_file(&dir.join("curves.csv"), curves_csv(&out.curves).as_bytes())
    }

    pub fn pretrain(&self) -> Result<(), CliError> {
        let ds = self.load_dataset()?;
        self.check_camera(&ds)?;
        let dir = self.stage_dir("pretrain")?;
        self.pretrain_with(&self.cfg.pretrain, seeds::pretrain(self.cfg.seed), &dir, &ds)
    }

    pub fn finetune(&self) -> Result<(), CliError> {
        let ds = self.load_dataset()?;
        self.check_camera(&ds)?;
        let init = self.pretrained()?;
        let dir = self.stage_dir("finetune")?;
        let train = ds.split(Split::RealTrain);
        let seed = finetune_seed(self.cfg.seed, train.len());
        let out = finetune_sc(&self.cfg.finetune, &init, &train, &ds.split(Split::RealVal), seed, Some(&dir.join("checkpoints")))?;
        checkpoint::save(&dir.join(MODEL_FILE), &out.params, None)?;
        write_file(&dir.join("curves.csv"), curves_csv(&out.curves).as_bytes())
    }

    pub fn baseline(&self, which: Baseline) -> Result<(), CliError> {
        let ds = self.load_dataset()?;
        self.check_camera(&ds)?;
        match which {
            Baseline::MeanPredictor => {
                let labels: Vec<_> =
                    ds.split(Split::SimTrain).iter().flat_map(|s| s.samples.iter().filter_map(|x| x.gt_gate)).collect();
                let pose = mean_predictor(&labels)?;
                let dir = self.stage_dir("baselines/mean-predictor")?;
                let mut json = serde_json::to_string_pretty(&pose.to_array().to_vec())?;
                json.push('\n');
                write_file(&dir.join(MEAN_FILE), json.as_bytes())
            }
            Baseline::ZeroShot => {
                let params = run_zero_shot(&self.pretrained()?);
                let dir = self.stage_dir("baselines/zero-shot")?;
                Ok(checkpoint::save(&dir.join(MODEL_FILE), &params, None)?)
            }
            Baseline::Pencil => {
                let dir = self.stage_dir("baselines/pencil")?;
                let cfg = PretrainConfig { input_filter: InputFilter::Pencil, ..self.cfg.pretrain.clone() };
                self.pretrain_with(&cfg, seeds::pencil(self.cfg.seed), &dir, &ds)
            }
            Baseline::Da => {
                let init = self.pretrained()?;
                let dir = self.stage_dir("baselines/da")?;
                let out = train_da_baseline(
                    &self.cfg.da,
                    &init,
                    &ds.split(Split::SimTrain),
                    &ds.split(Split::RealTrain),
                    &ds.config.sim.train_augmentation,
                    seeds::da(self.cfg.seed),
                )?;
                checkpoint::save(&dir.join(MODEL_FILE), &out.params, None)?;
                write_file(&dir.join("curves.csv"), da_curves_csv(&out.curves).as_bytes())
            }
        }
    }

    fn method_filter(m: Method) -> InputFilter {
        if m == Method::Pencil {
            InputFilter::Pencil
        } else {
            InputFilter::None
        }
    }

    /// Model of a trained method; `None` for the constant and oracle rows.
    pub fn method_model(&self, m: Method) -> Result<Option<ModelParams>, CliError> {
        let stage = match m {
            Method::MeanPredictor | Method::Oracle => return Ok(None),
            Method::Ours => "finetune",
            _ => "baseline",
        };
        self.load_model(self.method_dir(m).join(MODEL_FILE), stage).map(Some)
    }

    fn mean_pose(&self) -> Result<PoseVector9, CliError> {
        let path = self.method_dir(Method::MeanPredictor).join(MEAN_FILE);
        if !path.is_file() {
            return Err(CliError::Missing { what: "mean pose", path, stage: "baseline" });
        }
        let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        let v: Vec<f64> = serde_json::from_str(&text)?;
        if v.len() != 9 {
            return Err(CliError::Invalid(format!("{}: expected 9 numbers", path.display())));
        }
        Ok(PoseVector9::from_slice(&v))
    }

    pub fn score(&self, m: Method, ds: &Dataset) -> Result<Metrics, CliError> {
        let test = ds.split(Split::RealTest);
        let policy = self.cfg.evaluation.calibration;
        Ok(match m {
            Method::Oracle => {
                let (gts, lens) = test_labels(&test)?;
                evaluate_poses(&gts, &gts, &lens, policy)?
            }
            Method::MeanPredictor => evaluate_constant(&self.mean_pose()?, &test, policy)?,
            _ => {
                let params = self.method_model(m)?.expect("trained method");
                evaluate(&params, &test, Self::method_filter(m), policy)?
            }
        })
    }

    pub fn evaluate(&self) -> Result<Vec<ResultRow>, CliError> {
        let ds = self.load_dataset()?;
        let rows = self
            .cfg
            .evaluation
            .methods
            .iter()
            .map(|&m| Ok(ResultRow { method: m.name().into(), metrics: self.score(m, &ds)?, seed: self.cfg.seed }))
            .collect::<Result<Vec<_>, CliError>>()?;
        let dir = self.stage_dir("evaluate")?;
        write_file(&dir.join("results.csv"), results_csv(&rows).as_bytes())?;
        Ok(rows)
    }

    pub fn ablate(&self) -> Result<Vec<AblationRow>, CliError> {
        let ds = self.load_dataset()?;
        self.check_camera(&ds)?;
        let init = self.pretrained()?;
        let rows = ablation(
            &self.cfg.evaluation.ablation_counts,
            &init,
            &ds.split(Split::RealTrain),
            &ds.split(Split::RealVal),
            &ds.split(Split::RealTest),
            &self.cfg.finetune,
            self.cfg.evaluation.calibration,
            self.cfg.seed,
        )?;
        let dir = self.stage_dir("ablate")?;
        write_file(&dir.join("ablation.csv"), ablation_csv(&rows).as_bytes())?;
        Ok(rows)
    }

    pub fn overlay(&self) -> Result<Vec<PathBuf>, CliError> {
        let ds = self.load_dataset()?;
        let oc = &self.cfg.overlay;
        let frames: Vec<_> = ds.split(oc.split).into_iter().flat_map(|s| s.samples.iter()).collect();
        if let Some(&bad) = oc.frames.iter().find(|&&i| i >= frames.len()) {
            return Err(CliError::Invalid(format!("frame {bad} does not exist ({} frames in the split)", frames.len())));
        }
        let chosen: Vec<_> = oc.frames.iter().map(|&i| frames[i]).collect();
        let preds = overlay::predict_frames(self, oc.method, &chosen)?;
        let dir = self.stage_dir("overlay")?;
        let mut written = Vec::new();
        for ((&i, sample), pred) in oc.frames.iter().zip(&chosen).zip(&preds) {
            let img = overlay::draw(&sample.image, pred, &ds.config.camera, &ds.config.gate);
            let path = dir.join(format!("frame_{i:05}.pgm"));
            write_file(&path, &overlay::to_pgm(&img))?;
            written.push(path);
        }
        Ok(written)
    }
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}
