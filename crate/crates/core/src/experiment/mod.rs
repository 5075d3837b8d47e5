//! Training, evaluation and the occlusion sweep.

mod ablate;
mod eval;
mod model;
mod optim;
mod train;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use ablate::{ablate, default_fractions, write_ablation_csv, AblationRow, ABLATION_HEADER};
pub use eval::{evaluate, evaluate_images, Evaluation, MetricPair, RunReport, Stat, StructureReport};
pub use model::{mask_tensor, target_masks, Model, Prediction};
pub use optim::{adam_step, Adam, AdamState, PlateauScheduler, BETA1, BETA2, EPS};
pub use train::{train, train_and_save, History, TrainOutcome};

use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::gnn::{GnnConfig, GnnKind};
use crate::heads::HeadKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[serde(rename = "pointnet")]
    PointNet,
    PointTransformer,
    PixelBaseline,
    MeanShape,
}

impl ModelKind {
    pub fn gnn(self) -> Option<GnnKind> {
        match self {
            ModelKind::PointNet => Some(GnnKind::PointNet),
            ModelKind::PointTransformer => Some(GnnKind::PointTransformer),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::PointNet => "pointnet",
            ModelKind::PointTransformer => "point_transformer",
            ModelKind::PixelBaseline => "pixel_baseline",
            ModelKind::MeanShape => "mean_shape",
        }
    }
}

/// Random seeds for parameter init, training order and evaluation sampling.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub init: u64,
    pub train: u64,
    pub eval: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            init: 0,
            train: 1,
            eval: 2,
        }
    }
}

/// Everything that defines a run. Unknown keys are rejected when parsing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    pub head: HeadKind,
    pub lr: f64,
    pub lr_factor: f64,
    pub patience: usize,
    pub epochs: usize,
    pub lambda_r: f64,
    /// Point-cloud offset spread in pixels; `None` scales 3 px at 256 px to the image.
    pub sigma_offset: Option<f64>,
    pub seeds: Seeds,
    pub n_initial_shapes: usize,
    pub dataset: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub encoder: EncoderConfig,
    pub gnn: GnnConfig,
    /// Width of the pixel decoder's 1×1 branch.
    pub decoder_width: usize,
    /// Share of the training split held out for the scheduler's validation loss.
    pub val_fraction: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::PointTransformer,
            head: HeadKind::Disp,
            lr: 1e-3,
            lr_factor: 0.1,
            patience: 30,
            epochs: 150,
            lambda_r: crate::heads::DEFAULT_LAMBDA,
            sigma_offset: None,
            seeds: Seeds::default(),
            n_initial_shapes: 5,
            dataset: None,
            output: None,
            encoder: EncoderConfig::default(),
            gnn: GnnConfig::default(),
            decoder_width: 64,
            val_fraction: 0.1,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.lr_factor > 0.0 && self.lr_factor < 1.0) {
            return bad(format!("lr_factor must lie in (0, 1), got {}", self.lr_factor));
        }
        if self.patience < 1 {
            return bad("patience must be at least 1".into());
        }
        if self.n_initial_shapes < 1 {
            return bad("n_initial_shapes must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.lambda_r) {
            return bad(format!("lambda_r must lie in [0, 1], got {}", self.lambda_r));
        }
        if let Some(s) = self.sigma_offset {
            if !(s >= 0.0 && s.is_finite()) {
                return bad(format!("sigma_offset must be ≥ 0, got {s}"));
            }
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad(format!("val_fraction must lie in [0, 1), got {}", self.val_fraction));
        }
        if self.decoder_width == 0 {
            return bad("decoder_width must be positive".into());
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    /// Label used in reports and ablation tables, e.g. `point_transformer_disp`.
    pub fn label(&self) -> String {
        match self.model {
            ModelKind::PointNet | ModelKind::PointTransformer => {
                let head = match self.head {
                    HeadKind::Disp => "disp",
                    HeadKind::Heatmap => "heatmap",
                    HeadKind::Shape => "shape",
                };
                format!("{}_{head}", self.model.as_str())
            }
            m => m.as_str().to_string(),
        }
    }

    pub fn sigma_for(&self, image_size: usize) -> f64 {
        self.sigma_offset
            .unwrap_or_else(|| crate::geometry::offset_sigma_for_size(image_size))
    }
}

/// Rebuilds a trained model from a run directory (`config.json` plus
/// `weights.bin`), taking initial shapes from the dataset's training split.
pub fn load_run(dir: &Path, data: &crate::data::Dataset) -> Result<Model> {
    let cfg = ExperimentConfig::load(&dir.join("config.json"))?;
    Model::load(&cfg, &data.train_shapes(), data.image_size(), &dir.join("weights.bin"))
}
