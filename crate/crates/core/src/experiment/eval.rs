use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{Model, Prediction};
use super::train::History;
use crate::data::{image_to_tensor, Dataset};
use crate::error::{Error, Result};
use crate::geometry::{asd, asd_point_set, boundary_points, dice, pick_initial_shape, points_from_flat, rasterize, Mask, Shape};
use crate::pgm::Gray8;

/// Mean and sample standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub sd: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: f64::NAN, sd: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, sd }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricPair {
    pub asd_mm: Stat,
    /// Percent.
    pub dsc: Stat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructureReport {
    pub name: String,
    pub n_landmarks: usize,
    pub asd_mm: Stat,
    pub dsc: Stat,
}

/// Test-set metrics plus the training curves that produced the model.
///
/// `average` pools, per prediction, the landmark-count-weighted mean over
/// structures, so `average.*.mean` equals the weighted mean of the
/// per-structure means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub model: String,
    pub n_images: usize,
    /// Predictions made per image (1 for models that ignore the initial shape).
    pub n_initial_shapes: usize,
    pub structures: Vec<StructureReport>,
    pub average: MetricPair,
    pub loss_history: Vec<f64>,
    pub val_loss_history: Vec<f64>,
    pub lr_history: Vec<f64>,
}

impl RunReport {
    pub fn attach_history(&mut self, h: &History) {
        self.loss_history = h.train_loss.clone();
        self.val_loss_history = h.val_loss.clone();
        self.lr_history = h.lr.clone();
    }

    /// Largest gap between the stored averages and their recomputation from
    /// the per-structure means.
    pub fn consistency_error(&self) -> f64 {
        let total: usize = self.structures.iter().map(|s| s.n_landmarks).sum();
        let w = |f: &dyn Fn(&StructureReport) -> f64| {
            self.structures.iter().map(|s| s.n_landmarks as f64 * f(s)).sum::<f64>() / total as f64
        };
        let dsc = (w(&|s| s.dsc.mean) - self.average.dsc.mean).abs();
        let asd = (w(&|s| s.asd_mm.mean) - self.average.asd_mm.mean).abs();
        dsc.max(asd)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}

/// Per-structure `(dsc %, asd mm)` for one prediction.
pub type Evaluation = Vec<(f64, f64)>;

fn shape_metrics(points: &[f64], gt: &Shape, gt_masks: &[Mask], size: usize) -> Result<Evaluation> {
    let pred = gt.with_points(points_from_flat(points))?;
    let masks = rasterize(&pred, size)?;
    gt.structures()
        .iter()
        .zip(masks.iter().zip(gt_masks))
        .map(|(s, (m, g))| Ok((100.0 * dice(m, g)?, asd(&pred, gt, &s.name)?)))
        .collect()
}

/// Thresholds at 0.5. An empty mask has no boundary, so its ASD is charged
/// the image diagonal.
fn mask_metrics(probs: &[f64], gt: &Shape, gt_masks: &[Mask], size: usize) -> Result<Evaluation> {
    let plane = size * size;
    let penalty = (2.0f64).sqrt() * size as f64 * gt.spacing_mm();
    gt.structures()
        .iter()
        .enumerate()
        .map(|(c, s)| {
            let m = Mask::from_probs(size, size, &probs[c * plane..(c + 1) * plane], 0.5);
            let d = 100.0 * dice(&m, &gt_masks[c])?;
            let a = asd_point_set(&boundary_points(&m), gt, &s.name)?.unwrap_or(penalty);
            Ok((d, a))
        })
        .collect()
}

fn evaluate_one(model: &Model, image: &Gray8, gt: &Shape, n_init: usize, seed: u64, position: usize) -> Result<Vec<Evaluation>> {
    let size = model.image_size();
    let gt_masks = rasterize(gt, size)?;
    let tensor = image_to_tensor(image);
    let p = model.params.bind(false);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(position as u64);
    let shapes = model.train_shapes();
    let runs = if model.uses_initial_shape() { n_init } else { 1 };
    (0..runs)
        .map(|_| {
            let init = &shapes[pick_initial_shape(shapes.len(), &mut rng, None)?];
            match model.forward(&p, &tensor, init, &mut rng)? {
                Prediction::Shape(t) => shape_metrics(t.data(), gt, &gt_masks, size),
                Prediction::Masks(t) => mask_metrics(t.data(), gt, &gt_masks, size),
            }
        })
        .collect()
}

/// Evaluates `images` (one per test sample, in split order) against the
/// test split's ground truth. Images are processed in parallel; results are
/// merged in split order.
pub fn evaluate_images(model: &Model, data: &Dataset, images: &[Gray8], n_init: usize, seed: u64) -> Result<RunReport> {
    let test = &data.manifest.test;
    if images.len() != test.len() {
        return Err(Error::shape("evaluate", format!("{} images for {} test samples", images.len(), test.len())));
    }
    if n_init == 0 {
        return Err(Error::invalid("n_initial_shapes must be at least 1"));
    }
    let per_image: Vec<Vec<Evaluation>> = test
        .par_iter()
        .zip(images.par_iter())
        .enumerate()
        .map(|(k, (&i, img))| evaluate_one(model, img, &data.shapes[i], n_init, seed, k))
        .collect::<Result<_>>()?;
    let evals: Vec<&Evaluation> = per_image.iter().flatten().collect();

    let layout = data.shapes[test[0]].structures();
    let total: usize = layout.iter().map(|s| s.len()).sum();
    let structures = layout
        .iter()
        .enumerate()
        .map(|(c, s)| {
            let d: Vec<f64> = evals.iter().map(|e| e[c].0).collect();
            let a: Vec<f64> = evals.iter().map(|e| e[c].1).collect();
            StructureReport {
                name: s.name.clone(),
                n_landmarks: s.len(),
                asd_mm: Stat::of(&a),
                dsc: Stat::of(&d),
            }
        })
        .collect();
    let weighted = |f: fn(&(f64, f64)) -> f64| -> Vec<f64> {
        evals
            .iter()
            .map(|e| layout.iter().zip(e.iter()).map(|(s, v)| s.len() as f64 * f(v)).sum::<f64>() / total as f64)
            .collect()
    };
    Ok(RunReport {
        model: model.label(),
        n_images: test.len(),
        n_initial_shapes: per_image.first().map_or(0, Vec::len),
        structures,
        average: MetricPair {
            asd_mm: Stat::of(&weighted(|v| v.1)),
            dsc: Stat::of(&weighted(|v| v.0)),
        },
        loss_history: Vec::new(),
        val_loss_history: Vec::new(),
        lr_history: Vec::new(),
    })
}

/// Evaluates on the unmodified test split.
pub fn evaluate(model: &Model, data: &Dataset, n_init: usize, seed: u64) -> Result<RunReport> {
    let images: Vec<Gray8> = data.manifest.test.iter().map(|&i| data.images[i].clone()).collect();
    evaluate_images(model, data, &images, n_init, seed)
}
