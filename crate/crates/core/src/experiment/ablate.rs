use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::eval::evaluate_images;
use super::model::Model;
use crate::data::{corrupt_mask, Dataset};
use crate::error::{Error, Result};
use crate::pgm::Gray8;

pub const ABLATION_HEADER: [&str; 6] = ["model", "fraction", "seed", "dsc_abs", "dsc_rel", "asd_mm"];

/// One line of the sweep. `seed` is `None` on the per-fraction median rows.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub model: String,
    pub fraction: f64,
    pub seed: Option<u64>,
    pub dsc_abs: f64,
    /// `dsc_abs` divided by the model's DSC on clean images.
    pub dsc_rel: f64,
    pub asd_mm: f64,
}

/// The default sweep 0.0, 0.1, …, 1.0.
pub fn default_fractions() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn corrupted(data: &Dataset, fraction: f64, seed: u64) -> Result<Vec<Gray8>> {
    data.manifest
        .test
        .iter()
        .enumerate()
        .map(|(k, &i)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            corrupt_mask(&data.images[i], fraction, &mut rng)
        })
        .collect()
}

/// Evaluates every model on masked test images for each `(fraction, seed)`.
///
/// All models see the same masks. Each model uses its own evaluation seed
/// and initial-shape count, so the fraction-0 rows match plain evaluation.
pub fn ablate(models: &[&Model], data: &Dataset, fractions: &[f64], seeds: &[u64]) -> Result<Vec<AblationRow>> {
    if seeds.is_empty() || models.is_empty() {
        return Err(Error::invalid("ablation needs at least one model and one seed"));
    }
    if let Some(f) = fractions.iter().find(|f| !(0.0..=1.0).contains(*f)) {
        return Err(Error::invalid(format!("mask fraction {f} outside [0, 1]")));
    }
    let clean = corrupted(data, 0.0, 0)?;
    let run = |m: &Model, images: &[Gray8]| -> Result<(f64, f64)> {
        let r = evaluate_images(m, data, images, m.config.n_initial_shapes, m.config.seeds.eval)?;
        Ok((r.average.dsc.mean, r.average.asd_mm.mean))
    };
    let baselines: Vec<(f64, f64)> = models.iter().map(|m| run(m, &clean)).collect::<Result<_>>()?;

    // results[model][fraction][seed]
    let mut results = vec![vec![Vec::with_capacity(seeds.len()); fractions.len()]; models.len()];
    for (fi, &f) in fractions.iter().enumerate() {
        for &seed in seeds {
            let images = if f == 0.0 { None } else { Some(corrupted(data, f, seed)?) };
            for (mi, m) in models.iter().enumerate() {
                let v = match &images {
                    None => baselines[mi],
                    Some(imgs) => run(m, imgs)?,
                };
                results[mi][fi].push(v);
            }
        }
    }

    let mut rows = Vec::new();
    for (mi, m) in models.iter().enumerate() {
        let base = baselines[mi].0;
        for (fi, &f) in fractions.iter().enumerate() {
            let row = |seed, (d, a): (f64, f64)| AblationRow {
                model: m.label(),
                fraction: f,
                seed,
                dsc_abs: d,
                dsc_rel: d / base,
                asd_mm: a,
            };
            for (&seed, &v) in seeds.iter().zip(&results[mi][fi]) {
                rows.push(row(Some(seed), v));
            }
            let vals = &results[mi][fi];
            rows.push(AblationRow {
                dsc_rel: median(vals.iter().map(|v| v.0 / base).collect()),
                ..row(
                    None,
                    (median(vals.iter().map(|v| v.0).collect()), median(vals.iter().map(|v| v.1).collect())),
                )
            });
        }
    }
    Ok(rows)
}

pub fn write_ablation_csv(path: &Path, rows: &[AblationRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let mut write = || -> std::result::Result<(), csv::Error> {
        w.write_record(ABLATION_HEADER)?;
        for r in rows {
            let seed = r.seed.map_or_else(|| "median".to_string(), |s| s.to_string());
            w.write_record([
                r.model.clone(),
                r.fraction.to_string(),
                seed,
                r.dsc_abs.to_string(),
                r.dsc_rel.to_string(),
                r.asd_mm.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    };
    write().map_err(|e| Error::format(path, e.to_string()))
}
