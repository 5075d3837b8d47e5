//! Synthetic landmark-annotated images, the on-disk dataset layout, and the
//! square occluder used for robustness sweeps.
//!
//! A dataset directory holds `manifest.json`, `images/NNNN.pgm` (8-bit P5)
//! and `landmarks/NNNN.csv`.

use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::landmarks;
use crate::geometry::{rasterize_contour, Mask, Point, Shape, Structure};
use crate::pgm::{self, Gray8};
use crate::tensor::Tensor;

/// Resampling budget per sample before generation gives up.
pub const MAX_RESAMPLES: usize = 100;

/// Structure template: name, centre and semi-axes as fractions of the image side.
struct Template {
    name: &'static str,
    centre: [f64; 2],
    axes: [f64; 2],
    intensity: [f64; 2],
}

const TEMPLATES: [Template; 3] = [
    Template {
        name: "right_lung",
        centre: [0.30, 0.43],
        axes: [0.13, 0.25],
        intensity: [0.10, 0.30],
    },
    Template {
        name: "left_lung",
        centre: [0.70, 0.43],
        axes: [0.12, 0.24],
        intensity: [0.10, 0.30],
    },
    Template {
        name: "heart",
        centre: [0.54, 0.80],
        axes: [0.13, 0.09],
        intensity: [0.75, 0.95],
    },
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub image_size: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// At most three: two lungs and a heart, taken in that order.
    pub n_structures: usize,
    pub landmarks_per_structure: usize,
    pub n_harmonics: usize,
    /// Bound on the first harmonic of the relative radius function.
    pub amplitude: f64,
    /// Each further harmonic's bound is the previous one times this.
    pub amplitude_decay: f64,
    /// Centre jitter bound, as a fraction of the image side.
    pub center_jitter: f64,
    /// Relative size jitter bound.
    pub scale_jitter: f64,
    /// Background level range; structures draw from their own ranges.
    pub background: [f64; 2],
    /// Peak-to-peak size of the linear background ramp.
    pub ramp: f64,
    pub noise_sigma: f64,
    pub spacing_mm: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            n_train: 160,
            n_test: 40,
            n_structures: 3,
            landmarks_per_structure: 16,
            n_harmonics: 3,
            amplitude: 0.10,
            amplitude_decay: 0.5,
            center_jitter: 0.05,
            scale_jitter: 0.12,
            background: [0.45, 0.60],
            ramp: 0.2,
            noise_sigma: 0.05,
            spacing_mm: 2.8,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.image_size < 16 {
            return bad(format!("image_size {} is below 16", self.image_size));
        }
        if !(1..=TEMPLATES.len()).contains(&self.n_structures) {
            return bad(format!("n_structures must be 1..={}, got {}", TEMPLATES.len(), self.n_structures));
        }
        if self.landmarks_per_structure < 3 {
            return bad("landmarks_per_structure must be at least 3".into());
        }
        if self.n_train < 2 || self.n_test < 1 {
            return bad(format!("need ≥2 train and ≥1 test samples, got {}/{}", self.n_train, self.n_test));
        }
        let fracs = [self.amplitude, self.amplitude_decay, self.center_jitter, self.scale_jitter, self.ramp, self.noise_sigma];
        if fracs.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return bad("amplitudes, jitters, ramp and noise must be finite and non-negative".into());
        }
        if self.scale_jitter >= 1.0 {
            return bad("scale_jitter must be below 1".into());
        }
        if !(self.spacing_mm > 0.0) || !(self.background[0] <= self.background[1]) {
            return bad("spacing must be positive and background a valid range".into());
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        self.n_train + self.n_test
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructureInfo {
    pub name: String,
    pub n_landmarks: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub n_samples: usize,
    pub image_size: usize,
    pub spacing_mm: f64,
    pub structures: Vec<StructureInfo>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        let mut seen = vec![false; self.n_samples];
        for &i in self.train.iter().chain(&self.test) {
            match seen.get_mut(i) {
                None => return Err(Error::Config(format!("split index {i} outside 0..{}", self.n_samples))),
                Some(true) => return Err(Error::Config(format!("sample {i} appears twice in the splits"))),
                Some(s) => *s = true,
            }
        }
        if self.structures.is_empty() || self.structures.iter().any(|s| s.n_landmarks < 3) {
            return Err(Error::Config("every structure needs at least 3 landmarks".into()));
        }
        if !(self.spacing_mm > 0.0) || self.image_size == 0 {
            return Err(Error::Config("image size and spacing must be positive".into()));
        }
        Ok(())
    }

    pub fn n_landmarks(&self) -> usize {
        self.structures.iter().map(|s| s.n_landmarks).sum()
    }

    fn layout(&self) -> Vec<Structure> {
        let mut start = 0;
        self.structures
            .iter()
            .map(|s| {
                let st = Structure {
                    name: s.name.clone(),
                    start,
                    end: start + s.n_landmarks,
                };
                start = st.end;
                st
            })
            .collect()
    }
}

/// Images with their ground-truth shapes, indexed by sample number.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub images: Vec<Gray8>,
    pub shapes: Vec<Shape>,
}

impl Dataset {
    pub fn image_size(&self) -> usize {
        self.manifest.image_size
    }

    pub fn train_shapes(&self) -> Vec<Shape> {
        self.manifest.train.iter().map(|&i| self.shapes[i].clone()).collect()
    }

    /// `1×H×W` tensor of sample `i`, scaled to `[0, 1]`.
    pub fn image_tensor(&self, i: usize) -> Tensor {
        image_to_tensor(&self.images[i])
    }
}

pub fn image_to_tensor(img: &Gray8) -> Tensor {
    let data = img.pixels.iter().map(|&v| v as f64 / 255.0).collect();
    Tensor::new(&[1, img.height, img.width], data).expect("image dimensions")
}

fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Closed curve `c + s·ρ(θ)·(a_x cos θ, a_y sin θ)` with a random Fourier ρ.
fn random_contour<R: Rng + ?Sized>(cfg: &SyntheticConfig, t: &Template, rng: &mut R, n: usize) -> Option<Vec<Point>> {
    let size = cfg.image_size as f64;
    let jitter = |rng: &mut R, b: f64| if b > 0.0 { rng.random_range(-b..=b) } else { 0.0 };
    let c = [
        (t.centre[0] + jitter(rng, cfg.center_jitter)) * size,
        (t.centre[1] + jitter(rng, cfg.center_jitter)) * size,
    ];
    let s = 1.0 + jitter(rng, cfg.scale_jitter);
    let mut bound = cfg.amplitude;
    let mut coef = Vec::with_capacity(cfg.n_harmonics);
    for h in 1..=cfg.n_harmonics {
        coef.push((h as f64, jitter(rng, bound), jitter(rng, bound)));
        bound *= cfg.amplitude_decay;
    }
    let mut pts = Vec::with_capacity(n);
    for i in 0..n {
        let th = i as f64 / n as f64 * TAU;
        let rho = 1.0 + coef.iter().map(|&(h, a, b)| a * (h * th).cos() + b * (h * th).sin()).sum::<f64>();
        // a positive radius keeps the star-shaped curve simple
        if rho < 0.3 {
            return None;
        }
        pts.push([
            c[0] + s * rho * t.axes[0] * size * th.cos(),
            c[1] + s * rho * t.axes[1] * size * th.sin(),
        ]);
    }
    Some(pts)
}

/// `n` points at equal arc length along a closed polyline, starting at its first vertex.
pub fn resample_arc_length(curve: &[Point], n: usize) -> Vec<Point> {
    let m = curve.len();
    let mut cum = Vec::with_capacity(m + 1);
    cum.push(0.0);
    for i in 0..m {
        let (a, b) = (curve[i], curve[(i + 1) % m]);
        cum.push(cum[i] + (b[0] - a[0]).hypot(b[1] - a[1]));
    }
    let total = cum[m];
    let mut seg = 0;
    (0..n)
        .map(|j| {
            let target = total * j as f64 / n as f64;
            while cum[seg + 1] < target {
                seg += 1;
            }
            let len = cum[seg + 1] - cum[seg];
            let f = if len > 0.0 { (target - cum[seg]) / len } else { 0.0 };
            let (a, b) = (curve[seg], curve[(seg + 1) % m]);
            [a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1])]
        })
        .collect()
}

const DENSE: usize = 720;

struct Drawn {
    shape: Shape,
    regions: Vec<Mask>,
}

fn draw_shape<R: Rng + ?Sized>(cfg: &SyntheticConfig, rng: &mut R) -> Option<Drawn> {
    let size = cfg.image_size;
    let lim = size as f64 - 1.0;
    let mut points = Vec::new();
    let mut structures = Vec::new();
    let mut regions: Vec<Mask> = Vec::new();
    for t in &TEMPLATES[..cfg.n_structures] {
        let dense = random_contour(cfg, t, rng, DENSE)?;
        if dense.iter().any(|p| p[0] < 1.0 || p[1] < 1.0 || p[0] > lim || p[1] > lim) {
            return None;
        }
        let region = rasterize_contour(&dense, size).ok()?;
        if regions.iter().any(|r| r.data.iter().zip(&region.data).any(|(a, b)| *a && *b)) {
            return None;
        }
        let start = points.len();
        points.extend(resample_arc_length(&dense, cfg.landmarks_per_structure));
        structures.push(Structure {
            name: t.name.into(),
            start,
            end: points.len(),
        });
        regions.push(region);
    }
    let shape = Shape::new(points, structures, cfg.spacing_mm).ok()?;
    Some(Drawn { shape, regions })
}

/// Noise-free rendering: background ramp with constant-intensity structures.
fn render_clean<R: Rng + ?Sized>(cfg: &SyntheticConfig, regions: &[Mask], rng: &mut R) -> Vec<f64> {
    let size = cfg.image_size;
    let bg = rng.random_range(cfg.background[0]..=cfg.background[1]);
    let (gx, gy) = (rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0));
    let levels: Vec<f64> = TEMPLATES[..regions.len()]
        .iter()
        .map(|t| rng.random_range(t.intensity[0]..=t.intensity[1]))
        .collect();
    let mut img = vec![0.0; size * size];
    for y in 0..size {
        for x in 0..size {
            let u = (x as f64 + 0.5) / size as f64 - 0.5;
            let v = (y as f64 + 0.5) / size as f64 - 0.5;
            let mut val = bg + 0.5 * cfg.ramp * (gx * u + gy * v);
            for (r, &l) in regions.iter().zip(&levels) {
                if r.get(x, y) {
                    val = l;
                }
            }
            img[y * size + x] = val;
        }
    }
    img
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// A generated sample plus the noise-free rendering it came from.
pub struct GeneratedSample {
    pub image: Gray8,
    pub clean: Vec<f64>,
    pub shape: Shape,
}

/// Sample `index` of the synthetic dataset defined by `(cfg, seed)`.
pub fn generate_sample(cfg: &SyntheticConfig, seed: u64, index: usize) -> Result<GeneratedSample> {
    let mut rng = sample_rng(seed, index);
    let drawn = (0..MAX_RESAMPLES)
        .find_map(|_| draw_shape(cfg, &mut rng))
        .ok_or_else(|| Error::invalid(format!("sample {index}: no valid shape after {MAX_RESAMPLES} draws")))?;
    let clean = render_clean(cfg, &drawn.regions, &mut rng);
    let noise = Normal::new(0.0, cfg.noise_sigma.max(f64::MIN_POSITIVE)).expect("noise sigma");
    let pixels = clean
        .iter()
        .map(|&v| quantize(if cfg.noise_sigma > 0.0 { v + noise.sample(&mut rng) } else { v }))
        .collect();
    let n = cfg.image_size;
    Ok(GeneratedSample {
        image: Gray8 {
            width: n,
            height: n,
            pixels,
        },
        clean,
        shape: drawn.shape,
    })
}

/// Deterministic in `(cfg, seed)`; the first `n_train` samples form the training split.
pub fn generate_synthetic(cfg: &SyntheticConfig, seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    let samples: Vec<GeneratedSample> = (0..cfg.n_samples())
        .into_par_iter()
        .map(|i| generate_sample(cfg, seed, i))
        .collect::<Result<_>>()?;
    let structures = TEMPLATES[..cfg.n_structures]
        .iter()
        .map(|t| StructureInfo {
            name: t.name.into(),
            n_landmarks: cfg.landmarks_per_structure,
        })
        .collect();
    let manifest = DatasetManifest {
        n_samples: cfg.n_samples(),
        image_size: cfg.image_size,
        spacing_mm: cfg.spacing_mm,
        structures,
        train: (0..cfg.n_train).collect(),
        test: (cfg.n_train..cfg.n_samples()).collect(),
        seed,
    };
    let (images, shapes) = samples.into_iter().map(|s| (s.image, s.shape)).unzip();
    Ok(Dataset {
        manifest,
        images,
        shapes,
    })
}

fn image_path(dir: &Path, i: usize) -> std::path::PathBuf {
    dir.join("images").join(format!("{i:04}.pgm"))
}

fn landmark_path(dir: &Path, i: usize) -> std::path::PathBuf {
    dir.join("landmarks").join(format!("{i:04}.csv"))
}

pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    for sub in ["images", "landmarks"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let mpath = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&ds.manifest).map_err(|e| Error::format(&mpath, e.to_string()))?;
    fs::write(&mpath, json).map_err(|e| Error::io(&mpath, e))?;
    for (i, (img, shape)) in ds.images.iter().zip(&ds.shapes).enumerate() {
        pgm::write(&image_path(dir, i), img)?;
        landmarks::write_csv(&landmark_path(dir, i), shape)?;
    }
    Ok(())
}

fn count_files(dir: &Path, ext: &str) -> Result<usize> {
    let rd = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut n = 0;
    for e in rd {
        let e = e.map_err(|e| Error::io(dir, e))?;
        if e.path().extension().is_some_and(|x| x == ext) {
            n += 1;
        }
    }
    Ok(n)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let mpath = dir.join("manifest.json");
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| Error::format(&mpath, e.to_string()))?;
    manifest.validate().map_err(|e| Error::format(&mpath, e.to_string()))?;
    for (sub, ext) in [("images", "pgm"), ("landmarks", "csv")] {
        let found = count_files(&dir.join(sub), ext)?;
        if found != manifest.n_samples {
            return Err(Error::format(
                &mpath,
                format!("manifest lists {} samples but {sub}/ holds {found} .{ext} files", manifest.n_samples),
            ));
        }
    }
    let layout = manifest.layout();
    let size = manifest.image_size;
    let loaded: Vec<(Gray8, Shape)> = (0..manifest.n_samples)
        .into_par_iter()
        .map(|i| {
            let ip = image_path(dir, i);
            let img = pgm::read(&ip)?;
            if img.width != size || img.height != size {
                return Err(Error::format(&ip, format!("{}×{} image, manifest says {size}", img.width, img.height)));
            }
            let lp = landmark_path(dir, i);
            let shape = landmarks::read_csv(&lp, manifest.spacing_mm)?;
            if shape.structures() != layout.as_slice() {
                return Err(Error::format(&lp, "structure layout differs from the manifest"));
            }
            if let Some(p) = shape
                .points()
                .iter()
                .find(|p| !(0.0..size as f64).contains(&p[0]) || !(0.0..size as f64).contains(&p[1]))
            {
                return Err(Error::format(&lp, format!("landmark {p:?} outside the image")));
            }
            Ok((img, shape))
        })
        .collect::<Result<_>>()?;
    let (images, shapes) = loaded.into_iter().unzip();
    Ok(Dataset {
        manifest,
        images,
        shapes,
    })
}

/// Zeroes a square of side `round(fraction·H)` placed uniformly inside the image.
pub fn corrupt_mask<R: Rng + ?Sized>(image: &Gray8, fraction: f64, rng: &mut R) -> Result<Gray8> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::invalid(format!("mask fraction must lie in [0, 1], got {fraction}")));
    }
    let side = ((fraction * image.height as f64).round() as usize).min(image.width);
    let mut out = image.clone();
    if side == 0 {
        return Ok(out);
    }
    let x0 = rng.random_range(0..=image.width - side);
    let y0 = rng.random_range(0..=image.height - side);
    for y in y0..y0 + side {
        out.pixels[y * image.width + x0..y * image.width + x0 + side].fill(0);
    }
    Ok(out)
}
