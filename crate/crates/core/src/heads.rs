//! The shared per-landmark MLP and the three ways of turning its output
//! into a shape: bounded displacements, heatmap soft-argmax, and a convex
//! combination of training shapes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point, Shape, Structure};
use crate::nn::{Bound, ParamStore};
use crate::tensor::Tensor;

/// Half-width of the displacement window in pixels (a 45×45 box).
pub const DEFAULT_RADIUS: f64 = 22.0;
/// Image side at which [`DEFAULT_RADIUS`] applies.
pub const REFERENCE_SIZE: usize = 256;
/// Heatmap grid points per axis.
pub const GRID_SIDE: usize = 11;
pub const DEFAULT_LAMBDA: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Disp,
    Heatmap,
    Shape,
}

/// `K → 2K → 2K → M` with relu between layers, shared by every landmark row.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpHead {
    pub in_dim: usize,
    pub out_dim: usize,
    prefix: String,
}

impl MlpHead {
    pub fn new(in_dim: usize, out_dim: usize, prefix: &str) -> Self {
        Self {
            in_dim,
            out_dim,
            prefix: format!("{prefix}mlp."),
        }
    }

    fn name(&self, s: &str) -> String {
        format!("{}{s}", self.prefix)
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) {
        let (k, m) = (self.in_dim, self.out_dim);
        store.insert_linear(&self.name("fc0"), k, 2 * k, 2.0, rng);
        store.insert_linear(&self.name("fc1"), 2 * k, 2 * k, 2.0, rng);
        store.insert_linear(&self.name("fc2"), 2 * k, m, 1.0, rng);
    }

    pub fn forward(&self, p: &Bound, feats: &Tensor) -> Result<Tensor> {
        let (_, k) = feats.dims2("mlp_head")?;
        if k != self.in_dim {
            return Err(Error::shape("mlp_head", format!("{k} input features, head expects {}", self.in_dim)));
        }
        let h = p.linear(&self.name("fc0"), feats)?.relu();
        let h = p.linear(&self.name("fc1"), &h)?.relu();
        p.linear(&self.name("fc2"), &h)
    }
}

/// The displacement window scaled from the reference resolution to `image_size`.
pub fn radius_for_size(image_size: usize) -> f64 {
    DEFAULT_RADIUS * image_size as f64 / REFERENCE_SIZE as f64
}

/// `U = r·tanh(raw/r)`, elementwise.
pub fn displacement_from_raw(raw: &Tensor, radius: f64) -> Result<Tensor> {
    if !(radius > 0.0) {
        return Err(Error::invalid(format!("displacement radius must be positive, got {radius}")));
    }
    Ok(raw.scale(1.0 / radius).tanh().scale(radius))
}

/// Regular `side×side` grid of offsets spanning `[−radius, radius]²`,
/// `x` varying fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct HeatmapGrid {
    pub radius: f64,
    pub side: usize,
    points: Vec<Point>,
}

impl HeatmapGrid {
    pub fn new(radius: f64, side: usize) -> Result<Self> {
        if side < 2 || !(radius > 0.0) {
            return Err(Error::invalid(format!("heatmap grid needs side ≥ 2 and radius > 0, got {side}, {radius}")));
        }
        let axis: Vec<f64> = (0..side)
            .map(|i| radius * (2.0 * i as f64 - (side - 1) as f64) / (side - 1) as f64)
            .collect();
        let points = axis.iter().flat_map(|&y| axis.iter().map(move |&x| [x, y])).collect();
        Ok(Self { radius, side, points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    /// `M×2` constant tensor.
    pub fn tensor(&self) -> Tensor {
        let flat = self.points.iter().flat_map(|p| [p[0], p[1]]).collect();
        Tensor::new(&[self.len(), 2], flat).expect("grid shape")
    }
}

impl Default for HeatmapGrid {
    fn default() -> Self {
        Self::new(DEFAULT_RADIUS, GRID_SIDE).expect("default grid")
    }
}

/// Softmax over each row of `L×M` logits, then the expected grid offset.
///
/// Clamped to the grid extent: saturated weights can sum to one ulp above 1.
pub fn heatmap_to_displacement(logits: &Tensor, grid: &HeatmapGrid) -> Result<Tensor> {
    let (_, m) = logits.dims2("heatmap_to_displacement")?;
    if m != grid.len() {
        return Err(Error::shape(
            "heatmap_to_displacement",
            format!("{m} logits per landmark for a grid of {}", grid.len()),
        ));
    }
    Ok(logits.softmax(1)?.matmul(&grid.tensor())?.clamp(-grid.radius, grid.radius))
}

/// Training shapes stacked as an `N×2L` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapeDictionary {
    template: Shape,
    n: usize,
    stacked: Vec<f64>,
}

impl ShapeDictionary {
    pub fn new(shapes: &[Shape]) -> Result<Self> {
        let template = shapes
            .first()
            .ok_or_else(|| Error::invalid("shape dictionary needs at least one shape"))?
            .clone();
        let mut stacked = Vec::with_capacity(shapes.len() * 2 * template.len());
        for (i, s) in shapes.iter().enumerate() {
            if !s.same_layout(&template) {
                return Err(Error::invalid(format!("dictionary shape {i} has a different landmark layout")));
            }
            stacked.extend(s.flat());
        }
        Ok(Self {
            template,
            n: shapes.len(),
            stacked,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn n_landmarks(&self) -> usize {
        self.template.len()
    }

    pub fn template(&self) -> &Shape {
        &self.template
    }

    pub fn tensor(&self) -> Tensor {
        Tensor::new(&[self.n, 2 * self.n_landmarks()], self.stacked.clone()).expect("dictionary shape")
    }
}

/// `Σ_n softmax(logits)_n · shapes_n` as an `L×2` tensor.
pub fn shape_from_weights(logits: &Tensor, dict: &ShapeDictionary) -> Result<Tensor> {
    if logits.shape() != [dict.len()] {
        return Err(Error::shape(
            "shape_from_weights",
            format!("logits {:?} for a dictionary of {}", logits.shape(), dict.len()),
        ));
    }
    logits
        .softmax(0)?
        .reshape(&[1, dict.len()])?
        .matmul(&dict.tensor())?
        .reshape(&[dict.n_landmarks(), 2])
}

pub fn shape_tensor(s: &Shape) -> Tensor {
    Tensor::new(&[s.len(), 2], s.flat()).expect("shape points")
}

fn check_rows(op: &'static str, t: &Tensor, l: usize) -> Result<()> {
    if t.shape() != [l, 2] {
        return Err(Error::shape(op, format!("expected [{l}, 2], got {:?}", t.shape())));
    }
    Ok(())
}

/// Mean squared Euclidean distance between predicted and target landmarks.
pub fn l2_shape_loss(pred: &Tensor, target: &Shape) -> Result<Tensor> {
    check_rows("l2_shape_loss", pred, target.len())?;
    Ok(pred.sub(&shape_tensor(target))?.square().sum().scale(1.0 / target.len() as f64))
}

/// Index of each landmark's successor along its own closed contour.
pub fn cyclic_successors(structures: &[Structure]) -> Vec<usize> {
    structures
        .iter()
        .flat_map(|s| (s.start..s.end).map(move |i| if i + 1 == s.end { s.start } else { i + 1 }))
        .collect()
}

/// `(1−λ)·mean‖S* − (S_init + U)‖² + λ·mean‖ΔU‖²` with `ΔU` the forward
/// difference of `U` around each contour.
pub fn loss_disp(target: &Shape, init: &Shape, u: &Tensor, lambda: f64) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!("lambda must lie in [0, 1], got {lambda}")));
    }
    if !target.same_layout(init) {
        return Err(Error::shape("loss_disp", "target and initial shape layouts differ"));
    }
    let l = target.len();
    check_rows("loss_disp", u, l)?;
    let data = l2_shape_loss(&shape_tensor(init).add(u)?, target)?;
    let diff = u.gather_rows(&cyclic_successors(target.structures()))?.sub(u)?;
    let smooth = diff.square().sum().scale(1.0 / l as f64);
    data.scale(1.0 - lambda).add(&smooth.scale(lambda))
}

/// The MLP plus whichever shape formulation is configured.
#[derive(Clone, Debug, PartialEq)]
pub struct Head {
    pub kind: HeadKind,
    pub radius: f64,
    mlp: MlpHead,
    grid: HeatmapGrid,
}

impl Head {
    /// `dict_size` is the number of training shapes, used only by the shape head.
    pub fn new(kind: HeadKind, feature_dim: usize, radius: f64, dict_size: usize, prefix: &str) -> Result<Self> {
        let grid = HeatmapGrid::new(radius, GRID_SIDE)?;
        let m = match kind {
            HeadKind::Disp => 2,
            HeadKind::Heatmap => grid.len(),
            HeadKind::Shape if dict_size == 0 => return Err(Error::invalid("shape head needs a non-empty dictionary")),
            HeadKind::Shape => dict_size,
        };
        Ok(Self {
            kind,
            radius,
            mlp: MlpHead::new(feature_dim, m, prefix),
            grid,
        })
    }

    pub fn mlp(&self) -> &MlpHead {
        &self.mlp
    }

    pub fn grid(&self) -> &HeatmapGrid {
        &self.grid
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) {
        self.mlp.init(store, rng);
    }

    /// Predicted landmark coordinates (`L×2`) from `L×K` landmark features.
    pub fn predict(&self, p: &Bound, feats: &Tensor, init: &Shape, dict: Option<&ShapeDictionary>) -> Result<Tensor> {
        let out = self.mlp.forward(p, feats)?;
        match self.kind {
            HeadKind::Disp => shape_tensor(init).add(&displacement_from_raw(&out, self.radius)?),
            HeadKind::Heatmap => shape_tensor(init).add(&heatmap_to_displacement(&out, &self.grid)?),
            HeadKind::Shape => {
                let dict = dict.ok_or_else(|| Error::invalid("shape head needs its dictionary"))?;
                shape_from_weights(&out.mean_axis(0)?, dict)
            }
        }
    }

    /// Training loss for a prediction made from `init`.
    pub fn loss(&self, pred: &Tensor, init: &Shape, target: &Shape, lambda: f64) -> Result<Tensor> {
        match self.kind {
            HeadKind::Disp => loss_disp(target, init, &pred.sub(&shape_tensor(init))?, lambda),
            HeadKind::Heatmap | HeadKind::Shape => l2_shape_loss(pred, target),
        }
    }
}
