//! Point networks that turn sampled image features on the `5L`-point cloud
//! into per-point `K`-dimensional features.

mod knn;
mod pointnet;
mod transformer;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use knn::{knn, NeighborGraph};
pub use pointnet::PointNet;
pub use transformer::{PointTransformer, PointTransformerLayer};

use crate::error::{Error, Result};
use crate::geometry::{Point, PointCloud};
use crate::nn::{Bound, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GnnKind {
    PointNet,
    PointTransformer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GnnConfig {
    #[serde(default = "default_k")]
    pub k_neighbors: usize,
    #[serde(default = "default_layers")]
    pub n_layers: usize,
    /// Output feature width `K`.
    #[serde(default = "default_dim")]
    pub feature_dim: usize,
}

fn default_k() -> usize {
    16
}
fn default_layers() -> usize {
    2
}
fn default_dim() -> usize {
    128
}

impl Default for GnnConfig {
    fn default() -> Self {
        Self {
            k_neighbors: default_k(),
            n_layers: default_layers(),
            feature_dim: default_dim(),
        }
    }
}

/// Image coordinates mapped to `[−1, 1]`.
pub fn normalize_coords(coords: &[Point], image_size: usize) -> Vec<f64> {
    let s = image_size as f64;
    coords.iter().flat_map(|p| [2.0 * p[0] / s - 1.0, 2.0 * p[1] / s - 1.0]).collect()
}

/// Either point network behind one interface.
#[derive(Clone, Debug, PartialEq)]
pub enum Gnn {
    PointNet(PointNet),
    PointTransformer(PointTransformer),
}

impl Gnn {
    pub fn new(kind: GnnKind, cfg: &GnnConfig, input_dim: usize, prefix: &str) -> Result<Self> {
        if cfg.feature_dim == 0 || cfg.k_neighbors == 0 {
            return Err(Error::invalid(format!("invalid point network config {cfg:?}")));
        }
        Ok(match kind {
            GnnKind::PointNet => Gnn::PointNet(PointNet::new(input_dim, cfg.feature_dim, prefix)),
            GnnKind::PointTransformer => Gnn::PointTransformer(PointTransformer::new(input_dim, cfg, prefix)),
        })
    }

    pub fn kind(&self) -> GnnKind {
        match self {
            Gnn::PointNet(_) => GnnKind::PointNet,
            Gnn::PointTransformer(_) => GnnKind::PointTransformer,
        }
    }

    pub fn feature_dim(&self) -> usize {
        match self {
            Gnn::PointNet(n) => n.feature_dim,
            Gnn::PointTransformer(n) => n.feature_dim,
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) {
        match self {
            Gnn::PointNet(n) => n.init(store, rng),
            Gnn::PointTransformer(n) => n.init(store, rng),
        }
    }

    /// `P×C` sampled features to `P×K` point features.
    pub fn forward(&self, p: &Bound, cloud: &PointCloud, feats: &Tensor, image_size: usize) -> Result<Tensor> {
        let (rows, _) = feats.dims2("gnn")?;
        if rows != cloud.len() {
            return Err(Error::shape("gnn", format!("{rows} feature rows for {} points", cloud.len())));
        }
        match self {
            Gnn::PointNet(n) => n.forward(p, &cloud.coords, feats, image_size),
            Gnn::PointTransformer(n) => {
                let graph = knn(&cloud.coords, n.k_neighbors.min(cloud.len()))?;
                n.forward(p, &cloud.coords, feats, &graph, image_size)
            }
        }
    }
}

/// Rows of `feats` belonging to the landmarks themselves, in landmark order.
pub fn select_landmarks(feats: &Tensor, cloud: &PointCloud) -> Result<Tensor> {
    feats.gather_rows(&cloud.landmark_index)
}
