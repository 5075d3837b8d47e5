use rand::Rng;

use super::normalize_coords;
use crate::error::Result;
use crate::geometry::Point;
use crate::nn::{Bound, ParamStore};
use crate::tensor::Tensor;

const HIDDEN: usize = 64;
const GLOBAL: usize = 128;

/// Shared per-point MLP, global max-pool, and a fusion layer over
/// `[local ‖ global]` features.
#[derive(Clone, Debug, PartialEq)]
pub struct PointNet {
    pub input_dim: usize,
    pub feature_dim: usize,
    prefix: String,
}

impl PointNet {
    pub fn new(input_dim: usize, feature_dim: usize, prefix: &str) -> Self {
        Self {
            input_dim,
            feature_dim,
            prefix: format!("{prefix}pn."),
        }
    }

    fn name(&self, s: &str) -> String {
        format!("{}{s}", self.prefix)
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) {
        store.insert_linear(&self.name("mlp1"), self.input_dim + 2, HIDDEN, 2.0, rng);
        store.insert_linear(&self.name("mlp2"), HIDDEN, GLOBAL, 2.0, rng);
        store.insert_linear(&self.name("fuse"), 2 * GLOBAL, self.feature_dim, 2.0, rng);
    }

    /// Per-point features (`P×128`) and the max-pooled global vector (`128`).
    pub fn local_and_global(&self, p: &Bound, coords: &[Point], feats: &Tensor, image_size: usize) -> Result<(Tensor, Tensor)> {
        let xy = Tensor::new(&[coords.len(), 2], normalize_coords(coords, image_size))?;
        let x = Tensor::concat(&[feats.clone(), xy], 1)?;
        let h = p.linear(&self.name("mlp1"), &x)?.relu();
        let h = p.linear(&self.name("mlp2"), &h)?.relu();
        let global = h.max_axis(0)?;
        Ok((h, global))
    }

    pub fn forward(&self, p: &Bound, coords: &[Point], feats: &Tensor, image_size: usize) -> Result<Tensor> {
        let (local, global) = self.local_and_global(p, coords, feats, image_size)?;
        let n = coords.len();
        let tiled = global.reshape(&[1, GLOBAL])?.gather_rows(&vec![0; n])?;
        let joined = Tensor::concat(&[local, tiled], 1)?;
        p.linear(&self.name("fuse"), &joined)
    }
}
