use rand::Rng;

use super::{normalize_coords, GnnConfig, NeighborGraph};
use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::nn::{Bound, ParamStore};
use crate::tensor::Tensor;

/// One vector self-attention block over each point's neighbourhood.
///
/// For point `i` and neighbour `j`, with `δ = θ(p_i − p_j)`:
/// weights are `softmax_j γ(φ f_i − ψ f_j + δ)` per channel, values are
/// `α f_j + δ`, and the weighted sum is projected and added back to `f_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct PointTransformerLayer {
    dim: usize,
    prefix: String,
}

/// Intermediate results of a layer, exposed for inspection.
pub struct AttentionOutput {
    pub features: Tensor,
    /// `P×k×K` attention weights.
    pub weights: Tensor,
}

impl PointTransformerLayer {
    pub fn new(dim: usize, prefix: String) -> Self {
        Self { dim, prefix }
    }

    fn name(&self, s: &str) -> String {
        format!("{}{s}", self.prefix)
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) {
        let k = self.dim;
        for lin in ["phi", "psi", "alpha"] {
            store.insert_linear(&self.name(lin), k, k, 1.0, rng);
        }
        store.insert_linear(&self.name("theta1"), 2, k, 2.0, rng);
        store.insert_linear(&self.name("theta2"), k, k, 1.0, rng);
        store.insert_linear(&self.name("gamma1"), k, k, 2.0, rng);
        // no bias: a per-channel offset cancels in the neighbourhood softmax
        store.insert_normal(self.name("gamma2.w"), &[k, k], k, 1.0, rng);
        store.insert_linear(&self.name("out"), k, k, 1.0, rng);
    }

    /// `coords` are the normalized positions as a flat `P×2` buffer.
    pub fn attend(&self, p: &Bound, coords: &[f64], feats: &Tensor, graph: &NeighborGraph) -> Result<AttentionOutput> {
        let (n, dim) = feats.dims2("point_transformer")?;
        if graph.n_points() != n || coords.len() != 2 * n || dim != self.dim {
            return Err(Error::shape(
                "point_transformer",
                format!("{n}×{dim} features, {} graph rows, {} coords", graph.n_points(), coords.len() / 2),
            ));
        }
        let k = graph.k;
        let centre: Vec<usize> = (0..n).flat_map(|i| std::iter::repeat_n(i, k)).collect();
        let nbr = &graph.indices;
        let rel: Vec<f64> = centre
            .iter()
            .zip(nbr)
            .flat_map(|(&i, &j)| [coords[2 * i] - coords[2 * j], coords[2 * i + 1] - coords[2 * j + 1]])
            .collect();
        let rel = Tensor::new(&[n * k, 2], rel)?;
        let delta = p.linear(&self.name("theta2"), &p.linear(&self.name("theta1"), &rel)?.relu())?;

        let q = p.linear(&self.name("phi"), feats)?.gather_rows(&centre)?;
        let key = p.linear(&self.name("psi"), feats)?.gather_rows(nbr)?;
        let val = p.linear(&self.name("alpha"), feats)?.gather_rows(nbr)?.add(&delta)?;

        let rel_feat = q.sub(&key)?.add(&delta)?;
        let logits = p
            .linear(&self.name("gamma1"), &rel_feat)?
            .relu()
            .matmul(p.get(&self.name("gamma2.w"))?)?;
        let weights = logits.reshape(&[n, k, dim])?.softmax(1)?;
        let agg = weights.mul(&val.reshape(&[n, k, dim])?)?.sum_axis(1)?;
        let features = feats.add(&p.linear(&self.name("out"), &agg)?)?;
        Ok(AttentionOutput { features, weights })
    }
}

/// Feature embedding, a stack of attention layers, and an output projection.
///
/// Positions enter only through relative offsets, so the stack is invariant
/// to translating the whole cloud.
#[derive(Clone, Debug, PartialEq)]
pub struct PointTransformer {
    pub input_dim: usize,
    pub feature_dim: usize,
    pub k_neighbors: usize,
    layers: Vec<PointTransformerLayer>,
    prefix: String,
}

impl PointTransformer {
    pub fn new(input_dim: usize, cfg: &GnnConfig, prefix: &str) -> Self {
        let prefix = format!("{prefix}pt.");
        let layers = (0..cfg.n_layers)
            .map(|l| PointTransformerLayer::new(cfg.feature_dim, format!("{prefix}layer{l}.")))
            .collect();
        Self {
            input_dim,
            feature_dim: cfg.feature_dim,
            k_neighbors: cfg.k_neighbors,
            layers,
            prefix,
        }
    }

    fn name(&self, s: &str) -> String {
        format!("{}{s}", self.prefix)
    }

    pub fn layers(&self) -> &[PointTransformerLayer] {
        &self.layers
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) {
        store.insert_linear(&self.name("embed"), self.input_dim, self.feature_dim, 2.0, rng);
        for l in &self.layers {
            l.init(store, rng);
        }
        store.insert_linear(&self.name("head"), self.feature_dim, self.feature_dim, 1.0, rng);
    }

    pub fn forward(
        &self,
        p: &Bound,
        coords: &[Point],
        feats: &Tensor,
        graph: &NeighborGraph,
        image_size: usize,
    ) -> Result<Tensor> {
        let xy = normalize_coords(coords, image_size);
        let mut h = p.linear(&self.name("embed"), feats)?.relu();
        for l in &self.layers {
            h = l.attend(p, &xy, &h, graph)?.features;
        }
        p.linear(&self.name("head"), &h)
    }
}

#[cfg(test)]
mod tests {
    use super::super::knn;
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(n: usize, dim: usize) -> (PointTransformer, ParamStore, Vec<Point>, Tensor) {
        let mut r = ChaCha8Rng::seed_from_u64(21);
        let cfg = GnnConfig {
            k_neighbors: 6,
            n_layers: 2,
            feature_dim: dim,
        };
        let net = PointTransformer::new(5, &cfg, "");
        let mut store = ParamStore::new();
        net.init(&mut store, &mut r);
        let coords = (0..n).map(|_| [r.random_range(8.0..40.0), r.random_range(8.0..40.0)]).collect();
        let feats = Tensor::new(&[n, 5], (0..n * 5).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap();
        (net, store, coords, feats)
    }

    #[test]
    fn shape_preserved_and_weights_normalized() {
        let (net, store, coords, feats) = setup(20, 12);
        let p = store.bind(false);
        let graph = knn(&coords, 6).unwrap();
        let xy = normalize_coords(&coords, 64);
        let h = p.linear("pt.embed", &feats).unwrap().relu();
        let out = net.layers()[0].attend(&p, &xy, &h, &graph).unwrap();
        assert_eq!(out.features.shape(), h.shape());
        let w = out.weights.data();
        for i in 0..20 {
            for c in 0..12 {
                let s: f64 = (0..6).map(|j| w[(i * 6 + j) * 12 + c]).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn translation_invariant() {
        let (net, store, coords, feats) = setup(30, 8);
        let p = store.bind(false);
        let graph = knn(&coords, 6).unwrap();
        let a = net.forward(&p, &coords, &feats, &graph, 64).unwrap();
        let moved: Vec<Point> = coords.iter().map(|c| [c[0] + 7.25, c[1] - 3.5]).collect();
        let graph2 = knn(&moved, 6).unwrap();
        assert_eq!(graph, graph2);
        let b = net.forward(&p, &moved, &feats, &graph2, 64).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-10);
        }
    }
}
