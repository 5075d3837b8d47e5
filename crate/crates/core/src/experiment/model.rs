use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ExperimentConfig, ModelKind};
use crate::encoder::{weighted_bce_per_channel, Encoder, PixelDecoder};
use crate::error::{Error, Result};
use crate::geometry::{expand_point_cloud, mean_shape, rasterize, sample_features, Mask, Shape};
use crate::gnn::{select_landmarks, Gnn};
use crate::heads::{radius_for_size, Head, HeadKind, ShapeDictionary};
use crate::nn::{Bound, ParamStore};
use crate::tensor::Tensor;

enum Net {
    Shape {
        gnn: Gnn,
        head: Head,
        dict: Option<ShapeDictionary>,
    },
    Pixel(PixelDecoder),
    Mean,
}

/// Output of one forward pass.
pub enum Prediction {
    /// `L×2` landmark coordinates.
    Shape(Tensor),
    /// `S×H×W` foreground probabilities, one channel per structure.
    Masks(Tensor),
}

/// A configured network with its parameters and the training shapes it
/// draws initial shapes (and, for the shape head, its dictionary) from.
pub struct Model {
    pub config: ExperimentConfig,
    pub params: ParamStore,
    encoder: Encoder,
    net: Net,
    train_shapes: Vec<Shape>,
    mean: Shape,
    image_size: usize,
}

impl Model {
    /// Freshly initialized parameters drawn from `config.seeds.init`.
    pub fn new(config: &ExperimentConfig, train_shapes: &[Shape], image_size: usize) -> Result<Self> {
        let mut m = Self::skeleton(config, train_shapes, image_size)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seeds.init);
        m.params = m.init_params(&mut rng);
        Ok(m)
    }

    /// Uses `params`, which must match the layout a fresh model would have.
    pub fn with_params(config: &ExperimentConfig, train_shapes: &[Shape], image_size: usize, params: ParamStore) -> Result<Self> {
        let mut m = Self::skeleton(config, train_shapes, image_size)?;
        let fresh = m.init_params(&mut ChaCha8Rng::seed_from_u64(0));
        for (name, p) in fresh.iter() {
            match params.get(name) {
                Some(q) if q.shape == p.shape => {}
                Some(q) => {
                    return Err(Error::Config(format!("parameter {name} has shape {:?}, expected {:?}", q.shape, p.shape)))
                }
                None => return Err(Error::Config(format!("weights lack parameter {name}"))),
            }
        }
        if params.len() != fresh.len() {
            return Err(Error::Config(format!("weights hold {} parameters, model has {}", params.len(), fresh.len())));
        }
        m.params = params;
        Ok(m)
    }

    pub fn load(config: &ExperimentConfig, train_shapes: &[Shape], image_size: usize, weights: &Path) -> Result<Self> {
        Self::with_params(config, train_shapes, image_size, ParamStore::load(weights)?)
    }

    fn skeleton(config: &ExperimentConfig, train_shapes: &[Shape], image_size: usize) -> Result<Self> {
        config.validate()?;
        let mean = mean_shape(train_shapes)?;
        let encoder = Encoder::new(config.encoder.clone(), "encoder.")?;
        let channels = config.encoder.out_channels();
        let net = match config.model {
            ModelKind::MeanShape => Net::Mean,
            ModelKind::PixelBaseline => Net::Pixel(PixelDecoder::new(
                channels,
                config.decoder_width,
                mean.structures().len(),
                "decoder.",
            )),
            kind => {
                let gnn = Gnn::new(kind.gnn().expect("point model"), &config.gnn, channels, "gnn.")?;
                let head = Head::new(
                    config.head,
                    config.gnn.feature_dim,
                    radius_for_size(image_size),
                    train_shapes.len(),
                    "head.",
                )?;
                let dict = match config.head {
                    HeadKind::Shape => Some(ShapeDictionary::new(train_shapes)?),
                    _ => None,
                };
                Net::Shape { gnn, head, dict }
            }
        };
        Ok(Self {
            config: config.clone(),
            params: ParamStore::new(),
            encoder,
            net,
            train_shapes: train_shapes.to_vec(),
            mean,
            image_size,
        })
    }

    fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamStore {
        let mut store = ParamStore::new();
        match &self.net {
            Net::Mean => {}
            Net::Pixel(dec) => {
                self.encoder.init(&mut store, rng);
                dec.init(&mut store, rng);
            }
            Net::Shape { gnn, head, .. } => {
                self.encoder.init(&mut store, rng);
                gnn.init(&mut store, rng);
                head.init(&mut store, rng);
            }
        }
        store
    }

    pub fn kind(&self) -> ModelKind {
        self.config.model
    }

    pub fn label(&self) -> String {
        self.config.label()
    }

    pub fn is_trainable(&self) -> bool {
        !matches!(self.net, Net::Mean)
    }

    /// Whether predictions depend on an initial shape.
    pub fn uses_initial_shape(&self) -> bool {
        matches!(self.net, Net::Shape { .. })
    }

    pub fn train_shapes(&self) -> &[Shape] {
        &self.train_shapes
    }

    pub fn mean_shape(&self) -> &Shape {
        &self.mean
    }

    pub fn image_size(&self) -> usize {
        self.image_size
    }

    /// Forward pass for one `1×H×W` image; `rng` drives the point-cloud offsets.
    pub fn forward<R: Rng + ?Sized>(&self, p: &Bound, image: &Tensor, init: &Shape, rng: &mut R) -> Result<Prediction> {
        match &self.net {
            Net::Mean => Ok(Prediction::Shape(crate::heads::shape_tensor(&self.mean))),
            Net::Pixel(dec) => {
                let fmap = self.encoder.encode(p, image)?;
                Ok(Prediction::Masks(dec.forward(p, &fmap)?))
            }
            Net::Shape { gnn, head, dict } => {
                let fmap = self.encoder.encode(p, image)?;
                let sigma = self.config.sigma_for(self.image_size);
                let cloud = expand_point_cloud(init, sigma, self.image_size, rng)?;
                let sampled = sample_features(&fmap.values, &cloud.coords_tensor(), self.image_size)?;
                let feats = gnn.forward(p, &cloud, &sampled, self.image_size)?;
                let lm = select_landmarks(&feats, &cloud)?;
                Ok(Prediction::Shape(head.predict(p, &lm, init, dict.as_ref())?))
            }
        }
    }

    /// Training loss of `pred`. `target_masks` and `pos_weight` are used by
    /// the pixel baseline only.
    pub fn loss(&self, pred: &Prediction, init: &Shape, target: &Shape, target_masks: &Tensor, pos_weight: &[f64]) -> Result<Tensor> {
        match (&self.net, pred) {
            (Net::Shape { head, .. }, Prediction::Shape(t)) => head.loss(t, init, target, self.config.lambda_r),
            (Net::Pixel(_), Prediction::Masks(m)) => weighted_bce_per_channel(m, target_masks, pos_weight),
            (Net::Mean, Prediction::Shape(t)) => crate::heads::l2_shape_loss(t, target),
            _ => Err(Error::invalid("prediction does not match the model")),
        }
    }
}

/// Per-structure ground-truth masks stacked as an `S×H×W` 0/1 tensor.
pub fn mask_tensor(masks: &[Mask]) -> Tensor {
    let (w, h) = (masks[0].width, masks[0].height);
    let data = masks.iter().flat_map(|m| m.data.iter().map(|&v| v as u8 as f64)).collect();
    Tensor::new(&[masks.len(), h, w], data).expect("mask stack")
}

pub fn target_masks(shape: &Shape, size: usize) -> Result<Vec<Mask>> {
    rasterize(shape, size)
}
