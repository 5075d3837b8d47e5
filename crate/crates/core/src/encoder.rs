//! Convolutional image encoder (stride 8, dilated tail) and the
//! pixel-classification decoder used as a baseline.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Bound, ParamStore};
use crate::tensor::{Conv2dParams, Tensor};

/// Total downsampling of the encoder.
pub const STRIDE: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    #[serde(default = "default_in_channels")]
    pub in_channels: usize,
    /// Output widths of the four stages; the last is the feature channel count.
    #[serde(default = "default_widths")]
    pub widths: [usize; 4],
}

fn default_in_channels() -> usize {
    1
}

fn default_widths() -> [usize; 4] {
    [16, 32, 64, 64]
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            in_channels: default_in_channels(),
            widths: default_widths(),
        }
    }
}

impl EncoderConfig {
    pub fn out_channels(&self) -> usize {
        self.widths[3]
    }
}

/// A `C×(H/8)×(W/8)` feature tensor plus the image size it was computed from.
#[derive(Clone, Debug)]
pub struct FeatureMap {
    pub values: Tensor,
    pub image_size: usize,
}

impl FeatureMap {
    pub fn channels(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn size(&self) -> usize {
        self.values.shape()[1]
    }
}

#[derive(Clone, Copy)]
struct ConvSpec {
    c_in: usize,
    c_out: usize,
    params: Conv2dParams,
}

/// Four stages of two 3×3 conv + relu; stages 1–3 downsample on their first
/// conv, stage 4 uses dilation 2 at stride 1.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub cfg: EncoderConfig,
    prefix: String,
}

impl Encoder {
    pub fn new(cfg: EncoderConfig, prefix: impl Into<String>) -> Result<Self> {
        if cfg.in_channels == 0 || cfg.widths.contains(&0) {
            return Err(Error::invalid(format!("encoder widths must be positive: {cfg:?}")));
        }
        Ok(Self {
            cfg,
            prefix: prefix.into(),
        })
    }

    fn convs(&self) -> Vec<(String, ConvSpec)> {
        let mut out = Vec::new();
        let mut c_in = self.cfg.in_channels;
        for (stage, &width) in self.cfg.widths.iter().enumerate() {
            for k in 0..2 {
                let params = if stage == 3 {
                    Conv2dParams {
                        stride: 1,
                        dilation: 2,
                        padding: 2,
                    }
                } else {
                    Conv2dParams {
                        stride: if k == 0 { 2 } else { 1 },
                        dilation: 1,
                        padding: 1,
                    }
                };
                out.push((
                    format!("{}s{}.conv{}", self.prefix, stage + 1, k),
                    ConvSpec {
                        c_in,
                        c_out: width,
                        params,
                    },
                ));
                c_in = width;
            }
        }
        out
    }

    /// He-normal kernels, zero biases.
    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) {
        for (name, c) in self.convs() {
            let fan_in = c.c_in * 9;
            store.insert_normal(format!("{name}.w"), &[c.c_out, c.c_in, 3, 3], fan_in, 2.0, rng);
            store.insert_zeros(format!("{name}.b"), &[c.c_out]);
        }
    }

    /// `1×H×W` image to `C×(H/8)×(W/8)` features.
    pub fn encode(&self, p: &Bound, image: &Tensor) -> Result<FeatureMap> {
        let (c, h, w) = image.dims3("encode")?;
        if c != self.cfg.in_channels || h != w || h == 0 || h % STRIDE != 0 {
            return Err(Error::invalid(format!(
                "encoder needs a square {}×H×H image with H divisible by {STRIDE}, got {:?}",
                self.cfg.in_channels,
                image.shape()
            )));
        }
        let mut x = image.clone();
        for (name, c) in self.convs() {
            let k = p.get(&format!("{name}.w"))?;
            let b = p.get(&format!("{name}.b"))?;
            x = x.conv2d(k, c.params)?.add_channel_bias(b)?.relu();
        }
        Ok(FeatureMap {
            values: x,
            image_size: h,
        })
    }
}

/// Standalone encoder with freshly initialized parameters.
pub fn build_encoder<R: Rng + ?Sized>(cfg: EncoderConfig, rng: &mut R) -> Result<(Encoder, ParamStore)> {
    let enc = Encoder::new(cfg, "")?;
    let mut store = ParamStore::new();
    enc.init(&mut store, rng);
    Ok((enc, store))
}

/// LR-ASPP style segmentation head without the intermediate skip.
///
/// A 1×1 conv branch is gated channel-wise by a squeeze-excite branch on the
/// globally pooled features, projected to one logit per structure, upsampled
/// ×8 bilinearly and passed through a sigmoid.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelDecoder {
    pub in_channels: usize,
    pub inner: usize,
    pub n_structures: usize,
    prefix: String,
}

impl PixelDecoder {
    pub fn new(in_channels: usize, inner: usize, n_structures: usize, prefix: impl Into<String>) -> Self {
        Self {
            in_channels,
            inner,
            n_structures,
            prefix: prefix.into(),
        }
    }

    fn name(&self, s: &str) -> String {
        format!("{}{s}", self.prefix)
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) {
        let (c, d, s) = (self.in_channels, self.inner, self.n_structures);
        store.insert_normal(self.name("branch.w"), &[d, c, 1, 1], c, 2.0, rng);
        store.insert_zeros(self.name("branch.b"), &[d]);
        store.insert_linear(&self.name("se"), c, d, 1.0, rng);
        store.insert_normal(self.name("cls.w"), &[s, d, 1, 1], d, 1.0, rng);
        store.insert_zeros(self.name("cls.b"), &[s]);
    }

    /// Per-structure logits at full image resolution, `S×H×W`.
    pub fn logits(&self, p: &Bound, fmap: &FeatureMap) -> Result<Tensor> {
        let f = &fmap.values;
        let (c, h, w) = f.dims3("pixel_decoder")?;
        let one = Conv2dParams::default();
        let branch = f
            .conv2d(p.get(&self.name("branch.w"))?, one)?
            .add_channel_bias(p.get(&self.name("branch.b"))?)?
            .relu();
        let pooled = f.reshape(&[c, h * w])?.mean_axis(1)?.reshape(&[1, c])?;
        let gate = p.linear(&self.name("se"), &pooled)?.sigmoid().reshape(&[self.inner])?;
        let gated = branch.scale_channels(&gate)?;
        let logits = gated
            .conv2d(p.get(&self.name("cls.w"))?, one)?
            .add_channel_bias(p.get(&self.name("cls.b"))?)?;
        let factor = fmap.image_size / h;
        logits.upsample_bilinear(factor)
    }

    /// Per-structure probabilities, `S×H×W`, each in (0, 1).
    pub fn forward(&self, p: &Bound, fmap: &FeatureMap) -> Result<Tensor> {
        Ok(self.logits(p, fmap)?.sigmoid())
    }
}

/// Probabilities are clamped to this distance from 0 and 1 inside the loss.
pub const BCE_EPS: f64 = 1e-7;

/// Mean over pixels of `−[w·t·log p + (1−t)·log(1−p)]` with a single positive weight.
pub fn weighted_bce(pred: &Tensor, target: &Tensor, pos_weight: f64) -> Result<Tensor> {
    let channels = if pred.rank() == 3 { pred.shape()[0] } else { 1 };
    weighted_bce_per_channel(pred, target, &vec![pos_weight; channels])
}

/// Weighted BCE where channel `c` of a `C×H×W` prediction uses `pos_weight[c]`.
pub fn weighted_bce_per_channel(pred: &Tensor, target: &Tensor, pos_weight: &[f64]) -> Result<Tensor> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(
            "weighted_bce",
            format!("prediction {:?} vs target {:?}", pred.shape(), target.shape()),
        ));
    }
    let channels = if pred.rank() == 3 { pred.shape()[0] } else { 1 };
    if pos_weight.len() != channels || pos_weight.iter().any(|&w| !(w > 0.0)) {
        return Err(Error::invalid(format!(
            "need {channels} positive weights, got {pos_weight:?}"
        )));
    }
    let plane = pred.numel() / channels.max(1);
    let weighted: Vec<f64> = target
        .data()
        .iter()
        .enumerate()
        .map(|(i, &t)| pos_weight[i / plane] * t)
        .collect();
    let wt = Tensor::new(pred.shape(), weighted)?;
    let neg = Tensor::new(pred.shape(), target.data().iter().map(|t| 1.0 - t).collect())?;
    let p = pred.clamp(BCE_EPS, 1.0 - BCE_EPS);
    let pos_term = wt.mul(&p.log())?;
    let neg_term = neg.mul(&p.neg().add_scalar(1.0).log())?;
    Ok(pos_term.add(&neg_term)?.mean().neg())
}

/// Negative/positive pixel ratio per channel, as used for `pos_weight`.
pub fn balanced_pos_weights<'a>(masks: impl IntoIterator<Item = &'a [Vec<bool>]>, channels: usize) -> Vec<f64> {
    let mut pos = vec![0usize; channels];
    let mut total = vec![0usize; channels];
    for sample in masks {
        for (c, m) in sample.iter().enumerate().take(channels) {
            pos[c] += m.iter().filter(|&&v| v).count();
            total[c] += m.len();
        }
    }
    pos.iter()
        .zip(&total)
        .map(|(&p, &t)| if p == 0 { 1.0 } else { (t - p) as f64 / p as f64 })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn init_is_seed_deterministic() {
        let (_, a) = build_encoder(EncoderConfig::default(), &mut rng(1)).unwrap();
        let (_, b) = build_encoder(EncoderConfig::default(), &mut rng(1)).unwrap();
        let (_, c) = build_encoder(EncoderConfig::default(), &mut rng(2)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn parameter_count_matches_layer_sizes() {
        let (_, store) = build_encoder(EncoderConfig::default(), &mut rng(0)).unwrap();
        let conv = |cin: usize, cout: usize| cout * cin * 9 + cout;
        let want = conv(1, 16)
            + conv(16, 16)
            + conv(16, 32)
            + conv(32, 32)
            + conv(32, 64)
            + conv(64, 64)
            + 2 * conv(64, 64);
        assert_eq!(want, 145_648);
        assert_eq!(store.count(""), want);
    }

    #[test]
    fn output_is_one_eighth_resolution() {
        let (enc, store) = build_encoder(EncoderConfig::default(), &mut rng(0)).unwrap();
        let p = store.bind(false);
        for h in [32, 64, 128, 256] {
            let img = Tensor::full(&[1, h, h], 0.5);
            let f = enc.encode(&p, &img).unwrap();
            assert_eq!(f.values.shape(), &[64, h / 8, h / 8]);
        }
        assert!(enc.encode(&p, &Tensor::zeros(&[1, 60, 60])).is_err());
    }

    #[test]
    fn zero_image_is_finite_and_repeatable() {
        let (enc, store) = build_encoder(EncoderConfig::default(), &mut rng(0)).unwrap();
        let p = store.bind(false);
        let img = Tensor::zeros(&[1, 64, 64]);
        let a = enc.encode(&p, &img).unwrap();
        let b = enc.encode(&p, &img).unwrap();
        assert!(a.values.data().iter().all(|v| v.is_finite()));
        assert_eq!(a.values.data(), b.values.data());
    }

    fn decoder_setup(c: usize, s: usize) -> (PixelDecoder, ParamStore) {
        let dec = PixelDecoder::new(c, 8, s, "");
        let mut store = ParamStore::new();
        dec.init(&mut store, &mut rng(3));
        (dec, store)
    }

    #[test]
    fn decoder_shape_range_and_constant_input() {
        let (dec, store) = decoder_setup(64, 3);
        let p = store.bind(false);
        let mut r = rng(4);
        let vals = (0..64 * 32 * 32).map(|_| r.random_range(0.0..1.0)).collect();
        let fmap = FeatureMap {
            values: Tensor::new(&[64, 32, 32], vals).unwrap(),
            image_size: 256,
        };
        let out = dec.forward(&p, &fmap).unwrap();
        assert_eq!(out.shape(), &[3, 256, 256]);
        assert!(out.data().iter().all(|&v| v > 0.0 && v < 1.0));

        let flat = FeatureMap {
            values: Tensor::full(&[64, 4, 4], 0.7),
            image_size: 32,
        };
        let out = dec.forward(&p, &flat).unwrap();
        for ch in out.data().chunks_exact(32 * 32) {
            assert!(ch.iter().all(|&v| v == ch[0]));
        }
    }

    #[test]
    fn bce_closed_forms() {
        let t = Tensor::new(&[1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert!(weighted_bce(&t, &t, 1.0).unwrap().item().unwrap() < 1e-5);
        let half = Tensor::full(&[1, 2, 2], 0.5);
        let l = weighted_bce(&half, &t, 1.0).unwrap().item().unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-12);
        let one = Tensor::new(&[1, 1, 1], vec![1.0]).unwrap();
        let l = weighted_bce(&Tensor::full(&[1, 1, 1], 0.5), &one, 3.0).unwrap().item().unwrap();
        assert!((l - 3.0 * 2f64.ln()).abs() < 1e-12);
        assert!(weighted_bce(&half, &Tensor::zeros(&[1, 4, 1]), 1.0).is_err());
    }

    #[test]
    fn decoder_and_loss_gradients() {
        let (dec, store) = decoder_setup(4, 2);
        let mut r = rng(5);
        let fvals: Vec<f64> = (0..4 * 2 * 2).map(|_| r.random_range(-1.0..1.0)).collect();
        let target = Tensor::new(&[2, 16, 16], (0..512).map(|i| ((i / 7) % 2) as f64).collect()).unwrap();
        let fmap_in = Tensor::new(&[4, 2, 2], fvals).unwrap();
        let err = crate::nn::grad_check_params(&store, &[fmap_in], 1e-5, |p, t| {
            let fmap = FeatureMap {
                values: t[0].clone(),
                image_size: 16,
            };
            weighted_bce_per_channel(&dec.forward(p, &fmap)?, &target, &[2.0, 0.5])
        })
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn pos_weights_from_masks() {
        let a = vec![vec![true, false, false, false], vec![true, true, false, false]];
        let w = balanced_pos_weights([a.as_slice()], 2);
        assert_eq!(w, vec![3.0, 1.0]);
    }
}
