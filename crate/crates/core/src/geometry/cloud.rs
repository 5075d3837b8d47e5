use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{Point, Shape};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Each landmark contributes itself plus four jittered neighbours.
pub const POINTS_PER_LANDMARK: usize = 5;

/// Offset standard deviation: 3 px at 256 px, proportional otherwise.
pub fn offset_sigma_for_size(image_size: usize) -> f64 {
    3.0 * image_size as f64 / 256.0
}

/// Sampling positions around a shape.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    pub coords: Vec<Point>,
    /// Row of each landmark's own (unjittered) position.
    pub landmark_index: Vec<usize>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords_tensor(&self) -> Tensor {
        let flat = self.coords.iter().flat_map(|p| [p[0], p[1]]).collect();
        Tensor::new(&[self.coords.len(), 2], flat).expect("P×2")
    }
}

/// Builds the `5·L` point cloud: landmark rows at `5i`, followed by four
/// points drawn from `N(landmark, sigma²·I)` and clamped into the image.
pub fn expand_point_cloud<R: Rng + ?Sized>(shape: &Shape, sigma: f64, image_size: usize, rng: &mut R) -> Result<PointCloud> {
    if !(sigma >= 0.0) {
        return Err(Error::invalid(format!("offset sigma must be ≥ 0, got {sigma}")));
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let hi = image_size as f64 - 1e-9;
    let mut coords = Vec::with_capacity(shape.len() * POINTS_PER_LANDMARK);
    let mut landmark_index = Vec::with_capacity(shape.len());
    for p in shape.points() {
        landmark_index.push(coords.len());
        coords.push(*p);
        for _ in 1..POINTS_PER_LANDMARK {
            let dx = normal.sample(rng);
            let dy = normal.sample(rng);
            coords.push([(p[0] + dx).clamp(0.0, hi), (p[1] + dy).clamp(0.0, hi)]);
        }
    }
    Ok(PointCloud { coords, landmark_index })
}

/// Bilinearly samples a `C×h×w` feature map at image-space positions.
///
/// `coords` is `P×2` in pixels of an `image_size` image; the result is `P×C`.
pub fn sample_features(fmap: &Tensor, coords: &Tensor, image_size: usize) -> Result<Tensor> {
    let (_, h, w) = fmap.dims3("sample_features")?;
    if h != w {
        return Err(Error::shape("sample_features", format!("feature map must be square, got {h}×{w}")));
    }
    let limit = image_size as f64;
    if let Some(bad) = coords.data().iter().find(|v| !(**v >= 0.0 && **v < limit)) {
        return Err(Error::invalid(format!("sample coordinate {bad} outside [0, {image_size})")));
    }
    coords
        .dims2("sample_features")
        .and_then(|_| fmap.bilinear_sample(coords, w as f64 / image_size as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Structure;
    use crate::tensor::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ring(l: usize, r: f64, c: f64) -> Shape {
        let pts = (0..l)
            .map(|i| {
                let t = i as f64 / l as f64 * std::f64::consts::TAU;
                [c + r * t.cos(), c + r * t.sin()]
            })
            .collect();
        Shape::new(
            pts,
            vec![Structure {
                name: "ring".into(),
                start: 0,
                end: l,
            }],
            0.175,
        )
        .unwrap()
    }

    #[test]
    fn cloud_size_and_landmark_rows() {
        let s = ring(166, 60.0, 128.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = expand_point_cloud(&s, 3.0, 256, &mut rng).unwrap();
        assert_eq!(c.len(), 830);
        for (i, &row) in c.landmark_index.iter().enumerate() {
            assert_eq!(c.coords[row], s.points()[i]);
        }
        assert!(c.coords.iter().all(|p| p[0] >= 0.0 && p[0] < 256.0 && p[1] >= 0.0 && p[1] < 256.0));
    }

    #[test]
    fn zero_sigma_collapses_extras() {
        let s = ring(10, 5.0, 16.0);
        let c = expand_point_cloud(&s, 0.0, 32, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        for (i, p) in s.points().iter().enumerate() {
            assert!(c.coords[5 * i..5 * i + 5].iter().all(|q| q == p));
        }
        assert!(expand_point_cloud(&s, -1.0, 32, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
    }

    #[test]
    fn extras_are_centred_on_landmark() {
        let s = ring(3, 5.0, 128.0);
        let sigma = 3.0;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let draws = 25_000; // × 4 extras = 10⁵ samples
        let (mut sx, mut sy) = (0.0, 0.0);
        for _ in 0..draws {
            let c = expand_point_cloud(&s, sigma, 256, &mut rng).unwrap();
            for q in &c.coords[1..5] {
                sx += q[0];
                sy += q[1];
            }
        }
        let n = (draws * 4) as f64;
        let se = sigma / n.sqrt();
        let p = s.points()[0];
        assert!((sx / n - p[0]).abs() < 3.0 * se);
        assert!((sy / n - p[1]).abs() < 3.0 * se);
    }

    fn feature_map(c: usize, n: usize, f: impl Fn(usize, f64, f64) -> f64) -> Tensor {
        let mut data = Vec::new();
        for ch in 0..c {
            for y in 0..n {
                for x in 0..n {
                    data.push(f(ch, x as f64, y as f64));
                }
            }
        }
        Tensor::new(&[c, n, n], data).unwrap()
    }

    #[test]
    fn cell_centres_and_midpoints() {
        let fmap = feature_map(2, 4, |c, x, y| (c as f64 + 1.0) * (x + 10.0 * y));
        // image 32 → scale 1/8; cell (1,2) centre is at image x = (1+0.5)·8 − 0.5
        let cx = |cell: f64| (cell + 0.5) * 8.0 - 0.5;
        let coords = Tensor::new(&[2, 2], vec![cx(1.0), cx(2.0), cx(1.5), cx(2.5)]).unwrap();
        let out = sample_features(&fmap, &coords, 32).unwrap();
        assert_eq!(out.shape(), &[2, 2]);
        assert!((out.data()[0] - 21.0).abs() < 1e-12);
        assert!((out.data()[1] - 42.0).abs() < 1e-12);
        let avg = (21.0 + 22.0 + 31.0 + 32.0) / 4.0;
        assert!((out.data()[2] - avg).abs() < 1e-12);
    }

    #[test]
    fn exact_for_bilinear_functions() {
        let (a, b, c, d) = (0.7, -1.3, 0.05, 2.0);
        let n = 8;
        let scale = n as f64 / 64.0;
        // values are f evaluated at feature-space cell coordinates
        let fmap = feature_map(1, n, |_, x, y| a * x + b * y + c * x * y + d);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let lo = 0.5 / scale - 0.5;
        let hi = (n as f64 - 0.5) / scale - 0.5;
        let pts: Vec<f64> = (0..200).map(|_| rng.random_range(lo..hi)).collect();
        let coords = Tensor::new(&[100, 2], pts.clone()).unwrap();
        let out = sample_features(&fmap, &coords, 64).unwrap();
        for (i, xy) in pts.chunks_exact(2).enumerate() {
            let u = (xy[0] + 0.5) * scale - 0.5;
            let v = (xy[1] + 0.5) * scale - 0.5;
            let want = a * u + b * v + c * u * v + d;
            assert!((out.data()[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn out_of_bounds_rejected() {
        let fmap = Tensor::zeros(&[1, 4, 4]);
        let coords = Tensor::new(&[1, 2], vec![32.0, 1.0]).unwrap();
        assert!(sample_features(&fmap, &coords, 32).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let fmap = Tensor::new(&[3, 4, 4], (0..48).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let coords = Tensor::new(&[6, 2], (0..12).map(|_| rng.random_range(1.0..30.0)).collect()).unwrap();
        let w = Tensor::new(&[6, 3], (0..18).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let err = grad_check(
            |t| Ok(t[0].bilinear_sample(&t[1], 0.125)?.mul(&w)?.sum()),
            &[fmap, coords],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }
}
