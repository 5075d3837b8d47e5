//! Landmark shapes, point clouds, rasterization and shape metrics.
//!
//! Coordinates are image pixels with the origin at the top-left corner,
//! `x` pointing right and `y` pointing down.

mod cloud;
pub mod landmarks;
mod metrics;
mod raster;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use cloud::{expand_point_cloud, offset_sigma_for_size, sample_features, PointCloud, POINTS_PER_LANDMARK};
pub use metrics::{asd, asd_point_set, dice, point_to_polyline};
pub use raster::{boundary_points, rasterize, rasterize_contour, Mask};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// A named closed contour occupying `points[start..end]` of its shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Structure {
    pub name: String,
    pub start: usize,
    pub end: usize,
}

impl Structure {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

/// Ordered landmarks grouped into closed contours.
#[derive(Clone, Debug, PartialEq)]
pub struct Shape {
    points: Vec<Point>,
    structures: Vec<Structure>,
    spacing_mm: f64,
}

impl Shape {
    pub fn new(points: Vec<Point>, structures: Vec<Structure>, spacing_mm: f64) -> Result<Self> {
        if !(spacing_mm > 0.0 && spacing_mm.is_finite()) {
            return Err(Error::invalid(format!("pixel spacing must be positive, got {spacing_mm}")));
        }
        let mut next = 0;
        for s in &structures {
            if s.start != next || s.end < s.start {
                return Err(Error::invalid(format!(
                    "structure {} spans {}..{}, expected to start at {next}",
                    s.name, s.start, s.end
                )));
            }
            if s.len() < 3 {
                return Err(Error::invalid(format!("structure {} has {} points, need at least 3", s.name, s.len())));
            }
            next = s.end;
        }
        if next != points.len() {
            return Err(Error::invalid(format!(
                "structures cover {next} points but shape has {}",
                points.len()
            )));
        }
        if let Some(p) = points.iter().find(|p| !(p[0].is_finite() && p[1].is_finite())) {
            return Err(Error::NonFinite(format!("landmark {p:?}")));
        }
        Ok(Self {
            points,
            structures,
            spacing_mm,
        })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn structures(&self) -> &[Structure] {
        &self.structures
    }

    pub fn spacing_mm(&self) -> f64 {
        self.spacing_mm
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn structure(&self, name: &str) -> Result<&Structure> {
        self.structures
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::invalid(format!("shape has no structure named {name}")))
    }

    pub fn contour(&self, name: &str) -> Result<&[Point]> {
        let s = self.structure(name)?;
        Ok(&self.points[s.start..s.end])
    }

    /// Same layout with different coordinates.
    pub fn with_points(&self, points: Vec<Point>) -> Result<Self> {
        if points.len() != self.points.len() {
            return Err(Error::shape(
                "with_points",
                format!("{} points for a shape of {}", points.len(), self.points.len()),
            ));
        }
        Self::new(points, self.structures.clone(), self.spacing_mm)
    }

    pub fn same_layout(&self, other: &Shape) -> bool {
        self.points.len() == other.points.len() && self.structures == other.structures
    }

    /// Points as a row-major `L×2` buffer.
    pub fn flat(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| [p[0], p[1]]).collect()
    }

    /// Moves every landmark by `offsets[i]`.
    pub fn displaced(&self, offsets: &[Point]) -> Result<Self> {
        if offsets.len() != self.points.len() {
            return Err(Error::shape("displaced", format!("{} offsets for {} points", offsets.len(), self.len())));
        }
        let pts = self
            .points
            .iter()
            .zip(offsets)
            .map(|(p, d)| [p[0] + d[0], p[1] + d[1]])
            .collect();
        self.with_points(pts)
    }
}

pub(crate) fn points_from_flat(flat: &[f64]) -> Vec<Point> {
    flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect()
}

/// Index of a uniformly drawn training shape other than `exclude`.
pub fn pick_initial_shape<R: Rng + ?Sized>(n_shapes: usize, rng: &mut R, exclude: Option<usize>) -> Result<usize> {
    if n_shapes < 2 {
        return Err(Error::invalid(format!("need at least 2 training shapes, got {n_shapes}")));
    }
    match exclude {
        Some(ex) if ex < n_shapes => {
            let r = rng.random_range(0..n_shapes - 1);
            Ok(if r >= ex { r + 1 } else { r })
        }
        _ => Ok(rng.random_range(0..n_shapes)),
    }
}

/// Coordinate-wise mean of shapes sharing one layout.
pub fn mean_shape(shapes: &[Shape]) -> Result<Shape> {
    let first = shapes.first().ok_or_else(|| Error::invalid("mean of zero shapes"))?;
    let mut acc = vec![[0.0; 2]; first.len()];
    for s in shapes {
        if !s.same_layout(first) {
            return Err(Error::invalid(format!(
                "inconsistent layouts: {} vs {} landmarks",
                first.len(),
                s.len()
            )));
        }
        for (a, p) in acc.iter_mut().zip(s.points()) {
            a[0] += p[0];
            a[1] += p[1];
        }
    }
    let n = shapes.len() as f64;
    first.with_points(acc.into_iter().map(|a| [a[0] / n, a[1] / n]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn square(x0: f64, y0: f64, side: f64) -> Shape {
        Shape::new(
            vec![[x0, y0], [x0 + side, y0], [x0 + side, y0 + side], [x0, y0 + side]],
            vec![Structure {
                name: "sq".into(),
                start: 0,
                end: 4,
            }],
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn shape_validation() {
        let st = |s, e| Structure {
            name: "a".into(),
            start: s,
            end: e,
        };
        let pts = vec![[0.0, 0.0]; 4];
        assert!(Shape::new(pts.clone(), vec![st(0, 4)], 1.0).is_ok());
        assert!(Shape::new(pts.clone(), vec![st(0, 2)], 1.0).is_err());
        assert!(Shape::new(pts.clone(), vec![st(1, 4)], 1.0).is_err());
        assert!(Shape::new(pts.clone(), vec![st(0, 4)], 0.0).is_err());
        assert!(Shape::new(vec![[0.0, 0.0]; 5], vec![st(0, 4)], 1.0).is_err());
    }

    #[test]
    fn initial_shape_picks() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            assert_eq!(pick_initial_shape(2, &mut rng, Some(0)).unwrap(), 1);
        }
        let mut counts = [0usize; 5];
        for _ in 0..10_000 {
            counts[pick_initial_shape(5, &mut rng, Some(2)).unwrap()] += 1;
        }
        assert_eq!(counts[2], 0);
        assert!(counts.iter().enumerate().all(|(i, &c)| i == 2 || c > 2200));
        assert!(pick_initial_shape(1, &mut rng, None).is_err());

        let a: Vec<usize> = {
            let mut r = ChaCha8Rng::seed_from_u64(9);
            (0..20).map(|_| pick_initial_shape(7, &mut r, Some(1)).unwrap()).collect()
        };
        let b: Vec<usize> = {
            let mut r = ChaCha8Rng::seed_from_u64(9);
            (0..20).map(|_| pick_initial_shape(7, &mut r, Some(1)).unwrap()).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn mean_shape_cases() {
        let a = square(0.0, 0.0, 2.0);
        assert_eq!(mean_shape(std::slice::from_ref(&a)).unwrap(), a);
        let b = square(2.0, 4.0, 2.0);
        let m = mean_shape(&[a.clone(), b]).unwrap();
        assert_eq!(m.points()[0], [1.0, 2.0]);
        assert_eq!(m.points()[2], [3.0, 4.0]);

        // mirror about the image centre (size 10): x -> 10 - x
        let mirrored = a.with_points(a.points().iter().map(|p| [10.0 - p[0], p[1]]).collect()).unwrap();
        let m = mean_shape(&[a.clone(), mirrored]).unwrap();
        assert!(m.points().iter().all(|p| p[0] == 5.0));

        let other = Shape::new(
            vec![[0.0; 2]; 3],
            vec![Structure {
                name: "t".into(),
                start: 0,
                end: 3,
            }],
            1.0,
        )
        .unwrap();
        assert!(mean_shape(&[a, other]).is_err());
        assert!(mean_shape(&[]).is_err());
    }
}
