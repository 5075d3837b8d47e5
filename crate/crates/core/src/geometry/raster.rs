use std::path::Path;

use super::{Point, Shape};
use crate::error::{Error, Result};
use crate::pgm::{self, Gray8};

/// Binary image, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    /// Thresholds a probability map at `level` (inclusive).
    pub fn from_probs(width: usize, height: usize, probs: &[f64], level: f64) -> Self {
        Self {
            width,
            height,
            data: probs.iter().map(|&p| p >= level).collect(),
        }
    }

    pub fn save_pgm(&self, path: &Path) -> Result<()> {
        pgm::write(
            path,
            &Gray8 {
                width: self.width,
                height: self.height,
                pixels: self.data.iter().map(|&v| if v { 255 } else { 0 }).collect(),
            },
        )
    }
}

/// Even-odd scanline fill of one closed contour.
///
/// A pixel is set when its centre `(x + 0.5, y + 0.5)` lies inside.
pub fn rasterize_contour(contour: &[Point], size: usize) -> Result<Mask> {
    if contour.len() < 3 {
        return Err(Error::invalid(format!("contour has {} points, need at least 3", contour.len())));
    }
    let mut mask = Mask::empty(size, size);
    let mut xs = Vec::with_capacity(contour.len());
    for y in 0..size {
        let py = y as f64 + 0.5;
        xs.clear();
        let mut j = contour.len() - 1;
        for i in 0..contour.len() {
            let (a, b) = (contour[i], contour[j]);
            if (a[1] > py) != (b[1] > py) {
                xs.push((b[0] - a[0]) * (py - a[1]) / (b[1] - a[1]) + a[0]);
            }
            j = i;
        }
        xs.sort_by(f64::total_cmp);
        // centre px is inside when an odd number of crossings lie strictly right of it,
        // i.e. xs[2k] <= px < xs[2k+1]
        for pair in xs.chunks_exact(2) {
            let (lo, hi) = (pair[0], pair[1]);
            let mut x = (lo - 0.5).ceil().max(0.0) as usize;
            while x > 0 && (x as f64 - 0.5) >= lo {
                x -= 1;
            }
            while (x as f64 + 0.5) < lo {
                x += 1;
            }
            while x < size && (x as f64 + 0.5) < hi {
                mask.set(x, y, true);
                x += 1;
            }
        }
    }
    Ok(mask)
}

/// One mask per structure, in structure order.
pub fn rasterize(shape: &Shape, size: usize) -> Result<Vec<Mask>> {
    shape
        .structures()
        .iter()
        .map(|s| rasterize_contour(&shape.points()[s.start..s.end], size))
        .collect()
}

/// Centres of mask pixels that touch the background (4-neighbourhood or image edge).
pub fn boundary_points(mask: &Mask) -> Vec<Point> {
    let mut out = Vec::new();
    for y in 0..mask.height {
        for x in 0..mask.width {
            if !mask.get(x, y) {
                continue;
            }
            let edge = x == 0
                || y == 0
                || x + 1 == mask.width
                || y + 1 == mask.height
                || !mask.get(x - 1, y)
                || !mask.get(x + 1, y)
                || !mask.get(x, y - 1)
                || !mask.get(x, y + 1);
            if edge {
                out.push([x as f64 + 0.5, y as f64 + 0.5]);
            }
        }
    }
    out
}
