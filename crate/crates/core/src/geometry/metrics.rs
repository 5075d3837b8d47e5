use super::{Mask, Point, Shape};
use crate::error::{Error, Result};

/// Dice similarity `2|A∩B| / (|A| + |B|)`; two empty masks score 1.
pub fn dice(a: &Mask, b: &Mask) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::shape(
            "dice",
            format!("{}×{} vs {}×{}", a.width, a.height, b.width, b.height),
        ));
    }
    let (mut inter, mut na, mut nb) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.data.iter().zip(&b.data) {
        na += x as usize;
        nb += y as usize;
        inter += (x && y) as usize;
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (na + nb) as f64)
}

fn point_to_segment(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (qx, qy) = (a[0] + t * dx, a[1] + t * dy);
    ((p[0] - qx).powi(2) + (p[1] - qy).powi(2)).sqrt()
}

/// Exact distance from `p` to the closed polyline through `contour`.
pub fn point_to_polyline(p: Point, contour: &[Point]) -> f64 {
    let n = contour.len();
    (0..n)
        .map(|i| point_to_segment(p, contour[i], contour[(i + 1) % n]))
        .fold(f64::INFINITY, f64::min)
}

fn mean_distance(points: &[Point], contour: &[Point]) -> f64 {
    points.iter().map(|&p| point_to_polyline(p, contour)).sum::<f64>() / points.len() as f64
}

/// Symmetric average surface distance of one structure, in millimetres.
///
/// Averages the mean landmark-to-contour distance in both directions and
/// scales by the ground truth's pixel spacing.
pub fn asd(pred: &Shape, gt: &Shape, structure: &str) -> Result<f64> {
    let p = pred.contour(structure)?;
    let g = gt.contour(structure)?;
    let d = 0.5 * (mean_distance(p, g) + mean_distance(g, p));
    Ok(d * gt.spacing_mm())
}

/// ASD between a boundary point set (e.g. mask edge pixels) and a ground-truth contour.
///
/// The forward direction uses exact point-to-polyline distance; the reverse
/// direction measures each ground-truth landmark to its nearest boundary point.
/// Returns `None` for an empty point set.
pub fn asd_point_set(points: &[Point], gt: &Shape, structure: &str) -> Result<Option<f64>> {
    let g = gt.contour(structure)?;
    if points.is_empty() {
        return Ok(None);
    }
    let forward = mean_distance(points, g);
    let reverse = g
        .iter()
        .map(|q| {
            points
                .iter()
                .map(|p| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min)
        })
        .sum::<f64>()
        / g.len() as f64;
    Ok(Some(0.5 * (forward + reverse) * gt.spacing_mm()))
}
