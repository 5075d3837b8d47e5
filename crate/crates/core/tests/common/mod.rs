//! Gradient suites and metric oracles shared by the integration tests and
//! the acceptance run.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use shapereg_core::encoder::weighted_bce_per_channel;
use shapereg_core::geometry::{sample_features, Mask, Point, Shape, Structure};
use shapereg_core::heads::{Head, HeadKind, ShapeDictionary, DEFAULT_LAMBDA, DEFAULT_RADIUS};
use shapereg_core::nn::{grad_check_params, jitter, ParamStore};
use shapereg_core::tensor::Conv2dParams;
use shapereg_core::{grad_check, Result, Tensor};

pub const H: f64 = 1e-5;
/// Head losses reach O(100) through the ±22 px grid, so a 1e-5 step loses
/// small gradient entries to cancellation.
pub const HEAD_H: f64 = 1e-4;
pub const GRAD_TOL: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(r: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| r.random_range(lo..hi)).collect()).unwrap()
}

/// Values with magnitude in `[0.1, 1]` and random sign, away from the kinks of
/// relu, clamp and abs-like ops.
pub fn off_kink(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = r.random_range(0.1..1.0);
            if r.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

/// Reduces to a scalar through fixed, non-uniform weights so that ops whose
/// plain sum is constant (softmax) still get a non-trivial check.
pub fn project(y: &Tensor) -> Result<Tensor> {
    let w: Vec<f64> = (0..y.numel()).map(|i| (1.3 * i as f64 + 0.7).sin()).collect();
    y.mul(&Tensor::new(y.shape(), w)?).map(|t| t.sum())
}

type Case = (&'static str, Vec<Tensor>, Box<dyn Fn(&[Tensor]) -> Result<Tensor>>);

fn case(name: &'static str, inputs: Vec<Tensor>, f: impl Fn(&[Tensor]) -> Result<Tensor> + 'static) -> Case {
    (name, inputs, Box::new(f))
}

/// Pixel coordinates whose bilinear cell fractions stay inside `[0.2, 0.8]`.
fn sample_coords(r: &mut ChaCha8Rng, n: usize, grid: usize, scale: f64) -> Tensor {
    let data = (0..2 * n)
        .map(|_| {
            let cell = r.random_range(0..grid - 1) as f64;
            let f = cell + r.random_range(0.2..0.8);
            (f + 0.5) / scale - 0.5
        })
        .collect();
    Tensor::new(&[n, 2], data).unwrap()
}

fn op_cases(seed: u64) -> Vec<Case> {
    let mut r = rng(seed);
    let r = &mut r;
    let conv = |stride, dilation, padding| Conv2dParams { stride, dilation, padding };
    vec![
        case("add", vec![uniform(r, &[3, 4], -1.0, 1.0), uniform(r, &[3, 4], -1.0, 1.0)], |t| project(&t[0].add(&t[1])?)),
        case("sub", vec![uniform(r, &[3, 4], -1.0, 1.0), uniform(r, &[3, 4], -1.0, 1.0)], |t| project(&t[0].sub(&t[1])?)),
        case("mul", vec![uniform(r, &[3, 4], -1.0, 1.0), uniform(r, &[3, 4], -1.0, 1.0)], |t| project(&t[0].mul(&t[1])?)),
        case("add_row_bias", vec![uniform(r, &[5, 3], -1.0, 1.0), uniform(r, &[3], -1.0, 1.0)], |t| {
            project(&t[0].add_row_bias(&t[1])?)
        }),
        case("add_channel_bias", vec![uniform(r, &[2, 3, 4], -1.0, 1.0), uniform(r, &[2], -1.0, 1.0)], |t| {
            project(&t[0].add_channel_bias(&t[1])?)
        }),
        case("scale_channels", vec![uniform(r, &[2, 3, 4], -1.0, 1.0), uniform(r, &[2], -1.0, 1.0)], |t| {
            project(&t[0].scale_channels(&t[1])?)
        }),
        case("scale", vec![uniform(r, &[6], -1.0, 1.0)], |t| project(&t[0].scale(-2.5))),
        case("neg", vec![uniform(r, &[6], -1.0, 1.0)], |t| project(&t[0].neg())),
        case("add_scalar", vec![uniform(r, &[6], -1.0, 1.0)], |t| project(&t[0].add_scalar(0.3))),
        case("relu", vec![off_kink(r, &[4, 5])], |t| project(&t[0].relu())),
        case("tanh", vec![uniform(r, &[4, 5], -2.0, 2.0)], |t| project(&t[0].tanh())),
        case("sigmoid", vec![uniform(r, &[4, 5], -3.0, 3.0)], |t| project(&t[0].sigmoid())),
        case("exp", vec![uniform(r, &[4, 5], -2.0, 2.0)], |t| project(&t[0].exp())),
        case("log", vec![uniform(r, &[4, 5], 0.2, 3.0)], |t| project(&t[0].log())),
        case("square", vec![uniform(r, &[4, 5], -2.0, 2.0)], |t| project(&t[0].square())),
        // bounds at ±0.05 fall in the gap left by off_kink
        case("clamp", vec![off_kink(r, &[4, 5])], |t| project(&t[0].clamp(-0.05, 0.05).add(&t[0].clamp(-2.0, 0.05))?)),
        case("map_with_grad", vec![uniform(r, &[4, 5], -2.0, 2.0)], |t| project(&t[0].map_with_grad(f64::sin, f64::cos))),
        case("sum", vec![uniform(r, &[3, 4], -1.0, 1.0)], |t| Ok(t[0].square().sum())),
        case("mean", vec![uniform(r, &[3, 4], -1.0, 1.0)], |t| Ok(t[0].square().mean())),
        case("sum_axis", vec![uniform(r, &[2, 3, 4], -1.0, 1.0)], |t| {
            project(&t[0].sum_axis(0)?)?.add(&project(&t[0].sum_axis(1)?)?)?.add(&project(&t[0].sum_axis(2)?)?)
        }),
        case("mean_axis", vec![uniform(r, &[2, 3, 4], -1.0, 1.0)], |t| {
            project(&t[0].mean_axis(0)?)?.add(&project(&t[0].mean_axis(2)?)?)
        }),
        case("max_axis", vec![uniform(r, &[5, 6], -1.0, 1.0)], |t| {
            project(&t[0].max_axis(0)?)?.add(&project(&t[0].max_axis(1)?)?)
        }),
        case("matmul", vec![uniform(r, &[3, 5], -1.0, 1.0), uniform(r, &[5, 4], -1.0, 1.0)], |t| {
            project(&t[0].matmul(&t[1])?)
        }),
        case("softmax", vec![uniform(r, &[3, 4, 5], -2.0, 2.0)], |t| {
            project(&t[0].softmax(0)?)?.add(&project(&t[0].softmax(1)?)?)?.add(&project(&t[0].softmax(2)?)?)
        }),
        case("conv2d", vec![uniform(r, &[2, 7, 6], -1.0, 1.0), uniform(r, &[3, 2, 3, 3], -1.0, 1.0)], move |t| {
            project(&t[0].conv2d(&t[1], conv(1, 1, 1))?)
        }),
        case("conv2d_strided", vec![uniform(r, &[2, 9, 8], -1.0, 1.0), uniform(r, &[3, 2, 3, 3], -1.0, 1.0)], move |t| {
            project(&t[0].conv2d(&t[1], conv(2, 1, 0))?)
        }),
        case("conv2d_dilated", vec![uniform(r, &[2, 9, 9], -1.0, 1.0), uniform(r, &[2, 2, 3, 3], -1.0, 1.0)], move |t| {
            project(&t[0].conv2d(&t[1], conv(1, 2, 2))?)
        }),
        case("conv2d_pointwise", vec![uniform(r, &[3, 4, 4], -1.0, 1.0), uniform(r, &[2, 3, 1, 1], -1.0, 1.0)], move |t| {
            project(&t[0].conv2d(&t[1], conv(1, 1, 0))?)
        }),
        case("concat", vec![uniform(r, &[2, 3], -1.0, 1.0), uniform(r, &[2, 2], -1.0, 1.0)], |t| {
            project(&Tensor::concat(&[t[0].clone(), t[1].clone()], 1)?)
        }),
        case("narrow", vec![uniform(r, &[4, 5], -1.0, 1.0)], |t| project(&t[0].narrow(1, 1, 3)?)),
        case("gather_rows", vec![uniform(r, &[4, 3], -1.0, 1.0)], |t| project(&t[0].gather_rows(&[2, 0, 2, 3])?)),
        case("reshape", vec![uniform(r, &[4, 3], -1.0, 1.0)], |t| project(&t[0].reshape(&[2, 6])?.square())),
        case("bilinear_sample", vec![uniform(r, &[3, 5, 5], -1.0, 1.0), sample_coords(r, 7, 5, 0.25)], |t| {
            project(&t[0].bilinear_sample(&t[1], 0.25)?)
        }),
        case("upsample_bilinear", vec![uniform(r, &[2, 3, 4], -1.0, 1.0)], |t| project(&t[0].upsample_bilinear(2)?)),
        case("sample_features", vec![uniform(r, &[2, 4, 4], -1.0, 1.0), sample_coords(r, 6, 4, 0.125)], |t| {
            project(&sample_features(&t[0], &t[1], 32)?)
        }),
        case("weighted_bce", vec![uniform(r, &[2, 3, 3], 0.1, 0.9)], |t| {
            let target = Tensor::new(&[2, 3, 3], (0..18).map(|i| (i % 3 == 0) as u8 as f64).collect())?;
            weighted_bce_per_channel(&t[0], &target, &[2.0, 0.5])
        }),
    ]
}

/// Relative gradient error of every tensor op for one seed.
pub fn op_gradient_errors(seed: u64) -> Vec<(&'static str, f64)> {
    op_cases(seed)
        .into_iter()
        .map(|(name, inputs, f)| {
            let err = grad_check(|t| f(t), &inputs, H).unwrap_or_else(|e| panic!("{name}: {e}"));
            (name, err)
        })
        .collect()
}

fn ring(n: usize, cx: f64, cy: f64, radius: f64) -> Vec<Point> {
    (0..n)
        .map(|i| {
            let t = i as f64 / n as f64 * std::f64::consts::TAU;
            [cx + radius * t.cos(), cy + radius * t.sin()]
        })
        .collect()
}

/// Two ring structures (5 and 4 landmarks) shifted by `(dx, dy)`.
pub fn two_rings(dx: f64, dy: f64) -> Shape {
    let mut pts = ring(5, 20.0 + dx, 20.0 + dy, 6.0);
    pts.extend(ring(4, 40.0 + dx, 30.0 + dy, 4.0));
    let structures = vec![
        Structure { name: "a".into(), start: 0, end: 5 },
        Structure { name: "b".into(), start: 5, end: 9 },
    ];
    Shape::new(pts, structures, 1.0).unwrap()
}

/// Relative gradient error of each head's training loss, with respect to the
/// landmark features and every head parameter.
pub fn head_gradient_errors(seed: u64) -> Vec<(HeadKind, f64)> {
    let mut r = rng(seed);
    let init = two_rings(r.random_range(-2.0..2.0), r.random_range(-2.0..2.0));
    let target = two_rings(r.random_range(-2.0..2.0), r.random_range(-2.0..2.0));
    let dict = ShapeDictionary::new(&[two_rings(-1.0, 0.5), two_rings(0.5, -1.0), two_rings(2.0, 1.0)]).unwrap();
    let feats = uniform(&mut r, &[9, 6], -1.0, 1.0);
    [HeadKind::Disp, HeadKind::Heatmap, HeadKind::Shape]
        .into_iter()
        .map(|kind| {
            let head = Head::new(kind, 6, DEFAULT_RADIUS, dict.len(), "head.").unwrap();
            let mut store = ParamStore::new();
            head.init(&mut store, &mut r);
            jitter(&mut store, 0.1, &mut r);
            let err = grad_check_params(&store, std::slice::from_ref(&feats), HEAD_H, |p, t| {
                let pred = head.predict(p, &t[0], &init, Some(&dict))?;
                head.loss(&pred, &init, &target, DEFAULT_LAMBDA)
            })
            .unwrap();
            (kind, err)
        })
        .collect()
}

/// Random simple polygon inside a `size` image: convex when `convex`, else
/// star-shaped around its centre.
pub fn random_polygon(r: &mut ChaCha8Rng, size: usize, convex: bool) -> Vec<Point> {
    let s = size as f64;
    let n = r.random_range(3..14);
    let (cx, cy) = (r.random_range(0.3 * s..0.7 * s), r.random_range(0.3 * s..0.7 * s));
    let base = r.random_range(0.1 * s..0.28 * s);
    let mut angles: Vec<f64> = (0..n).map(|_| r.random_range(0.0..std::f64::consts::TAU)).collect();
    angles.sort_by(f64::total_cmp);
    angles
        .into_iter()
        .map(|a| {
            let rad = if convex { base } else { base * r.random_range(0.3..1.0) };
            [cx + rad * a.cos(), cy + rad * a.sin()]
        })
        .collect()
}

/// Winding number of `poly` around `p`.
fn winding(p: Point, poly: &[Point]) -> i32 {
    let n = poly.len();
    let mut w = 0;
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        let cross = (b[0] - a[0]) * (p[1] - a[1]) - (p[0] - a[0]) * (b[1] - a[1]);
        if a[1] <= p[1] {
            if b[1] > p[1] && cross > 0.0 {
                w += 1;
            }
        } else if b[1] <= p[1] && cross < 0.0 {
            w -= 1;
        }
    }
    w
}

/// Tests every pixel centre against the polygon.
pub fn brute_force_mask(poly: &[Point], size: usize) -> Mask {
    let mut m = Mask::empty(size, size);
    for y in 0..size {
        for x in 0..size {
            if winding([x as f64 + 0.5, y as f64 + 0.5], poly) != 0 {
                m.set(x, y, true);
            }
        }
    }
    m
}

/// Dice from explicit pixel-coordinate sets.
pub fn dice_by_counting(a: &Mask, b: &Mask) -> f64 {
    use std::collections::BTreeSet;
    let set = |m: &Mask| -> BTreeSet<(usize, usize)> {
        (0..m.height).flat_map(|y| (0..m.width).map(move |x| (x, y))).filter(|&(x, y)| m.get(x, y)).collect()
    };
    let (sa, sb) = (set(a), set(b));
    if sa.is_empty() && sb.is_empty() {
        return 1.0;
    }
    2.0 * sa.intersection(&sb).count() as f64 / (sa.len() + sb.len()) as f64
}

fn dist(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Distance from `p` to a closed polyline by sampling each edge at `n + 1`
/// points, then narrowing the best bracket with golden-section search.
pub fn sampled_polyline_distance(p: Point, contour: &[Point], n: usize) -> f64 {
    let m = contour.len();
    let mut best = f64::INFINITY;
    for i in 0..m {
        let (a, b) = (contour[i], contour[(i + 1) % m]);
        let at = |t: f64| dist(p, [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
        let (mut jbest, mut dbest) = (0, f64::INFINITY);
        for j in 0..=n {
            let d = at(j as f64 / n as f64);
            if d < dbest {
                (jbest, dbest) = (j, d);
            }
        }
        let (mut lo, mut hi) = (jbest.saturating_sub(1) as f64 / n as f64, (jbest + 1).min(n) as f64 / n as f64);
        let g = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..100 {
            let (x1, x2) = (hi - g * (hi - lo), lo + g * (hi - lo));
            if at(x1) < at(x2) {
                hi = x2;
            } else {
                lo = x1;
            }
        }
        best = best.min(dbest).min(at(0.5 * (lo + hi)));
    }
    best
}

/// Symmetric landmark-to-contour ASD through the sampling oracle.
pub fn asd_by_sampling(pred: &[Point], gt: &[Point], spacing: f64) -> f64 {
    let one = |a: &[Point], b: &[Point]| a.iter().map(|&p| sampled_polyline_distance(p, b, 2000)).sum::<f64>() / a.len() as f64;
    0.5 * (one(pred, gt) + one(gt, pred)) * spacing
}

pub fn single_structure(points: Vec<Point>, spacing: f64) -> Shape {
    let n = points.len();
    Shape::new(points, vec![Structure { name: "s".into(), start: 0, end: n }], spacing).unwrap()
}
