use std::collections::{HashMap, HashSet};

use super::kernels;
use super::ops::{sigmoid, split_axis, BilinearTap};
use super::{Op, Tensor};
use crate::error::{Error, Result};

/// Gradients of a scalar root with respect to every tracked leaf it depends on.
#[derive(Default)]
pub struct Gradients {
    leaves: HashMap<usize, (Tensor, Vec<f64>)>,
}

impl Gradients {
    /// Gradient for `leaf`, or `None` if the root does not depend on it.
    pub fn get(&self, leaf: &Tensor) -> Option<&[f64]> {
        self.leaves.get(&leaf.key()).map(|(_, g)| g.as_slice())
    }

    /// Gradient for `leaf`, zeros if the root does not depend on it.
    pub fn get_or_zeros(&self, leaf: &Tensor) -> Vec<f64> {
        self.get(leaf).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; leaf.numel()])
    }

    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }
}

fn accumulate(grads: &mut HashMap<usize, Vec<f64>>, t: &Tensor, g: Vec<f64>) {
    if !t.requires_grad() {
        return;
    }
    match grads.get_mut(&t.key()) {
        Some(acc) => {
            for (a, v) in acc.iter_mut().zip(&g) {
                *a += v;
            }
        }
        None => {
            grads.insert(t.key(), g);
        }
    }
}

/// Post-order over the tracked part of the graph.
fn topo_order(root: &Tensor) -> Vec<Tensor> {
    let mut order = Vec::new();
    let mut seen = HashSet::new();
    let mut stack: Vec<(Tensor, bool)> = vec![(root.clone(), false)];
    while let Some((t, expanded)) = stack.pop() {
        if expanded {
            order.push(t);
            continue;
        }
        if !seen.insert(t.key()) {
            continue;
        }
        stack.push((t.clone(), true));
        if let Some(op) = t.op() {
            for p in op.parents().into_iter().rev() {
                if p.requires_grad() && !seen.contains(&p.key()) {
                    stack.push((p.clone(), false));
                }
            }
        }
    }
    order
}

impl Tensor {
    /// Reverse-mode pass from a scalar root.
    pub fn backward(&self) -> Result<Gradients> {
        if self.numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!("root must be a scalar, got shape {:?}", self.shape()),
            ));
        }
        let mut out = Gradients::default();
        if !self.requires_grad() {
            return Ok(out);
        }
        let order = topo_order(self);
        let mut grads: HashMap<usize, Vec<f64>> = HashMap::new();
        grads.insert(self.key(), vec![1.0]);
        for node in order.iter().rev() {
            let Some(g) = grads.remove(&node.key()) else {
                continue;
            };
            match node.op() {
                None => {
                    out.leaves.insert(node.key(), (node.clone(), g));
                }
                Some(op) => propagate(node, op, &g, &mut grads),
            }
        }
        Ok(out)
    }
}

fn elementwise(x: &Tensor, g: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    x.data().iter().zip(g).map(|(&v, &gv)| f(v, gv)).collect()
}

fn propagate(node: &Tensor, op: &Op, g: &[f64], grads: &mut HashMap<usize, Vec<f64>>) {
    match op {
        Op::Add(a, b) => {
            accumulate(grads, a, g.to_vec());
            accumulate(grads, b, g.to_vec());
        }
        Op::Sub(a, b) => {
            accumulate(grads, a, g.to_vec());
            accumulate(grads, b, g.iter().map(|v| -v).collect());
        }
        Op::Mul(a, b) => {
            if a.requires_grad() {
                accumulate(grads, a, elementwise(b, g, |bv, gv| bv * gv));
            }
            if b.requires_grad() {
                accumulate(grads, b, elementwise(a, g, |av, gv| av * gv));
            }
        }
        Op::AddRowBias(a, bias) => {
            accumulate(grads, a, g.to_vec());
            if bias.requires_grad() {
                let n = bias.numel();
                let mut gb = vec![0.0; n];
                for row in g.chunks_exact(n) {
                    for (acc, v) in gb.iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                accumulate(grads, bias, gb);
            }
        }
        Op::AddChannelBias(a, bias) => {
            accumulate(grads, a, g.to_vec());
            if bias.requires_grad() {
                let plane = g.len() / bias.numel();
                let gb = g.chunks_exact(plane).map(|c| c.iter().fold(0.0, |s, v| s + v)).collect();
                accumulate(grads, bias, gb);
            }
        }
        Op::ScaleChannels(a, s) => {
            let plane = g.len() / s.numel();
            if a.requires_grad() {
                let mut ga = g.to_vec();
                for (chunk, &sv) in ga.chunks_exact_mut(plane).zip(s.data()) {
                    for v in chunk {
                        *v *= sv;
                    }
                }
                accumulate(grads, a, ga);
            }
            if s.requires_grad() {
                let gs = g
                    .chunks_exact(plane)
                    .zip(a.data().chunks_exact(plane))
                    .map(|(gc, ac)| gc.iter().zip(ac).fold(0.0, |acc, (x, y)| acc + x * y))
                    .collect();
                accumulate(grads, s, gs);
            }
        }
        Op::Scale(a, c) => accumulate(grads, a, g.iter().map(|v| v * c).collect()),
        Op::AddScalar(a) => accumulate(grads, a, g.to_vec()),
        Op::Relu(a) => accumulate(grads, a, elementwise(a, g, |x, gv| if x > 0.0 { gv } else { 0.0 })),
        Op::Tanh(a) => {
            let gy = node.data().iter().zip(g).map(|(&y, &gv)| gv * (1.0 - y * y)).collect();
            accumulate(grads, a, gy);
        }
        Op::Sigmoid(a) => {
            let gy = a
                .data()
                .iter()
                .zip(g)
                .map(|(&x, &gv)| {
                    let s = sigmoid(x);
                    gv * s * (1.0 - s)
                })
                .collect();
            accumulate(grads, a, gy);
        }
        Op::Exp(a) => {
            let gy = node.data().iter().zip(g).map(|(&y, &gv)| gv * y).collect();
            accumulate(grads, a, gy);
        }
        Op::Log(a) => accumulate(grads, a, elementwise(a, g, |x, gv| gv / x)),
        Op::Clamp(a, lo, hi) => accumulate(
            grads,
            a,
            elementwise(a, g, |x, gv| if x < *lo || x > *hi { 0.0 } else { gv }),
        ),
        Op::Map(a, df) => accumulate(grads, a, elementwise(a, g, |x, gv| gv * df(x))),
        Op::Sum(a) => accumulate(grads, a, vec![g[0]; a.numel()]),
        Op::Mean(a) => accumulate(grads, a, vec![g[0] / a.numel() as f64; a.numel()]),
        Op::SumAxis(a, axis) => {
            let (outer, len, inner) = split_axis(a.shape(), *axis);
            let mut ga = vec![0.0; a.numel()];
            for o in 0..outer {
                for k in 0..len {
                    let dst = &mut ga[(o * len + k) * inner..(o * len + k + 1) * inner];
                    dst.copy_from_slice(&g[o * inner..(o + 1) * inner]);
                }
            }
            accumulate(grads, a, ga);
        }
        Op::MaxAxis(a, axis, arg) => {
            let (_, len, inner) = split_axis(a.shape(), *axis);
            let mut ga = vec![0.0; a.numel()];
            for (slot, (&k, &gv)) in arg.iter().zip(g).enumerate() {
                let (o, i) = (slot / inner, slot % inner);
                ga[(o * len + k) * inner + i] += gv;
            }
            accumulate(grads, a, ga);
        }
        Op::MatMul(a, b) => {
            let (m, k) = (a.shape()[0], a.shape()[1]);
            let n = b.shape()[1];
            if a.requires_grad() {
                accumulate(grads, a, kernels::matmul_nt(g, b.data(), m, n, k));
            }
            if b.requires_grad() {
                accumulate(grads, b, kernels::matmul_tn(a.data(), g, m, k, n));
            }
        }
        Op::Softmax(a, axis) => {
            let (outer, len, inner) = split_axis(a.shape(), *axis);
            let y = node.data();
            let mut ga = vec![0.0; y.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |k: usize| (o * len + k) * inner + i;
                    let dot = (0..len).fold(0.0, |s, k| s + g[idx(k)] * y[idx(k)]);
                    for k in 0..len {
                        ga[idx(k)] = y[idx(k)] * (g[idx(k)] - dot);
                    }
                }
            }
            accumulate(grads, a, ga);
        }
        Op::Conv2d {
            input,
            kernel,
            cols,
            geom,
        } => {
            let c_out = kernel.shape()[0];
            let (pl, no) = (geom.patch_len(), geom.n_out());
            if kernel.requires_grad() {
                accumulate(grads, kernel, kernels::matmul_nt(g, cols, c_out, no, pl));
            }
            if input.requires_grad() {
                let dcols = kernels::matmul_tn(kernel.data(), g, c_out, pl, no);
                accumulate(grads, input, kernels::col2im(&dcols, geom));
            }
        }
        Op::Concat(parts, axis) => {
            let (outer, total, inner) = split_axis(node.shape(), *axis);
            let mut offset = 0;
            for p in parts {
                let len = p.shape()[*axis];
                if p.requires_grad() {
                    let mut gp = Vec::with_capacity(p.numel());
                    for o in 0..outer {
                        let base = (o * total + offset) * inner;
                        gp.extend_from_slice(&g[base..base + len * inner]);
                    }
                    accumulate(grads, p, gp);
                }
                offset += len;
            }
        }
        Op::Narrow(a, axis, start) => {
            let (outer, n, inner) = split_axis(a.shape(), *axis);
            let len = node.shape()[*axis];
            let mut ga = vec![0.0; a.numel()];
            for o in 0..outer {
                let base = (o * n + start) * inner;
                ga[base..base + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
            }
            accumulate(grads, a, ga);
        }
        Op::Gather(a, indices) => {
            let row = a.numel() / a.shape()[0].max(1);
            let mut ga = vec![0.0; a.numel()];
            for (r, &i) in indices.iter().enumerate() {
                for (d, v) in ga[i * row..(i + 1) * row].iter_mut().zip(&g[r * row..(r + 1) * row]) {
                    *d += v;
                }
            }
            accumulate(grads, a, ga);
        }
        Op::Reshape(a) => accumulate(grads, a, g.to_vec()),
        Op::Bilinear { fmap, coords, scale } => {
            let (c, h, w) = (fmap.shape()[0], fmap.shape()[1], fmap.shape()[2]);
            let f = fmap.data();
            let mut gf = vec![0.0; if fmap.requires_grad() { f.len() } else { 0 }];
            let mut gc = vec![0.0; coords.numel()];
            for (i, xy) in coords.data().chunks_exact(2).enumerate() {
                let t = BilinearTap::new(xy[0], xy[1], *scale, w, h);
                let gi = &g[i * c..(i + 1) * c];
                let (w00, w01) = ((1.0 - t.fy) * (1.0 - t.fx), (1.0 - t.fy) * t.fx);
                let (w10, w11) = (t.fy * (1.0 - t.fx), t.fy * t.fx);
                let (mut dx, mut dy) = (0.0, 0.0);
                for (ch, &gv) in gi.iter().enumerate() {
                    let base = ch * h * w;
                    let v00 = f[base + t.y0 * w + t.x0];
                    let v01 = f[base + t.y0 * w + t.x1];
                    let v10 = f[base + t.y1 * w + t.x0];
                    let v11 = f[base + t.y1 * w + t.x1];
                    dx += gv * ((1.0 - t.fy) * (v01 - v00) + t.fy * (v11 - v10));
                    dy += gv * ((1.0 - t.fx) * (v10 - v00) + t.fx * (v11 - v01));
                    if !gf.is_empty() {
                        gf[base + t.y0 * w + t.x0] += gv * w00;
                        gf[base + t.y0 * w + t.x1] += gv * w01;
                        gf[base + t.y1 * w + t.x0] += gv * w10;
                        gf[base + t.y1 * w + t.x1] += gv * w11;
                    }
                }
                gc[2 * i] = dx * scale;
                gc[2 * i + 1] = dy * scale;
            }
            if fmap.requires_grad() {
                accumulate(grads, fmap, gf);
            }
            accumulate(grads, coords, gc);
        }
        Op::Upsample(a, factor) => {
            let (c, h, w) = (a.shape()[0], a.shape()[1], a.shape()[2]);
            let ty = kernels::upsample_taps(h, *factor);
            let tx = kernels::upsample_taps(w, *factor);
            let (ho, wo) = (h * factor, w * factor);
            let mut ga = vec![0.0; a.numel()];
            for ch in 0..c {
                let plane = &mut ga[ch * h * w..(ch + 1) * h * w];
                for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                    for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                        let gv = g[ch * ho * wo + oy * wo + ox];
                        plane[y0 * w + x0] += gv * (1.0 - fy) * (1.0 - fx);
                        plane[y0 * w + x1] += gv * (1.0 - fy) * fx;
                        plane[y1 * w + x0] += gv * fy * (1.0 - fx);
                        plane[y1 * w + x1] += gv * fy * fx;
                    }
                }
            }
            accumulate(grads, a, ga);
        }
    }
}
