use super::kernels::{self, ConvGeom};
use super::{ElementFn, Op, Tensor};
use crate::error::{Error, Result};

/// Stride, dilation and zero padding of a 2D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dParams {
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
}

impl Default for Conv2dParams {
    fn default() -> Self {
        Self {
            stride: 1,
            dilation: 1,
            padding: 0,
        }
    }
}

/// Output length along one spatial axis, or `None` when it would be empty.
pub fn conv_output_dim(n: usize, k: usize, p: Conv2dParams) -> Option<usize> {
    let span = (n + 2 * p.padding) as isize - (p.dilation * (k - 1)) as isize - 1;
    if span < 0 || p.stride == 0 {
        return None;
    }
    Some(span as usize / p.stride + 1)
}

/// `(outer, len, inner)` split of a shape around `axis`.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn check_axis(t: &Tensor, axis: usize, op: &'static str) -> Result<()> {
    if axis >= t.rank() {
        return Err(Error::shape(op, format!("axis {axis} out of range for shape {:?}", t.shape())));
    }
    Ok(())
}

fn same_shape(a: &Tensor, b: &Tensor, op: &'static str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

impl Tensor {
    fn zip_with(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        self.data().iter().zip(other.data()).map(|(&a, &b)| f(a, b)).collect()
    }

    fn unary(&self, f: impl Fn(f64) -> f64, op: Op) -> Tensor {
        let data = self.data().iter().map(|&v| f(v)).collect();
        Tensor::from_op(self.shape().to_vec(), data, op)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        same_shape(self, other, "add")?;
        let data = self.zip_with(other, |a, b| a + b);
        Ok(Tensor::from_op(self.shape().to_vec(), data, Op::Add(self.clone(), other.clone())))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        same_shape(self, other, "sub")?;
        let data = self.zip_with(other, |a, b| a - b);
        Ok(Tensor::from_op(self.shape().to_vec(), data, Op::Sub(self.clone(), other.clone())))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        same_shape(self, other, "mul")?;
        let data = self.zip_with(other, |a, b| a * b);
        Ok(Tensor::from_op(self.shape().to_vec(), data, Op::Mul(self.clone(), other.clone())))
    }

    /// Adds a length-`n` bias to every row of an `m×n` matrix.
    pub fn add_row_bias(&self, bias: &Tensor) -> Result<Tensor> {
        let (m, n) = self.dims2("add_row_bias")?;
        if bias.numel() != n {
            return Err(Error::shape(
                "add_row_bias",
                format!("matrix {:?} with bias {:?}", self.shape(), bias.shape()),
            ));
        }
        let b = bias.data();
        let mut data = self.data().to_vec();
        for r in 0..m {
            for (v, &bv) in data[r * n..(r + 1) * n].iter_mut().zip(b) {
                *v += bv;
            }
        }
        Ok(Tensor::from_op(self.shape().to_vec(), data, Op::AddRowBias(self.clone(), bias.clone())))
    }

    /// Adds `bias[c]` to every element of channel `c` of a `C×H×W` tensor.
    pub fn add_channel_bias(&self, bias: &Tensor) -> Result<Tensor> {
        let (c, h, w) = self.dims3("add_channel_bias")?;
        if bias.numel() != c {
            return Err(Error::shape(
                "add_channel_bias",
                format!("input {:?} with bias {:?}", self.shape(), bias.shape()),
            ));
        }
        let mut data = self.data().to_vec();
        for (ch, &bv) in bias.data().iter().enumerate() {
            for v in &mut data[ch * h * w..(ch + 1) * h * w] {
                *v += bv;
            }
        }
        Ok(Tensor::from_op(self.shape().to_vec(), data, Op::AddChannelBias(self.clone(), bias.clone())))
    }

    /// Multiplies channel `c` of a `C×H×W` tensor by `scales[c]`.
    pub fn scale_channels(&self, scales: &Tensor) -> Result<Tensor> {
        let (c, h, w) = self.dims3("scale_channels")?;
        if scales.numel() != c {
            return Err(Error::shape(
                "scale_channels",
                format!("input {:?} with scales {:?}", self.shape(), scales.shape()),
            ));
        }
        let mut data = self.data().to_vec();
        for (ch, &s) in scales.data().iter().enumerate() {
            for v in &mut data[ch * h * w..(ch + 1) * h * w] {
                *v *= s;
            }
        }
        Ok(Tensor::from_op(self.shape().to_vec(), data, Op::ScaleChannels(self.clone(), scales.clone())))
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.unary(|v| v * c, Op::Scale(self.clone(), c))
    }

    pub fn neg(&self) -> Tensor {
        self.scale(-1.0)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        self.unary(|v| v + c, Op::AddScalar(self.clone()))
    }

    pub fn relu(&self) -> Tensor {
        self.unary(|v| v.max(0.0), Op::Relu(self.clone()))
    }

    pub fn tanh(&self) -> Tensor {
        self.unary(f64::tanh, Op::Tanh(self.clone()))
    }

    pub fn sigmoid(&self) -> Tensor {
        self.unary(sigmoid, Op::Sigmoid(self.clone()))
    }

    pub fn exp(&self) -> Tensor {
        self.unary(f64::exp, Op::Exp(self.clone()))
    }

    pub fn log(&self) -> Tensor {
        self.unary(f64::ln, Op::Log(self.clone()))
    }

    pub fn square(&self) -> Tensor {
        self.mul(self).expect("same tensor has matching shape")
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where clamping is active.
    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor {
        self.unary(|v| v.clamp(lo, hi), Op::Clamp(self.clone(), lo, hi))
    }

    /// Elementwise map with a caller-provided derivative.
    pub fn map_with_grad(&self, f: ElementFn, df: ElementFn) -> Tensor {
        self.unary(f, Op::Map(self.clone(), df))
    }

    pub fn sum(&self) -> Tensor {
        let s = self.data().iter().fold(0.0, |acc, &v| acc + v);
        Tensor::from_op(vec![], vec![s], Op::Sum(self.clone()))
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel().max(1) as f64;
        let s = self.data().iter().fold(0.0, |acc, &v| acc + v);
        Tensor::from_op(vec![], vec![s / n], Op::Mean(self.clone()))
    }

    /// Sums out `axis`, dropping it from the shape.
    pub fn sum_axis(&self, axis: usize) -> Result<Tensor> {
        check_axis(self, axis, "sum_axis")?;
        let (outer, len, inner) = split_axis(self.shape(), axis);
        let x = self.data();
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..len {
                let src = &x[(o * len + a) * inner..(o * len + a + 1) * inner];
                for (d, &v) in data[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += v;
                }
            }
        }
        let mut shape = self.shape().to_vec();
        shape.remove(axis);
        Ok(Tensor::from_op(shape, data, Op::SumAxis(self.clone(), axis)))
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Tensor> {
        let len = self.shape().get(axis).copied().unwrap_or(1).max(1);
        Ok(self.sum_axis(axis)?.scale(1.0 / len as f64))
    }

    /// Maximum along `axis` (ties resolve to the lowest index), dropping the axis.
    pub fn max_axis(&self, axis: usize) -> Result<Tensor> {
        check_axis(self, axis, "max_axis")?;
        let (outer, len, inner) = split_axis(self.shape(), axis);
        if len == 0 {
            return Err(Error::shape("max_axis", "empty axis"));
        }
        let x = self.data();
        let mut data = vec![f64::NEG_INFINITY; outer * inner];
        let mut arg = vec![0usize; outer * inner];
        for o in 0..outer {
            for a in 0..len {
                for i in 0..inner {
                    let v = x[(o * len + a) * inner + i];
                    let slot = o * inner + i;
                    if v > data[slot] || a == 0 {
                        data[slot] = v;
                        arg[slot] = a;
                    }
                }
            }
        }
        let mut shape = self.shape().to_vec();
        shape.remove(axis);
        Ok(Tensor::from_op(shape, data, Op::MaxAxis(self.clone(), axis, arg)))
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.dims2("matmul")?;
        let (k2, n) = other.dims2("matmul")?;
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("{:?} × {:?}: inner dimensions differ", self.shape(), other.shape()),
            ));
        }
        let data = kernels::matmul_nn(self.data(), other.data(), m, k, n);
        Ok(Tensor::from_op(vec![m, n], data, Op::MatMul(self.clone(), other.clone())))
    }

    /// Max-stabilized softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        check_axis(self, axis, "softmax")?;
        if self.data().iter().any(|v| v.is_nan()) {
            return Err(Error::NonFinite("softmax input contains NaN".into()));
        }
        let (outer, len, inner) = split_axis(self.shape(), axis);
        let x = self.data();
        let mut data = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |a: usize| (o * len + a) * inner + i;
                let mut mx = f64::NEG_INFINITY;
                for a in 0..len {
                    mx = mx.max(x[idx(a)]);
                }
                let mut z = 0.0;
                for a in 0..len {
                    let e = (x[idx(a)] - mx).exp();
                    data[idx(a)] = e;
                    z += e;
                }
                for a in 0..len {
                    data[idx(a)] /= z;
                }
            }
        }
        Ok(Tensor::from_op(self.shape().to_vec(), data, Op::Softmax(self.clone(), axis)))
    }

    /// 2D convolution of a `C_in×H×W` input with a `C_out×C_in×kh×kw` kernel.
    pub fn conv2d(&self, kernel: &Tensor, p: Conv2dParams) -> Result<Tensor> {
        let (c_in, h, w) = self.dims3("conv2d")?;
        let (c_out, kc, kh, kw) = match kernel.shape() {
            [a, b, c, d] => (*a, *b, *c, *d),
            s => return Err(Error::shape("conv2d", format!("kernel must be rank 4, got {s:?}"))),
        };
        if kc != c_in {
            return Err(Error::shape(
                "conv2d",
                format!("input {:?} has {c_in} channels, kernel {:?} expects {kc}", self.shape(), kernel.shape()),
            ));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::invalid(format!("conv2d kernel must be odd-sized, got {kh}×{kw}")));
        }
        if p.stride == 0 || p.dilation == 0 {
            return Err(Error::invalid("conv2d stride and dilation must be ≥ 1"));
        }
        let (h_out, w_out) = match (conv_output_dim(h, kh, p), conv_output_dim(w, kw, p)) {
            (Some(a), Some(b)) if a > 0 && b > 0 => (a, b),
            _ => {
                return Err(Error::shape(
                    "conv2d",
                    format!("input {h}×{w} too small for kernel {kh}×{kw} with {p:?}"),
                ))
            }
        };
        let geom = ConvGeom {
            c_in,
            h,
            w,
            kh,
            kw,
            stride: p.stride,
            dilation: p.dilation,
            padding: p.padding,
            h_out,
            w_out,
        };
        let cols = kernels::im2col(self.data(), &geom);
        let data = kernels::matmul_nn(kernel.data(), &cols, c_out, geom.patch_len(), geom.n_out());
        let cols = if self.requires_grad() || kernel.requires_grad() {
            cols
        } else {
            Vec::new()
        };
        Ok(Tensor::from_op(
            vec![c_out, h_out, w_out],
            data,
            Op::Conv2d {
                input: self.clone(),
                kernel: kernel.clone(),
                cols,
                geom,
            },
        ))
    }

    /// Concatenates tensors along `axis`; all other dimensions must agree.
    pub fn concat(parts: &[Tensor], axis: usize) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| Error::shape("concat", "no inputs"))?;
        check_axis(first, axis, "concat")?;
        for p in parts {
            let ok = p.rank() == first.rank()
                && p.shape().iter().zip(first.shape()).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(Error::shape(
                    "concat",
                    format!("{:?} vs {:?} along axis {axis}", first.shape(), p.shape()),
                ));
            }
        }
        let (outer, _, inner) = split_axis(first.shape(), axis);
        let total: usize = parts.iter().map(|p| p.shape()[axis]).sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let len = p.shape()[axis];
                data.extend_from_slice(&p.data()[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = total;
        Ok(Tensor::from_op(shape, data, Op::Concat(parts.to_vec(), axis)))
    }

    /// The slice `[start, start+len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        check_axis(self, axis, "narrow")?;
        let (outer, n, inner) = split_axis(self.shape(), axis);
        if start + len > n {
            return Err(Error::shape(
                "narrow",
                format!("range {start}..{} exceeds axis {axis} of {:?}", start + len, self.shape()),
            ));
        }
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            data.extend_from_slice(&self.data()[base..base + len * inner]);
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        Ok(Tensor::from_op(shape, data, Op::Narrow(self.clone(), axis, start)))
    }

    /// Selects rows (entries along axis 0) by index; indices may repeat.
    pub fn gather_rows(&self, indices: &[usize]) -> Result<Tensor> {
        if self.rank() == 0 {
            return Err(Error::shape("gather_rows", "cannot gather from a scalar"));
        }
        let n = self.shape()[0];
        let row = self.numel() / n.max(1);
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::shape("gather_rows", format!("index {bad} out of range for {n} rows")));
        }
        let mut data = Vec::with_capacity(indices.len() * row);
        for &i in indices {
            data.extend_from_slice(&self.data()[i * row..(i + 1) * row]);
        }
        let mut shape = self.shape().to_vec();
        shape[0] = indices.len();
        Ok(Tensor::from_op(shape, data, Op::Gather(self.clone(), indices.to_vec())))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != self.numel() {
            return Err(Error::shape("reshape", format!("{:?} to {shape:?}", self.shape())));
        }
        Ok(Tensor::from_op(shape.to_vec(), self.data().to_vec(), Op::Reshape(self.clone())))
    }

    /// Samples a `C×h×w` map at `P×2` image-space `(x, y)` positions.
    ///
    /// Positions map into the grid as `f = (x + 0.5)·scale − 0.5` and are
    /// interpolated from the four surrounding cells, clamped at the edges.
    /// The result is `P×C` and differentiable in both the map and the positions.
    pub fn bilinear_sample(&self, coords: &Tensor, scale: f64) -> Result<Tensor> {
        let (c, h, w) = self.dims3("bilinear_sample")?;
        let (p, two) = coords.dims2("bilinear_sample")?;
        if two != 2 {
            return Err(Error::shape("bilinear_sample", format!("coords must be P×2, got {:?}", coords.shape())));
        }
        let f = self.data();
        let mut data = vec![0.0; p * c];
        for (i, xy) in coords.data().chunks_exact(2).enumerate() {
            let t = BilinearTap::new(xy[0], xy[1], scale, w, h);
            for ch in 0..c {
                data[i * c + ch] = t.interpolate(&f[ch * h * w..(ch + 1) * h * w], w);
            }
        }
        Ok(Tensor::from_op(
            vec![p, c],
            data,
            Op::Bilinear {
                fmap: self.clone(),
                coords: coords.clone(),
                scale,
            },
        ))
    }

    /// Bilinear upsampling of a `C×h×w` tensor by an integer factor (align-corners false).
    pub fn upsample_bilinear(&self, factor: usize) -> Result<Tensor> {
        let (c, h, w) = self.dims3("upsample_bilinear")?;
        if factor == 0 {
            return Err(Error::invalid("upsample factor must be ≥ 1"));
        }
        let ty = kernels::upsample_taps(h, factor);
        let tx = kernels::upsample_taps(w, factor);
        let (ho, wo) = (h * factor, w * factor);
        let x = self.data();
        let mut data = vec![0.0; c * ho * wo];
        for ch in 0..c {
            let plane = &x[ch * h * w..(ch + 1) * h * w];
            for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                    let top = (1.0 - fx) * plane[y0 * w + x0] + fx * plane[y0 * w + x1];
                    let bot = (1.0 - fx) * plane[y1 * w + x0] + fx * plane[y1 * w + x1];
                    data[ch * ho * wo + oy * wo + ox] = (1.0 - fy) * top + fy * bot;
                }
            }
        }
        Ok(Tensor::from_op(vec![c, ho, wo], data, Op::Upsample(self.clone(), factor)))
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Interpolation cell and weights for one sampling position.
pub(crate) struct BilinearTap {
    pub x0: usize,
    pub x1: usize,
    pub y0: usize,
    pub y1: usize,
    pub fx: f64,
    pub fy: f64,
}

impl BilinearTap {
    pub fn new(x: f64, y: f64, scale: f64, w: usize, h: usize) -> Self {
        let u = (x + 0.5) * scale - 0.5;
        let v = (y + 0.5) * scale - 0.5;
        let (x0, x1, fx) = Self::axis(u, w);
        let (y0, y1, fy) = Self::axis(v, h);
        Self { x0, x1, y0, y1, fx, fy }
    }

    fn axis(u: f64, n: usize) -> (usize, usize, f64) {
        let base = u.floor();
        let frac = u - base;
        let clamp = |i: f64| i.clamp(0.0, (n - 1) as f64) as usize;
        (clamp(base), clamp(base + 1.0), frac)
    }

    pub fn interpolate(&self, plane: &[f64], w: usize) -> f64 {
        let top = (1.0 - self.fx) * plane[self.y0 * w + self.x0] + self.fx * plane[self.y0 * w + self.x1];
        let bot = (1.0 - self.fx) * plane[self.y1 * w + self.x0] + self.fx * plane[self.y1 * w + self.x1];
        (1.0 - self.fy) * top + self.fy * bot
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_and_zero() {
        let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let eye = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(eye.matmul(&a).unwrap().data(), a.data());
        let z = Tensor::zeros(&[2, 2]);
        assert!(z.matmul(&a).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_small_product() {
        let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = t(&[2, 1], &[1.0, 1.0]);
        assert_eq!(a.matmul(&b).unwrap().data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_mismatch_names_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        let msg = a.matmul(&b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn conv_output_size_formula() {
        let p = Conv2dParams {
            stride: 1,
            dilation: 2,
            padding: 2,
        };
        assert_eq!(conv_output_dim(32, 3, p), Some(32));
        let s2 = Conv2dParams {
            stride: 2,
            dilation: 1,
            padding: 1,
        };
        assert_eq!(conv_output_dim(64, 3, s2), Some(32));
        assert_eq!(conv_output_dim(1, 5, Conv2dParams::default()), None);
    }

    #[test]
    fn conv_pointwise_scaling() {
        let x = t(&[1, 2, 2], &[1.0, -2.0, 3.5, 0.25]);
        let k = t(&[1, 1, 1, 1], &[2.0]);
        let y = x.conv2d(&k, Conv2dParams::default()).unwrap();
        assert_eq!(y.data(), &[2.0, -4.0, 7.0, 0.5]);
    }

    #[test]
    fn conv_rejects_empty_output_and_even_kernels() {
        let x = Tensor::zeros(&[1, 2, 2]);
        assert!(x.conv2d(&Tensor::zeros(&[1, 1, 3, 3]), Conv2dParams::default()).is_err());
        assert!(x.conv2d(&Tensor::zeros(&[1, 1, 2, 2]), Conv2dParams::default()).is_err());
    }

    #[test]
    fn softmax_closed_forms() {
        let u = t(&[4], &[0.7; 4]).softmax(0).unwrap();
        assert!(u.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
        let s = t(&[2], &[0.0, 3f64.ln()]).softmax(0).unwrap();
        assert!((s.data()[0] - 0.25).abs() < 1e-15 && (s.data()[1] - 0.75).abs() < 1e-15);
        let x = t(&[2, 3], &[1.0, 2.0, 3.0, -1.0, 0.0, 5.0]);
        let shifted = x.add_scalar(100.0);
        let a = x.softmax(1).unwrap();
        let b = shifted.softmax(1).unwrap();
        for (p, q) in a.data().iter().zip(b.data()) {
            assert!((p - q).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_rejects_nan() {
        assert!(t(&[2], &[0.0, f64::NAN]).softmax(0).is_err());
    }

    #[test]
    fn softmax_middle_axis_normalizes_each_fiber() {
        let x = Tensor::new(&[2, 3, 4], (0..24).map(|v| (v as f64 * 0.37).sin() * 3.0).collect()).unwrap();
        let y = x.softmax(1).unwrap();
        for o in 0..2 {
            for i in 0..4 {
                let s: f64 = (0..3).map(|a| y.data()[(o * 3 + a) * 4 + i]).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn concat_and_narrow_are_inverse() {
        let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = t(&[2, 1], &[9.0, 8.0]);
        let c = Tensor::concat(&[a.clone(), b.clone()], 1).unwrap();
        assert_eq!(c.data(), &[1.0, 2.0, 9.0, 3.0, 4.0, 8.0]);
        assert_eq!(c.narrow(1, 0, 2).unwrap().data(), a.data());
        assert_eq!(c.narrow(1, 2, 1).unwrap().data(), b.data());
        assert!(c.narrow(1, 2, 2).is_err());
    }

    #[test]
    fn gather_rejects_out_of_range() {
        let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(a.gather_rows(&[1, 1, 0]).unwrap().data(), &[3.0, 4.0, 3.0, 4.0, 1.0, 2.0]);
        assert!(a.gather_rows(&[2]).is_err());
    }

    #[test]
    fn max_axis_picks_first_of_ties() {
        let a = t(&[3, 2], &[1.0, 5.0, 4.0, 5.0, 4.0, 0.0]);
        let m = a.max_axis(0).unwrap();
        assert_eq!(m.data(), &[4.0, 5.0]);
        match m.op() {
            None => {}
            Some(_) => panic!("constant input must not record"),
        }
    }

    #[test]
    fn upsample_keeps_constants_constant() {
        let x = Tensor::full(&[2, 3, 3], 0.3);
        let y = x.upsample_bilinear(8).unwrap();
        assert_eq!(y.shape(), &[2, 24, 24]);
        assert!(y.data().iter().all(|&v| (v - 0.3).abs() < 1e-15));
    }

    #[test]
    fn sigmoid_is_stable_for_large_inputs() {
        assert_eq!(sigmoid(1000.0), 1.0);
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-16);
    }
}
