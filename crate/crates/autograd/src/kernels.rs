//! Forward and backward kernels on plain tensors. The graph in `var.rs`
//! wires these together; nothing here knows about gradients tracking.

use crate::float::{matmul, Mat};
use crate::{Float, Tensor};

/// Geometry of a square-kernel 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeom {
    pub fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        assert!(kernel > 0 && stride > 0, "kernel and stride must be positive");
        Self { kernel, stride, padding }
    }

    /// Output extent of a convolution over an input of length `len`.
    pub fn conv_out(&self, len: usize) -> usize {
        let padded = len + 2 * self.padding;
        assert!(
            padded >= self.kernel,
            "input extent {len} too small for kernel {} with padding {}",
            self.kernel,
            self.padding
        );
        (padded - self.kernel) / self.stride + 1
    }

    /// Output extent of a transposed convolution over an input of length `len`.
    pub fn conv_transpose_out(&self, len: usize) -> usize {
        let full = (len - 1) * self.stride + self.kernel;
        assert!(full > 2 * self.padding, "transposed convolution output would be empty");
        full - 2 * self.padding
    }
}

/// Unfold one `c x h x w` image into a `(c*k*k) x (oh*ow)` column matrix.
#[allow(clippy::too_many_arguments)]
fn im2col<T: Float>(
    src: &[T],
    c: usize,
    h: usize,
    w: usize,
    g: ConvGeom,
    oh: usize,
    ow: usize,
    col: &mut [T],
) {
    let k = g.kernel;
    let p = oh * ow;
    for ci in 0..c {
        let plane = &src[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * p;
                let dst = &mut col[row..row + p];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    let out_row = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        out_row.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, v) in out_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        *v = if ix < 0 || ix >= w as isize { T::zero() } else { src_row[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add columns back into a `c x h x w` image.
#[allow(clippy::too_many_arguments)]
fn col2im<T: Float>(
    col: &[T],
    c: usize,
    h: usize,
    w: usize,
    g: ConvGeom,
    oh: usize,
    ow: usize,
    dst: &mut [T],
) {
    let k = g.kernel;
    let p = oh * ow;
    for ci in 0..c {
        let plane = &mut dst[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * p;
                let src = &col[row..row + p];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        if ix >= 0 && ix < w as isize {
                            dst_row[ix as usize] = dst_row[ix as usize] + src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

fn add_channel_bias<T: Float>(out: &mut [T], bias: &[T], plane: usize) {
    for (co, &b) in bias.iter().enumerate() {
        for v in &mut out[co * plane..(co + 1) * plane] {
            *v = *v + b;
        }
    }
}

fn accumulate_channel_bias_grad<T: Float>(grad: &[T], gb: &mut [T], plane: usize) {
    for (co, acc) in gb.iter_mut().enumerate() {
        let s: T = grad[co * plane..(co + 1) * plane].iter().copied().sum();
        *acc = *acc + s;
    }
}

/// `x: (n, cin, h, w)`, `weight: (cout, cin, k, k)`, `bias: (cout)`.
pub fn conv2d<T: Float>(x: &Tensor<T>, weight: &Tensor<T>, bias: Option<&Tensor<T>>, g: ConvGeom) -> Tensor<T> {
    let (n, cin, h, w) = x.dims4();
    let (cout, wcin, kh, kw) = weight.dims4();
    assert_eq!(cin, wcin, "conv2d channel mismatch");
    assert!(kh == g.kernel && kw == g.kernel, "conv2d kernel size mismatch");
    let (oh, ow) = (g.conv_out(h), g.conv_out(w));
    let p = oh * ow;
    let kk = cin * g.kernel * g.kernel;
    let mut out = Tensor::zeros([n, cout, oh, ow]);
    let mut col = vec![T::zero(); kk * p];
    for b in 0..n {
        im2col(x.batch_slice(b), cin, h, w, g, oh, ow, &mut col);
        let dst = &mut out.data_mut()[b * cout * p..(b + 1) * cout * p];
        matmul(Mat::new(weight.data(), cout, kk), Mat::new(&col, kk, p), dst, false);
        if let Some(bias) = bias {
            add_channel_bias(dst, bias.data(), p);
        }
    }
    out
}

/// Gradients of [`conv2d`] with respect to input, weight and bias.
pub fn conv2d_backward<T: Float>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    grad: &Tensor<T>,
    g: ConvGeom,
    need_input: bool,
) -> (Option<Tensor<T>>, Tensor<T>, Tensor<T>) {
    let (n, cin, h, w) = x.dims4();
    let (cout, _, _, _) = weight.dims4();
    let (_, _, oh, ow) = grad.dims4();
    let p = oh * ow;
    let kk = cin * g.kernel * g.kernel;
    let mut gw = Tensor::zeros(weight.shape().to_vec());
    let mut gb = Tensor::zeros([cout]);
    let mut gx = need_input.then(|| Tensor::zeros(x.shape().to_vec()));
    let mut col = vec![T::zero(); kk * p];
    for b in 0..n {
        let gslice = grad.batch_slice(b);
        im2col(x.batch_slice(b), cin, h, w, g, oh, ow, &mut col);
        // gW += G (cout x p) * col^T (p x kk)
        matmul(Mat::new(gslice, cout, p), Mat::transposed(&col, p, kk), gw.data_mut(), true);
        accumulate_channel_bias_grad(gslice, gb.data_mut(), p);
        if let Some(gx) = gx.as_mut() {
            // gcol = W^T (kk x cout) * G (cout x p)
            matmul(Mat::transposed(weight.data(), kk, cout), Mat::new(gslice, cout, p), &mut col, false);
            let dst = &mut gx.data_mut()[b * cin * h * w..(b + 1) * cin * h * w];
            col2im(&col, cin, h, w, g, oh, ow, dst);
        }
    }
    (gx, gw, gb)
}

/// `x: (n, cin, h, w)`, `weight: (cin, cout, k, k)`, `bias: (cout)`.
pub fn conv_transpose2d<T: Float>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    g: ConvGeom,
) -> Tensor<T> {
    let (n, cin, h, w) = x.dims4();
    let (wcin, cout, kh, kw) = weight.dims4();
    assert_eq!(cin, wcin, "conv_transpose2d channel mismatch");
    assert!(kh == g.kernel && kw == g.kernel, "conv_transpose2d kernel size mismatch");
    let (oh, ow) = (g.conv_transpose_out(h), g.conv_transpose_out(w));
    let pin = h * w;
    let kk = cout * g.kernel * g.kernel;
    let mut out = Tensor::zeros([n, cout, oh, ow]);
    let mut col = vec![T::zero(); kk * pin];
    for b in 0..n {
        // col = W^T (kk x cin) * x (cin x pin)
        matmul(Mat::transposed(weight.data(), kk, cin), Mat::new(x.batch_slice(b), cin, pin), &mut col, false);
        let dst = &mut out.data_mut()[b * cout * oh * ow..(b + 1) * cout * oh * ow];
        col2im(&col, cout, oh, ow, g, h, w, dst);
        if let Some(bias) = bias {
            add_channel_bias(dst, bias.data(), oh * ow);
        }
    }
    out
}

/// Gradients of [`conv_transpose2d`] with respect to input, weight and bias.
pub fn conv_transpose2d_backward<T: Float>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    grad: &Tensor<T>,
    g: ConvGeom,
    need_input: bool,
) -> (Option<Tensor<T>>, Tensor<T>, Tensor<T>) {
    let (n, cin, h, w) = x.dims4();
    let (_, cout, _, _) = weight.dims4();
    let (_, _, oh, ow) = grad.dims4();
    let pin = h * w;
    let kk = cout * g.kernel * g.kernel;
    let mut gw = Tensor::zeros(weight.shape().to_vec());
    let mut gb = Tensor::zeros([cout]);
    let mut gx = need_input.then(|| Tensor::zeros(x.shape().to_vec()));
    let mut col = vec![T::zero(); kk * pin];
    for b in 0..n {
        let gslice = grad.batch_slice(b);
        im2col(gslice, cout, oh, ow, g, h, w, &mut col);
        // gW += x (cin x pin) * gcol^T (pin x kk)
        matmul(Mat::new(x.batch_slice(b), cin, pin), Mat::transposed(&col, pin, kk), gw.data_mut(), true);
        accumulate_channel_bias_grad(gslice, gb.data_mut(), oh * ow);
        if let Some(gx) = gx.as_mut() {
            let dst = &mut gx.data_mut()[b * cin * pin..(b + 1) * cin * pin];
            matmul(Mat::new(weight.data(), cin, kk), Mat::new(&col, kk, pin), dst, false);
        }
    }
    (gx, gw, gb)
}

/// `x: (n, in)`, `weight: (out, in)`, `bias: (out)` giving `(n, out)`.
pub fn linear<T: Float>(x: &Tensor<T>, weight: &Tensor<T>, bias: Option<&Tensor<T>>) -> Tensor<T> {
    let (n, fin) = x.dims2();
    let (fout, wfin) = weight.dims2();
    assert_eq!(fin, wfin, "linear feature mismatch");
    let mut out = Tensor::zeros([n, fout]);
    matmul(Mat::new(x.data(), n, fin), Mat::transposed(weight.data(), fin, fout), out.data_mut(), false);
    if let Some(bias) = bias {
        for row in out.data_mut().chunks_mut(fout) {
            for (v, &b) in row.iter_mut().zip(bias.data()) {
                *v = *v + b;
            }
        }
    }
    out
}

pub fn linear_backward<T: Float>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    grad: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (n, fin) = x.dims2();
    let (fout, _) = weight.dims2();
    let mut gx = Tensor::zeros([n, fin]);
    matmul(Mat::new(grad.data(), n, fout), Mat::new(weight.data(), fout, fin), gx.data_mut(), false);
    let mut gw = Tensor::zeros([fout, fin]);
    matmul(Mat::transposed(grad.data(), fout, n), Mat::new(x.data(), n, fin), gw.data_mut(), false);
    let mut gb = Tensor::zeros([fout]);
    for row in grad.data().chunks(fout) {
        for (acc, &v) in gb.data_mut().iter_mut().zip(row) {
            *acc = *acc + v;
        }
    }
    (gx, gw, gb)
}

/// Separable linear resampling of every plane: `out = rows * plane * cols^T`.
///
/// `rows: (oh, h)`, `cols: (ow, w)`.
pub fn resample<T: Float>(x: &Tensor<T>, rows: &Tensor<T>, cols: &Tensor<T>) -> Tensor<T> {
    let (n, c, h, w) = x.dims4();
    let (oh, rh) = rows.dims2();
    let (ow, cw) = cols.dims2();
    assert!(rh == h && cw == w, "resample matrices do not match input {h}x{w}");
    let mut out = Tensor::zeros([n, c, oh, ow]);
    let mut tmp = vec![T::zero(); h * ow];
    for (src, dst) in x.data().chunks(h * w).zip(out.data_mut().chunks_mut(oh * ow)) {
        matmul(Mat::new(src, h, w), Mat::transposed(cols.data(), w, ow), &mut tmp, false);
        matmul(Mat::new(rows.data(), oh, h), Mat::new(&tmp, h, ow), dst, false);
    }
    out
}

pub fn resample_backward<T: Float>(grad: &Tensor<T>, rows: &Tensor<T>, cols: &Tensor<T>) -> Tensor<T> {
    let (n, c, oh, ow) = grad.dims4();
    let (_, h) = rows.dims2();
    let (_, w) = cols.dims2();
    let mut out = Tensor::zeros([n, c, h, w]);
    let mut tmp = vec![T::zero(); oh * w];
    for (src, dst) in grad.data().chunks(oh * ow).zip(out.data_mut().chunks_mut(h * w)) {
        matmul(Mat::new(src, oh, ow), Mat::new(cols.data(), ow, w), &mut tmp, false);
        matmul(Mat::transposed(rows.data(), h, oh), Mat::new(&tmp, oh, w), dst, false);
    }
    out
}

/// Non-overlapping 2x2 average pooling; odd trailing rows/columns are dropped.
pub fn avg_pool2<T: Float>(x: &Tensor<T>) -> Tensor<T> {
    let (n, c, h, w) = x.dims4();
    let (oh, ow) = (h / 2, w / 2);
    assert!(oh > 0 && ow > 0, "avg_pool2 on {h}x{w} input");
    let quarter = T::from_f64(0.25);
    let mut out = Tensor::zeros([n, c, oh, ow]);
    for (src, dst) in x.data().chunks(h * w).zip(out.data_mut().chunks_mut(oh * ow)) {
        for oy in 0..oh {
            for ox in 0..ow {
                let (y, x0) = (2 * oy, 2 * ox);
                let s = src[y * w + x0] + src[y * w + x0 + 1] + src[(y + 1) * w + x0] + src[(y + 1) * w + x0 + 1];
                dst[oy * ow + ox] = s * quarter;
            }
        }
    }
    out
}

pub fn avg_pool2_backward<T: Float>(grad: &Tensor<T>, input_shape: &[usize]) -> Tensor<T> {
    let (_, _, oh, ow) = grad.dims4();
    let (h, w) = (input_shape[2], input_shape[3]);
    let quarter = T::from_f64(0.25);
    let mut out = Tensor::zeros(input_shape.to_vec());
    for (src, dst) in grad.data().chunks(oh * ow).zip(out.data_mut().chunks_mut(h * w)) {
        for oy in 0..oh {
            for ox in 0..ow {
                let v = src[oy * ow + ox] * quarter;
                let (y, x0) = (2 * oy, 2 * ox);
                dst[y * w + x0] = v;
                dst[y * w + x0 + 1] = v;
                dst[(y + 1) * w + x0] = v;
                dst[(y + 1) * w + x0 + 1] = v;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct nested-loop convolution used as a reference.
    fn conv_ref(x: &Tensor<f64>, wt: &Tensor<f64>, g: ConvGeom) -> Tensor<f64> {
        let (n, cin, h, w) = x.dims4();
        let (cout, _, k, _) = wt.dims4();
        let (oh, ow) = (g.conv_out(h), g.conv_out(w));
        let mut out = Tensor::zeros([n, cout, oh, ow]);
        for b in 0..n {
            for co in 0..cout {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut s = 0.0;
                        for ci in 0..cin {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                                    let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                        s += x.data()[((b * cin + ci) * h + iy as usize) * w + ix as usize]
                                            * wt.data()[((co * cin + ci) * k + ky) * k + kx];
                                    }
                                }
                            }
                        }
                        out.data_mut()[((b * cout + co) * oh + oy) * ow + ox] = s;
                    }
                }
            }
        }
        out
    }

    fn ramp(shape: [usize; 4], scale: f64) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        Tensor::new(shape, (0..n).map(|i| ((i * 7919 % 101) as f64 / 101.0 - 0.5) * scale).collect())
    }

    #[test]
    fn conv2d_matches_direct_loops() {
        for &(k, s, p) in &[(3, 1, 1), (4, 2, 1), (4, 4, 0), (6, 4, 1)] {
            let g = ConvGeom::new(k, s, p);
            let x = ramp([2, 3, 16, 12], 1.0);
            let wt = ramp([5, 3, k, k], 0.3);
            let got = conv2d(&x, &wt, None, g);
            let want = conv_ref(&x, &wt, g);
            assert_eq!(got.shape(), want.shape());
            for (a, b) in got.data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn transpose_is_adjoint_of_conv() {
        // <conv(x), y> == <x, convT(y)> with the same weights viewed as (cin, cout).
        let g = ConvGeom::new(6, 4, 1);
        let x = ramp([1, 2, 16, 16], 1.0);
        let wt = ramp([3, 2, 6, 6], 0.5); // conv weight (cout=3, cin=2)
        let y = conv2d(&x, &wt, None, g);
        let yy = ramp(y.shape().try_into().unwrap(), 2.0);
        // For convT, weight layout is (cin_T, cout_T, k, k) = (3, 2, k, k): same buffer.
        let xt = conv_transpose2d(&yy, &wt, None, g);
        assert_eq!(xt.shape(), x.shape());
        let lhs: f64 = y.data().iter().zip(yy.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(xt.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0));
    }

    #[test]
    fn transposed_geometry_multiplies_by_four() {
        let g = ConvGeom::new(6, 4, 1);
        assert_eq!(g.conv_transpose_out(2), 8);
        assert_eq!(g.conv_transpose_out(8), 32);
    }
}
