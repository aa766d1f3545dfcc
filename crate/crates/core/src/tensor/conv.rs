//! 2-D cross-correlation over power banks.
//!
//! The general kernel computes `y = b + Σ_q W_q ⋆ x^q` for `q = 1..=Q`, where
//! `x^q` is an elementwise power. A plain convolution is the `Q = 1` case and
//! goes through exactly the same code, so the two can never drift apart.
//!
//! Two algorithms share that contract:
//! * [`ConvAlgo::Direct`] is the reference nested-loop path. Each output
//!   element starts from its bias and accumulates over `(q, c, u, v)` in that
//!   order.
//! * [`ConvAlgo::Im2col`] unrolls tiles of output rows into a patch matrix and
//!   hands the products to a GEMM. Its reduction order differs, so results agree
//!   with the direct path only to rounding.

use serde::{Deserialize, Serialize};

use super::{Scalar, Shape, Tensor};
use crate::error::{Error, Result};

/// Upper bound on the number of elements in one im2col tile.
const TILE_ELEMS: usize = 1 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConvSpec {
    pub kernel_h: usize,
    pub kernel_w: usize,
    /// Zero padding applied on every side.
    pub padding: usize,
    pub stride: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl ConvSpec {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        padding: usize,
        stride: usize,
    ) -> Result<Self> {
        let spec = ConvSpec {
            kernel_h,
            kernel_w,
            padding,
            stride,
            in_channels,
            out_channels,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Stride-1 square kernel with padding `k / 2`, which preserves the spatial
    /// extent. `k` must be odd.
    pub fn same(in_channels: usize, out_channels: usize, kernel: usize) -> Result<Self> {
        if kernel.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "same padding needs an odd kernel, got {kernel}"
            )));
        }
        Self::new(in_channels, out_channels, kernel, kernel, kernel / 2, 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_h == 0 || self.kernel_w == 0 {
            return Err(Error::invalid("kernel extents must be positive"));
        }
        if self.stride == 0 {
            return Err(Error::invalid("stride must be positive"));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::invalid("channel counts must be positive"));
        }
        Ok(())
    }

    pub fn weight_shape(&self) -> Shape {
        Shape::new(
            self.out_channels,
            self.in_channels,
            self.kernel_h,
            self.kernel_w,
        )
    }

    pub fn bias_shape(&self) -> Shape {
        Shape::new(self.out_channels, 1, 1, 1)
    }

    /// Number of weights feeding one output element.
    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    pub fn output_extent(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let extent = |input: usize, kernel: usize, axis: &str| {
            let padded = input + 2 * self.padding;
            if padded < kernel {
                return Err(Error::shape(format!(
                    "{axis}: padded input {padded} is smaller than kernel {kernel}"
                )));
            }
            let span = padded - kernel;
            if !span.is_multiple_of(self.stride) {
                return Err(Error::shape(format!(
                    "{axis}: ({input} + 2*{} - {kernel}) is not divisible by stride {}",
                    self.padding, self.stride
                )));
            }
            Ok(span / self.stride + 1)
        };
        Ok((
            extent(h, self.kernel_h, "height")?,
            extent(w, self.kernel_w, "width")?,
        ))
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        if input.c != self.in_channels {
            return Err(Error::shape(format!(
                "input has {} channels, convolution expects {}",
                input.c, self.in_channels
            )));
        }
        let (h, w) = self.output_extent(input.h, input.w)?;
        Ok(Shape::new(input.n, self.out_channels, h, w))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConvAlgo {
    /// Nested loops; the numerical reference.
    #[default]
    Direct,
    /// Patch matrix + GEMM.
    Im2col,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvGrads<T> {
    pub grad_x: Tensor<T>,
    pub grad_w: Tensor<T>,
    pub grad_b: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PowerConvGrads<T> {
    /// `None` when the caller did not ask for the input gradient.
    pub grad_x: Option<Tensor<T>>,
    /// One gradient per power bank, in bank order.
    pub grad_weights: Vec<Tensor<T>>,
    pub grad_bias: Tensor<T>,
}

pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    conv2d_forward_with(T::DEFAULT_CONV, x, w, b, spec)
}

pub fn conv2d_forward_with<T: Scalar>(
    algo: ConvAlgo,
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    power_conv2d_forward(algo, x, std::slice::from_ref(w), b, spec)
}

pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    spec: &ConvSpec,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    conv2d_backward_with(T::DEFAULT_CONV, x, w, spec, grad_out)
}

pub fn conv2d_backward_with<T: Scalar>(
    algo: ConvAlgo,
    x: &Tensor<T>,
    w: &Tensor<T>,
    spec: &ConvSpec,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let g = power_conv2d_backward(algo, x, std::slice::from_ref(w), spec, grad_out, true)?;
    Ok(ConvGrads {
        grad_x: g.grad_x.expect("input gradient requested"),
        grad_w: g.grad_weights.into_iter().next().expect("one bank"),
        grad_b: g.grad_bias,
    })
}

fn check_banks<T: Scalar>(x: &Tensor<T>, banks: &[Tensor<T>], spec: &ConvSpec) -> Result<Shape> {
    spec.validate()?;
    if banks.is_empty() {
        return Err(Error::invalid("at least one weight bank is required"));
    }
    let wshape = spec.weight_shape();
    for (i, bank) in banks.iter().enumerate() {
        if bank.shape() != wshape {
            return Err(Error::shape(format!(
                "weight bank {} has shape {}, expected {wshape}",
                i + 1,
                bank.shape()
            )));
        }
    }
    spec.output_shape(x.shape())
}

/// `b + Σ_q banks[q-1] ⋆ x^q`.
pub fn power_conv2d_forward<T: Scalar>(
    algo: ConvAlgo,
    x: &Tensor<T>,
    banks: &[Tensor<T>],
    bias: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let out_shape = check_banks(x, banks, spec)?;
    bias.expect_shape(spec.bias_shape(), "bias")?;
    Ok(match algo {
        ConvAlgo::Direct => direct_forward(x, banks, bias.data(), spec, out_shape),
        ConvAlgo::Im2col => im2col_forward(x, banks, bias.data(), spec, out_shape),
    })
}

pub fn power_conv2d_backward<T: Scalar>(
    algo: ConvAlgo,
    x: &Tensor<T>,
    banks: &[Tensor<T>],
    spec: &ConvSpec,
    grad_out: &Tensor<T>,
    want_input_grad: bool,
) -> Result<PowerConvGrads<T>> {
    let out_shape = check_banks(x, banks, spec)?;
    grad_out.expect_shape(out_shape, "grad_out")?;
    Ok(match algo {
        ConvAlgo::Direct => direct_backward(x, banks, spec, grad_out, want_input_grad),
        ConvAlgo::Im2col => im2col_backward(x, banks, spec, grad_out, want_input_grad),
    })
}

/// `[x, x^2, ..., x^q]`, each power by one more multiplication by `x`.
fn powers<T: Scalar>(x: &Tensor<T>, q: usize) -> Vec<Tensor<T>> {
    let mut out = Vec::with_capacity(q);
    out.push(x.clone());
    for _ in 1..q {
        let prev = out.last().expect("non-empty");
        let mut next = prev.clone();
        for (a, &b) in next.data_mut().iter_mut().zip(x.data()) {
            *a *= b;
        }
        out.push(next);
    }
    out
}

/// Input coordinate for output coordinate `o` and kernel tap `k`, if it lands
/// inside the unpadded input.
#[inline]
fn source(o: usize, k: usize, spec: &ConvSpec, extent: usize) -> Option<usize> {
    let pos = (o * spec.stride + k) as isize - spec.padding as isize;
    (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
}

fn direct_forward<T: Scalar>(
    x: &Tensor<T>,
    banks: &[Tensor<T>],
    bias: &[T],
    spec: &ConvSpec,
    out_shape: Shape,
) -> Tensor<T> {
    let xs = x.shape();
    let pows = powers(x, banks.len());
    let mut out = Tensor::zeros(out_shape);
    let (kh, kw) = (spec.kernel_h, spec.kernel_w);
    let ws = spec.weight_shape();
    let od = out.data_mut();
    let mut idx = 0;
    for n in 0..out_shape.n {
        for o in 0..out_shape.c {
            for i in 0..out_shape.h {
                for j in 0..out_shape.w {
                    let mut acc = bias[o];
                    for (bank, p) in banks.iter().zip(&pows) {
                        let wd = bank.data();
                        let pd = p.data();
                        for c in 0..xs.c {
                            for u in 0..kh {
                                let Some(iy) = source(i, u, spec, xs.h) else {
                                    continue;
                                };
                                for v in 0..kw {
                                    let Some(ix) = source(j, v, spec, xs.w) else {
                                        continue;
                                    };
                                    acc += wd[ws.index(o, c, u, v)] * pd[xs.index(n, c, iy, ix)];
                                }
                            }
                        }
                    }
                    od[idx] = acc;
                    idx += 1;
                }
            }
        }
    }
    out
}

fn direct_backward<T: Scalar>(
    x: &Tensor<T>,
    banks: &[Tensor<T>],
    spec: &ConvSpec,
    grad_out: &Tensor<T>,
    want_input_grad: bool,
) -> PowerConvGrads<T> {
    let xs = x.shape();
    let gs = grad_out.shape();
    let ws = spec.weight_shape();
    let (kh, kw) = (spec.kernel_h, spec.kernel_w);
    let pows = powers(x, banks.len());
    let gd = grad_out.data();

    let mut grad_bias = Tensor::zeros(spec.bias_shape());
    {
        let gb = grad_bias.data_mut();
        for n in 0..gs.n {
            for (o, b) in gb.iter_mut().enumerate() {
                let start = gs.index(n, o, 0, 0);
                for &g in &gd[start..start + gs.plane()] {
                    *b += g;
                }
            }
        }
    }

    let mut grad_weights = Vec::with_capacity(banks.len());
    let mut grad_x = want_input_grad.then(|| Tensor::zeros(xs));
    for (qi, (bank, p)) in banks.iter().zip(&pows).enumerate() {
        let mut gw = Tensor::zeros(ws);
        let mut gxq = want_input_grad.then(|| Tensor::zeros(xs));
        {
            let gwd = gw.data_mut();
            let wd = bank.data();
            let pd = p.data();
            for n in 0..gs.n {
                for o in 0..gs.c {
                    for i in 0..gs.h {
                        for j in 0..gs.w {
                            let g = gd[gs.index(n, o, i, j)];
                            for c in 0..xs.c {
                                for u in 0..kh {
                                    let Some(iy) = source(i, u, spec, xs.h) else {
                                        continue;
                                    };
                                    for v in 0..kw {
                                        let Some(ix) = source(j, v, spec, xs.w) else {
                                            continue;
                                        };
                                        let wi = ws.index(o, c, u, v);
                                        let xi = xs.index(n, c, iy, ix);
                                        gwd[wi] += g * pd[xi];
                                        if let Some(gx) = gxq.as_mut() {
                                            gx.data_mut()[xi] += wd[wi] * g;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        grad_weights.push(gw);

        // d(x^q)/dx = q x^(q-1)
        if let (Some(total), Some(gxq)) = (grad_x.as_mut(), gxq) {
            let q = T::from_f64((qi + 1) as f64);
            let td = total.data_mut();
            if qi == 0 {
                for (t, &g) in td.iter_mut().zip(gxq.data()) {
                    *t += g;
                }
            } else {
                let prev = pows[qi - 1].data();
                for ((t, &g), &pv) in td.iter_mut().zip(gxq.data()).zip(prev) {
                    *t += q * pv * g;
                }
            }
        }
    }

    PowerConvGrads {
        grad_x,
        grad_weights,
        grad_bias,
    }
}

/// Output rows per im2col tile for a patch matrix with `k_rows` rows.
fn tile_rows(k_rows: usize, out_shape: Shape) -> usize {
    let per_row = k_rows * out_shape.w.max(1);
    (TILE_ELEMS / per_row).clamp(1, out_shape.h.max(1))
}

/// Range of output columns `j` whose tap `v` lands inside a row of width
/// `extent`.
#[inline]
fn valid_cols(v: usize, spec: &ConvSpec, extent: usize, out_w: usize) -> (usize, usize) {
    let s = spec.stride;
    let lo = spec.padding.saturating_sub(v).div_ceil(s);
    let hi = if extent + spec.padding > v {
        ((extent + spec.padding - v - 1) / s + 1).min(out_w)
    } else {
        0
    };
    (lo.min(hi), hi)
}

/// Unrolls output rows `r0..r0 + rows` of batch item `n` into `cols`, laid out
/// as `[patch_len, rows * w_out]` row-major. Out-of-image taps are zero.
fn im2col<T: Scalar>(
    x: &Tensor<T>,
    n: usize,
    spec: &ConvSpec,
    out_w: usize,
    r0: usize,
    rows: usize,
    cols: &mut [T],
) {
    let xs = x.shape();
    let xd = x.data();
    let tl = rows * out_w;
    for c in 0..xs.c {
        for u in 0..spec.kernel_h {
            for v in 0..spec.kernel_w {
                let row = (c * spec.kernel_h + u) * spec.kernel_w + v;
                let dst = &mut cols[row * tl..(row + 1) * tl];
                let (lo, hi) = valid_cols(v, spec, xs.w, out_w);
                for ri in 0..rows {
                    let seg = &mut dst[ri * out_w..(ri + 1) * out_w];
                    let Some(iy) = source(r0 + ri, u, spec, xs.h) else {
                        seg.fill(T::zero());
                        continue;
                    };
                    seg[..lo].fill(T::zero());
                    seg[hi..].fill(T::zero());
                    if lo < hi {
                        let base = xs.index(n, c, iy, 0) + lo * spec.stride + v - spec.padding;
                        if spec.stride == 1 {
                            seg[lo..hi].copy_from_slice(&xd[base..base + hi - lo]);
                        } else {
                            for (k, s) in seg[lo..hi].iter_mut().enumerate() {
                                *s = xd[base + k * spec.stride];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters patch-matrix gradients back onto the input.
fn col2im<T: Scalar>(
    dcols: &[T],
    n: usize,
    spec: &ConvSpec,
    out_w: usize,
    r0: usize,
    rows: usize,
    grad_x: &mut Tensor<T>,
) {
    let xs = grad_x.shape();
    let gd = grad_x.data_mut();
    let tl = rows * out_w;
    for c in 0..xs.c {
        for u in 0..spec.kernel_h {
            for v in 0..spec.kernel_w {
                let row = (c * spec.kernel_h + u) * spec.kernel_w + v;
                let src = &dcols[row * tl..(row + 1) * tl];
                let (lo, hi) = valid_cols(v, spec, xs.w, out_w);
                if lo >= hi {
                    continue;
                }
                for ri in 0..rows {
                    let Some(iy) = source(r0 + ri, u, spec, xs.h) else {
                        continue;
                    };
                    let base = xs.index(n, c, iy, 0) + lo * spec.stride + v - spec.padding;
                    let seg = &src[ri * out_w + lo..ri * out_w + hi];
                    for (k, &g) in seg.iter().enumerate() {
                        gd[base + k * spec.stride] += g;
                    }
                }
            }
        }
    }
}

/// Banks laid side by side as one `[out_channels, Q · patch_len]` matrix.
fn stack_banks<T: Scalar>(banks: &[Tensor<T>], spec: &ConvSpec) -> Vec<T> {
    let pl = spec.patch_len();
    let kk = banks.len() * pl;
    let mut w = vec![T::zero(); spec.out_channels * kk];
    for (qi, bank) in banks.iter().enumerate() {
        for o in 0..spec.out_channels {
            w[o * kk + qi * pl..o * kk + (qi + 1) * pl]
                .copy_from_slice(&bank.data()[o * pl..(o + 1) * pl]);
        }
    }
    w
}

/// Patch matrix of every power stacked along rows: block `q` holds the
/// unrolled `x^(q+1)`.
fn stacked_im2col<T: Scalar>(
    pows: &[Tensor<T>],
    n: usize,
    spec: &ConvSpec,
    out_w: usize,
    r0: usize,
    rows: usize,
    cols: &mut [T],
) {
    let block = spec.patch_len() * rows * out_w;
    for (p, dst) in pows.iter().zip(cols.chunks_exact_mut(block)) {
        im2col(p, n, spec, out_w, r0, rows, dst);
    }
}

fn im2col_forward<T: Scalar>(
    x: &Tensor<T>,
    banks: &[Tensor<T>],
    bias: &[T],
    spec: &ConvSpec,
    out_shape: Shape,
) -> Tensor<T> {
    let kk = banks.len() * spec.patch_len();
    let (ho, wo) = (out_shape.h, out_shape.w);
    let plane = ho * wo;
    let step = tile_rows(kk, out_shape);
    let mut out = Tensor::zeros(out_shape);
    for n in 0..out_shape.n {
        for (o, &b) in bias.iter().enumerate() {
            let start = out_shape.index(n, o, 0, 0);
            out.data_mut()[start..start + plane].fill(b);
        }
    }
    let pows = powers(x, banks.len());
    let w = stack_banks(banks, spec);
    let mut cols = vec![T::zero(); kk * step * wo];
    for n in 0..out_shape.n {
        for r0 in (0..ho).step_by(step) {
            let rows = step.min(ho - r0);
            let tl = rows * wo;
            let cols = &mut cols[..kk * tl];
            stacked_im2col(&pows, n, spec, wo, r0, rows, cols);
            let out_tile = &mut out.data_mut()[out_shape.index(n, 0, r0, 0)..];
            // SAFETY: w is [co, kk] row-major, cols is [kk, tl] row-major and
            // the destination tile spans co rows of stride `plane` starting at
            // (n, 0, r0, 0), each `tl` long, all inside `out`.
            unsafe {
                T::gemm(
                    spec.out_channels,
                    kk,
                    tl,
                    T::one(),
                    w.as_ptr(),
                    kk as isize,
                    1,
                    cols.as_ptr(),
                    tl as isize,
                    1,
                    T::one(),
                    out_tile.as_mut_ptr(),
                    plane as isize,
                    1,
                );
            }
        }
    }
    out
}

/// Row-major `[rows * w_out, Q · patch_len]` patch matrix of every power:
/// the transpose of [`stacked_im2col`].
fn stacked_im2row<T: Scalar>(
    pows: &[Tensor<T>],
    n: usize,
    spec: &ConvSpec,
    out_w: usize,
    r0: usize,
    rows: usize,
    buf: &mut [T],
) {
    let xs = pows[0].shape();
    let (kh, kw, s, pad) = (spec.kernel_h, spec.kernel_w, spec.stride, spec.padding);
    let pl = spec.patch_len();
    let kk = pows.len() * pl;
    for ri in 0..rows {
        for j in 0..out_w {
            let row = &mut buf[(ri * out_w + j) * kk..(ri * out_w + j + 1) * kk];
            let x0 = j * s;
            let v_lo = pad.saturating_sub(x0).min(kw);
            let v_hi = (xs.w + pad).saturating_sub(x0).min(kw).max(v_lo);
            for (qi, p) in pows.iter().enumerate() {
                let pd = p.data();
                for c in 0..xs.c {
                    for u in 0..kh {
                        let seg =
                            &mut row[qi * pl + (c * kh + u) * kw..qi * pl + (c * kh + u + 1) * kw];
                        let Some(iy) = source(r0 + ri, u, spec, xs.h) else {
                            seg.fill(T::zero());
                            continue;
                        };
                        seg[..v_lo].fill(T::zero());
                        seg[v_hi..].fill(T::zero());
                        if v_lo < v_hi {
                            let base = xs.index(n, c, iy, 0) + x0 + v_lo - pad;
                            seg[v_lo..v_hi].copy_from_slice(&pd[base..base + v_hi - v_lo]);
                        }
                    }
                }
            }
        }
    }
}

/// Gradient with respect to every power `x^q`, stacked as channels
/// `[N, Q · C_in, H, W]` (power-major), computed as a forward correlation of
/// `grad_out` with the flipped, transposed banks. Only valid for stride 1,
/// square kernels and `padding < kernel`.
fn power_input_grads_by_correlation<T: Scalar>(
    banks: &[Tensor<T>],
    spec: &ConvSpec,
    grad_out: &Tensor<T>,
    x_shape: Shape,
) -> Tensor<T> {
    let k = spec.kernel_h;
    let (ci, co, q) = (spec.in_channels, spec.out_channels, banks.len());
    let tspec = ConvSpec {
        kernel_h: k,
        kernel_w: k,
        padding: k - 1 - spec.padding,
        stride: 1,
        in_channels: co,
        out_channels: q * ci,
    };
    let mut flipped = Tensor::zeros(tspec.weight_shape());
    let fd = flipped.data_mut();
    for (qi, bank) in banks.iter().enumerate() {
        let bd = bank.data();
        for o in 0..co {
            for c in 0..ci {
                for u in 0..k {
                    for v in 0..k {
                        let src = ((o * ci + c) * k + u) * k + v;
                        let dst = (((qi * ci + c) * co + o) * k + (k - 1 - u)) * k + (k - 1 - v);
                        fd[dst] = bd[src];
                    }
                }
            }
        }
    }
    let out_shape = Shape::new(x_shape.n, q * ci, x_shape.h, x_shape.w);
    im2col_forward(
        grad_out,
        &[flipped],
        &vec![T::zero(); q * ci],
        &tspec,
        out_shape,
    )
}

fn im2col_backward<T: Scalar>(
    x: &Tensor<T>,
    banks: &[Tensor<T>],
    spec: &ConvSpec,
    grad_out: &Tensor<T>,
    want_input_grad: bool,
) -> PowerConvGrads<T> {
    let gs = grad_out.shape();
    let xs = x.shape();
    let q = banks.len();
    let pl = spec.patch_len();
    let kk = q * pl;
    let co = spec.out_channels;
    let (ho, wo) = (gs.h, gs.w);
    let plane = ho * wo;
    let step = tile_rows(kk, gs);
    let gd = grad_out.data();

    let mut grad_bias = Tensor::zeros(spec.bias_shape());
    for n in 0..gs.n {
        for (o, b) in grad_bias.data_mut().iter_mut().enumerate() {
            let start = gs.index(n, o, 0, 0);
            for &g in &gd[start..start + plane] {
                *b += g;
            }
        }
    }

    let pows = powers(x, q);
    let by_correlation =
        spec.stride == 1 && spec.kernel_h == spec.kernel_w && spec.padding < spec.kernel_h;
    let scatter = want_input_grad && !by_correlation;
    let w = if scatter {
        stack_banks(banks, spec)
    } else {
        Vec::new()
    };
    let mut gw = vec![T::zero(); co * kk];
    // Gradient with respect to each power x^q, before the chain rule.
    let mut gpow: Vec<Tensor<T>> = if scatter {
        (0..q).map(|_| Tensor::zeros(xs)).collect()
    } else {
        Vec::new()
    };
    let mut rows_buf = vec![T::zero(); kk * step * wo];
    let mut cols = vec![T::zero(); if scatter { kk * step * wo } else { 0 }];
    let mut dcols = vec![T::zero(); if scatter { kk * step * wo } else { 0 }];

    for n in 0..gs.n {
        for r0 in (0..ho).step_by(step) {
            let rows = step.min(ho - r0);
            let tl = rows * wo;
            let patches = &mut rows_buf[..kk * tl];
            stacked_im2row(&pows, n, spec, wo, r0, rows, patches);
            let gtile = &gd[gs.index(n, 0, r0, 0)..];

            // SAFETY: grad_out tile is [co, tl] with row stride `plane`;
            // patches is [tl, kk] row-major; gw is [co, kk].
            unsafe {
                T::gemm(
                    co,
                    tl,
                    kk,
                    T::one(),
                    gtile.as_ptr(),
                    plane as isize,
                    1,
                    patches.as_ptr(),
                    kk as isize,
                    1,
                    T::one(),
                    gw.as_mut_ptr(),
                    kk as isize,
                    1,
                );
            }
            if !scatter {
                continue;
            }
            let cols = &mut cols[..kk * tl];
            stacked_im2col(&pows, n, spec, wo, r0, rows, cols);
            let dcols = &mut dcols[..kk * tl];
            // SAFETY: w read transposed as [kk, co]; grad_out tile as above;
            // dcols is [kk, tl] row-major.
            unsafe {
                T::gemm(
                    kk,
                    co,
                    tl,
                    T::one(),
                    w.as_ptr(),
                    1,
                    kk as isize,
                    gtile.as_ptr(),
                    plane as isize,
                    1,
                    T::zero(),
                    dcols.as_mut_ptr(),
                    tl as isize,
                    1,
                );
            }
            for (block, g) in dcols.chunks_exact(pl * tl).zip(gpow.iter_mut()) {
                col2im(block, n, spec, wo, r0, rows, g);
            }
        }
    }

    let grad_weights = (0..q)
        .map(|qi| {
            let mut t = Tensor::zeros(spec.weight_shape());
            for o in 0..co {
                t.data_mut()[o * pl..(o + 1) * pl]
                    .copy_from_slice(&gw[o * kk + qi * pl..o * kk + (qi + 1) * pl]);
            }
            t
        })
        .collect();

    let grad_x = want_input_grad.then(|| {
        let stacked =
            by_correlation.then(|| power_input_grads_by_correlation(banks, spec, grad_out, xs));
        // Gradient with respect to x^(qi+1) for batch item n.
        let part = |qi: usize, n: usize| -> &[T] {
            let len = xs.item();
            match &stacked {
                Some(t) => &t.data()[(n * q + qi) * len..(n * q + qi + 1) * len],
                None => &gpow[qi].data()[n * len..(n + 1) * len],
            }
        };
        let mut gx = Tensor::zeros(xs);
        let len = xs.item();
        for n in 0..xs.n {
            let dst = &mut gx.data_mut()[n * len..(n + 1) * len];
            dst.copy_from_slice(part(0, n));
            for qi in 1..q {
                let k = T::from_f64((qi + 1) as f64);
                let p = &pows[qi - 1].data()[n * len..(n + 1) * len];
                for ((d, &g), &pv) in dst.iter_mut().zip(part(qi, n)).zip(p) {
                    *d += k * pv * g;
                }
            }
        }
        gx
    });

    PowerConvGrads {
        grad_x,
        grad_weights,
        grad_bias,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: Shape, f: impl Fn(usize) -> f64) -> Tensor<f64> {
        Tensor::from_vec(shape, (0..shape.len()).map(f).collect()).unwrap()
    }

    #[test]
    fn ones_kernel_sums_nine_ones() {
        let spec = ConvSpec::new(1, 1, 3, 3, 0, 1).unwrap();
        let x = Tensor::<f64>::full(Shape::new(1, 1, 3, 3), 1.0);
        let w = Tensor::full(spec.weight_shape(), 1.0);
        let b = Tensor::zeros(spec.bias_shape());
        for algo in [ConvAlgo::Direct, ConvAlgo::Im2col] {
            let y = conv2d_forward_with(algo, &x, &w, &b, &spec).unwrap();
            assert_eq!(y.shape(), Shape::new(1, 1, 1, 1));
            assert_eq!(y.data(), &[9.0]);
        }
    }

    #[test]
    fn zero_input_gives_bias() {
        let spec = ConvSpec::same(2, 3, 3).unwrap();
        let x = Tensor::<f32>::zeros(Shape::new(2, 2, 4, 5));
        let w = Tensor::full(spec.weight_shape(), 0.7);
        let b = Tensor::from_vec(spec.bias_shape(), vec![0.5, -1.0, 2.0]).unwrap();
        let y = conv2d_forward(&x, &w, &b, &spec).unwrap();
        for n in 0..2 {
            for o in 0..3 {
                for i in 0..4 {
                    for j in 0..5 {
                        assert_eq!(y.get(n, o, i, j), b.data()[o]);
                    }
                }
            }
        }
    }

    #[test]
    fn shape_errors() {
        let spec = ConvSpec::new(2, 1, 3, 3, 0, 1).unwrap();
        let b = Tensor::<f64>::zeros(spec.bias_shape());
        let w = Tensor::zeros(spec.weight_shape());
        let wrong_c = Tensor::zeros(Shape::new(1, 3, 5, 5));
        assert!(matches!(
            conv2d_forward(&wrong_c, &w, &b, &spec),
            Err(Error::Shape(_))
        ));
        let bad_w = Tensor::zeros(Shape::new(1, 2, 2, 3));
        let x = Tensor::zeros(Shape::new(1, 2, 5, 5));
        assert!(conv2d_forward(&x, &bad_w, &b, &spec).is_err());
        // (6 - 3) is not divisible by stride 2
        let strided = ConvSpec::new(2, 1, 3, 3, 0, 2).unwrap();
        let x6 = Tensor::zeros(Shape::new(1, 2, 6, 6));
        assert!(conv2d_forward(&x6, &w, &b, &strided).is_err());
        let small = Tensor::zeros(Shape::new(1, 2, 2, 2));
        assert!(conv2d_forward(&small, &w, &b, &spec).is_err());
        let y = conv2d_forward(&x, &w, &b, &spec).unwrap();
        let bad_grad = Tensor::zeros(Shape::new(1, 1, 2, 2));
        assert!(y.shape() != bad_grad.shape());
        assert!(conv2d_backward(&x, &w, &spec, &bad_grad).is_err());
    }

    #[test]
    fn zero_grad_out_gives_zero_grads() {
        let spec = ConvSpec::same(2, 2, 3).unwrap();
        let x = t(Shape::new(1, 2, 4, 4), |i| (i as f64 * 0.37).sin());
        let w = t(spec.weight_shape(), |i| (i as f64 * 0.11).cos());
        let g = Tensor::zeros(Shape::new(1, 2, 4, 4));
        for algo in [ConvAlgo::Direct, ConvAlgo::Im2col] {
            let grads = conv2d_backward_with(algo, &x, &w, &spec, &g).unwrap();
            assert!(grads.grad_x.data().iter().all(|&v| v == 0.0));
            assert!(grads.grad_w.data().iter().all(|&v| v == 0.0));
            assert!(grads.grad_b.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn unit_kernel_weight_grad_is_dot_product() {
        let spec = ConvSpec::new(1, 1, 1, 1, 0, 1).unwrap();
        let x = t(Shape::new(1, 1, 3, 3), |i| i as f64 - 4.0);
        let g = t(Shape::new(1, 1, 3, 3), |i| 0.5 * i as f64);
        let w = Tensor::full(spec.weight_shape(), 2.0);
        let expected: f64 = x.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let grads = conv2d_backward(&x, &w, &spec, &g).unwrap();
        assert_eq!(grads.grad_w.data(), &[expected]);
        assert_eq!(grads.grad_b.data(), &[g.sum()]);
        assert!(grads
            .grad_x
            .data()
            .iter()
            .zip(g.data())
            .all(|(&a, &b)| a == 2.0 * b));
    }

    #[test]
    fn tiling_covers_tall_outputs() {
        // Enough rows to force several im2col tiles.
        let spec = ConvSpec::same(4, 2, 3).unwrap();
        let shape = Shape::new(1, 4, 2000, 64);
        assert!(tile_rows(spec.patch_len(), shape) < 2000);
        let x = Tensor::<f64>::from_fn(shape, |_, c, h, w| {
            ((c * 7 + h * 3 + w) as f64 * 0.01).sin()
        });
        let w = t(spec.weight_shape(), |i| (i as f64 * 0.3).cos() * 0.2);
        let b = t(spec.bias_shape(), |i| i as f64);
        let d = conv2d_forward_with(ConvAlgo::Direct, &x, &w, &b, &spec).unwrap();
        let m = conv2d_forward_with(ConvAlgo::Im2col, &x, &w, &b, &spec).unwrap();
        for (a, b) in d.data().iter().zip(m.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        let g = d.map(|v| v.sin());
        let gd = conv2d_backward_with(ConvAlgo::Direct, &x, &w, &spec, &g).unwrap();
        let gm = conv2d_backward_with(ConvAlgo::Im2col, &x, &w, &spec, &g).unwrap();
        for (a, b) in gd.grad_w.data().iter().zip(gm.grad_w.data()) {
            assert!((a - b).abs() < 1e-9 * a.abs().max(1.0));
        }
        for (a, b) in gd.grad_x.data().iter().zip(gm.grad_x.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
