//! Convolution as im2col followed by a GEMM against the `[K, cout]` weight
//! matrix. All convolutions are cross-correlations (no kernel flip).

use serde::{Deserialize, Serialize};

use super::{gemm, Real, Tensor};
use crate::error::{Error, Result};

pub(crate) const AXES: [&str; 3] = ["time", "height", "width"];

/// Upper bound on the elements of one im2col chunk.
const CHUNK_ELEMS: usize = 1 << 19;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Output extent `ceil(n / s)`; zero padding split evenly, extra element
    /// on the high-index side.
    Same,
    /// Output extent `floor((n - k) / s) + 1`, no padding.
    Valid,
}

impl std::str::FromStr for Padding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "same" => Ok(Padding::Same),
            "valid" => Ok(Padding::Valid),
            other => Err(Error::config(format!("unknown padding `{other}`"))),
        }
    }
}

impl std::fmt::Display for Padding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Padding::Same => "same",
            Padding::Valid => "valid",
        })
    }
}

/// Kernel extents, strides and padding over `(time, height, width)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub filters: usize,
    pub kernel: [usize; 3],
    pub strides: [usize; 3],
    pub padding: Padding,
}

impl ConvGeometry {
    pub fn new(filters: usize, kernel: [usize; 3], strides: [usize; 3], padding: Padding) -> Self {
        ConvGeometry {
            filters,
            kernel,
            strides,
            padding,
        }
    }

    /// Spatial-only geometry; the time axis has kernel and stride 1.
    pub fn conv2d(
        filters: usize,
        kernel: [usize; 2],
        strides: [usize; 2],
        padding: Padding,
    ) -> Self {
        Self::new(
            filters,
            [1, kernel[0], kernel[1]],
            [1, strides[0], strides[1]],
            padding,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.filters == 0 {
            return Err(Error::config("convolution needs at least one filter"));
        }
        for (axis, name) in AXES.iter().enumerate() {
            if self.kernel[axis] == 0 {
                return Err(Error::Geometry {
                    context: "convolution".into(),
                    axis: name,
                    detail: "kernel extent is zero".into(),
                });
            }
            if self.strides[axis] == 0 {
                return Err(Error::Geometry {
                    context: "convolution".into(),
                    axis: name,
                    detail: "stride is zero".into(),
                });
            }
        }
        Ok(())
    }

    pub fn output_extent(&self, axis: usize, input: usize) -> Result<usize> {
        let (k, s) = (self.kernel[axis], self.strides[axis]);
        if k == 0 || s == 0 {
            self.validate()?;
        }
        match self.padding {
            Padding::Same => Ok(input.div_ceil(s)),
            Padding::Valid => {
                if input < k {
                    Err(Error::Geometry {
                        context: "convolution".into(),
                        axis: AXES[axis],
                        detail: format!(
                            "valid padding with kernel {k} needs input extent >= {k}, got {input}"
                        ),
                    })
                } else {
                    Ok((input - k) / s + 1)
                }
            }
        }
    }

    pub fn output_dims(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        self.validate()?;
        Ok([
            self.output_extent(0, input[0])?,
            self.output_extent(1, input[1])?,
            self.output_extent(2, input[2])?,
        ])
    }

    /// `(low, high)` zero padding along `axis`.
    pub fn pads(&self, axis: usize, input: usize) -> (usize, usize) {
        match self.padding {
            Padding::Valid => (0, 0),
            Padding::Same => {
                let out = input.div_ceil(self.strides[axis]);
                let total =
                    ((out - 1) * self.strides[axis] + self.kernel[axis]).saturating_sub(input);
                (total / 2, total - total / 2)
            }
        }
    }

    /// Weight element count `kt*kh*kw*cin*cout` plus `cout` biases.
    pub fn param_count(&self, cin: usize, bias: bool) -> usize {
        let k: usize = self.kernel.iter().product();
        k * cin * self.filters + if bias { self.filters } else { 0 }
    }
}

/// Resolved index arithmetic for one convolution call.
#[derive(Clone, Debug)]
pub(crate) struct ConvDims {
    pub input: [usize; 4],
    pub out: [usize; 3],
    pub kernel: [usize; 3],
    pub strides: [usize; 3],
    pub pad_lo: [usize; 3],
    pub cout: usize,
}

impl ConvDims {
    pub fn new(input: [usize; 4], geom: &ConvGeometry) -> Result<Self> {
        let out = geom.output_dims([input[0], input[1], input[2]])?;
        let pad_lo = [
            geom.pads(0, input[0]).0,
            geom.pads(1, input[1]).0,
            geom.pads(2, input[2]).0,
        ];
        Ok(ConvDims {
            input,
            out,
            kernel: geom.kernel,
            strides: geom.strides,
            pad_lo,
            cout: geom.filters,
        })
    }

    pub fn k_len(&self) -> usize {
        self.kernel.iter().product::<usize>() * self.input[3]
    }

    pub fn positions(&self) -> usize {
        self.out.iter().product()
    }

    pub fn out_len(&self) -> usize {
        self.positions() * self.cout
    }

    fn chunk_rows(&self) -> usize {
        (CHUNK_ELEMS / self.k_len().max(1)).clamp(1, self.positions())
    }

    fn unravel(&self, p: usize) -> [usize; 3] {
        let ow = p % self.out[2];
        let oh = (p / self.out[2]) % self.out[1];
        let ot = p / (self.out[2] * self.out[1]);
        [ot, oh, ow]
    }

    /// Visits the kernel taps of output position `p` one `(dt, dh)` row at a
    /// time. For each row `f(col_offset, src)` receives the column offset of
    /// the row and, when the row is inside the input, the input offset of
    /// its first in-bounds tap together with the in-bounds `dw` range.
    #[inline]
    fn for_each_tap_row(
        &self,
        p: usize,
        mut f: impl FnMut(usize, Option<(usize, std::ops::Range<usize>)>),
    ) {
        let o = self.unravel(p);
        let c = self.input[3];
        let [kt, kh, kw] = self.kernel;
        let row_len = kw * c;
        // in-bounds dw range is the same for every (dt, dh)
        let w0 = (o[2] * self.strides[2]) as isize - self.pad_lo[2] as isize;
        let dw_lo = (-w0).max(0) as usize;
        let dw_hi = ((self.input[2] as isize - w0).max(0) as usize).min(kw);
        let mut at = 0;
        for dt in 0..kt {
            let it = (o[0] * self.strides[0] + dt) as isize - self.pad_lo[0] as isize;
            let t_ok = it >= 0 && (it as usize) < self.input[0];
            for dh in 0..kh {
                let ih = (o[1] * self.strides[1] + dh) as isize - self.pad_lo[1] as isize;
                if t_ok && ih >= 0 && (ih as usize) < self.input[1] && dw_lo < dw_hi {
                    let iw = (w0 + dw_lo as isize) as usize;
                    let off =
                        ((it as usize * self.input[1] + ih as usize) * self.input[2] + iw) * c;
                    f(at, Some((off, dw_lo..dw_hi)));
                } else {
                    f(at, None);
                }
                at += row_len;
            }
        }
    }

    fn im2col<T: Real>(&self, input: &[T], rows: std::ops::Range<usize>, col: &mut [T]) {
        let c = self.input[3];
        let k_len = self.k_len();
        let row_len = self.kernel[2] * c;
        for (r, p) in rows.enumerate() {
            let dst = &mut col[r * k_len..(r + 1) * k_len];
            self.for_each_tap_row(p, |at, src| {
                let seg = &mut dst[at..at + row_len];
                match src {
                    Some((off, dw)) => {
                        let (lo, hi) = (dw.start * c, dw.end * c);
                        seg[..lo].fill(T::zero());
                        seg[lo..hi].copy_from_slice(&input[off..off + hi - lo]);
                        seg[hi..].fill(T::zero());
                    }
                    None => seg.fill(T::zero()),
                }
            });
        }
    }

    fn col2im<T: Real>(&self, col: &[T], rows: std::ops::Range<usize>, grad_in: &mut [T]) {
        let c = self.input[3];
        let k_len = self.k_len();
        for (r, p) in rows.enumerate() {
            let src = &col[r * k_len..(r + 1) * k_len];
            self.for_each_tap_row(p, |at, dst| {
                if let Some((off, dw)) = dst {
                    let (lo, hi) = (dw.start * c, dw.end * c);
                    for (g, &v) in grad_in[off..off + hi - lo]
                        .iter_mut()
                        .zip(&src[at + lo..at + hi])
                    {
                        *g += v;
                    }
                }
            });
        }
    }
}

/// Overwrites `out` with the convolution of `input`.
pub(crate) fn conv_forward_raw<T: Real>(
    d: &ConvDims,
    input: &[T],
    weights: &[T],
    bias: Option<&[T]>,
    out: &mut [T],
) {
    let (k_len, cout, positions) = (d.k_len(), d.cout, d.positions());
    let chunk = d.chunk_rows();
    let mut col = vec![T::zero(); chunk * k_len];
    let mut start = 0;
    while start < positions {
        let end = (start + chunk).min(positions);
        let rows = end - start;
        d.im2col(input, start..end, &mut col);
        gemm(
            rows,
            k_len,
            cout,
            &col,
            false,
            weights,
            false,
            &mut out[start * cout..end * cout],
            T::zero(),
        );
        start = end;
    }
    if let Some(b) = bias {
        for row in out[..positions * cout].chunks_exact_mut(cout) {
            for (o, &bv) in row.iter_mut().zip(b) {
                *o += bv;
            }
        }
    }
}

/// Accumulates (`+=`) the adjoints of `conv_forward_raw` into the provided
/// buffers. `grad_in` may be skipped when the input gradient is not needed.
pub(crate) fn conv_backward_raw<T: Real>(
    d: &ConvDims,
    input: &[T],
    weights: &[T],
    grad_out: &[T],
    mut grad_in: Option<&mut [T]>,
    grad_w: &mut [T],
    grad_b: Option<&mut [T]>,
) {
    let (k_len, cout, positions) = (d.k_len(), d.cout, d.positions());
    let chunk = d.chunk_rows();
    let mut col = vec![T::zero(); chunk * k_len];
    let mut gcol = if grad_in.is_some() {
        vec![T::zero(); chunk * k_len]
    } else {
        Vec::new()
    };
    let mut start = 0;
    while start < positions {
        let end = (start + chunk).min(positions);
        let rows = end - start;
        let g = &grad_out[start * cout..end * cout];
        d.im2col(input, start..end, &mut col);
        gemm(k_len, rows, cout, &col, true, g, false, grad_w, T::one());
        if let Some(gi) = grad_in.as_deref_mut() {
            gemm(
                rows,
                cout,
                k_len,
                g,
                false,
                weights,
                true,
                &mut gcol,
                T::zero(),
            );
            d.col2im(&gcol, start..end, gi);
        }
        start = end;
    }
    if let Some(gb) = grad_b {
        for row in grad_out[..positions * cout].chunks_exact(cout) {
            for (b, &g) in gb.iter_mut().zip(row) {
                *b += g;
            }
        }
    }
}

/// Gradients of a convolution with respect to its three primal inputs.
#[derive(Clone, Debug)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

fn check_conv_args<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    geom: &ConvGeometry,
) -> Result<ConvDims> {
    geom.validate()?;
    let s = input.shape();
    if s.len() != 4 {
        return Err(Error::shape(format!(
            "conv3d input must be [time, height, width, channels], got {s:?}"
        )));
    }
    let w = weights.shape();
    let want = [
        geom.kernel[0],
        geom.kernel[1],
        geom.kernel[2],
        s[3],
        geom.filters,
    ];
    if w != want {
        return Err(Error::shape(format!(
            "conv3d weights must be {want:?} for input channels {}, got {w:?}",
            s[3]
        )));
    }
    ConvDims::new([s[0], s[1], s[2], s[3]], geom).map_err(|e| match e {
        Error::Geometry { axis, detail, .. } => Error::Geometry {
            context: "conv3d".into(),
            axis,
            detail,
        },
        other => other,
    })
}

fn check_bias<T: Real>(bias: &Tensor<T>, cout: usize) -> Result<()> {
    if bias.shape() != [cout] {
        return Err(Error::shape(format!(
            "bias must be [{cout}], got {:?}",
            bias.shape()
        )));
    }
    Ok(())
}

/// 3D cross-correlation of a `[T, H, W, cin]` block with
/// `[kt, kh, kw, cin, cout]` weights plus a per-channel bias.
pub fn conv3d_forward<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    geom: &ConvGeometry,
) -> Result<Tensor<T>> {
    let d = check_conv_args(input, weights, geom)?;
    check_bias(bias, geom.filters)?;
    let mut out = vec![T::zero(); d.out_len()];
    conv_forward_raw(
        &d,
        input.data(),
        weights.data(),
        Some(bias.data()),
        &mut out,
    );
    Tensor::new(&[d.out[0], d.out[1], d.out[2], d.cout], out)
}

pub fn conv3d_backward<T: Real>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    weights: &Tensor<T>,
    geom: &ConvGeometry,
) -> Result<ConvGrads<T>> {
    let d = check_conv_args(input, weights, geom)?;
    let want = [d.out[0], d.out[1], d.out[2], d.cout];
    if grad_out.shape() != want {
        return Err(Error::shape(format!(
            "conv3d grad_out must be {want:?}, got {:?}",
            grad_out.shape()
        )));
    }
    let mut gi = input.zeros_like();
    let mut gw = weights.zeros_like();
    let mut gb = vec![T::zero(); d.cout];
    conv_backward_raw(
        &d,
        input.data(),
        weights.data(),
        grad_out.data(),
        Some(gi.data_mut()),
        gw.data_mut(),
        Some(&mut gb),
    );
    Ok(ConvGrads {
        input: gi,
        weights: gw,
        bias: Tensor::new(&[d.cout], gb)?,
    })
}

fn lift_2d<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    geom: &ConvGeometry,
) -> Result<(Tensor<T>, Tensor<T>)> {
    if geom.kernel[0] != 1 || geom.strides[0] != 1 {
        return Err(Error::config(
            "conv2d geometry must have unit time kernel and stride",
        ));
    }
    let s = input.shape();
    let w = weights.shape();
    if s.len() != 3 || w.len() != 4 {
        return Err(Error::shape(format!(
            "conv2d expects [H, W, cin] input and [kh, kw, cin, cout] weights, got {s:?} and {w:?}"
        )));
    }
    Ok((
        input.reshape(&[1, s[0], s[1], s[2]])?,
        weights.reshape(&[1, w[0], w[1], w[2], w[3]])?,
    ))
}

/// 2D cross-correlation over `[H, W, cin]`; bias is optional.
pub fn conv2d_forward<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    geom: &ConvGeometry,
) -> Result<Tensor<T>> {
    let (x, w) = lift_2d(input, weights, geom)?;
    let d = check_conv_args(&x, &w, geom)?;
    if let Some(b) = bias {
        check_bias(b, geom.filters)?;
    }
    let mut out = vec![T::zero(); d.out_len()];
    conv_forward_raw(&d, x.data(), w.data(), bias.map(|b| b.data()), &mut out);
    Tensor::new(&[d.out[1], d.out[2], d.cout], out)
}

pub fn conv2d_backward<T: Real>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    weights: &Tensor<T>,
    geom: &ConvGeometry,
) -> Result<ConvGrads<T>> {
    let (x, w) = lift_2d(input, weights, geom)?;
    let gs = grad_out.shape();
    if gs.len() != 3 {
        return Err(Error::shape(format!(
            "conv2d grad_out must be [H', W', cout], got {gs:?}"
        )));
    }
    let g = grad_out.reshape(&[1, gs[0], gs[1], gs[2]])?;
    let grads = conv3d_backward(&g, &x, &w, geom)?;
    Ok(ConvGrads {
        input: grads.input.into_shape(input.shape())?,
        weights: grads.weights.into_shape(weights.shape())?,
        bias: grads.bias,
    })
}
