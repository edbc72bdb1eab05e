//! Brute-force reference convolutions. Deliberately index-by-index with no
//! shared code from the im2col path, so they can serve as test oracles.

use super::{ConvGeometry, Padding, Real, Tensor};
use crate::error::{Error, Result};

fn axis_plan(
    n: usize,
    k: usize,
    s: usize,
    padding: Padding,
    axis: &'static str,
) -> Result<(usize, usize)> {
    match padding {
        Padding::Same => {
            let out = n.div_ceil(s);
            let need = (out - 1) * s + k;
            let total = need.saturating_sub(n);
            Ok((out, total / 2))
        }
        Padding::Valid => {
            if n < k {
                return Err(Error::Geometry {
                    context: "conv3d_oracle".into(),
                    axis,
                    detail: format!("kernel {k} exceeds input extent {n}"),
                });
            }
            Ok(((n - k) / s + 1, 0))
        }
    }
}

/// Six-nested-loop 3D cross-correlation with the same contract as
/// [`conv3d_forward`](super::conv3d_forward).
pub fn conv3d_oracle<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    geom: &ConvGeometry,
) -> Result<Tensor<T>> {
    geom.validate()?;
    let [t, h, w, cin] = match *input.shape() {
        [a, b, c, d] => [a, b, c, d],
        _ => return Err(Error::shape("oracle input must have rank 4")),
    };
    let [kt, kh, kw] = geom.kernel;
    let cout = geom.filters;
    if weights.shape() != [kt, kh, kw, cin, cout] || bias.shape() != [cout] {
        return Err(Error::shape("oracle weight or bias shape mismatch"));
    }
    let (ot, pt) = axis_plan(t, kt, geom.strides[0], geom.padding, "time")?;
    let (oh, ph) = axis_plan(h, kh, geom.strides[1], geom.padding, "height")?;
    let (ow, pw) = axis_plan(w, kw, geom.strides[2], geom.padding, "width")?;
    let mut out = Tensor::zeros(&[ot, oh, ow, cout])?;
    for a in 0..ot {
        for b in 0..oh {
            for c in 0..ow {
                for co in 0..cout {
                    let mut acc = bias.get(&[co]);
                    for dt in 0..kt {
                        let it = (a * geom.strides[0] + dt) as isize - pt as isize;
                        if it < 0 || it >= t as isize {
                            continue;
                        }
                        for dh in 0..kh {
                            let ih = (b * geom.strides[1] + dh) as isize - ph as isize;
                            if ih < 0 || ih >= h as isize {
                                continue;
                            }
                            for dw in 0..kw {
                                let iw = (c * geom.strides[2] + dw) as isize - pw as isize;
                                if iw < 0 || iw >= w as isize {
                                    continue;
                                }
                                for ci in 0..cin {
                                    acc += input.get(&[it as usize, ih as usize, iw as usize, ci])
                                        * weights.get(&[dt, dh, dw, ci, co]);
                                }
                            }
                        }
                    }
                    out.set(&[a, b, c, co], acc);
                }
            }
        }
    }
    Ok(out)
}

/// Reference for [`conv2d_forward`](super::conv2d_forward).
pub fn conv2d_oracle<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    geom: &ConvGeometry,
) -> Result<Tensor<T>> {
    let s = input.shape().to_vec();
    let k = weights.shape().to_vec();
    if s.len() != 3 || k.len() != 4 {
        return Err(Error::shape(
            "oracle expects [H, W, cin] and [kh, kw, cin, cout]",
        ));
    }
    let zero_bias;
    let b = match bias {
        Some(b) => b,
        None => {
            zero_bias = Tensor::zeros(&[geom.filters])?;
            &zero_bias
        }
    };
    let y = conv3d_oracle(
        &input.reshape(&[1, s[0], s[1], s[2]])?,
        &weights.reshape(&[1, k[0], k[1], k[2], k[3]])?,
        b,
        geom,
    )?;
    let ys = y.shape().to_vec();
    y.into_shape(&ys[1..])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_give_bias() {
        let x = Tensor::filled(&[2, 3, 3, 2], 1.0).unwrap();
        let w = Tensor::zeros(&[1, 2, 2, 2, 3]).unwrap();
        let b = Tensor::new(&[3], vec![0.5, -1.0, 2.0]).unwrap();
        let g = ConvGeometry::new(3, [1, 2, 2], [1, 1, 1], Padding::Same);
        let y = conv3d_oracle(&x, &w, &b, &g).unwrap();
        for chunk in y.data().chunks(3) {
            assert_eq!(chunk, b.data());
        }
    }

    #[test]
    fn identity_case() {
        let x = Tensor::new(&[1, 1, 1, 1], vec![3.0]).unwrap();
        let w = Tensor::new(&[1, 1, 1, 1, 1], vec![2.0]).unwrap();
        let b = Tensor::zeros(&[1]).unwrap();
        let g = ConvGeometry::new(1, [1, 1, 1], [1, 1, 1], Padding::Valid);
        assert_eq!(conv3d_oracle(&x, &w, &b, &g).unwrap().data(), &[6.0]);
    }
}
