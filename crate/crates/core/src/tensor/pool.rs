use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Argmax positions recorded by [`maxpool3d`] for the backward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct PoolIndices {
    pub input_shape: Vec<usize>,
    /// Flat input offset of the winning element, one per output element.
    pub argmax: Vec<usize>,
}

/// Output `(time, height, width)` extents of a non-overlapping pool.
pub fn pool_output_dims(dims: [usize; 3], pool: [usize; 3]) -> Result<[usize; 3]> {
    let mut out = [0usize; 3];
    for a in 0..3 {
        if pool[a] == 0 || pool[a] > dims[a] {
            return Err(Error::Geometry {
                context: "maxpool3d".into(),
                axis: super::conv::AXES[a],
                detail: format!("pool size {} exceeds extent {}", pool[a], dims[a]),
            });
        }
        out[a] = dims[a] / pool[a];
    }
    Ok(out)
}

/// Non-overlapping max pooling (stride = pool size, trailing remainder
/// dropped) over the time, height and width axes of `[T, H, W, C]`.
/// Ties go to the lowest input offset.
pub fn maxpool3d<T: Real>(input: &Tensor<T>, pool: [usize; 3]) -> Result<(Tensor<T>, PoolIndices)> {
    let s = input.shape();
    if s.len() != 4 {
        return Err(Error::shape(format!("maxpool3d expects rank 4, got {s:?}")));
    }
    let out_dims = pool_output_dims([s[0], s[1], s[2]], pool)?;
    let (h, w, c) = (s[1], s[2], s[3]);
    let x = input.data();
    let n_out = out_dims.iter().product::<usize>() * c;
    let mut out = Vec::with_capacity(n_out);
    let mut argmax = Vec::with_capacity(n_out);
    for ot in 0..out_dims[0] {
        for oh in 0..out_dims[1] {
            for ow in 0..out_dims[2] {
                for ch in 0..c {
                    let mut best = T::neg_infinity();
                    let mut best_at = usize::MAX;
                    for dt in 0..pool[0] {
                        for dh in 0..pool[1] {
                            for dw in 0..pool[2] {
                                let it = ot * pool[0] + dt;
                                let ih = oh * pool[1] + dh;
                                let iw = ow * pool[2] + dw;
                                let off = ((it * h + ih) * w + iw) * c + ch;
                                if best_at == usize::MAX || x[off] > best {
                                    best = x[off];
                                    best_at = off;
                                }
                            }
                        }
                    }
                    out.push(best);
                    argmax.push(best_at);
                }
            }
        }
    }
    Ok((
        Tensor::new(&[out_dims[0], out_dims[1], out_dims[2], c], out)?,
        PoolIndices {
            input_shape: s.to_vec(),
            argmax,
        },
    ))
}

/// Routes each output gradient to its recorded argmax input position.
pub fn maxpool3d_backward<T: Real>(
    grad_out: &Tensor<T>,
    indices: &PoolIndices,
) -> Result<Tensor<T>> {
    if grad_out.len() != indices.argmax.len() {
        return Err(Error::shape(format!(
            "maxpool3d backward: {} gradients for {} pooled outputs",
            grad_out.len(),
            indices.argmax.len()
        )));
    }
    let mut grad_in = Tensor::zeros(&indices.input_shape)?;
    let gi = grad_in.data_mut();
    for (&g, &at) in grad_out.data().iter().zip(&indices.argmax) {
        gi[at] += g;
    }
    Ok(grad_in)
}
