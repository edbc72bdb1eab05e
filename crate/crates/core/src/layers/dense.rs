use crate::error::{Error, Result};
use crate::tensor::{gemm, Activation, Real, Tensor};

/// `activation(x W + b)` for `x: [batch, d]`, `W: [d, u]`, `b: [u]`.
pub fn dense_forward<T: Real>(
    x: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    activation: Activation,
) -> Result<Tensor<T>> {
    let (batch, d, u) = check(x, weights, bias)?;
    let mut out = vec![T::zero(); batch * u];
    for row in out.chunks_exact_mut(u) {
        row.copy_from_slice(bias.data());
    }
    gemm(
        batch,
        d,
        u,
        x.data(),
        false,
        weights.data(),
        false,
        &mut out,
        T::one(),
    );
    activation.apply_in_place(&mut out);
    Tensor::new(&[batch, u], out)
}

fn check<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match (x.shape(), w.shape(), b.shape()) {
        (&[batch, d], &[wd, u], &[bu]) if d == wd && u == bu => Ok((batch, d, u)),
        (xs, ws, bs) => Err(Error::shape(format!(
            "dense: input {xs:?}, weights {ws:?}, bias {bs:?} do not agree"
        ))),
    }
}

#[derive(Clone, Debug)]
pub struct DenseGrads<T> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Adjoint of [`dense_forward`] given its input and post-activation output.
pub fn dense_backward<T: Real>(
    x: &Tensor<T>,
    weights: &Tensor<T>,
    output: &Tensor<T>,
    activation: Activation,
    grad_out: &Tensor<T>,
) -> Result<DenseGrads<T>> {
    let bias_shape = [weights.shape().get(1).copied().unwrap_or(0)];
    let (batch, d, u) = check(x, weights, &Tensor::zeros(&bias_shape)?)?;
    if grad_out.shape() != [batch, u] || output.shape() != [batch, u] {
        return Err(Error::shape(
            "dense backward: output gradient shape mismatch",
        ));
    }
    let mut g = grad_out.data().to_vec();
    activation.backprop_in_place(output.data(), &mut g);
    let mut gw = vec![T::zero(); d * u];
    gemm(d, batch, u, x.data(), true, &g, false, &mut gw, T::zero());
    let mut gx = vec![T::zero(); batch * d];
    gemm(
        batch,
        u,
        d,
        &g,
        false,
        weights.data(),
        true,
        &mut gx,
        T::zero(),
    );
    let mut gb = vec![T::zero(); u];
    for row in g.chunks_exact(u) {
        for (b, &v) in gb.iter_mut().zip(row) {
            *b += v;
        }
    }
    Ok(DenseGrads {
        input: Tensor::new(&[batch, d], gx)?,
        weights: Tensor::new(&[d, u], gw)?,
        bias: Tensor::new(&[u], gb)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;

    #[test]
    fn identity_weights() {
        let x = Tensor::new(&[1, 2], vec![1.0, 0.0]).unwrap();
        let w = Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let b = Tensor::zeros(&[2]).unwrap();
        let y = dense_forward(&x, &w, &b, Activation::Linear).unwrap();
        assert_eq!(y.data(), &[1.0, 0.0]);
    }

    #[test]
    fn inner_dimension_mismatch() {
        let x = Tensor::<f64>::zeros(&[1, 3]).unwrap();
        let w = Tensor::zeros(&[2, 2]).unwrap();
        let b = Tensor::zeros(&[2]).unwrap();
        assert!(dense_forward(&x, &w, &b, Activation::Linear).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = Rng::new(8);
        let x: Tensor = Tensor::uniform(&[3, 4], -1.0, 1.0, &mut rng).unwrap();
        let w = Tensor::uniform(&[4, 5], -1.0, 1.0, &mut rng).unwrap();
        let b = Tensor::uniform(&[5], -1.0, 1.0, &mut rng).unwrap();
        let probe = Tensor::uniform(&[3, 5], -1.0, 1.0, &mut rng).unwrap();
        let act = Activation::Tanh;
        let y = dense_forward(&x, &w, &b, act).unwrap();
        let g = dense_backward(&x, &w, &y, act, &probe).unwrap();
        let loss = |w: &Tensor| dense_forward(&x, w, &b, act).unwrap().dot(&probe).unwrap();
        for i in 0..w.len() {
            let (mut wp, mut wm) = (w.clone(), w.clone());
            wp.data_mut()[i] += 1e-6;
            wm.data_mut()[i] -= 1e-6;
            let fd = (loss(&wp) - loss(&wm)) / 2e-6;
            assert!((fd - g.weights.data()[i]).abs() < 1e-7 * (1.0 + fd.abs()));
        }
    }
}
