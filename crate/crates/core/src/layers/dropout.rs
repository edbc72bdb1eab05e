use super::Mode;
use crate::error::{Error, Result};
use crate::tensor::{Real, Rng, Tensor};

/// Per-element scale applied by a training-mode dropout call: `0` for
/// dropped elements, `1 / (1 - rate)` for survivors.
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutMask<T> {
    pub scale: Vec<T>,
}

/// Inverted dropout. Eval mode (and `rate == 0`) returns the input
/// unchanged and no mask.
pub fn dropout<T: Real>(
    x: &Tensor<T>,
    rate: f64,
    mode: Mode,
    rng: &mut Rng,
) -> Result<(Tensor<T>, Option<DropoutMask<T>>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::config(format!(
            "dropout rate must be in [0, 1), got {rate}"
        )));
    }
    if mode == Mode::Eval || rate == 0.0 {
        return Ok((x.clone(), None));
    }
    let keep = T::of(1.0 / (1.0 - rate));
    let scale: Vec<T> = (0..x.len())
        .map(|_| {
            if rng.uniform() < rate {
                T::zero()
            } else {
                keep
            }
        })
        .collect();
    let mut y = x.clone();
    for (v, &s) in y.data_mut().iter_mut().zip(&scale) {
        *v *= s;
    }
    Ok((y, Some(DropoutMask { scale })))
}

pub fn dropout_backward<T: Real>(grad_out: &Tensor<T>, mask: Option<&DropoutMask<T>>) -> Tensor<T> {
    let mut g = grad_out.clone();
    if let Some(m) = mask {
        for (v, &s) in g.data_mut().iter_mut().zip(&m.scale) {
            *v *= s;
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eval_and_zero_rate_are_identity() {
        let mut rng = Rng::new(0);
        let x: Tensor = Tensor::uniform(&[10], -1.0, 1.0, &mut rng).unwrap();
        assert_eq!(dropout(&x, 0.5, Mode::Eval, &mut rng).unwrap().0, x);
        assert_eq!(dropout(&x, 0.0, Mode::Train, &mut rng).unwrap().0, x);
    }

    #[test]
    fn rate_one_is_rejected() {
        let x: Tensor = Tensor::zeros(&[2]).unwrap();
        assert!(matches!(
            dropout(&x, 1.0, Mode::Train, &mut Rng::new(0)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn expectation_is_preserved() {
        let x: Tensor<f64> = Tensor::filled(&[1_000_000], 1.0).unwrap();
        let (y, _) = dropout(&x, 0.3, Mode::Train, &mut Rng::new(12)).unwrap();
        let mean = y.sum() / y.len() as f64;
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
    }
}
