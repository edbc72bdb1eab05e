//! Weight initializers: Glorot-uniform for feed-forward kernels, orthogonal
//! for recurrent kernels.

use crate::error::Result;
use crate::tensor::{Real, Rng, Tensor};

pub fn glorot_uniform<T: Real>(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    rng: &mut Rng,
) -> Result<Tensor<T>> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::uniform(shape, -limit, limit, rng)
}

/// `rows x cols` matrix with orthonormal rows or columns (whichever is the
/// shorter side), from modified Gram-Schmidt on Gaussian samples.
pub fn orthogonal<T: Real>(rows: usize, cols: usize, rng: &mut Rng) -> Result<Tensor<T>> {
    let (long, short) = (rows.max(cols), rows.min(cols));
    // `short` vectors of length `long`
    let mut q: Vec<Vec<f64>> = (0..short)
        .map(|_| (0..long).map(|_| rng.normal()).collect())
        .collect();
    for i in 0..short {
        for j in 0..i {
            let d: f64 = q[i].iter().zip(&q[j]).map(|(a, b)| a * b).sum();
            let (head, tail) = q.split_at_mut(i);
            for (a, b) in tail[0].iter_mut().zip(&head[j]) {
                *a -= d * b;
            }
        }
        let norm = q[i].iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-300);
        for a in &mut q[i] {
            *a /= norm;
        }
    }
    let mut data = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            data[r * cols + c] = T::of(if rows >= cols { q[c][r] } else { q[r][c] });
        }
    }
    Tensor::new(&[rows, cols], data)
}
