use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Mean squared error and its gradient `2 (pred - target) / N`.
pub fn mse_loss<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(format!(
            "mse: prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let scale = T::of(2.0 / n);
    let grad = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let d = p - t;
            loss += d.f64() * d.f64();
            d * scale
        })
        .collect();
    Ok((loss / n, Tensor::new(pred.shape(), grad)?))
}

/// Coefficient of determination `1 - SS_res / SS_tot`.
pub fn r2_score(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::shape(format!(
            "r2: {} predictions vs {} targets",
            pred.len(),
            target.len()
        )));
    }
    if target.len() < 2 {
        return Err(Error::UndefinedMetric(
            "R² needs at least two samples".into(),
        ));
    }
    let mean = target.iter().sum::<f64>() / target.len() as f64;
    let ss_tot: f64 = target.iter().map(|t| (t - mean) * (t - mean)).sum();
    if !(ss_tot > 0.0) {
        return Err(Error::UndefinedMetric(
            "R² is undefined for a constant target".into(),
        ));
    }
    let ss_res: f64 = pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(1.0 - ss_res / ss_tot)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mse: f64,
    pub mean_r2: f64,
    pub r2_per_target: Vec<f64>,
}

impl Metrics {
    /// Metrics of `[N, D]` predictions: MSE over all elements, R² per column.
    pub fn compute(pred: &Tensor<f64>, target: &Tensor<f64>) -> Result<Self> {
        let (n, d) = match (pred.shape(), target.shape()) {
            (&[n, d], &[tn, td]) if n == tn && d == td => (n, d),
            (p, t) => {
                return Err(Error::shape(format!(
                    "metrics: prediction {p:?} vs target {t:?}"
                )))
            }
        };
        let mse = mse_loss(pred, target)?.0;
        let column = |x: &Tensor<f64>, j: usize| -> Vec<f64> {
            (0..n).map(|i| x.data()[i * d + j]).collect()
        };
        let r2_per_target = (0..d)
            .map(|j| {
                r2_score(&column(pred, j), &column(target, j))
                    .map_err(|e| Error::UndefinedMetric(format!("target {j}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mean_r2 = r2_per_target.iter().sum::<f64>() / d as f64;
        Ok(Metrics {
            mse,
            mean_r2,
            r2_per_target,
        })
    }
}
