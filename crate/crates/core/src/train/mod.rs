//! Losses, metrics, optimizers, the training loop with early stopping, and
//! a finite-difference gradient checker.

mod gradcheck;
mod metrics;
mod optim;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::models::Model;
use crate::tensor::{Real, Rng, Tensor};

pub use gradcheck::{
    grad_check, gradient_zoo, max_relative_error, GradCheckReport, GradCheckRow, ZooCase,
};
pub use metrics::{mse_loss, r2_score, Metrics};
pub use optim::{adam_step, sgd_step, AdamHyper, AdamState, Optimizer};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

impl std::str::FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => Err(Error::config(format!("unknown precision `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub seed: u64,
    pub precision: Precision,
    /// Mini-batches per epoch. `None` makes one pass over the train split;
    /// otherwise batches are drawn from one continuing shuffled stream.
    pub steps_per_epoch: Option<usize>,
    /// Stop as soon as the dev mean R² reaches this value.
    pub target_dev_r2: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: Optimizer::Adam,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 16,
            max_epochs: 20,
            early_stop_patience: 3,
            seed: 0,
            precision: Precision::F32,
            steps_per_epoch: None,
            target_dev_r2: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!(
                "learning rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(format!("{name} must be in [0, 1), got {b}")));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::config("epsilon must be > 0"));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.steps_per_epoch == Some(0) {
            return Err(Error::config(
                "batch size, epochs and steps per epoch must be positive",
            ));
        }
        Ok(())
    }

    fn adam(&self) -> AdamHyper {
        AdamHyper {
            lr: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub dev_mse: f64,
    pub dev_mean_r2: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose weights the model holds after [`fit`].
    pub best_epoch: usize,
}

impl History {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs.iter().find(|e| e.epoch == self.best_epoch)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_mse,dev_mse,dev_mean_r2\n");
        for e in &self.epochs {
            s.push_str(&format!(
                "{},{},{},{}\n",
                e.epoch, e.train_mse, e.dev_mse, e.dev_mean_r2
            ));
        }
        s
    }
}

const DROPOUT_SALT: u64 = 0xd50f_0a7e_5eed_0001;

fn target_tensor<T: Real>(row: &[f64]) -> Result<Tensor<T>> {
    Tensor::new(&[row.len()], row.iter().map(|&v| T::of(v)).collect())
}

/// Trains with shuffled mini-batches, evaluates the dev split after each
/// epoch, and restores the weights of the best dev epoch on return.
pub fn fit<T: Real, D: Dataset>(
    model: &mut Model<T>,
    data: &D,
    config: &TrainConfig,
) -> Result<History> {
    fit_with(model, data, config, |_| {})
}

/// [`fit`] with a callback after every epoch.
pub fn fit_with<T: Real, D: Dataset>(
    model: &mut Model<T>,
    data: &D,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<History> {
    config.validate()?;
    let train = data.indices(Split::Train);
    if train.is_empty() || data.indices(Split::Dev).is_empty() {
        return Err(Error::Data(
            "training needs non-empty train and dev splits".into(),
        ));
    }
    let mut order = train.to_vec();
    let mut shuffler = Rng::with_stream(config.seed, 1);
    let mut cursor = order.len();
    let mut adam = AdamState::new(&model.parameters_mut());
    let mut history = History::default();
    let mut best: Option<(f64, Vec<Tensor<T>>)> = None;
    let mut stale = 0;
    let mut sample_counter: u64 = 0;

    for epoch in 1..=config.max_epochs {
        model.mode = Mode::Train;
        let steps = config
            .steps_per_epoch
            .unwrap_or_else(|| order.len().div_ceil(config.batch_size));
        if config.steps_per_epoch.is_none() {
            cursor = order.len();
        }
        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;
        for _ in 0..steps {
            let mut batch = Vec::with_capacity(config.batch_size);
            while batch.len() < config.batch_size {
                if cursor == order.len() {
                    if config.steps_per_epoch.is_none() && !batch.is_empty() {
                        break;
                    }
                    shuffler.shuffle(&mut order);
                    cursor = 0;
                }
                batch.push(order[cursor]);
                cursor += 1;
            }
            let mut grads = model.zero_grads();
            let inv = T::of(1.0 / batch.len() as f64);
            for &idx in &batch {
                let x = data.input::<T>(idx)?;
                let mut rng = Rng::with_stream(config.seed ^ DROPOUT_SALT, sample_counter);
                sample_counter += 1;
                let trace = model.forward(&x, &mut rng)?;
                let (loss, mut g) = mse_loss(&trace.output, &target_tensor(data.target(idx))?)?;
                if !loss.is_finite() {
                    return Err(Error::Divergence(format!(
                        "non-finite training loss in epoch {epoch}"
                    )));
                }
                loss_sum += loss;
                loss_count += 1;
                g.scale(inv);
                model.backward(&trace, &g, &mut grads, false)?;
            }
            if grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence(format!(
                    "non-finite gradient in epoch {epoch}"
                )));
            }
            let mut params = model.parameters_mut();
            match config.optimizer {
                Optimizer::Adam => adam_step(&mut params, &grads, &mut adam, config.adam())?,
                Optimizer::Sgd => sgd_step(&mut params, &grads, config.learning_rate)?,
            }
        }
        model.mode = Mode::Eval;
        let dev = evaluate(model, data, Split::Dev)?;
        if !dev.mse.is_finite() {
            return Err(Error::Divergence(format!(
                "non-finite dev loss in epoch {epoch}"
            )));
        }
        let record = EpochRecord {
            epoch,
            train_mse: loss_sum / loss_count as f64,
            dev_mse: dev.mse,
            dev_mean_r2: dev.mean_r2,
        };
        on_epoch(&record);
        history.epochs.push(record);
        if best.as_ref().is_none_or(|(m, _)| dev.mse < *m) {
            best = Some((dev.mse, model.parameters().into_iter().cloned().collect()));
            history.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
        }
        let reached = config.target_dev_r2.is_some_and(|t| dev.mean_r2 >= t);
        if reached || stale > config.early_stop_patience {
            break;
        }
    }
    if let Some((_, weights)) = best {
        for (p, w) in model.parameters_mut().into_iter().zip(weights) {
            *p = w;
        }
    }
    model.mode = Mode::Eval;
    Ok(history)
}

/// Eval-mode predictions for a split, as `[N, targets]` in f64.
pub fn predict_split<T: Real, D: Dataset>(
    model: &Model<T>,
    data: &D,
    split: Split,
) -> Result<(Tensor<f64>, Tensor<f64>)> {
    let idx = data.indices(split);
    if idx.is_empty() {
        return Err(Error::Data(format!("the {split} split is empty")));
    }
    let mut pred = Vec::new();
    let mut target = Vec::new();
    for &i in idx {
        let y = model.predict(&data.input::<T>(i)?)?;
        pred.extend(y.data().iter().map(|v| v.f64()));
        target.extend_from_slice(data.target(i));
    }
    let d = target.len() / idx.len();
    if pred.len() != target.len() {
        return Err(Error::shape(format!(
            "model emits {} outputs per sample, targets have {d}",
            pred.len() / idx.len()
        )));
    }
    Ok((
        Tensor::new(&[idx.len(), d], pred)?,
        Tensor::new(&[idx.len(), d], target)?,
    ))
}

/// Metrics over an entire split in standardized target space.
pub fn evaluate<T: Real, D: Dataset>(model: &Model<T>, data: &D, split: Split) -> Result<Metrics> {
    let (pred, target) = predict_split(model, data, split)?;
    Metrics::compute(&pred, &target)
}

/// Metrics of a predictor that always outputs the train-split target mean.
pub fn constant_baseline<D: Dataset>(data: &D, split: Split) -> Result<Metrics> {
    let train = data.indices(Split::Train);
    let idx = data.indices(split);
    if train.is_empty() || idx.is_empty() {
        return Err(Error::Data(
            "constant baseline needs train and evaluation samples".into(),
        ));
    }
    let d = data.target(train[0]).len();
    let mut mean = vec![0.0; d];
    for &i in train {
        for (m, &v) in mean.iter_mut().zip(data.target(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= train.len() as f64);
    let pred: Vec<f64> = idx.iter().flat_map(|_| mean.iter().copied()).collect();
    let target: Vec<f64> = idx
        .iter()
        .flat_map(|&i| data.target(i).iter().copied())
        .collect();
    Metrics::compute(
        &Tensor::new(&[idx.len(), d], pred)?,
        &Tensor::new(&[idx.len(), d], target)?,
    )
}
