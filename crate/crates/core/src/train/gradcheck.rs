use crate::error::{Error, Result};
use crate::models::{tiny_convlstm, LayerSpec, Model, ModelSpec};
use crate::tensor::{Activation, Padding, Rng, Tensor};

/// Pairs whose magnitudes sum below this are too small to compare.
const NEGLIGIBLE: f64 = 1e-8;

/// Largest `|a - n| / max(|a|, |n|)` over all element pairs.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .filter(|(a, n)| a.abs() + n.abs() >= NEGLIGIBLE)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()))
        .fold(0.0, f64::max)
}

fn probe_loss(model: &Model<f64>, x: &Tensor<f64>, probe: &Tensor<f64>) -> Result<f64> {
    model.predict(x)?.dot(probe)
}

/// Analytic and central-difference gradients of `<model(x), probe>` with
/// respect to every parameter element followed by every input element.
pub fn grad_check(
    model: &Model<f64>,
    x: &Tensor<f64>,
    probe: &Tensor<f64>,
    step: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let trace = model.forward(x, &mut Rng::new(0))?;
    let mut grads = model.zero_grads();
    let dx = model
        .backward(&trace, probe, &mut grads, true)?
        .expect("input gradient was requested");
    let mut analytic: Vec<f64> = grads
        .iter()
        .flat_map(|g| g.data().iter().copied())
        .collect();
    analytic.extend_from_slice(dx.data());

    let mut numeric = Vec::with_capacity(analytic.len());
    let mut m = model.clone();
    let count = m.parameters().len();
    for k in 0..count {
        for e in 0..m.parameters()[k].len() {
            let orig = m.parameters()[k].data()[e];
            m.parameters_mut()[k].data_mut()[e] = orig + step;
            let up = probe_loss(&m, x, probe)?;
            m.parameters_mut()[k].data_mut()[e] = orig - step;
            let down = probe_loss(&m, x, probe)?;
            m.parameters_mut()[k].data_mut()[e] = orig;
            numeric.push((up - down) / (2.0 * step));
        }
    }
    let mut xp = x.clone();
    for e in 0..x.len() {
        let orig = x.data()[e];
        xp.data_mut()[e] = orig + step;
        let up = probe_loss(model, &xp, probe)?;
        xp.data_mut()[e] = orig - step;
        let down = probe_loss(model, &xp, probe)?;
        xp.data_mut()[e] = orig;
        numeric.push((up - down) / (2.0 * step));
    }
    Ok((analytic, numeric))
}

/// One network checked by the gradient suite.
#[derive(Clone, Debug)]
pub struct ZooCase {
    pub name: &'static str,
    /// Layer family used for `--scope` filtering.
    pub scope: &'static str,
    pub spec: ModelSpec,
}

fn single(
    name: &'static str,
    scope: &'static str,
    input: &[usize],
    layers: Vec<LayerSpec>,
) -> ZooCase {
    ZooCase {
        name,
        scope,
        spec: ModelSpec {
            name: name.into(),
            input_shape: input.to_vec(),
            layers,
        },
    }
}

/// Small instances of every layer type plus the tiny ConvLSTM stack.
pub fn gradient_zoo() -> Vec<ZooCase> {
    let conv = |filters, kernel, strides, padding| LayerSpec::Conv3d {
        filters,
        kernel,
        strides,
        padding,
        activation: Activation::Tanh,
    };
    let lstm = |units, return_sequences, peephole| LayerSpec::Lstm {
        units,
        return_sequences,
        peephole,
    };
    let convlstm = |strides, padding, return_sequences, peephole| LayerSpec::Convlstm {
        filters: 3,
        kernel: [3, 3],
        strides,
        padding,
        return_sequences,
        peephole,
    };
    vec![
        single(
            "dense",
            "dense",
            &[6],
            vec![LayerSpec::Dense {
                units: 4,
                activation: Activation::Tanh,
            }],
        ),
        single(
            "conv3d_same",
            "conv3d",
            &[4, 6, 5, 2],
            vec![conv(3, [2, 3, 3], [2, 2, 1], Padding::Same)],
        ),
        single(
            "conv3d_valid",
            "conv3d",
            &[4, 6, 5, 2],
            vec![conv(2, [2, 3, 2], [1, 2, 2], Padding::Valid)],
        ),
        single(
            "maxpool3d",
            "maxpool3d",
            &[4, 4, 6, 2],
            vec![LayerSpec::Maxpool3d { pool: [2, 2, 3] }],
        ),
        single(
            "dropout_eval",
            "dropout",
            &[10],
            vec![LayerSpec::Dropout { rate: 0.5 }],
        ),
        single("lstm", "lstm", &[4, 3], vec![lstm(3, true, false)]),
        single("lstm_peephole", "lstm", &[4, 3], vec![lstm(3, false, true)]),
        single(
            "bilstm",
            "bilstm",
            &[4, 3],
            vec![LayerSpec::Bilstm {
                units: 2,
                return_sequences: true,
                peephole: false,
            }],
        ),
        single(
            "convlstm",
            "convlstm",
            &[3, 5, 4, 2],
            vec![convlstm([2, 1], Padding::Same, true, false)],
        ),
        single(
            "convlstm_peephole",
            "convlstm",
            &[3, 5, 4, 2],
            vec![convlstm([1, 1], Padding::Valid, false, true)],
        ),
        ZooCase {
            name: "tiny_convlstm",
            scope: "stack",
            spec: tiny_convlstm(),
        },
    ]
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct GradCheckRow {
    pub name: String,
    pub scope: String,
    pub max_rel_error: f64,
    pub checked: usize,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub rows: Vec<GradCheckRow>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.passed)
    }

    /// Runs the zoo cases matching `scope` (`"all"` or a layer family) with
    /// randomized weights, inputs and probe.
    pub fn run(scope: &str, tolerance: f64, seed: u64) -> Result<Self> {
        let cases: Vec<ZooCase> = gradient_zoo()
            .into_iter()
            .filter(|c| scope == "all" || c.scope == scope)
            .collect();
        if cases.is_empty() {
            return Err(Error::config(format!(
                "unknown gradient-check scope `{scope}`"
            )));
        }
        let mut rows = Vec::new();
        for (i, case) in cases.into_iter().enumerate() {
            let mut rng = Rng::with_stream(seed, i as u64);
            let mut model = Model::<f64>::new(case.spec.clone(), &mut rng)?;
            for p in model.parameters_mut() {
                *p = Tensor::uniform(p.shape(), -0.5, 0.5, &mut rng)?;
            }
            let x = Tensor::uniform(&case.spec.input_shape, -1.0, 1.0, &mut rng)?;
            let probe = Tensor::uniform(&case.spec.output_shape()?, -1.0, 1.0, &mut rng)?;
            let (a, n) = grad_check(&model, &x, &probe, 1e-5)?;
            let err = max_relative_error(&a, &n);
            rows.push(GradCheckRow {
                name: case.name.into(),
                scope: case.scope.into(),
                max_rel_error: err,
                checked: a.len(),
                passed: err < tolerance,
            });
        }
        Ok(GradCheckReport { tolerance, rows })
    }
}
