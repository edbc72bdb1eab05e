//! Declarative layer stacks: specification, shape inference, parameter
//! counting, the reference architectures, and a runnable [`Model`].

mod builders;
mod config;
mod net;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{ConvLstmParams, LstmParams};
use crate::tensor::{pool_output_dims, Activation, ConvGeometry, Padding};

pub use builders::{
    build_table1, build_table3, build_table3_scaled, scale_width, table3_rows, tiny_convlstm,
    Architecture, Block,
};
pub use net::{LayerParams, Model, Trace};

/// Default per-window input block: 25 frames of 128×64 single-channel images.
pub const INPUT_SHAPE: [usize; 4] = [25, 128, 64, 1];

/// Number of regression targets per window.
pub const TARGETS: usize = 80;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerSpec {
    Conv3d {
        filters: usize,
        kernel: [usize; 3],
        strides: [usize; 3],
        padding: Padding,
        activation: Activation,
    },
    Maxpool3d {
        pool: [usize; 3],
    },
    Dropout {
        rate: f64,
    },
    Flatten,
    Reshape {
        shape: Vec<usize>,
    },
    Dense {
        units: usize,
        activation: Activation,
    },
    Lstm {
        units: usize,
        return_sequences: bool,
        peephole: bool,
    },
    Bilstm {
        units: usize,
        return_sequences: bool,
        peephole: bool,
    },
    Convlstm {
        filters: usize,
        kernel: [usize; 2],
        strides: [usize; 2],
        padding: Padding,
        return_sequences: bool,
        peephole: bool,
    },
}

fn expect_rank(kind: &str, input: &[usize], rank: usize, what: &str) -> Result<()> {
    if input.len() == rank {
        Ok(())
    } else {
        Err(Error::shape(format!(
            "{kind} expects a rank-{rank} {what} input, got {input:?}"
        )))
    }
}

impl LayerSpec {
    pub fn conv3d(filters: usize, kernel: [usize; 3], strides: [usize; 3]) -> Self {
        LayerSpec::Conv3d {
            filters,
            kernel,
            strides,
            padding: Padding::Same,
            activation: Activation::Relu,
        }
    }

    pub fn convlstm(
        filters: usize,
        kernel: [usize; 2],
        strides: [usize; 2],
        return_sequences: bool,
    ) -> Self {
        LayerSpec::Convlstm {
            filters,
            kernel,
            strides,
            padding: Padding::Same,
            return_sequences,
            peephole: false,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv3d { .. } => "conv3d",
            LayerSpec::Maxpool3d { .. } => "maxpool3d",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Reshape { .. } => "reshape",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Lstm { .. } => "lstm",
            LayerSpec::Bilstm { .. } => "bilstm",
            LayerSpec::Convlstm { .. } => "convlstm",
        }
    }

    pub fn has_weights(&self) -> bool {
        matches!(
            self,
            LayerSpec::Conv3d { .. }
                | LayerSpec::Dense { .. }
                | LayerSpec::Lstm { .. }
                | LayerSpec::Bilstm { .. }
                | LayerSpec::Convlstm { .. }
        )
    }

    /// Output shape of this layer for a single sample of shape `input`.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let kind = self.kind();
        match self {
            LayerSpec::Conv3d {
                filters,
                kernel,
                strides,
                padding,
                ..
            } => {
                expect_rank(kind, input, 4, "[time, height, width, channels]")?;
                let g = ConvGeometry::new(*filters, *kernel, *strides, *padding);
                let [t, h, w] = g.output_dims([input[0], input[1], input[2]])?;
                Ok(vec![t, h, w, *filters])
            }
            LayerSpec::Maxpool3d { pool } => {
                expect_rank(kind, input, 4, "[time, height, width, channels]")?;
                let [t, h, w] = pool_output_dims([input[0], input[1], input[2]], *pool)?;
                Ok(vec![t, h, w, input[3]])
            }
            LayerSpec::Dropout { rate } => {
                if !(0.0..1.0).contains(rate) {
                    return Err(Error::config(format!(
                        "dropout rate must be in [0, 1), got {rate}"
                    )));
                }
                Ok(input.to_vec())
            }
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Reshape { shape } => {
                let have: usize = input.iter().product();
                let want: usize = shape.iter().product();
                if have != want || shape.contains(&0) {
                    return Err(Error::shape(format!(
                        "cannot reshape {input:?} ({have} elements) to {shape:?}"
                    )));
                }
                Ok(shape.clone())
            }
            LayerSpec::Dense { units, .. } => {
                expect_rank(kind, input, 1, "feature-vector")?;
                nonzero(kind, *units)?;
                Ok(vec![*units])
            }
            LayerSpec::Lstm {
                units,
                return_sequences,
                ..
            }
            | LayerSpec::Bilstm {
                units,
                return_sequences,
                ..
            } => {
                expect_rank(kind, input, 2, "[time, features]")?;
                nonzero(kind, *units)?;
                let width = if kind == "bilstm" { 2 * units } else { *units };
                Ok(if *return_sequences {
                    vec![input[0], width]
                } else {
                    vec![width]
                })
            }
            LayerSpec::Convlstm {
                filters,
                kernel,
                strides,
                padding,
                return_sequences,
                ..
            } => {
                expect_rank(kind, input, 4, "[time, height, width, channels]")?;
                let g = ConvGeometry::conv2d(4 * filters, *kernel, *strides, *padding);
                let [_, h, w] = g.output_dims([1, input[1], input[2]])?;
                Ok(if *return_sequences {
                    vec![input[0], h, w, *filters]
                } else {
                    vec![h, w, *filters]
                })
            }
        }
    }

    /// Closed-form trainable parameter count given the layer's input shape.
    pub fn param_count(&self, input: &[usize]) -> usize {
        let last = input.last().copied().unwrap_or(0);
        match self {
            LayerSpec::Conv3d {
                filters,
                kernel,
                strides,
                padding,
                ..
            } => ConvGeometry::new(*filters, *kernel, *strides, *padding).param_count(last, true),
            LayerSpec::Dense { units, .. } => last * units + units,
            LayerSpec::Lstm {
                units, peephole, ..
            } => LstmParams::<f64>::count(last, *units, *peephole),
            LayerSpec::Bilstm {
                units, peephole, ..
            } => 2 * LstmParams::<f64>::count(last, *units, *peephole),
            LayerSpec::Convlstm {
                filters,
                kernel,
                peephole,
                ..
            } => ConvLstmParams::<f64>::count(last, *filters, *kernel, *peephole),
            _ => 0,
        }
    }

    /// Short human-readable form, e.g. `Conv3D(30, (5,13,13), strides=(5,2,2))`.
    pub fn describe(&self) -> String {
        let tuple = |xs: &[usize]| {
            xs.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        match self {
            LayerSpec::Conv3d { filters, kernel, strides, padding, activation } => format!(
                "Conv3D({filters}, ({}), strides=({}), {padding}, {activation})",
                tuple(kernel),
                tuple(strides)
            ),
            LayerSpec::Maxpool3d { pool } => format!("MaxPooling3D(({}))", tuple(pool)),
            LayerSpec::Dropout { rate } => format!("Dropout({rate})"),
            LayerSpec::Flatten => "Flatten()".into(),
            LayerSpec::Reshape { shape } => format!("Reshape(({}))", tuple(shape)),
            LayerSpec::Dense { units, activation } => format!("Dense({units}, {activation})"),
            LayerSpec::Lstm { units, return_sequences, peephole } => {
                format!("LSTM({units}, ret_seq={return_sequences}, peephole={peephole})")
            }
            LayerSpec::Bilstm { units, return_sequences, peephole } => {
                format!("Bidirectional(LSTM({units}, ret_seq={return_sequences}, peephole={peephole}))")
            }
            LayerSpec::Convlstm { filters, kernel, strides, padding, return_sequences, peephole } => format!(
                "ConvLSTM2D({filters}, ({}), strides=({}), {padding}, ret_seq={return_sequences}, peephole={peephole})",
                tuple(kernel),
                tuple(strides)
            ),
        }
    }
}

fn nonzero(kind: &str, units: usize) -> Result<()> {
    if units == 0 {
        Err(Error::config(format!("{kind} needs at least one unit")))
    } else {
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

impl ModelSpec {
    pub fn new(name: impl Into<String>, layers: Vec<LayerSpec>) -> Self {
        ModelSpec {
            name: name.into(),
            input_shape: INPUT_SHAPE.to_vec(),
            layers,
        }
    }

    /// Output shape after every layer. Errors carry the index and kind of
    /// the first layer that cannot be applied.
    pub fn infer_shapes(&self) -> Result<Vec<Vec<usize>>> {
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(Error::config(format!(
                "invalid input shape {:?}",
                self.input_shape
            )));
        }
        let mut shapes = Vec::with_capacity(self.layers.len());
        let mut cur = self.input_shape.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            cur = layer
                .output_shape(&cur)
                .map_err(|e| e.in_layer(i, layer.kind()))?;
            shapes.push(cur.clone());
        }
        Ok(shapes)
    }

    /// Input shape seen by each layer.
    pub fn layer_inputs(&self) -> Result<Vec<Vec<usize>>> {
        let shapes = self.infer_shapes()?;
        let mut inputs = vec![self.input_shape.clone()];
        inputs.extend(shapes.into_iter().take(self.layers.len().saturating_sub(1)));
        Ok(inputs)
    }

    pub fn output_shape(&self) -> Result<Vec<usize>> {
        Ok(self
            .infer_shapes()?
            .pop()
            .unwrap_or_else(|| self.input_shape.clone()))
    }

    /// Per-layer parameter counts in layer order.
    pub fn layer_param_counts(&self) -> Result<Vec<usize>> {
        Ok(self
            .layers
            .iter()
            .zip(self.layer_inputs()?)
            .map(|(l, input)| l.param_count(&input))
            .collect())
    }

    pub fn count_params(&self) -> Result<usize> {
        Ok(self.layer_param_counts()?.iter().sum())
    }

    /// Weight-bearing layers below the output layer.
    pub fn hidden_weight_layers(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| l.has_weights())
            .count()
            .saturating_sub(1)
    }

    pub fn from_config(text: &str) -> Result<Self> {
        config::parse(text)
    }

    pub fn to_config(&self) -> String {
        config::write(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pool_geometry_error_names_axis() {
        let spec = ModelSpec {
            name: "p".into(),
            input_shape: vec![2, 3, 4, 1],
            layers: vec![LayerSpec::Maxpool3d { pool: [1, 4, 1] }],
        };
        let msg = spec.infer_shapes().unwrap_err().to_string();
        assert!(
            msg.contains("layer 0 (maxpool3d)") && msg.contains("height"),
            "{msg}"
        );
    }

    #[test]
    fn dense_requires_flat_input() {
        let spec = ModelSpec {
            name: "d".into(),
            input_shape: vec![2, 3],
            layers: vec![LayerSpec::Dense {
                units: 4,
                activation: Activation::Linear,
            }],
        };
        assert!(matches!(spec.infer_shapes(), Err(Error::Shape(_))));
    }

    #[test]
    fn reshape_count_mismatch() {
        let spec = ModelSpec {
            name: "r".into(),
            input_shape: vec![5, 2, 2, 85],
            layers: vec![LayerSpec::Reshape {
                shape: vec![5, 341],
            }],
        };
        assert!(matches!(spec.infer_shapes(), Err(Error::Shape(_))));
    }

    #[test]
    fn spot_counts() {
        assert_eq!(
            LayerSpec::conv3d(30, [5, 13, 13], [5, 2, 2]).param_count(&[25, 128, 64, 1]),
            25_380
        );
        let dense = LayerSpec::Dense {
            units: 80,
            activation: Activation::Linear,
        };
        assert_eq!(dense.param_count(&[500]), 40_080);
        assert_eq!(
            LayerSpec::convlstm(64, [3, 3], [2, 2], false).param_count(&[5, 8, 8, 90]),
            355_072
        );
    }
}
