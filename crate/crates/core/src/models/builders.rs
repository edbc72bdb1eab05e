use std::fmt;
use std::str::FromStr;

use super::{LayerSpec, ModelSpec, TARGETS};
use crate::error::{Error, Result};
use crate::tensor::Activation;

/// Time stride of the first convolution: 25 frames become 5 blocks.
pub const TIME_STRIDE: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Architecture {
    Cnn3d,
    Cnn3dBilstm,
    Cnn3dConvlstm,
}

impl Architecture {
    pub const ALL: [Architecture; 3] = [
        Architecture::Cnn3d,
        Architecture::Cnn3dBilstm,
        Architecture::Cnn3dConvlstm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::Cnn3d => "cnn3d",
            Architecture::Cnn3dBilstm => "cnn3d_bilstm",
            Architecture::Cnn3dConvlstm => "cnn3d_convlstm",
        }
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Architecture::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::config(format!("unknown architecture `{s}`")))
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn dropout(rate: f64) -> LayerSpec {
    LayerSpec::Dropout { rate }
}

fn pool(p: [usize; 3]) -> LayerSpec {
    LayerSpec::Maxpool3d { pool: p }
}

fn dense(units: usize, activation: Activation) -> LayerSpec {
    LayerSpec::Dense { units, activation }
}

/// The three reference stacks at full width.
pub fn build_table1(arch: Architecture) -> ModelSpec {
    let s = TIME_STRIDE;
    let layers = match arch {
        Architecture::Cnn3d | Architecture::Cnn3dBilstm => {
            let mut l = vec![
                LayerSpec::conv3d(30, [5, 13, 13], [s, 2, 2]),
                dropout(0.3),
                LayerSpec::conv3d(60, [1, 13, 13], [1, 2, 2]),
                dropout(0.3),
                pool([1, 2, 2]),
                LayerSpec::conv3d(90, [1, 13, 13], [1, 2, 1]),
                dropout(0.3),
                LayerSpec::conv3d(85, [1, 13, 13], [1, 2, 2]),
                dropout(0.3),
                pool([1, 2, 2]),
            ];
            if arch == Architecture::Cnn3d {
                l.extend([
                    LayerSpec::Flatten,
                    dense(500, Activation::Relu),
                    dropout(0.3),
                ]);
            } else {
                l.extend([
                    LayerSpec::Reshape {
                        shape: vec![5, 340],
                    },
                    LayerSpec::Bilstm {
                        units: 320,
                        return_sequences: false,
                        peephole: false,
                    },
                ]);
            }
            l.push(dense(TARGETS, Activation::Linear));
            l
        }
        Architecture::Cnn3dConvlstm => vec![
            LayerSpec::conv3d(30, [5, 13, 13], [s, 2, 2]),
            dropout(0.35),
            LayerSpec::conv3d(60, [1, 13, 13], [1, 2, 2]),
            dropout(0.35),
            pool([1, 2, 1]),
            LayerSpec::conv3d(90, [1, 13, 13], [1, 2, 2]),
            dropout(0.35),
            LayerSpec::convlstm(64, [3, 3], [2, 2], false),
            LayerSpec::Flatten,
            dense(TARGETS, Activation::Linear),
        ],
    };
    ModelSpec::new(arch.name(), layers)
}

/// Divides every filter and unit count by `divisor`, rounding up. The
/// output layer keeps its width and reshape targets follow the new
/// feature count.
pub fn scale_width(spec: &ModelSpec, divisor: usize) -> Result<ModelSpec> {
    if divisor == 0 {
        return Err(Error::config("width divisor must be at least 1"));
    }
    let sc = |n: usize| n.div_ceil(divisor);
    let last_weighted = spec.layers.iter().rposition(LayerSpec::has_weights);
    let mut out = spec.clone();
    let mut cur = spec.input_shape.clone();
    for (i, layer) in out.layers.iter_mut().enumerate() {
        match layer {
            LayerSpec::Conv3d { filters, .. } | LayerSpec::Convlstm { filters, .. } => {
                *filters = sc(*filters)
            }
            LayerSpec::Dense { units, .. } if Some(i) != last_weighted => *units = sc(*units),
            LayerSpec::Lstm { units, .. } | LayerSpec::Bilstm { units, .. } => *units = sc(*units),
            LayerSpec::Reshape { shape } => {
                let total: usize = cur.iter().product();
                let lead: usize = shape[..shape.len() - 1].iter().product();
                if lead > 0 && total.is_multiple_of(lead) {
                    *shape.last_mut().unwrap() = total / lead;
                }
            }
            _ => {}
        }
        cur = layer
            .output_shape(&cur)
            .map_err(|e| e.in_layer(i, layer.kind()))?;
    }
    Ok(out)
}

/// Layer type at one of the four hidden positions of a grid stack.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Block {
    C3d,
    Clstm,
}

impl FromStr for Block {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "C3D" | "CONV3D" => Ok(Block::C3d),
            "CLSTM" | "CONVLSTM" => Ok(Block::Clstm),
            other => Err(Error::config(format!(
                "unknown layer token `{other}`, expected C3D or CLSTM"
            ))),
        }
    }
}

impl fmt::Display for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Block::C3d => "C3D",
            Block::Clstm => "CLSTM",
        })
    }
}

/// The seven Conv3D/ConvLSTM combinations of the grid sweep.
pub fn table3_rows() -> Vec<Vec<Block>> {
    use Block::{C3d as C, Clstm as L};
    vec![
        vec![L, L, L, L],
        vec![L, L, L],
        vec![C, L, L, L],
        vec![C, C, L, L],
        vec![C, C, C, L],
        vec![C, L, C, L],
        vec![L, C, C, L],
    ]
}

const BEST: [Block; 4] = [Block::C3d, Block::C3d, Block::C3d, Block::Clstm];

/// Conv3D geometry for each hidden position: filters, kernel, strides.
const POSITIONS: [(usize, [usize; 3], [usize; 3]); 4] = [
    (30, [5, 13, 13], [TIME_STRIDE, 2, 2]),
    (60, [1, 13, 13], [1, 2, 2]),
    (90, [1, 13, 13], [1, 2, 2]),
    (85, [1, 13, 13], [1, 2, 2]),
];

const GRID_DROPOUT: f64 = 0.35;

fn assemble(combo: &[Block], divisor: usize, units: usize) -> ModelSpec {
    let sc = |n: usize| n.div_ceil(divisor);
    let top = combo.len() - 1;
    let mut layers = Vec::new();
    for (pos, &block) in combo.iter().enumerate() {
        let (filters, kernel, strides) = POSITIONS[pos];
        match block {
            Block::C3d => layers.push(LayerSpec::conv3d(sc(filters), kernel, strides)),
            Block::Clstm => layers.push(LayerSpec::convlstm(
                units,
                [3, 3],
                [strides[1], strides[2]],
                pos != top,
            )),
        }
        if pos != top || block == Block::C3d {
            layers.push(dropout(GRID_DROPOUT));
        }
        if pos == 1 {
            layers.push(pool([1, 2, 1]));
        }
    }
    layers.push(LayerSpec::Flatten);
    if combo[top] == Block::C3d {
        layers.extend([dense(sc(500), Activation::Relu), dropout(GRID_DROPOUT)]);
    }
    layers.push(dense(TARGETS, Activation::Linear));
    let name = if combo == BEST {
        Architecture::Cnn3dConvlstm.name().to_string()
    } else {
        let tokens: Vec<String> = combo.iter().map(|b| b.to_string()).collect();
        format!("grid_{}", tokens.join("-"))
    };
    ModelSpec::new(name, layers)
}

/// A full-width grid stack; see [`build_table3_scaled`].
pub fn build_table3(combo: &[Block]) -> Result<ModelSpec> {
    build_table3_scaled(combo, 1)
}

/// Grid stack for a 3 or 4 token combination. Conv3D positions reuse the
/// reference geometry; a ConvLSTM position uses a 3×3 kernel with that
/// position's spatial stride. Every ConvLSTM below the top returns full
/// sequences. The winning combination reproduces the ConvLSTM reference
/// stack; other rows get a single ConvLSTM width chosen so the total
/// parameter count is as close as possible to the baseline 3D-CNN.
pub fn build_table3_scaled(combo: &[Block], divisor: usize) -> Result<ModelSpec> {
    if !(3..=4).contains(&combo.len()) {
        return Err(Error::config(format!(
            "a grid row needs 3 or 4 layer tokens, got {}",
            combo.len()
        )));
    }
    if divisor == 0 {
        return Err(Error::config("width divisor must be at least 1"));
    }
    if combo == BEST {
        return Ok(assemble(combo, divisor, 64usize.div_ceil(divisor)));
    }
    let target = scale_width(&build_table1(Architecture::Cnn3d), divisor)?.count_params()? as i64;
    let mut best: Option<(i64, ModelSpec)> = None;
    for units in 1..=1024 {
        let spec = assemble(combo, divisor, units);
        let count = spec.count_params()? as i64;
        let gap = (count - target).abs();
        if best.as_ref().is_none_or(|(g, _)| gap < *g) {
            best = Some((gap, spec));
        }
        if count > target {
            break;
        }
    }
    Ok(best.expect("unit search visits at least one width").1)
}

/// A small ConvLSTM stack on `[10, 16, 8, 1]` inputs for gradient checks:
/// reference layer order with 3×3 spatial kernels and a handful of filters.
pub fn tiny_convlstm() -> ModelSpec {
    ModelSpec {
        name: "tiny_convlstm".into(),
        input_shape: vec![10, 16, 8, 1],
        layers: vec![
            LayerSpec::conv3d(2, [5, 3, 3], [TIME_STRIDE, 2, 2]),
            dropout(0.35),
            LayerSpec::conv3d(3, [1, 3, 3], [1, 1, 1]),
            dropout(0.35),
            pool([1, 2, 1]),
            LayerSpec::conv3d(3, [1, 3, 3], [1, 1, 1]),
            dropout(0.35),
            LayerSpec::convlstm(2, [3, 3], [2, 2], false),
            LayerSpec::Flatten,
            dense(TARGETS, Activation::Linear),
        ],
    }
}
