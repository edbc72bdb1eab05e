//! Plain-text model definitions.
//!
//! ```text
//! name = my_stack
//! input = 25,128,64,1
//!
//! [conv3d]
//! filters = 30
//! kernel = 5,13,13
//! strides = 5,2,2
//! activation = relu
//!
//! [flatten]
//!
//! [dense]
//! units = 80
//! ```
//!
//! Sections are layers, applied in file order. `#` starts a comment.

use std::collections::BTreeMap;
use std::fmt::Write;
use std::str::FromStr;

use super::{LayerSpec, ModelSpec, INPUT_SHAPE};
use crate::error::{Error, Result};
use crate::tensor::{Activation, Padding};

struct Section {
    kind: String,
    line: usize,
    keys: BTreeMap<String, (usize, String)>,
}

impl Section {
    fn err(&self, msg: impl std::fmt::Display) -> Error {
        Error::config(format!("line {}: [{}] {msg}", self.line, self.kind))
    }

    fn take(&mut self, key: &str) -> Option<(usize, String)> {
        self.keys.remove(key)
    }

    fn parse<T: FromStr>(&mut self, key: &str, default: Option<T>) -> Result<T> {
        match self.take(key) {
            Some((line, v)) => v
                .parse()
                .map_err(|_| Error::config(format!("line {line}: cannot parse `{key} = {v}`"))),
            None => default.ok_or_else(|| self.err(format!("missing `{key}`"))),
        }
    }

    fn list<const N: usize>(
        &mut self,
        key: &str,
        default: Option<[usize; N]>,
    ) -> Result<[usize; N]> {
        match self.take(key) {
            Some((line, v)) => {
                let xs = parse_list(&v)
                    .map_err(|_| Error::config(format!("line {line}: bad list `{v}`")))?;
                xs.try_into()
                    .map_err(|_| Error::config(format!("line {line}: `{key}` needs {N} values")))
            }
            None => default.ok_or_else(|| self.err(format!("missing `{key}`"))),
        }
    }

    fn finish(self, layer: LayerSpec) -> Result<LayerSpec> {
        if let Some((key, (line, _))) = self.keys.into_iter().next() {
            return Err(Error::config(format!(
                "line {line}: unknown key `{key}` for {}",
                layer.kind()
            )));
        }
        Ok(layer)
    }
}

fn parse_list(v: &str) -> std::result::Result<Vec<usize>, std::num::ParseIntError> {
    v.trim_matches(|c| c == '(' || c == ')' || c == '[' || c == ']')
        .split(',')
        .map(|x| x.trim().parse())
        .collect()
}

fn layer_from(mut s: Section) -> Result<LayerSpec> {
    let layer = match s.kind.as_str() {
        "conv3d" => LayerSpec::Conv3d {
            filters: s.parse("filters", None)?,
            kernel: s.list("kernel", None)?,
            strides: s.list("strides", Some([1; 3]))?,
            padding: s.parse("padding", Some(Padding::Same))?,
            activation: s.parse("activation", Some(Activation::Linear))?,
        },
        "maxpool3d" => LayerSpec::Maxpool3d {
            pool: s.list("pool", None)?,
        },
        "dropout" => LayerSpec::Dropout {
            rate: s.parse("rate", None)?,
        },
        "flatten" => LayerSpec::Flatten,
        "reshape" => {
            let (line, v) = s.take("shape").ok_or_else(|| s.err("missing `shape`"))?;
            LayerSpec::Reshape {
                shape: parse_list(&v)
                    .map_err(|_| Error::config(format!("line {line}: bad list `{v}`")))?,
            }
        }
        "dense" => LayerSpec::Dense {
            units: s.parse("units", None)?,
            activation: s.parse("activation", Some(Activation::Linear))?,
        },
        "lstm" | "bilstm" => {
            let units = s.parse("units", None)?;
            let return_sequences = s.parse("return_sequences", Some(false))?;
            let peephole = s.parse("peephole", Some(false))?;
            if s.kind == "lstm" {
                LayerSpec::Lstm {
                    units,
                    return_sequences,
                    peephole,
                }
            } else {
                LayerSpec::Bilstm {
                    units,
                    return_sequences,
                    peephole,
                }
            }
        }
        "convlstm" => LayerSpec::Convlstm {
            filters: s.parse("filters", None)?,
            kernel: s.list("kernel", None)?,
            strides: s.list("strides", Some([1; 2]))?,
            padding: s.parse("padding", Some(Padding::Same))?,
            return_sequences: s.parse("return_sequences", Some(false))?,
            peephole: s.parse("peephole", Some(false))?,
        },
        other => {
            return Err(Error::config(format!(
                "line {}: unknown layer kind `{other}`",
                s.line
            )))
        }
    };
    s.finish(layer)
}

pub(super) fn parse(text: &str) -> Result<ModelSpec> {
    let mut name = None;
    let mut input = None;
    let mut sections: Vec<Section> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(kind) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            sections.push(Section {
                kind: kind.trim().to_ascii_lowercase(),
                line: line_no,
                keys: BTreeMap::new(),
            });
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::config(format!(
                "line {line_no}: expected `key = value`, got `{line}`"
            ))
        })?;
        let (key, value) = (key.trim().to_string(), value.trim().to_string());
        match sections.last_mut() {
            Some(sec) => {
                if sec.keys.insert(key.clone(), (line_no, value)).is_some() {
                    return Err(Error::config(format!(
                        "line {line_no}: duplicate key `{key}`"
                    )));
                }
            }
            None => match key.as_str() {
                "name" => name = Some(value),
                "input" => {
                    input = Some(parse_list(&value).map_err(|_| {
                        Error::config(format!("line {line_no}: bad input shape `{value}`"))
                    })?)
                }
                _ => {
                    return Err(Error::config(format!(
                        "line {line_no}: unknown header key `{key}`"
                    )))
                }
            },
        }
    }
    if sections.is_empty() {
        return Err(Error::config("model config defines no layers"));
    }
    Ok(ModelSpec {
        name: name.unwrap_or_else(|| "custom".into()),
        input_shape: input.unwrap_or_else(|| INPUT_SHAPE.to_vec()),
        layers: sections
            .into_iter()
            .map(layer_from)
            .collect::<Result<_>>()?,
    })
}

fn join(xs: &[usize]) -> String {
    xs.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

pub(super) fn write(spec: &ModelSpec) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "name = {}", spec.name);
    let _ = writeln!(out, "input = {}", join(&spec.input_shape));
    for layer in &spec.layers {
        let _ = writeln!(out, "\n[{}]", layer.kind());
        let lines: Vec<(&str, String)> = match layer {
            LayerSpec::Conv3d {
                filters,
                kernel,
                strides,
                padding,
                activation,
            } => vec![
                ("filters", filters.to_string()),
                ("kernel", join(kernel)),
                ("strides", join(strides)),
                ("padding", padding.to_string()),
                ("activation", activation.to_string()),
            ],
            LayerSpec::Maxpool3d { pool } => vec![("pool", join(pool))],
            LayerSpec::Dropout { rate } => vec![("rate", rate.to_string())],
            LayerSpec::Flatten => vec![],
            LayerSpec::Reshape { shape } => vec![("shape", join(shape))],
            LayerSpec::Dense { units, activation } => {
                vec![
                    ("units", units.to_string()),
                    ("activation", activation.to_string()),
                ]
            }
            LayerSpec::Lstm {
                units,
                return_sequences,
                peephole,
            }
            | LayerSpec::Bilstm {
                units,
                return_sequences,
                peephole,
            } => vec![
                ("units", units.to_string()),
                ("return_sequences", return_sequences.to_string()),
                ("peephole", peephole.to_string()),
            ],
            LayerSpec::Convlstm {
                filters,
                kernel,
                strides,
                padding,
                return_sequences,
                peephole,
            } => vec![
                ("filters", filters.to_string()),
                ("kernel", join(kernel)),
                ("strides", join(strides)),
                ("padding", padding.to_string()),
                ("return_sequences", return_sequences.to_string()),
                ("peephole", peephole.to_string()),
            ],
        };
        for (k, v) in lines {
            let _ = writeln!(out, "{k} = {v}");
        }
    }
    out
}
