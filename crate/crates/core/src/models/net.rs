//! A built [`ModelSpec`] with weights: per-sample forward and backward
//! passes over the whole stack.

use super::{LayerSpec, ModelSpec};
use crate::error::{Error, Result};
use crate::layers::init::glorot_uniform;
use crate::layers::{
    dense_backward, dense_forward, dropout, dropout_backward, BiLstmCache, BiLstmParams,
    ConvLstmCache, ConvLstmParams, DropoutMask, LstmCache, LstmParams, Mode,
};
use crate::tensor::{
    conv3d_forward, conv_backward_raw, maxpool3d, maxpool3d_backward, ConvDims, ConvGeometry,
    PoolIndices, Real, Rng, Tensor,
};

/// Weights of one layer. Layers without weights are `Stateless`.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerParams<T> {
    Stateless,
    Conv3d { weights: Tensor<T>, bias: Tensor<T> },
    Dense { weights: Tensor<T>, bias: Tensor<T> },
    Lstm(LstmParams<T>),
    BiLstm(BiLstmParams<T>),
    ConvLstm(ConvLstmParams<T>),
}

impl<T: Real> LayerParams<T> {
    fn init(layer: &LayerSpec, input: &[usize], rng: Option<&mut Rng>) -> Result<Self> {
        let cin = input.last().copied().unwrap_or(0);
        Ok(match (layer, rng) {
            (
                LayerSpec::Conv3d {
                    filters, kernel, ..
                },
                rng,
            ) => {
                let shape = [kernel[0], kernel[1], kernel[2], cin, *filters];
                let area: usize = kernel.iter().product();
                LayerParams::Conv3d {
                    weights: match rng {
                        Some(r) => glorot_uniform(&shape, area * cin, area * filters, r)?,
                        None => Tensor::zeros(&shape)?,
                    },
                    bias: Tensor::zeros(&[*filters])?,
                }
            }
            (LayerSpec::Dense { units, .. }, rng) => LayerParams::Dense {
                weights: match rng {
                    Some(r) => glorot_uniform(&[cin, *units], cin, *units, r)?,
                    None => Tensor::zeros(&[cin, *units])?,
                },
                bias: Tensor::zeros(&[*units])?,
            },
            (
                LayerSpec::Lstm {
                    units, peephole, ..
                },
                Some(r),
            ) => LayerParams::Lstm(LstmParams::init(cin, *units, *peephole, r)?),
            (
                LayerSpec::Lstm {
                    units, peephole, ..
                },
                None,
            ) => LayerParams::Lstm(LstmParams::zeros(cin, *units, *peephole)?),
            (
                LayerSpec::Bilstm {
                    units, peephole, ..
                },
                Some(r),
            ) => LayerParams::BiLstm(BiLstmParams::new(
                LstmParams::init(cin, *units, *peephole, r)?,
                LstmParams::init(cin, *units, *peephole, r)?,
            )?),
            (
                LayerSpec::Bilstm {
                    units, peephole, ..
                },
                None,
            ) => LayerParams::BiLstm(BiLstmParams::new(
                LstmParams::zeros(cin, *units, *peephole)?,
                LstmParams::zeros(cin, *units, *peephole)?,
            )?),
            (
                LayerSpec::Convlstm {
                    filters,
                    kernel,
                    strides,
                    padding,
                    peephole,
                    ..
                },
                rng,
            ) => LayerParams::ConvLstm(match rng {
                Some(r) => {
                    ConvLstmParams::init(cin, *filters, *kernel, *strides, *padding, *peephole, r)?
                }
                None => {
                    ConvLstmParams::zeros(cin, *filters, *kernel, *strides, *padding, *peephole)?
                }
            }),
            _ => LayerParams::Stateless,
        })
    }

    /// Named weight tensors in a fixed order.
    pub fn named(&self) -> Vec<(String, &Tensor<T>)> {
        fn lstm<'a, T: Real>(prefix: &str, p: &'a LstmParams<T>) -> Vec<(String, &'a Tensor<T>)> {
            let mut v = vec![
                (format!("{prefix}w_x"), &p.w_x),
                (format!("{prefix}w_h"), &p.w_h),
                (format!("{prefix}bias"), &p.bias),
            ];
            if let Some(pp) = &p.peephole {
                v.push((format!("{prefix}peephole"), pp));
            }
            v
        }
        match self {
            LayerParams::Stateless => vec![],
            LayerParams::Conv3d { weights, bias } | LayerParams::Dense { weights, bias } => {
                vec![("weights".into(), weights), ("bias".into(), bias)]
            }
            LayerParams::Lstm(p) => lstm("", p),
            LayerParams::BiLstm(p) => {
                let mut v = lstm("forward.", &p.forward);
                v.extend(lstm("backward.", &p.backward));
                v
            }
            LayerParams::ConvLstm(p) => {
                let mut v = vec![
                    ("w_x".to_string(), &p.w_x),
                    ("w_h".to_string(), &p.w_h),
                    ("bias".to_string(), &p.bias),
                ];
                if let Some(pp) = &p.peephole {
                    v.push(("peephole".into(), pp));
                }
                v
            }
        }
    }

    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        self.named().into_iter().map(|(_, t)| t).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        match self {
            LayerParams::Stateless => vec![],
            LayerParams::Conv3d { weights, bias } | LayerParams::Dense { weights, bias } => {
                vec![weights, bias]
            }
            LayerParams::Lstm(p) => p.tensors_mut(),
            LayerParams::BiLstm(p) => {
                let mut v = p.forward.tensors_mut();
                v.extend(p.backward.tensors_mut());
                v
            }
            LayerParams::ConvLstm(p) => p.tensors_mut(),
        }
    }
}

enum LayerCache<T> {
    Conv { input: Tensor<T>, output: Tensor<T> },
    Pool(PoolIndices),
    Dropout(Option<DropoutMask<T>>),
    Reshape(Vec<usize>),
    Dense { input: Tensor<T>, output: Tensor<T> },
    Lstm(LstmCache<T>),
    BiLstm(BiLstmCache<T>),
    ConvLstm(ConvLstmCache<T>),
}

/// Intermediate values of one forward pass, consumed by [`Model::backward`].
pub struct Trace<T> {
    caches: Vec<LayerCache<T>>,
    pub output: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct Model<T> {
    spec: ModelSpec,
    layers: Vec<LayerParams<T>>,
    pub mode: Mode,
}

impl<T: Real> Model<T> {
    /// Builds and initializes every layer from one seeded stream, in layer
    /// order.
    pub fn new(spec: ModelSpec, rng: &mut Rng) -> Result<Self> {
        Self::build(spec, Some(rng))
    }

    /// Same structure with all weights zero.
    pub fn zeros(spec: ModelSpec) -> Result<Self> {
        Self::build(spec, None)
    }

    fn build(spec: ModelSpec, mut rng: Option<&mut Rng>) -> Result<Self> {
        let inputs = spec.layer_inputs()?;
        let layers = spec
            .layers
            .iter()
            .zip(&inputs)
            .enumerate()
            .map(|(i, (l, input))| {
                LayerParams::init(l, input, rng.as_deref_mut()).map_err(|e| e.in_layer(i, l.kind()))
            })
            .collect::<Result<_>>()?;
        Ok(Model {
            spec,
            layers,
            mode: Mode::Eval,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[LayerParams<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerParams<T>] {
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.parameters().iter().map(|t| t.len()).sum()
    }

    /// All weight tensors, layer by layer.
    pub fn parameters(&self) -> Vec<&Tensor<T>> {
        self.layers.iter().flat_map(|l| l.tensors()).collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.tensors_mut())
            .collect()
    }

    /// Parameter names of the form `03_conv3d.weights`, in [`Self::parameters`] order.
    pub fn parameter_names(&self) -> Vec<String> {
        self.layers
            .iter()
            .zip(&self.spec.layers)
            .enumerate()
            .flat_map(|(i, (p, l))| {
                p.named()
                    .into_iter()
                    .map(move |(n, _)| format!("{i:02}_{}.{n}", l.kind()))
            })
            .collect()
    }

    /// Zero tensors shaped like [`Self::parameters`], for gradient accumulation.
    pub fn zero_grads(&self) -> Vec<Tensor<T>> {
        self.parameters().iter().map(|t| t.zeros_like()).collect()
    }

    /// Copies weights into another precision.
    pub fn cast<U: Real>(&self) -> Model<U> {
        let mut out = Model::<U>::zeros(self.spec.clone()).expect("spec already validated");
        for (dst, src) in out.parameters_mut().into_iter().zip(self.parameters()) {
            *dst = src.cast();
        }
        out.mode = self.mode;
        out
    }

    /// Forward pass on one sample shaped like `spec.input_shape`. Dropout
    /// draws from `rng` in training mode.
    pub fn forward(&self, x: &Tensor<T>, rng: &mut Rng) -> Result<Trace<T>> {
        self.run(x, self.mode, rng)
    }

    /// Eval-mode output for one sample, whatever `self.mode` is.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.run(x, Mode::Eval, &mut Rng::new(0))?.output)
    }

    fn run(&self, x: &Tensor<T>, mode: Mode, rng: &mut Rng) -> Result<Trace<T>> {
        if x.shape() != self.spec.input_shape.as_slice() {
            return Err(Error::Input(format!(
                "model `{}` expects input {:?}, got {:?}",
                self.spec.name,
                self.spec.input_shape,
                x.shape()
            )));
        }
        let mut h = x.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for (i, (spec, params)) in self.spec.layers.iter().zip(&self.layers).enumerate() {
            let (next, cache) = forward_layer(spec, params, h, mode, rng)
                .map_err(|e| e.in_layer(i, spec.kind()))?;
            h = next;
            caches.push(cache);
        }
        Ok(Trace { caches, output: h })
    }

    /// Backpropagates `grad_out` (gradient of the loss with respect to the
    /// model output) through a trace and adds the parameter gradients into
    /// `grads`, laid out as [`Self::zero_grads`]. Returns the input
    /// gradient when `want_input_grad` is set.
    pub fn backward(
        &self,
        trace: &Trace<T>,
        grad_out: &Tensor<T>,
        grads: &mut [Tensor<T>],
        want_input_grad: bool,
    ) -> Result<Option<Tensor<T>>> {
        if grad_out.shape() != trace.output.shape() {
            return Err(Error::shape(format!(
                "output gradient {:?} does not match output {:?}",
                grad_out.shape(),
                trace.output.shape()
            )));
        }
        let counts: Vec<usize> = self.layers.iter().map(|l| l.tensors().len()).collect();
        if grads.len() != counts.iter().sum::<usize>() {
            return Err(Error::shape(
                "gradient buffer does not match the model parameters",
            ));
        }
        let mut offset = grads.len();
        let mut g = grad_out.clone();
        for i in (0..self.layers.len()).rev() {
            offset -= counts[i];
            let slot = &mut grads[offset..offset + counts[i]];
            let need_input = i > 0 || want_input_grad;
            let spec = &self.spec.layers[i];
            match self.backward_layer(i, &trace.caches[i], g, slot, need_input) {
                Ok(Some(next)) => g = next,
                Ok(None) => return Ok(None),
                Err(e) => return Err(e.in_layer(i, spec.kind())),
            }
        }
        Ok(Some(g))
    }

    fn backward_layer(
        &self,
        i: usize,
        cache: &LayerCache<T>,
        mut g: Tensor<T>,
        slot: &mut [Tensor<T>],
        need_input: bool,
    ) -> Result<Option<Tensor<T>>> {
        let spec = &self.spec.layers[i];
        let params = &self.layers[i];
        let accumulate = |slot: &mut [Tensor<T>], lp: &LayerParams<T>| -> Result<()> {
            for (acc, t) in slot.iter_mut().zip(lp.tensors()) {
                acc.add_assign(t)?;
            }
            Ok(())
        };
        Ok(Some(match (spec, params, cache) {
            (
                LayerSpec::Conv3d {
                    filters,
                    kernel,
                    strides,
                    padding,
                    activation,
                },
                LayerParams::Conv3d { weights, .. },
                LayerCache::Conv { input, output },
            ) => {
                activation.backprop_in_place(output.data(), g.data_mut());
                let geom = ConvGeometry::new(*filters, *kernel, *strides, *padding);
                let s = input.shape();
                let d = ConvDims::new([s[0], s[1], s[2], s[3]], &geom)?;
                let mut gi = if need_input {
                    Some(input.zeros_like())
                } else {
                    None
                };
                let (gw, gb) = slot.split_at_mut(1);
                conv_backward_raw(
                    &d,
                    input.data(),
                    weights.data(),
                    g.data(),
                    gi.as_mut().map(|t| t.data_mut()),
                    gw[0].data_mut(),
                    Some(gb[0].data_mut()),
                );
                match gi {
                    Some(t) => t,
                    None => return Ok(None),
                }
            }
            (LayerSpec::Maxpool3d { .. }, _, LayerCache::Pool(idx)) => maxpool3d_backward(&g, idx)?,
            (LayerSpec::Dropout { .. }, _, LayerCache::Dropout(mask)) => {
                dropout_backward(&g, mask.as_ref())
            }
            (_, _, LayerCache::Reshape(prev)) => g.into_shape(prev)?,
            (
                LayerSpec::Dense { activation, .. },
                LayerParams::Dense { weights, .. },
                LayerCache::Dense { input, output },
            ) => {
                let u = g.len();
                let dg =
                    dense_backward(input, weights, output, *activation, &g.into_shape(&[1, u])?)?;
                slot[0].add_assign(&dg.weights)?;
                slot[1].add_assign(&dg.bias)?;
                let d = dg.input.len();
                dg.input.into_shape(&[d])?
            }
            (_, LayerParams::Lstm(p), LayerCache::Lstm(c)) => {
                let (dx, gp) = p.backward(c, &g)?;
                accumulate(slot, &LayerParams::Lstm(gp))?;
                dx
            }
            (_, LayerParams::BiLstm(p), LayerCache::BiLstm(c)) => {
                let (dx, gp) = p.backward(c, &g)?;
                accumulate(slot, &LayerParams::BiLstm(gp))?;
                dx
            }
            (_, LayerParams::ConvLstm(p), LayerCache::ConvLstm(c)) => {
                let (dx, gp) = p.backward(c, &g)?;
                accumulate(slot, &LayerParams::ConvLstm(gp))?;
                dx
            }
            _ => return Err(Error::config("trace does not belong to this model")),
        }))
    }
}

fn forward_layer<T: Real>(
    spec: &LayerSpec,
    params: &LayerParams<T>,
    h: Tensor<T>,
    mode: Mode,
    rng: &mut Rng,
) -> Result<(Tensor<T>, LayerCache<T>)> {
    Ok(match (spec, params) {
        (
            LayerSpec::Conv3d {
                filters,
                kernel,
                strides,
                padding,
                activation,
            },
            LayerParams::Conv3d { weights, bias },
        ) => {
            let geom = ConvGeometry::new(*filters, *kernel, *strides, *padding);
            let mut y = conv3d_forward(&h, weights, bias, &geom)?;
            activation.apply_in_place(y.data_mut());
            (
                y.clone(),
                LayerCache::Conv {
                    input: h,
                    output: y,
                },
            )
        }
        (LayerSpec::Maxpool3d { pool }, _) => {
            let (y, idx) = maxpool3d(&h, *pool)?;
            (y, LayerCache::Pool(idx))
        }
        (LayerSpec::Dropout { rate }, _) => {
            let (y, mask) = dropout(&h, *rate, mode, rng)?;
            (y, LayerCache::Dropout(mask))
        }
        (LayerSpec::Flatten, _) => {
            let shape = h.shape().to_vec();
            let n = h.len();
            (h.into_shape(&[n])?, LayerCache::Reshape(shape))
        }
        (LayerSpec::Reshape { shape }, _) => {
            let prev = h.shape().to_vec();
            (h.into_shape(shape)?, LayerCache::Reshape(prev))
        }
        (LayerSpec::Dense { activation, .. }, LayerParams::Dense { weights, bias }) => {
            let d = h.len();
            let input = h.into_shape(&[1, d])?;
            let output = dense_forward(&input, weights, bias, *activation)?;
            let u = output.len();
            (output.reshape(&[u])?, LayerCache::Dense { input, output })
        }
        (
            LayerSpec::Lstm {
                return_sequences, ..
            },
            LayerParams::Lstm(p),
        ) => {
            let (y, c) = p.forward(&h, *return_sequences)?;
            (y, LayerCache::Lstm(c))
        }
        (
            LayerSpec::Bilstm {
                return_sequences, ..
            },
            LayerParams::BiLstm(p),
        ) => {
            let (y, c) = p.forward(&h, *return_sequences)?;
            (y, LayerCache::BiLstm(c))
        }
        (
            LayerSpec::Convlstm {
                return_sequences, ..
            },
            LayerParams::ConvLstm(p),
        ) => {
            let (y, c) = p.forward(&h, *return_sequences)?;
            (y, LayerCache::ConvLstm(c))
        }
        _ => return Err(Error::config("layer parameters do not match the spec")),
    })
}
