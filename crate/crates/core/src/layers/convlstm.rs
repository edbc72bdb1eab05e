//! Convolutional LSTM: the LSTM recurrences with every matrix product
//! replaced by a 2D convolution. The input convolution carries the layer's
//! stride and padding; the recurrent convolution is stride 1 with same
//! padding so the state keeps its spatial shape. Peephole weights are one
//! scalar per channel, broadcast over space.

use super::init::{glorot_uniform, orthogonal};
use super::lstm::{lstm_cell, lstm_cell_backward};
use crate::error::{Error, Result};
use crate::tensor::{
    conv_backward_raw, conv_forward_raw, ConvDims, ConvGeometry, Padding, Real, Rng, Tensor,
};

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLstmParams<T> {
    pub kernel: [usize; 2],
    pub strides: [usize; 2],
    pub padding: Padding,
    /// `[kh, kw, cin, 4u]`, gate blocks i, f, c, o.
    pub w_x: Tensor<T>,
    /// `[kh, kw, u, 4u]`.
    pub w_h: Tensor<T>,
    pub bias: Tensor<T>,
    /// `[3, u]`: input, forget, output gates.
    pub peephole: Option<Tensor<T>>,
}

#[derive(Clone, Debug)]
pub struct ConvLstmCache<T> {
    x: Tensor<T>,
    in_dims: ConvDims,
    gates: Vec<T>,
    hs: Vec<T>,
    cs: Vec<T>,
    return_sequences: bool,
}

impl<T: Real> ConvLstmParams<T> {
    pub fn zeros(
        in_channels: usize,
        units: usize,
        kernel: [usize; 2],
        strides: [usize; 2],
        padding: Padding,
        peephole: bool,
    ) -> Result<Self> {
        let [kh, kw] = kernel;
        Ok(ConvLstmParams {
            kernel,
            strides,
            padding,
            w_x: Tensor::zeros(&[kh, kw, in_channels, 4 * units])?,
            w_h: Tensor::zeros(&[kh, kw, units, 4 * units])?,
            bias: Tensor::zeros(&[4 * units])?,
            peephole: if peephole {
                Some(Tensor::zeros(&[3, units])?)
            } else {
                None
            },
        })
    }

    pub fn init(
        in_channels: usize,
        units: usize,
        kernel: [usize; 2],
        strides: [usize; 2],
        padding: Padding,
        peephole: bool,
        rng: &mut Rng,
    ) -> Result<Self> {
        let mut p = Self::zeros(in_channels, units, kernel, strides, padding, peephole)?;
        let [kh, kw] = kernel;
        let area = kh * kw;
        p.w_x = glorot_uniform(
            &[kh, kw, in_channels, 4 * units],
            area * in_channels,
            area * 4 * units,
            rng,
        )?;
        p.w_h = orthogonal::<T>(area * units, 4 * units, rng)?.into_shape(&[
            kh,
            kw,
            units,
            4 * units,
        ])?;
        p.bias.data_mut()[units..2 * units].fill(T::one());
        Ok(p)
    }

    pub fn units(&self) -> usize {
        self.bias.len() / 4
    }

    pub fn in_channels(&self) -> usize {
        self.w_x.shape()[2]
    }

    /// `4 u kh kw (cin + u) + 4u`, plus `3u` with peepholes.
    pub fn count(in_channels: usize, units: usize, kernel: [usize; 2], peephole: bool) -> usize {
        4 * units * kernel[0] * kernel[1] * (in_channels + units)
            + 4 * units
            + if peephole { 3 * units } else { 0 }
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut v = vec![&self.w_x, &self.w_h, &self.bias];
        v.extend(self.peephole.as_ref());
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v = vec![&mut self.w_x, &mut self.w_h, &mut self.bias];
        v.extend(self.peephole.as_mut());
        v
    }

    pub fn input_geometry(&self) -> ConvGeometry {
        ConvGeometry::conv2d(4 * self.units(), self.kernel, self.strides, self.padding)
    }

    fn recurrent_geometry(&self) -> ConvGeometry {
        ConvGeometry::conv2d(4 * self.units(), self.kernel, [1, 1], Padding::Same)
    }

    /// `[H', W', u]` for an `[H, W, cin]` input frame.
    pub fn state_shape(&self, height: usize, width: usize) -> Result<[usize; 3]> {
        let [_, h, w] = self.input_geometry().output_dims([1, height, width])?;
        Ok([h, w, self.units()])
    }

    fn input_dims(&self, x_shape: &[usize]) -> Result<ConvDims> {
        match *x_shape {
            [t, h, w, c] if c == self.in_channels() => {
                ConvDims::new([t, h, w, c], &self.input_geometry())
            }
            _ => Err(Error::Input(format!(
                "convlstm expects [time, height, width, {}], got {x_shape:?}",
                self.in_channels()
            ))),
        }
    }

    /// One step on `x_t: [H, W, cin]` with explicit previous state.
    pub fn step(
        &self,
        x_t: &Tensor<T>,
        h_prev: &Tensor<T>,
        c_prev: &Tensor<T>,
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        let xs = x_t.shape();
        if xs.len() != 3 {
            return Err(Error::shape(format!(
                "convlstm step expects [H, W, cin], got {xs:?}"
            )));
        }
        let in_dims = self.input_dims(&[1, xs[0], xs[1], xs[2]])?;
        let state = [in_dims.out[1], in_dims.out[2], self.units()];
        if h_prev.shape() != state || c_prev.shape() != state {
            return Err(Error::shape(format!(
                "convlstm state must be {state:?}, got h {:?} and c {:?}",
                h_prev.shape(),
                c_prev.shape()
            )));
        }
        let u = self.units();
        let spatial = state[0] * state[1];
        let mut pre = vec![T::zero(); spatial * 4 * u];
        conv_forward_raw(
            &in_dims,
            x_t.data(),
            self.w_x.data(),
            Some(self.bias.data()),
            &mut pre,
        );
        let rec = ConvDims::new([1, state[0], state[1], u], &self.recurrent_geometry())?;
        let mut tmp = vec![T::zero(); spatial * 4 * u];
        conv_forward_raw(&rec, h_prev.data(), self.w_h.data(), None, &mut tmp);
        for (p, &r) in pre.iter_mut().zip(&tmp) {
            *p += r;
        }
        let peep = self.peephole.as_ref().map(|p| p.data());
        let mut h = vec![T::zero(); spatial * u];
        let mut c = vec![T::zero(); spatial * u];
        for s in 0..spatial {
            lstm_cell(
                &mut pre[s * 4 * u..(s + 1) * 4 * u],
                peep,
                &c_prev.data()[s * u..(s + 1) * u],
                &mut c[s * u..(s + 1) * u],
                &mut h[s * u..(s + 1) * u],
            );
        }
        Ok((Tensor::new(&state, h)?, Tensor::new(&state, c)?))
    }

    /// Runs from zero state over `[T, H, W, cin]`; returns `[T, H', W', u]`
    /// with `return_sequences`, else the final `[H', W', u]`.
    pub fn forward(
        &self,
        x_seq: &Tensor<T>,
        return_sequences: bool,
    ) -> Result<(Tensor<T>, ConvLstmCache<T>)> {
        let in_dims = self.input_dims(x_seq.shape())?;
        let steps = in_dims.input[0];
        let [_, oh, ow] = in_dims.out;
        let u = self.units();
        let u4 = 4 * u;
        let spatial = oh * ow;
        let frame = spatial * u;
        let mut gates = vec![T::zero(); steps * spatial * u4];
        conv_forward_raw(
            &in_dims,
            x_seq.data(),
            self.w_x.data(),
            Some(self.bias.data()),
            &mut gates,
        );
        let rec = ConvDims::new([1, oh, ow, u], &self.recurrent_geometry())?;
        let mut tmp = vec![T::zero(); spatial * u4];
        let mut hs = vec![T::zero(); (steps + 1) * frame];
        let mut cs = vec![T::zero(); (steps + 1) * frame];
        let peep = self.peephole.as_ref().map(|p| p.data());
        for t in 0..steps {
            let pre = &mut gates[t * spatial * u4..(t + 1) * spatial * u4];
            let (h_done, h_rest) = hs.split_at_mut((t + 1) * frame);
            let (c_done, c_rest) = cs.split_at_mut((t + 1) * frame);
            if t > 0 {
                conv_forward_raw(&rec, &h_done[t * frame..], self.w_h.data(), None, &mut tmp);
                for (p, &r) in pre.iter_mut().zip(&tmp) {
                    *p += r;
                }
            }
            let c_prev = &c_done[t * frame..];
            for s in 0..spatial {
                lstm_cell(
                    &mut pre[s * u4..(s + 1) * u4],
                    peep,
                    &c_prev[s * u..(s + 1) * u],
                    &mut c_rest[s * u..(s + 1) * u],
                    &mut h_rest[s * u..(s + 1) * u],
                );
            }
        }
        let out = if return_sequences {
            Tensor::new(&[steps, oh, ow, u], hs[frame..].to_vec())?
        } else {
            Tensor::new(&[oh, ow, u], hs[steps * frame..].to_vec())?
        };
        Ok((
            out,
            ConvLstmCache {
                x: x_seq.clone(),
                in_dims,
                gates,
                hs,
                cs,
                return_sequences,
            },
        ))
    }

    pub fn backward(
        &self,
        cache: &ConvLstmCache<T>,
        grad_out: &Tensor<T>,
    ) -> Result<(Tensor<T>, ConvLstmParams<T>)> {
        let in_dims = &cache.in_dims;
        let steps = in_dims.input[0];
        let [_, oh, ow] = in_dims.out;
        let u = self.units();
        let u4 = 4 * u;
        let spatial = oh * ow;
        let frame = spatial * u;
        let mut dh_seq = vec![T::zero(); steps * frame];
        if cache.return_sequences {
            if grad_out.shape() != [steps, oh, ow, u] {
                return Err(Error::shape(
                    "convlstm backward: gradient must be [time, H', W', units]",
                ));
            }
            dh_seq.copy_from_slice(grad_out.data());
        } else {
            if grad_out.shape() != [oh, ow, u] {
                return Err(Error::shape(
                    "convlstm backward: gradient must be [H', W', units]",
                ));
            }
            dh_seq[(steps - 1) * frame..].copy_from_slice(grad_out.data());
        }
        let rec = ConvDims::new([1, oh, ow, u], &self.recurrent_geometry())?;
        let peep = self.peephole.as_ref().map(|p| p.data());
        let mut g = ConvLstmParams::zeros(
            self.in_channels(),
            u,
            self.kernel,
            self.strides,
            self.padding,
            self.peephole.is_some(),
        )?;
        let mut dpeep = self.peephole.as_ref().map(|_| vec![T::zero(); 3 * u]);
        let mut da = vec![T::zero(); steps * spatial * u4];
        let mut dh_next = vec![T::zero(); frame];
        let mut dc_next = vec![T::zero(); frame];
        let mut dc_prev = vec![T::zero(); frame];
        let mut dh = vec![T::zero(); frame];
        for t in (0..steps).rev() {
            for (i, v) in dh.iter_mut().enumerate() {
                *v = dh_seq[t * frame + i] + dh_next[i];
            }
            let da_t = &mut da[t * spatial * u4..(t + 1) * spatial * u4];
            let gates_t = &cache.gates[t * spatial * u4..(t + 1) * spatial * u4];
            let c_prev = &cache.cs[t * frame..(t + 1) * frame];
            let c_t = &cache.cs[(t + 1) * frame..(t + 2) * frame];
            for s in 0..spatial {
                let (a, b) = (s * u, (s + 1) * u);
                lstm_cell_backward(
                    &gates_t[s * u4..(s + 1) * u4],
                    peep,
                    &c_prev[a..b],
                    &c_t[a..b],
                    &dh[a..b],
                    &dc_next[a..b],
                    &mut da_t[s * u4..(s + 1) * u4],
                    &mut dc_prev[a..b],
                    dpeep.as_deref_mut(),
                );
            }
            std::mem::swap(&mut dc_next, &mut dc_prev);
            dh_next.fill(T::zero());
            if t > 0 {
                conv_backward_raw(
                    &rec,
                    &cache.hs[t * frame..(t + 1) * frame],
                    self.w_h.data(),
                    da_t,
                    Some(&mut dh_next),
                    g.w_h.data_mut(),
                    None,
                );
            }
        }
        let mut dx = cache.x.zeros_like();
        conv_backward_raw(
            in_dims,
            cache.x.data(),
            self.w_x.data(),
            &da,
            Some(dx.data_mut()),
            g.w_x.data_mut(),
            Some(g.bias.data_mut()),
        );
        if let (Some(gp), Some(dp)) = (g.peephole.as_mut(), dpeep) {
            gp.data_mut().copy_from_slice(&dp);
        }
        Ok((dx, g))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn count_formula() {
        assert_eq!(ConvLstmParams::<f32>::count(90, 64, [3, 3], false), 355_072);
        assert_eq!(ConvLstmParams::<f32>::count(90, 64, [3, 3], true), 355_264);
        let p = ConvLstmParams::<f32>::zeros(90, 64, [3, 3], [2, 2], Padding::Same, false).unwrap();
        assert_eq!(p.param_count(), 355_072);
    }

    #[test]
    fn table_output_shape() {
        let mut rng = Rng::new(0);
        let p = ConvLstmParams::<f32>::init(90, 64, [3, 3], [2, 2], Padding::Same, false, &mut rng)
            .unwrap();
        let x = Tensor::zeros(&[5, 8, 8, 90]).unwrap();
        let (y, _) = p.forward(&x, false).unwrap();
        assert_eq!(y.shape(), &[4, 4, 64]);
        let (ys, _) = p.forward(&x, true).unwrap();
        assert_eq!(ys.shape(), &[5, 4, 4, 64]);
    }

    #[test]
    fn zero_weights_give_zero_hidden_state() {
        let p = ConvLstmParams::<f64>::zeros(2, 3, [3, 3], [1, 1], Padding::Same, true).unwrap();
        let x = Tensor::filled(&[3, 4, 4, 2], 0.9).unwrap();
        let (y, _) = p.forward(&x, true).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn state_shape_mismatch_is_rejected() {
        let p = ConvLstmParams::<f64>::zeros(1, 2, [3, 3], [2, 2], Padding::Same, false).unwrap();
        let x = Tensor::zeros(&[6, 6, 1]).unwrap();
        let bad = Tensor::zeros(&[6, 6, 2]).unwrap();
        assert!(matches!(p.step(&x, &bad, &bad), Err(Error::Shape(_))));
        let ok = Tensor::zeros(&[3, 3, 2]).unwrap();
        assert!(p.step(&x, &ok, &ok).is_ok());
    }

    #[test]
    fn forward_is_iterated_step() {
        let mut rng = Rng::new(5);
        let p = ConvLstmParams::<f64>::init(2, 3, [3, 3], [2, 1], Padding::Same, true, &mut rng)
            .unwrap();
        let p = ConvLstmParams {
            peephole: Some(Tensor::uniform(&[3, 3], -0.5, 0.5, &mut rng).unwrap()),
            ..p
        };
        let x: Tensor = Tensor::uniform(&[4, 5, 4, 2], -1.0, 1.0, &mut rng).unwrap();
        let (ys, _) = p.forward(&x, true).unwrap();
        let state = p.state_shape(5, 4).unwrap();
        let (mut h, mut c) = (
            Tensor::zeros(&state).unwrap(),
            Tensor::zeros(&state).unwrap(),
        );
        for t in 0..4 {
            let (h2, c2) = p.step(&x.outer(t), &h, &c).unwrap();
            h = h2;
            c = c2;
            assert!(ys.outer(t).max_abs_diff(&h) < 1e-14);
        }
        let (last, _) = p.forward(&x, false).unwrap();
        assert_eq!(last.data(), ys.outer(3).data());
    }

    #[test]
    fn empty_or_misshaped_sequence_rejected() {
        let p = ConvLstmParams::<f64>::zeros(2, 3, [3, 3], [1, 1], Padding::Same, false).unwrap();
        assert!(matches!(
            p.forward(&Tensor::zeros(&[3, 4, 4, 1]).unwrap(), false),
            Err(Error::Input(_))
        ));
    }
}
