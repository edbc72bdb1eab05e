//! LSTM with optional peephole connections, and its bidirectional wrapper.
//!
//! Gate blocks are stored side by side in the order input, forget, cell,
//! output: `w_x` is `[d, 4u]`, `w_h` is `[u, 4u]`, `bias` is `[4u]`. The
//! peephole weights, when present, are `[3, u]` with rows for the input,
//! forget and output gates:
//!
//! ```text
//! i = σ(x W_xi + h₋ W_hi + w_ci ∘ c₋ + b_i)
//! f = σ(x W_xf + h₋ W_hf + w_cf ∘ c₋ + b_f)
//! c = f ∘ c₋ + i ∘ tanh(x W_xc + h₋ W_hc + b_c)
//! o = σ(x W_xo + h₋ W_ho + w_co ∘ c + b_o)
//! h = o ∘ tanh(c)
//! ```

use super::init::{glorot_uniform, orthogonal};
use crate::error::{Error, Result};
use crate::tensor::activation::sigmoid;
use crate::tensor::{gemm, Real, Rng, Tensor};

/// One cell update for a single position. On entry `pre` holds the four
/// gate pre-activations (without peephole terms); on exit it holds the gate
/// values `i, f, g, o`.
#[inline]
pub(crate) fn lstm_cell<T: Real>(
    pre: &mut [T],
    peephole: Option<&[T]>,
    c_prev: &[T],
    c: &mut [T],
    h: &mut [T],
) {
    let u = c.len();
    for k in 0..u {
        let (mut ai, mut af, ag, mut ao) = (pre[k], pre[u + k], pre[2 * u + k], pre[3 * u + k]);
        if let Some(p) = peephole {
            ai += p[k] * c_prev[k];
            af += p[u + k] * c_prev[k];
        }
        let i = sigmoid(ai);
        let f = sigmoid(af);
        let g = ag.tanh();
        let ct = f * c_prev[k] + i * g;
        if let Some(p) = peephole {
            ao += p[2 * u + k] * ct;
        }
        let o = sigmoid(ao);
        c[k] = ct;
        h[k] = o * ct.tanh();
        pre[k] = i;
        pre[u + k] = f;
        pre[2 * u + k] = g;
        pre[3 * u + k] = o;
    }
}

/// Adjoint of [`lstm_cell`]. Writes gate pre-activation gradients to `da`
/// and the cell-state gradient flowing to the previous step to `dc_prev`;
/// accumulates peephole gradients.
#[allow(clippy::too_many_arguments)]
#[inline]
pub(crate) fn lstm_cell_backward<T: Real>(
    gates: &[T],
    peephole: Option<&[T]>,
    c_prev: &[T],
    c: &[T],
    dh: &[T],
    dc_next: &[T],
    da: &mut [T],
    dc_prev: &mut [T],
    mut dpeep: Option<&mut [T]>,
) {
    let u = c.len();
    let one = T::one();
    for k in 0..u {
        let (i, f, g, o) = (gates[k], gates[u + k], gates[2 * u + k], gates[3 * u + k]);
        let tc = c[k].tanh();
        let dao = dh[k] * tc * o * (one - o);
        let mut dc = dc_next[k] + dh[k] * o * (one - tc * tc);
        if let Some(p) = peephole {
            dc += p[2 * u + k] * dao;
        }
        let dai = dc * g * i * (one - i);
        let dag = dc * i * (one - g * g);
        let daf = dc * c_prev[k] * f * (one - f);
        let mut dcp = dc * f;
        if let Some(p) = peephole {
            dcp += p[k] * dai + p[u + k] * daf;
        }
        if let Some(dp) = dpeep.as_deref_mut() {
            dp[k] += dai * c_prev[k];
            dp[u + k] += daf * c_prev[k];
            dp[2 * u + k] += dao * c[k];
        }
        dc_prev[k] = dcp;
        da[k] = dai;
        da[u + k] = daf;
        da[2 * u + k] = dag;
        da[3 * u + k] = dao;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams<T> {
    pub w_x: Tensor<T>,
    pub w_h: Tensor<T>,
    pub bias: Tensor<T>,
    pub peephole: Option<Tensor<T>>,
}

/// Values saved by [`LstmParams::forward`] for backpropagation through time.
#[derive(Clone, Debug)]
pub struct LstmCache<T> {
    x: Tensor<T>,
    gates: Vec<T>,
    hs: Vec<T>,
    cs: Vec<T>,
    return_sequences: bool,
}

impl<T: Real> LstmParams<T> {
    pub fn zeros(input_dim: usize, units: usize, peephole: bool) -> Result<Self> {
        Ok(LstmParams {
            w_x: Tensor::zeros(&[input_dim, 4 * units])?,
            w_h: Tensor::zeros(&[units, 4 * units])?,
            bias: Tensor::zeros(&[4 * units])?,
            peephole: if peephole {
                Some(Tensor::zeros(&[3, units])?)
            } else {
                None
            },
        })
    }

    /// Glorot input kernel, orthogonal recurrent kernel, zero biases except
    /// the forget gate at one, zero peepholes.
    pub fn init(input_dim: usize, units: usize, peephole: bool, rng: &mut Rng) -> Result<Self> {
        let mut p = Self::zeros(input_dim, units, peephole)?;
        p.w_x = glorot_uniform(&[input_dim, 4 * units], input_dim, 4 * units, rng)?;
        p.w_h = orthogonal(units, 4 * units, rng)?;
        p.bias.data_mut()[units..2 * units].fill(T::one());
        Ok(p)
    }

    pub fn input_dim(&self) -> usize {
        self.w_x.shape()[0]
    }

    pub fn units(&self) -> usize {
        self.w_h.shape()[0]
    }

    /// `4 (u (d + u) + u)`, plus `3u` with peepholes.
    pub fn count(input_dim: usize, units: usize, peephole: bool) -> usize {
        4 * (units * (input_dim + units) + units) + if peephole { 3 * units } else { 0 }
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

    /// Single recurrence step on `x_t: [d]`, `h_prev, c_prev: [u]`.
    pub fn step(
        &self,
        x_t: &Tensor<T>,
        h_prev: &Tensor<T>,
        c_prev: &Tensor<T>,
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        let (d, u) = (self.input_dim(), self.units());
        if x_t.shape() != [d] || h_prev.shape() != [u] || c_prev.shape() != [u] {
            return Err(Error::shape(format!(
                "lstm step expects x [{d}], h and c [{u}]; got {:?}, {:?}, {:?}",
                x_t.shape(),
                h_prev.shape(),
                c_prev.shape()
            )));
        }
        let mut pre = self.bias.data().to_vec();
        gemm(
            1,
            d,
            4 * u,
            x_t.data(),
            false,
            self.w_x.data(),
            false,
            &mut pre,
            T::one(),
        );
        gemm(
            1,
            u,
            4 * u,
            h_prev.data(),
            false,
            self.w_h.data(),
            false,
            &mut pre,
            T::one(),
        );
        let mut c = vec![T::zero(); u];
        let mut h = vec![T::zero(); u];
        lstm_cell(
            &mut pre,
            self.peephole.as_ref().map(|p| p.data()),
            c_prev.data(),
            &mut c,
            &mut h,
        );
        Ok((Tensor::new(&[u], h)?, Tensor::new(&[u], c)?))
    }

    /// Runs the recurrence from zero state over `x_seq: [T, d]`. Returns
    /// `[T, u]` when `return_sequences`, else the final `[u]`.
    pub fn forward(
        &self,
        x_seq: &Tensor<T>,
        return_sequences: bool,
    ) -> Result<(Tensor<T>, LstmCache<T>)> {
        let (d, u) = (self.input_dim(), self.units());
        let steps = match *x_seq.shape() {
            [t, xd] if xd == d => t,
            _ => {
                return Err(Error::Input(format!(
                    "lstm expects a [time, {d}] sequence, got {:?}",
                    x_seq.shape()
                )))
            }
        };
        let u4 = 4 * u;
        let mut gates = vec![T::zero(); steps * u4];
        for row in gates.chunks_exact_mut(u4) {
            row.copy_from_slice(self.bias.data());
        }
        gemm(
            steps,
            d,
            u4,
            x_seq.data(),
            false,
            self.w_x.data(),
            false,
            &mut gates,
            T::one(),
        );
        let mut hs = vec![T::zero(); (steps + 1) * u];
        let mut cs = vec![T::zero(); (steps + 1) * u];
        let peep = self.peephole.as_ref().map(|p| p.data());
        for t in 0..steps {
            let pre = &mut gates[t * u4..(t + 1) * u4];
            let (h_done, h_rest) = hs.split_at_mut((t + 1) * u);
            gemm(
                1,
                u,
                u4,
                &h_done[t * u..],
                false,
                self.w_h.data(),
                false,
                pre,
                T::one(),
            );
            let (c_done, c_rest) = cs.split_at_mut((t + 1) * u);
            lstm_cell(
                pre,
                peep,
                &c_done[t * u..],
                &mut c_rest[..u],
                &mut h_rest[..u],
            );
        }
        let out = if return_sequences {
            Tensor::new(&[steps, u], hs[u..].to_vec())?
        } else {
            Tensor::new(&[u], hs[steps * u..].to_vec())?
        };
        Ok((
            out,
            LstmCache {
                x: x_seq.clone(),
                gates,
                hs,
                cs,
                return_sequences,
            },
        ))
    }

    /// Full backpropagation through time. Returns the input-sequence
    /// gradient and a parameter set holding the parameter gradients.
    pub fn backward(
        &self,
        cache: &LstmCache<T>,
        grad_out: &Tensor<T>,
    ) -> Result<(Tensor<T>, LstmParams<T>)> {
        let (d, u) = (self.input_dim(), self.units());
        let u4 = 4 * u;
        let steps = cache.x.shape()[0];
        let mut dh_seq = vec![T::zero(); steps * u];
        if cache.return_sequences {
            if grad_out.shape() != [steps, u] {
                return Err(Error::shape(
                    "lstm backward: gradient must be [time, units]",
                ));
            }
            dh_seq.copy_from_slice(grad_out.data());
        } else {
            if grad_out.shape() != [u] {
                return Err(Error::shape("lstm backward: gradient must be [units]"));
            }
            dh_seq[(steps - 1) * u..].copy_from_slice(grad_out.data());
        }
        let peep = self.peephole.as_ref().map(|p| p.data());
        let mut dpeep = self.peephole.as_ref().map(|_| vec![T::zero(); 3 * u]);
        let mut da = vec![T::zero(); steps * u4];
        let mut dh_next = vec![T::zero(); u];
        let mut dc_next = vec![T::zero(); u];
        let mut dc_prev = vec![T::zero(); u];
        let mut dh = vec![T::zero(); u];
        for t in (0..steps).rev() {
            for k in 0..u {
                dh[k] = dh_seq[t * u + k] + dh_next[k];
            }
            let da_t = &mut da[t * u4..(t + 1) * u4];
            lstm_cell_backward(
                &cache.gates[t * u4..(t + 1) * u4],
                peep,
                &cache.cs[t * u..(t + 1) * u],
                &cache.cs[(t + 1) * u..(t + 2) * u],
                &dh,
                &dc_next,
                da_t,
                &mut dc_prev,
                dpeep.as_deref_mut(),
            );
            std::mem::swap(&mut dc_next, &mut dc_prev);
            gemm(
                1,
                u4,
                u,
                da_t,
                false,
                self.w_h.data(),
                true,
                &mut dh_next,
                T::zero(),
            );
        }
        let mut g = LstmParams::zeros(d, u, self.peephole.is_some())?;
        gemm(
            u,
            steps,
            u4,
            &cache.hs[..steps * u],
            true,
            &da,
            false,
            g.w_h.data_mut(),
            T::zero(),
        );
        gemm(
            d,
            steps,
            u4,
            cache.x.data(),
            true,
            &da,
            false,
            g.w_x.data_mut(),
            T::zero(),
        );
        for row in da.chunks_exact(u4) {
            for (b, &v) in g.bias.data_mut().iter_mut().zip(row) {
                *b += v;
            }
        }
        if let (Some(gp), Some(dp)) = (g.peephole.as_mut(), dpeep) {
            gp.data_mut().copy_from_slice(&dp);
        }
        let mut dx = vec![T::zero(); steps * d];
        gemm(
            steps,
            u4,
            d,
            &da,
            false,
            self.w_x.data(),
            true,
            &mut dx,
            T::zero(),
        );
        Ok((Tensor::new(&[steps, d], dx)?, g))
    }
}

fn reverse_time<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let steps = x.shape()[0];
    let inner = x.len() / steps;
    let mut out = x.clone();
    for t in 0..steps {
        out.data_mut()[t * inner..(t + 1) * inner]
            .copy_from_slice(&x.data()[(steps - 1 - t) * inner..(steps - t) * inner]);
    }
    out
}

/// Two independent LSTMs, one reading the sequence forwards and one
/// backwards, with outputs concatenated on the feature axis.
#[derive(Clone, Debug, PartialEq)]
pub struct BiLstmParams<T> {
    pub forward: LstmParams<T>,
    pub backward: LstmParams<T>,
}

#[derive(Clone, Debug)]
pub struct BiLstmCache<T> {
    fwd: LstmCache<T>,
    bwd: LstmCache<T>,
}

impl<T: Real> BiLstmParams<T> {
    pub fn new(forward: LstmParams<T>, backward: LstmParams<T>) -> Result<Self> {
        if forward.units() != backward.units() || forward.input_dim() != backward.input_dim() {
            return Err(Error::config(format!(
                "bidirectional lstm needs matching directions, got {}->{} and {}->{}",
                forward.input_dim(),
                forward.units(),
                backward.input_dim(),
                backward.units()
            )));
        }
        Ok(BiLstmParams { forward, backward })
    }

    pub fn units(&self) -> usize {
        self.forward.units()
    }

    pub fn param_count(&self) -> usize {
        self.forward.param_count() + self.backward.param_count()
    }

    /// Output `[T, 2u]` with `return_sequences`, else `[2u]`.
    pub fn forward(
        &self,
        x_seq: &Tensor<T>,
        return_sequences: bool,
    ) -> Result<(Tensor<T>, BiLstmCache<T>)> {
        let u = self.units();
        let (yf, fwd) = self.forward.forward(x_seq, return_sequences)?;
        let (yb, bwd) = self
            .backward
            .forward(&reverse_time(x_seq), return_sequences)?;
        let out = if return_sequences {
            let yb = reverse_time(&yb);
            let steps = x_seq.shape()[0];
            let mut data = Vec::with_capacity(steps * 2 * u);
            for t in 0..steps {
                data.extend_from_slice(&yf.data()[t * u..(t + 1) * u]);
                data.extend_from_slice(&yb.data()[t * u..(t + 1) * u]);
            }
            Tensor::new(&[steps, 2 * u], data)?
        } else {
            let mut data = yf.into_data();
            data.extend_from_slice(yb.data());
            Tensor::new(&[2 * u], data)?
        };
        Ok((out, BiLstmCache { fwd, bwd }))
    }

    pub fn backward(
        &self,
        cache: &BiLstmCache<T>,
        grad_out: &Tensor<T>,
    ) -> Result<(Tensor<T>, BiLstmParams<T>)> {
        let u = self.units();
        let (gf, gb) = if cache.fwd.return_sequences {
            let steps = cache.fwd.x.shape()[0];
            if grad_out.shape() != [steps, 2 * u] {
                return Err(Error::shape(
                    "bilstm backward: gradient must be [time, 2 units]",
                ));
            }
            let mut gf = Vec::with_capacity(steps * u);
            let mut gb = Vec::with_capacity(steps * u);
            for row in grad_out.data().chunks_exact(2 * u) {
                gf.extend_from_slice(&row[..u]);
                gb.extend_from_slice(&row[u..]);
            }
            (
                Tensor::new(&[steps, u], gf)?,
                reverse_time(&Tensor::new(&[steps, u], gb)?),
            )
        } else {
            if grad_out.shape() != [2 * u] {
                return Err(Error::shape("bilstm backward: gradient must be [2 units]"));
            }
            (
                Tensor::new(&[u], grad_out.data()[..u].to_vec())?,
                Tensor::new(&[u], grad_out.data()[u..].to_vec())?,
            )
        };
        let (mut dx, g_fwd) = self.forward.backward(&cache.fwd, &gf)?;
        let (dx_rev, g_bwd) = self.backward.backward(&cache.bwd, &gb)?;
        dx.add_assign(&reverse_time(&dx_rev))?;
        Ok((
            dx,
            BiLstmParams {
                forward: g_fwd,
                backward: g_bwd,
            },
        ))
    }
}

/// Convenience form of [`BiLstmParams::forward`] without the cache.
pub fn bidirectional_lstm<T: Real>(
    x_seq: &Tensor<T>,
    fwd: &LstmParams<T>,
    bwd: &LstmParams<T>,
    return_sequences: bool,
) -> Result<Tensor<T>> {
    let params = BiLstmParams::new(fwd.clone(), bwd.clone())?;
    Ok(params.forward(x_seq, return_sequences)?.0)
}
