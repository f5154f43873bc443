//! Stacked LSTM over exercise embeddings.
//!
//! Gates are fused into one `[D+H x 4H]` weight per layer in i, f, o, g
//! column order; the forget-gate bias block starts at one so early training
//! does not dump cell state.

use crate::autodiff::{DiffError, ParamId, ParamStore, Tape, Tensor, Var};
use rand_chacha::ChaCha8Rng;

pub struct LstmLayer {
    w: ParamId,
    b: ParamId,
    pub input_dim: usize,
    pub hidden: usize,
}

pub struct LstmStack {
    pub layers: Vec<LstmLayer>,
}

impl LstmStack {
    /// Registers one fused weight and bias per layer: layer 0 reads the
    /// exercise embedding, deeper layers read the hidden state below.
    pub fn register(
        store: &mut ParamStore,
        input_dim: usize,
        layer_sizes: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, DiffError> {
        let mut layers = Vec::with_capacity(layer_sizes.len());
        let mut d = input_dim;
        for (idx, &h) in layer_sizes.iter().enumerate() {
            let std = (2.0 / (d + h + h) as f64).sqrt();
            let w = store.register(
                &format!("lstm{idx}_w"),
                Tensor::randn(&[d + h, 4 * h], std, rng),
            )?;
            let mut bias = Tensor::zeros(&[4 * h]);
            for v in &mut bias.data_mut()[h..2 * h] {
                *v = 1.0;
            }
            let b = store.register(&format!("lstm{idx}_b"), bias)?;
            layers.push(LstmLayer {
                w,
                b,
                input_dim: d,
                hidden: h,
            });
            d = h;
        }
        Ok(Self { layers })
    }

    pub fn bind(&self, tape: &mut Tape, store: &ParamStore, trainable: bool) -> LstmVars {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let (w, b) = if trainable {
                    (tape.param(store, l.w), tape.param(store, l.b))
                } else {
                    (tape.frozen_param(store, l.w), tape.frozen_param(store, l.b))
                };
                LstmLayerVars {
                    w,
                    b,
                    hidden: l.hidden,
                }
            })
            .collect();
        LstmVars { layers }
    }
}

#[derive(Clone, Copy)]
pub struct LstmLayerVars {
    pub w: Var,
    pub b: Var,
    pub hidden: usize,
}

pub struct LstmVars {
    pub layers: Vec<LstmLayerVars>,
}

impl LstmVars {
    /// Zero initial (h, c) per layer for a batch of `rows`.
    pub fn zero_state(&self, tape: &mut Tape, rows: usize) -> Vec<(Var, Var)> {
        self.layers
            .iter()
            .map(|l| {
                let h = tape.constant(Tensor::zeros(&[rows, l.hidden]));
                let c = tape.constant(Tensor::zeros(&[rows, l.hidden]));
                (h, c)
            })
            .collect()
    }

    /// Advances every layer one step; returns the top hidden state. The
    /// state vector is replaced in place with the new per-layer pairs.
    pub fn step(
        &self,
        tape: &mut Tape,
        x: Var,
        state: &mut Vec<(Var, Var)>,
    ) -> Result<Var, DiffError> {
        debug_assert_eq!(state.len(), self.layers.len());
        let mut input = x;
        for (layer, slot) in self.layers.iter().zip(state.iter_mut()) {
            let (h, c) = *slot;
            let next = lstm_cell(tape, *layer, input, h, c)?;
            *slot = next;
            input = next.0;
        }
        Ok(input)
    }
}

/// One LSTM cell step on a batch: `[B x D]` input, `[B x H]` state pair in,
/// new `(h, c)` out.
pub fn lstm_cell(
    tape: &mut Tape,
    layer: LstmLayerVars,
    x: Var,
    h: Var,
    c: Var,
) -> Result<(Var, Var), DiffError> {
    let hdim = layer.hidden;
    let xh = tape.concat_cols(&[x, h])?;
    let z = tape.matmul(xh, layer.w)?;
    let z = tape.add_bias(z, layer.b)?;
    let zi = tape.gather_cols_range(z, 0, hdim)?;
    let zf = tape.gather_cols_range(z, hdim, 2 * hdim)?;
    let zo = tape.gather_cols_range(z, 2 * hdim, 3 * hdim)?;
    let zg = tape.gather_cols_range(z, 3 * hdim, 4 * hdim)?;
    let i = tape.sigmoid(zi);
    let f = tape.sigmoid(zf);
    let o = tape.sigmoid(zo);
    let g = tape.tanh(zg);
    let fc = tape.mul(f, c)?;
    let ig = tape.mul(i, g)?;
    let c_next = tape.add(fc, ig)?;
    let tc = tape.tanh(c_next);
    let h_next = tape.mul(o, tc)?;
    Ok((h_next, c_next))
}
