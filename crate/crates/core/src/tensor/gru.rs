//! Gated recurrent unit, reset-after form with separate input-side and
//! recurrent-side biases:
//!
//! ```text
//! z = σ(x·W_z + b_iz + h·U_z + b_hz)
//! r = σ(x·W_r + b_ir + h·U_r + b_hr)
//! n = act(x·W_n + b_in + r ⊙ (h·U_n + b_hn))
//! h' = z ⊙ h + (1 − z) ⊙ n
//! ```
//!
//! Gate blocks are packed `[z | r | n]` along the last axis of every weight.

use super::gemm::gemm;
use super::{ensure_finite, sigmoid, Activation, OpGradient, Tensor};
use crate::error::{Error, Result};

pub fn gru_param_count(d_in: usize, hidden: usize) -> usize {
    3 * ((d_in + hidden) * hidden + 2 * hidden)
}

/// Borrowed view of one layer's parameters.
#[derive(Clone, Copy, Debug)]
pub struct GruWeights<'a> {
    /// `d_in × 3h`
    pub w_input: &'a Tensor,
    /// `h × 3h`
    pub w_recurrent: &'a Tensor,
    /// `3h`
    pub b_input: &'a Tensor,
    /// `3h`
    pub b_recurrent: &'a Tensor,
}

impl GruWeights<'_> {
    fn dims(&self) -> Result<(usize, usize)> {
        let (d_in, h3) = match *self.w_input.shape() {
            [d, h3] if h3 % 3 == 0 => (d, h3),
            _ => {
                return Err(Error::shape(format!(
                    "gru input weights {:?} must be d_in×3h",
                    self.w_input.shape()
                )))
            }
        };
        let h = h3 / 3;
        if self.w_recurrent.shape() != [h, h3]
            || self.b_input.shape() != [h3]
            || self.b_recurrent.shape() != [h3]
        {
            return Err(Error::shape(format!(
                "gru parameter shapes inconsistent: W {:?}, U {:?}, b_i {:?}, b_h {:?}",
                self.w_input.shape(),
                self.w_recurrent.shape(),
                self.b_input.shape(),
                self.b_recurrent.shape()
            )));
        }
        Ok((d_in, h))
    }
}

#[derive(Clone, Debug)]
pub struct GruCache {
    input: Tensor,
    batch: usize,
    steps: usize,
    hidden: usize,
    activation: Activation,
    /// `k × B × 3h`, recurrent projection plus recurrent bias.
    hu: Vec<f64>,
    /// `(B·k) × h` each.
    z: Vec<f64>,
    r: Vec<f64>,
    n: Vec<f64>,
    output: Tensor,
}

impl GruCache {
    pub fn output(&self) -> &Tensor {
        &self.output
    }
}

pub fn gru_layer(sequence: &Tensor, weights: GruWeights<'_>, candidate: Activation) -> Result<Tensor> {
    gru_forward(sequence, weights, candidate).map(|(o, _)| o)
}

/// Runs the layer from a zero initial state over a `k×d_in` sequence (or a
/// `B×k×d_in` batch) and returns every hidden state.
pub fn gru_forward(
    sequence: &Tensor,
    weights: GruWeights<'_>,
    candidate: Activation,
) -> Result<(Tensor, GruCache)> {
    let (batch, steps, d_in) = match *sequence.shape() {
        [k, d] => (1, k, d),
        [b, k, d] => (b, k, d),
        _ => {
            return Err(Error::shape(format!(
                "gru input must be k×d_in or B×k×d_in, got {:?}",
                sequence.shape()
            )))
        }
    };
    if steps == 0 {
        return Err(Error::invalid("gru sequence length is zero"));
    }
    ensure_finite(sequence, "gru input")?;
    let (wd, h) = weights.dims()?;
    if wd != d_in {
        return Err(Error::shape(format!(
            "gru input width {d_in} differs from weights {:?}",
            weights.w_input.shape()
        )));
    }
    let h3 = 3 * h;
    let rows = batch * steps;

    let mut xw = Vec::with_capacity(rows * h3);
    for _ in 0..rows {
        xw.extend_from_slice(weights.b_input.data());
    }
    gemm(rows, d_in, h3, 1.0, sequence.data(), false, weights.w_input.data(), false, 1.0, &mut xw);

    let mut hu = vec![0.0; steps * batch * h3];
    let mut z = vec![0.0; rows * h];
    let mut r = vec![0.0; rows * h];
    let mut n = vec![0.0; rows * h];
    let mut out = vec![0.0; rows * h];
    let mut h_prev = vec![0.0; batch * h];

    for t in 0..steps {
        let hu_t = &mut hu[t * batch * h3..(t + 1) * batch * h3];
        for row in hu_t.chunks_exact_mut(h3) {
            row.copy_from_slice(weights.b_recurrent.data());
        }
        gemm(batch, h, h3, 1.0, &h_prev, false, weights.w_recurrent.data(), false, 1.0, hu_t);
        for b in 0..batch {
            let row = b * steps + t;
            let xw_r = &xw[row * h3..(row + 1) * h3];
            let hu_r = &hu_t[b * h3..(b + 1) * h3];
            for j in 0..h {
                let zj = sigmoid(xw_r[j] + hu_r[j]);
                let rj = sigmoid(xw_r[h + j] + hu_r[h + j]);
                let nj = candidate.apply(xw_r[2 * h + j] + rj * hu_r[2 * h + j]);
                let hp = h_prev[b * h + j];
                let hn = zj * hp + (1.0 - zj) * nj;
                z[row * h + j] = zj;
                r[row * h + j] = rj;
                n[row * h + j] = nj;
                out[row * h + j] = hn;
            }
        }
        for b in 0..batch {
            let row = b * steps + t;
            h_prev[b * h..(b + 1) * h].copy_from_slice(&out[row * h..(row + 1) * h]);
        }
    }

    let mut shape = sequence.shape().to_vec();
    *shape.last_mut().expect("rank checked") = h;
    let output = Tensor::new(shape, out)?;
    ensure_finite(&output, "gru output")?;
    Ok((
        output.clone(),
        GruCache {
            input: sequence.clone(),
            batch,
            steps,
            hidden: h,
            activation: candidate,
            hu,
            z,
            r,
            n,
            output,
        },
    ))
}

/// Backpropagation through time. Returns `[d_sequence]` and
/// `[d_w_input, d_w_recurrent, d_b_input, d_b_recurrent]`.
pub fn gru_backward(cache: &GruCache, weights: GruWeights<'_>, grad_out: &Tensor) -> Result<OpGradient> {
    if grad_out.shape() != cache.output.shape() {
        return Err(Error::shape(format!(
            "gru grad {:?} vs output {:?}",
            grad_out.shape(),
            cache.output.shape()
        )));
    }
    let (d_in, h) = weights.dims()?;
    let (batch, steps) = (cache.batch, cache.steps);
    let h3 = 3 * h;
    let rows = batch * steps;
    let hs = cache.output.data();
    let go = grad_out.data();

    let mut d_xw = vec![0.0; rows * h3];
    let mut d_u = vec![0.0; h * h3];
    let mut d_bh = vec![0.0; h3];
    let mut dh_next = vec![0.0; batch * h];
    let mut d_hu = vec![0.0; batch * h3];
    let mut h_prev = vec![0.0; batch * h];

    for t in (0..steps).rev() {
        let hu_t = &cache.hu[t * batch * h3..(t + 1) * batch * h3];
        for b in 0..batch {
            let row = b * steps + t;
            for j in 0..h {
                let idx = row * h + j;
                let hp = if t == 0 { 0.0 } else { hs[(row - 1) * h + j] };
                h_prev[b * h + j] = hp;
                let dh = go[idx] + dh_next[b * h + j];
                let (zj, rj, nj) = (cache.z[idx], cache.r[idx], cache.n[idx]);
                let dz = dh * (hp - nj);
                let dn = dh * (1.0 - zj);
                let dan = dn * cache.activation.derivative_from_output(nj);
                let hun = hu_t[b * h3 + 2 * h + j];
                let dr = dan * hun;
                let daz = dz * zj * (1.0 - zj);
                let dar = dr * rj * (1.0 - rj);
                let xrow = &mut d_xw[row * h3..(row + 1) * h3];
                xrow[j] = daz;
                xrow[h + j] = dar;
                xrow[2 * h + j] = dan;
                let hrow = &mut d_hu[b * h3..(b + 1) * h3];
                hrow[j] = daz;
                hrow[h + j] = dar;
                hrow[2 * h + j] = dan * rj;
                dh_next[b * h + j] = dh * zj;
            }
        }
        gemm(h, batch, h3, 1.0, &h_prev, true, &d_hu, false, 1.0, &mut d_u);
        for row in d_hu.chunks_exact(h3) {
            for (acc, v) in d_bh.iter_mut().zip(row) {
                *acc += v;
            }
        }
        gemm(batch, h3, h, 1.0, &d_hu, false, weights.w_recurrent.data(), true, 1.0, &mut dh_next);
    }

    let mut d_w = vec![0.0; d_in * h3];
    gemm(d_in, rows, h3, 1.0, cache.input.data(), true, &d_xw, false, 0.0, &mut d_w);
    let mut d_bi = vec![0.0; h3];
    for row in d_xw.chunks_exact(h3) {
        for (acc, v) in d_bi.iter_mut().zip(row) {
            *acc += v;
        }
    }
    let mut d_x = vec![0.0; rows * d_in];
    gemm(rows, h3, d_in, 1.0, &d_xw, false, weights.w_input.data(), true, 0.0, &mut d_x);

    debug_assert_eq!(cache.hidden, h);
    Ok(OpGradient {
        inputs: vec![Tensor::new(cache.input.shape().to_vec(), d_x)?],
        params: vec![
            Tensor::new(vec![d_in, h3], d_w)?,
            Tensor::new(vec![h, h3], d_u)?,
            Tensor::new(vec![h3], d_bi)?,
            Tensor::new(vec![h3], d_bh)?,
        ],
    })
}
