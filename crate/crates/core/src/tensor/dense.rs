use super::gemm::gemm;
use super::{Activation, OpGradient, Tensor};
use crate::error::{Error, Result};

pub fn dense_param_count(d_in: usize, d_out: usize) -> usize {
    d_in * d_out + d_out
}

#[derive(Clone, Debug)]
pub struct DenseCache {
    input: Tensor,
    output: Tensor,
    activation: Activation,
}

impl DenseCache {
    pub fn output(&self) -> &Tensor {
        &self.output
    }
}

pub fn dense(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    activation: Activation,
) -> Result<Tensor> {
    dense_forward(input, weights, bias, activation).map(|(o, _)| o)
}

/// Affine map over the last axis: any leading axes are treated as rows.
pub fn dense_forward(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    activation: Activation,
) -> Result<(Tensor, DenseCache)> {
    let (rows, d_in) = input.rows_cols();
    let d_out = match *weights.shape() {
        [wi, wo] if wi == d_in => wo,
        _ => {
            return Err(Error::shape(format!(
                "dense input {:?} incompatible with weights {:?}",
                input.shape(),
                weights.shape()
            )))
        }
    };
    if bias.shape() != [d_out] {
        return Err(Error::shape(format!(
            "dense bias {:?} does not match weights {:?}",
            bias.shape(),
            weights.shape()
        )));
    }
    let mut out = Vec::with_capacity(rows * d_out);
    for _ in 0..rows {
        out.extend_from_slice(bias.data());
    }
    gemm(rows, d_in, d_out, 1.0, input.data(), false, weights.data(), false, 1.0, &mut out);
    if activation != Activation::Linear {
        for v in &mut out {
            *v = activation.apply(*v);
        }
    }
    let mut shape = input.shape().to_vec();
    *shape.last_mut().expect("non-empty shape") = d_out;
    let output = Tensor::new(shape, out)?;
    Ok((
        output.clone(),
        DenseCache {
            input: input.clone(),
            output,
            activation,
        },
    ))
}

pub fn dense_backward(cache: &DenseCache, weights: &Tensor, grad_out: &Tensor) -> Result<OpGradient> {
    if grad_out.shape() != cache.output.shape() {
        return Err(Error::shape(format!(
            "dense grad {:?} vs output {:?}",
            grad_out.shape(),
            cache.output.shape()
        )));
    }
    let (rows, d_in) = cache.input.rows_cols();
    let d_out = weights.shape()[1];
    let pre: Vec<f64> = grad_out
        .data()
        .iter()
        .zip(cache.output.data())
        .map(|(&g, &y)| g * cache.activation.derivative_from_output(y))
        .collect();
    let mut d_bias = vec![0.0; d_out];
    for row in pre.chunks_exact(d_out) {
        for (b, v) in d_bias.iter_mut().zip(row) {
            *b += v;
        }
    }
    let mut d_weights = vec![0.0; d_in * d_out];
    gemm(d_in, rows, d_out, 1.0, cache.input.data(), true, &pre, false, 0.0, &mut d_weights);
    let mut d_input = vec![0.0; rows * d_in];
    gemm(rows, d_out, d_in, 1.0, &pre, false, weights.data(), true, 0.0, &mut d_input);
    Ok(OpGradient {
        inputs: vec![Tensor::new(cache.input.shape().to_vec(), d_input)?],
        params: vec![
            Tensor::new(vec![d_in, d_out], d_weights)?,
            Tensor::new(vec![d_out], d_bias)?,
        ],
    })
}
