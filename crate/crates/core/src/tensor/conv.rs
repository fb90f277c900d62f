use super::gemm::gemm;
use super::{Activation, OpGradient, Tensor};
use crate::error::{Error, Result};

/// Upper bound on the im2col buffer (in values) materialized at once.
const COLS_BUDGET: usize = 1 << 22;

pub fn conv2d_param_count(c_in: usize, c_out: usize) -> usize {
    9 * c_in * c_out + c_out
}

/// Everything the backward pass needs from a forward call.
#[derive(Clone, Debug)]
pub struct Conv2dCache {
    input: Tensor,
    output: Tensor,
    activation: Activation,
}

impl Conv2dCache {
    pub fn output(&self) -> &Tensor {
        &self.output
    }
}

struct Geometry {
    batch: usize,
    h: usize,
    w: usize,
    c_in: usize,
    c_out: usize,
}

fn geometry(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Geometry> {
    let (batch, h, w, c_in) = match *input.shape() {
        [h, w, c] => (1, h, w, c),
        [b, h, w, c] => (b, h, w, c),
        _ => {
            return Err(Error::shape(format!(
                "conv2d input must be H×W×C or B×H×W×C, got {:?}",
                input.shape()
            )))
        }
    };
    let c_out = match *weights.shape() {
        [3, 3, wc_in, c_out] if wc_in == c_in => c_out,
        _ => {
            return Err(Error::shape(format!(
                "conv2d input {:?} incompatible with weights {:?} (expected 3×3×{c_in}×C_out)",
                input.shape(),
                weights.shape()
            )))
        }
    };
    if bias.shape() != [c_out] {
        return Err(Error::shape(format!(
            "conv2d bias {:?} does not match weights {:?}",
            bias.shape(),
            weights.shape()
        )));
    }
    Ok(Geometry {
        batch,
        h,
        w,
        c_in,
        c_out,
    })
}

fn im2col(input: &[f64], g: &Geometry, first: usize, count: usize, cols: &mut [f64]) {
    let kc = 9 * g.c_in;
    let plane = g.h * g.w * g.c_in;
    for img in 0..count {
        let src = &input[(first + img) * plane..(first + img + 1) * plane];
        for y in 0..g.h {
            for x in 0..g.w {
                let row = &mut cols[((img * g.h + y) * g.w + x) * kc..][..kc];
                for ky in 0..3 {
                    let sy = y as isize + ky as isize - 1;
                    for kx in 0..3 {
                        let sx = x as isize + kx as isize - 1;
                        let dst = &mut row[(ky * 3 + kx) * g.c_in..][..g.c_in];
                        if sy < 0 || sx < 0 || sy >= g.h as isize || sx >= g.w as isize {
                            dst.fill(0.0);
                        } else {
                            let off = (sy as usize * g.w + sx as usize) * g.c_in;
                            dst.copy_from_slice(&src[off..off + g.c_in]);
                        }
                    }
                }
            }
        }
    }
}

fn col2im_add(cols: &[f64], g: &Geometry, first: usize, count: usize, out: &mut [f64]) {
    let kc = 9 * g.c_in;
    let plane = g.h * g.w * g.c_in;
    for img in 0..count {
        let dst = &mut out[(first + img) * plane..(first + img + 1) * plane];
        for y in 0..g.h {
            for x in 0..g.w {
                let row = &cols[((img * g.h + y) * g.w + x) * kc..][..kc];
                for ky in 0..3 {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= g.h as isize {
                        continue;
                    }
                    for kx in 0..3 {
                        let sx = x as isize + kx as isize - 1;
                        if sx < 0 || sx >= g.w as isize {
                            continue;
                        }
                        let off = (sy as usize * g.w + sx as usize) * g.c_in;
                        let src = &row[(ky * 3 + kx) * g.c_in..][..g.c_in];
                        for (d, s) in dst[off..off + g.c_in].iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
            }
        }
    }
}

fn images_per_chunk(g: &Geometry) -> usize {
    let per_image = g.h * g.w * 9 * g.c_in;
    (COLS_BUDGET / per_image.max(1)).clamp(1, g.batch)
}

/// 3×3, stride 1, zero-padded ("same") convolution in HWC layout.
pub fn conv2d(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    activation: Activation,
) -> Result<Tensor> {
    conv2d_forward(input, weights, bias, activation).map(|(out, _)| out)
}

pub fn conv2d_forward(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    activation: Activation,
) -> Result<(Tensor, Conv2dCache)> {
    let g = geometry(input, weights, bias)?;
    let kc = 9 * g.c_in;
    let pixels = g.h * g.w;
    let mut out = vec![0.0; g.batch * pixels * g.c_out];
    for row in out.chunks_exact_mut(g.c_out) {
        row.copy_from_slice(bias.data());
    }
    let chunk = images_per_chunk(&g);
    let mut cols = vec![0.0; chunk * pixels * kc];
    let mut first = 0;
    while first < g.batch {
        let count = chunk.min(g.batch - first);
        im2col(input.data(), &g, first, count, &mut cols);
        let rows = count * pixels;
        gemm(
            rows,
            kc,
            g.c_out,
            1.0,
            &cols[..rows * kc],
            false,
            weights.data(),
            false,
            1.0,
            &mut out[first * pixels * g.c_out..(first + count) * pixels * g.c_out],
        );
        first += count;
    }
    if activation != Activation::Linear {
        for v in &mut out {
            *v = activation.apply(*v);
        }
    }
    let mut shape = input.shape().to_vec();
    *shape.last_mut().expect("rank checked") = g.c_out;
    let output = Tensor::new(shape, out)?;
    Ok((
        output.clone(),
        Conv2dCache {
            input: input.clone(),
            output,
            activation,
        },
    ))
}

/// Gradients `[d_input]` and `[d_weights, d_bias]`.
pub fn conv2d_backward(
    cache: &Conv2dCache,
    weights: &Tensor,
    grad_out: &Tensor,
) -> Result<OpGradient> {
    if grad_out.shape() != cache.output.shape() {
        return Err(Error::shape(format!(
            "conv2d grad {:?} vs output {:?}",
            grad_out.shape(),
            cache.output.shape()
        )));
    }
    let bias_shape = [*weights.shape().last().unwrap_or(&0)];
    let g = geometry(&cache.input, weights, &Tensor::zeros(&bias_shape))?;
    let kc = 9 * g.c_in;
    let pixels = g.h * g.w;

    let pre: Vec<f64> = grad_out
        .data()
        .iter()
        .zip(cache.output.data())
        .map(|(&d, &y)| d * cache.activation.derivative_from_output(y))
        .collect();

    let mut d_bias = vec![0.0; g.c_out];
    for row in pre.chunks_exact(g.c_out) {
        for (b, v) in d_bias.iter_mut().zip(row) {
            *b += v;
        }
    }

    let mut d_weights = vec![0.0; kc * g.c_out];
    let mut d_input = vec![0.0; cache.input.len()];
    let chunk = images_per_chunk(&g);
    let mut cols = vec![0.0; chunk * pixels * kc];
    let mut first = 0;
    while first < g.batch {
        let count = chunk.min(g.batch - first);
        let rows = count * pixels;
        let g_chunk = &pre[first * pixels * g.c_out..(first + count) * pixels * g.c_out];
        im2col(cache.input.data(), &g, first, count, &mut cols);
        // dW += colsᵀ · G
        gemm(
            kc,
            rows,
            g.c_out,
            1.0,
            &cols[..rows * kc],
            true,
            g_chunk,
            false,
            1.0,
            &mut d_weights,
        );
        // dcols = G · Wᵀ
        gemm(
            rows,
            g.c_out,
            kc,
            1.0,
            g_chunk,
            false,
            weights.data(),
            true,
            0.0,
            &mut cols[..rows * kc],
        );
        col2im_add(&cols, &g, first, count, &mut d_input);
        first += count;
    }

    Ok(OpGradient {
        inputs: vec![Tensor::new(cache.input.shape().to_vec(), d_input)?],
        params: vec![
            Tensor::new(weights.shape().to_vec(), d_weights)?,
            Tensor::new(vec![g.c_out], d_bias)?,
        ],
    })
}
