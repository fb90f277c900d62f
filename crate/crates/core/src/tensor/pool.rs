use super::{OpGradient, Tensor};
use crate::error::{Error, Result};

/// Argmax bookkeeping for the backward pass.
#[derive(Clone, Debug)]
pub struct PoolCache {
    input_shape: Vec<usize>,
    argmax: Vec<usize>,
}

/// Output extent of valid pooling with stride equal to the window.
pub fn pooled_extent(extent: usize, window: usize) -> usize {
    if window == 0 || window > extent {
        0
    } else {
        (extent - window) / window + 1
    }
}

pub fn maxpool2d(input: &Tensor, window: usize) -> Result<Tensor> {
    maxpool2d_forward(input, window).map(|(out, _)| out)
}

/// Valid max pooling, stride = window, HWC or BHWC layout. Ties resolve to
/// the first element in row-major window order.
pub fn maxpool2d_forward(input: &Tensor, window: usize) -> Result<(Tensor, PoolCache)> {
    let (batch, h, w, c) = match *input.shape() {
        [h, w, c] => (1, h, w, c),
        [b, h, w, c] => (b, h, w, c),
        _ => {
            return Err(Error::shape(format!(
                "maxpool2d input must be H×W×C or B×H×W×C, got {:?}",
                input.shape()
            )))
        }
    };
    if window == 0 || window > h || window > w {
        return Err(Error::invalid(format!(
            "pooling window {window} does not fit input extent {h}×{w}"
        )));
    }
    let oh = pooled_extent(h, window);
    let ow = pooled_extent(w, window);
    let src = input.data();
    let mut out = Vec::with_capacity(batch * oh * ow * c);
    let mut argmax = Vec::with_capacity(batch * oh * ow * c);
    for b in 0..batch {
        let base = b * h * w * c;
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = usize::MAX;
                    for dy in 0..window {
                        for dx in 0..window {
                            let idx = base + ((oy * window + dy) * w + ox * window + dx) * c + ch;
                            if best_idx == usize::MAX || src[idx] > best {
                                best = src[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out.push(best);
                    argmax.push(best_idx);
                }
            }
        }
    }
    let shape = if input.rank() == 3 {
        vec![oh, ow, c]
    } else {
        vec![batch, oh, ow, c]
    };
    Ok((
        Tensor::new(shape, out)?,
        PoolCache {
            input_shape: input.shape().to_vec(),
            argmax,
        },
    ))
}

pub fn maxpool2d_backward(cache: &PoolCache, grad_out: &Tensor) -> Result<OpGradient> {
    if grad_out.len() != cache.argmax.len() {
        return Err(Error::shape(format!(
            "maxpool2d grad has {} values, forward produced {}",
            grad_out.len(),
            cache.argmax.len()
        )));
    }
    let mut d_input = Tensor::zeros(&cache.input_shape);
    let d = d_input.data_mut();
    for (&idx, &g) in cache.argmax.iter().zip(grad_out.data()) {
        d[idx] += g;
    }
    Ok(OpGradient {
        inputs: vec![d_input],
        params: vec![],
    })
}
