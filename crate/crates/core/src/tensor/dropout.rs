use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{OpGradient, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Infer,
}

/// Per-element scale applied in the forward pass; `None` means identity.
#[derive(Clone, Debug)]
pub struct DropoutMask(Option<Vec<f64>>);

/// Inverted dropout: survivors are scaled by `1/(1-rate)` so the expectation
/// is preserved; identity in [`Mode::Infer`].
pub fn dropout<R: Rng + ?Sized>(
    input: &Tensor,
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<(Tensor, DropoutMask)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid(format!("dropout rate {rate} outside [0, 1)")));
    }
    if mode == Mode::Infer || rate == 0.0 {
        return Ok((input.clone(), DropoutMask(None)));
    }
    let keep = 1.0 / (1.0 - rate);
    let mask: Vec<f64> = (0..input.len())
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect();
    let mut out = input.clone();
    for (v, m) in out.data_mut().iter_mut().zip(&mask) {
        *v *= m;
    }
    Ok((out, DropoutMask(Some(mask))))
}

pub fn dropout_backward(mask: &DropoutMask, grad_out: &Tensor) -> Result<OpGradient> {
    let mut d = grad_out.clone();
    if let Some(mask) = &mask.0 {
        if mask.len() != d.len() {
            return Err(Error::shape("dropout mask length differs from gradient"));
        }
        for (v, m) in d.data_mut().iter_mut().zip(mask) {
            *v *= m;
        }
    }
    Ok(OpGradient {
        inputs: vec![d],
        params: vec![],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn infer_mode_and_zero_rate_are_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::from_fn(&[10], |i| i as f64);
        let (y, _) = dropout(&x, 0.3, Mode::Infer, &mut rng).unwrap();
        assert_eq!(y, x);
        let (y, _) = dropout(&x, 0.0, Mode::Train, &mut rng).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn rate_of_one_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::zeros(&[3]);
        assert!(dropout(&x, 1.0, Mode::Train, &mut rng).is_err());
        assert!(dropout(&x, -0.1, Mode::Train, &mut rng).is_err());
    }

    #[test]
    fn inverted_dropout_preserves_expectation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let x = Tensor::filled(&[100_000], 1.0);
        let (y, _) = dropout(&x, 0.3, Mode::Train, &mut rng).unwrap();
        let mean = y.sum() / y.len() as f64;
        assert!((mean - 1.0).abs() < 0.01, "{mean}");
    }

    #[test]
    fn backward_applies_the_same_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = Tensor::filled(&[50], 2.0);
        let (y, mask) = dropout(&x, 0.5, Mode::Train, &mut rng).unwrap();
        let g = dropout_backward(&mask, &Tensor::filled(&[50], 1.0)).unwrap();
        for (yo, go) in y.data().iter().zip(g.inputs[0].data()) {
            assert_eq!(*yo, 2.0 * go);
        }
    }
}
