//! Training objectives with their gradients.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Probability clamp applied inside the cross-entropy.
pub const BCE_EPS: f64 = 1e-7;

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "{what}: prediction {:?} vs target {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Mean binary cross-entropy over every entry.
pub fn loss_bce(pred: &Tensor, target: &Tensor) -> Result<f64> {
    same_shape(pred, target, "bce")?;
    let total: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&q, &p)| {
            let q = q.clamp(BCE_EPS, 1.0 - BCE_EPS);
            -(p * q.ln() + (1.0 - p) * (1.0 - q).ln())
        })
        .sum();
    Ok(total / pred.len() as f64)
}

/// Gradient of [`loss_bce`] with respect to the predictions. Entries held
/// at the clamp get zero.
pub fn loss_bce_grad(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    same_shape(pred, target, "bce")?;
    let m = pred.len() as f64;
    let data = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&q, &p)| {
            if q <= BCE_EPS || q >= 1.0 - BCE_EPS {
                0.0
            } else {
                (q - p) / (q * (1.0 - q) * m)
            }
        })
        .collect();
    Tensor::new(pred.shape().to_vec(), data)
}

/// Mean over samples (all axes but the last) of the squared Euclidean
/// distance along the last axis.
pub fn loss_mse(pred: &Tensor, target: &Tensor) -> Result<f64> {
    same_shape(pred, target, "mse")?;
    let width = *pred.shape().last().expect("rank ≥ 1");
    let samples = pred.len() / width;
    let total: f64 = pred.data().iter().zip(target.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(total / samples as f64)
}

pub fn loss_mse_grad(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    same_shape(pred, target, "mse")?;
    let width = *pred.shape().last().expect("rank ≥ 1");
    let samples = (pred.len() / width) as f64;
    let data = pred.data().iter().zip(target.data()).map(|(a, b)| 2.0 * (a - b) / samples).collect();
    Tensor::new(pred.shape().to_vec(), data)
}

/// `λ · mse + bce`.
pub fn combined_loss(lambda: f64, mse: f64, bce: f64) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(Error::invalid(format!("λ = {lambda} must be nonnegative")));
    }
    Ok(lambda * mse + bce)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{finite_diff_check, FD_STEP};

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn bce_values() {
        let half = Tensor::filled(&[4, 5], 0.5);
        let labels = Tensor::from_fn(&[4, 5], |i| (i % 3 == 0) as u8 as f64);
        assert!((loss_bce(&half, &labels).unwrap() - 2f64.ln()).abs() < 1e-12);
        assert!(loss_bce(&labels, &labels).unwrap() <= 1e-6);
        let one = loss_bce(&t(&[1], &[0.9]), &t(&[1], &[1.0])).unwrap();
        assert!((one - 0.10536051565782628).abs() < 1e-12);
        assert!(loss_bce(&half, &Tensor::zeros(&[5, 4])).is_err());
    }

    #[test]
    fn mse_values() {
        let x = Tensor::from_fn(&[10, 17], |i| i as f64 * 0.01);
        assert_eq!(loss_mse(&x, &x).unwrap(), 0.0);
        let mut y = x.clone();
        y.data_mut()[40] += 0.1;
        assert!((loss_mse(&y, &x).unwrap() - 0.001).abs() < 1e-15);
        let mut z = x.clone();
        z.data_mut()[40] += 0.2;
        assert!((loss_mse(&z, &x).unwrap() / loss_mse(&y, &x).unwrap() - 4.0).abs() < 1e-9);
    }

    #[test]
    fn combined() {
        assert_eq!(combined_loss(0.0, 5.0, 0.3).unwrap(), 0.3);
        assert!((combined_loss(4.0, 0.01, 0.1).unwrap() - 0.14).abs() < 1e-15);
        assert!(combined_loss(-1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let target = t(&[2, 3], &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
        let point = [0.2, 0.7, 0.5, 0.9, 0.1, 0.35];
        let g = loss_bce_grad(&t(&[2, 3], &point), &target).unwrap();
        let e = finite_diff_check(&point, g.data(), FD_STEP * 0.01, |x| loss_bce(&t(&[2, 3], x), &target).unwrap());
        assert!(e < 1e-6, "{e}");
        let g = loss_mse_grad(&t(&[2, 3], &point), &target).unwrap();
        let e = finite_diff_check(&point, g.data(), FD_STEP, |x| loss_mse(&t(&[2, 3], x), &target).unwrap());
        assert!(e < 1e-9, "{e}");
    }
}
