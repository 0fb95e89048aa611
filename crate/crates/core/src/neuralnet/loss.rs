use super::Matrix;
use crate::error::{check_len, Error, Result};

/// Mean over rows of the squared Euclidean residual norm:
/// `(1/M) sum_i ||pred_i - target_i||^2`, with gradient `(2/M)(pred - target)`.
pub fn mse_loss(pred: &Matrix, target: &Matrix) -> Result<(f64, Matrix)> {
    check_len("mse_loss rows", pred.rows(), target.rows())?;
    check_len("mse_loss cols", pred.cols(), target.cols())?;
    if pred.rows() == 0 {
        return Err(Error::validation("mse_loss needs at least one sample"));
    }
    let m = pred.rows() as f64;
    let mut grad = Matrix::zeros(pred.rows(), pred.cols());
    let mut loss = 0.0;
    for ((g, &p), &t) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        let r = p - t;
        loss += r * r;
        *g = 2.0 * r / m;
    }
    Ok((loss / m, grad))
}

/// Mean Huber loss over elements with threshold `delta`, and its gradient.
pub fn huber_loss(pred: &[f64], target: &[f64], delta: f64) -> Result<(f64, Vec<f64>)> {
    check_len("huber_loss", pred.len(), target.len())?;
    if pred.is_empty() {
        return Err(Error::validation("huber_loss needs at least one element"));
    }
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (&p, &t) in pred.iter().zip(target) {
        let r = p - t;
        if r.abs() <= delta {
            loss += 0.5 * r * r;
            grad.push(r / n);
        } else {
            loss += delta * (r.abs() - 0.5 * delta);
            grad.push(delta * r.signum() / n);
        }
    }
    Ok((loss / n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_examples() {
        let p = Matrix::row_vector(&[1.0, 0.0]);
        let (l, g) = mse_loss(&p, &p).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.data().iter().all(|&v| v == 0.0));

        let (l, g) = mse_loss(&p, &Matrix::row_vector(&[0.0, 0.0])).unwrap();
        assert_eq!(l, 1.0);
        assert_eq!(g.data(), &[2.0, 0.0]);

        let t = Matrix::row_vector(&[0.25, -0.5]);
        let scaled = Matrix::row_vector(&[0.25 + 3.0 * 0.75, -0.5 + 3.0 * 0.5]);
        let (base, _) = mse_loss(&p, &t).unwrap();
        let (s, _) = mse_loss(&scaled, &t).unwrap();
        assert!((s - 9.0 * base).abs() < 1e-12);

        assert!(mse_loss(&p, &Matrix::row_vector(&[1.0])).is_err());
    }

    #[test]
    fn huber_is_quadratic_then_linear() {
        let (l, g) = huber_loss(&[0.5], &[0.0], 1.0).unwrap();
        assert_eq!((l, g[0]), (0.125, 0.5));
        let (l, g) = huber_loss(&[-3.0], &[0.0], 1.0).unwrap();
        assert_eq!((l, g[0]), (2.5, -1.0));
    }
}
