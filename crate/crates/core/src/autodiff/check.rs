//! Central finite differences, used as the independent gradient oracle.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `(f(x + h·eᵢ) − f(x − h·eᵢ)) / 2h` for every coordinate `i`.
pub fn finite_difference_gradient<F>(mut f: F, x: &Tensor, h: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::invalid(format!("step h must be positive, got {h}")));
    }
    let mut probe = x.clone();
    let mut grad = Vec::with_capacity(x.numel());
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let down = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!(
                "finite difference at coordinate {i}"
            )));
        }
        grad.push((up - down) / (2.0 * h));
    }
    Tensor::new(x.shape().to_vec(), grad)
}

/// Largest elementwise `|a − n| / max(|a|, |n|, 1)` between an analytic and
/// a numerical gradient.
pub fn max_relative_error(analytic: &Tensor, numeric: &Tensor) -> f64 {
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1.0))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_gives_ones() {
        let x = Tensor::vector(vec![0.3, -1.2, 5.0]);
        let g = finite_difference_gradient(|t| Ok(t.data().iter().sum()), &x, 1e-5).unwrap();
        for v in g.data() {
            assert!((v - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn square_at_three() {
        let x = Tensor::vector(vec![3.0]);
        let g = finite_difference_gradient(|t| Ok(t.data()[0] * t.data()[0]), &x, 1e-5).unwrap();
        assert!((g.data()[0] - 6.0).abs() < 1e-6);
    }

    #[test]
    fn exp_at_zero() {
        let x = Tensor::vector(vec![0.0]);
        let g = finite_difference_gradient(|t| Ok(t.data()[0].exp()), &x, 1e-5).unwrap();
        assert!((g.data()[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn non_finite_names_coordinate() {
        let x = Tensor::vector(vec![1.0, 0.0]);
        let err = finite_difference_gradient(|t| Ok(t.data()[1].ln()), &x, 1e-5).unwrap_err();
        assert!(
            err.to_string().contains("coordinate 0") || err.to_string().contains("coordinate 1")
        );
    }

    #[test]
    fn rejects_non_positive_step() {
        let x = Tensor::vector(vec![1.0]);
        assert!(finite_difference_gradient(|_| Ok(0.0), &x, 0.0).is_err());
    }
}
