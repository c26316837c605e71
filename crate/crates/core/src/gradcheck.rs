//! Central finite-difference gradient checker.

use crate::error::{ensure_domain, Error, Result};
use crate::tensor::Tensor;

/// Compares the analytic gradient returned by `f` at `x` against central
/// differences with the given `step`.
///
/// `f` returns the scalar value and its gradient with respect to its
/// argument; only the value is used at perturbed points. The result is
/// `max_i |a_i − n_i| / max(1, |a_i| + |n_i|)`.
pub fn grad_check<F>(mut f: F, x: &Tensor, step: f32) -> Result<f64>
where
    F: FnMut(&Tensor) -> Result<(f64, Tensor)>,
{
    ensure_domain!(step > 0.0, "finite-difference step must be positive");
    let (value, analytic) = f(x)?;
    if value.is_nan() {
        return Err(Error::Numeric("function returned NaN".into()));
    }
    x.ensure_same_shape(&analytic, "analytic gradient")?;
    let mut probe = x.detached();
    let mut worst = 0.0f64;
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let (plus, _) = f(&probe)?;
        probe.data_mut()[i] = orig - step;
        let (minus, _) = f(&probe)?;
        probe.data_mut()[i] = orig;
        if plus.is_nan() || minus.is_nan() {
            return Err(Error::Numeric(format!(
                "function returned NaN near coordinate {i}"
            )));
        }
        // Use the step actually realized in f32.
        let h = ((orig + step) as f64) - ((orig - step) as f64);
        let numeric = (plus - minus) / h;
        let a = analytic.data()[i] as f64;
        let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Deterministic pseudo-random weights for building scalar test objectives.
pub fn probe_weights(n: usize, salt: u64) -> Vec<f32> {
    let mut state = salt.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
    (0..n)
        .map(|_| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            ((state >> 40) as f32 / (1u64 << 24) as f32) * 2.0 - 1.0
        })
        .collect()
}

/// `Σ wᵢ·yᵢ` in `f64`, the usual way to reduce an op output to a scalar.
pub fn weighted_sum(y: &Tensor, w: &[f32]) -> f64 {
    y.data()
        .iter()
        .zip(w)
        .map(|(&a, &b)| a as f64 * b as f64)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares() {
        let x = Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let err = grad_check(
            |t| {
                let v = t.data().iter().map(|&a| (a as f64).powi(2)).sum();
                Ok((v, t.map(|a| 2.0 * a)))
            },
            &x,
            1e-3,
        )
        .unwrap();
        assert!(err < 1e-6, "err = {err}");
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let x = Tensor::new(&[2], vec![0.5, -1.0]).unwrap();
        let err = grad_check(
            |t| {
                Ok((
                    t.data().iter().map(|&a| (a as f64).powi(3)).sum(),
                    t.map(|a| a),
                ))
            },
            &x,
            1e-3,
        )
        .unwrap();
        assert!(err > 0.1);
    }

    #[test]
    fn nan_is_reported() {
        let x = Tensor::new(&[1], vec![1.0]).unwrap();
        let res = grad_check(|t| Ok((f64::NAN, t.clone())), &x, 1e-3);
        assert!(matches!(res, Err(Error::Numeric(_))));
    }
}
