//! Central-difference verification of analytic gradients.

use crate::error::{Error, Result};
use rand::{seq::index::sample, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Minimum number of coordinates probed when the parameter vector is large
/// enough; smaller vectors are checked exhaustively.
pub const MIN_COORDS: usize = 200;

/// Compare `analytic` against central finite differences of `loss_fn` on a
/// seeded coordinate subsample. Returns the maximum relative error, where
/// the relative error uses `max(|analytic|, |numeric|, 1e-8)` as scale.
pub fn grad_check(
    loss_fn: &mut dyn FnMut(&[f64]) -> f64,
    params: &[f64],
    analytic: &[f64],
    epsilon: f64,
    seed: u64,
) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon <= 1e-2) {
        return Err(Error::Config(format!("epsilon {} outside (0, 1e-2]", epsilon)));
    }
    if params.len() != analytic.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} params but {} gradient entries",
            params.len(),
            analytic.len()
        )));
    }
    if let Some(bad) = analytic.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient(bad));
    }
    let coords: Vec<usize> = if params.len() <= MIN_COORDS {
        (0..params.len()).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        sample(&mut rng, params.len(), MIN_COORDS).into_vec()
    };
    let mut scratch = params.to_vec();
    let mut max_rel = 0.0f64;
    for &i in &coords {
        let orig = scratch[i];
        scratch[i] = orig + epsilon;
        let plus = loss_fn(&scratch);
        scratch[i] = orig - epsilon;
        let minus = loss_fn(&scratch);
        scratch[i] = orig;
        let numeric = (plus - minus) / (2.0 * epsilon);
        if !numeric.is_finite() {
            return Err(Error::NonFiniteGradient(i));
        }
        let rel = (analytic[i] - numeric).abs()
            / analytic[i].abs().max(numeric.abs()).max(1e-8);
        if rel > max_rel {
            max_rel = rel;
        }
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact_up_to_roundoff() {
        // Central differences are analytically exact on a quadratic, so the
        // only residual is roundoff; keep coordinates away from zero so the
        // relative error is well defined.
        let coeffs: Vec<f64> = (0..300).map(|i| 0.1 + i as f64 * 0.003).collect();
        let params: Vec<f64> = (0..300).map(|i| 0.3 + 0.5 * (i as f64).cos().powi(2)).collect();
        let analytic: Vec<f64> =
            coeffs.iter().zip(&params).map(|(c, x)| 2.0 * c * x).collect();
        let coeffs2 = coeffs.clone();
        let mut f = move |x: &[f64]| -> f64 {
            x.iter().zip(&coeffs2).map(|(xi, c)| c * xi * xi).sum()
        };
        let err = grad_check(&mut f, &params, &analytic, 1e-3, 0).unwrap();
        assert!(err < 1e-8, "max relative error {}", err);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let params = vec![0.3, -0.7, 1.1];
        let mut analytic = vec![2.0 * 0.3, 2.0 * -0.7, 2.0 * 1.1];
        analytic[1] *= 1.5;
        let mut f = |x: &[f64]| -> f64 { x.iter().map(|v| v * v).sum() };
        let err = grad_check(&mut f, &params, &analytic, 1e-5, 0).unwrap();
        assert!(err > 0.1);
    }

    #[test]
    fn rejects_bad_epsilon_and_nan_gradients() {
        let params = vec![1.0];
        let mut f = |x: &[f64]| x[0];
        assert!(grad_check(&mut f, &params, &[1.0], 0.0, 0).is_err());
        assert!(grad_check(&mut f, &params, &[1.0], 0.1, 0).is_err());
        assert!(matches!(
            grad_check(&mut f, &params, &[f64::NAN], 1e-5, 0).unwrap_err(),
            Error::NonFiniteGradient(0)
        ));
    }
}
