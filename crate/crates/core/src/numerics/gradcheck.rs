use super::SeededRng;
use crate::{Error, Result};

pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// `|a - n| / max(1, |a|, |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Compares `analytic` against central differences of `loss` at up to
/// `probe_count` randomly chosen coordinates of `params` and returns the
/// largest relative error. When `probe_count >= params.len()` every
/// coordinate is checked.
pub fn grad_check<F>(
    mut loss: F,
    params: &[f64],
    analytic: &[f64],
    probe_count: usize,
    h: f64,
    rng: &mut SeededRng,
) -> Result<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    if analytic.len() != params.len() {
        return Err(Error::LengthMismatch {
            what: "analytic gradient",
            expected: params.len(),
            actual: analytic.len(),
        });
    }
    if probe_count == 0 || h.is_nan() || h <= 0.0 {
        return Err(Error::InvalidArgument(
            "grad_check needs probe_count >= 1 and h > 0".into(),
        ));
    }
    let mut probes = rng.permutation(params.len());
    probes.truncate(probe_count);

    let mut theta = params.to_vec();
    let mut worst = 0.0f64;
    for i in probes {
        let original = theta[i];
        theta[i] = original + h;
        let plus = loss(&theta);
        theta[i] = original - h;
        let minus = loss(&theta);
        theta[i] = original;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!("loss at parameter {i}")));
        }
        let numeric = (plus - minus) / (2.0 * h);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    Ok(worst)
}
