use crate::{Error, Result};

/// Probabilities are clipped at this floor before taking the log.
pub const PROBABILITY_CLIP: f64 = 1e-12;

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::EmptyLogits);
    }
    if let Some(bad) = logits.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("logit {bad}")));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = out.iter().sum();
    for p in &mut out {
        *p /= total;
    }
    Ok(out)
}

/// `-ln(p[gold] + 1e-12)`.
pub fn cross_entropy(probabilities: &[f64], gold_index: usize) -> Result<f64> {
    let p = probabilities.get(gold_index).ok_or(Error::IndexOutOfRange {
        index: gold_index,
        len: probabilities.len(),
    })?;
    Ok(-(p + PROBABILITY_CLIP).ln().min(0.0))
}

/// Gradient of `cross_entropy(softmax(z), gold)` with respect to `z`: `p - onehot(gold)`.
pub fn softmax_cross_entropy_grad(probabilities: &[f64], gold_index: usize) -> Result<Vec<f64>> {
    if gold_index >= probabilities.len() {
        return Err(Error::IndexOutOfRange {
            index: gold_index,
            len: probabilities.len(),
        });
    }
    let mut g = probabilities.to_vec();
    g[gold_index] -= 1.0;
    Ok(g)
}
