use crate::error::{invalid, Error, Result};

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

/// Softmax cross-entropy and its gradient with respect to the logits
/// (`softmax(z) - onehot(label)`).
pub fn cross_entropy_loss(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if logits.is_empty() {
        return Err(Error::Empty("logits"));
    }
    if label >= logits.len() {
        return Err(invalid(format!("label {label} out of range for {} classes", logits.len())));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln() + max;
    let loss = log_sum - logits[label];
    let mut grad = softmax(logits);
    grad[label] -= 1.0;
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits() {
        let (loss, grad) = cross_entropy_loss(&[0.0; 4], 2).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-15);
        assert_eq!(grad, vec![0.25, 0.25, -0.75, 0.25]);
    }

    #[test]
    fn large_logits_stay_finite() {
        let p = softmax(&[1000.0, 1000.0, -1000.0]);
        assert!((p[0] - 0.5).abs() < 1e-15 && p[2] == 0.0);
        let (loss, _) = cross_entropy_loss(&[1000.0, 0.0], 1).unwrap();
        assert!((loss - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_labels() {
        assert!(cross_entropy_loss(&[0.0, 1.0], 2).is_err());
        assert!(cross_entropy_loss(&[], 0).is_err());
    }
}
