//! Classification and likelihood metrics.

use crate::batch::Batch;
use crate::error::{Result, SpnError};
use crate::gen_learn::generative_ll;
use crate::scalar::Real;
use crate::spn::Spn;

fn confusion(y_true: &[usize], y_pred: &[usize], class: usize) -> (usize, usize, usize) {
    let (mut tp, mut fp, mut fneg) = (0, 0, 0);
    for (&t, &p) in y_true.iter().zip(y_pred) {
        match (t == class, p == class) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fneg += 1,
            _ => {}
        }
    }
    (tp, fp, fneg)
}

/// One-vs-rest F1 of a single class; 0 when precision + recall is 0.
pub fn class_f1(y_true: &[usize], y_pred: &[usize], class: usize) -> f64 {
    let (tp, fp, fneg) = confusion(y_true, y_pred, class);
    // 2PR/(P+R) = 2tp / (2tp + fp + fn)
    let denom = 2 * tp + fp + fneg;
    if tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// Unweighted mean of the per-class F1 scores over `num_classes` classes.
pub fn macro_f1(y_true: &[usize], y_pred: &[usize], num_classes: usize) -> Result<f64> {
    if y_true.len() != y_pred.len() {
        return Err(SpnError::LengthMismatch(y_true.len(), y_pred.len()));
    }
    if num_classes == 0 {
        return Ok(0.0);
    }
    Ok((0..num_classes).map(|k| class_f1(y_true, y_pred, k)).sum::<f64>() / num_classes as f64)
}

/// Binary F1 of the positive class (zero-based index 1, the second label seen).
pub fn binary_f1(y_true: &[usize], y_pred: &[usize]) -> Result<f64> {
    if y_true.len() != y_pred.len() {
        return Err(SpnError::LengthMismatch(y_true.len(), y_pred.len()));
    }
    Ok(class_f1(y_true, y_pred, 1))
}

/// `argmax_k S[x, OneHot(k)]`, ties to the smallest index.
pub fn predict<F: Real>(spn: &Spn<F>, x: &[F]) -> Result<usize> {
    let joint = spn.class_log_joint(x)?;
    Ok(argmax(&joint))
}

pub fn argmax<F: Real>(v: &[F]) -> usize {
    let mut best = 0;
    for (k, &s) in v.iter().enumerate() {
        if s > v[best] {
            best = k;
        }
    }
    best
}

pub fn predict_all<F: Real>(spn: &Spn<F>, rows: &[Vec<F>]) -> Result<Vec<usize>> {
    rows.iter().map(|r| predict(spn, r)).collect()
}

/// Mean of `log S[x, OneHot(y)]` over the rows.
pub fn mean_test_ll<F: Real>(spn: &Spn<F>, x: &[Vec<F>], y: &[usize]) -> Result<f64> {
    if x.is_empty() {
        return Ok(0.0);
    }
    Ok(generative_ll(spn, &Batch::supervised(x, y)?)?.as_f64() / x.len() as f64)
}

pub fn accuracy(y_true: &[usize], y_pred: &[usize]) -> f64 {
    if y_true.is_empty() {
        return 0.0;
    }
    y_true.iter().zip(y_pred).filter(|(a, b)| a == b).count() as f64 / y_true.len() as f64
}

/// Sample mean and standard error `sd / sqrt(n)` (sample sd, zero for a single value).
pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn perfect_prediction() {
        let y = [0, 1, 2, 1];
        assert_eq!(macro_f1(&y, &y, 3).unwrap(), 1.0);
    }

    #[test]
    fn hand_confusion_matrix() {
        // One-based (2,1,1) vs (2,2,1).
        let t = [1, 0, 0];
        let p = [1, 1, 0];
        assert_relative_eq!(class_f1(&t, &p, 0), 2.0 / 3.0);
        assert_relative_eq!(class_f1(&t, &p, 1), 2.0 / 3.0);
        assert_relative_eq!(macro_f1(&t, &p, 2).unwrap(), 2.0 / 3.0);
        assert_relative_eq!(binary_f1(&t, &p).unwrap(), 2.0 / 3.0);
    }

    #[test]
    fn absent_class_scores_zero() {
        let t = [0, 1, 0];
        assert_relative_eq!(macro_f1(&t, &t, 3).unwrap(), 2.0 / 3.0);
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(macro_f1(&[0, 1], &[0], 2), Err(SpnError::LengthMismatch(2, 1))));
    }

    #[test]
    fn argmax_ties_and_scaling() {
        assert_eq!(argmax(&[0.2f64.ln(), 0.8f64.ln()]), 1);
        assert_eq!(argmax(&[0.5f64.ln(), 0.5f64.ln()]), 0);
        let shifted: Vec<f64> = [0.1f64, 0.7, 0.2].iter().map(|v| v.ln() + 5.0).collect();
        assert_eq!(argmax(&shifted), 1);
    }

    #[test]
    fn stderr_conventions() {
        assert_eq!(mean_and_stderr(&[3.0]), (3.0, 0.0));
        let (m, se) = mean_and_stderr(&[1.0, 2.0, 3.0, 4.0]);
        assert_relative_eq!(m, 2.5);
        assert_relative_eq!(se, (5.0f64 / 3.0 / 4.0).sqrt());
    }
}
