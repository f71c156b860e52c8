use serde::{Deserialize, Serialize};

use super::EvalError;

/// `confusion[true][predicted]`.
pub type Confusion = [[u64; 2]; 2];

/// Binary classification scores in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub confusion: Confusion,
}

fn f1(tp: u64, predicted: u64, support: u64) -> f64 {
    // 2PR / (P + R) reduces to 2tp / (predicted + support); zero when either
    // P + R vanishes or the class is absent from both sides.
    let den = predicted + support;
    if tp == 0 || den == 0 {
        0.0
    } else {
        2.0 * tp as f64 / den as f64
    }
}

impl Metrics {
    pub fn from_confusion(confusion: Confusion) -> Result<Self, EvalError> {
        let total: u64 = confusion.iter().flatten().sum();
        if total == 0 {
            return Err(EvalError::EmptyInput);
        }
        let [[tn, fp], [fneg, tp]] = confusion;
        let f1_0 = f1(tn, tn + fneg, tn + fp);
        let f1_1 = f1(tp, tp + fp, tp + fneg);
        Ok(Self {
            accuracy: 100.0 * (tn + tp) as f64 / total as f64,
            macro_f1: 100.0 * (f1_0 + f1_1) / 2.0,
            confusion,
        })
    }

    pub fn total(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }
}

pub fn confusion_matrix(y_true: &[u8], y_pred: &[u8]) -> Result<Confusion, EvalError> {
    if y_true.len() != y_pred.len() {
        return Err(EvalError::LengthMismatch {
            expected: y_true.len(),
            got: y_pred.len(),
        });
    }
    if y_true.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut c = [[0u64; 2]; 2];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if t > 1 || p > 1 {
            return Err(EvalError::InvalidLabel(t.max(p)));
        }
        c[t as usize][p as usize] += 1;
    }
    Ok(c)
}

pub fn compute_metrics(y_true: &[u8], y_pred: &[u8]) -> Result<Metrics, EvalError> {
    Metrics::from_confusion(confusion_matrix(y_true, y_pred)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn expand(c: Confusion) -> (Vec<u8>, Vec<u8>) {
        let mut t = Vec::new();
        let mut p = Vec::new();
        for (ti, row) in c.iter().enumerate() {
            for (pi, &count) in row.iter().enumerate() {
                t.extend(std::iter::repeat(ti as u8).take(count as usize));
                p.extend(std::iter::repeat(pi as u8).take(count as usize));
            }
        }
        (t, p)
    }

    #[test]
    fn hand_checked_confusion() {
        let (t, p) = expand([[50, 10], [5, 35]]);
        let m = compute_metrics(&t, &p).unwrap();
        assert!((m.accuracy - 85.0).abs() <= 0.005);
        // F1_0 = 100/115, F1_1 = 70/85
        let expected = 50.0 * (100.0 / 115.0 + 70.0 / 85.0);
        assert!((m.macro_f1 - expected).abs() < 1e-12);
        assert!((m.macro_f1 - 84.65).abs() <= 0.01);
    }

    #[test]
    fn perfect_and_degenerate_predictions() {
        let t = [0, 1, 1, 0];
        let m = compute_metrics(&t, &t).unwrap();
        assert_eq!((m.accuracy, m.macro_f1), (100.0, 100.0));
        let m = compute_metrics(&t, &[0, 0, 0, 0]).unwrap();
        assert_eq!(m.accuracy, 50.0);
        // class 1 scores zero, class 0 scores 2*2/(4+2)
        assert!((m.macro_f1 - 100.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn input_errors() {
        assert_eq!(compute_metrics(&[], &[]), Err(EvalError::EmptyInput));
        assert_eq!(
            compute_metrics(&[0, 1], &[0]),
            Err(EvalError::LengthMismatch { expected: 2, got: 1 })
        );
        assert_eq!(compute_metrics(&[0, 2], &[0, 1]), Err(EvalError::InvalidLabel(2)));
    }

    proptest! {
        #[test]
        fn label_swap_keeps_macro_f1(pairs in prop::collection::vec((0u8..2, 0u8..2), 1..500)) {
            let (t, p): (Vec<u8>, Vec<u8>) = pairs.into_iter().unzip();
            let a = compute_metrics(&t, &p).unwrap();
            let flip = |v: &[u8]| v.iter().map(|l| 1 - l).collect::<Vec<u8>>();
            let b = compute_metrics(&flip(&t), &flip(&p)).unwrap();
            prop_assert_eq!(a.macro_f1, b.macro_f1);
            prop_assert_eq!(a.accuracy, b.accuracy);
            prop_assert!((0.0..=100.0).contains(&a.macro_f1));
            let c = a.confusion;
            prop_assert_eq!(a.accuracy, 100.0 * (c[0][0] + c[1][1]) as f64 / t.len() as f64);
        }
    }
}
