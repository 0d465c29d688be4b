//! Precision/recall/F1 scoring, scaled to 0-100.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("predictions ({0}) and labels ({1}) differ in length")]
    LengthMismatch(usize, usize),
    #[error("cannot score an empty prediction set")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// Binary scores; `classes[0]` is the negative class, `classes[1]` positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub classes: [ClassScores; 2],
    pub macro_f1: f64,
    pub n_examples: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    // zero-division counts as 0
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

fn class_scores(tp: usize, fp: usize, fn_: usize) -> ClassScores {
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    ClassScores {
        precision,
        recall,
        f1,
        support: tp + fn_,
    }
}

pub fn macro_f1(predictions: &[bool], labels: &[bool]) -> Result<Metrics, MetricsError> {
    if predictions.len() != labels.len() {
        return Err(MetricsError::LengthMismatch(predictions.len(), labels.len()));
    }
    if labels.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut cm = [[0usize; 2]; 2]; // [label][prediction]
    for (&p, &y) in predictions.iter().zip(labels) {
        cm[y as usize][p as usize] += 1;
    }
    let pos = class_scores(cm[1][1], cm[0][1], cm[1][0]);
    let neg = class_scores(cm[0][0], cm[1][0], cm[0][1]);
    Ok(Metrics {
        classes: [neg, pos],
        macro_f1: (pos.f1 + neg.f1) / 2.0,
        n_examples: labels.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MulticlassMetrics {
    pub per_class: Vec<ClassScores>,
    /// Mean F1 over classes present in labels or predictions.
    pub macro_f1: f64,
    /// Support-weighted mean F1.
    pub weighted_f1: f64,
    pub accuracy: f64,
    pub n_examples: usize,
}

pub fn multiclass_f1(
    predictions: &[usize],
    labels: &[usize],
    n_classes: usize,
) -> Result<MulticlassMetrics, MetricsError> {
    if predictions.len() != labels.len() {
        return Err(MetricsError::LengthMismatch(predictions.len(), labels.len()));
    }
    if labels.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut tp = vec![0usize; n_classes];
    let mut fp = vec![0usize; n_classes];
    let mut fn_ = vec![0usize; n_classes];
    for (&p, &y) in predictions.iter().zip(labels) {
        if p == y {
            tp[y] += 1;
        } else {
            fp[p] += 1;
            fn_[y] += 1;
        }
    }
    let per_class: Vec<ClassScores> = (0..n_classes).map(|k| class_scores(tp[k], fp[k], fn_[k])).collect();
    let present: Vec<usize> = (0..n_classes).filter(|&k| tp[k] + fp[k] + fn_[k] > 0).collect();
    let macro_f1 = present.iter().map(|&k| per_class[k].f1).sum::<f64>() / present.len() as f64;
    let weighted_f1 = per_class.iter().map(|s| s.f1 * s.support as f64).sum::<f64>() / labels.len() as f64;
    let accuracy = ratio(tp.iter().sum(), labels.len());
    Ok(MulticlassMetrics {
        per_class,
        macro_f1,
        weighted_f1,
        accuracy,
        n_examples: labels.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect() {
        let y = [true, false, true, false];
        assert_eq!(macro_f1(&y, &y).unwrap().macro_f1, 100.0);
    }

    #[test]
    fn all_positive_on_balanced() {
        let y = [true, false, true, false];
        let m = macro_f1(&[true; 4], &y).unwrap();
        assert!((m.classes[1].f1 - 200.0 / 3.0).abs() < 1e-9);
        assert_eq!(m.classes[0].f1, 0.0);
        assert!((m.macro_f1 - 100.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn half_right() {
        // TP=1 FP=1 FN=1 TN=1: both classes P=R=F1=50
        let m = macro_f1(&[true, false, true, false], &[true, false, false, true]).unwrap();
        assert_eq!(m.macro_f1, 50.0);
    }

    #[test]
    fn errors() {
        assert_eq!(
            macro_f1(&[true], &[true, false]),
            Err(MetricsError::LengthMismatch(1, 2))
        );
        assert_eq!(macro_f1(&[], &[]), Err(MetricsError::Empty));
    }

    #[test]
    fn multiclass_weighted_and_macro() {
        let m = multiclass_f1(&[0, 1, 1, 2], &[0, 1, 2, 2], 4).unwrap();
        assert_eq!(m.per_class[0].f1, 100.0);
        assert!((m.per_class[1].f1 - 200.0 / 3.0).abs() < 1e-9);
        assert!((m.per_class[2].f1 - 200.0 / 3.0).abs() < 1e-9);
        assert!((m.macro_f1 - (100.0 + 400.0 / 3.0) / 3.0).abs() < 1e-9);
        assert!((m.weighted_f1 - (100.0 + 200.0 / 3.0 + 400.0 / 3.0) / 4.0).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn permutation_invariant(pairs in proptest::collection::vec((any::<bool>(), any::<bool>()), 1..60), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let (p, y): (Vec<bool>, Vec<bool>) = pairs.iter().copied().unzip();
            let a = macro_f1(&p, &y).unwrap();
            let mut shuffled = pairs.clone();
            shuffled.shuffle(&mut crate::rng::seeded(seed));
            let (p2, y2): (Vec<bool>, Vec<bool>) = shuffled.into_iter().unzip();
            let b = macro_f1(&p2, &y2).unwrap();
            prop_assert!((a.macro_f1 - b.macro_f1).abs() < 1e-12);
            prop_assert!((0.0..=100.0).contains(&a.macro_f1));
        }
    }
}
