//! Predictions and evaluation metrics over unseen-class scores.

use std::collections::HashMap;

use serde::Serialize;

use crate::chain::UnseenScores;
use crate::error::{Error, Result};
use crate::json::{f64_sig17, pairs_sig17};

/// Index of the largest entry; ties go to the lower index.
pub(crate) fn argmax(row: impl IntoIterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (j, x) in row.into_iter().enumerate() {
        if best.is_none_or(|(_, b)| x > b) {
            best = Some((j, x));
        }
    }
    best.map(|(j, _)| j)
}

/// Highest-scoring unseen class per row.
pub fn predict(scores: &UnseenScores) -> Result<Vec<String>> {
    if scores.scores.ncols() == 0 || scores.unseen_names.is_empty() {
        return Err(Error::EmptyScores);
    }
    Ok(scores
        .scores
        .row_iter()
        .map(|row| {
            let j = argmax(row.iter().copied()).expect("nonempty row");
            scores.unseen_names[j].clone()
        })
        .collect())
}

/// Tie-aware Mann-Whitney estimate of the ROC area: the fraction of
/// (positive, negative) pairs where the positive scores higher, ties
/// counting one half.
pub fn auc_binary(scores: &[f64], positives: &[bool]) -> Result<f64> {
    if scores.len() != positives.len() {
        return Err(Error::DimensionMismatch {
            expected: scores.len(),
            found: positives.len(),
            context: Some("labels".into()),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("scores".into()));
    }
    let n_pos = positives.iter().filter(|&&p| p).count() as u128;
    let n_neg = positives.len() as u128 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::DegenerateLabels);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Counted in half-pairs so the result is exact before the final division.
    let mut half_pairs: u128 = 0;
    let mut negatives_below: u128 = 0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let group = &order[start..end];
        let pos = group.iter().filter(|&&i| positives[i]).count() as u128;
        let neg = group.len() as u128 - pos;
        half_pairs += 2 * pos * negatives_below + pos * neg;
        negatives_below += neg;
        start = end;
    }
    Ok(half_pairs as f64 / (2 * n_pos * n_neg) as f64)
}

/// One-vs-rest AUC for each unseen class over all rows.
pub fn per_class_auc(scores: &UnseenScores, truth: &[String]) -> Result<Vec<(String, f64)>> {
    if truth.len() != scores.rows() {
        return Err(Error::DimensionMismatch {
            expected: scores.rows(),
            found: truth.len(),
            context: Some("truth labels".into()),
        });
    }
    scores
        .unseen_names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let positives: Vec<bool> = truth.iter().map(|t| t == name).collect();
            let auc = auc_binary(&scores.column(j), &positives).map_err(|e| match e {
                Error::DegenerateLabels => Error::EmptyClass(name.clone()),
                other => other,
            })?;
            Ok((name.clone(), auc))
        })
        .collect()
}

/// Macro-averaged accuracy: the mean over `classes` of the fraction of each
/// class's images that were predicted correctly.
pub fn mean_class_accuracy(
    predictions: &[String],
    truth: &[String],
    classes: &[String],
) -> Result<f64> {
    if predictions.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            found: predictions.len(),
            context: Some("predictions".into()),
        });
    }
    let index: HashMap<&str, usize> = classes
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    let mut totals = vec![0usize; classes.len()];
    let mut correct = vec![0usize; classes.len()];
    for (pred, label) in predictions.iter().zip(truth) {
        let c = *index
            .get(label.as_str())
            .ok_or_else(|| Error::UnknownLabel(label.clone()))?;
        totals[c] += 1;
        if pred == label {
            correct[c] += 1;
        }
    }
    if let Some(c) = totals.iter().position(|&t| t == 0) {
        return Err(Error::EmptyClass(classes[c].clone()));
    }
    let sum: f64 = correct
        .iter()
        .zip(&totals)
        .map(|(&k, &t)| k as f64 / t as f64)
        .sum();
    Ok(sum / classes.len() as f64)
}

/// Predictions, metrics and stage timings for one scoring run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreReport {
    pub predictions: Vec<String>,
    #[serde(serialize_with = "pairs_sig17")]
    pub per_class_auc: Vec<(String, f64)>,
    #[serde(serialize_with = "f64_sig17")]
    pub mean_auc: f64,
    #[serde(serialize_with = "f64_sig17")]
    pub mean_class_accuracy: f64,
    /// Stage name to wall time in seconds.
    #[serde(serialize_with = "pairs_sig17")]
    pub timings: Vec<(String, f64)>,
}

impl ScoreReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn timing(&self, stage: &str) -> Option<f64> {
        self.timings
            .iter()
            .find(|(name, _)| name == stage)
            .map(|&(_, t)| t)
    }
}

/// Predicts and scores `scores` against `truth`.
pub fn evaluate(
    scores: &UnseenScores,
    truth: &[String],
    timings: Vec<(String, f64)>,
) -> Result<ScoreReport> {
    let predictions = predict(scores)?;
    let mean_class_accuracy = mean_class_accuracy(&predictions, truth, &scores.unseen_names)?;
    let per_class_auc = per_class_auc(scores, truth)?;
    let mean_auc = per_class_auc.iter().map(|(_, a)| a).sum::<f64>() / per_class_auc.len() as f64;
    Ok(ScoreReport {
        predictions,
        per_class_auc,
        mean_auc,
        mean_class_accuracy,
        timings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, DMatrix};
    use proptest::prelude::*;

    fn s(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|x| x.to_string()).collect()
    }

    fn scores(m: DMatrix<f64>) -> UnseenScores {
        let q = m.ncols();
        UnseenScores {
            scores: m,
            unseen_names: (0..q).map(|j| format!("z{j}")).collect(),
        }
    }

    #[test]
    fn predict_examples() {
        assert_eq!(
            predict(&scores(dmatrix![2.0 / 3.0, 1.0 / 3.0])).unwrap(),
            s(&["z0"])
        );
        assert_eq!(predict(&scores(dmatrix![0.5, 0.5])).unwrap(), s(&["z0"]));
        assert_eq!(
            predict(&scores(dmatrix![0.1, 0.2, 0.7])).unwrap(),
            s(&["z2"])
        );
        assert!(matches!(
            predict(&scores(DMatrix::zeros(3, 0))),
            Err(Error::EmptyScores)
        ));
    }

    #[test]
    fn auc_examples() {
        assert_eq!(
            auc_binary(&[0.9, 0.8, 0.1], &[true, true, false]).unwrap(),
            1.0
        );
        assert_eq!(
            auc_binary(&[0.9, 0.8, 0.1], &[false, true, true]).unwrap(),
            0.0
        );
        assert_eq!(auc_binary(&[0.5, 0.5], &[true, false]).unwrap(), 0.5);
        assert!(matches!(
            auc_binary(&[0.1, 0.2], &[true, true]),
            Err(Error::DegenerateLabels)
        ));
    }

    #[test]
    fn accuracy_examples() {
        let classes = s(&["a", "b"]);
        let truth = s(&["a", "a", "b", "b"]);
        assert_eq!(mean_class_accuracy(&truth, &truth, &classes).unwrap(), 1.0);
        let pred = s(&["a", "b", "b", "b"]);
        assert_eq!(mean_class_accuracy(&pred, &truth, &classes).unwrap(), 0.75);

        let classes = s(&["a", "b", "c"]);
        let truth = s(&["a", "b", "c", "a", "b", "c"]);
        let constant = s(&["a"; 6]);
        let acc = mean_class_accuracy(&constant, &truth, &classes).unwrap();
        assert!((acc - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn accuracy_errors() {
        let classes = s(&["a", "b"]);
        assert!(matches!(
            mean_class_accuracy(&s(&["a"]), &s(&["x"]), &classes),
            Err(Error::UnknownLabel(_))
        ));
        assert!(matches!(
            mean_class_accuracy(&s(&["a"]), &s(&["a"]), &classes),
            Err(Error::EmptyClass(c)) if c == "b"
        ));
    }

    #[test]
    fn evaluate_fills_every_field() {
        let sc = scores(dmatrix![0.9, 0.1; 0.2, 0.8; 0.6, 0.4]);
        let truth = s(&["z0", "z1", "z1"]);
        let report = evaluate(&sc, &truth, vec![("scoring".into(), 0.5)]).unwrap();
        assert_eq!(report.predictions, s(&["z0", "z1", "z0"]));
        assert_eq!(report.mean_class_accuracy, 0.75);
        // z0 column: positive 0.9 beats negatives 0.2 and 0.6.
        assert_eq!(report.per_class_auc[0], ("z0".into(), 1.0));
        assert_eq!(report.per_class_auc[1], ("z1".into(), 1.0));
        assert_eq!(report.mean_auc, 1.0);
        assert_eq!(report.timing("scoring"), Some(0.5));

        let json: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
        assert_eq!(json["per_class_auc"]["z1"], 1.0);
        assert_eq!(json["mean_class_accuracy"], 0.75);
    }

    fn labelled(max: usize) -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
        (2..max)
            .prop_flat_map(|n| {
                (
                    prop::collection::vec(-5.0f64..5.0, n),
                    prop::collection::vec(any::<bool>(), n),
                )
            })
            .prop_filter("both labels", |(_, l)| {
                l.iter().any(|&x| x) && l.iter().any(|&x| !x)
            })
    }

    proptest! {
        #[test]
        fn auc_is_rank_invariant((scores, labels) in labelled(60)) {
            let a = auc_binary(&scores, &labels).unwrap();
            let warped: Vec<f64> = scores.iter().map(|x| (x * 0.7).exp() + 3.0).collect();
            prop_assert_eq!(a, auc_binary(&warped, &labels).unwrap());
        }

        #[test]
        fn auc_complement_sums_to_one((scores, labels) in labelled(60)) {
            let flipped: Vec<bool> = labels.iter().map(|x| !x).collect();
            let sum = auc_binary(&scores, &labels).unwrap() + auc_binary(&scores, &flipped).unwrap();
            prop_assert!((sum - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn predict_is_scale_invariant(
            rows in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 4), 1..10),
            c in 1e-3f64..1e3,
        ) {
            let n = rows.len();
            let m = DMatrix::from_row_iterator(n, 4, rows.into_iter().flatten());
            let scaled = &m * c;
            prop_assert_eq!(predict(&scores(m)).unwrap(), predict(&scores(scaled)).unwrap());
        }

        #[test]
        fn missing_class_lowers_accuracy(truth in prop::collection::vec(0usize..3, 6..30)) {
            let classes = s(&["a", "b", "c"]);
            let mut truth: Vec<String> = truth.into_iter().map(|i| classes[i].clone()).collect();
            truth.extend(classes.iter().cloned());
            prop_assert_eq!(mean_class_accuracy(&truth, &truth, &classes).unwrap(), 1.0);
            // Never predicts "c".
            let pred: Vec<String> = truth
                .iter()
                .map(|t| if t == "c" { "a".to_string() } else { t.clone() })
                .collect();
            prop_assert!(mean_class_accuracy(&pred, &truth, &classes).unwrap() < 1.0);
        }
    }
}
