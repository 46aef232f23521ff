//! Per-class probability thresholds on calibrated outputs and the open-set
//! decision rules built on them.

use std::borrow::Borrow;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::calibration::{check_temperature, softermax, softmax};
use crate::data::{ExampleRecord, Label, LabelSpace, Split};
use crate::error::{Error, Result};
use crate::persist::{read_json, write_json};
use crate::scalar::{argmax, mean_and_population_std, Scalar};

/// Default number of standard deviations below the class mean.
pub const DEFAULT_ALPHA: f64 = 2.0;

/// Lowest admissible per-class threshold.
pub const THRESHOLD_FLOOR: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Reject when no softmax probability exceeds 0.5.
    SoftmaxT,
    /// Per-class thresholds on uncalibrated softmax (T = 1).
    DocSoftmax,
    /// Per-class thresholds on temperature-scaled softmax.
    Softermax,
    Lof,
    Smdn,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::SoftmaxT,
        Method::DocSoftmax,
        Method::Softermax,
        Method::Lof,
        Method::Smdn,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::SoftmaxT => "softmax_t",
            Method::DocSoftmax => "doc_softmax",
            Method::Softermax => "softermax",
            Method::Lof => "lof",
            Method::Smdn => "smdn",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown method `{s}`"))
    }
}

/// Novelty probabilities behind an SMDN decision.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoveltyProbabilities<F> {
    pub p_sm: F,
    pub p_lof: F,
    pub p_joint: F,
}

/// One open-set decision.
///
/// `confidence_score` is the method's acceptance margin, negative when the
/// record leans unknown: `max p - 0.5` for softmax_t, the thresholded
/// confidence for doc_softmax and softermax, `threshold - lof` for lof and
/// `0.5 - p_joint` for smdn.
#[derive(Clone, Debug, PartialEq)]
pub struct OpenSetPrediction<F> {
    pub id: String,
    pub decision: Label,
    pub confidence_score: F,
    pub method: Method,
    pub novelty: Option<NoveltyProbabilities<F>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassThreshold<F> {
    pub label: String,
    pub mu: F,
    pub sigma: F,
    #[serde(rename = "t")]
    pub threshold: F,
}

/// Temperature plus one probability threshold per class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SofterMaxModel<F> {
    pub temperature: F,
    pub alpha: F,
    pub stat_split: Split,
    /// Always `"population"`: the standard deviation divides by n.
    pub sigma_estimator: String,
    pub per_class: Vec<ClassThreshold<F>>,
}

/// `max(0.5, mu - alpha * sigma)`.
pub fn class_threshold<F: Scalar>(mu: F, sigma: F, alpha: F) -> F {
    F::lit(THRESHOLD_FLOOR).max(mu - alpha * sigma)
}

/// Estimates each class's mean and standard deviation of its own calibrated
/// probability over all records whose gold label is that class, correct or not.
pub fn fit_thresholds<F: Scalar, R: Borrow<ExampleRecord<F>>>(
    records: &[R],
    label_space: &LabelSpace,
    temperature: F,
    alpha: F,
    stat_split: Split,
) -> Result<SofterMaxModel<F>> {
    check_temperature(temperature)?;
    if !(alpha >= F::zero() && alpha.is_finite()) {
        return Err(Error::Invalid(format!("alpha must be a non-negative real, got {alpha}")));
    }
    let n = label_space.n_classes();
    let mut own_prob: Vec<Vec<F>> = vec![Vec::new(); n];
    for rec in records {
        let rec = rec.borrow();
        let gold = rec.known_gold("fit_thresholds")?;
        if rec.logits.len() != n {
            return Err(Error::Dimension {
                expected: n,
                found: rec.logits.len(),
            });
        }
        let p = softermax(&rec.logits, temperature)?;
        own_prob[gold].push(p[gold]);
    }
    let per_class = own_prob
        .iter()
        .zip(label_space.class_names())
        .map(|(probs, label)| {
            if probs.is_empty() {
                return Err(Error::EmptyClass(label.clone()));
            }
            let (mu, sigma) = mean_and_population_std(probs);
            Ok(ClassThreshold {
                label: label.clone(),
                mu,
                sigma,
                threshold: class_threshold(mu, sigma, alpha),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SofterMaxModel {
        temperature,
        alpha,
        stat_split,
        sigma_estimator: "population".into(),
        per_class,
    })
}

impl<F: Scalar> SofterMaxModel<F> {
    pub fn n_classes(&self) -> usize {
        self.per_class.len()
    }

    pub fn thresholds(&self) -> Vec<F> {
        self.per_class.iter().map(|c| c.threshold).collect()
    }

    /// Highest calibrated probability minus its class threshold, and that class.
    pub fn confidence_score(&self, logits: &[F]) -> Result<(F, usize)> {
        if logits.len() != self.n_classes() {
            return Err(Error::Dimension {
                expected: self.n_classes(),
                found: logits.len(),
            });
        }
        let p = softermax(logits, self.temperature)?;
        Ok(thresholded_max(&p, &self.thresholds()))
    }

    /// Confirms the stored thresholds follow from the stored statistics.
    pub fn validate(&self) -> Result<()> {
        check_temperature(self.temperature)?;
        for c in &self.per_class {
            let expect = class_threshold(c.mu, c.sigma, self.alpha);
            if c.threshold != expect {
                return Err(Error::Model(format!(
                    "threshold for `{}` is {}, statistics give {}",
                    c.label, c.threshold, expect
                )));
            }
        }
        Ok(())
    }

    /// Writes `thresholds.json`.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let model: Self = read_json(path)?;
        model.validate()?;
        Ok(model)
    }
}

/// `max_i (p_i - t_i)` and its first maximizing index.
pub fn thresholded_max<F: Scalar>(probs: &[F], thresholds: &[F]) -> (F, usize) {
    let diffs: Vec<F> = probs.iter().zip(thresholds).map(|(&p, &t)| p - t).collect();
    let best = argmax(&diffs);
    (diffs[best], best)
}

/// Decisions for the probability-threshold methods.
///
/// `thresholds` must be the fitted-temperature model for `Softermax` and the
/// `T = 1` model for `DocSoftmax`; `SoftmaxT` ignores it apart from the
/// dimension check.
pub fn predict_open_set<F: Scalar>(
    record: &ExampleRecord<F>,
    thresholds: &SofterMaxModel<F>,
    method: Method,
) -> Result<OpenSetPrediction<F>> {
    if record.logits.len() != thresholds.n_classes() {
        return Err(Error::Dimension {
            expected: thresholds.n_classes(),
            found: record.logits.len(),
        });
    }
    let (decision, confidence_score) = match method {
        Method::SoftmaxT => {
            let p = softmax(&record.logits)?;
            let top = argmax(&p);
            let margin = p[top] - F::lit(0.5);
            let decision = if margin > F::zero() {
                Label::Known(top)
            } else {
                Label::Unknown
            };
            (decision, margin)
        }
        Method::DocSoftmax | Method::Softermax => {
            let (score, class) = thresholds.confidence_score(&record.logits)?;
            let decision = if score < F::zero() {
                Label::Unknown
            } else {
                Label::Known(class)
            };
            (decision, score)
        }
        Method::Lof => return Err(Error::NeedsFusion("lof")),
        Method::Smdn => return Err(Error::NeedsFusion("smdn")),
    };
    Ok(OpenSetPrediction {
        id: record.id.clone(),
        decision,
        confidence_score,
        method,
        novelty: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn model(temperature: f64, thresholds: &[f64]) -> SofterMaxModel<f64> {
        SofterMaxModel {
            temperature,
            alpha: 2.0,
            stat_split: Split::Train,
            sigma_estimator: "population".into(),
            per_class: thresholds
                .iter()
                .enumerate()
                .map(|(i, &t)| ClassThreshold {
                    label: format!("c{i}"),
                    mu: t,
                    sigma: 0.0,
                    threshold: t,
                })
                .collect(),
        }
    }

    fn record(logits: Vec<f64>, gold: usize) -> ExampleRecord<f64> {
        ExampleRecord {
            id: format!("r{gold}"),
            split: Split::Train,
            gold: Label::Known(gold),
            logits,
            features: vec![0.0],
        }
    }

    /// Logits whose softmax is exactly `p` up to rounding.
    fn logits_for(p: &[f64]) -> Vec<f64> {
        p.iter().map(|v| v.ln()).collect()
    }

    #[test]
    fn threshold_arithmetic() {
        assert_abs_diff_eq!(class_threshold(0.9, 0.1, 2.0), 0.7, epsilon = 1e-15);
        assert_eq!(class_threshold(0.55, 0.05, 2.0), 0.5);
        assert_eq!(class_threshold(0.8, 0.0, 2.0), 0.8);
    }

    #[test]
    fn single_record_class_has_zero_sigma() {
        let space = LabelSpace::new(vec!["a".into(), "b".into()], 1).unwrap();
        let recs = vec![record(logits_for(&[0.8, 0.2]), 0), record(logits_for(&[0.3, 0.7]), 1), record(logits_for(&[0.1, 0.9]), 1)];
        let m = fit_thresholds(&recs, &space, 1.0, 2.0, Split::Train).unwrap();
        assert_eq!(m.per_class[0].sigma, 0.0);
        assert_abs_diff_eq!(m.per_class[0].threshold, 0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(m.per_class[1].mu, 0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(m.per_class[1].sigma, 0.1, epsilon = 1e-12);
        assert_eq!(m.per_class[1].threshold, 0.6f64.max(0.5).max(m.per_class[1].mu - 2.0 * m.per_class[1].sigma));
        m.validate().unwrap();
    }

    #[test]
    fn empty_class_is_an_error() {
        let space = LabelSpace::new(vec!["a".into(), "b".into()], 1).unwrap();
        let recs = vec![record(vec![1.0, 0.0], 0)];
        assert!(matches!(
            fit_thresholds(&recs, &space, 1.0, 2.0, Split::Train),
            Err(Error::EmptyClass(c)) if c == "b"
        ));
    }

    #[test]
    fn confidence_score_examples() {
        let m = model(1.0, &[0.7, 0.5]);
        let (s, c) = m.confidence_score(&logits_for(&[0.8, 0.2])).unwrap();
        assert_abs_diff_eq!(s, 0.1, epsilon = 1e-12);
        assert_eq!(c, 0);
        let m = model(1.0, &[0.7, 0.6]);
        let (s, _) = m.confidence_score(&logits_for(&[0.55, 0.45])).unwrap();
        assert_abs_diff_eq!(s, -0.15, epsilon = 1e-12);
        let pred = predict_open_set(&record(logits_for(&[0.55, 0.45]), 0), &m, Method::Softermax).unwrap();
        assert_eq!(pred.decision, Label::Unknown);
        assert!(matches!(m.confidence_score(&[1.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn softmax_t_rule() {
        let m = model(1.0, &[0.5, 0.5, 0.5]);
        let accept = predict_open_set(&record(logits_for(&[0.9, 0.05, 0.05]), 0), &m, Method::SoftmaxT).unwrap();
        assert_eq!(accept.decision, Label::Known(0));
        let reject = predict_open_set(&record(logits_for(&[0.45, 0.35, 0.20]), 0), &m, Method::SoftmaxT).unwrap();
        assert_eq!(reject.decision, Label::Unknown);
        // exactly 0.5 does not exceed 0.5
        let tie = predict_open_set(&record(vec![0.0, 0.0, -800.0], 0), &m, Method::SoftmaxT).unwrap();
        assert_eq!(tie.decision, Label::Unknown);
    }

    #[test]
    fn fusion_methods_are_routed_away() {
        let m = model(1.0, &[0.5, 0.5]);
        let r = record(vec![1.0, 0.0], 0);
        assert!(matches!(predict_open_set(&r, &m, Method::Lof), Err(Error::NeedsFusion(_))));
        assert!(matches!(predict_open_set(&r, &m, Method::Smdn), Err(Error::NeedsFusion(_))));
    }

    #[test]
    fn zero_confidence_is_accepted() {
        let logits = vec![1.2, 0.0];
        let p = softmax(&logits).unwrap();
        let m = model(1.0, &[p[0], 0.9]);
        let (s, _) = m.confidence_score(&logits).unwrap();
        assert_eq!(s, 0.0);
        let pred = predict_open_set(&record(logits, 0), &m, Method::DocSoftmax).unwrap();
        assert_eq!(pred.decision, Label::Known(0));
    }

    #[test]
    fn model_file_detects_tampering() {
        let mut m = model(1.3, &[0.6, 0.7]);
        m.validate().unwrap();
        m.per_class[1].threshold = 0.71;
        assert!(matches!(m.validate(), Err(Error::Model(_))));
    }
}
