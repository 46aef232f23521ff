//! Platt scaling of the two sub-method scores into novelty probabilities and
//! the joint SMDN decision.
//!
//! Each scaler works on the score shifted so that its sub-method's decision
//! boundary sits at zero, with the intercept pinned to zero. The boundary
//! therefore maps to a novelty probability of exactly one half and only the
//! slope is fitted.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::calibration::{softermax, TemperatureFit};
use crate::data::{ExampleRecord, Label};
use crate::error::{Error, Result};
use crate::lof::{LofFile, LofModel};
use crate::persist::{read_json, write_json};
use crate::scalar::{argmax, mean_and_population_std, Scalar};
use crate::thresholds::{predict_open_set, Method, NoveltyProbabilities, OpenSetPrediction, SofterMaxModel};

/// Decision threshold on the joint novelty probability.
pub const JOINT_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    HigherIsNovel,
    LowerIsNovel,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreSource {
    Softermax,
    Lof,
}

/// `P(novel | x) = 1 / (1 + exp(a * s(x) + b))`, where `s` is the score moved
/// into the novelty direction with the boundary at zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlattScaler<F> {
    pub a: F,
    pub b: F,
    pub boundary: F,
    pub direction: Direction,
    pub source: ScoreSource,
    /// True when no calibration score crossed the boundary and the slope came
    /// from the score spread instead of a likelihood fit.
    pub fallback: bool,
}

impl<F: Scalar> PlattScaler<F> {
    pub fn shifted(&self, score: F) -> F {
        match self.direction {
            Direction::HigherIsNovel => score - self.boundary,
            Direction::LowerIsNovel => self.boundary - score,
        }
    }

    pub fn probability(&self, score: F) -> F {
        F::one() / (F::one() + (self.a * self.shifted(score) + self.b).exp())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a < F::zero() && self.a.is_finite()) || self.b != F::zero() {
            return Err(Error::Model(format!(
                "Platt scaler needs a negative finite slope and zero intercept, got a={}, b={}",
                self.a, self.b
            )));
        }
        Ok(())
    }
}

fn sigmoid<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

/// Smoothed Platt targets for the positive (novel) and negative examples.
pub fn platt_targets<F: Scalar>(n_pos: usize, n_neg: usize) -> (F, F) {
    let pos = F::from_usize_lossy(n_pos + 1) / F::from_usize_lossy(n_pos + 2);
    let neg = F::one() / F::from_usize_lossy(n_neg + 2);
    (pos, neg)
}

/// Fits the slope of a zero-intercept Platt scaler.
///
/// Scores on the novel side of `boundary` are pseudo-labeled positive. The
/// slope minimizes cross-entropy against the smoothed targets; that objective
/// is convex in the slope, so its derivative is bisected to machine precision.
/// With no positive scores the slope falls back to `-1 / std(shifted)`.
pub fn fit_platt<F: Scalar>(scores: &[F], boundary: F, direction: Direction, source: ScoreSource) -> Result<PlattScaler<F>> {
    if scores.is_empty() {
        return Err(Error::Empty("fit_platt"));
    }
    if scores.iter().any(|s| !s.is_finite()) || !boundary.is_finite() {
        return Err(Error::NonFiniteInput);
    }
    let mut scaler = PlattScaler {
        a: -F::one(),
        b: F::zero(),
        boundary,
        direction,
        source,
        fallback: false,
    };
    let shifted: Vec<F> = scores.iter().map(|&s| scaler.shifted(s)).collect();
    let n_pos = shifted.iter().filter(|&&s| s > F::zero()).count();
    if n_pos == 0 {
        let (_, sigma) = mean_and_population_std(&shifted);
        scaler.fallback = true;
        if sigma > F::zero() {
            scaler.a = -sigma.recip();
        }
        return Ok(scaler);
    }
    let (t_pos, t_neg) = platt_targets::<F>(n_pos, shifted.len() - n_pos);
    // d/dw of the cross-entropy, with P = sigmoid(w * s) and w = -a
    let gradient = |w: F| -> F {
        shifted
            .iter()
            .map(|&s| {
                let target = if s > F::zero() { t_pos } else { t_neg };
                (sigmoid(w * s) - target) * s
            })
            .sum()
    };
    let mut lo = F::zero();
    let mut hi = F::one();
    while gradient(hi) < F::zero() {
        lo = hi;
        hi = hi + hi;
        if !hi.is_finite() {
            return Err(Error::Invalid("Platt slope diverged".into()));
        }
    }
    for _ in 0..200 {
        let mid = lo + (hi - lo) / F::lit(2.0);
        if mid <= lo || mid >= hi {
            break;
        }
        if gradient(mid) < F::zero() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let w = lo + (hi - lo) / F::lit(2.0);
    scaler.a = -w;
    Ok(scaler)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionRule {
    /// Arithmetic mean of the two novelty probabilities.
    #[default]
    Mean,
    /// Larger of the two probabilities.
    Max,
    /// Rejects when either probability alone exceeds the threshold.
    Either,
}

impl FusionRule {
    pub fn as_str(self) -> &'static str {
        match self {
            FusionRule::Mean => "mean",
            FusionRule::Max => "max",
            FusionRule::Either => "either",
        }
    }

    pub fn combine<F: Scalar>(self, p_sm: F, p_lof: F) -> F {
        match self {
            FusionRule::Mean => (p_sm + p_lof) / F::lit(2.0),
            FusionRule::Max | FusionRule::Either => p_sm.max(p_lof),
        }
    }

    pub fn rejects<F: Scalar>(self, p: &NoveltyProbabilities<F>) -> bool {
        let half = F::lit(JOINT_THRESHOLD);
        match self {
            FusionRule::Mean | FusionRule::Max => p.p_joint > half,
            FusionRule::Either => p.p_sm > half || p.p_lof > half,
        }
    }
}

impl fmt::Display for FusionRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FusionRule {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "mean" => Ok(FusionRule::Mean),
            "max" => Ok(FusionRule::Max),
            "either" => Ok(FusionRule::Either),
            other => Err(format!("unknown fusion rule `{other}` (mean, max, either)")),
        }
    }
}

/// Everything needed to run any of the five open-set methods.
#[derive(Clone, Debug)]
pub struct SmdnModel<F> {
    /// Thresholds at the fitted temperature.
    pub softermax: SofterMaxModel<F>,
    /// Thresholds at `T = 1`, for the doc_softmax baseline.
    pub doc_softmax: SofterMaxModel<F>,
    pub lof: LofModel<F>,
    pub platt_sm: PlattScaler<F>,
    pub platt_lof: PlattScaler<F>,
    pub fusion_rule: FusionRule,
}

impl<F: Scalar> SmdnModel<F> {
    pub fn joint_threshold(&self) -> F {
        F::lit(JOINT_THRESHOLD)
    }

    pub fn novelty_probability(&self, record: &ExampleRecord<F>) -> Result<NoveltyProbabilities<F>> {
        let (confidence, _) = self.softermax.confidence_score(&record.logits)?;
        let lof = self.lof.score(&record.features)?;
        Ok(self.probabilities_from_scores(confidence, lof))
    }

    pub fn probabilities_from_scores(&self, confidence: F, lof_score: F) -> NoveltyProbabilities<F> {
        let p_sm = self.platt_sm.probability(confidence);
        let p_lof = self.platt_lof.probability(lof_score);
        NoveltyProbabilities {
            p_sm,
            p_lof,
            p_joint: self.fusion_rule.combine(p_sm, p_lof),
        }
    }

    /// Unknown when the fused probability says so; otherwise the argmax class.
    pub fn predict_smdn(&self, record: &ExampleRecord<F>) -> Result<OpenSetPrediction<F>> {
        let novelty = self.novelty_probability(record)?;
        let decision = if self.fusion_rule.rejects(&novelty) {
            Label::Unknown
        } else {
            Label::Known(argmax(&softermax(&record.logits, self.softermax.temperature)?))
        };
        Ok(OpenSetPrediction {
            id: record.id.clone(),
            decision,
            confidence_score: self.joint_threshold() - novelty.p_joint,
            method: Method::Smdn,
            novelty: Some(novelty),
        })
    }

    pub fn predict(&self, record: &ExampleRecord<F>, method: Method) -> Result<OpenSetPrediction<F>> {
        match method {
            Method::SoftmaxT | Method::Softermax => predict_open_set(record, &self.softermax, method),
            Method::DocSoftmax => predict_open_set(record, &self.doc_softmax, method),
            Method::Lof => self.lof.predict(record),
            Method::Smdn => self.predict_smdn(record),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.softermax.validate()?;
        self.doc_softmax.validate()?;
        if self.doc_softmax.temperature != F::one() {
            return Err(Error::Model("doc_softmax thresholds must use T = 1".into()));
        }
        if self.softermax.n_classes() != self.doc_softmax.n_classes() {
            return Err(Error::Model("threshold tables disagree on class count".into()));
        }
        self.platt_sm.validate()?;
        self.platt_lof.validate()?;
        if self.platt_sm.source != ScoreSource::Softermax || self.platt_lof.source != ScoreSource::Lof {
            return Err(Error::Model("Platt scalers attached to the wrong sources".into()));
        }
        if self.platt_lof.boundary != self.lof.threshold {
            return Err(Error::Model("LOF scaler boundary differs from the LOF threshold".into()));
        }
        Ok(())
    }

    /// Writes `smdn-model.json` plus the standalone `thresholds.json`,
    /// `lof.json` and the LOF training matrix next to it.
    pub fn save(&self, path: &Path, calibration: Option<&TemperatureFit<F>>) -> Result<()> {
        let dir = path.parent().unwrap_or(Path::new(""));
        self.softermax.save(&dir.join("thresholds.json"))?;
        let lof = self.lof.write_parts(dir, LOF_TRAIN_FILE)?;
        write_json(&dir.join("lof.json"), &lof)?;
        let file = SmdnFile {
            calibration: calibration.map(|c| CalibrationSummary {
                temperature: c.temperature,
                final_nll: c.final_nll,
                n_val: c.n_val,
            }),
            softermax: self.softermax.clone(),
            doc_softmax: self.doc_softmax.clone(),
            lof,
            platt_sm: self.platt_sm,
            platt_lof: self.platt_lof,
            fusion_rule: self.fusion_rule,
            joint_threshold: JOINT_THRESHOLD,
        };
        write_json(path, &file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: SmdnFile<F> = read_json(path)?;
        if file.joint_threshold != JOINT_THRESHOLD {
            return Err(Error::Model(format!(
                "joint_threshold must be {JOINT_THRESHOLD}, got {}",
                file.joint_threshold
            )));
        }
        let model = Self {
            softermax: file.softermax,
            doc_softmax: file.doc_softmax,
            lof: LofModel::from_parts(file.lof, path.parent().unwrap_or(Path::new("")))?,
            platt_sm: file.platt_sm,
            platt_lof: file.platt_lof,
            fusion_rule: file.fusion_rule,
        };
        model.validate()?;
        Ok(model)
    }
}

pub const LOF_TRAIN_FILE: &str = "lof-train.csv";

#[derive(Serialize, Deserialize)]
struct CalibrationSummary<F> {
    temperature: F,
    final_nll: F,
    n_val: usize,
}

#[derive(Serialize, Deserialize)]
struct SmdnFile<F> {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    calibration: Option<CalibrationSummary<F>>,
    softermax: SofterMaxModel<F>,
    doc_softmax: SofterMaxModel<F>,
    lof: LofFile<F>,
    platt_sm: PlattScaler<F>,
    platt_lof: PlattScaler<F>,
    fusion_rule: FusionRule,
    joint_threshold: f64,
}
