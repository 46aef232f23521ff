//! Open-set metrics, the known-class sampling protocol and report types.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{DatasetBundle, ExampleRecord, Label, LabelSpace, Split, UNKNOWN_LABEL};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::thresholds::OpenSetPrediction;

/// Name recorded in run manifests for the known-class sampler.
pub const SAMPLER: &str = "weighted_without_replacement";

/// Counts indexed `[gold][predicted]`; the last label is the unknown class.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(labels: Vec<String>) -> Self {
        let n = labels.len();
        Self {
            labels,
            counts: vec![vec![0; n]; n],
        }
    }

    /// Square matrix over `class_names` followed by the unknown label.
    pub fn open_set(space: &LabelSpace) -> Self {
        let mut labels = space.class_names().to_vec();
        labels.push(UNKNOWN_LABEL.to_string());
        Self::zeros(labels)
    }

    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let n = counts.len();
        if counts.iter().any(|row| row.len() != n) {
            return Err(Error::Invalid("confusion matrix must be square".into()));
        }
        Ok(Self {
            labels: (0..n).map(|i| format!("c{i}")).collect(),
            counts,
        })
    }

    pub fn size(&self) -> usize {
        self.counts.len()
    }

    pub fn add(&mut self, gold: usize, predicted: usize) {
        self.counts[gold][predicted] += 1;
    }

    pub fn row_total(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    pub fn column_total(&self, j: usize) -> u64 {
        self.counts.iter().map(|row| row[j]).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Precision and recall of class `i`; a zero denominator gives 0.
    pub fn precision_recall(&self, i: usize) -> (f64, f64) {
        let tp = self.counts[i][i];
        let predicted = self.column_total(i);
        let actual = self.row_total(i);
        let ratio = |den: u64| if den == 0 { 0.0 } else { tp as f64 / den as f64 };
        (ratio(predicted), ratio(actual))
    }
}

fn harmonic(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * (recall * precision) / (recall + precision)
    }
}

/// Macro-averaged precision, recall and their harmonic mean over `classes`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MacroScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Averages per-class precision and recall first, then combines the two
/// averages into one F1.
pub fn macro_scores(confusion: &ConfusionMatrix, classes: &[usize]) -> MacroScores {
    if classes.is_empty() {
        return MacroScores {
            precision: 0.0,
            recall: 0.0,
            f1: 0.0,
        };
    }
    let mut precision_sum = 0.0;
    let mut recall_sum = 0.0;
    for &c in classes {
        let (p, r) = confusion.precision_recall(c);
        precision_sum += p;
        recall_sum += r;
    }
    let n = classes.len() as f64;
    let precision = precision_sum / n;
    let recall = recall_sum / n;
    MacroScores {
        precision,
        recall,
        f1: harmonic(precision, recall),
    }
}

pub fn macro_f1(confusion: &ConfusionMatrix, classes: &[usize]) -> f64 {
    macro_scores(confusion, classes).f1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub macro_f1_all: f64,
    pub macro_f1_known: f64,
    pub f1_unknown: f64,
    pub per_class: Vec<ClassScores>,
    pub confusion: ConfusionMatrix,
    pub n_records: u64,
}

impl EvalReport {
    pub fn from_confusion(confusion: ConfusionMatrix) -> Self {
        let n = confusion.size();
        let all: Vec<usize> = (0..n).collect();
        let per_class = (0..n)
            .map(|i| {
                let (precision, recall) = confusion.precision_recall(i);
                ClassScores {
                    label: confusion.labels[i].clone(),
                    precision,
                    recall,
                    f1: harmonic(precision, recall),
                    support: confusion.row_total(i),
                }
            })
            .collect();
        Self {
            macro_f1_all: macro_f1(&confusion, &all),
            macro_f1_known: macro_f1(&confusion, &all[..n - 1]),
            f1_unknown: macro_f1(&confusion, &[n - 1]),
            per_class,
            n_records: confusion.total(),
            confusion,
        }
    }
}

/// Scores `(id, decision)` pairs against the bundle's test split. Every test id
/// must appear exactly once and no other id may appear.
pub fn evaluate<F: Scalar>(decisions: &[(String, Label)], gold: &DatasetBundle<F>) -> Result<EvalReport> {
    let space = gold.label_space();
    let test = gold.split(Split::Test);
    let mut by_id: HashMap<&str, Label> = HashMap::with_capacity(decisions.len());
    for (id, decision) in decisions {
        if by_id.insert(id.as_str(), *decision).is_some() {
            return Err(Error::IdMismatch(format!("prediction id `{id}` appears twice")));
        }
        if let Label::Known(c) = decision {
            if *c >= space.n_classes() {
                return Err(Error::IdMismatch(format!("prediction for `{id}` names class #{c}")));
            }
        }
    }
    if by_id.len() != test.len() {
        return Err(Error::IdMismatch(format!(
            "{} predictions for {} test records",
            by_id.len(),
            test.len()
        )));
    }
    let unknown = space.n_classes();
    let index = |l: Label| l.known().unwrap_or(unknown);
    let mut confusion = ConfusionMatrix::open_set(space);
    for rec in test {
        let decision = by_id
            .get(rec.id.as_str())
            .ok_or_else(|| Error::IdMismatch(format!("no prediction for test id `{}`", rec.id)))?;
        confusion.add(index(rec.gold), index(*decision));
    }
    Ok(EvalReport::from_confusion(confusion))
}

pub fn evaluate_predictions<F: Scalar>(predictions: &[OpenSetPrediction<F>], gold: &DatasetBundle<F>) -> Result<EvalReport> {
    let pairs: Vec<(String, Label)> = predictions.iter().map(|p| (p.id.clone(), p.decision)).collect();
    evaluate(&pairs, gold)
}

/// One run's choice of known classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub seed: u64,
    pub known_ratio: f64,
    /// Full label space the sample was drawn from.
    pub class_names: Vec<String>,
    /// Training-split counts used as sampling weights, aligned with `class_names`.
    pub class_weights: Vec<usize>,
    /// Selected classes in `class_names` order.
    pub known_classes: Vec<String>,
    pub sampler: String,
}

impl RunManifest {
    pub fn validate(&self) -> Result<()> {
        let total = self.class_names.len();
        let selected = self.known_classes.len();
        if selected == 0 || selected >= total {
            return Err(Error::Ratio {
                ratio: self.known_ratio,
                selected,
                total,
            });
        }
        if let Some(c) = self.known_classes.iter().find(|c| !self.class_names.contains(c)) {
            return Err(Error::ManifestMismatch(format!("known class `{c}` is not in class_names")));
        }
        Ok(())
    }
}

/// Weighted sampling without replacement by exponential keys: class `i` gets
/// key `u_i^(1 / w_i)` (compared as `ln(u_i) / w_i`) and the
/// `round(ratio * N)` largest keys are kept. The generator is ChaCha8 seeded
/// from `seed`.
pub fn sample_known_classes(
    space: &LabelSpace,
    train_counts: &[usize],
    ratio: f64,
    seed: u64,
    run_id: impl Into<String>,
) -> Result<RunManifest> {
    let n = space.n_classes();
    if train_counts.len() != n {
        return Err(Error::Dimension {
            expected: n,
            found: train_counts.len(),
        });
    }
    if let Some(i) = train_counts.iter().position(|&c| c == 0) {
        return Err(Error::Invalid(format!(
            "class `{}` has no training examples and cannot be weighted",
            space.class_names()[i]
        )));
    }
    let selected = if ratio > 0.0 && ratio < 1.0 {
        (ratio * n as f64).round() as usize
    } else {
        0
    };
    if selected == 0 || selected >= n {
        return Err(Error::Ratio { ratio, selected, total: n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keys: Vec<(f64, usize)> = train_counts
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            let u = 1.0 - rng.random::<f64>();
            (u.ln() / w as f64, i)
        })
        .collect();
    keys.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut chosen: Vec<usize> = keys[..selected].iter().map(|&(_, i)| i).collect();
    chosen.sort_unstable();
    Ok(RunManifest {
        run_id: run_id.into(),
        seed,
        known_ratio: ratio,
        class_names: space.class_names().to_vec(),
        class_weights: train_counts.to_vec(),
        known_classes: chosen.iter().map(|&i| space.class_names()[i].clone()).collect(),
        sampler: SAMPLER.to_string(),
    })
}

/// Bundle for one run, plus whether it still carries logits from a classifier
/// that saw the held-out classes.
#[derive(Clone, Debug)]
pub struct RestrictedBundle<F> {
    pub bundle: DatasetBundle<F>,
    /// True when logits were sliced from an all-class export instead of coming
    /// from a classifier retrained on the known classes only.
    pub requires_reexport: bool,
}

/// Applies a run manifest to a bundle.
///
/// An all-class bundle (its classes equal the manifest's `class_names`) loses
/// the train and val records of held-out classes, has its test records of
/// held-out classes relabeled unknown, and keeps only the known logit columns;
/// the result is flagged `requires_reexport`. A bundle already exported for
/// this run (its classes equal `known_classes`) is returned unchanged.
pub fn restrict_bundle<F: Scalar>(bundle: &DatasetBundle<F>, manifest: &RunManifest) -> Result<RestrictedBundle<F>> {
    manifest.validate()?;
    let space = bundle.label_space();
    if space.class_names() == manifest.known_classes.as_slice() {
        return Ok(RestrictedBundle {
            bundle: bundle.clone(),
            requires_reexport: false,
        });
    }
    if space.class_names() != manifest.class_names.as_slice() {
        return Err(Error::ManifestMismatch(format!(
            "bundle classes [{}] match neither the manifest's full class list nor its known classes",
            space.class_names().join(", ")
        )));
    }
    let keep: Vec<usize> = manifest
        .known_classes
        .iter()
        .map(|c| space.index_of(c).expect("validated manifest"))
        .collect();
    let mut remap = vec![None; space.n_classes()];
    for (new, &old) in keep.iter().enumerate() {
        remap[old] = Some(new);
    }
    let new_space = LabelSpace::new(manifest.known_classes.clone(), space.feature_dim())?;
    let records = bundle
        .records()
        .iter()
        .filter_map(|rec| {
            let gold = match rec.gold {
                Label::Known(c) => remap[c].map(Label::Known),
                Label::Unknown => None,
            };
            let gold = match (gold, rec.split) {
                (Some(g), _) => g,
                (None, Split::Test) => Label::Unknown,
                (None, _) => return None,
            };
            Some(ExampleRecord {
                id: rec.id.clone(),
                split: rec.split,
                gold,
                logits: keep.iter().map(|&i| rec.logits[i]).collect(),
                features: rec.features.clone(),
            })
        })
        .collect();
    Ok(RestrictedBundle {
        bundle: DatasetBundle::new(new_space, records)?,
        requires_reexport: true,
    })
}

/// Mean over runs with a normal-approximation 95% interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub values: Vec<f64>,
}

/// `mean ± 1.96 * s / sqrt(n)` with the sample standard deviation `s`
/// (zero width for a single run).
pub fn summarize(values: &[f64]) -> Summary {
    let n = values.len() as f64;
    let mean = if values.is_empty() { 0.0 } else { values.iter().sum::<f64>() / n };
    let half = if values.len() < 2 {
        0.0
    } else {
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        1.96 * (var / n).sqrt()
    };
    Summary {
        mean,
        ci_low: mean - half,
        ci_high: mean + half,
        values: values.to_vec(),
    }
}

/// The three macro-F1 views aggregated over runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewSummary {
    pub all: Summary,
    pub known: Summary,
    pub unknown: Summary,
}

pub fn summarize_reports<'a>(reports: impl IntoIterator<Item = &'a EvalReport>) -> ViewSummary {
    let (mut all, mut known, mut unknown) = (Vec::new(), Vec::new(), Vec::new());
    for r in reports {
        all.push(r.macro_f1_all);
        known.push(r.macro_f1_known);
        unknown.push(r.f1_unknown);
    }
    ViewSummary {
        all: summarize(&all),
        known: summarize(&known),
        unknown: summarize(&unknown),
    }
}

/// Per-method summaries keyed by method name.
pub type MethodSummaries = BTreeMap<String, ViewSummary>;
