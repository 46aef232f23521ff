//! Local outlier factor in novelty mode over classifier feature vectors.
//!
//! Training points are indexed once; queries are scored against the training
//! set only. Neighborhoods include every point tied at the k-distance, so a
//! neighborhood can hold more than `k` members. Distances are Euclidean and all
//! neighbor search is exact brute force.

use std::borrow::Borrow;
use std::cmp::Ordering;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ExampleRecord, Label, Split};
use crate::error::{Error, Result};
use crate::persist::{read_json, write_json};
use crate::scalar::{argmax, format_real, mean_and_population_std, Scalar};
use crate::thresholds::{Method, OpenSetPrediction};

pub const DEFAULT_K: usize = 20;

/// Reachability-distance sums below this are clamped before inversion.
pub const REACH_FLOOR: f64 = 1e-12;

/// Dense row-major matrix of feature vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix<F> {
    dim: usize,
    data: Vec<F>,
}

impl<F: Scalar> FeatureMatrix<F> {
    pub fn new(dim: usize, data: Vec<F>) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::Invalid(format!(
                "{} values do not form rows of width {dim}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows<R: AsRef<[F]>>(dim: usize, rows: &[R]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    found: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(dim, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_rows(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn row(&self, i: usize) -> &[F] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[F]> {
        self.data.chunks_exact(self.dim)
    }
}

pub fn euclidean<F: Scalar>(a: &[F], b: &[F]) -> F {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<F>()
        .sqrt()
}

/// Neighbors within the k-distance, ordered by `(distance, index)`.
#[derive(Clone, Debug)]
struct Neighborhood<F> {
    k_distance: F,
    members: Vec<(usize, F)>,
}

fn by_distance<F: Scalar>(a: &(usize, F), b: &(usize, F)) -> Ordering {
    a.1.partial_cmp(&b.1)
        .unwrap_or(Ordering::Equal)
        .then(a.0.cmp(&b.0))
}

fn neighborhood<F: Scalar>(points: &FeatureMatrix<F>, query: &[F], k: usize, exclude: Option<usize>) -> Neighborhood<F> {
    let mut dists: Vec<(usize, F)> = points
        .rows()
        .enumerate()
        .filter(|(i, _)| Some(*i) != exclude)
        .map(|(i, row)| (i, euclidean(query, row)))
        .collect();
    let (_, kth, _) = dists.select_nth_unstable_by(k - 1, by_distance);
    let k_distance = kth.1;
    let mut members: Vec<(usize, F)> = dists.into_iter().filter(|&(_, d)| d <= k_distance).collect();
    members.sort_unstable_by(by_distance);
    Neighborhood { k_distance, members }
}

/// Local reachability density; the flag marks a clamped (saturated) sum.
fn density<F: Scalar>(hood: &Neighborhood<F>, k_distances: &[F]) -> (F, bool) {
    let reach_sum = hood
        .members
        .iter()
        .map(|&(o, d)| k_distances[o].max(d))
        .sum::<F>();
    let floor = F::lit(REACH_FLOOR);
    let size = F::from_usize_lossy(hood.members.len());
    (size / reach_sum.max(floor), reach_sum <= floor)
}

/// Training points with their k-distances and densities precomputed.
#[derive(Clone, Debug)]
pub struct LofIndex<F> {
    points: FeatureMatrix<F>,
    k: usize,
    k_distance: Vec<F>,
    lrd: Vec<F>,
    saturated: Vec<bool>,
}

impl<F: Scalar> LofIndex<F> {
    /// Each training point's neighborhood excludes the point itself.
    pub fn build(points: FeatureMatrix<F>, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Invalid("LOF needs k >= 1".into()));
        }
        if points.n_rows() < k + 1 {
            return Err(Error::TooFewPoints {
                have: points.n_rows(),
                need: k + 1,
                k,
            });
        }
        let hoods: Vec<Neighborhood<F>> = (0..points.n_rows())
            .into_par_iter()
            .map(|i| neighborhood(&points, points.row(i), k, Some(i)))
            .collect();
        let k_distance: Vec<F> = hoods.iter().map(|h| h.k_distance).collect();
        let (lrd, saturated) = hoods.par_iter().map(|h| density(h, &k_distance)).unzip();
        Ok(Self {
            points,
            k,
            k_distance,
            lrd,
            saturated,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.points.dim()
    }

    pub fn points(&self) -> &FeatureMatrix<F> {
        &self.points
    }

    pub fn k_distances(&self) -> &[F] {
        &self.k_distance
    }

    pub fn densities(&self) -> &[F] {
        &self.lrd
    }

    fn lof_of(&self, hood: &Neighborhood<F>, own_lrd: F, own_saturated: bool) -> F {
        let total = hood
            .members
            .iter()
            .map(|&(o, _)| {
                if own_saturated && self.saturated[o] {
                    F::one()
                } else {
                    self.lrd[o] / own_lrd
                }
            })
            .sum::<F>();
        total / F::from_usize_lossy(hood.members.len())
    }

    /// Novelty score of an unseen point. About 1 inside dense regions, large
    /// for outliers.
    pub fn score(&self, query: &[F]) -> Result<F> {
        if query.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                found: query.len(),
            });
        }
        if query.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        let hood = neighborhood(&self.points, query, self.k, None);
        let (lrd, saturated) = density(&hood, &self.k_distance);
        Ok(self.lof_of(&hood, lrd, saturated))
    }

    pub fn score_many<Q: AsRef<[F]> + Sync>(&self, queries: &[Q]) -> Result<Vec<F>> {
        queries.par_iter().map(|q| self.score(q.as_ref())).collect()
    }

    /// Outlier-mode scores of the training points themselves.
    pub fn training_scores(&self) -> Vec<F> {
        (0..self.points.n_rows())
            .into_par_iter()
            .map(|i| {
                let hood = neighborhood(&self.points, self.points.row(i), self.k, Some(i));
                self.lof_of(&hood, self.lrd[i], self.saturated[i])
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdStats<F> {
    pub mu: F,
    pub sigma: F,
    pub alpha: F,
    /// Split whose scores produced `mu` and `sigma`.
    pub slice: Split,
}

impl<F: Scalar> ThresholdStats<F> {
    pub fn threshold(&self) -> F {
        self.mu + self.alpha * self.sigma
    }
}

/// Fitted novelty detector: index plus decision threshold on the score.
#[derive(Clone, Debug)]
pub struct LofModel<F> {
    pub index: LofIndex<F>,
    pub threshold: F,
    pub threshold_stats: ThresholdStats<F>,
}

/// Indexes the training features and sets the threshold at
/// `mean + alpha * std` (population) of the calibration slice's scores.
pub fn fit_lof<F: Scalar, R: Borrow<ExampleRecord<F>> + Sync>(
    train: &[R],
    k: usize,
    alpha: F,
    calib: &[R],
) -> Result<LofModel<F>> {
    if calib.is_empty() {
        return Err(Error::Empty("fit_lof calibration slice"));
    }
    let dim = train
        .first()
        .map(|r| r.borrow().features.len())
        .ok_or(Error::TooFewPoints { have: 0, need: k + 1, k })?;
    let rows: Vec<&[F]> = train.iter().map(|r| r.borrow().features.as_slice()).collect();
    let index = LofIndex::build(FeatureMatrix::from_rows(dim, &rows)?, k)?;
    let calib_rows: Vec<&[F]> = calib.iter().map(|r| r.borrow().features.as_slice()).collect();
    let scores = index.score_many(&calib_rows)?;
    let (mu, sigma) = mean_and_population_std(&scores);
    let slice = calib[0].borrow().split;
    let threshold_stats = ThresholdStats { mu, sigma, alpha, slice };
    Ok(LofModel {
        index,
        threshold: threshold_stats.threshold(),
        threshold_stats,
    })
}

/// On-disk form of [`LofModel`] (`lof.json`).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LofFile<F> {
    k: usize,
    alpha: F,
    threshold: F,
    threshold_stats: ThresholdStats<F>,
    feature_dim: usize,
    n_train: usize,
    distance: String,
    reach_floor: f64,
    train_ref: PathBuf,
}

impl<F: Scalar> LofModel<F> {
    pub fn score(&self, features: &[F]) -> Result<F> {
        self.index.score(features)
    }

    /// Unknown iff the score is strictly above the threshold; otherwise the
    /// classifier's own argmax.
    pub fn predict(&self, record: &ExampleRecord<F>) -> Result<OpenSetPrediction<F>> {
        let score = self.score(&record.features)?;
        if record.logits.is_empty() {
            return Err(Error::Empty("predict_lof logits"));
        }
        let decision = if score > self.threshold {
            Label::Unknown
        } else {
            Label::Known(argmax(&record.logits))
        };
        Ok(OpenSetPrediction {
            id: record.id.clone(),
            decision,
            confidence_score: self.threshold - score,
            method: Method::Lof,
            novelty: None,
        })
    }

    /// Writes `lof.json` and the retained training features to `train_file`,
    /// which is referenced relative to the JSON file's directory.
    pub fn save(&self, path: &Path, train_file: &str) -> Result<()> {
        let dir = path.parent().unwrap_or(Path::new(""));
        let file = self.write_parts(dir, train_file)?;
        write_json(path, &file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: LofFile<F> = read_json(path)?;
        Self::from_parts(file, path.parent().unwrap_or(Path::new("")))
    }

    /// Writes the feature matrix into `dir` and returns the JSON description.
    pub(crate) fn write_parts(&self, dir: &Path, train_file: &str) -> Result<LofFile<F>> {
        write_matrix(&dir.join(train_file), self.index.points())?;
        Ok(LofFile {
            k: self.index.k(),
            alpha: self.threshold_stats.alpha,
            threshold: self.threshold,
            threshold_stats: self.threshold_stats,
            feature_dim: self.index.dim(),
            n_train: self.index.points().n_rows(),
            distance: "euclidean".into(),
            reach_floor: REACH_FLOOR,
            train_ref: PathBuf::from(train_file),
        })
    }

    /// Rebuilds the model, resolving `train_ref` against `dir`.
    pub(crate) fn from_parts(file: LofFile<F>, dir: &Path) -> Result<Self> {
        if file.distance != "euclidean" {
            return Err(Error::Model(format!("unsupported distance `{}`", file.distance)));
        }
        if file.threshold != file.threshold_stats.threshold() || file.alpha != file.threshold_stats.alpha {
            return Err(Error::Model(format!(
                "LOF threshold {} differs from mu + alpha * sigma = {}",
                file.threshold,
                file.threshold_stats.threshold()
            )));
        }
        let points = read_matrix(&dir.join(&file.train_ref), file.feature_dim)?;
        if points.n_rows() != file.n_train {
            return Err(Error::Model(format!(
                "expected {} training rows, found {}",
                file.n_train,
                points.n_rows()
            )));
        }
        Ok(Self {
            index: LofIndex::build(points, file.k)?,
            threshold: file.threshold,
            threshold_stats: file.threshold_stats,
        })
    }
}

fn write_matrix<F: Scalar>(path: &Path, m: &FeatureMatrix<F>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(csv_err)?;
    w.write_record((0..m.dim()).map(|i| format!("feat_{i}"))).map_err(csv_err)?;
    for row in m.rows() {
        w.write_record(row.iter().map(|&v| format_real(v))).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_matrix<F: Scalar>(path: &Path, dim: usize) -> Result<FeatureMatrix<F>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let mut data = Vec::new();
    for (i, row) in r.records().enumerate() {
        let row = row.map_err(|source| Error::Csv {
            path: path.to_path_buf(),
            source,
        })?;
        if row.len() != dim {
            return Err(Error::DimensionMismatch {
                row: i + 1,
                detail: format!("expected {dim} features, found {}", row.len()),
            });
        }
        for (j, text) in row.iter().enumerate() {
            match text.parse::<F>() {
                Ok(v) if v.is_finite() => data.push(v),
                _ => {
                    return Err(Error::NonFinite {
                        row: i + 1,
                        column: format!("feat_{j}"),
                        value: text.to_string(),
                    })
                }
            }
        }
    }
    FeatureMatrix::new(dim, data)
}
