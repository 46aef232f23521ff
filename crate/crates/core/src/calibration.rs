//! Softmax with temperature, negative log-likelihood temperature fitting, and
//! expected calibration error.

use std::borrow::Borrow;

use serde::{Deserialize, Serialize};

use crate::data::ExampleRecord;
use crate::error::{Error, Result};
use crate::persist::{read_json, write_json};
use crate::scalar::{argmax, Scalar};
use crate::search::golden_section;

/// Default number of equal-width confidence bins for ECE.
pub const DEFAULT_BINS: usize = 15;

pub fn softmax<F: Scalar>(logits: &[F]) -> Result<Vec<F>> {
    if logits.is_empty() {
        return Err(Error::Empty("softmax"));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    let max = logits.iter().copied().fold(F::neg_infinity(), F::max);
    let exps: Vec<F> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: F = exps.iter().copied().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// `softmax(logits / temperature)`.
pub fn softermax<F: Scalar>(logits: &[F], temperature: F) -> Result<Vec<F>> {
    check_temperature(temperature)?;
    let scaled: Vec<F> = logits.iter().map(|&z| z / temperature).collect();
    softmax(&scaled)
}

pub(crate) fn check_temperature<F: Scalar>(temperature: F) -> Result<()> {
    if temperature > F::zero() && temperature.is_finite() {
        Ok(())
    } else {
        Err(Error::Temperature(temperature.as_f64()))
    }
}

/// `-ln softmax(logits / t)[class]` via log-sum-exp.
fn neg_log_prob<F: Scalar>(logits: &[F], temperature: F, class: usize) -> F {
    let max = logits.iter().copied().fold(F::neg_infinity(), F::max) / temperature;
    let lse = logits
        .iter()
        .map(|&z| (z / temperature - max).exp())
        .sum::<F>()
        .ln()
        + max;
    lse - logits[class] / temperature
}

/// Mean negative log-likelihood of the gold labels under `softermax(z, t)`.
pub fn nll<F: Scalar, R: Borrow<ExampleRecord<F>>>(records: &[R], temperature: F) -> Result<F> {
    check_temperature(temperature)?;
    if records.is_empty() {
        return Err(Error::Empty("nll"));
    }
    let mut total = F::zero();
    for rec in records {
        let rec = rec.borrow();
        let gold = rec.known_gold("nll")?;
        if gold >= rec.logits.len() {
            return Err(Error::Dimension {
                expected: gold + 1,
                found: rec.logits.len(),
            });
        }
        total = total + neg_log_prob(&rec.logits, temperature, gold);
    }
    Ok(total / F::from_usize_lossy(records.len()))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TemperatureSearch<F> {
    pub t_lo: F,
    pub t_hi: F,
    /// Bracket width at termination, measured in `ln T`.
    pub tol: F,
}

impl<F: Scalar> Default for TemperatureSearch<F> {
    fn default() -> Self {
        Self {
            t_lo: F::lit(0.25),
            t_hi: F::lit(8.0),
            tol: F::lit(1e-4),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchBound {
    Lower,
    Upper,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TemperatureFit<F> {
    pub temperature: F,
    pub final_nll: F,
    pub n_val: usize,
    /// `(T, NLL)` for every temperature evaluated.
    pub search_trace: Vec<(F, F)>,
    /// Set when the minimizer sits on an edge of the bracket, which usually
    /// means the true optimum lies outside it.
    pub at_bound: Option<SearchBound>,
}

/// Minimizes mean NLL over `T` in `[t_lo, t_hi]` by golden-section search on
/// `ln T`. The bracket edges and `T = 1` (when inside the bracket) are also
/// evaluated, and the best point seen wins.
pub fn fit_temperature<F: Scalar, R: Borrow<ExampleRecord<F>>>(
    records: &[R],
    search: TemperatureSearch<F>,
) -> Result<TemperatureFit<F>> {
    let TemperatureSearch { t_lo, t_hi, tol } = search;
    if !(t_lo > F::zero() && t_lo < t_hi && t_hi.is_finite() && tol > F::zero()) {
        return Err(Error::Bracket {
            t_lo: t_lo.as_f64(),
            t_hi: t_hi.as_f64(),
            tol: tol.as_f64(),
        });
    }
    if records.is_empty() {
        return Err(Error::Empty("fit_temperature"));
    }
    for rec in records {
        rec.borrow().known_gold("fit_temperature")?;
    }
    // Validation above guarantees nll cannot fail below.
    let objective = |t: F| nll(records, t).expect("validated records");

    let (lo, hi) = (t_lo.ln(), t_hi.ln());
    let found = golden_section(|log_t: F| objective(log_t.exp()), lo, hi, tol);
    let mut trace: Vec<(F, F)> = found.trace.iter().map(|&(lt, v)| (lt.exp(), v)).collect();
    let mut best = (found.x.exp(), found.value);

    let mut extra = vec![t_lo, t_hi];
    if t_lo < F::one() && F::one() < t_hi {
        extra.push(F::one());
    }
    for t in extra {
        let v = objective(t);
        trace.push((t, v));
        if v < best.1 {
            best = (t, v);
        }
    }

    let log_best = best.0.ln();
    let at_bound = if log_best - lo <= tol {
        Some(SearchBound::Lower)
    } else if hi - log_best <= tol {
        Some(SearchBound::Upper)
    } else {
        None
    };
    Ok(TemperatureFit {
        temperature: best.0,
        final_nll: best.1,
        n_val: records.len(),
        search_trace: trace,
        at_bound,
    })
}

#[derive(Serialize, Deserialize)]
struct CalibFile {
    temperature: f64,
    final_nll: f64,
    n_val: usize,
}

impl<F: Scalar> TemperatureFit<F> {
    /// Writes `calib.json`.
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        write_json(
            path,
            &CalibFile {
                temperature: self.temperature.as_f64(),
                final_nll: self.final_nll.as_f64(),
                n_val: self.n_val,
            },
        )
    }

    /// Reads `calib.json`; the search trace is not persisted.
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let file: CalibFile = read_json(path)?;
        check_temperature(file.temperature)?;
        Ok(Self {
            temperature: F::lit(file.temperature),
            final_nll: F::lit(file.final_nll),
            n_val: file.n_val,
            search_trace: Vec::new(),
            at_bound: None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin<F> {
    pub lower: F,
    pub upper: F,
    pub count: usize,
    /// Share of all examples falling in this bin.
    pub fraction: F,
    /// Zero for empty bins.
    pub accuracy: F,
    /// Zero for empty bins.
    pub mean_confidence: F,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityReport<F> {
    pub bins: Vec<ReliabilityBin<F>>,
    pub ece: F,
}

/// Bin for a confidence in `[0, 1]`: `[i/K, (i+1)/K)`, last bin closed on the
/// right. A confidence equal to an inner edge lands in the higher bin.
pub(crate) fn bin_index<F: Scalar>(confidence: F, n_bins: usize) -> usize {
    let k = F::from_usize_lossy(n_bins);
    let mut idx = (confidence * k).floor().to_usize().unwrap_or(0).min(n_bins - 1);
    if idx + 1 < n_bins && confidence >= F::from_usize_lossy(idx + 1) / k {
        idx += 1;
    }
    if idx > 0 && confidence < F::from_usize_lossy(idx) / k {
        idx -= 1;
    }
    idx
}

/// Reliability diagram and ECE of the calibrated top-class confidence.
pub fn ece<F: Scalar, R: Borrow<ExampleRecord<F>>>(
    records: &[R],
    temperature: F,
    n_bins: usize,
) -> Result<ReliabilityReport<F>> {
    if n_bins == 0 {
        return Err(Error::Bins);
    }
    if records.is_empty() {
        return Err(Error::Empty("ece"));
    }
    let mut count = vec![0usize; n_bins];
    let mut correct = vec![0usize; n_bins];
    let mut conf_sum = vec![F::zero(); n_bins];
    for rec in records {
        let rec = rec.borrow();
        let gold = rec.known_gold("ece")?;
        let probs = softermax(&rec.logits, temperature)?;
        let top = argmax(&probs);
        let conf = probs[top];
        let b = bin_index(conf, n_bins);
        count[b] += 1;
        conf_sum[b] = conf_sum[b] + conf;
        if top == gold {
            correct[b] += 1;
        }
    }
    let total = F::from_usize_lossy(records.len());
    let k = F::from_usize_lossy(n_bins);
    let mut ece = F::zero();
    let bins = (0..n_bins)
        .map(|i| {
            let n = F::from_usize_lossy(count[i]);
            let (accuracy, mean_confidence) = if count[i] == 0 {
                (F::zero(), F::zero())
            } else {
                (F::from_usize_lossy(correct[i]) / n, conf_sum[i] / n)
            };
            let fraction = n / total;
            ece = ece + fraction * (accuracy - mean_confidence).abs();
            ReliabilityBin {
                lower: F::from_usize_lossy(i) / k,
                upper: F::from_usize_lossy(i + 1) / k,
                count: count[i],
                fraction,
                accuracy,
                mean_confidence,
            }
        })
        .collect();
    Ok(ReliabilityReport { bins, ece })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Label, Split};
    use approx::assert_abs_diff_eq;

    fn rec(logits: Vec<f64>, gold: usize) -> ExampleRecord<f64> {
        ExampleRecord {
            id: String::new(),
            split: Split::Val,
            gold: Label::Known(gold),
            logits,
            features: vec![0.0],
        }
    }

    #[test]
    fn softmax_closed_forms() {
        assert_eq!(softmax(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        let p = softmax(&[1000.0f64, 0.0]).unwrap();
        assert!(p.iter().all(|v| v.is_finite()));
        assert_abs_diff_eq!(p[0], 1.0, epsilon = 1e-15);
        let e = std::f64::consts::E;
        let p = softmax(&[1.0, 0.0]).unwrap();
        assert_abs_diff_eq!(p[0], e / (1.0 + e), epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], 1.0 / (1.0 + e), epsilon = 1e-15);
        assert_abs_diff_eq!(p[0], 0.73106, epsilon = 1e-5);
        assert!(matches!(softmax(&[f64::NAN]), Err(Error::NonFiniteInput)));
        assert!(softmax::<f64>(&[]).is_err());
    }

    #[test]
    fn softermax_cases() {
        assert_eq!(softermax(&[2.0, 0.0], 2.0).unwrap(), softmax(&[1.0, 0.0]).unwrap());
        let flat = softermax(&[3.0f64, 1.0, 0.0], 1e6).unwrap();
        assert!(flat.iter().all(|p| (p - 1.0 / 3.0).abs() < 1e-5));
        let v = [0.3, -2.0, 5.5];
        assert_eq!(softermax(&v, 1.0).unwrap(), softmax(&v).unwrap());
        assert!(matches!(softermax(&v, 0.0), Err(Error::Temperature(_))));
        assert!(softermax(&v, -1.0).is_err());
    }

    #[test]
    fn nll_closed_forms() {
        for gold in [0, 1] {
            assert_abs_diff_eq!(nll(&[rec(vec![0.0, 0.0], gold)], 1.0).unwrap(), 2f64.ln(), epsilon = 1e-15);
        }
        assert!(nll(&[rec(vec![50.0, 0.0], 0)], 1.0).unwrap() < 1e-20);
        assert!(matches!(nll::<f64, ExampleRecord<f64>>(&[], 1.0), Err(Error::Empty(_))));
        let mut r = rec(vec![0.0, 0.0], 0);
        r.gold = Label::Unknown;
        assert!(matches!(nll(&[r], 1.0), Err(Error::UnknownGold(_))));
    }

    #[test]
    fn nll_matches_literal_sum() {
        let set = [
            rec(vec![1.0, 2.0, -0.5], 0),
            rec(vec![0.2, 0.1, 3.0], 2),
            rec(vec![-1.0, 4.0, 0.0], 1),
        ];
        let t = 1.7;
        // -sum_j t_j log y_j with one-hot t, averaged
        let mut direct = 0.0;
        for r in &set {
            let g = r.gold.known().unwrap();
            let denom: f64 = r.logits.iter().map(|z| (z / t).exp()).sum();
            let y: Vec<f64> = r.logits.iter().map(|z| (z / t).exp() / denom).collect();
            for (j, yj) in y.iter().enumerate() {
                let onehot = if j == g { 1.0 } else { 0.0 };
                direct -= onehot * yj.ln();
            }
        }
        direct /= 3.0;
        assert_abs_diff_eq!(nll(&set, t).unwrap(), direct, epsilon = 1e-14);
    }

    #[test]
    fn degenerate_slice_hits_lower_bound() {
        let set: Vec<_> = (0..20).map(|i| rec(vec![2.0 + i as f64 * 0.1, 0.0, -1.0], 0)).collect();
        let fit = fit_temperature(&set, TemperatureSearch::default()).unwrap();
        assert_eq!(fit.at_bound, Some(SearchBound::Lower));
        assert_eq!(fit.temperature, 0.25);
        assert!(fit.final_nll <= nll(&set, 1.0).unwrap());
    }

    #[test]
    fn fit_rejects_bad_input() {
        let set = [rec(vec![0.0, 1.0], 1)];
        let bad = TemperatureSearch { t_lo: 2.0, t_hi: 1.0, tol: 1e-4 };
        assert!(matches!(fit_temperature(&set, bad), Err(Error::Bracket { .. })));
        let empty: [ExampleRecord<f64>; 0] = [];
        assert!(matches!(fit_temperature(&empty, TemperatureSearch::default()), Err(Error::Empty(_))));
    }

    #[test]
    fn bins_assign_edges_upward() {
        assert_eq!(bin_index(0.0, 15), 0);
        assert_eq!(bin_index(1.0, 15), 14);
        for i in 1..15 {
            assert_eq!(bin_index(i as f64 / 15.0, 15), i, "edge {i}");
        }
        for i in 1..10 {
            assert_eq!(bin_index(i as f64 / 10.0, 10), i);
            assert_eq!(bin_index(i as f64 * 0.1, 10), i);
        }
        assert_eq!(bin_index(0.5, 1), 0);
    }

    #[test]
    fn ece_perfect_and_single_bin() {
        let perfect: Vec<_> = (0..5).map(|_| rec(vec![800.0, 0.0], 0)).collect();
        assert_eq!(ece(&perfect, 1.0, 15).unwrap().ece, 0.0);

        // confidence 0.9 everywhere, half correct
        let z = (0.9f64 / 0.1).ln();
        let half: Vec<_> = (0..10).map(|i| rec(vec![z, 0.0], i % 2)).collect();
        let report = ece(&half, 1.0, 15).unwrap();
        assert_abs_diff_eq!(report.ece, 0.4, epsilon = 1e-12);
        assert_eq!(report.bins.iter().filter(|b| b.count > 0).count(), 1);
        assert!(matches!(ece(&half, 1.0, 0), Err(Error::Bins)));
    }
}
