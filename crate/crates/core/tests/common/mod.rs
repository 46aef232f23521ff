//! Reference implementations used as test oracles. None of this calls into the
//! library's numeric code.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use smdn::data::{ExampleRecord, Label, Split};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn record(id: usize, split: Split, gold: usize, logits: Vec<f64>, features: Vec<f64>) -> ExampleRecord<f64> {
    ExampleRecord {
        id: format!("r{id}"),
        split,
        gold: Label::Known(gold),
        logits,
        features,
    }
}

/// Plain softmax probabilities, computed directly from the exponential formula.
pub fn direct_probs(logits: &[f64], t: f64) -> Vec<f64> {
    let shift = logits.iter().cloned().fold(f64::MIN, f64::max) / t;
    let e: Vec<f64> = logits.iter().map(|z| (z / t - shift).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Logits drawn as `scale * N(0, 1)` per class; labels drawn from softmax(z),
/// so the temperature minimizing expected NLL is exactly 1.
pub fn softmax_sampled(n: usize, classes: usize, scale: f64, seed: u64) -> Vec<ExampleRecord<f64>> {
    let mut r = rng(seed);
    (0..n)
        .map(|i| {
            let logits: Vec<f64> = (0..classes).map(|_| scale * normal(&mut r)).collect();
            let p = direct_probs(&logits, 1.0);
            let u: f64 = r.random();
            let mut acc = 0.0;
            let mut gold = classes - 1;
            for (c, pc) in p.iter().enumerate() {
                acc += pc;
                if u < acc {
                    gold = c;
                    break;
                }
            }
            record(i, Split::Val, gold, logits, vec![0.0])
        })
        .collect()
}

/// Literal mean of `-sum_j onehot_j * ln(y_j)`.
pub fn direct_nll(records: &[ExampleRecord<f64>], t: f64) -> f64 {
    let mut total = 0.0;
    for r in records {
        let g = r.gold.known().unwrap();
        let y = direct_probs(&r.logits, t);
        total -= y[g].ln();
    }
    total / records.len() as f64
}

/// Exhaustive grid over `T in [0.25, 8]` at step 1e-3; returns the argmin.
pub fn grid_temperature(records: &[ExampleRecord<f64>]) -> f64 {
    let steps = ((8.0 - 0.25) / 1e-3_f64).round() as usize;
    let values: Vec<(f64, f64)> = (0..=steps)
        .into_par_iter()
        .map(|j| {
            let t = 0.25 + j as f64 * 1e-3;
            (direct_nll(records, t), t)
        })
        .collect();
    let mut best = (f64::INFINITY, 0.0);
    for v in values {
        if v.0 < best.0 {
            best = v;
        }
    }
    best.1
}

/// Literal ECE: equal-width bins found by scanning the edges.
pub fn direct_ece(records: &[ExampleRecord<f64>], t: f64, k: usize) -> f64 {
    let mut n = vec![0.0; k];
    let mut hit = vec![0.0; k];
    let mut conf = vec![0.0; k];
    for r in records {
        let p = direct_probs(&r.logits, t);
        let mut top = 0;
        for c in 1..p.len() {
            if p[c] > p[top] {
                top = c;
            }
        }
        let q = p[top];
        let mut bin = k - 1;
        for i in 0..k {
            let lo = i as f64 / k as f64;
            let hi = (i + 1) as f64 / k as f64;
            if q >= lo && q < hi {
                bin = i;
                break;
            }
        }
        n[bin] += 1.0;
        conf[bin] += q;
        if Some(top) == r.gold.known() {
            hit[bin] += 1.0;
        }
    }
    let total = records.len() as f64;
    (0..k)
        .filter(|&i| n[i] > 0.0)
        .map(|i| (n[i] / total) * (hit[i] / n[i] - conf[i] / n[i]).abs())
        .sum()
}

/// Macro F1 straight from per-class TP/FP/FN counts.
pub fn direct_macro_f1(counts: &[Vec<u64>], classes: &[usize]) -> f64 {
    let mut p_sum = 0.0;
    let mut r_sum = 0.0;
    for &c in classes {
        let tp = counts[c][c];
        let fp: u64 = (0..counts.len()).filter(|&g| g != c).map(|g| counts[g][c]).sum();
        let fneg: u64 = (0..counts.len()).filter(|&p| p != c).map(|p| counts[c][p]).sum();
        p_sum += if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        r_sum += if tp + fneg == 0 { 0.0 } else { tp as f64 / (tp + fneg) as f64 };
    }
    let p = p_sum / classes.len() as f64;
    let r = r_sum / classes.len() as f64;
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * (r * p) / (r + p)
    }
}

const FLOOR: f64 = 1e-12;

fn dist(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]).powi(2);
    }
    s.sqrt()
}

/// O(n^2) local outlier factor written directly from its definition.
pub struct BruteLof {
    pts: Vec<Vec<f64>>,
    k: usize,
    kdist: Vec<f64>,
    lrd: Vec<f64>,
    sat: Vec<bool>,
    hoods: Vec<Vec<usize>>,
}

impl BruteLof {
    /// k-distance and tie-inclusive neighborhood of `q`, skipping `skip`.
    fn knn(pts: &[Vec<f64>], q: &[f64], k: usize, skip: Option<usize>) -> (f64, Vec<usize>, Vec<f64>) {
        let mut all: Vec<(f64, usize)> = (0..pts.len())
            .filter(|&i| Some(i) != skip)
            .map(|i| (dist(q, &pts[i]), i))
            .collect();
        all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let kd = all[k - 1].0;
        let hood: Vec<(f64, usize)> = all.into_iter().filter(|&(d, _)| d <= kd).collect();
        (kd, hood.iter().map(|h| h.1).collect(), hood.iter().map(|h| h.0).collect())
    }

    pub fn new(pts: Vec<Vec<f64>>, k: usize) -> Self {
        let n = pts.len();
        let mut kdist = vec![0.0; n];
        let mut hoods = Vec::with_capacity(n);
        let mut hood_d = Vec::with_capacity(n);
        for i in 0..n {
            let (kd, h, d) = Self::knn(&pts, &pts[i], k, Some(i));
            kdist[i] = kd;
            hoods.push(h);
            hood_d.push(d);
        }
        let mut lrd = vec![0.0; n];
        let mut sat = vec![false; n];
        for i in 0..n {
            let mut reach = 0.0;
            for (j, &b) in hoods[i].iter().enumerate() {
                reach += f64::max(kdist[b], hood_d[i][j]);
            }
            sat[i] = reach <= FLOOR;
            lrd[i] = hoods[i].len() as f64 / reach.max(FLOOR);
        }
        Self { pts, k, kdist, lrd, sat, hoods }
    }

    fn lof_from(&self, hood: &[usize], lrd_a: f64, sat_a: bool) -> f64 {
        let mut s = 0.0;
        for &b in hood {
            s += if sat_a && self.sat[b] { 1.0 } else { self.lrd[b] / lrd_a };
        }
        s / hood.len() as f64
    }

    /// Novelty-mode score of an external point.
    pub fn score(&self, q: &[f64]) -> f64 {
        let (_, hood, d) = Self::knn(&self.pts, q, self.k, None);
        let mut reach = 0.0;
        for (j, &b) in hood.iter().enumerate() {
            reach += f64::max(self.kdist[b], d[j]);
        }
        let sat = reach <= FLOOR;
        let lrd = hood.len() as f64 / reach.max(FLOOR);
        self.lof_from(&hood, lrd, sat)
    }

    /// Outlier-mode score of training point `i`.
    pub fn train_score(&self, i: usize) -> f64 {
        self.lof_from(&self.hoods[i], self.lrd[i], self.sat[i])
    }

    pub fn neighborhood_size(&self, i: usize) -> usize {
        self.hoods[i].len()
    }
}

/// Cross-entropy of a zero-intercept Platt scaler with slope `a` against
/// smoothed targets, on already-shifted scores.
pub fn platt_objective(shifted: &[f64], a: f64) -> f64 {
    let n_pos = shifted.iter().filter(|&&s| s > 0.0).count() as f64;
    let n_neg = shifted.len() as f64 - n_pos;
    let t_pos = (n_pos + 1.0) / (n_pos + 2.0);
    let t_neg = 1.0 / (n_neg + 2.0);
    shifted
        .iter()
        .map(|&s| {
            let t = if s > 0.0 { t_pos } else { t_neg };
            // ln P = -softplus(a s), ln(1 - P) = -softplus(-a s)
            let softplus = |x: f64| x.max(0.0) + (-x.abs()).exp().ln_1p();
            t * softplus(a * s) + (1.0 - t) * softplus(-a * s)
        })
        .sum()
}
