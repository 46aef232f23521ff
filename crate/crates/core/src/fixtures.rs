//! Synthetic bundles: isotropic Gaussian clusters in feature space with
//! logits from the matching linear discriminant.
//!
//! Known class `i` with centroid `c_i` gets logit
//! `gamma * (c_i . h - |c_i|^2 / 2) / s^2` for feature vector `h`, where `s` is
//! the known-class noise level. With `gamma = 1` these are the Bayes posterior
//! logits for equal priors; `gamma > 1` makes the classifier overconfident, so
//! a calibrated temperature near `gamma` is expected.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{DatasetBundle, ExampleRecord, Label, LabelSpace, Split};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// Three known clusters and one held-out cluster.
    Gaussian3Plus1,
    /// Five known clusters and two held-out clusters.
    Gaussian5Plus2,
    /// Eight overlapping, imbalanced classes, all exported; meant for
    /// known-class sampling experiments.
    Gaussian8,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::Gaussian3Plus1, Preset::Gaussian5Plus2, Preset::Gaussian8];

    pub fn as_str(self) -> &'static str {
        match self {
            Preset::Gaussian3Plus1 => "gaussian-3+1",
            Preset::Gaussian5Plus2 => "gaussian-5+2",
            Preset::Gaussian8 => "gaussian-8",
        }
    }

    pub fn spec(self) -> FixtureSpec {
        match self {
            Preset::Gaussian3Plus1 => {
                let dim = 8;
                let sep = 2.5;
                let mut classes: Vec<ClassSpec> = (0..3)
                    .map(|i| ClassSpec::new(format!("intent_{i}"), scaled_axis(dim, i, sep), 1.0, 300, 100, 100, true))
                    .collect();
                let mut centroid = vec![sep / 3.0; 3];
                centroid.resize(dim, 0.0);
                centroid[3] = 6.0;
                classes.push(ClassSpec::new("held_out", centroid, 0.35, 0, 0, 150, false));
                FixtureSpec::new(dim, 1.0, 1.4, classes)
            }
            Preset::Gaussian5Plus2 => {
                let dim = 12;
                let sep = 2.5;
                let mut classes: Vec<ClassSpec> = (0..5)
                    .map(|i| ClassSpec::new(format!("intent_{i}"), scaled_axis(dim, i, sep), 1.0, 200, 80, 80, true))
                    .collect();
                let mut a = vec![0.0; dim];
                a[0] = sep / 2.0;
                a[1] = sep / 2.0;
                a[5] = 6.0;
                let mut b = vec![0.0; dim];
                for v in &mut b[2..5] {
                    *v = sep / 3.0;
                }
                b[6] = 6.0;
                classes.push(ClassSpec::new("held_out_a", a, 0.4, 0, 0, 100, false));
                classes.push(ClassSpec::new("held_out_b", b, 0.4, 0, 0, 100, false));
                FixtureSpec::new(dim, 1.0, 1.3, classes)
            }
            Preset::Gaussian8 => {
                let dim = 10;
                let sep = 4.0;
                let classes = (0..8)
                    .map(|i| {
                        let mut c = scaled_axis(dim, i, sep);
                        c[(i + 1) % 8] = sep / 2.0;
                        ClassSpec::new(format!("intent_{i}"), c, 1.0, 80 + 40 * i, 40, 40, true)
                    })
                    .collect();
                FixtureSpec::new(dim, 1.0, 1.4, classes)
            }
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Preset::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Preset::ALL.iter().map(|p| p.as_str()).collect();
                format!("unknown preset `{s}` (available: {})", names.join(", "))
            })
    }
}

fn scaled_axis(dim: usize, axis: usize, scale: f64) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[axis] = scale;
    v
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassSpec {
    pub name: String,
    pub centroid: Vec<f64>,
    pub noise: f64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// Whether the class is exported as known by default.
    pub known_by_default: bool,
}

impl ClassSpec {
    pub fn new(
        name: impl Into<String>,
        centroid: Vec<f64>,
        noise: f64,
        n_train: usize,
        n_val: usize,
        n_test: usize,
        known_by_default: bool,
    ) -> Self {
        Self {
            name: name.into(),
            centroid,
            noise,
            n_train,
            n_val,
            n_test,
            known_by_default,
        }
    }

    fn count(&self, split: Split) -> usize {
        match split {
            Split::Train => self.n_train,
            Split::Val => self.n_val,
            Split::Test => self.n_test,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FixtureSpec {
    pub feature_dim: usize,
    /// Noise level the logit map assumes for known classes.
    pub known_noise: f64,
    /// Multiplier on the discriminant logits.
    pub overconfidence: f64,
    pub classes: Vec<ClassSpec>,
}

impl FixtureSpec {
    pub fn new(feature_dim: usize, known_noise: f64, overconfidence: f64, classes: Vec<ClassSpec>) -> Self {
        Self {
            feature_dim,
            known_noise,
            overconfidence,
            classes,
        }
    }

    pub fn default_known(&self) -> Vec<usize> {
        (0..self.classes.len()).filter(|&i| self.classes[i].known_by_default).collect()
    }

    pub fn class_names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name.clone()).collect()
    }

    /// Logits of `features` for the given known classes.
    pub fn logits(&self, known: &[usize], features: &[f64]) -> Vec<f64> {
        let scale = self.overconfidence / (self.known_noise * self.known_noise);
        known
            .iter()
            .map(|&i| {
                let c = &self.classes[i].centroid;
                let dot: f64 = c.iter().zip(features).map(|(a, b)| a * b).sum();
                let norm2: f64 = c.iter().map(|a| a * a).sum();
                scale * (dot - norm2 / 2.0)
            })
            .collect()
    }

    /// Samples the bundle with `known` (class indices, increasing) exported.
    ///
    /// Feature draws depend only on `seed`, never on `known`, so one dataset can
    /// be re-exported for different known-class selections.
    pub fn generate(&self, known: &[usize], seed: u64) -> Result<DatasetBundle<f64>> {
        if known.windows(2).any(|w| w[0] >= w[1]) || known.iter().any(|&i| i >= self.classes.len()) {
            return Err(Error::Invalid("known classes must be increasing valid indices".into()));
        }
        if let Some(c) = self.classes.iter().find(|c| c.centroid.len() != self.feature_dim) {
            return Err(Error::Invalid(format!("centroid of `{}` has the wrong dimension", c.name)));
        }
        let names = known.iter().map(|&i| self.classes[i].name.clone()).collect();
        let space = LabelSpace::new(names, self.feature_dim)?;
        let mut position = vec![None; self.classes.len()];
        for (p, &i) in known.iter().enumerate() {
            position[i] = Some(p);
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut records = Vec::new();
        for split in [Split::Train, Split::Val, Split::Test] {
            for (ci, class) in self.classes.iter().enumerate() {
                for j in 0..class.count(split) {
                    let features: Vec<f64> = class
                        .centroid
                        .iter()
                        .map(|&m| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            m + class.noise * z
                        })
                        .collect();
                    let gold = match (position[ci], split) {
                        (Some(p), _) => Label::Known(p),
                        (None, Split::Test) => Label::Unknown,
                        (None, _) => continue,
                    };
                    records.push(ExampleRecord {
                        id: format!("{}-{}-{j:04}", class.name, split),
                        split,
                        gold,
                        logits: self.logits(known, &features),
                        features,
                    });
                }
            }
        }
        DatasetBundle::new(space, records)
    }

    /// Bundle with the default known classes.
    pub fn generate_default(&self, seed: u64) -> Result<DatasetBundle<f64>> {
        self.generate(&self.default_known(), seed)
    }

    /// Number of training examples per class, for weighting known-class draws.
    pub fn train_counts(&self) -> Vec<usize> {
        self.classes.iter().map(|c| c.n_train).collect()
    }
}
