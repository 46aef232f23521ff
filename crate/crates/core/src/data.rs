//! Interchange types for exported classifier outputs and their on-disk form.
//!
//! A bundle is two files: a JSON manifest describing the label space and a CSV
//! with one row per example, columns
//! `id,split,gold_label,logit_0..logit_{N-1},feat_0..feat_{D-1}`.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::persist::{read_json, write_json};
use crate::scalar::{format_real, Scalar};

/// Reserved label for examples outside the known classes.
pub const UNKNOWN_LABEL: &str = "__unknown__";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

/// A gold label or an open-set decision: one of the known classes, or unknown.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Label {
    Known(usize),
    Unknown,
}

impl Label {
    pub fn known(self) -> Option<usize> {
        match self {
            Label::Known(i) => Some(i),
            Label::Unknown => None,
        }
    }

    pub fn is_unknown(self) -> bool {
        self == Label::Unknown
    }
}

/// Ordered known classes plus the feature dimensionality of the export.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelSpace {
    class_names: Vec<String>,
    feature_dim: usize,
}

#[derive(Serialize, Deserialize)]
struct ManifestFile {
    n_classes: usize,
    feature_dim: usize,
    class_names: Vec<String>,
    unknown_label: String,
}

impl LabelSpace {
    pub fn new(class_names: Vec<String>, feature_dim: usize) -> Result<Self> {
        if class_names.len() < 2 {
            return Err(Error::LabelSpace(format!(
                "need at least 2 classes, got {}",
                class_names.len()
            )));
        }
        if feature_dim == 0 {
            return Err(Error::LabelSpace("feature_dim must be at least 1".into()));
        }
        let mut seen = HashMap::new();
        for (i, name) in class_names.iter().enumerate() {
            if name.is_empty() {
                return Err(Error::LabelSpace(format!("class {i} has an empty name")));
            }
            if name == UNKNOWN_LABEL {
                return Err(Error::LabelSpace(format!(
                    "`{UNKNOWN_LABEL}` is reserved and cannot be a class name"
                )));
            }
            if let Some(prev) = seen.insert(name.as_str(), i) {
                return Err(Error::LabelSpace(format!(
                    "class name `{name}` repeated at positions {prev} and {i}"
                )));
            }
        }
        Ok(Self {
            class_names,
            feature_dim,
        })
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|c| c == name)
    }

    /// Parses a label string: a class name or [`UNKNOWN_LABEL`].
    pub fn parse_label(&self, name: &str) -> Option<Label> {
        if name == UNKNOWN_LABEL {
            Some(Label::Unknown)
        } else {
            self.index_of(name).map(Label::Known)
        }
    }

    pub fn label_name(&self, label: Label) -> &str {
        match label {
            Label::Known(i) => &self.class_names[i],
            Label::Unknown => UNKNOWN_LABEL,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: ManifestFile = read_json(path)?;
        if file.unknown_label != UNKNOWN_LABEL {
            return Err(Error::LabelSpace(format!(
                "unknown_label must be `{UNKNOWN_LABEL}`, got `{}`",
                file.unknown_label
            )));
        }
        if file.n_classes != file.class_names.len() {
            return Err(Error::LabelSpace(format!(
                "n_classes is {} but {} class names are listed",
                file.n_classes,
                file.class_names.len()
            )));
        }
        Self::new(file.class_names, file.feature_dim)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(
            path,
            &ManifestFile {
                n_classes: self.n_classes(),
                feature_dim: self.feature_dim,
                class_names: self.class_names.clone(),
                unknown_label: UNKNOWN_LABEL.to_string(),
            },
        )
    }

    /// Header row of the records CSV.
    pub fn csv_header(&self) -> Vec<String> {
        let mut cols = vec!["id".to_string(), "split".into(), "gold_label".into()];
        cols.extend((0..self.n_classes()).map(|i| format!("logit_{i}")));
        cols.extend((0..self.feature_dim).map(|i| format!("feat_{i}")));
        cols
    }
}

/// One example's exported classifier outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct ExampleRecord<F> {
    pub id: String,
    pub split: Split,
    pub gold: Label,
    pub logits: Vec<F>,
    pub features: Vec<F>,
}

impl<F: Scalar> ExampleRecord<F> {
    /// Gold class index, or an error tagged with `context` for unknown gold labels.
    pub(crate) fn known_gold(&self, context: &'static str) -> Result<usize> {
        self.gold.known().ok_or(Error::UnknownGold(context))
    }
}

/// Validated collection of records sharing one label space. Immutable.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetBundle<F> {
    label_space: LabelSpace,
    records: Vec<ExampleRecord<F>>,
}

impl<F: Scalar> DatasetBundle<F> {
    /// Checks every record; the first violation is returned with its 1-based row.
    pub fn new(label_space: LabelSpace, records: Vec<ExampleRecord<F>>) -> Result<Self> {
        let n = label_space.n_classes();
        let d = label_space.feature_dim();
        let mut ids: HashMap<&str, usize> = HashMap::with_capacity(records.len());
        for (i, rec) in records.iter().enumerate() {
            let row = i + 1;
            if rec.logits.len() != n || rec.features.len() != d {
                return Err(Error::DimensionMismatch {
                    row,
                    detail: format!(
                        "expected {n} logits and {d} features, found {} and {}",
                        rec.logits.len(),
                        rec.features.len()
                    ),
                });
            }
            for (name, vals) in [("logit", &rec.logits), ("feat", &rec.features)] {
                if let Some(j) = vals.iter().position(|v| !v.is_finite()) {
                    return Err(Error::NonFinite {
                        row,
                        column: format!("{name}_{j}"),
                        value: vals[j].to_string(),
                    });
                }
            }
            match rec.gold {
                Label::Known(c) if c >= n => {
                    return Err(Error::UnknownClass {
                        row,
                        label: format!("#{c}"),
                    })
                }
                Label::Unknown if rec.split != Split::Test => {
                    return Err(Error::UnknownInTraining {
                        row,
                        split: rec.split.to_string(),
                    })
                }
                _ => {}
            }
            if let Some(first) = ids.insert(rec.id.as_str(), row) {
                return Err(Error::DuplicateId {
                    row,
                    id: rec.id.clone(),
                    first,
                });
            }
        }
        Ok(Self {
            label_space,
            records,
        })
    }

    pub fn label_space(&self) -> &LabelSpace {
        &self.label_space
    }

    pub fn records(&self) -> &[ExampleRecord<F>] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records of one split, in file order.
    pub fn split(&self, split: Split) -> Vec<&ExampleRecord<F>> {
        self.records.iter().filter(|r| r.split == split).collect()
    }

    /// Per-class record counts within a split (unknown-labeled records ignored).
    pub fn class_counts(&self, split: Split) -> Vec<usize> {
        let mut counts = vec![0; self.label_space.n_classes()];
        for rec in self.records.iter().filter(|r| r.split == split) {
            if let Label::Known(c) = rec.gold {
                counts[c] += 1;
            }
        }
        counts
    }

    pub fn into_parts(self) -> (LabelSpace, Vec<ExampleRecord<F>>) {
        (self.label_space, self.records)
    }
}

/// Reads and validates a bundle. Row order is preserved.
pub fn load_bundle<F: Scalar>(manifest_path: &Path, records_path: &Path) -> Result<DatasetBundle<F>> {
    let space = LabelSpace::load(manifest_path)?;
    let csv_err = |source| Error::Csv {
        path: records_path.to_path_buf(),
        source,
    };
    let file = fs::File::open(records_path).map_err(|e| Error::io(records_path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file);

    let expected = space.csv_header();
    let found: Vec<String> = reader.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    if found != expected {
        return Err(Error::Header {
            path: records_path.to_path_buf(),
            expected: expected.join(","),
            found: found.join(","),
        });
    }

    let n = space.n_classes();
    let d = space.feature_dim();
    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row_no = i + 1;
        let row = row.map_err(csv_err)?;
        if row.len() != 3 + n + d {
            return Err(Error::DimensionMismatch {
                row: row_no,
                detail: format!(
                    "expected {} columns (3 + {n} logits + {d} features), found {}",
                    3 + n + d,
                    row.len()
                ),
            });
        }
        let split: Split = row[1].parse().map_err(|_| Error::BadSplit {
            row: row_no,
            value: row[1].to_string(),
        })?;
        let gold = space.parse_label(&row[2]).ok_or_else(|| Error::UnknownClass {
            row: row_no,
            label: row[2].to_string(),
        })?;
        let parse = |col: usize| -> Result<F> {
            let text = &row[col];
            match text.parse::<F>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::NonFinite {
                    row: row_no,
                    column: expected[col].clone(),
                    value: text.to_string(),
                }),
            }
        };
        let logits = (3..3 + n).map(&parse).collect::<Result<Vec<F>>>()?;
        let features = (3 + n..3 + n + d).map(&parse).collect::<Result<Vec<F>>>()?;
        records.push(ExampleRecord {
            id: row[0].to_string(),
            split,
            gold,
            logits,
            features,
        });
    }
    DatasetBundle::new(space, records)
}

/// Writes the manifest and the records CSV (LF line endings, shortest round-trip reals).
pub fn save_bundle<F: Scalar>(bundle: &DatasetBundle<F>, manifest_path: &Path, records_path: &Path) -> Result<()> {
    bundle.label_space.save(manifest_path)?;
    write_records(bundle, records_path)
}

fn write_records<F: Scalar>(bundle: &DatasetBundle<F>, path: &Path) -> Result<()> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(csv_err)?;
    let space = &bundle.label_space;
    writer.write_record(space.csv_header()).map_err(csv_err)?;
    let mut fields: Vec<String> = Vec::with_capacity(3 + space.n_classes() + space.feature_dim());
    for rec in &bundle.records {
        fields.clear();
        fields.push(rec.id.clone());
        fields.push(rec.split.to_string());
        fields.push(space.label_name(rec.gold).to_string());
        fields.extend(rec.logits.iter().map(|&v| format_real(v)));
        fields.extend(rec.features.iter().map(|&v| format_real(v)));
        writer.write_record(&fields).map_err(csv_err)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}
