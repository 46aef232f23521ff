//! End-to-end fitting, batch prediction and multi-run experiments.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{fit_temperature, TemperatureFit, TemperatureSearch};
use crate::data::{DatasetBundle, Label, LabelSpace, Split};
use crate::error::{Error, Result};
use crate::eval::{
    evaluate_predictions, restrict_bundle, sample_known_classes, summarize_reports, EvalReport, MethodSummaries,
    RunManifest,
};
use crate::fixtures::Preset;
use crate::fusion::{fit_platt, Direction, FusionRule, ScoreSource, SmdnModel};
use crate::lof::{fit_lof, DEFAULT_K};
use crate::persist::write_json;
use crate::scalar::{format_real, Scalar};
use crate::thresholds::{fit_thresholds, Method, OpenSetPrediction, DEFAULT_ALPHA};

/// Hyperparameters for fitting every sub-model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmdnConfig<F> {
    /// Standard deviations below the class mean for per-class thresholds.
    pub alpha: F,
    pub lof_k: usize,
    /// Standard deviations above the mean validation LOF score.
    pub lof_alpha: F,
    pub fusion_rule: FusionRule,
    pub t_lo: F,
    pub t_hi: F,
    pub tol: F,
    /// Split feeding the per-class threshold statistics.
    pub stat_split: Split,
}

impl<F: Scalar> Default for SmdnConfig<F> {
    fn default() -> Self {
        let search = TemperatureSearch::<F>::default();
        Self {
            alpha: F::lit(DEFAULT_ALPHA),
            lof_k: DEFAULT_K,
            lof_alpha: F::lit(DEFAULT_ALPHA),
            fusion_rule: FusionRule::Mean,
            t_lo: search.t_lo,
            t_hi: search.t_hi,
            tol: search.tol,
            stat_split: Split::Train,
        }
    }
}

impl<F: Scalar> SmdnConfig<F> {
    pub fn search(&self) -> TemperatureSearch<F> {
        TemperatureSearch {
            t_lo: self.t_lo,
            t_hi: self.t_hi,
            tol: self.tol,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FittedSmdn<F> {
    pub model: SmdnModel<F>,
    pub calibration: TemperatureFit<F>,
}

/// Fits, in order: temperature on val, per-class thresholds (fitted T and
/// T = 1) on the statistics split, LOF on train with its threshold from val,
/// then both Platt scalers on val scores.
pub fn fit_smdn<F: Scalar>(bundle: &DatasetBundle<F>, config: &SmdnConfig<F>) -> Result<FittedSmdn<F>> {
    let space = bundle.label_space();
    let train = bundle.split(Split::Train);
    let val = bundle.split(Split::Val);
    if val.is_empty() {
        return Err(Error::Empty("validation split"));
    }
    let calibration = fit_temperature(&val, config.search())?;
    let stats = bundle.split(config.stat_split);
    let softermax = fit_thresholds(&stats, space, calibration.temperature, config.alpha, config.stat_split)?;
    let doc_softmax = fit_thresholds(&stats, space, F::one(), config.alpha, config.stat_split)?;
    let lof = fit_lof(&train, config.lof_k, config.lof_alpha, &val)?;

    let confidences = val
        .iter()
        .map(|r| softermax.confidence_score(&r.logits).map(|(c, _)| c))
        .collect::<Result<Vec<F>>>()?;
    let platt_sm = fit_platt(&confidences, F::zero(), Direction::LowerIsNovel, ScoreSource::Softermax)?;
    let features: Vec<&[F]> = val.iter().map(|r| r.features.as_slice()).collect();
    let lof_scores = lof.index.score_many(&features)?;
    let platt_lof = fit_platt(&lof_scores, lof.threshold, Direction::HigherIsNovel, ScoreSource::Lof)?;

    Ok(FittedSmdn {
        model: SmdnModel {
            softermax,
            doc_softmax,
            lof,
            platt_sm,
            platt_lof,
            fusion_rule: config.fusion_rule,
        },
        calibration,
    })
}

/// Predictions for every record of `split`, in file order.
pub fn predict_split<F: Scalar>(
    bundle: &DatasetBundle<F>,
    model: &SmdnModel<F>,
    method: Method,
    split: Split,
) -> Result<Vec<OpenSetPrediction<F>>> {
    bundle
        .split(split)
        .par_iter()
        .map(|r| model.predict(r, method))
        .collect()
}

/// Writes `id,decision,p_sm,p_lof,p_joint,confidence`; the probability columns
/// are empty for methods other than smdn.
pub fn write_predictions<F: Scalar>(path: &Path, predictions: &[OpenSetPrediction<F>], space: &LabelSpace) -> Result<()> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(csv_err)?;
    w.write_record(["id", "decision", "p_sm", "p_lof", "p_joint", "confidence"])
        .map_err(csv_err)?;
    for p in predictions {
        let (sm, lof, joint) = match p.novelty {
            Some(n) => (format_real(n.p_sm), format_real(n.p_lof), format_real(n.p_joint)),
            None => Default::default(),
        };
        w.write_record([
            p.id.as_str(),
            space.label_name(p.decision),
            &sm,
            &lof,
            &joint,
            &format_real(p.confidence_score),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads the `(id, decision)` columns of a predictions file.
pub fn read_decisions(path: &Path, space: &LabelSpace) -> Result<Vec<(String, Label)>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let headers = r.headers().map_err(csv_err)?.clone();
    if headers.get(0) != Some("id") || headers.get(1) != Some("decision") {
        return Err(Error::Header {
            path: path.to_path_buf(),
            expected: "id,decision,p_sm,p_lof,p_joint,confidence".into(),
            found: headers.iter().collect::<Vec<_>>().join(","),
        });
    }
    r.records()
        .enumerate()
        .map(|(i, row)| {
            let row = row.map_err(csv_err)?;
            let label = space.parse_label(&row[1]).ok_or_else(|| Error::UnknownClass {
                row: i + 1,
                label: row[1].to_string(),
            })?;
            Ok((row[0].to_string(), label))
        })
        .collect()
}

/// Where a multi-run experiment gets its data.
#[derive(Clone, Debug)]
pub enum ExperimentSource {
    /// An all-class export; each run slices the known logit columns out of it.
    Bundle(DatasetBundle<f64>),
    /// A synthetic dataset re-exported for every run's known classes.
    Preset { preset: Preset, data_seed: u64 },
}

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub ratios: Vec<f64>,
    pub runs: usize,
    pub seed: u64,
    pub jobs: usize,
    pub smdn: SmdnConfig<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunReport {
    pub run_id: String,
    pub known_classes: Vec<String>,
    pub requires_reexport: bool,
    pub temperature: f64,
    pub methods: BTreeMap<String, EvalReport>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RatioAggregate {
    pub known_ratio: f64,
    pub run_ids: Vec<String>,
    pub temperature: crate::eval::Summary,
    pub methods: MethodSummaries,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Aggregate {
    pub source: String,
    pub seed: u64,
    pub runs_per_ratio: usize,
    pub config: SmdnConfig<f64>,
    pub ratios: Vec<RatioAggregate>,
}

pub fn run_id(ratio: f64, run: usize) -> String {
    format!("known{:03}-run{run:02}", (ratio * 100.0).round() as i64)
}

fn run_one(
    source: &ExperimentSource,
    config: &ExperimentConfig,
    ratio: f64,
    run: usize,
    run_seed: u64,
    out_dir: &Path,
) -> Result<RunReport> {
    let id = run_id(ratio, run);
    let (space, counts) = match source {
        ExperimentSource::Bundle(b) => (b.label_space().clone(), b.class_counts(Split::Train)),
        ExperimentSource::Preset { preset, .. } => {
            let spec = preset.spec();
            (LabelSpace::new(spec.class_names(), spec.feature_dim)?, spec.train_counts())
        }
    };
    let manifest = sample_known_classes(&space, &counts, ratio, run_seed, id.clone())?;
    let (bundle, requires_reexport) = match source {
        ExperimentSource::Bundle(b) => {
            let r = restrict_bundle(b, &manifest)?;
            (r.bundle, r.requires_reexport)
        }
        ExperimentSource::Preset { preset, data_seed } => {
            let known: Vec<usize> = manifest
                .known_classes
                .iter()
                .map(|c| space.index_of(c).expect("sampled from this space"))
                .collect();
            (preset.spec().generate(&known, *data_seed)?, false)
        }
    };
    let fitted = fit_smdn(&bundle, &config.smdn)?;
    let run_dir = out_dir.join("runs").join(&id);
    write_json(&run_dir.join("manifest.json"), &manifest)?;
    let mut methods = BTreeMap::new();
    for method in Method::ALL {
        let preds = predict_split(&bundle, &fitted.model, method, Split::Test)?;
        write_predictions(&run_dir.join(format!("predictions_{method}.csv")), &preds, bundle.label_space())?;
        methods.insert(method.to_string(), evaluate_predictions(&preds, &bundle)?);
    }
    let report = RunReport {
        run_id: id,
        known_classes: manifest.known_classes,
        requires_reexport,
        temperature: fitted.calibration.temperature,
        methods,
    };
    write_json(&run_dir.join("report.json"), &report)?;
    Ok(report)
}

/// Runs every (ratio, run) pair, writing `runs/<run_id>/` and `aggregate.json`
/// under `out_dir`. Run `r` (counted across ratios) uses seed `seed + r`.
pub fn run_experiment(source: &ExperimentSource, config: &ExperimentConfig, out_dir: &Path) -> Result<Aggregate> {
    if config.runs == 0 || config.ratios.is_empty() {
        return Err(Error::Invalid("experiment needs at least one ratio and one run".into()));
    }
    let jobs: Vec<(usize, f64, usize)> = config
        .ratios
        .iter()
        .flat_map(|&ratio| (0..config.runs).map(move |run| (ratio, run)))
        .enumerate()
        .map(|(i, (ratio, run))| (i, ratio, run))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs.max(1))
        .build()
        .map_err(|e| Error::Invalid(format!("thread pool: {e}")))?;
    let reports: Vec<RunReport> = pool.install(|| {
        jobs.par_iter()
            .map(|&(i, ratio, run)| run_one(source, config, ratio, run, config.seed.wrapping_add(i as u64), out_dir))
            .collect::<Result<Vec<_>>>()
    })?;

    let ratios = config
        .ratios
        .iter()
        .enumerate()
        .map(|(ri, &ratio)| {
            let runs = &reports[ri * config.runs..(ri + 1) * config.runs];
            let methods = Method::ALL
                .iter()
                .map(|m| {
                    let key = m.to_string();
                    let summary = summarize_reports(runs.iter().map(|r| &r.methods[&key]));
                    (key, summary)
                })
                .collect();
            let temps: Vec<f64> = runs.iter().map(|r| r.temperature).collect();
            RatioAggregate {
                known_ratio: ratio,
                run_ids: runs.iter().map(|r| r.run_id.clone()).collect(),
                temperature: crate::eval::summarize(&temps),
                methods,
            }
        })
        .collect();
    let aggregate = Aggregate {
        source: match source {
            ExperimentSource::Bundle(_) => "bundle".into(),
            ExperimentSource::Preset { preset, data_seed } => format!("preset:{preset}:seed{data_seed}"),
        },
        seed: config.seed,
        runs_per_ratio: config.runs,
        config: config.smdn.clone(),
        ratios,
    };
    write_json(&out_dir.join("aggregate.json"), &aggregate)?;
    Ok(aggregate)
}

/// Writes one run manifest per run under `out_dir/runs/<run_id>/manifest.json`.
pub fn write_run_manifests(
    space: &LabelSpace,
    train_counts: &[usize],
    ratios: &[f64],
    runs: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    let mut i = 0u64;
    for &ratio in ratios {
        for run in 0..runs {
            let id = run_id(ratio, run);
            let manifest: RunManifest = sample_known_classes(space, train_counts, ratio, seed.wrapping_add(i), id.clone())?;
            let path = out_dir.join("runs").join(&id).join("manifest.json");
            write_json(&path, &manifest)?;
            paths.push(path);
            i += 1;
        }
    }
    Ok(paths)
}
