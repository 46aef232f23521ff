//! Command-line front end. [`run_cli`] returns the process exit code:
//! 0 on success, 1 when inputs fail validation or processing, 2 on usage errors.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::calibration::{ece, fit_temperature, DEFAULT_BINS};
use crate::data::{load_bundle, save_bundle, DatasetBundle, LabelSpace, Split};
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::fixtures::Preset;
use crate::fusion::{FusionRule, SmdnModel};
use crate::persist::write_json;
use crate::pipeline::{
    fit_smdn, predict_split, read_decisions, run_experiment, write_predictions, write_run_manifests, ExperimentConfig,
    ExperimentSource, SmdnConfig,
};
use crate::thresholds::Method;

#[derive(Debug, Parser)]
#[command(name = "smdn", version, about = "Open-set rejection for pre-trained classifier outputs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit the softmax temperature on the validation split and write calib.json.
    Calibrate(CalibrateArgs),
    /// Fit thresholds, LOF and Platt scalers; write smdn-model.json and its parts.
    Fit(FitArgs),
    /// Predict with one open-set method and write a predictions CSV.
    Predict(PredictArgs),
    /// Score a predictions CSV against the test split and write report.json.
    Eval(EvalArgs),
    /// Draw known-class subsets and write one run manifest per run.
    SampleKnown(SampleArgs),
    /// Repeat sample -> fit -> predict -> eval over runs and write aggregate.json.
    Experiment(ExperimentArgs),
    /// Write a synthetic bundle.
    Fixtures(FixtureArgs),
}

#[derive(Debug, Args)]
struct BundleArgs {
    /// Records CSV
    #[arg(long)]
    data: PathBuf,
    /// Label-space manifest JSON
    #[arg(long)]
    manifest: PathBuf,
}

impl BundleArgs {
    fn load(&self) -> Result<DatasetBundle<f64>> {
        load_bundle(&self.manifest, &self.data)
    }
}

#[derive(Debug, Args)]
struct SearchArgs {
    /// Lower end of the temperature search bracket
    #[arg(long, default_value_t = 0.25, value_parser = positive)]
    t_lo: f64,
    /// Upper end of the temperature search bracket
    #[arg(long, default_value_t = 8.0, value_parser = positive)]
    t_hi: f64,
    /// Search tolerance on ln T
    #[arg(long, default_value_t = 1e-4, value_parser = positive)]
    tol: f64,
}

#[derive(Debug, Args)]
struct HyperArgs {
    /// Per-class threshold: t_i = max(0.5, mu_i - alpha * sigma_i)
    #[arg(long, default_value_t = 2.0, value_parser = non_negative)]
    alpha: f64,
    /// LOF neighbor count
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
    k: u64,
    /// LOF threshold: mean + lof_alpha * std of validation scores
    #[arg(long, default_value_t = 2.0, value_parser = non_negative)]
    lof_alpha: f64,
    /// Fusion of the two novelty probabilities: mean, max or either
    #[arg(long, default_value = "mean")]
    fusion: FusionRule,
    /// Split feeding the per-class threshold statistics: train or val
    #[arg(long, default_value = "train", value_parser = stat_split)]
    stat_split: Split,
    #[command(flatten)]
    search: SearchArgs,
}

impl HyperArgs {
    fn config(&self) -> Result<SmdnConfig<f64>> {
        check_bracket(&self.search)?;
        Ok(SmdnConfig {
            alpha: self.alpha,
            lof_k: self.k as usize,
            lof_alpha: self.lof_alpha,
            fusion_rule: self.fusion,
            t_lo: self.search.t_lo,
            t_hi: self.search.t_hi,
            tol: self.search.tol,
            stat_split: self.stat_split,
        })
    }
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    #[command(flatten)]
    bundle: BundleArgs,
    /// Output calib.json
    #[arg(long)]
    out: PathBuf,
    /// Equal-width bins for the reported calibration error
    #[arg(long, default_value_t = DEFAULT_BINS as u64, value_parser = clap::value_parser!(u64).range(1..))]
    bins: u64,
    #[command(flatten)]
    search: SearchArgs,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[command(flatten)]
    bundle: BundleArgs,
    /// Output smdn-model.json; thresholds.json, lof.json, lof-train.csv and
    /// calib.json are written next to it
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    hyper: HyperArgs,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[command(flatten)]
    bundle: BundleArgs,
    /// Fitted smdn-model.json
    #[arg(long)]
    model: PathBuf,
    /// softmax_t, doc_softmax, softermax, lof or smdn
    #[arg(long, default_value = "smdn")]
    method: Method,
    /// Split to predict
    #[arg(long, default_value = "test")]
    split: Split,
    /// Output predictions CSV
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    bundle: BundleArgs,
    /// Predictions CSV covering every test id
    #[arg(long)]
    predictions: PathBuf,
    /// Output report.json
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SampleArgs {
    #[command(flatten)]
    bundle: BundleArgs,
    /// Known-class ratio; repeat for several
    #[arg(long = "ratio", default_values_t = [0.25, 0.5, 0.75], value_parser = open_unit)]
    ratios: Vec<f64>,
    /// Runs per ratio
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    runs: u64,
    /// Seed for the ChaCha8 generator; run i uses seed + i
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory; manifests go to runs/<run_id>/manifest.json
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    /// Records CSV of an all-class export (with --manifest)
    #[arg(long, requires = "manifest", conflicts_with = "preset")]
    data: Option<PathBuf>,
    /// Label-space manifest JSON (with --data)
    #[arg(long, requires = "data")]
    manifest: Option<PathBuf>,
    /// Synthetic preset re-exported for each run instead of --data
    #[arg(long, required_unless_present = "data")]
    preset: Option<Preset>,
    /// Known-class ratio; repeat for several
    #[arg(long = "ratio", default_values_t = [0.25, 0.5, 0.75], value_parser = open_unit)]
    ratios: Vec<f64>,
    /// Runs per ratio
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    runs: u64,
    /// Seed for class sampling (run i uses seed + i) and preset data
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Runs executed in parallel
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    jobs: u64,
    #[command(flatten)]
    hyper: HyperArgs,
    /// Output directory
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct FixtureArgs {
    /// gaussian-3+1, gaussian-5+2 or gaussian-8
    #[arg(long)]
    preset: Preset,
    /// Seed for the ChaCha8 generator
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for manifest.json and records.csv
    #[arg(long)]
    out_dir: PathBuf,
}

fn positive(s: &str) -> std::result::Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        _ => Err("must be a positive finite number".into()),
    }
}

fn non_negative(s: &str) -> std::result::Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.is_finite() => Ok(v),
        _ => Err("must be a non-negative finite number".into()),
    }
}

fn open_unit(s: &str) -> std::result::Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v < 1.0 => Ok(v),
        _ => Err("must lie strictly between 0 and 1".into()),
    }
}

fn stat_split(s: &str) -> std::result::Result<Split, String> {
    match s {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        _ => Err("must be `train` or `val`".into()),
    }
}

fn check_bracket(s: &SearchArgs) -> Result<()> {
    if s.t_lo < s.t_hi {
        Ok(())
    } else {
        Err(Error::Invalid(format!(
            "--t-lo ({}) must be below --t-hi ({})",
            s.t_lo, s.t_hi
        )))
    }
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    path.parent().unwrap_or(Path::new("")).join(name)
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Calibrate(args) => {
            check_bracket(&args.search)?;
            let bundle = args.bundle.load()?;
            let val = bundle.split(Split::Val);
            let search = crate::calibration::TemperatureSearch {
                t_lo: args.search.t_lo,
                t_hi: args.search.t_hi,
                tol: args.search.tol,
            };
            let fit = fit_temperature(&val, search)?;
            let bins = args.bins as usize;
            let before = ece(&val, 1.0, bins)?.ece;
            let after = ece(&val, fit.temperature, bins)?.ece;
            fit.save(&args.out)?;
            println!(
                "temperature {} (nll {:.6}, ece {:.4} -> {:.4}){}",
                fit.temperature,
                fit.final_nll,
                before,
                after,
                if fit.at_bound.is_some() { " [at search bound]" } else { "" }
            );
        }
        Command::Fit(args) => {
            let config = args.hyper.config()?;
            let bundle = args.bundle.load()?;
            let fitted = fit_smdn(&bundle, &config)?;
            fitted.model.save(&args.out, Some(&fitted.calibration))?;
            fitted.calibration.save(&sibling(&args.out, "calib.json"))?;
            println!(
                "fitted T = {}, LOF threshold = {}",
                fitted.calibration.temperature, fitted.model.lof.threshold
            );
        }
        Command::Predict(args) => {
            let bundle = args.bundle.load()?;
            let model = SmdnModel::<f64>::load(&args.model)?;
            let preds = predict_split(&bundle, &model, args.method, args.split)?;
            write_predictions(&args.out, &preds, bundle.label_space())?;
            let rejected = preds.iter().filter(|p| p.decision.is_unknown()).count();
            println!("{}: {} predictions, {} rejected as unknown", args.method, preds.len(), rejected);
        }
        Command::Eval(args) => {
            let bundle = args.bundle.load()?;
            let decisions = read_decisions(&args.predictions, bundle.label_space())?;
            let report = evaluate(&decisions, &bundle)?;
            write_json(&args.out, &report)?;
            println!(
                "macro F1: all {:.4}, known {:.4}, unknown {:.4}",
                report.macro_f1_all, report.macro_f1_known, report.f1_unknown
            );
        }
        Command::SampleKnown(args) => {
            let bundle = args.bundle.load()?;
            let paths = write_run_manifests(
                bundle.label_space(),
                &bundle.class_counts(Split::Train),
                &args.ratios,
                args.runs as usize,
                args.seed,
                &args.out_dir,
            )?;
            println!("wrote {} run manifests under {}", paths.len(), args.out_dir.display());
        }
        Command::Experiment(args) => {
            let config = ExperimentConfig {
                ratios: args.ratios.clone(),
                runs: args.runs as usize,
                seed: args.seed,
                jobs: args.jobs as usize,
                smdn: args.hyper.config()?,
            };
            let source = match (&args.data, &args.manifest, args.preset) {
                (Some(data), Some(manifest), _) => ExperimentSource::Bundle(load_bundle(manifest, data)?),
                (_, _, Some(preset)) => ExperimentSource::Preset {
                    preset,
                    data_seed: args.seed,
                },
                _ => return Err(Error::Invalid("give --data with --manifest, or --preset".into())),
            };
            let aggregate = run_experiment(&source, &config, &args.out_dir)?;
            for ratio in &aggregate.ratios {
                for (method, s) in &ratio.methods {
                    println!(
                        "known {:>4.0}%  {:<12} unknown F1 {:.4} (95% CI {:.4}..{:.4})",
                        ratio.known_ratio * 100.0,
                        method,
                        s.unknown.mean,
                        s.unknown.ci_low,
                        s.unknown.ci_high
                    );
                }
            }
        }
        Command::Fixtures(args) => {
            let bundle = args.preset.spec().generate_default(args.seed)?;
            save_bundle(
                &bundle,
                &args.out_dir.join("manifest.json"),
                &args.out_dir.join("records.csv"),
            )?;
            let space: &LabelSpace = bundle.label_space();
            println!(
                "wrote {} records ({} classes, {} features) to {}",
                bundle.len(),
                space.n_classes(),
                space.feature_dim(),
                args.out_dir.display()
            );
        }
    }
    Ok(())
}

/// Parses `argv` (program name first) and runs the subcommand.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
