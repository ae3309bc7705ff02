//! Runs a configured experiment across seeds and writes its artifacts.
//!
//! Layout under the output root:
//!
//! ```text
//! <root>/<config hash>/summary.json
//! <root>/<config hash>/seed-<n>/metrics.csv
//! <root>/<config hash>/seed-<n>/checkpoints.csv
//! <root>/<config hash>/seed-<n>/manifest.txt
//! <root>/<config hash>/seed-<n>/ema.ckpt
//! ```
//!
//! The hash covers every setting except `seeds` and `output_dir`, so the
//! same configuration always lands in the same directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{DatasetKind, ExperimentConfig};
use crate::data::{gen_shapes, gen_two_moons, load_idx, split, Dataset, SplitSpec};
use crate::error::{Error, Result};
use crate::model::{save_checkpoint, ModelSpec};
use crate::rng::{Purpose, Streams};
use crate::train::{report_median, run_training, MetricsRow, TrainOutcome, TrainingData};

/// Environment variable that replaces `output_dir` when set.
pub const OUTPUT_ROOT_VAR: &str = "MIXMATCH_OUTPUT_ROOT";

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Train and test sets for a config; identical for every seed.
pub fn load_data(config: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    let test_seed = Streams::new(config.data_seed).key(Purpose::TestSet, 0, 0);
    let (train, test) = match &config.dataset {
        DatasetKind::TwoMoons => (
            gen_two_moons(config.train_size, config.noise, config.data_seed)?,
            gen_two_moons(config.test_size, config.noise, test_seed)?,
        ),
        DatasetKind::Shapes => {
            let gen = |n, seed| gen_shapes(n, config.image_side, config.num_classes, config.noise, seed);
            (
                gen(config.train_size, config.data_seed)?,
                gen(config.test_size, test_seed)?,
            )
        }
        DatasetKind::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
        } => (
            load_idx(train_images, train_labels)?,
            load_idx(test_images, test_labels)?,
        ),
    };
    if train.feature_shape != test.feature_shape {
        return Err(Error::shape("load_data", &train.feature_shape, &test.feature_shape));
    }
    let classes = train.num_classes.max(test.num_classes);
    if classes > config.num_classes {
        return Err(Error::InvalidArgument(format!(
            "data has {classes} classes but the config declares {}",
            config.num_classes
        )));
    }
    Ok((train, test))
}

pub fn model_for(config: &ExperimentConfig, train: &Dataset) -> Result<ModelSpec> {
    let spec = config.model_spec_for(train.feature_shape.clone());
    spec.validate()?;
    Ok(spec)
}

/// First 16 hex digits of the SHA-256 of [`ExperimentConfig::run_identity`].
pub fn config_hash(config: &ExperimentConfig) -> String {
    let digest = Sha256::digest(config.run_identity().as_bytes());
    digest[..8].iter().fold(String::new(), |mut s, b| {
        write!(s, "{b:02x}").expect("writing to a String cannot fail");
        s
    })
}

/// `$MIXMATCH_OUTPUT_ROOT` if set, otherwise the config's `output_dir`.
pub fn output_root(config: &ExperimentConfig) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_VAR) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => config.output_dir.clone(),
    }
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(MetricsRow::HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_csv_line());
        out.push('\n');
    }
    out
}

fn manifest(config: &ExperimentConfig, seed: u64) -> String {
    format!(
        "# mixmatch {VERSION}\n# config hash {}\nrun_seed = {seed}\n{}",
        config_hash(config),
        config.serialize()
    )
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// One seed's training run on pre-loaded data.
///
/// With `dir`, the EMA checkpoint is saved at every evaluation and the
/// CSVs and manifest are written at the end.
pub fn run_seed(
    config: &ExperimentConfig,
    train: &Dataset,
    test: &Dataset,
    seed: u64,
    dir: Option<&Path>,
) -> Result<TrainOutcome> {
    let model = model_for(config, train)?;
    let labeled = if config.labeled == 0 {
        train.len()
    } else {
        config.labeled
    };
    let (lab, unl) = split(
        train,
        &SplitSpec {
            labeled,
            balanced: config.balanced,
            seed,
        },
    )?;
    if let Some(d) = dir {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let ckpt = dir.map(|d| d.join("ema.ckpt"));
    let mut persist = |event: &crate::train::CheckpointEvent<'_>| -> Result<()> {
        match &ckpt {
            Some(path) => save_checkpoint(&event.state.ema, path),
            None => Ok(()),
        }
    };
    let outcome = run_training(
        &model,
        &config.training_method(),
        &config.settings(),
        TrainingData {
            labeled: &lab,
            unlabeled: &unl,
            test,
        },
        &config.schedule(),
        seed,
        &mut persist,
    )?;
    if let Some(d) = dir {
        write(&d.join("metrics.csv"), metrics_csv(&outcome.metrics))?;
        write(&d.join("checkpoints.csv"), outcome.log.to_csv())?;
        write(&d.join("manifest.txt"), manifest(config, seed))?;
    }
    Ok(outcome)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunSummary {
    pub seed: u64,
    /// Median EMA test error over the last `report_window` checkpoints.
    pub median_error: f64,
    pub final_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeedFailure {
    pub seed: u64,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentSummary {
    pub version: String,
    pub config_hash: String,
    pub method: String,
    pub report_window: usize,
    pub runs: Vec<RunSummary>,
    pub failures: Vec<SeedFailure>,
    /// Mean of `median_error` over successful runs.
    pub mean: Option<f64>,
    /// Sample standard deviation (n − 1) of `median_error`; 0 for a single run.
    pub std: Option<f64>,
}

impl ExperimentSummary {
    pub fn succeeded(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Some((mean, std))
}

pub fn summarize(config: &ExperimentConfig, runs: Vec<RunSummary>, failures: Vec<SeedFailure>) -> ExperimentSummary {
    let medians: Vec<f64> = runs.iter().map(|r| r.median_error).collect();
    let stats = mean_std(&medians);
    ExperimentSummary {
        version: VERSION.into(),
        config_hash: config_hash(config),
        method: config.method.name().into(),
        report_window: config.report_window,
        runs,
        failures,
        mean: stats.map(|s| s.0),
        std: stats.map(|s| s.1),
    }
}

/// Directory holding one config's runs.
pub fn experiment_dir(config: &ExperimentConfig) -> PathBuf {
    output_root(config).join(config_hash(config))
}

/// Runs every seed and writes all artifacts plus `summary.json`.
///
/// A seed that fails is recorded in the summary and the others still run;
/// check [`ExperimentSummary::succeeded`]. Errors that prevent any run at
/// all (bad data, unwritable output) are returned directly.
pub fn run_experiment(config: &ExperimentConfig) -> Result<(PathBuf, ExperimentSummary)> {
    config.validate()?;
    let (train, test) = load_data(config)?;
    model_for(config, &train)?;
    let root = experiment_dir(config);
    fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for &seed in &config.seeds {
        let dir = root.join(format!("seed-{seed}"));
        match run_seed(config, &train, &test, seed, Some(&dir)) {
            Ok(outcome) => {
                let median_error = report_median(&outcome.log, config.report_window)?;
                let final_error = outcome.log.entries().last().map(|e| e.1).unwrap_or(f64::NAN);
                runs.push(RunSummary {
                    seed,
                    median_error,
                    final_error,
                });
            }
            Err(e) => failures.push(SeedFailure {
                seed,
                error: e.to_string(),
            }),
        }
    }
    let summary = summarize(config, runs, failures);
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write(&root.join("summary.json"), json + "\n")?;
    Ok((root, summary))
}
