//! Flat `key = value` experiment configuration.
//!
//! Blank lines and `#` comments are ignored; every other line sets one key.
//! Unknown and repeated keys are rejected with the offending line number.
//! Keys that are absent keep their defaults, and an empty document yields
//! the default MixMatch run on two moons.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::baselines::{BaselineConfig, BaselineMethod};
use crate::data::AugmentPolicy;
use crate::error::{ConfigError, Result};
use crate::model::ModelSpec;
use crate::ssl::{MixMatchConfig, MixupMode};
use crate::train::{AdamConfig, Method, Schedule, TrainSettings};

#[derive(Clone, Debug, PartialEq)]
pub enum DatasetKind {
    TwoMoons,
    Shapes,
    /// IDX image/label files for training and test data.
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MethodKind {
    Supervised,
    MixMatch,
    Baseline(BaselineMethod),
}

impl MethodKind {
    pub fn name(self) -> &'static str {
        match self {
            MethodKind::Supervised => "supervised",
            MethodKind::MixMatch => "mixmatch",
            MethodKind::Baseline(b) => b.name(),
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "supervised" => Some(MethodKind::Supervised),
            "mixmatch" => Some(MethodKind::MixMatch),
            other => BaselineMethod::parse(other).map(MethodKind::Baseline),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Mlp,
    ConvNet,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AugmentKind {
    None,
    Jitter,
    FlipCrop,
}

/// A complete, validated experiment description.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetKind,
    /// Seed for synthetic data generation; the same across all runs.
    pub data_seed: u64,
    pub train_size: usize,
    pub test_size: usize,
    pub noise: f64,
    pub image_side: usize,
    pub num_classes: usize,

    /// Labeled examples kept; `0` keeps every label.
    pub labeled: usize,
    pub balanced: bool,

    pub model: ModelKind,
    pub hidden: Vec<usize>,
    pub channels: usize,

    pub method: MethodKind,
    pub mixmatch: MixMatchConfig,
    pub baseline_weight: f64,
    pub threshold: f64,
    pub teacher_decay: f64,

    pub augment: AugmentKind,
    pub jitter_sigma: f64,
    pub crop_pad: usize,
    pub flip_prob: f64,
    pub pixel_noise: f64,

    pub steps: u64,
    pub batch_size: usize,
    pub checkpoint_every: u64,
    pub report_window: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub ema_decay: f64,

    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetKind::TwoMoons,
            data_seed: 0,
            train_size: 2000,
            test_size: 1000,
            noise: 0.1,
            image_side: 8,
            num_classes: 2,
            labeled: 10,
            balanced: true,
            model: ModelKind::Mlp,
            hidden: vec![64, 64],
            channels: 16,
            method: MethodKind::MixMatch,
            mixmatch: MixMatchConfig {
                rampup_steps: 1000,
                ..MixMatchConfig::default()
            },
            baseline_weight: 10.0,
            threshold: 0.95,
            teacher_decay: 0.999,
            augment: AugmentKind::Jitter,
            jitter_sigma: 0.1,
            crop_pad: 2,
            flip_prob: 0.5,
            pixel_noise: 0.0,
            steps: 4000,
            batch_size: 64,
            checkpoint_every: 6400,
            report_window: 20,
            lr: 0.002,
            weight_decay: 0.0004,
            ema_decay: 0.999,
            seeds: vec![1, 2, 3, 4, 5],
            output_dir: PathBuf::from("runs"),
        }
    }
}

/// Names accepted by [`ablation_preset`].
pub const ABLATIONS: [&str; 10] = [
    "k1",
    "k3",
    "k4",
    "t1",
    "ema_guess",
    "no_mixup",
    "mixup_labeled_only",
    "mixup_unlabeled_only",
    "mixup_separate",
    "ict",
];

/// Key/value overrides that turn a MixMatch config into one ablation.
pub fn ablation_preset(name: &str) -> Result<Vec<(&'static str, &'static str)>, ConfigError> {
    Ok(match name {
        "k1" => vec![("K", "1")],
        "k3" => vec![("K", "3")],
        "k4" => vec![("K", "4")],
        "t1" => vec![("T", "1")],
        "ema_guess" => vec![("ema_guessing", "true")],
        "no_mixup" => vec![("mixup_mode", "off")],
        "mixup_labeled_only" => vec![("mixup_mode", "labeled_only")],
        "mixup_unlabeled_only" => vec![("mixup_mode", "unlabeled_only")],
        "mixup_separate" => vec![("mixup_mode", "separate")],
        "ict" => vec![("mixup_mode", "unlabeled_only"), ("T", "1"), ("ema_guessing", "true")],
        other => {
            return Err(ConfigError::general(format!(
                "unknown ablation `{other}`; expected one of: {}",
                ABLATIONS.join(", ")
            )))
        }
    })
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("`{key}` expects a {}, got `{value}`", std::any::type_name::<T>()))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, String> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("`{key}` expects true or false, got `{value}`")),
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, String> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse_num(key, v.trim())).collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

/// IDX paths collected while parsing, before they are assembled into a [`DatasetKind`].
#[derive(Default)]
struct IdxPaths([Option<PathBuf>; 4]);

const IDX_KEYS: [&str; 4] = [
    "idx_train_images",
    "idx_train_labels",
    "idx_test_images",
    "idx_test_labels",
];

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut config = ExperimentConfig::default();
        let mut idx = IdxPaths::default();
        let mut want_idx = false;
        let mut seen: Vec<(String, usize)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::at(line_no, format!("expected `key = value`, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            if seen.iter().any(|(k, _)| k == key) {
                return Err(ConfigError::at(line_no, format!("`{key}` is set more than once")));
            }
            seen.push((key.to_string(), line_no));
            if let Some(slot) = IDX_KEYS.iter().position(|k| *k == key) {
                idx.0[slot] = Some(PathBuf::from(value));
                continue;
            }
            if key == "dataset" && value == "idx" {
                want_idx = true;
                continue;
            }
            config.set(key, value).map_err(|m| ConfigError::at(line_no, m))?;
        }
        if want_idx {
            let missing: Vec<&str> = IDX_KEYS
                .iter()
                .zip(&idx.0)
                .filter(|(_, p)| p.is_none())
                .map(|(k, _)| *k)
                .collect();
            if !missing.is_empty() {
                return Err(ConfigError::general(format!(
                    "dataset = idx needs {}",
                    missing.join(", ")
                )));
            }
            let [a, b, c, d] = idx.0.map(Option::unwrap);
            config.dataset = DatasetKind::Idx {
                train_images: a,
                train_labels: b,
                test_images: c,
                test_labels: d,
            };
        } else if let Some(k) = IDX_KEYS.iter().zip(&idx.0).find(|(_, p)| p.is_some()) {
            return Err(ConfigError::general(format!("`{}` requires dataset = idx", k.0)));
        }
        config
            .check()
            .map_err(|(key, msg)| match seen.iter().find(|(k, _)| k == key) {
                Some(&(_, line)) => ConfigError::at(line, msg),
                None => ConfigError::general(msg),
            })?;
        Ok(config)
    }

    /// Sets one key from its textual value. IDX paths are not accepted here.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let mm = &mut self.mixmatch;
        match key {
            "dataset" => {
                self.dataset = match value {
                    "two_moons" => DatasetKind::TwoMoons,
                    "shapes" => DatasetKind::Shapes,
                    _ => return Err(format!("`dataset` expects two_moons, shapes or idx, got `{value}`")),
                }
            }
            "data_seed" => self.data_seed = parse_num(key, value)?,
            "train_size" => self.train_size = parse_num(key, value)?,
            "test_size" => self.test_size = parse_num(key, value)?,
            "noise" => self.noise = parse_num(key, value)?,
            "image_side" => self.image_side = parse_num(key, value)?,
            "num_classes" => self.num_classes = parse_num(key, value)?,
            "labeled" => self.labeled = parse_num(key, value)?,
            "balanced" => self.balanced = parse_bool(key, value)?,
            "model" => {
                self.model = match value {
                    "mlp" => ModelKind::Mlp,
                    "convnet" => ModelKind::ConvNet,
                    _ => return Err(format!("`model` expects mlp or convnet, got `{value}`")),
                }
            }
            "hidden" => self.hidden = parse_list(key, value)?,
            "channels" => self.channels = parse_num(key, value)?,
            "method" => {
                self.method = MethodKind::parse(value).ok_or_else(|| {
                    format!(
                        "`method` expects supervised, mixmatch, pi_model, pseudo_label, mixup or mean_teacher, got `{value}`"
                    )
                })?
            }
            "T" => mm.temperature = parse_num(key, value)?,
            "K" => mm.k = parse_num(key, value)?,
            "alpha" => mm.alpha = parse_num(key, value)?,
            "lambda_u" => mm.lambda_u_max = parse_num(key, value)?,
            "rampup_steps" => mm.rampup_steps = parse_num(key, value)?,
            "mixup_mode" => {
                mm.mixup_mode = MixupMode::parse(value).ok_or_else(|| {
                    format!("`mixup_mode` expects full, labeled_only, unlabeled_only, separate or off, got `{value}`")
                })?
            }
            "ema_guessing" => mm.ema_guessing = parse_bool(key, value)?,
            "baseline_weight" => self.baseline_weight = parse_num(key, value)?,
            "threshold" => self.threshold = parse_num(key, value)?,
            "teacher_decay" => self.teacher_decay = parse_num(key, value)?,
            "augment" => {
                self.augment = match value {
                    "none" => AugmentKind::None,
                    "jitter" => AugmentKind::Jitter,
                    "flip_crop" => AugmentKind::FlipCrop,
                    _ => return Err(format!("`augment` expects none, jitter or flip_crop, got `{value}`")),
                }
            }
            "jitter_sigma" => self.jitter_sigma = parse_num(key, value)?,
            "crop_pad" => self.crop_pad = parse_num(key, value)?,
            "flip_prob" => self.flip_prob = parse_num(key, value)?,
            "pixel_noise" => self.pixel_noise = parse_num(key, value)?,
            "steps" => self.steps = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse_num(key, value)?,
            "report_window" => self.report_window = parse_num(key, value)?,
            "lr" => self.lr = parse_num(key, value)?,
            "weight_decay" => self.weight_decay = parse_num(key, value)?,
            "ema_decay" => self.ema_decay = parse_num(key, value)?,
            "seeds" => self.seeds = parse_list(key, value)?,
            "output_dir" => self.output_dir = PathBuf::from(value),
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Applies an ablation preset on top of this config.
    pub fn with_ablation(&self, name: &str) -> Result<Self, ConfigError> {
        let mut c = self.clone();
        for (k, v) in ablation_preset(name)? {
            c.set(k, v).map_err(ConfigError::general)?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.check().map_err(|(_, m)| ConfigError::general(m))
    }

    /// Constraint check naming the key at fault.
    fn check(&self) -> Result<(), (&'static str, String)> {
        fn bad(key: &'static str, m: String) -> Result<(), (&'static str, String)> {
            Err((key, m))
        }
        let mm = &self.mixmatch;
        if !(mm.temperature > 0.0) || !mm.temperature.is_finite() {
            return bad("T", format!("T must be > 0, got {}", mm.temperature));
        }
        if mm.k < 1 {
            return bad("K", "K must be >= 1".into());
        }
        if !(mm.alpha > 0.0) || !mm.alpha.is_finite() {
            return bad("alpha", format!("alpha must be > 0, got {}", mm.alpha));
        }
        if !(mm.lambda_u_max >= 0.0) || !mm.lambda_u_max.is_finite() {
            return bad("lambda_u", format!("lambda_u must be >= 0, got {}", mm.lambda_u_max));
        }
        if !(self.baseline_weight >= 0.0) || !self.baseline_weight.is_finite() {
            return bad(
                "baseline_weight",
                format!("baseline_weight must be >= 0, got {}", self.baseline_weight),
            );
        }
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return bad(
                "threshold",
                format!("threshold must be in (0, 1], got {}", self.threshold),
            );
        }
        for (name, v) in [
            ("teacher_decay", self.teacher_decay),
            ("ema_decay", self.ema_decay),
            ("weight_decay", self.weight_decay),
        ] {
            if !(0.0..1.0).contains(&v) {
                return bad(name, format!("{name} must be in [0, 1), got {v}"));
            }
        }
        if !(self.flip_prob >= 0.0 && self.flip_prob <= 1.0) {
            return bad(
                "flip_prob",
                format!("flip_prob must be in [0, 1], got {}", self.flip_prob),
            );
        }
        for (name, v) in [
            ("noise", self.noise),
            ("jitter_sigma", self.jitter_sigma),
            ("pixel_noise", self.pixel_noise),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(name, format!("{name} must be >= 0, got {v}"));
            }
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad("lr", format!("lr must be > 0, got {}", self.lr));
        }
        for (name, v) in [
            ("batch_size", self.batch_size as u64),
            ("checkpoint_every", self.checkpoint_every),
            ("report_window", self.report_window as u64),
        ] {
            if v == 0 {
                return bad(name, format!("{name} must be >= 1"));
            }
        }
        if self.seeds.is_empty() {
            return bad("seeds", "seeds must not be empty".into());
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return bad("seeds", "seeds must be distinct".into());
        }
        if self.num_classes < 2 {
            return bad("num_classes", "num_classes must be >= 2".into());
        }
        match self.dataset {
            DatasetKind::TwoMoons => {
                if self.num_classes != 2 {
                    return bad("num_classes", "two_moons has exactly 2 classes".into());
                }
                if self.train_size < 2 || !self.train_size.is_multiple_of(2) {
                    return bad("train_size", "two_moons sizes must be even and >= 2".into());
                }
                if self.test_size < 2 || !self.test_size.is_multiple_of(2) {
                    return bad("test_size", "two_moons sizes must be even and >= 2".into());
                }
            }
            DatasetKind::Shapes => {
                if self.num_classes > 4 {
                    return bad("num_classes", "shapes has at most 4 classes".into());
                }
                if self.image_side < 8 {
                    return bad("image_side", "shapes needs image_side >= 8".into());
                }
                if self.train_size == 0 || self.test_size == 0 {
                    return bad("train_size", "dataset sizes must be >= 1".into());
                }
            }
            DatasetKind::Idx { .. } => {}
        }
        if self.labeled == 0 && self.method != MethodKind::Supervised {
            return bad(
                "labeled",
                format!("method {} needs unlabeled data; set labeled > 0", self.method.name()),
            );
        }
        if !matches!(self.dataset, DatasetKind::Idx { .. }) && self.labeled > self.train_size {
            return bad(
                "labeled",
                format!("labeled ({}) exceeds train_size ({})", self.labeled, self.train_size),
            );
        }
        if let Err(e) = self.model_spec_for(self.input_shape()).validate() {
            let key = match self.model {
                ModelKind::Mlp => "hidden",
                ModelKind::ConvNet => "channels",
            };
            return bad(key, e.to_string());
        }
        Ok(())
    }

    /// Per-example input shape implied by the dataset.
    pub fn input_shape(&self) -> Vec<usize> {
        match self.dataset {
            DatasetKind::TwoMoons => vec![2],
            DatasetKind::Shapes => vec![1, self.image_side, self.image_side],
            // Resolved from the files at load time; this is the common 28×28 case.
            DatasetKind::Idx { .. } => vec![1, 28, 28],
        }
    }

    /// Model for a concrete input shape.
    pub fn model_spec_for(&self, input_shape: Vec<usize>) -> ModelSpec {
        match self.model {
            ModelKind::Mlp => {
                let d = input_shape.iter().product();
                ModelSpec::mlp(d, self.hidden.clone(), self.num_classes)
            }
            ModelKind::ConvNet => {
                let s = match input_shape[..] {
                    [c, h, w] => [c, h, w],
                    _ => [1, 0, 0],
                };
                ModelSpec::convnet(s, self.channels, self.num_classes)
            }
        }
    }

    pub fn policy(&self) -> AugmentPolicy {
        let rank = self.input_shape().len();
        match self.augment {
            AugmentKind::None => AugmentPolicy::identity_for(rank),
            AugmentKind::Jitter => AugmentPolicy::Jitter2d {
                sigma: self.jitter_sigma,
            },
            AugmentKind::FlipCrop => AugmentPolicy::ImageFlipCrop {
                pad: self.crop_pad,
                flip_prob: self.flip_prob,
                noise: self.pixel_noise,
            },
        }
    }

    pub fn training_method(&self) -> Method {
        match self.method {
            MethodKind::Supervised => Method::Supervised,
            MethodKind::MixMatch => Method::MixMatch(self.mixmatch),
            MethodKind::Baseline(b) => Method::Baseline(BaselineConfig {
                method: b,
                weight_max: self.baseline_weight,
                rampup_steps: self.mixmatch.rampup_steps,
                threshold: self.threshold,
                teacher_decay: self.teacher_decay,
                alpha: self.mixmatch.alpha,
            }),
        }
    }

    pub fn settings(&self) -> TrainSettings {
        TrainSettings {
            adam: AdamConfig {
                lr: self.lr,
                ..AdamConfig::default()
            },
            weight_decay: self.weight_decay,
            ema_decay: self.ema_decay,
            policy: self.policy(),
        }
    }

    pub fn schedule(&self) -> Schedule {
        Schedule {
            steps: self.steps,
            batch_size: self.batch_size,
            checkpoint_every: self.checkpoint_every,
        }
    }

    /// Every key with its current value, in canonical order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let mm = &self.mixmatch;
        let mut out: Vec<(&'static str, String)> = Vec::new();
        let dataset = match &self.dataset {
            DatasetKind::TwoMoons => "two_moons",
            DatasetKind::Shapes => "shapes",
            DatasetKind::Idx { .. } => "idx",
        };
        out.push(("dataset", dataset.into()));
        if let DatasetKind::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
        } = &self.dataset
        {
            for (k, p) in IDX_KEYS
                .iter()
                .zip([train_images, train_labels, test_images, test_labels])
            {
                out.push((k, p.display().to_string()));
            }
        }
        let model = match self.model {
            ModelKind::Mlp => "mlp",
            ModelKind::ConvNet => "convnet",
        };
        let augment = match self.augment {
            AugmentKind::None => "none",
            AugmentKind::Jitter => "jitter",
            AugmentKind::FlipCrop => "flip_crop",
        };
        out.extend([
            ("data_seed", self.data_seed.to_string()),
            ("train_size", self.train_size.to_string()),
            ("test_size", self.test_size.to_string()),
            ("noise", self.noise.to_string()),
            ("image_side", self.image_side.to_string()),
            ("num_classes", self.num_classes.to_string()),
            ("labeled", self.labeled.to_string()),
            ("balanced", self.balanced.to_string()),
            ("model", model.into()),
            ("hidden", join(&self.hidden)),
            ("channels", self.channels.to_string()),
            ("method", self.method.name().into()),
            ("T", mm.temperature.to_string()),
            ("K", mm.k.to_string()),
            ("alpha", mm.alpha.to_string()),
            ("lambda_u", mm.lambda_u_max.to_string()),
            ("rampup_steps", mm.rampup_steps.to_string()),
            ("mixup_mode", mm.mixup_mode.name().into()),
            ("ema_guessing", mm.ema_guessing.to_string()),
            ("baseline_weight", self.baseline_weight.to_string()),
            ("threshold", self.threshold.to_string()),
            ("teacher_decay", self.teacher_decay.to_string()),
            ("augment", augment.into()),
            ("jitter_sigma", self.jitter_sigma.to_string()),
            ("crop_pad", self.crop_pad.to_string()),
            ("flip_prob", self.flip_prob.to_string()),
            ("pixel_noise", self.pixel_noise.to_string()),
            ("steps", self.steps.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("report_window", self.report_window.to_string()),
            ("lr", self.lr.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("ema_decay", self.ema_decay.to_string()),
            ("seeds", join(&self.seeds)),
            ("output_dir", self.output_dir.display().to_string()),
        ]);
        out
    }

    /// Canonical text form; `parse(serialize(c)) == c`.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            writeln!(s, "{k} = {v}").expect("writing to a String cannot fail");
        }
        s
    }

    /// Canonical text without the keys that do not affect a run's results
    /// (`seeds`, `output_dir`); hashed to name run directories.
    pub fn run_identity(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            if k != "seeds" && k != "output_dir" {
                writeln!(s, "{k} = {v}").expect("writing to a String cannot fail");
            }
        }
        s
    }
}
