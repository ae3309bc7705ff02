//! The MixMatch transform: label guessing with sharpening, order-preserving
//! MixUp, the labeled/unlabeled loss terms and the unsupervised ramp-up.

mod loss;
mod mixup;
mod sharpen;
mod transform;

pub use loss::{combined_loss, labeled_loss, lambda_schedule, mixmatch_loss, unlabeled_loss, LossTerms};
pub use mixup::{mix_weight, mixup_pair, mixup_with_weight, sample_beta, TargetedExample};
pub use sharpen::sharpen;
pub(crate) use transform::one_hot;
pub use transform::{guess_labels, mix_batch, mix_plan, mixmatch_transform, BatchPair, MixPlan, TransformInputs};

use crate::error::{Error, Result};

/// Which MixUp pairings the transform performs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MixupMode {
    /// Mix every entry with a partner from the shuffled union of both pools.
    Full,
    /// Mix labeled entries with shuffled labeled entries; unlabeled entries pass through.
    LabeledOnly,
    /// Mix unlabeled entries with shuffled unlabeled entries; labeled entries pass through.
    UnlabeledOnly,
    /// Mix each pool only within itself.
    Separate,
    /// No mixing.
    Off,
}

impl MixupMode {
    pub const ALL: [MixupMode; 5] = [
        MixupMode::Full,
        MixupMode::LabeledOnly,
        MixupMode::UnlabeledOnly,
        MixupMode::Separate,
        MixupMode::Off,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MixupMode::Full => "full",
            MixupMode::LabeledOnly => "labeled_only",
            MixupMode::UnlabeledOnly => "unlabeled_only",
            MixupMode::Separate => "separate",
            MixupMode::Off => "off",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }
}

/// MixMatch hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MixMatchConfig {
    pub temperature: f64,
    /// Augmentations per unlabeled example.
    pub k: usize,
    pub alpha: f64,
    pub lambda_u_max: f64,
    pub rampup_steps: u64,
    pub mixup_mode: MixupMode,
    /// Guess labels with the EMA parameters instead of the live ones.
    pub ema_guessing: bool,
}

impl Default for MixMatchConfig {
    fn default() -> Self {
        MixMatchConfig {
            temperature: 0.5,
            k: 2,
            alpha: 0.75,
            lambda_u_max: 100.0,
            rampup_steps: 16_000,
            mixup_mode: MixupMode::Full,
            ema_guessing: false,
        }
    }
}

impl MixMatchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("mixmatch: {m}")));
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return bad("T must be > 0");
        }
        if self.k < 1 {
            return bad("K must be >= 1");
        }
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return bad("alpha must be > 0");
        }
        if !(self.lambda_u_max >= 0.0) || !self.lambda_u_max.is_finite() {
            return bad("lambda_u must be >= 0");
        }
        Ok(())
    }
}
