//! Comparison methods that share the model, data pipeline and trainer:
//! Π-model, Pseudo-Label, MixUp applied to SSL, and Mean Teacher.
//!
//! Each function builds only the unsupervised term. The trainer adds it to
//! the supervised cross-entropy with a ramped weight, so a zero weight
//! reproduces the supervised trainer exactly.

use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::rng::{permutation, Purpose, Streams};
use crate::ssl::{labeled_loss, mix_batch, mix_weight, MixPlan};
use crate::tensor::{Graph, Scalar, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BaselineMethod {
    PiModel,
    PseudoLabel,
    MixUp,
    MeanTeacher,
}

impl BaselineMethod {
    pub const ALL: [BaselineMethod; 4] = [
        BaselineMethod::PiModel,
        BaselineMethod::PseudoLabel,
        BaselineMethod::MixUp,
        BaselineMethod::MeanTeacher,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaselineMethod::PiModel => "pi_model",
            BaselineMethod::PseudoLabel => "pseudo_label",
            BaselineMethod::MixUp => "mixup",
            BaselineMethod::MeanTeacher => "mean_teacher",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BaselineConfig {
    pub method: BaselineMethod,
    /// Maximum weight of the unsupervised term, ramped like `lambda_u`.
    pub weight_max: f64,
    pub rampup_steps: u64,
    /// Pseudo-Label confidence threshold.
    pub threshold: f64,
    /// Mean Teacher EMA decay.
    pub teacher_decay: f64,
    /// Beta parameter for the MixUp baseline.
    pub alpha: f64,
}

impl BaselineConfig {
    pub fn new(method: BaselineMethod) -> Self {
        BaselineConfig {
            method,
            weight_max: 10.0,
            rampup_steps: 16_000,
            threshold: 0.95,
            teacher_decay: 0.999,
            alpha: 0.75,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("{}: {m}", self.method.name())));
        if !(self.weight_max >= 0.0) || !self.weight_max.is_finite() {
            return bad("weight must be >= 0");
        }
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return bad("threshold must be in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.teacher_decay) {
            return bad("teacher decay must be in [0, 1)");
        }
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return bad("alpha must be > 0");
        }
        Ok(())
    }
}

fn squared_distance_mean<F: Scalar>(g: &mut Graph<F>, a: Var, b: Var) -> Result<Var> {
    let n = g.shape(a)[0];
    let diff = g.sub(a, b)?;
    let sq = g.square(diff);
    let total = g.sum(sq);
    Ok(g.scale(total, F::one() / F::from_usize(n).expect("row count fits in a float")))
}

/// `(1/N) Σ ‖softmax(f(u₁)) − softmax(f(u₂))‖²` with gradients through both branches.
pub fn pi_model_loss<F: Scalar>(g: &mut Graph<F>, model: &ModelSpec, params: &[Var], u1: Var, u2: Var) -> Result<Var> {
    let z1 = model.forward(g, params, u1)?;
    let p1 = g.softmax(z1)?;
    let z2 = model.forward(g, params, u2)?;
    let p2 = g.softmax(z2)?;
    squared_distance_mean(g, p1, p2)
}

/// Cross-entropy against the frozen argmax on rows whose confidence reaches `threshold`.
///
/// Averaged over retained rows; a constant zero when none qualify.
pub fn pseudo_label_loss<F: Scalar>(
    g: &mut Graph<F>,
    model: &ModelSpec,
    params: &[Var],
    u: Var,
    threshold: F,
) -> Result<Var> {
    let logits = model.forward(g, params, u)?;
    let probs = g.softmax(logits)?;
    let width = g.shape(probs)[1];
    let mut keep = Vec::new();
    let mut hard = Vec::new();
    for (i, row) in g.value(probs).data().chunks(width).enumerate() {
        let (arg, &max) = row
            .iter()
            .enumerate()
            .fold((0, &row[0]), |best, (j, v)| if *v > *best.1 { (j, v) } else { best });
        if max >= threshold {
            keep.push(i);
            let mut t = vec![F::zero(); width];
            t[arg] = F::one();
            hard.extend(t);
        }
    }
    if keep.is_empty() {
        return Ok(g.constant(Tensor::scalar(F::zero())));
    }
    let kept = g.gather_rows(logits, &keep)?;
    let targets = g.constant(Tensor::matrix(keep.len(), width, hard)?);
    labeled_loss(g, kept, targets)
}

/// MixUp on labeled and unlabeled data with `K = 1`, unsharpened frozen
/// predictions as unlabeled targets, and the unmodified weight `λ`.
///
/// The pool `concat(x, u)` is shuffled with `(MixShuffle, step, 0)` and row
/// `i` draws `λ` from `(MixWeights, step, i)`. Returns the sum of the
/// cross-entropies on the mixed labeled and mixed unlabeled halves.
#[allow(clippy::too_many_arguments)]
pub fn mixup_ssl_loss<F: Scalar>(
    g: &mut Graph<F>,
    model: &ModelSpec,
    params: &[Var],
    x: Var,
    x_targets: Var,
    u: Var,
    alpha: f64,
    streams: &Streams,
    step: u64,
) -> Result<Var> {
    let b = g.shape(x)[0];
    let guess_logits = model.forward(g, params, u)?;
    let guess_probs = g.softmax(guess_logits)?;
    let guesses = g.stop_gradient(guess_probs);
    let n = b + g.shape(u)[0];
    let partners = permutation(n, &mut streams.stream(Purpose::MixShuffle, step, 0));
    let weights = (0..n)
        .map(|i| mix_weight(alpha, false, &mut streams.stream(Purpose::MixWeights, step, i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let pair = mix_batch(g, x, x_targets, u, guesses, 1, MixPlan { partners, weights })?;
    let inputs = g.concat(&[pair.x_features, pair.u_features])?;
    let logits = model.forward(g, params, inputs)?;
    let lx = g.slice_rows(logits, 0, b)?;
    let lu = g.slice_rows(logits, b, n)?;
    let loss_x = labeled_loss(g, lx, pair.x_targets)?;
    let loss_u = labeled_loss(g, lu, pair.u_targets)?;
    g.add(loss_x, loss_u)
}

/// `(1/N) Σ ‖softmax(f_student(u₁)) − softmax(f_teacher(u₂))‖²`; the teacher branch is frozen.
pub fn mean_teacher_loss<F: Scalar>(
    g: &mut Graph<F>,
    model: &ModelSpec,
    student: &[Var],
    teacher: &[Var],
    u1: Var,
    u2: Var,
) -> Result<Var> {
    let zs = model.forward(g, student, u1)?;
    let ps = g.softmax(zs)?;
    let zt = model.forward(g, teacher, u2)?;
    let pt = g.softmax(zt)?;
    let frozen = g.stop_gradient(pt);
    squared_distance_mean(g, ps, frozen)
}
