//! The optimization loop: one method-specific loss per step, Adam,
//! decoupled weight decay, parameter EMA, and periodic EMA evaluation.

mod optim;
mod report;

pub use optim::{adam_step, weight_decay_step, AdamConfig, OptimizerState};
pub use report::{report_median, CheckpointLog, MetricsRow};

use crate::baselines::{
    mean_teacher_loss, mixup_ssl_loss, pi_model_loss, pseudo_label_loss, BaselineConfig, BaselineMethod,
};
use crate::data::{augment_batch, AugmentPolicy, BatchSchedule, Dataset, Example, LabeledSet, UnlabeledSet};
use crate::error::{Error, Result};
use crate::model::{ema_update, ModelSpec, ParamSet};
use crate::rng::{Purpose, Streams};
use crate::ssl::{labeled_loss, lambda_schedule, mixmatch_loss, mixmatch_transform, MixMatchConfig, TransformInputs};
use crate::tensor::{Graph, Tensor, Var};

/// What a training step optimizes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Method {
    /// Cross-entropy on augmented labeled data only.
    Supervised,
    MixMatch(MixMatchConfig),
    Baseline(BaselineConfig),
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Supervised => "supervised",
            Method::MixMatch(_) => "mixmatch",
            Method::Baseline(b) => b.method.name(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Method::Supervised => Ok(()),
            Method::MixMatch(c) => c.validate(),
            Method::Baseline(b) => b.validate(),
        }
    }

    fn uses_unlabeled(&self) -> bool {
        !matches!(self, Method::Supervised)
    }

    /// Weight of the unsupervised term at `step`.
    pub fn unsupervised_weight(&self, step: u64) -> f64 {
        match self {
            Method::Supervised => 0.0,
            Method::MixMatch(c) => lambda_schedule(step, c.lambda_u_max, c.rampup_steps),
            Method::Baseline(b) => lambda_schedule(step, b.weight_max, b.rampup_steps),
        }
    }
}

/// Optimizer and regularization settings shared by every method.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainSettings {
    pub adam: AdamConfig,
    pub weight_decay: f64,
    pub ema_decay: f64,
    pub policy: AugmentPolicy,
}

impl TrainSettings {
    pub fn new(policy: AugmentPolicy) -> Self {
        TrainSettings {
            adam: AdamConfig::default(),
            weight_decay: 0.0004,
            ema_decay: 0.999,
            policy,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.adam.validate()?;
        if !(0.0..1.0).contains(&self.weight_decay) {
            return Err(Error::InvalidArgument(format!(
                "weight decay must be in [0,1), got {}",
                self.weight_decay
            )));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return Err(Error::InvalidArgument(format!(
                "ema decay must be in [0,1), got {}",
                self.ema_decay
            )));
        }
        Ok(())
    }
}

/// Everything that evolves during training.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub params: ParamSet<f32>,
    /// Evaluation copy, also used for EMA label guessing.
    pub ema: ParamSet<f32>,
    /// Mean Teacher's teacher, tracked with its own decay.
    pub teacher: Option<ParamSet<f32>>,
    pub optimizer: OptimizerState<f32>,
    /// Number of completed steps.
    pub step: u64,
    pub seed: u64,
}

impl TrainState {
    pub fn new(model: &ModelSpec, method: &Method, settings: &TrainSettings, seed: u64) -> Result<Self> {
        model.validate()?;
        method.validate()?;
        settings.validate()?;
        let params = model.init_params::<f32>(seed)?;
        let teacher = match method {
            Method::Baseline(b) if b.method == BaselineMethod::MeanTeacher => Some(params.clone()),
            _ => None,
        };
        Ok(TrainState {
            ema: params.clone(),
            teacher,
            optimizer: OptimizerState::new(&params, settings.adam)?,
            params,
            step: 0,
            seed,
        })
    }
}

/// Loss values of one step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub lambda_u: f64,
    pub loss_x: f64,
    pub loss_u: f64,
    pub total: f64,
}

fn features<'a>(examples: &[&'a Example]) -> Vec<&'a Tensor<f32>> {
    examples.iter().map(|e| &e.features).collect()
}

/// One optimization step on a labeled batch `x` and an unlabeled batch `u`.
///
/// Builds the method's loss, differentiates it, then applies Adam, weight
/// decay and the EMA update(s) in that order. Every random draw is keyed by
/// `(state.seed, step)`.
pub fn train_step(
    state: &mut TrainState,
    model: &ModelSpec,
    method: &Method,
    settings: &TrainSettings,
    x: &[&Example],
    u: &[&Example],
) -> Result<StepStats> {
    if x.is_empty() {
        return Err(Error::InvalidArgument("train_step: empty labeled batch".into()));
    }
    if method.uses_unlabeled() && u.len() != x.len() {
        return Err(Error::InvalidArgument(format!(
            "train_step: {} needs equal batches, got {} labeled and {} unlabeled",
            method.name(),
            x.len(),
            u.len()
        )));
    }
    let step = state.step;
    let streams = Streams::new(state.seed);
    let policy = &settings.policy;
    let lambda = method.unsupervised_weight(step);
    let mut g = Graph::<f32>::new();
    let vars = state.params.bind(&mut g);

    let (loss_x, loss_u, total) = match method {
        Method::MixMatch(config) => {
            let inputs = TransformInputs::augment(x, u, model.num_classes, config.k, policy, &streams, step)?;
            let guess_params = if config.ema_guessing {
                state.ema.bind_constants(&mut g)
            } else {
                state.params.bind_constants(&mut g)
            };
            let pair = mixmatch_transform(&mut g, model, &guess_params, &inputs, config, &streams, step)?;
            let terms = mixmatch_loss(&mut g, model, &vars, &pair, lambda as f32)?;
            (terms.loss_x, terms.loss_u, terms.total)
        }
        _ => {
            let x_aug = augment_batch(&features(x), policy, &streams, Purpose::AugmentLabeled, step, 0)?;
            let targets = crate::ssl::one_hot::<f32>(x, model.num_classes)?;
            let xv = g.constant(x_aug);
            let tv = g.constant(targets);
            let logits = model.forward(&mut g, &vars, xv)?;
            let loss_x = labeled_loss(&mut g, logits, tv)?;
            match method {
                Method::Baseline(b) => {
                    let loss_u = baseline_term(&mut g, state, model, b, &vars, xv, tv, u, policy, &streams, step)?;
                    let weighted = g.scale(loss_u, lambda as f32);
                    let total = g.add(loss_x, weighted)?;
                    (loss_x, loss_u, total)
                }
                _ => {
                    let zero = g.constant(Tensor::scalar(0.0));
                    (loss_x, zero, loss_x)
                }
            }
        }
    };

    let stats = StepStats {
        lambda_u: lambda,
        loss_x: g.value(loss_x).item() as f64,
        loss_u: g.value(loss_u).item() as f64,
        total: g.value(total).item() as f64,
    };
    if !stats.total.is_finite() {
        return Err(Error::NonFiniteLoss { step });
    }
    g.backward(total)?;
    let grads: Vec<Tensor<f32>> = vars
        .iter()
        .zip(state.params.iter())
        .map(|(&v, p)| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(p.value.shape())))
        .collect();
    drop(g);
    adam_step(&mut state.params, &grads, &mut state.optimizer)?;
    weight_decay_step(&mut state.params, settings.weight_decay)?;
    ema_update(&mut state.ema, &state.params, settings.ema_decay as f32)?;
    if let (Some(teacher), Method::Baseline(b)) = (state.teacher.as_mut(), method) {
        ema_update(teacher, &state.params, b.teacher_decay as f32)?;
    }
    state.step += 1;
    Ok(stats)
}

#[allow(clippy::too_many_arguments)]
fn baseline_term(
    g: &mut Graph<f32>,
    state: &TrainState,
    model: &ModelSpec,
    config: &BaselineConfig,
    vars: &[Var],
    x: Var,
    x_targets: Var,
    u: &[&Example],
    policy: &AugmentPolicy,
    streams: &Streams,
    step: u64,
) -> Result<Var> {
    let u_feats = features(u);
    let u1 = augment_batch(&u_feats, policy, streams, Purpose::AugmentUnlabeled, step, 0)?;
    let u1 = g.constant(u1);
    let second = |g: &mut Graph<f32>| -> Result<Var> {
        let u2 = augment_batch(&u_feats, policy, streams, Purpose::BaselineAugment, step, 0)?;
        Ok(g.constant(u2))
    };
    match config.method {
        BaselineMethod::PiModel => {
            let u2 = second(g)?;
            pi_model_loss(g, model, vars, u1, u2)
        }
        BaselineMethod::PseudoLabel => pseudo_label_loss(g, model, vars, u1, config.threshold as f32),
        BaselineMethod::MixUp => mixup_ssl_loss(g, model, vars, x, x_targets, u1, config.alpha, streams, step),
        BaselineMethod::MeanTeacher => {
            let u2 = second(g)?;
            let teacher = state.teacher.as_ref().ok_or_else(|| {
                Error::InvalidArgument("mean_teacher: training state has no teacher parameters".into())
            })?;
            let teacher = teacher.bind_constants(g);
            mean_teacher_loss(g, model, vars, &teacher, u1, u2)
        }
    }
}

/// Predicted class per example; ties go to the lowest index.
pub fn predict_labels(model: &ModelSpec, params: &ParamSet<f32>, examples: &[Example]) -> Result<Vec<usize>> {
    const CHUNK: usize = 512;
    let mut out = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(CHUNK) {
        let items: Vec<Tensor<f32>> = chunk.iter().map(|e| e.features.clone()).collect();
        let probs = model.predict(params, &Tensor::stack(&items)?)?;
        for row in probs.data().chunks(model.num_classes) {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            out.push(best);
        }
    }
    Ok(out)
}

/// Fraction of misclassified test examples.
pub fn evaluate(model: &ModelSpec, params: &ParamSet<f32>, test: &Dataset) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::InvalidArgument("evaluate: empty test set".into()));
    }
    let predicted = predict_labels(model, params, &test.examples)?;
    let wrong = predicted
        .iter()
        .zip(&test.examples)
        .filter(|(p, e)| Some(**p) != e.label)
        .count();
    Ok(wrong as f64 / test.len() as f64)
}

/// Data for one run.
#[derive(Clone, Copy, Debug)]
pub struct TrainingData<'a> {
    pub labeled: &'a LabeledSet,
    pub unlabeled: &'a UnlabeledSet,
    pub test: &'a Dataset,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Schedule {
    pub steps: u64,
    pub batch_size: usize,
    /// Checkpoint cadence in labeled training samples.
    pub checkpoint_every: u64,
}

/// Passed to the checkpoint observer after each evaluation.
#[derive(Debug)]
pub struct CheckpointEvent<'a> {
    pub row: &'a MetricsRow,
    pub state: &'a TrainState,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub log: CheckpointLog,
    pub metrics: Vec<MetricsRow>,
    pub state: TrainState,
}

fn crosses_checkpoint(step: u64, batch: u64, every: u64) -> bool {
    (step * batch) / every > ((step - 1) * batch) / every
}

/// Runs `schedule.steps` training steps, evaluating the EMA parameters at
/// step 0 and whenever the number of labeled samples seen crosses a
/// multiple of `checkpoint_every` (and after the final step).
///
/// `on_checkpoint` sees each evaluation as it happens, for persistence.
pub fn run_training(
    model: &ModelSpec,
    method: &Method,
    settings: &TrainSettings,
    data: TrainingData<'_>,
    schedule: &Schedule,
    seed: u64,
    on_checkpoint: &mut dyn FnMut(&CheckpointEvent<'_>) -> Result<()>,
) -> Result<TrainOutcome> {
    if schedule.checkpoint_every == 0 {
        return Err(Error::InvalidArgument("checkpoint_every must be >= 1".into()));
    }
    if method.uses_unlabeled() && data.unlabeled.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{} needs unlabeled data",
            method.name()
        )));
    }
    // The supervised method draws the same schedule so its labeled batches
    // match every other method's.
    let batches = BatchSchedule::new(data.labeled.len(), data.unlabeled.len(), schedule.batch_size, seed)?;
    let mut state = TrainState::new(model, method, settings, seed)?;
    let mut log = CheckpointLog::default();
    let mut metrics = Vec::new();

    let mut record = |state: &TrainState, interval: &[StepStats], log: &mut CheckpointLog| -> Result<MetricsRow> {
        let error = evaluate(model, &state.ema, data.test)?;
        log.push(state.step, error)?;
        let row = MetricsRow::from_interval(state.step, method.unsupervised_weight(state.step), interval, error);
        on_checkpoint(&CheckpointEvent { row: &row, state })?;
        Ok(row)
    };

    metrics.push(record(&state, &[], &mut log)?);
    let mut interval = Vec::new();
    let b = schedule.batch_size as u64;
    for batch in batches.stream().take(schedule.steps as usize) {
        let x: Vec<&Example> = batch.labeled.iter().map(|&i| &data.labeled.examples[i]).collect();
        let u: Vec<&Example> = batch.unlabeled.iter().map(|&i| &data.unlabeled.examples[i]).collect();
        interval.push(train_step(&mut state, model, method, settings, &x, &u)?);
        let done = state.step == schedule.steps;
        if done || crosses_checkpoint(state.step, b, schedule.checkpoint_every) {
            metrics.push(record(&state, &interval, &mut log)?);
            interval.clear();
        }
    }
    Ok(TrainOutcome { log, metrics, state })
}
