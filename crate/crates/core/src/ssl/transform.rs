use super::mixup::{mix_weight, TargetedExample};
use super::{MixMatchConfig, MixupMode};
use crate::data::{augment_batch, AugmentPolicy, Example};
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::rng::{permutation, Purpose, Streams};
use crate::tensor::{Graph, Scalar, Tensor, Var};

/// Augmented inputs for one MixMatch step.
///
/// `u` holds `K·B` rows ordered `b·K + k`: augmentation `k` of unlabeled
/// example `b`. The same rows are used for guessing and as `Û` entries.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformInputs<F = f32> {
    pub x: Tensor<F>,
    /// One-hot labels, `[B, L]`.
    pub x_targets: Tensor<F>,
    pub u: Tensor<F>,
    pub k: usize,
}

impl TransformInputs<f32> {
    /// Draws one augmentation per labeled example from `(AugmentLabeled, step, b)`
    /// and `K` per unlabeled example from `(AugmentUnlabeled, step, b·K + k)`.
    #[allow(clippy::too_many_arguments)]
    pub fn augment(
        x: &[&Example],
        u: &[&Example],
        num_classes: usize,
        k: usize,
        policy: &AugmentPolicy,
        streams: &Streams,
        step: u64,
    ) -> Result<Self> {
        if x.len() != u.len() || x.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "mixmatch: need equal non-empty batches, got {} labeled and {} unlabeled",
                x.len(),
                u.len()
            )));
        }
        if k == 0 {
            return Err(Error::InvalidArgument("mixmatch: K must be >= 1".into()));
        }
        let xs: Vec<&Tensor<f32>> = x.iter().map(|e| &e.features).collect();
        let x_aug = augment_batch(&xs, policy, streams, Purpose::AugmentLabeled, step, 0)?;
        let us: Vec<&Tensor<f32>> = u.iter().flat_map(|e| std::iter::repeat_n(&e.features, k)).collect();
        let u_aug = augment_batch(&us, policy, streams, Purpose::AugmentUnlabeled, step, 0)?;
        Ok(TransformInputs {
            x: x_aug,
            x_targets: one_hot(x, num_classes)?,
            u: u_aug,
            k,
        })
    }
}

impl<F: Scalar> TransformInputs<F> {
    pub fn batch_size(&self) -> usize {
        self.x.rows()
    }

    pub fn cast<G: Scalar>(&self) -> TransformInputs<G> {
        TransformInputs {
            x: self.x.cast(),
            x_targets: self.x_targets.cast(),
            u: self.u.cast(),
            k: self.k,
        }
    }
}

/// One-hot `[B, L]` targets for labeled examples.
pub(crate) fn one_hot<F: Scalar>(x: &[&Example], num_classes: usize) -> Result<Tensor<F>> {
    let mut data = vec![F::zero(); x.len() * num_classes];
    for (i, e) in x.iter().enumerate() {
        let label = e
            .label
            .filter(|&l| l < num_classes)
            .ok_or_else(|| Error::InvalidArgument(format!("mixmatch: labeled example {i} has no valid label")))?;
        data[i * num_classes + label] = F::one();
    }
    Tensor::matrix(x.len(), num_classes, data)
}

/// Partner and weight for every row of the pool `concat(X̂, Û)`.
///
/// Row `i` becomes `weights[i]·pool[i] + (1 − weights[i])·pool[partners[i]]`.
/// Rows that are not mixed have themselves as partner and weight 1.
#[derive(Clone, Debug, PartialEq)]
pub struct MixPlan {
    pub partners: Vec<usize>,
    pub weights: Vec<f64>,
}

impl MixPlan {
    fn identity(n: usize) -> Self {
        MixPlan {
            partners: (0..n).collect(),
            weights: vec![1.0; n],
        }
    }

    fn is_identity(&self) -> bool {
        self.weights.iter().all(|&w| w == 1.0) && self.partners.iter().enumerate().all(|(i, &p)| i == p)
    }
}

/// Derives the pairing and weights for a pool of `B` labeled and `K·B` unlabeled rows.
///
/// `Full` shuffles the whole pool with `(MixShuffle, step, 0)`, so `W_i` is
/// `pool[partners[i]]`. The labeled pool alone uses `(MixShuffle, step, 1)`
/// and the unlabeled pool alone `(MixShuffle, step, 2)`. Row `i` draws its
/// weight from `(MixWeights, step, i)`.
pub fn mix_plan(mode: MixupMode, b: usize, k: usize, alpha: f64, streams: &Streams, step: u64) -> Result<MixPlan> {
    let n = b + k * b;
    let mut plan = MixPlan::identity(n);
    let shuffle = |minor: u64, len: usize| permutation(len, &mut streams.stream(Purpose::MixShuffle, step, minor));
    let (mix_x, mix_u) = match mode {
        MixupMode::Full => {
            plan.partners = shuffle(0, n);
            (true, true)
        }
        MixupMode::LabeledOnly => (true, false),
        MixupMode::UnlabeledOnly => (false, true),
        MixupMode::Separate => (true, true),
        MixupMode::Off => (false, false),
    };
    if mode != MixupMode::Full {
        if mix_x {
            plan.partners[..b].copy_from_slice(&shuffle(1, b));
        }
        if mix_u {
            for (dst, p) in plan.partners[b..].iter_mut().zip(shuffle(2, k * b)) {
                *dst = b + p;
            }
        }
    }
    let mixed = |i: usize| if i < b { mix_x } else { mix_u };
    for i in 0..n {
        if mixed(i) {
            plan.weights[i] = mix_weight(alpha, true, &mut streams.stream(Purpose::MixWeights, step, i as u64))?;
        }
    }
    Ok(plan)
}

/// Sharpened average prediction over the `K` augmentations of each example.
///
/// `u` has rows ordered `b·K + k`; the result is `[B, L]` and carries no gradient.
pub fn guess_labels<F: Scalar>(
    g: &mut Graph<F>,
    model: &ModelSpec,
    params: &[Var],
    u: Var,
    k: usize,
    temperature: F,
) -> Result<Var> {
    let rows = g.shape(u).first().copied().unwrap_or(0);
    if k == 0 || rows == 0 || rows % k != 0 {
        return Err(Error::InvalidArgument(format!(
            "guess_labels: {rows} rows do not split into K = {k} augmentations"
        )));
    }
    let b = rows / k;
    let logits = model.forward(g, params, u)?;
    let probs = g.softmax(logits)?;
    let mut total = None;
    for j in 0..k {
        let idx: Vec<usize> = (0..b).map(|i| i * k + j).collect();
        let part = g.gather_rows(probs, &idx)?;
        total = Some(match total {
            None => part,
            Some(t) => g.add(t, part)?,
        });
    }
    let total = total.expect("k >= 1");
    let mean = if k == 1 {
        total
    } else {
        g.scale(total, F::one() / F::from_usize(k).expect("k fits in a float"))
    };
    let sharp = g.sharpen(mean, temperature)?;
    Ok(g.stop_gradient(sharp))
}

/// The mixed batch `(X′, U′)` as graph values.
#[derive(Clone, Debug)]
pub struct BatchPair {
    pub x_features: Var,
    pub x_targets: Var,
    pub u_features: Var,
    pub u_targets: Var,
    /// Pre-mix guesses, `[B, L]`.
    pub guesses: Var,
    pub plan: MixPlan,
}

impl BatchPair {
    /// Materializes `X′` and `U′` as individual examples.
    pub fn to_examples<F: Scalar>(&self, g: &Graph<F>) -> (Vec<TargetedExample<F>>, Vec<TargetedExample<F>>) {
        let collect = |f: Var, t: Var| {
            let (fv, tv) = (g.value(f), g.value(t));
            (0..fv.rows())
                .map(|i| TargetedExample {
                    features: Tensor::from_parts(fv.shape()[1..].to_vec(), fv.row(i).to_vec()),
                    target: tv.row(i).to_vec(),
                })
                .collect()
        };
        (
            collect(self.x_features, self.x_targets),
            collect(self.u_features, self.u_targets),
        )
    }
}

fn apply_plan<F: Scalar>(g: &mut Graph<F>, pool: Var, plan: &MixPlan) -> Result<Var> {
    if plan.is_identity() {
        return Ok(pool);
    }
    let w: Vec<F> = plan.weights.iter().map(|&w| F::from_f64_lossy(w)).collect();
    let v: Vec<F> = plan.weights.iter().map(|&w| F::from_f64_lossy(1.0 - w)).collect();
    let own = g.scale_rows(pool, &w)?;
    let partners = g.gather_rows(pool, &plan.partners)?;
    let other = g.scale_rows(partners, &v)?;
    g.add(own, other)
}

/// Lines after guessing: attach guesses to `Û`, pool, and mix according to `plan`.
///
/// `guesses` may be any `[B, L]` value; the transform does not add a
/// gradient stop of its own.
pub fn mix_batch<F: Scalar>(
    g: &mut Graph<F>,
    x: Var,
    x_targets: Var,
    u: Var,
    guesses: Var,
    k: usize,
    plan: MixPlan,
) -> Result<BatchPair> {
    let b = g.shape(x)[0];
    if g.shape(u)[0] != k * b || g.shape(guesses)[0] != b || g.shape(x_targets)[0] != b {
        return Err(Error::InvalidArgument(format!(
            "mixmatch: inconsistent batch sizes (x {:?}, u {:?}, guesses {:?}, K = {k})",
            g.shape(x),
            g.shape(u),
            g.shape(guesses)
        )));
    }
    if plan.partners.len() != b + k * b || plan.weights.len() != b + k * b {
        return Err(Error::InvalidArgument(
            "mixmatch: mix plan does not cover the pool".into(),
        ));
    }
    let repeat: Vec<usize> = (0..b * k).map(|r| r / k).collect();
    let u_targets = g.gather_rows(guesses, &repeat)?;
    let features = g.concat(&[x, u])?;
    let targets = g.concat(&[x_targets, u_targets])?;
    let mixed_features = apply_plan(g, features, &plan)?;
    let mixed_targets = apply_plan(g, targets, &plan)?;
    let n = b + k * b;
    Ok(BatchPair {
        x_features: g.slice_rows(mixed_features, 0, b)?,
        x_targets: g.slice_rows(mixed_targets, 0, b)?,
        u_features: g.slice_rows(mixed_features, b, n)?,
        u_targets: g.slice_rows(mixed_targets, b, n)?,
        guesses,
        plan,
    })
}

/// The full MixMatch transform on pre-augmented inputs.
///
/// `guess_params` are the parameters used for label guessing: the live
/// parameters, or the EMA copy for the EMA-guessing variant.
#[allow(clippy::too_many_arguments)]
pub fn mixmatch_transform<F: Scalar>(
    g: &mut Graph<F>,
    model: &ModelSpec,
    guess_params: &[Var],
    inputs: &TransformInputs<F>,
    config: &MixMatchConfig,
    streams: &Streams,
    step: u64,
) -> Result<BatchPair> {
    config.validate()?;
    let b = inputs.batch_size();
    if inputs.k != config.k || inputs.u.rows() != config.k * b {
        return Err(Error::InvalidArgument(format!(
            "mixmatch: expected {} unlabeled rows for K = {}, got {}",
            config.k * b,
            config.k,
            inputs.u.rows()
        )));
    }
    let x = g.constant(inputs.x.clone());
    let x_targets = g.constant(inputs.x_targets.clone());
    let u = g.constant(inputs.u.clone());
    let guesses = guess_labels(
        g,
        model,
        guess_params,
        u,
        config.k,
        F::from_f64_lossy(config.temperature),
    )?;
    let plan = mix_plan(config.mixup_mode, b, config.k, config.alpha, streams, step)?;
    mix_batch(g, x, x_targets, u, guesses, config.k, plan)
}
