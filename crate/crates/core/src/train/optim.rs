use crate::error::{Error, Result};
use crate::model::{is_bias, ParamSet};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.002,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("adam: invalid settings {self:?}")))
        }
    }
}

/// First and second moment buffers plus the update count.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<F = f32> {
    pub config: AdamConfig,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
    step: u64,
}

impl<F: Scalar> OptimizerState<F> {
    pub fn new(params: &ParamSet<F>, config: AdamConfig) -> Result<Self> {
        config.validate()?;
        let zeros = || params.iter().map(|p| vec![F::zero(); p.value.len()]).collect();
        Ok(OptimizerState {
            config,
            m: zeros(),
            v: zeros(),
            step: 0,
        })
    }

    /// Number of updates applied so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Vec<F>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Vec<F>] {
        &self.v
    }
}

/// One bias-corrected Adam update. `grads` follows the parameter order.
///
/// Fails without touching anything if a gradient is missing its shape or
/// holds a non-finite value.
pub fn adam_step<F: Scalar>(
    params: &mut ParamSet<F>,
    grads: &[Tensor<F>],
    state: &mut OptimizerState<F>,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::StructureMismatch(format!(
            "{} parameters, {} gradients",
            params.len(),
            grads.len()
        )));
    }
    for (p, gr) in params.iter().zip(grads) {
        if p.value.shape() != gr.shape() {
            return Err(Error::shape("adam_step", p.value.shape(), gr.shape()));
        }
        if !gr.all_finite() {
            return Err(Error::NonFiniteGradient {
                step: state.step,
                param: p.name.clone(),
            });
        }
    }
    state.step += 1;
    let c = state.config;
    let t = state.step as i32;
    let b1 = F::from_f64_lossy(c.beta1);
    let b2 = F::from_f64_lossy(c.beta2);
    let one = F::one();
    let eps = F::from_f64_lossy(c.eps);
    let step_size = F::from_f64_lossy(c.lr / (1.0 - c.beta1.powi(t)));
    let bias2 = F::from_f64_lossy(1.0 - c.beta2.powi(t));
    for (((p, gr), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        for (((w, &g), mi), vi) in p
            .value
            .data_mut()
            .iter_mut()
            .zip(gr.data())
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *mi = b1 * *mi + (one - b1) * g;
            *vi = b2 * *vi + (one - b2) * g * g;
            *w = *w - step_size * *mi / ((*vi / bias2).sqrt() + eps);
        }
    }
    Ok(())
}

/// Decoupled decay: every non-bias value is multiplied by `1 − rate`.
pub fn weight_decay_step<F: Scalar>(params: &mut ParamSet<F>, rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!(
            "weight decay must be in [0,1), got {rate}"
        )));
    }
    if rate == 0.0 {
        return Ok(());
    }
    let keep = F::from_f64_lossy(1.0 - rate);
    for p in params.iter_mut().filter(|p| !is_bias(&p.name)) {
        p.value.data_mut().iter_mut().for_each(|w| *w = *w * keep);
    }
    Ok(())
}
