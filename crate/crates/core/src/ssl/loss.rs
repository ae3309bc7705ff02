use super::transform::BatchPair;
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::tensor::{Graph, Scalar, Var};

/// Mean cross-entropy `−(1/N) Σ_i Σ_c t_ic · log softmax(z_i)_c` against soft targets.
pub fn labeled_loss<F: Scalar>(g: &mut Graph<F>, logits: Var, targets: Var) -> Result<Var> {
    if g.shape(logits) != g.shape(targets) || g.shape(logits).len() != 2 {
        return Err(Error::shape("labeled_loss", g.shape(logits), g.shape(targets)));
    }
    let n = g.shape(logits)[0];
    let log_p = g.log_softmax(logits)?;
    let weighted = g.mul(targets, log_p)?;
    let total = g.sum(weighted);
    Ok(g.scale(total, -F::one() / F::from_usize(n).expect("row count fits in a float")))
}

/// Brier score `(1/(L·N)) Σ_i ‖t_i − softmax(z_i)‖²`.
pub fn unlabeled_loss<F: Scalar>(g: &mut Graph<F>, logits: Var, targets: Var) -> Result<Var> {
    if g.shape(logits) != g.shape(targets) || g.shape(logits).len() != 2 {
        return Err(Error::shape("unlabeled_loss", g.shape(logits), g.shape(targets)));
    }
    let p = g.softmax(logits)?;
    let diff = g.sub(p, targets)?;
    let sq = g.square(diff);
    Ok(g.mean(sq))
}

/// `loss_x + lambda_u · loss_u`.
pub fn combined_loss<F: Scalar>(g: &mut Graph<F>, loss_x: Var, loss_u: Var, lambda_u: F) -> Result<Var> {
    let weighted = g.scale(loss_u, lambda_u);
    g.add(loss_x, weighted)
}

/// Linear ramp `max · min(1, step / rampup_steps)`; zero ramp means constant `max`.
pub fn lambda_schedule(step: u64, lambda_max: f64, rampup_steps: u64) -> f64 {
    if rampup_steps == 0 || step >= rampup_steps {
        return lambda_max;
    }
    lambda_max * (step as f64 / rampup_steps as f64)
}

#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub loss_x: Var,
    pub loss_u: Var,
    pub total: Var,
}

/// Runs the model on `X′ ∪ U′` in one pass and builds both terms and their sum.
pub fn mixmatch_loss<F: Scalar>(
    g: &mut Graph<F>,
    model: &ModelSpec,
    params: &[Var],
    pair: &BatchPair,
    lambda_u: F,
) -> Result<LossTerms> {
    let b = g.shape(pair.x_features)[0];
    let n = b + g.shape(pair.u_features)[0];
    let inputs = g.concat(&[pair.x_features, pair.u_features])?;
    let logits = model.forward(g, params, inputs)?;
    let logits_x = g.slice_rows(logits, 0, b)?;
    let logits_u = g.slice_rows(logits, b, n)?;
    let loss_x = labeled_loss(g, logits_x, pair.x_targets)?;
    let loss_u = unlabeled_loss(g, logits_u, pair.u_targets)?;
    let total = combined_loss(g, loss_x, loss_u, lambda_u)?;
    Ok(LossTerms { loss_x, loss_u, total })
}
