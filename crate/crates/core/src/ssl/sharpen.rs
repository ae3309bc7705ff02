use crate::error::{Error, Result};
use crate::tensor::kernels::sharpen_row;
use crate::tensor::Scalar;

/// Temperature sharpening `p_i^(1/T) / Σ_j p_j^(1/T)`.
///
/// Evaluated in the log domain so small temperatures do not underflow; zero
/// entries stay zero. `T = 1` returns `p` unchanged. The `T → 0` limit (a
/// one-hot at the argmax) is not computed; `T` must be positive.
pub fn sharpen<F: Scalar>(p: &[F], temperature: F) -> Result<Vec<F>> {
    if !(temperature > F::zero()) || !temperature.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "sharpen: temperature must be > 0, got {temperature}"
        )));
    }
    if p.is_empty() || p.iter().any(|&v| !(v >= F::zero()) || !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "sharpen: input must be a non-empty vector of finite non-negative values".into(),
        ));
    }
    let mut out = vec![F::zero(); p.len()];
    sharpen_row(p, F::one() / temperature, &mut out);
    Ok(out)
}
