use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// An input paired with a (possibly soft) class distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetedExample<F = f32> {
    pub features: Tensor<F>,
    pub target: Vec<F>,
}

/// `Beta(alpha, alpha)` as `X / (X + Y)` with `X, Y ~ Gamma(alpha, 1)`.
///
/// Each draw is taken in log space as `ln G + ln(U) / alpha` with
/// `G ~ Gamma(alpha + 1, 1)`, so small alpha cannot underflow both draws.
pub fn sample_beta<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> Result<f64> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!("mixup: alpha must be > 0, got {alpha}")));
    }
    let gamma = Gamma::new(alpha + 1.0, 1.0).expect("finite positive shape");
    let mut log_gamma = || {
        let g: f64 = gamma.sample(rng);
        let u = 1.0 - rng.random::<f64>();
        g.ln() + u.ln() / alpha
    };
    let (lx, ly) = (log_gamma(), log_gamma());
    Ok(1.0 / (1.0 + (ly - lx).exp()))
}

/// Draws a mixing weight; the modified form folds it onto `[0.5, 1]`.
pub fn mix_weight<R: Rng + ?Sized>(alpha: f64, modified: bool, rng: &mut R) -> Result<f64> {
    let lambda = sample_beta(alpha, rng)?;
    Ok(if modified { lambda.max(1.0 - lambda) } else { lambda })
}

/// `weight·a + (1 − weight)·b` for both features and targets.
pub fn mixup_with_weight<F: Scalar>(
    a: &TargetedExample<F>,
    b: &TargetedExample<F>,
    weight: f64,
) -> Result<TargetedExample<F>> {
    if a.features.shape() != b.features.shape() {
        return Err(Error::shape("mixup", a.features.shape(), b.features.shape()));
    }
    if a.target.len() != b.target.len() {
        return Err(Error::shape("mixup", &[a.target.len()], &[b.target.len()]));
    }
    let w = F::from_f64_lossy(weight);
    let v = F::one() - w;
    let mix = |x: &[F], y: &[F]| -> Vec<F> { x.iter().zip(y).map(|(&p, &q)| w * p + v * q).collect() };
    Ok(TargetedExample {
        features: Tensor::new(a.features.shape().to_vec(), mix(a.features.data(), b.features.data()))?,
        target: mix(&a.target, &b.target),
    })
}

/// Order-preserving MixUp: the result is always at least as close to `a` as to `b`.
///
/// Returns the mixed example and the weight placed on `a`.
pub fn mixup_pair<F: Scalar, R: Rng + ?Sized>(
    a: &TargetedExample<F>,
    b: &TargetedExample<F>,
    alpha: f64,
    rng: &mut R,
) -> Result<(TargetedExample<F>, f64)> {
    let weight = mix_weight(alpha, true, rng)?;
    Ok((mixup_with_weight(a, b, weight)?, weight))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Purpose, Streams};

    fn ex(f: Vec<f64>, t: Vec<f64>) -> TargetedExample<f64> {
        TargetedExample {
            features: Tensor::vector(f).unwrap(),
            target: t,
        }
    }

    #[test]
    fn forced_weight() {
        let a = ex(vec![1.0, 0.0], vec![1.0, 0.0]);
        let b = ex(vec![0.0, 1.0], vec![0.0, 1.0]);
        let lambda: f64 = 0.3;
        let m = mixup_with_weight(&a, &b, lambda.max(1.0 - lambda)).unwrap();
        assert!((m.features.data()[0] - 0.7).abs() < 1e-15);
        assert!((m.features.data()[1] - 0.3).abs() < 1e-15);
        assert_eq!(m.features.data(), &m.target[..]);
    }

    #[test]
    fn self_mix_is_identity() {
        let a = ex(vec![0.25, -3.0, 8.0], vec![0.2, 0.8]);
        let mut rng = Streams::new(1).stream(Purpose::MixWeights, 0, 0);
        for _ in 0..10 {
            let (m, w) = mixup_pair(&a, &a, 0.75, &mut rng).unwrap();
            assert!((0.5..=1.0).contains(&w));
            for (x, y) in m.features.data().iter().zip(a.features.data()) {
                assert!((x - y).abs() <= 1e-15 * y.abs().max(1.0));
            }
        }
    }

    #[test]
    fn mismatched_shapes_rejected() {
        let a = ex(vec![0.0, 1.0], vec![1.0, 0.0]);
        let b = ex(vec![0.0, 1.0, 2.0], vec![1.0, 0.0]);
        assert!(mixup_with_weight(&a, &b, 0.6).is_err());
        let c = ex(vec![0.0, 1.0], vec![1.0, 0.0, 0.0]);
        assert!(mixup_with_weight(&a, &c, 0.6).is_err());
    }

    #[test]
    fn beta_rejects_bad_alpha() {
        let mut rng = Streams::new(1).stream(Purpose::MixWeights, 0, 0);
        assert!(sample_beta(0.0, &mut rng).is_err());
        assert!(sample_beta(-1.0, &mut rng).is_err());
        let v = sample_beta(1e-3, &mut rng).unwrap();
        assert!((0.0..=1.0).contains(&v));
    }

    #[test]
    fn beta_moments() {
        let alpha = 0.75;
        let draws: Vec<f64> = (0..20_000)
            .map(|i| sample_beta(alpha, &mut Streams::new(3).stream(Purpose::MixWeights, 0, i)).unwrap())
            .collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / draws.len() as f64;
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
        let expected = 1.0 / (4.0 * (2.0 * alpha + 1.0));
        assert!(
            (var - expected).abs() < 0.01 * expected.max(0.1) * 3.0,
            "var {var} vs {expected}"
        );
    }

    #[test]
    fn tiny_alpha_stays_at_the_ends() {
        // Mass in [0.1, 0.9] is about 2·alpha·ln 9 for small alpha.
        let alpha = 2e-3;
        let draws: Vec<f64> = (0..20_000)
            .map(|i| sample_beta(alpha, &mut Streams::new(4).stream(Purpose::MixWeights, 0, i)).unwrap())
            .collect();
        let middle = draws.iter().filter(|x| (0.1..=0.9).contains(*x)).count() as f64 / draws.len() as f64;
        assert!(middle < 0.02, "middle mass {middle}");
        let low = draws.iter().filter(|&&x| x < 0.5).count() as f64 / draws.len() as f64;
        assert!((low - 0.5).abs() < 0.02, "low mass {low}");
    }
}
