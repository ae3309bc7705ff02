use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::Example;
use crate::error::{Error, Result};
use crate::rng::{Purpose, Streams};
use crate::tensor::Tensor;

/// Stochastic input transformation applied before every forward pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AugmentPolicy {
    /// Adds `N(0, sigma²)` to every coordinate of a 1-D feature vector.
    Jitter2d { sigma: f64 },
    /// Zero-pads `[C,H,W]` images by `pad`, crops back to `H×W` at a random
    /// offset, flips horizontally with `flip_prob`, then optionally adds
    /// clipped pixel noise.
    ImageFlipCrop { pad: usize, flip_prob: f64, noise: f64 },
}

impl AugmentPolicy {
    pub fn identity_for(feature_rank: usize) -> Self {
        if feature_rank == 3 {
            AugmentPolicy::ImageFlipCrop {
                pad: 0,
                flip_prob: 0.0,
                noise: 0.0,
            }
        } else {
            AugmentPolicy::Jitter2d { sigma: 0.0 }
        }
    }
}

pub(crate) fn flip_horizontal(img: &[f32], channels: usize, h: usize, w: usize) -> Vec<f32> {
    let mut out = vec![0.0; img.len()];
    for c in 0..channels {
        for y in 0..h {
            let row = (c * h + y) * w;
            for x in 0..w {
                out[row + x] = img[row + w - 1 - x];
            }
        }
    }
    out
}

/// Returns an augmented copy of `x`; the label is carried over unchanged.
pub fn augment<R: Rng + ?Sized>(x: &Example, policy: &AugmentPolicy, rng: &mut R) -> Result<Example> {
    let features = augment_features(&x.features, policy, rng)?;
    Ok(Example {
        features,
        label: x.label,
    })
}

pub(crate) fn augment_features<R: Rng + ?Sized>(
    x: &Tensor<f32>,
    policy: &AugmentPolicy,
    rng: &mut R,
) -> Result<Tensor<f32>> {
    match *policy {
        AugmentPolicy::Jitter2d { sigma } => {
            if x.rank() != 1 {
                return Err(Error::InvalidArgument(format!(
                    "augment: jitter2d needs vector features, got shape {:?}",
                    x.shape()
                )));
            }
            if sigma == 0.0 {
                return Ok(x.clone());
            }
            let normal = Normal::new(0.0, sigma)
                .map_err(|_| Error::InvalidArgument(format!("augment: bad jitter sigma {sigma}")))?;
            let data = x.data().iter().map(|&v| v + normal.sample(rng) as f32).collect();
            Ok(Tensor::from_parts(x.shape().to_vec(), data))
        }
        AugmentPolicy::ImageFlipCrop { pad, flip_prob, noise } => {
            if x.rank() != 3 {
                return Err(Error::InvalidArgument(format!(
                    "augment: image_flip_crop needs [C,H,W] features, got shape {:?}",
                    x.shape()
                )));
            }
            let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
            let (dy, dx) = if pad > 0 {
                (rng.random_range(0..=2 * pad), rng.random_range(0..=2 * pad))
            } else {
                (pad, pad)
            };
            let src = x.data();
            let mut out = vec![0.0f32; src.len()];
            for ch in 0..c {
                for y in 0..h {
                    // Row `y` of the crop is row `y + dy - pad` of the original.
                    let sy = (y + dy) as isize - pad as isize;
                    if sy < 0 || sy as usize >= h {
                        continue;
                    }
                    for xx in 0..w {
                        let sx = (xx + dx) as isize - pad as isize;
                        if sx < 0 || sx as usize >= w {
                            continue;
                        }
                        out[(ch * h + y) * w + xx] = src[(ch * h + sy as usize) * w + sx as usize];
                    }
                }
            }
            if flip_prob > 0.0 && rng.random::<f64>() < flip_prob {
                out = flip_horizontal(&out, c, h, w);
            }
            if noise > 0.0 {
                let normal = Normal::new(0.0, noise)
                    .map_err(|_| Error::InvalidArgument(format!("augment: bad pixel noise {noise}")))?;
                for v in &mut out {
                    *v = (*v + normal.sample(rng) as f32).clamp(0.0, 1.0);
                }
            }
            Ok(Tensor::from_parts(x.shape().to_vec(), out))
        }
    }
}

/// Augments each input with its own keyed stream `(purpose, major, first_minor + i)`
/// and stacks the results.
pub fn augment_batch(
    inputs: &[&Tensor<f32>],
    policy: &AugmentPolicy,
    streams: &Streams,
    purpose: Purpose,
    major: u64,
    first_minor: u64,
) -> Result<Tensor<f32>> {
    let items = inputs
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let mut rng = streams.stream(purpose, major, first_minor + i as u64);
            augment_features(x, policy, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Tensor::stack(&items)
}
