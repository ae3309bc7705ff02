use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{Dataset, Example};
use crate::error::{Error, Result};
use crate::rng::{permutation, Purpose, Streams};
use crate::tensor::Tensor;

/// Interleaved half-circles in 2-D, classes balanced, order shuffled.
///
/// Class 0 lies on the upper unit half-circle centred at the origin, class 1
/// on the lower unit half-circle centred at `(1, 0.5)`.
pub fn gen_two_moons(n: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if n == 0 || !n.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "two_moons: n must be even and positive, got {n}"
        )));
    }
    if !(noise >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "two_moons: noise must be >= 0, got {noise}"
        )));
    }
    let streams = Streams::new(seed);
    let mut angles = streams.stream(Purpose::Dataset, 0, 0);
    let mut jitter = streams.stream(Purpose::Dataset, 1, 0);
    let normal = Normal::new(0.0, noise).expect("finite non-negative sigma");
    let mut points = Vec::with_capacity(n);
    for i in 0..n {
        let t = angles.random_range(0.0..=std::f64::consts::PI);
        let label = i % 2;
        let (x, y) = if label == 0 {
            (t.cos(), t.sin())
        } else {
            (1.0 - t.cos(), 0.5 - t.sin())
        };
        let (dx, dy) = if noise > 0.0 {
            (normal.sample(&mut jitter), normal.sample(&mut jitter))
        } else {
            (0.0, 0.0)
        };
        points.push(Example {
            features: Tensor::from_parts(vec![2], vec![(x + dx) as f32, (y + dy) as f32]),
            label: Some(label),
        });
    }
    let order = permutation(n, &mut streams.stream(Purpose::Dataset, 2, 0));
    Ok(Dataset {
        feature_shape: vec![2],
        num_classes: 2,
        examples: order.into_iter().map(|i| points[i].clone()).collect(),
    })
}

/// Shape classes in label order.
pub const SHAPE_CLASSES: [&str; 4] = ["filled_square", "hollow_square", "cross", "diagonal_stripe"];

/// Clean `size × size` template for a shape class.
pub fn shape_template(class: usize, size: usize) -> Vec<f32> {
    let mut t = vec![0.0; size * size];
    let mid = size / 2;
    for y in 0..size {
        for x in 0..size {
            let on = match class {
                0 => true,
                1 => y == 0 || x == 0 || y + 1 == size || x + 1 == size,
                2 => y == mid || x == mid,
                3 => y == x,
                _ => panic!("unknown shape class {class}"),
            };
            if on {
                t[y * size + x] = 1.0;
            }
        }
    }
    t
}

/// Single-channel `side × side` images of small shapes at random offsets.
///
/// Shapes are `side/2` pixels wide. Gaussian pixel noise is added and values
/// are clipped to `[0, 1]`. Class counts differ by at most one.
pub fn gen_shapes(n: usize, side: usize, num_classes: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if side < 8 {
        return Err(Error::InvalidArgument(format!("shapes: side must be >= 8, got {side}")));
    }
    if !(2..=4).contains(&num_classes) {
        return Err(Error::InvalidArgument(format!(
            "shapes: class count must be 2, 3 or 4, got {num_classes}"
        )));
    }
    if n == 0 || !(noise >= 0.0) {
        return Err(Error::InvalidArgument("shapes: need n > 0 and noise >= 0".into()));
    }
    let size = side / 2;
    let templates: Vec<Vec<f32>> = (0..num_classes).map(|c| shape_template(c, size)).collect();
    let streams = Streams::new(seed);
    let normal = Normal::new(0.0, noise).expect("finite non-negative sigma");
    let mut examples = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % num_classes;
        let mut rng = streams.stream(Purpose::Dataset, i as u64, 0);
        let oy = rng.random_range(0..=side - size);
        let ox = rng.random_range(0..=side - size);
        let mut img = vec![0.0f32; side * side];
        for y in 0..size {
            for x in 0..size {
                img[(oy + y) * side + ox + x] = templates[label][y * size + x];
            }
        }
        if noise > 0.0 {
            for v in &mut img {
                *v = (*v + normal.sample(&mut rng) as f32).clamp(0.0, 1.0);
            }
        }
        examples.push(Example {
            features: Tensor::from_parts(vec![1, side, side], img),
            label: Some(label),
        });
    }
    let order = permutation(n, &mut streams.stream(Purpose::Dataset, u64::MAX, 0));
    Ok(Dataset {
        feature_shape: vec![1, side, side],
        num_classes,
        examples: order.into_iter().map(|i| examples[i].clone()).collect(),
    })
}
