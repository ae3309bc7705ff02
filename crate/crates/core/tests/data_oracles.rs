//! Generated data checked against simple reference classifiers and statistics.

use mixmatch::data::{
    augment, gen_shapes, gen_two_moons, shape_template, split, AugmentPolicy, Dataset, Example, SplitSpec,
};
use mixmatch::rng::{Purpose, Streams};
use mixmatch::Tensor;

fn nearest_neighbor_accuracy(train: &Dataset, test: &Dataset) -> f64 {
    let correct = test
        .examples
        .iter()
        .filter(|t| {
            let q = t.features.data();
            let nearest = train
                .examples
                .iter()
                .min_by(|a, b| {
                    let d = |e: &&Example| {
                        e.features
                            .data()
                            .iter()
                            .zip(q)
                            .map(|(x, y)| (x - y).powi(2))
                            .sum::<f32>()
                    };
                    d(a).total_cmp(&d(b))
                })
                .unwrap();
            nearest.label == t.label
        })
        .count();
    correct as f64 / test.len() as f64
}

/// Best squared distance over every class and placement of the clean template.
fn template_accuracy(data: &Dataset, side: usize, classes: usize) -> f64 {
    let size = side / 2;
    let correct = data
        .examples
        .iter()
        .filter(|e| {
            let img = e.features.data();
            let mut best = (f32::INFINITY, usize::MAX);
            for c in 0..classes {
                let t = shape_template(c, size);
                for oy in 0..=side - size {
                    for ox in 0..=side - size {
                        let mut placed = vec![0.0f32; side * side];
                        for y in 0..size {
                            for x in 0..size {
                                placed[(oy + y) * side + ox + x] = t[y * size + x];
                            }
                        }
                        let d: f32 = placed.iter().zip(img).map(|(p, q)| (p - q).powi(2)).sum();
                        if d < best.0 {
                            best = (d, c);
                        }
                    }
                }
            }
            Some(best.1) == e.label
        })
        .count();
    correct as f64 / data.len() as f64
}

#[test]
fn moons_are_separable_by_nearest_neighbor() {
    let train = gen_two_moons(2000, 0.1, 0).unwrap();
    let test = gen_two_moons(1000, 0.1, 1).unwrap();
    let acc = nearest_neighbor_accuracy(&train, &test);
    assert!(acc >= 0.95, "1-NN accuracy {acc}");
    assert_eq!(train.class_counts(), vec![1000, 1000]);
}

#[test]
fn shapes_match_their_templates() {
    for (noise, floor) in [(0.1, 0.9), (0.3, 0.9)] {
        let data = gen_shapes(400, 8, 4, noise, 3).unwrap();
        let acc = template_accuracy(&data, 8, 4);
        assert!(acc >= floor, "noise {noise}: template accuracy {acc}");
        assert_eq!(data.class_counts(), vec![100; 4]);
    }
}

#[test]
fn jitter_displacement_has_the_configured_spread() {
    let sigma = 0.1;
    let x = &Example {
        features: Tensor::new(vec![2], vec![0.3, -0.2]).unwrap(),
        label: Some(0),
    };
    let draws = 20_000;
    let streams = Streams::new(11);
    let mut sum_sq = 0.0f64;
    for i in 0..draws {
        let out = augment(
            x,
            &AugmentPolicy::Jitter2d { sigma },
            &mut streams.stream(Purpose::AugmentLabeled, i, 0),
        )
        .unwrap();
        sum_sq += out
            .features
            .data()
            .iter()
            .zip(x.features.data())
            .map(|(a, b)| ((a - b) as f64).powi(2))
            .sum::<f64>();
    }
    // E‖Δ‖² = 2σ² for two coordinates; the standard error at this sample size is under 1%.
    let ratio = sum_sq / draws as f64 / (2.0 * sigma * sigma);
    assert!((ratio - 1.0).abs() < 0.03, "ratio {ratio}");
}

#[test]
fn balanced_split_has_equal_class_counts_and_hides_nothing_twice() {
    let data = gen_shapes(4040, 8, 4, 0.3, 0).unwrap();
    for seed in 1..=5 {
        let (lab, unl) = split(
            &data,
            &SplitSpec {
                labeled: 40,
                balanced: true,
                seed,
            },
        )
        .unwrap();
        let mut counts = [0; 4];
        for e in &lab.examples {
            counts[e.label.unwrap()] += 1;
        }
        assert_eq!(counts, [10; 4]);
        assert_eq!(unl.len(), 4000);
        assert!(unl.examples.iter().all(|e| e.label.is_none()));
        let mut all: Vec<usize> = lab.indices.iter().chain(&unl.indices).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..4040).collect::<Vec<_>>());
    }
}
