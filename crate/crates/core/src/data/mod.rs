//! Datasets, labeled/unlabeled splits, augmentation and batch scheduling.

mod augment;
mod batches;
mod idx;
mod synth;

pub use augment::{augment, augment_batch, AugmentPolicy};
pub use batches::{BatchIndices, BatchSchedule};
pub use idx::{load_idx, parse_idx};
pub use synth::{gen_shapes, gen_two_moons, shape_template, SHAPE_CLASSES};

use crate::error::{Error, Result};
use crate::rng::{permutation, Purpose, Streams};
use crate::tensor::Tensor;

/// One input, with its class when it is labeled.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub features: Tensor<f32>,
    pub label: Option<usize>,
}

/// A fully labeled collection of examples sharing one feature shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub feature_shape: Vec<usize>,
    pub num_classes: usize,
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.examples
            .iter()
            .map(|e| e.label.expect("dataset examples are labeled"))
            .collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for l in self.labels() {
            counts[l] += 1;
        }
        counts
    }

    /// Stacks the features of the given examples into one batch tensor.
    pub fn stack(&self, indices: &[usize]) -> Result<Tensor<f32>> {
        let items: Vec<_> = indices.iter().map(|&i| self.examples[i].features.clone()).collect();
        Tensor::stack(&items)
    }
}

/// How many examples keep their labels, and how they are chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitSpec {
    pub labeled: usize,
    pub balanced: bool,
    pub seed: u64,
}

/// True labels of unlabeled examples, reserved for evaluation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HiddenLabels(pub(crate) Vec<usize>);

impl HiddenLabels {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSet {
    pub examples: Vec<Example>,
    pub indices: Vec<usize>,
}

impl LabeledSet {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

/// Examples with labels stripped. Training code only sees `examples`.
#[derive(Clone, Debug, PartialEq)]
pub struct UnlabeledSet {
    pub examples: Vec<Example>,
    pub indices: Vec<usize>,
    hidden: HiddenLabels,
}

impl UnlabeledSet {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn hidden_labels(&self) -> &HiddenLabels {
        &self.hidden
    }
}

/// Chooses the labeled indices; the remainder is unlabeled. Both sorted.
pub fn split_indices(dataset: &Dataset, spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    let n = dataset.len();
    if spec.labeled > n {
        return Err(Error::InvalidArgument(format!(
            "split: {} labeled examples requested from a dataset of {n}",
            spec.labeled
        )));
    }
    let streams = Streams::new(spec.seed);
    let mut labeled = Vec::with_capacity(spec.labeled);
    if spec.balanced {
        let l = dataset.num_classes;
        if !spec.labeled.is_multiple_of(l) {
            return Err(Error::InvalidArgument(format!(
                "split: {} labeled examples cannot be balanced over {l} classes",
                spec.labeled
            )));
        }
        let per_class = spec.labeled / l;
        let labels = dataset.labels();
        for class in 0..l {
            let members: Vec<usize> = (0..n).filter(|&i| labels[i] == class).collect();
            if members.len() < per_class {
                return Err(Error::InvalidArgument(format!(
                    "split: class {class} has {} examples, {per_class} needed",
                    members.len()
                )));
            }
            let mut rng = streams.stream(Purpose::Split, class as u64, 0);
            let order = permutation(members.len(), &mut rng);
            labeled.extend(order[..per_class].iter().map(|&j| members[j]));
        }
    } else {
        let mut rng = streams.stream(Purpose::Split, u64::MAX, 0);
        labeled.extend_from_slice(&permutation(n, &mut rng)[..spec.labeled]);
    }
    labeled.sort_unstable();
    let mut is_labeled = vec![false; n];
    for &i in &labeled {
        is_labeled[i] = true;
    }
    let unlabeled = (0..n).filter(|&i| !is_labeled[i]).collect();
    Ok((labeled, unlabeled))
}

/// Partitions `dataset` into a labeled set and an unlabeled set.
pub fn split(dataset: &Dataset, spec: &SplitSpec) -> Result<(LabeledSet, UnlabeledSet)> {
    let (li, ui) = split_indices(dataset, spec)?;
    let labeled = LabeledSet {
        examples: li.iter().map(|&i| dataset.examples[i].clone()).collect(),
        indices: li,
    };
    let hidden = HiddenLabels(
        ui.iter()
            .map(|&i| dataset.examples[i].label.expect("dataset examples are labeled"))
            .collect(),
    );
    let unlabeled = UnlabeledSet {
        examples: ui
            .iter()
            .map(|&i| Example {
                features: dataset.examples[i].features.clone(),
                label: None,
            })
            .collect(),
        indices: ui,
        hidden,
    };
    Ok((labeled, unlabeled))
}
