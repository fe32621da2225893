//! Classifier contract and a reference fully connected multi-head network.
//!
//! The network is a shared tanh trunk followed by one linear output layer
//! whose units are partitioned into softmax heads. Three layouts exist:
//! a binary empty/animal gate, the multi-task layout (species, count bin and
//! one two-way head per attribute), and a one-stage layout in which "empty"
//! is an extra species class.

mod checkpoint;
mod network;
mod train;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT_VERSION};
pub use network::{Dense, Gradients, Network, StepResult};
pub use train::{
    apply_class_weights, fit, fit_with, top1_accuracy, BestSnapshot, EpochRecord, ModelState, ScheduleEntry,
    TrainConfig,
};

use serde::{Deserialize, Serialize};

use crate::domain::{BinaryPrediction, LabelSet, MultiTaskPrediction, ATTRIBUTES, ATTRIBUTE_NAMES, COUNT_BINS};
use crate::error::{Error, Result};
use crate::imbalance::ClassWeights;
use crate::manifest::Dataset;
use crate::prep::ChannelStats;

/// Index of the "animal" class in the binary head; "empty" is 1.
pub const BINARY_ANIMAL: usize = 0;
pub const BINARY_EMPTY: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadMode {
    Binary,
    Multitask,
    OneStage,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadLayout {
    pub mode: HeadMode,
    /// Class count of each head, in output order.
    pub heads: Vec<usize>,
}

impl HeadLayout {
    pub fn binary() -> Self {
        Self {
            mode: HeadMode::Binary,
            heads: vec![2],
        }
    }

    pub fn multitask(species: usize) -> Self {
        Self::multitask_with(species, COUNT_BINS, ATTRIBUTES)
    }

    pub fn multitask_with(species: usize, count_bins: usize, attributes: usize) -> Self {
        let mut heads = vec![species, count_bins];
        heads.extend(std::iter::repeat_n(2, attributes));
        Self {
            mode: HeadMode::Multitask,
            heads,
        }
    }

    /// `species + 1` classes; the last one is "empty".
    pub fn one_stage(species: usize) -> Self {
        Self {
            mode: HeadMode::OneStage,
            heads: vec![species + 1],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads.is_empty() {
            return Err(Error::config("layout", "needs at least one head"));
        }
        if self.heads.iter().any(|&k| k < 2) {
            return Err(Error::config("layout", "every head needs at least two classes"));
        }
        let ok = match self.mode {
            HeadMode::Binary => self.heads == [2],
            HeadMode::Multitask => self.heads.len() >= 2 && self.heads[2..].iter().all(|&k| k == 2),
            HeadMode::OneStage => self.heads.len() == 1,
        };
        if !ok {
            return Err(Error::config(
                "layout",
                format!("heads {:?} do not fit {:?}", self.heads, self.mode),
            ));
        }
        Ok(())
    }

    pub fn output_dim(&self) -> usize {
        self.heads.iter().sum()
    }

    /// Start offset of every head in the output layer.
    pub fn offsets(&self) -> Vec<usize> {
        self.heads
            .iter()
            .scan(0, |acc, &k| {
                let o = *acc;
                *acc += k;
                Some(o)
            })
            .collect()
    }

    /// Species classes, excluding the one-stage "empty" class.
    pub fn species_classes(&self) -> Option<usize> {
        match self.mode {
            HeadMode::Binary => None,
            HeadMode::Multitask => Some(self.heads[0]),
            HeadMode::OneStage => Some(self.heads[0] - 1),
        }
    }

    pub fn head_names(&self) -> Vec<String> {
        match self.mode {
            HeadMode::Binary => vec!["binary".into()],
            HeadMode::OneStage => vec!["one_stage".into()],
            HeadMode::Multitask => {
                let mut v = vec!["species".to_string(), "count".to_string()];
                for i in 0..self.heads.len() - 2 {
                    v.push(
                        ATTRIBUTE_NAMES
                            .get(i)
                            .map_or_else(|| format!("attribute_{i}"), |s| s.to_string()),
                    );
                }
                v
            }
        }
    }

    /// Per-head training targets for `label`. Attribute heads are masked
    /// when the label carries no attributes.
    pub fn target(&self, label: &LabelSet) -> Result<Target> {
        let n = self.heads.len();
        let mut classes = vec![None; n];
        match self.mode {
            HeadMode::Binary => {
                classes[0] = Some(if label.empty { BINARY_EMPTY } else { BINARY_ANIMAL });
            }
            HeadMode::OneStage => {
                classes[0] = Some(match (label.empty, label.species) {
                    (true, _) => self.heads[0] - 1,
                    (false, Some(s)) => self.checked(0, s.0)?,
                    (false, None) => return Err(Error::MissingLabel("species")),
                });
            }
            HeadMode::Multitask => {
                if label.empty {
                    return Err(Error::MissingLabel("species"));
                }
                let s = label.species.ok_or(Error::MissingLabel("species"))?;
                let c = label.count.ok_or(Error::MissingLabel("count"))?;
                classes[0] = Some(self.checked(0, s.0)?);
                classes[1] = Some(self.checked(1, c.0)?);
                if let Some(a) = label.attributes {
                    for (slot, flag) in classes[2..].iter_mut().zip(a.to_array()) {
                        *slot = Some(flag as usize);
                    }
                }
            }
        }
        Ok(Target {
            classes,
            weights: vec![1.0; n],
        })
    }

    fn checked(&self, head: usize, class: usize) -> Result<usize> {
        if class < self.heads[head] {
            Ok(class)
        } else {
            Err(Error::OutOfRange(format!(
                "class {class} outside head of size {}",
                self.heads[head]
            )))
        }
    }

    /// Sum over heads of weighted cross-entropy `-w_h ln p_h[t_h]`.
    pub fn loss(&self, probs: &[Vec<f64>], target: &Target) -> Result<f64> {
        if probs.len() != self.heads.len() {
            return Err(Error::DimensionMismatch {
                expected: self.heads.len(),
                actual: probs.len(),
            });
        }
        let mut total = 0.0;
        for ((p, t), w) in probs.iter().zip(&target.classes).zip(&target.weights) {
            if let Some(t) = *t {
                let pt = *p.get(t).ok_or_else(|| Error::OutOfRange(format!("class {t}")))?;
                total -= w * pt.max(f64::MIN_POSITIVE).ln();
            }
        }
        Ok(total)
    }

    pub fn to_prediction(&self, probs: Vec<Vec<f64>>) -> Prediction {
        match self.mode {
            HeadMode::Binary => Prediction::Binary(BinaryPrediction {
                p_animal: probs[0][BINARY_ANIMAL],
                p_empty: probs[0][BINARY_EMPTY],
            }),
            HeadMode::OneStage => Prediction::OneStage(probs.into_iter().next().unwrap_or_default()),
            HeadMode::Multitask => {
                let mut it = probs.into_iter();
                let species = it.next().unwrap_or_default();
                let count = it.next().unwrap_or_default();
                let attributes = it.map(|p| p[1]).collect();
                Prediction::MultiTask(MultiTaskPrediction {
                    species,
                    count,
                    attributes,
                })
            }
        }
    }
}

/// Per-head target class (`None` masks the head) and loss weight.
#[derive(Debug, Clone, PartialEq)]
pub struct Target {
    pub classes: Vec<Option<usize>>,
    pub weights: Vec<f64>,
}

impl Target {
    pub fn primary(&self) -> Option<usize> {
        self.classes.first().copied().flatten()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: Vec<f64>,
    pub target: Target,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Prediction {
    Binary(BinaryPrediction),
    MultiTask(MultiTaskPrediction),
    OneStage(Vec<f64>),
}

impl Prediction {
    /// Distribution of the primary head: `[p_animal, p_empty]`, the species
    /// head, or the one-stage head.
    pub fn primary(&self) -> Vec<f64> {
        match self {
            Prediction::Binary(b) => vec![b.p_animal, b.p_empty],
            Prediction::MultiTask(m) => m.species.clone(),
            Prediction::OneStage(p) => p.clone(),
        }
    }

    /// Per-head distributions; attribute heads expand to `[1 - p, p]`.
    pub fn heads(&self) -> Vec<Vec<f64>> {
        match self {
            Prediction::MultiTask(m) => {
                let mut v = vec![m.species.clone(), m.count.clone()];
                v.extend(m.attributes.iter().map(|&p| vec![1.0 - p, p]));
                v
            }
            other => vec![other.primary()],
        }
    }
}

/// One training example per image, features normalized by `stats` when given.
pub fn examples_from(dataset: &Dataset, layout: &HeadLayout, stats: Option<&ChannelStats>) -> Result<Vec<Example>> {
    dataset
        .images()
        .map(|img| {
            let label = img.label.as_ref().ok_or(Error::MissingLabel("label"))?;
            let features = match stats {
                Some(s) => s.normalize_vector(&img.features)?,
                None => img.features.clone(),
            };
            Ok(Example {
                features,
                target: layout.target(label)?,
            })
        })
        .collect()
}

/// Loss of a prediction against a label; with `class_weights`, the species
/// term is scaled by the weight of the true species.
pub fn loss(
    layout: &HeadLayout,
    prediction: &Prediction,
    label: &LabelSet,
    class_weights: Option<&ClassWeights>,
) -> Result<f64> {
    let mut target = layout.target(label)?;
    if let (Some(w), Some(s)) = (class_weights, label.species) {
        if layout.mode != HeadMode::Binary {
            target.weights[0] = w.get(s.0);
        }
    }
    layout.loss(&prediction.heads(), &target)
}
