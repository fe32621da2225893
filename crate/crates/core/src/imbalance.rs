//! Class-imbalance remedies and the batch sources the trainer draws from.
//!
//! * weighted loss: `f_i = N / n_i`, `w_i = f_i / sum_j f_j`
//! * oversampling: pick a class uniformly, then an example within it
//! * emphasis sampling: FIFO queues of recently misclassified examples, fed
//!   back as extra batches with fixed probabilities

use std::collections::VecDeque;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::Dataset;

pub const DEFAULT_TOP1_FEED_PROBABILITY: f64 = 0.20;
pub const DEFAULT_TOP5_FEED_PROBABILITY: f64 = 0.35;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImbalanceMethod {
    #[default]
    None,
    WeightedLoss,
    Oversample,
    Emphasis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    weights: Vec<f64>,
}

impl ClassWeights {
    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    pub fn get(&self, class: usize) -> f64 {
        self.weights[class]
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Inverse-frequency weights normalized to sum to one.
pub fn class_weights(counts: &[usize]) -> Result<ClassWeights> {
    if counts.is_empty() {
        return Err(Error::EmptyInput("no class counts".into()));
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::OutOfRange(format!("class {c} has no examples")));
    }
    let total: usize = counts.iter().sum();
    let f: Vec<f64> = counts.iter().map(|&n| total as f64 / n as f64).collect();
    let sum: f64 = f.iter().sum();
    Ok(ClassWeights {
        weights: f.into_iter().map(|x| x / sum).collect(),
    })
}

/// Outcome of the classification head on one training example, used to
/// route it into the emphasis queues.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExampleOutcome {
    pub index: usize,
    pub top1_correct: bool,
    pub top5_correct: bool,
}

/// Supplies the batches (as example indices) for one optimizer step.
pub trait BatchSource {
    /// The first batch is the base batch; any further ones are extras.
    fn next_batches(&mut self, rng: &mut ChaCha8Rng, batch_size: usize) -> Vec<Vec<usize>>;

    /// Receives the base batch's outcomes, evaluated before its update.
    fn observe(&mut self, _outcomes: &[ExampleOutcome]) {}
}

/// Uniform draws with replacement.
#[derive(Debug, Clone)]
pub struct UniformSampler {
    n: usize,
}

impl UniformSampler {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyInput("no training examples".into()));
        }
        Ok(Self { n })
    }

    pub fn batch(&self, rng: &mut impl Rng, size: usize) -> Vec<usize> {
        (0..size).map(|_| rng.random_range(0..self.n)).collect()
    }
}

impl BatchSource for UniformSampler {
    fn next_batches(&mut self, rng: &mut ChaCha8Rng, batch_size: usize) -> Vec<Vec<usize>> {
        vec![self.batch(rng, batch_size)]
    }
}

/// Class-uniform sampling: every class is equally likely per draw.
#[derive(Debug, Clone)]
pub struct Oversampler {
    buckets: Vec<Vec<usize>>,
}

impl Oversampler {
    /// `classes[i]` is the class of example `i`; each of `0..n_classes` must
    /// have at least one example.
    pub fn new(classes: &[usize], n_classes: usize) -> Result<Self> {
        let mut buckets = vec![Vec::new(); n_classes];
        for (i, &c) in classes.iter().enumerate() {
            let b = buckets
                .get_mut(c)
                .ok_or_else(|| Error::OutOfRange(format!("class {c} outside 0..{n_classes}")))?;
            b.push(i);
        }
        if let Some(c) = buckets.iter().position(Vec::is_empty) {
            return Err(Error::OutOfRange(format!("class {c} has no examples")));
        }
        Ok(Self { buckets })
    }

    pub fn draw(&self, rng: &mut impl Rng) -> usize {
        let bucket = &self.buckets[rng.random_range(0..self.buckets.len())];
        *bucket.choose(rng).expect("non-empty bucket")
    }

    pub fn batch(&self, rng: &mut impl Rng, size: usize) -> Vec<usize> {
        (0..size).map(|_| self.draw(rng)).collect()
    }
}

impl BatchSource for Oversampler {
    fn next_batches(&mut self, rng: &mut ChaCha8Rng, batch_size: usize) -> Vec<Vec<usize>> {
        vec![self.batch(rng, batch_size)]
    }
}

/// Endless stream of oversampled batches over a dataset's non-empty images,
/// as indices into `dataset.non_empty().images()` order.
pub struct OversampleStream {
    sampler: Oversampler,
    rng: ChaCha8Rng,
    batch_size: usize,
}

impl Iterator for OversampleStream {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        Some(self.sampler.batch(&mut self.rng, self.batch_size))
    }
}

pub fn oversample_batches(d: &Dataset, batch_size: usize, seed: u64) -> Result<OversampleStream> {
    let classes: Vec<usize> = d
        .images()
        .filter_map(|im| im.label.and_then(|l| l.species))
        .map(|s| s.0)
        .collect();
    Ok(OversampleStream {
        sampler: Oversampler::new(&classes, d.taxonomy().len())?,
        rng: ChaCha8Rng::seed_from_u64(seed),
        batch_size,
    })
}

/// The batches chosen for one emphasis step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmphasisBatches {
    pub base: Vec<usize>,
    pub from_top1: Option<Vec<usize>>,
    pub from_top5: Option<Vec<usize>>,
}

impl EmphasisBatches {
    pub fn into_batches(self) -> Vec<Vec<usize>> {
        std::iter::once(self.base)
            .chain(self.from_top1)
            .chain(self.from_top5)
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct EmphasisQueues {
    top1: VecDeque<usize>,
    top5: VecDeque<usize>,
    p_top1: f64,
    p_top5: f64,
    capacity: usize,
}

impl EmphasisQueues {
    pub fn new(p_top1: f64, p_top5: f64, capacity: usize) -> Result<Self> {
        for (name, p) in [("p_top1", p_top1), ("p_top5", p_top5)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(name, "must lie in [0, 1]"));
            }
        }
        if capacity == 0 {
            return Err(Error::config("queue_capacity", "must be positive"));
        }
        Ok(Self {
            top1: VecDeque::new(),
            top5: VecDeque::new(),
            p_top1,
            p_top5,
            capacity,
        })
    }

    pub fn with_defaults(capacity: usize) -> Result<Self> {
        Self::new(DEFAULT_TOP1_FEED_PROBABILITY, DEFAULT_TOP5_FEED_PROBABILITY, capacity)
    }

    pub fn top1_len(&self) -> usize {
        self.top1.len()
    }

    pub fn top5_len(&self) -> usize {
        self.top5.len()
    }

    fn push(queue: &mut VecDeque<usize>, capacity: usize, item: usize) {
        if queue.len() == capacity {
            queue.pop_front();
        }
        queue.push_back(item);
    }

    /// Routes failures into the queues: a top-5 miss goes to the top-5 queue
    /// only, a top-1-only miss to the top-1 queue.
    pub fn enqueue(&mut self, outcomes: &[ExampleOutcome]) {
        for o in outcomes {
            if !o.top5_correct {
                Self::push(&mut self.top5, self.capacity, o.index);
            } else if !o.top1_correct {
                Self::push(&mut self.top1, self.capacity, o.index);
            }
        }
    }

    fn take(queue: &mut VecDeque<usize>, n: usize) -> Vec<usize> {
        let n = n.min(queue.len());
        queue.drain(..n).collect()
    }

    /// Enqueues `last_eval`, then adds a top-1 queue batch with probability
    /// `p_top1` and a top-5 queue batch with probability `p_top5`. Coins are
    /// flipped regardless of queue state; degenerate probabilities (0 or 1)
    /// consume no randomness.
    pub fn step(&mut self, rng: &mut impl Rng, base: Vec<usize>, last_eval: &[ExampleOutcome]) -> EmphasisBatches {
        self.enqueue(last_eval);
        let n = base.len().max(1);
        let feed1 = coin(rng, self.p_top1);
        let feed5 = coin(rng, self.p_top5);
        let from_top1 = (feed1 && !self.top1.is_empty()).then(|| Self::take(&mut self.top1, n));
        let from_top5 = (feed5 && !self.top5.is_empty()).then(|| Self::take(&mut self.top5, n));
        EmphasisBatches {
            base,
            from_top1,
            from_top5,
        }
    }
}

fn coin(rng: &mut impl Rng, p: f64) -> bool {
    if p <= 0.0 {
        false
    } else if p >= 1.0 {
        true
    } else {
        rng.random_bool(p)
    }
}

/// Uniform base batches plus emphasis extras.
#[derive(Debug, Clone)]
pub struct EmphasisSampler {
    base: UniformSampler,
    queues: EmphasisQueues,
    pending: Vec<ExampleOutcome>,
}

impl EmphasisSampler {
    pub fn new(n: usize, queues: EmphasisQueues) -> Result<Self> {
        Ok(Self {
            base: UniformSampler::new(n)?,
            queues,
            pending: Vec::new(),
        })
    }

    pub fn queues(&self) -> &EmphasisQueues {
        &self.queues
    }
}

impl BatchSource for EmphasisSampler {
    fn next_batches(&mut self, rng: &mut ChaCha8Rng, batch_size: usize) -> Vec<Vec<usize>> {
        let base = self.base.batch(rng, batch_size);
        let pending = std::mem::take(&mut self.pending);
        self.queues.step(rng, base, &pending).into_batches()
    }

    fn observe(&mut self, outcomes: &[ExampleOutcome]) {
        self.pending = outcomes.to_vec();
    }
}
