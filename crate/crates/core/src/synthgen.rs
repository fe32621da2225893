//! Deterministic synthetic camera-trap corpus.
//!
//! Class centers (plus one center for empty images) sit on the vertices of a
//! regular simplex, so every pair of centers is `class_separation` apart.
//! Features are unit-variance isotropic Gaussians around a center. Each event
//! draws from its own ChaCha stream, which keeps generation independent of
//! execution order.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::domain::{
    AttributeSet, CaptureEvent, CountBin, ImageRecord, LabelSet, SpeciesId, Taxonomy, ATTRIBUTES, COUNT_BINS,
};
use crate::error::{Error, Result};
use crate::manifest::Dataset;
use crate::par::{self, Execution};

/// Default attribute marginals: standing, resting, moving, eating,
/// interacting, young present.
pub const DEFAULT_ATTRIBUTE_RATES: [f64; ATTRIBUTES] = [0.5, 0.085, 0.3, 0.3, 0.005, 0.018];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_classes: usize,
    pub feature_dim: usize,
    /// Class `c` has frequency proportional to `(c + 1)^-imbalance_exponent`.
    pub imbalance_exponent: f64,
    /// Explicit per-class frequencies; overrides the power law.
    pub class_frequencies: Option<Vec<f64>>,
    pub empty_fraction: f64,
    /// Probabilities of an event holding 1, 2 or 3 images.
    pub images_per_event: [f64; 3],
    /// Chance that an image of a non-empty event carries empty features.
    pub noise_rate: f64,
    pub n_events: usize,
    pub seed: u64,
    pub class_separation: f64,
    pub attribute_rates: [f64; ATTRIBUTES],
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_classes: 8,
            feature_dim: 16,
            imbalance_exponent: 1.0,
            class_frequencies: None,
            empty_fraction: 0.75,
            images_per_event: [0.0, 0.0, 1.0],
            noise_rate: 0.05,
            n_events: 2000,
            seed: 0,
            class_separation: 6.0,
            attribute_rates: DEFAULT_ATTRIBUTE_RATES,
        }
    }
}

fn prob(field: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::config(field, format!("{v} is not a probability")))
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::config("n_classes", "must be at least 2"));
        }
        if self.feature_dim < 2 {
            return Err(Error::config("feature_dim", "must be at least 2"));
        }
        if self.feature_dim < self.n_classes {
            return Err(Error::config(
                "feature_dim",
                "must be at least n_classes to hold equidistant centers",
            ));
        }
        if !(self.imbalance_exponent >= 0.0 && self.imbalance_exponent.is_finite()) {
            return Err(Error::config("imbalance_exponent", "must be finite and >= 0"));
        }
        if let Some(f) = &self.class_frequencies {
            if f.len() != self.n_classes {
                return Err(Error::config("class_frequencies", "length must equal n_classes"));
            }
            if f.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
                return Err(Error::config("class_frequencies", "entries must be positive"));
            }
        }
        if !(0.0..1.0).contains(&self.empty_fraction) {
            return Err(Error::config("empty_fraction", "must lie in [0, 1)"));
        }
        for &p in &self.images_per_event {
            prob("images_per_event", p)?;
        }
        if (self.images_per_event.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::config("images_per_event", "must sum to 1"));
        }
        prob("noise_rate", self.noise_rate)?;
        if self.n_events == 0 {
            return Err(Error::config("n_events", "must be positive"));
        }
        if !(self.class_separation > 0.0 && self.class_separation.is_finite()) {
            return Err(Error::config("class_separation", "must be positive"));
        }
        for &p in &self.attribute_rates {
            prob("attribute_rates", p)?;
        }
        Ok(())
    }

    /// Normalized class frequencies among non-empty events.
    pub fn class_probabilities(&self) -> Vec<f64> {
        let raw: Vec<f64> = match &self.class_frequencies {
            Some(f) => f.clone(),
            None => (0..self.n_classes)
                .map(|c| ((c + 1) as f64).powf(-self.imbalance_exponent))
                .collect(),
        };
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|x| x / total).collect()
    }

    /// Geometric success parameter of class `c`'s count-bin distribution;
    /// rarer classes come in smaller groups.
    pub fn count_geometric_p(&self, class: usize) -> f64 {
        0.3 + 0.5 * class as f64 / (self.n_classes - 1) as f64
    }

    /// Truncated geometric distribution over the twelve count bins.
    pub fn count_distribution(&self, class: usize) -> Vec<f64> {
        let p = self.count_geometric_p(class);
        let raw: Vec<f64> = (0..COUNT_BINS).map(|j| p * (1.0 - p).powi(j as i32)).collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|x| x / total).collect()
    }

    /// Centers of classes `0..n_classes`, followed by the empty center.
    pub fn centers(&self) -> Vec<Vec<f64>> {
        let n = self.n_classes;
        let scale = self.class_separation / std::f64::consts::SQRT_2;
        (0..=n)
            .map(|i| {
                let mut v = vec![0.0; self.feature_dim];
                // Helmert basis of the sum-zero hyperplane in R^(n+1).
                for j in 1..=n {
                    let norm = ((j * (j + 1)) as f64).sqrt();
                    v[j - 1] = scale
                        * match i.cmp(&j) {
                            std::cmp::Ordering::Less => 1.0 / norm,
                            std::cmp::Ordering::Equal => -(j as f64) / norm,
                            std::cmp::Ordering::Greater => 0.0,
                        };
                }
                v
            })
            .collect()
    }
}

fn gaussian_around(center: &[f64], rng: &mut impl Rng) -> Vec<f64> {
    center
        .iter()
        .map(|&c| c + rng.sample::<f64, _>(StandardNormal))
        .collect()
}

pub fn event_id(i: usize) -> String {
    format!("ev{i:06}")
}

pub fn generate(cfg: &SynthConfig) -> Result<Dataset> {
    generate_with(cfg, Execution::default())
}

pub fn generate_with(cfg: &SynthConfig, exec: Execution) -> Result<Dataset> {
    cfg.validate()?;
    let centers = cfg.centers();
    let class_dist =
        WeightedIndex::new(cfg.class_probabilities()).map_err(|e| Error::config("class_frequencies", e.to_string()))?;
    let size_dist =
        WeightedIndex::new(cfg.images_per_event).map_err(|e| Error::config("images_per_event", e.to_string()))?;
    let count_dists: Vec<WeightedIndex<f64>> = (0..cfg.n_classes)
        .map(|c| WeightedIndex::new(cfg.count_distribution(c)).expect("positive weights"))
        .collect();
    let empty_center = &centers[cfg.n_classes];

    let events = par::map_range(exec, cfg.n_events, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(i as u64 + 1);
        let empty = rng.random_bool(cfg.empty_fraction);
        let n_images = size_dist.sample(&mut rng) + 1;
        let label = if empty {
            LabelSet::empty()
        } else {
            let c = class_dist.sample(&mut rng);
            let count = CountBin(count_dists[c].sample(&mut rng));
            let mut flags = [false; ATTRIBUTES];
            for (f, &p) in flags.iter_mut().zip(&cfg.attribute_rates) {
                *f = rng.random_bool(p);
            }
            LabelSet::animal(SpeciesId(c), count, Some(AttributeSet::from_array(flags)))
        };
        let id = event_id(i);
        let images = (0..n_images)
            .map(|j| {
                let center = match label.species {
                    Some(SpeciesId(c)) if !rng.random_bool(cfg.noise_rate) => &centers[c],
                    _ => empty_center,
                };
                ImageRecord {
                    image_id: format!("{id}_{j}"),
                    event_id: id.clone(),
                    features: gaussian_around(center, &mut rng),
                    label: None,
                }
            })
            .collect();
        CaptureEvent::new(id, label, images)
    });
    Dataset::new(Taxonomy::numbered(cfg.n_classes)?, events)
}

fn nearest(features: &[f64], centers: &[Vec<f64>]) -> usize {
    let dist = |c: &Vec<f64>| -> f64 { c.iter().zip(features).map(|(a, b)| (a - b) * (a - b)).sum() };
    let mut best = 0;
    let mut best_d = dist(&centers[0]);
    for (i, c) in centers.iter().enumerate().skip(1) {
        let d = dist(c);
        // Equal up to rounding counts as a tie, which keeps the lower id.
        if d < best_d && (best_d - d) > 1e-9 * best_d.max(1e-300) {
            best = i;
            best_d = d;
        }
    }
    best
}

/// Nearest species center: the Bayes-optimal species under the generator.
pub fn oracle_label(features: &[f64], cfg: &SynthConfig) -> Result<SpeciesId> {
    if features.len() != cfg.feature_dim {
        return Err(Error::DimensionMismatch {
            expected: cfg.feature_dim,
            actual: features.len(),
        });
    }
    let mut centers = cfg.centers();
    centers.truncate(cfg.n_classes);
    Ok(SpeciesId(nearest(features, &centers)))
}

/// Nearest center including the empty one; `None` means "looks empty".
pub fn oracle_detect(features: &[f64], cfg: &SynthConfig) -> Result<Option<SpeciesId>> {
    if features.len() != cfg.feature_dim {
        return Err(Error::DimensionMismatch {
            expected: cfg.feature_dim,
            actual: features.len(),
        });
    }
    let i = nearest(features, &cfg.centers());
    Ok((i < cfg.n_classes).then_some(SpeciesId(i)))
}
