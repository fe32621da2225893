use log::debug;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::{Dense, Gradients, Network};
use super::{Example, HeadLayout};
use crate::domain::argmax;
use crate::error::{Error, Result};
use crate::imbalance::{BatchSource, ClassWeights, ExampleOutcome};
use crate::par::{self, Execution};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    /// Inclusive, 1-based.
    pub first_epoch: usize,
    pub last_epoch: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub momentum: f64,
    pub epochs: usize,
    /// Optimizer steps (base batches) per epoch.
    pub epoch_size: usize,
    pub schedule: Vec<ScheduleEntry>,
    pub grad_clamp: Option<f64>,
    pub seed: u64,
    pub hidden: Vec<usize>,
}

/// Learning-rate / weight-decay phases as `(last epoch of 55, lr, wd)`.
const PUBLISHED_PHASES: [(usize, f64, f64); 5] = [
    (18, 0.01, 0.0005),
    (29, 0.005, 0.0005),
    (43, 0.001, 0.0),
    (52, 0.0005, 0.0),
    (55, 0.0001, 0.0),
];

impl Default for TrainConfig {
    fn default() -> Self {
        Self::published()
    }
}

impl TrainConfig {
    /// The full-scale recipe: 55 epochs of 5900 batches of 128.
    pub fn published() -> Self {
        Self {
            batch_size: 128,
            momentum: 0.9,
            epochs: 55,
            epoch_size: 5900,
            schedule: Self::phased(55, 1.0),
            grad_clamp: None,
            seed: 0,
            hidden: vec![256, 128],
        }
    }

    /// The same five-phase policy stretched over `epochs`, with every learning
    /// rate multiplied by `base_lr / 0.01`.
    pub fn scaled(epochs: usize, epoch_size: usize, base_lr: f64) -> Self {
        Self {
            epochs,
            epoch_size,
            schedule: Self::phased(epochs, base_lr / PUBLISHED_PHASES[0].1),
            hidden: vec![64, 32],
            ..Self::published()
        }
    }

    fn phased(epochs: usize, lr_factor: f64) -> Vec<ScheduleEntry> {
        let mut out: Vec<ScheduleEntry> = Vec::new();
        let mut first = 1;
        for &(end, lr, wd) in &PUBLISHED_PHASES {
            let last = ((end as f64 / 55.0) * epochs as f64).round() as usize;
            let last = if out.is_empty() { last.max(1) } else { last }.min(epochs);
            if last < first {
                continue;
            }
            out.push(ScheduleEntry {
                first_epoch: first,
                last_epoch: last,
                learning_rate: lr * lr_factor,
                weight_decay: wd,
            });
            first = last + 1;
        }
        if let Some(e) = out.last_mut() {
            e.last_epoch = epochs;
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be positive"));
        }
        if self.epoch_size == 0 {
            return Err(Error::config("epoch_size", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum", "must lie in [0, 1)"));
        }
        if let Some(c) = self.grad_clamp {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::config("grad_clamp", "must be positive"));
            }
        }
        if self.hidden.contains(&0) {
            return Err(Error::config("hidden", "layer sizes must be positive"));
        }
        let mut next = 1;
        for e in &self.schedule {
            if e.first_epoch != next || e.last_epoch < e.first_epoch {
                return Err(Error::config("schedule", format!("gap or overlap at epoch {next}")));
            }
            if !(e.learning_rate >= 0.0 && e.learning_rate.is_finite()) {
                return Err(Error::config(
                    "schedule",
                    "learning rates must be finite and non-negative",
                ));
            }
            if !(e.weight_decay >= 0.0 && e.weight_decay.is_finite()) {
                return Err(Error::config(
                    "schedule",
                    "weight decay must be finite and non-negative",
                ));
            }
            next = e.last_epoch + 1;
        }
        if next != self.epochs + 1 {
            return Err(Error::config(
                "schedule",
                format!("must cover epochs 1..={}", self.epochs),
            ));
        }
        Ok(())
    }

    pub fn phase(&self, epoch: usize) -> Option<&ScheduleEntry> {
        self.schedule
            .iter()
            .find(|e| (e.first_epoch..=e.last_epoch).contains(&epoch))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub mean_loss: f64,
    /// Top-1 on the base batches, measured before each update.
    pub train_top1: f64,
    pub test_top1: f64,
    pub extra_batches: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestSnapshot {
    pub epoch: usize,
    pub test_top1: f64,
    pub network: Network,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub network: Network,
    pub velocity: Vec<Dense>,
    pub epoch: usize,
    pub best: Option<BestSnapshot>,
    pub history: Vec<EpochRecord>,
}

impl ModelState {
    /// Fresh network initialised from `cfg.seed`.
    pub fn new(input_dim: usize, layout: HeadLayout, cfg: &TrainConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Ok(Self::from_network(Network::new(
            input_dim,
            &cfg.hidden,
            layout,
            &mut rng,
        )?))
    }

    pub fn from_network(network: Network) -> Self {
        let velocity = Gradients::zeros_like(&network).layers;
        Self {
            network,
            velocity,
            epoch: 0,
            best: None,
            history: Vec::new(),
        }
    }

    /// The best snapshot's network, or the current one before any epoch.
    pub fn best_network(&self) -> &Network {
        self.best.as_ref().map_or(&self.network, |b| &b.network)
    }

    fn apply(&mut self, grads: &Gradients, lr: f64, wd: f64, momentum: f64) {
        for ((layer, v), g) in self
            .network
            .layers_mut()
            .iter_mut()
            .zip(&mut self.velocity)
            .zip(&grads.layers)
        {
            ndarray::Zip::from(&mut v.weights)
                .and(&g.weights)
                .and(&layer.weights)
                .for_each(|v, &g, &w| *v = momentum * *v - lr * (g + wd * w));
            ndarray::Zip::from(&mut v.bias)
                .and(&g.bias)
                .for_each(|v, &g| *v = momentum * *v - lr * g);
            layer.weights += &v.weights;
            layer.bias += &v.bias;
        }
    }
}

/// Fraction of `examples` whose primary-head argmax equals the primary target.
pub fn top1_accuracy(net: &Network, examples: &[Example], exec: Execution) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::EmptyInput("no evaluation examples".into()));
    }
    let hits = par::map_chunks(exec, examples, 256, |_, chunk| -> Result<usize> {
        let xs: Vec<Vec<f64>> = chunk.iter().map(|e| e.features.clone()).collect();
        let preds = net.predict_batch_with(&xs, Execution::Sequential)?;
        Ok(preds
            .iter()
            .zip(chunk)
            .filter(|(p, e)| Some(argmax(&p.primary())) == e.target.primary())
            .count())
    });
    let mut total = 0;
    for h in hits {
        total += h?;
    }
    Ok(total as f64 / examples.len() as f64)
}

/// Sets the species-head loss weight of every example to the weight of its
/// primary class, or every head's weight when `all_heads` is set.
pub fn apply_class_weights(examples: &mut [Example], weights: &ClassWeights, all_heads: bool) -> Result<()> {
    for e in examples {
        let c = e.target.primary().ok_or(Error::MissingLabel("species"))?;
        if c >= weights.len() {
            return Err(Error::OutOfRange(format!("class {c} has no weight")));
        }
        let w = weights.get(c);
        if all_heads {
            e.target.weights.iter_mut().for_each(|x| *x = w);
        } else {
            e.target.weights[0] = w;
        }
    }
    Ok(())
}

pub fn fit(
    state: ModelState,
    train: &[Example],
    test: &[Example],
    cfg: &TrainConfig,
    sampler: &mut dyn BatchSource,
) -> Result<ModelState> {
    fit_with(state, train, test, cfg, sampler, Execution::default())
}

/// SGD with momentum over `cfg.epochs` epochs of `cfg.epoch_size` steps.
/// Every batch of a step (base plus emphasis extras) gets its own update. The
/// best snapshot changes only on strictly higher test top-1.
pub fn fit_with(
    mut state: ModelState,
    train: &[Example],
    test: &[Example],
    cfg: &TrainConfig,
    sampler: &mut dyn BatchSource,
    exec: Execution,
) -> Result<ModelState> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyInput("no training examples".into()));
    }
    if test.is_empty() {
        return Err(Error::EmptyInput("no test examples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);

    let start = state.epoch + 1;
    for epoch in start..=cfg.epochs {
        let phase = *cfg.phase(epoch).expect("validated schedule");
        let mut loss_sum = 0.0;
        let mut batches_seen = 0usize;
        let mut base_hits = 0usize;
        let mut base_seen = 0usize;
        let mut extras = 0usize;

        for step in 0..cfg.epoch_size {
            let batches = sampler.next_batches(&mut rng, cfg.batch_size);
            extras += batches.len().saturating_sub(1);
            for (b, idx) in batches.iter().enumerate() {
                if idx.is_empty() {
                    continue;
                }
                let mut refs = Vec::with_capacity(idx.len());
                for &i in idx {
                    refs.push(
                        train
                            .get(i)
                            .ok_or_else(|| Error::OutOfRange(format!("batch index {i}")))?,
                    );
                }
                let result = match state.network.gradients_with(&refs, cfg.grad_clamp, exec) {
                    Ok(r) => r,
                    Err(Error::Numeric(_)) => return Err(Error::Diverged { epoch, batch: step }),
                    Err(e) => return Err(e),
                };
                if !result.mean_loss.is_finite() {
                    return Err(Error::Diverged { epoch, batch: step });
                }
                if b == 0 {
                    let outcomes: Vec<ExampleOutcome> = idx
                        .iter()
                        .zip(&result.outcomes)
                        .map(|(&index, &(top1_correct, top5_correct))| ExampleOutcome {
                            index,
                            top1_correct,
                            top5_correct,
                        })
                        .collect();
                    base_hits += outcomes.iter().filter(|o| o.top1_correct).count();
                    base_seen += outcomes.len();
                    sampler.observe(&outcomes);
                }
                loss_sum += result.mean_loss;
                batches_seen += 1;
                state.apply(&result.gradients, phase.learning_rate, phase.weight_decay, cfg.momentum);
            }
        }
        if !state.network.all_finite() {
            return Err(Error::Diverged {
                epoch,
                batch: cfg.epoch_size.saturating_sub(1),
            });
        }

        let test_top1 = top1_accuracy(&state.network, test, exec)?;
        let record = EpochRecord {
            epoch,
            learning_rate: phase.learning_rate,
            weight_decay: phase.weight_decay,
            mean_loss: loss_sum / batches_seen.max(1) as f64,
            train_top1: base_hits as f64 / base_seen.max(1) as f64,
            test_top1,
            extra_batches: extras,
        };
        debug!(
            "epoch {epoch}: loss {:.4} train {:.4} test {:.4}",
            record.mean_loss, record.train_top1, record.test_top1
        );
        state.history.push(record);
        state.epoch = epoch;
        if state.best.as_ref().is_none_or(|b| test_top1 > b.test_top1) {
            state.best = Some(BestSnapshot {
                epoch,
                test_top1,
                network: state.network.clone(),
            });
        }
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn published_schedule_covers_all_epochs() {
        let cfg = TrainConfig::published();
        cfg.validate().unwrap();
        assert_eq!(cfg.schedule[0].first_epoch, 1);
        assert_eq!(cfg.schedule[0].last_epoch, 18);
        assert_eq!(cfg.schedule[0].learning_rate, 0.01);
        assert_eq!(cfg.schedule[0].weight_decay, 0.0005);
        assert_eq!(cfg.schedule[2].weight_decay, 0.0);
        assert_eq!(cfg.schedule.last().unwrap().last_epoch, 55);
        assert_eq!(cfg.phase(53).unwrap().learning_rate, 0.0001);
    }

    #[test]
    fn scaled_schedule_is_valid() {
        for epochs in 1..=60 {
            let cfg = TrainConfig::scaled(epochs, 10, 0.05);
            cfg.validate().unwrap();
            assert_eq!(cfg.schedule[0].learning_rate, 0.05);
        }
    }

    #[test]
    fn invalid_configs() {
        let mut cfg = TrainConfig::scaled(10, 5, 0.1);
        cfg.schedule[1].first_epoch += 1;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::scaled(10, 5, 0.1);
        cfg.grad_clamp = Some(0.0);
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::scaled(10, 5, 0.1);
        cfg.epochs = 11;
        assert!(cfg.validate().is_err());
    }
}
