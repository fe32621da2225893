use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{HeadLayout, Network, TrainConfig};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::prep::ChannelStats;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// A trained network plus everything needed to apply it to new data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub tool_version: String,
    pub layout: HeadLayout,
    pub config: TrainConfig,
    /// Per-feature normalization fitted on the training split.
    pub input_stats: Option<ChannelStats>,
    pub epoch: usize,
    pub test_top1: f64,
    pub class_names: Vec<String>,
    pub network: Network,
}

impl Checkpoint {
    pub fn new(
        network: Network,
        config: TrainConfig,
        input_stats: Option<ChannelStats>,
        epoch: usize,
        test_top1: f64,
        class_names: Vec<String>,
    ) -> Self {
        Self {
            format_version: CHECKPOINT_FORMAT_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            layout: network.layout().clone(),
            config,
            input_stats,
            epoch,
            test_top1,
            class_names,
            network,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(text)?;
        if c.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Integrity(format!(
                "checkpoint format {} is not supported (expected {})",
                c.format_version, CHECKPOINT_FORMAT_VERSION
            )));
        }
        if c.layout != *c.network.layout() {
            return Err(Error::Integrity("checkpoint layout does not match its network".into()));
        }
        c.network.check_shapes()?;
        if let Some(s) = &c.input_stats {
            if s.channels() != c.network.input_dim() || s.stddev.len() != s.mean.len() {
                return Err(Error::Integrity("input statistics do not match the network".into()));
            }
        }
        Ok(c)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), self.to_json()?.as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Normalizes raw features with the stored statistics, if any.
    pub fn prepare(&self, features: &[f64]) -> Result<Vec<f64>> {
        match &self.input_stats {
            Some(s) => s.normalize_vector(features),
            None => Ok(features.to_vec()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> Checkpoint {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = Network::new(4, &[5, 3], HeadLayout::multitask_with(3, 12, 6), &mut rng).unwrap();
        let stats = ChannelStats {
            mean: vec![0.1, 0.2, 0.3, 1.0 / 3.0],
            stddev: vec![1.0, 2.0, 0.7, 1e-3],
        };
        Checkpoint::new(
            net,
            TrainConfig::scaled(5, 3, 0.05),
            Some(stats),
            4,
            0.875,
            vec!["a".into(), "b".into(), "c".into()],
        )
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let c = sample();
        c.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, c);
        for (a, b) in back.network.layers().iter().zip(c.network.layers()) {
            for (x, y) in a.weights.iter().zip(b.weights.iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn wrong_version_is_rejected() {
        let mut c = sample();
        c.format_version = 99;
        let text = c.to_json().unwrap();
        assert!(matches!(Checkpoint::from_json(&text), Err(Error::Integrity(_))));
    }
}
