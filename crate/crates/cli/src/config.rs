//! The flat run configuration, its file/environment layering and the
//! conversions into library configs.

use std::path::{Path, PathBuf};

use camtrap_core::domain::ATTRIBUTES;
use camtrap_core::imbalance::{ImbalanceMethod, DEFAULT_TOP1_FEED_PROBABILITY, DEFAULT_TOP5_FEED_PROBABILITY};
use camtrap_core::model::{ScheduleEntry, TrainConfig};
use camtrap_core::synthgen::{SynthConfig, DEFAULT_ATTRIBUTE_RATES};
use camtrap_core::threshold::{default_grid, LaborModel};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Prefix of environment variables that override config keys, e.g.
/// `CAMTRAP_EPOCHS=10`.
pub const ENV_PREFIX: &str = "CAMTRAP_";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Stage1,
    Stage2,
    OneStage,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Stage1 => "stage1",
            Stage::Stage2 => "stage2",
            Stage::OneStage => "one_stage",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountMetric {
    Top1,
    WithinOneBin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,

    // data
    pub manifest: Option<PathBuf>,
    pub n_classes: usize,
    pub feature_dim: usize,
    pub imbalance_exponent: f64,
    pub class_frequencies: Option<Vec<f64>>,
    pub empty_fraction: f64,
    pub images_per_event: [f64; 3],
    pub noise_rate: f64,
    pub n_events: usize,
    pub class_separation: f64,
    pub attribute_rates: [f64; ATTRIBUTES],
    pub train_fraction: f64,

    // training
    pub stage: Stage,
    pub imbalance: ImbalanceMethod,
    pub weight_all_heads: bool,
    pub p_top1: f64,
    pub p_top5: f64,
    pub ensemble_members: usize,
    pub batch_size: usize,
    pub momentum: f64,
    pub epochs: usize,
    pub epoch_size: usize,
    pub base_learning_rate: f64,
    pub schedule: Option<Vec<ScheduleEntry>>,
    pub grad_clamp: Option<f64>,
    pub hidden: Vec<usize>,

    // evaluation and thresholds
    pub checkpoints: Option<Vec<PathBuf>>,
    pub stage1_predictions: Option<PathBuf>,
    pub stage2_predictions: Option<PathBuf>,
    pub human_accuracy: f64,
    pub empty_detection_human_accuracy: f64,
    pub count_human_accuracy: f64,
    pub count_metric: CountMetric,
    pub thresholds: Option<Vec<f64>>,
    pub automation_empty_share: Option<f64>,
    pub stage1_auto_fraction: Option<f64>,
    pub stage2_species_auto_fraction: Option<f64>,
    pub stage2_count_auto_fraction: Option<f64>,
    pub labor_baseline_hours: f64,
    pub labor_baseline_images: u64,
    pub labor_corpus_images: u64,
    pub labor_hours_per_week: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let synth = SynthConfig::default();
        let labor = LaborModel::default();
        Self {
            seed: 0,
            manifest: None,
            n_classes: synth.n_classes,
            feature_dim: synth.feature_dim,
            imbalance_exponent: synth.imbalance_exponent,
            class_frequencies: None,
            empty_fraction: synth.empty_fraction,
            images_per_event: synth.images_per_event,
            noise_rate: synth.noise_rate,
            n_events: synth.n_events,
            class_separation: synth.class_separation,
            attribute_rates: DEFAULT_ATTRIBUTE_RATES,
            train_fraction: 0.8,
            stage: Stage::Stage1,
            imbalance: ImbalanceMethod::None,
            weight_all_heads: false,
            p_top1: DEFAULT_TOP1_FEED_PROBABILITY,
            p_top5: DEFAULT_TOP5_FEED_PROBABILITY,
            ensemble_members: 1,
            batch_size: 128,
            momentum: 0.9,
            epochs: 20,
            epoch_size: 25,
            base_learning_rate: 0.05,
            schedule: None,
            grad_clamp: None,
            hidden: vec![64, 32],
            checkpoints: None,
            stage1_predictions: None,
            stage2_predictions: None,
            human_accuracy: 0.966,
            empty_detection_human_accuracy: 0.966,
            count_human_accuracy: 0.90,
            count_metric: CountMetric::Top1,
            thresholds: None,
            automation_empty_share: None,
            stage1_auto_fraction: None,
            stage2_species_auto_fraction: None,
            stage2_count_auto_fraction: None,
            labor_baseline_hours: labor.baseline_hours,
            labor_baseline_images: labor.baseline_images,
            labor_corpus_images: labor.corpus_images,
            labor_hours_per_week: labor.hours_per_week,
        }
    }
}

fn parse_env_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

impl RunConfig {
    /// Defaults, then the config file, then `CAMTRAP_*` variables, then an
    /// explicit seed.
    pub fn load(
        path: Option<&Path>,
        env: impl IntoIterator<Item = (String, String)>,
        seed: Option<u64>,
    ) -> Result<Self, CliError> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        let mut env: Vec<(String, String)> = env
            .into_iter()
            .filter_map(|(k, v)| k.strip_prefix(ENV_PREFIX).map(|k| (k.to_ascii_lowercase(), v)))
            .collect();
        env.sort();
        for (k, v) in env {
            table.insert(k, parse_env_value(&v));
        }
        if let Some(s) = seed {
            let s = i64::try_from(s).map_err(|_| CliError::Usage("seed must fit in 63 bits".into()))?;
            table.insert("seed".into(), toml::Value::Integer(s));
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Usage(format!("config: {}", e.message())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |field: &str, msg: &str| Err(CliError::Usage(format!("invalid config field `{field}`: {msg}")));
        if self.ensemble_members == 0 {
            return bad("ensemble_members", "must be at least 1");
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad("train_fraction", "must lie in (0, 1)");
        }
        for (name, v) in [
            ("human_accuracy", self.human_accuracy),
            ("empty_detection_human_accuracy", self.empty_detection_human_accuracy),
            ("count_human_accuracy", self.count_human_accuracy),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(name, "must lie in [0, 1]");
            }
        }
        for (name, v) in [
            ("automation_empty_share", self.automation_empty_share),
            ("stage1_auto_fraction", self.stage1_auto_fraction),
            ("stage2_species_auto_fraction", self.stage2_species_auto_fraction),
            ("stage2_count_auto_fraction", self.stage2_count_auto_fraction),
        ] {
            if v.is_some_and(|v| !(0.0..=1.0).contains(&v)) {
                return bad(name, "must lie in [0, 1]");
            }
        }
        self.synth().validate()?;
        self.train_config(self.seed).validate()?;
        self.labor().validate()?;
        Ok(())
    }

    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            n_classes: self.n_classes,
            feature_dim: self.feature_dim,
            imbalance_exponent: self.imbalance_exponent,
            class_frequencies: self.class_frequencies.clone(),
            empty_fraction: self.empty_fraction,
            images_per_event: self.images_per_event,
            noise_rate: self.noise_rate,
            n_events: self.n_events,
            seed: self.seed,
            class_separation: self.class_separation,
            attribute_rates: self.attribute_rates,
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let scaled = TrainConfig::scaled(self.epochs, self.epoch_size, self.base_learning_rate);
        TrainConfig {
            batch_size: self.batch_size,
            momentum: self.momentum,
            schedule: self.schedule.clone().unwrap_or(scaled.schedule),
            grad_clamp: self.grad_clamp,
            seed,
            hidden: self.hidden.clone(),
            ..scaled
        }
    }

    pub fn labor(&self) -> LaborModel {
        LaborModel {
            baseline_hours: self.labor_baseline_hours,
            baseline_images: self.labor_baseline_images,
            corpus_images: self.labor_corpus_images,
            hours_per_week: self.labor_hours_per_week,
        }
    }

    pub fn grid(&self) -> Vec<f64> {
        self.thresholds.clone().unwrap_or_else(default_grid)
    }

    pub fn manifest_path(&self, out: &Path) -> PathBuf {
        self.manifest.clone().unwrap_or_else(|| out.join("manifest.jsonl"))
    }

    /// Resolved config as TOML, headed by the tool version.
    pub fn to_toml(&self) -> Result<String, CliError> {
        let body = toml::to_string(self).map_err(|e| CliError::Usage(format!("config: {e}")))?;
        Ok(format!("# camtrap {}\n{body}", env!("CARGO_PKG_VERSION")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn defaults_validate() {
        let c = RunConfig::load(None, Vec::new(), None).unwrap();
        assert_eq!(c, RunConfig::default());
    }

    #[test]
    fn layering_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "epochs = 7\nseed = 1\nstage = \"stage2\"\n").unwrap();
        let c = RunConfig::load(
            Some(&p),
            env(&[
                ("CAMTRAP_EPOCHS", "9"),
                ("CAMTRAP_IMBALANCE", "emphasis"),
                ("OTHER", "x"),
            ]),
            Some(4),
        )
        .unwrap();
        assert_eq!(c.epochs, 9);
        assert_eq!(c.seed, 4);
        assert_eq!(c.stage, Stage::Stage2);
        assert_eq!(c.imbalance, ImbalanceMethod::Emphasis);
    }

    #[test]
    fn unknown_keys_rejected() {
        let e = RunConfig::load(None, env(&[("CAMTRAP_EPOCS", "3")]), None).unwrap_err();
        assert!(matches!(e, CliError::Usage(m) if m.contains("epocs")));
    }

    #[test]
    fn resolved_config_round_trips() {
        let c = RunConfig {
            schedule: Some(TrainConfig::scaled(20, 25, 0.05).schedule),
            thresholds: Some(vec![0.0, 0.5]),
            ..RunConfig::default()
        };
        let text = c.to_toml().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.toml");
        std::fs::write(&p, text).unwrap();
        assert_eq!(RunConfig::load(Some(&p), Vec::new(), None).unwrap(), c);
    }
}
