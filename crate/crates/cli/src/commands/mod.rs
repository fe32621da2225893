//! One module per subcommand, plus the helpers they share.

pub mod eval;
pub mod report;
pub mod sweep;
pub mod synth;
pub mod train;

use std::path::{Path, PathBuf};

use camtrap_core::io::write_atomic;
use camtrap_core::manifest::{filter_single_species, load_manifest, split_by_event, split_by_hint, Dataset, SplitSpec};
use log::info;
use serde::Serialize;

use crate::{CliError, RunConfig};

pub struct Ctx {
    pub cfg: RunConfig,
    pub out: PathBuf,
}

impl Ctx {
    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    pub fn write(&self, name: &str, contents: &str) -> Result<PathBuf, CliError> {
        let p = self.path(name);
        write_atomic(&p, contents.as_bytes())?;
        Ok(p)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(camtrap_core::Error::from)?;
        text.push('\n');
        self.write(name, &text)
    }

    /// Records the resolved config of `command` next to its outputs.
    pub fn write_resolved(&self, command: &str) -> Result<(), CliError> {
        self.write(&format!("{command}.config.toml"), &self.cfg.to_toml()?)?;
        Ok(())
    }

    pub fn load_dataset(&self) -> Result<Dataset, CliError> {
        let path = self.cfg.manifest_path(&self.out);
        let d = load_manifest(&path)?;
        let (d, report) = filter_single_species(&d);
        if report.removed_events > 0 {
            info!(
                "dropped {} multi-species events ({:.2}%)",
                report.removed_events,
                100.0 * report.removed_fraction()
            );
        }
        Ok(d)
    }

    /// Manifest split hints when every event has one; otherwise the seeded
    /// event-level split.
    pub fn split(&self, d: &Dataset) -> Result<(Dataset, Dataset), CliError> {
        if let Some(s) = split_by_hint(d) {
            return Ok(s);
        }
        Ok(split_by_event(
            d,
            &SplitSpec {
                train_fraction: self.cfg.train_fraction,
                seed: self.cfg.seed,
            },
        )?)
    }
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| camtrap_core::Error::io(path, e))?;
    Ok(serde_json::from_str(&text).map_err(camtrap_core::Error::from)?)
}

pub(crate) fn pct(x: f64) -> String {
    format!("{:.1}%", 100.0 * x)
}
