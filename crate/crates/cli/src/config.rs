use std::path::Path;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;

/// Flat key/value defaults read from `--config`. Command-line flags win.
#[derive(Debug, Default)]
pub struct Defaults(toml::Table);

impl Defaults {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let table = text.parse::<toml::Table>().with_context(|| format!("parsing {}", path.display()))?;
        Ok(Self(table))
    }

    /// Fills `slot` from the file when the flag was not given.
    pub fn fill<T: DeserializeOwned>(&self, slot: &mut Option<T>, key: &str) -> Result<()> {
        if slot.is_none() {
            if let Some(v) = self.0.get(key).or_else(|| self.0.get(&key.replace('_', "-"))) {
                *slot = Some(v.clone().try_into().with_context(|| format!("config key {key:?}"))?);
            }
        }
        Ok(())
    }
}
