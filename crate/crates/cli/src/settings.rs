//! Resolution of command settings: defaults, then flags, then the config file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

/// Environment variable naming the directory relative outputs are placed in.
pub const OUTPUT_ROOT_VAR: &str = "RANKABR_OUTPUT_ROOT";

/// Parsed config file: one table per command name.
#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    table: toml::Table,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let table: toml::Table =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        Ok(Self { table })
    }

    /// Applies the `[command]` table on top of `settings`.
    ///
    /// Tables merge key by key; any other value replaces the flag value.
    pub fn apply<T: Serialize + DeserializeOwned>(&self, command: &str, settings: T) -> Result<T> {
        let Some(section) = self.table.get(command) else {
            return Ok(settings);
        };
        let overlay = serde_json::to_value(section)?;
        if !overlay.is_object() {
            bail!("config entry [{command}] must be a table");
        }
        let mut base = serde_json::to_value(&settings)?;
        merge(&mut base, overlay);
        serde_json::from_value(base).with_context(|| format!("invalid config in [{command}]"))
    }
}

fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Places a relative output path under the output root, when one is set.
pub fn output_path(path: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_VAR) {
        Some(root) if path.is_relative() => Path::new(&root).join(path),
        _ => path.to_path_buf(),
    }
}

/// Creates `dir` (and parents) and returns it.
pub fn ensure_dir(dir: &Path) -> Result<&Path> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

/// Writes the resolved settings next to a command's outputs.
pub fn record<T: Serialize>(dir: &Path, settings: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(settings)?;
    text.push('\n');
    let path = dir.join("settings.json");
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}
