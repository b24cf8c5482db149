//! JSON config files: top-level common keys plus one flat section per subcommand.
//! Command-line flags override file values.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::CliError;

const COMMON_KEYS: [&str; 3] = ["seed", "threads", "out-dir"];
const SECTIONS: [&str; 5] = ["generate", "fit", "select", "diagnose", "check-representation"];

#[derive(Clone, Debug, Default, Serialize, Deserialize, clap::Args)]
#[serde(default, rename_all = "kebab-case")]
pub struct Common {
    /// Seed for every random stream; required by stochastic subcommands.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; outputs do not depend on this.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// JSON config file; flags take precedence over its values.
    #[arg(long, global = true)]
    #[serde(skip_deserializing)]
    pub config: Option<PathBuf>,
    /// Directory receiving all output files.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
}

pub struct ConfigFile {
    root: Map<String, Value>,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<ConfigFile, CliError> {
        let Some(path) = path else {
            return Ok(ConfigFile { root: Map::new() });
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let root = match serde_json::from_str::<Value>(&text) {
            Ok(Value::Object(m)) => m,
            Ok(_) => return Err(CliError::Usage("config file must hold a JSON object".into())),
            Err(e) => return Err(CliError::Usage(format!("config {}: {e}", path.display()))),
        };
        if let Some(key) = root.keys().find(|k| !COMMON_KEYS.contains(&k.as_str()) && !SECTIONS.contains(&k.as_str())) {
            return Err(CliError::Usage(format!("unknown config key `{key}`")));
        }
        Ok(ConfigFile { root })
    }

    fn common_section(&self) -> Map<String, Value> {
        self.root.iter().filter(|(k, _)| COMMON_KEYS.contains(&k.as_str())).map(|(k, v)| (k.clone(), v.clone())).collect()
    }

    pub fn common(&self, flags: &Common) -> Result<Common, CliError> {
        let mut merged: Common = overlay(self.common_section(), flags, "top level")?;
        merged.config = flags.config.clone();
        Ok(merged)
    }

    pub fn section<T: Serialize + DeserializeOwned>(&self, name: &str, flags: &T) -> Result<T, CliError> {
        let base = match self.root.get(name) {
            None => Map::new(),
            Some(Value::Object(m)) => m.clone(),
            Some(_) => return Err(CliError::Usage(format!("config section `{name}` must be an object"))),
        };
        overlay(base, flags, name)
    }
}

fn overlay<T: Serialize + DeserializeOwned>(mut base: Map<String, Value>, flags: &T, name: &str) -> Result<T, CliError> {
    let Value::Object(set) = serde_json::to_value(flags).map_err(|e| CliError::Usage(e.to_string()))? else {
        unreachable!("argument structs serialize to objects");
    };
    // every field serializes, so the flag object lists all known keys
    if let Some(key) = base.keys().find(|k| !set.contains_key(*k)) {
        return Err(CliError::Usage(format!("config section `{name}`: unknown key `{key}`")));
    }
    for (k, v) in set {
        if !v.is_null() {
            base.insert(k, v);
        }
    }
    serde_json::from_value(Value::Object(base)).map_err(|e| CliError::Usage(format!("config section `{name}`: {e}")))
}
