//! JSON config files that mirror the command-line flags.
//!
//! A config file is a JSON object whose keys are flag names (with `-` or
//! `_`). Flags given on the command line override the file.

use std::path::Path;

use clap::Args;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::CliError;

/// Overlays the flags that were set in `args` on top of the config file.
pub fn merge<T>(args: &T, config: Option<&Path>) -> Result<T, CliError>
where
    T: Serialize + DeserializeOwned + Args,
{
    let Some(path) = config else { return Ok(clone_via_json(args)) };
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let file: Value = serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let Value::Object(file) = file else {
        return Err(CliError::Usage(format!("{}: config must be a JSON object", path.display())));
    };

    let known: Vec<String> = T::augment_args(clap::Command::new("args"))
        .get_arguments().map(|a| a.get_id().as_str().to_owned()).collect();
    let mut merged = Map::new();
    for (key, value) in file {
        let key = key.replace('-', "_");
        if key == "config" || !known.contains(&key) {
            return Err(CliError::Usage(format!("{}: unknown config key {key:?}", path.display())));
        }
        merged.insert(key, value);
    }
    if let Value::Object(flags) = serde_json::to_value(args).expect("arguments serialize") {
        for (key, value) in flags {
            if !value.is_null() {
                merged.insert(key, value);
            }
        }
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn clone_via_json<T: Serialize + DeserializeOwned>(args: &T) -> T {
    serde_json::from_value(serde_json::to_value(args).expect("arguments serialize")).expect("arguments round-trip")
}
