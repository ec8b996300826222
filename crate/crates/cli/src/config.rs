//! Merging flags with a config file. Keys mirror flag names; flags win.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::CliError;

fn file_values(path: &Path) -> Result<Map<String, Value>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("reading config {}: {e}", path.display())))?;
    let value: Value = if path.extension().is_some_and(|e| e == "json") {
        let v: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("parsing {}: {e}", path.display())))?;
        // A run manifest carries the resolved flags under `config`.
        v.get("config").cloned().unwrap_or(v)
    } else {
        let t: toml::Value = toml::from_str(&text)
            .map_err(|e| CliError::Usage(format!("parsing {}: {e}", path.display())))?;
        serde_json::to_value(t).map_err(|e| CliError::Usage(e.to_string()))?
    };
    match value {
        Value::Object(m) => Ok(m),
        _ => Err(CliError::Usage(format!(
            "{} is not a table of flags",
            path.display()
        ))),
    }
}

/// Values from `config` overlaid with every flag given on the command line.
pub fn merge<T: Serialize + DeserializeOwned>(
    flags: &T,
    config: Option<&Path>,
) -> Result<T, CliError> {
    let mut merged = match config {
        Some(p) => file_values(p)?,
        None => Map::new(),
    };
    let Value::Object(given) =
        serde_json::to_value(flags).map_err(|e| CliError::Usage(e.to_string()))?
    else {
        unreachable!("flag structs serialize as objects");
    };
    for (k, v) in given {
        let unset = v.is_null() || v.as_array().is_some_and(|a| a.is_empty());
        if !unset {
            merged.insert(k, v);
        }
    }
    serde_json::from_value(Value::Object(merged))
        .map_err(|e| CliError::Usage(format!("config: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::args::{BenchArgs, Init};
    use std::io::Write;

    #[test]
    fn flags_override_file_values() {
        let mut file = tempfile::Builder::new().suffix(".toml").tempfile().unwrap();
        writeln!(
            file,
            "eps = 0.5\ncount = 7\ninit = [\"ones\", \"net\"]\nmax-iters = 40"
        )
        .unwrap();
        let flags = BenchArgs {
            eps: Some(0.25),
            ..BenchArgs::default()
        };
        let m = merge(&flags, Some(file.path())).unwrap();
        assert_eq!(m.eps, Some(0.25));
        assert_eq!(m.count, Some(7));
        assert_eq!(m.max_iters, Some(40));
        assert_eq!(m.init, vec![Init::Ones, Init::Net]);
    }

    #[test]
    fn unknown_keys_are_usage_errors() {
        let mut file = tempfile::Builder::new().suffix(".toml").tempfile().unwrap();
        writeln!(file, "epsilon = 0.5").unwrap();
        assert!(matches!(
            merge(&BenchArgs::default(), Some(file.path())),
            Err(CliError::Usage(_))
        ));
    }

    #[test]
    fn manifest_config_section_is_accepted() {
        let mut file = tempfile::Builder::new().suffix(".json").tempfile().unwrap();
        write!(
            file,
            "{{\"subcommand\": \"bench\", \"config\": {{\"count\": 3}}}}"
        )
        .unwrap();
        assert_eq!(
            merge(&BenchArgs::default(), Some(file.path()))
                .unwrap()
                .count,
            Some(3)
        );
    }
}
