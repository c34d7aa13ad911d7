//! Flat `key=value` configuration files.
//!
//! One key per line, `#` starts a comment. Every key is required; there are
//! no implicit defaults.

use crate::model::{ConfigError, SimConfig};

pub const CONFIG_KEYS: [&str; 11] = [
    "num_threads",
    "pipeline_depth",
    "fetch_width",
    "window_capacity",
    "window_T",
    "threshold_H",
    "hysteresis_enabled",
    "policy",
    "predictor",
    "max_cycles",
    "seed",
];

pub fn format_config(cfg: &SimConfig) -> String {
    let mut out = String::new();
    for key in CONFIG_KEYS {
        out.push_str(key);
        out.push('=');
        out.push_str(&format_value(cfg, key));
        out.push('\n');
    }
    out
}

fn format_value(cfg: &SimConfig, key: &str) -> String {
    match key {
        "num_threads" => cfg.num_threads.to_string(),
        "pipeline_depth" => cfg.pipeline_depth.to_string(),
        "fetch_width" => cfg.fetch_width.to_string(),
        "window_capacity" => cfg.window_capacity.to_string(),
        "window_T" => cfg.window_t.to_string(),
        // Display for f64 is the shortest string that parses back to the same bits.
        "threshold_H" => cfg.threshold_h.to_string(),
        "hysteresis_enabled" => cfg.hysteresis_enabled.to_string(),
        "policy" => cfg.policy.to_string(),
        "predictor" => cfg.predictor.to_string(),
        "max_cycles" => cfg.max_cycles.to_string(),
        "seed" => cfg.seed.to_string(),
        _ => unreachable!("not a config key: {key}"),
    }
}

/// Canonical rendering of one field, as used in sweep output columns.
pub fn config_value(cfg: &SimConfig, key: &str) -> Option<String> {
    CONFIG_KEYS.contains(&key).then(|| format_value(cfg, key))
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| ConfigError::BadValue {
        key: key.into(),
        reason: format!("`{value}`: {e}"),
    })
}

/// Sets one field from its text form. Does not validate the whole config.
pub fn set_field(cfg: &mut SimConfig, key: &str, value: &str) -> Result<(), ConfigError> {
    let value = value.trim();
    match key {
        "num_threads" => cfg.num_threads = parse_num(key, value)?,
        "pipeline_depth" => cfg.pipeline_depth = parse_num(key, value)?,
        "fetch_width" => cfg.fetch_width = parse_num(key, value)?,
        "window_capacity" => cfg.window_capacity = parse_num(key, value)?,
        "window_T" => cfg.window_t = parse_num(key, value)?,
        "threshold_H" => {
            let h: f64 = parse_num(key, value)?;
            if h.is_nan() {
                return Err(ConfigError::BadValue {
                    key: key.into(),
                    reason: "NaN is not a threshold".into(),
                });
            }
            cfg.threshold_h = h;
        }
        "hysteresis_enabled" => {
            cfg.hysteresis_enabled = match value {
                "true" => true,
                "false" => false,
                _ => {
                    return Err(ConfigError::BadValue {
                        key: key.into(),
                        reason: format!("`{value}` is not true/false"),
                    })
                }
            }
        }
        "policy" => cfg.policy = value.parse()?,
        "predictor" => cfg.predictor = value.parse()?,
        "max_cycles" => cfg.max_cycles = parse_num(key, value)?,
        "seed" => cfg.seed = parse_num(key, value)?,
        other => return Err(ConfigError::UnknownKey(other.into())),
    }
    Ok(())
}

pub fn parse_config(text: &str) -> Result<SimConfig, ConfigError> {
    let mut cfg = SimConfig::default();
    let mut seen = [false; CONFIG_KEYS.len()];
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line: idx + 1,
            reason: format!("expected key=value, got `{line}`"),
        })?;
        let key = key.trim();
        let slot = CONFIG_KEYS
            .iter()
            .position(|k| *k == key)
            .ok_or_else(|| ConfigError::UnknownKey(key.into()))?;
        if seen[slot] {
            return Err(ConfigError::DuplicateKey(key.into()));
        }
        seen[slot] = true;
        set_field(&mut cfg, key, value)?;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(ConfigError::MissingKey(CONFIG_KEYS[missing].into()));
    }
    cfg.validate()
}
