//! Line-oriented `key=value` run configuration with dotted keys.
//!
//! ```text
//! # comments and blank lines are ignored
//! backbone.kind=lightgcn
//! backbone.dim=64
//! train.variant=full
//! ```

use std::fmt::Write as _;
use std::path::Path;

use civrec_core::data::SyntheticSpec;
use civrec_core::trainer::TrainConfig;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown config key {key:?}{}", line_note(*line))]
    UnknownKey { key: String, line: Option<usize> },
    #[error("bad value {value:?} for {key}: {msg}")]
    BadValue { key: String, value: String, msg: String },
    #[error("line {line}: expected key=value")]
    Syntax { line: usize },
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn line_note(line: Option<usize>) -> String {
    line.map(|l| format!(" at line {l}")).unwrap_or_default()
}

/// Every recognised key, in canonical order.
pub const KEYS: [&str; 22] = [
    "backbone.kind",
    "backbone.dim",
    "backbone.layers",
    "backbone.init_std",
    "csem.hidden",
    "csem.logvar_init",
    "decompose.alpha",
    "decompose.epsilon",
    "train.variant",
    "train.lr",
    "train.batch_size",
    "train.epochs",
    "train.seed",
    "train.ips_cap",
    "train.eval_every",
    "synthetic.users",
    "synthetic.items",
    "synthetic.latent_dim",
    "synthetic.confounder_strength",
    "synthetic.exposure_skew",
    "synthetic.positives_per_user",
    "synthetic.seed",
];

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub synthetic: SyntheticSpec,
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        msg: e.to_string(),
    })
}

impl RunConfig {
    /// Defaults overlaid with the entries of `text`.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut c = RunConfig::default();
        c.merge(text)?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        RunConfig::parse(&text)
    }

    pub fn merge(&mut self, text: &str) -> Result<(), ConfigError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: n + 1 })?;
            self.set(k.trim(), v.trim()).map_err(|e| match e {
                ConfigError::UnknownKey { key, .. } => ConfigError::UnknownKey { key, line: Some(n + 1) },
                other => other,
            })?;
        }
        Ok(())
    }

    /// Applies one `key=value` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<(), ConfigError> {
        let (k, v) = pair.split_once('=').ok_or(ConfigError::Syntax { line: 0 })?;
        self.set(k.trim(), v.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let t = &mut self.train;
        let s = &mut self.synthetic;
        match key {
            "backbone.kind" => t.backbone.kind = parse(key, value)?,
            "backbone.dim" => t.backbone.dim = parse(key, value)?,
            "backbone.layers" => t.backbone.layers = parse(key, value)?,
            "backbone.init_std" => t.backbone.init_std = parse(key, value)?,
            "csem.hidden" => t.hidden = parse(key, value)?,
            "csem.logvar_init" => t.logvar_init = parse(key, value)?,
            "decompose.alpha" => t.decompose.alpha = parse(key, value)?,
            "decompose.epsilon" => t.decompose.epsilon = parse(key, value)?,
            "train.variant" => t.variant = parse(key, value)?,
            "train.lr" => t.lr = parse(key, value)?,
            "train.batch_size" => t.batch_size = parse(key, value)?,
            "train.epochs" => t.epochs = parse(key, value)?,
            "train.seed" => t.seed = parse(key, value)?,
            "train.ips_cap" => t.ips_cap = parse(key, value)?,
            "train.eval_every" => t.eval_every = parse(key, value)?,
            "synthetic.users" => s.n_users = parse(key, value)?,
            "synthetic.items" => s.n_items = parse(key, value)?,
            "synthetic.latent_dim" => s.latent_dim = parse(key, value)?,
            "synthetic.confounder_strength" => s.confounder_strength = parse(key, value)?,
            "synthetic.exposure_skew" => s.exposure_skew = parse(key, value)?,
            "synthetic.positives_per_user" => s.positives_per_user = parse(key, value)?,
            "synthetic.seed" => s.seed = parse(key, value)?,
            _ => {
                return Err(ConfigError::UnknownKey {
                    key: key.to_string(),
                    line: None,
                })
            }
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let t = &self.train;
        let s = &self.synthetic;
        Some(match key {
            "backbone.kind" => t.backbone.kind.as_str().to_string(),
            "backbone.dim" => t.backbone.dim.to_string(),
            "backbone.layers" => t.backbone.layers.to_string(),
            "backbone.init_std" => t.backbone.init_std.to_string(),
            "csem.hidden" => t.hidden.to_string(),
            "csem.logvar_init" => t.logvar_init.to_string(),
            "decompose.alpha" => t.decompose.alpha.to_string(),
            "decompose.epsilon" => t.decompose.epsilon.to_string(),
            "train.variant" => t.variant.as_str().to_string(),
            "train.lr" => t.lr.to_string(),
            "train.batch_size" => t.batch_size.to_string(),
            "train.epochs" => t.epochs.to_string(),
            "train.seed" => t.seed.to_string(),
            "train.ips_cap" => t.ips_cap.to_string(),
            "train.eval_every" => t.eval_every.to_string(),
            "synthetic.users" => s.n_users.to_string(),
            "synthetic.items" => s.n_items.to_string(),
            "synthetic.latent_dim" => s.latent_dim.to_string(),
            "synthetic.confounder_strength" => s.confounder_strength.to_string(),
            "synthetic.exposure_skew" => s.exposure_skew.to_string(),
            "synthetic.positives_per_user" => s.positives_per_user.to_string(),
            "synthetic.seed" => s.seed.to_string(),
            _ => return None,
        })
    }

    /// Every key with its current value; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for k in KEYS {
            let _ = writeln!(out, "{k}={}", self.get(k).unwrap_or_default());
        }
        out
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.train.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.synthetic.validate().map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use civrec_core::backbone::BackboneKind;
    use civrec_core::trainer::Variant;

    #[test]
    fn defaults_when_empty() {
        let c = RunConfig::parse("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.train.decompose.alpha, 0.85);
        assert_eq!(c.train.lr, 0.001);
        assert_eq!(c.train.batch_size, 128);
    }

    #[test]
    fn parses_entries_and_comments() {
        let c = RunConfig::parse("# demo\n\nbackbone.kind = lightgcn\ntrain.variant=causal\ndecompose.alpha=0.5\n").unwrap();
        assert_eq!(c.train.backbone.kind, BackboneKind::LightGcn);
        assert_eq!(c.train.variant, Variant::CausalOnly);
        assert_eq!(c.train.decompose.alpha, 0.5);
    }

    #[test]
    fn unknown_key_is_an_error() {
        let e = RunConfig::parse("train.lr=0.01\ntrain.learning_rate=0.1\n").unwrap_err();
        assert!(matches!(e, ConfigError::UnknownKey { ref key, line: Some(2) } if key == "train.learning_rate"));
    }

    #[test]
    fn bad_value_and_syntax() {
        assert!(matches!(RunConfig::parse("backbone.dim=abc"), Err(ConfigError::BadValue { .. })));
        assert!(matches!(RunConfig::parse("just words"), Err(ConfigError::Syntax { line: 1 })));
    }

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::default();
        c.set("train.lr", "0.0123456789").unwrap();
        c.set("synthetic.confounder_strength", "4.5").unwrap();
        c.set("train.variant", "ipsc").unwrap();
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
        for k in KEYS {
            assert!(c.get(k).is_some(), "{k}");
        }
    }

    #[test]
    fn overrides_beat_file_values() {
        let mut c = RunConfig::parse("train.seed=3\n").unwrap();
        c.set_pair("train.seed=7").unwrap();
        assert_eq!(c.train.seed, 7);
    }
}
