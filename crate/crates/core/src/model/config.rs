use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use super::ModelError;
use crate::relation_repr::RelationMethod;

/// Architecture hyperparameters.
///
/// Encoder and decoder share `num_layers`. Vocabulary sizes are filled in
/// from the preprocessing artifacts.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub dropout: f64,
    pub max_len: usize,
    pub relation_method: RelationMethod,
    pub structure_aware: bool,
    pub max_path_len: usize,
    pub d_w: usize,
    pub cnn_kernel: usize,
    pub vocab_size: usize,
    pub num_labels: usize,
    pub num_features: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            num_layers: 2,
            num_heads: 4,
            d_model: 128,
            d_ff: 512,
            dropout: 0.1,
            max_len: 256,
            relation_method: RelationMethod::Sum,
            structure_aware: true,
            max_path_len: 4,
            d_w: 32,
            cnn_kernel: 4,
            vocab_size: 0,
            num_labels: 0,
            num_features: 0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ModelError> {
    value
        .trim()
        .parse()
        .map_err(|_| ModelError::Config(format!("invalid value {value:?} for {key}")))
}

pub fn parse_bool(key: &str, value: &str) -> Result<bool, ModelError> {
    match value.trim() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(ModelError::Config(format!("invalid flag {value:?} for {key}"))),
    }
}

impl ModelConfig {
    pub const KEYS: [&'static str; 14] = [
        "num_layers",
        "num_heads",
        "d_model",
        "d_ff",
        "dropout",
        "max_len",
        "relation_method",
        "structure_aware",
        "max_path_len",
        "d_w",
        "cnn_kernel",
        "vocab_size",
        "num_labels",
        "num_features",
    ];

    /// Sets one field by name. Returns `Ok(false)` for keys that belong to
    /// some other configuration.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool, ModelError> {
        match key {
            "num_layers" => self.num_layers = parse(key, value)?,
            "num_heads" => self.num_heads = parse(key, value)?,
            "d_model" => self.d_model = parse(key, value)?,
            "d_ff" => self.d_ff = parse(key, value)?,
            "dropout" => self.dropout = parse(key, value)?,
            "max_len" => self.max_len = parse(key, value)?,
            "relation_method" => {
                self.relation_method = value
                    .trim()
                    .parse()
                    .map_err(|e| ModelError::Config(format!("{e}")))?
            }
            "structure_aware" => self.structure_aware = parse_bool(key, value)?,
            "max_path_len" => self.max_path_len = parse(key, value)?,
            "d_w" => self.d_w = parse(key, value)?,
            "cnn_kernel" => self.cnn_kernel = parse(key, value)?,
            "vocab_size" => self.vocab_size = parse(key, value)?,
            "num_labels" => self.num_labels = parse(key, value)?,
            "num_features" => self.num_features = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "num_layers" => self.num_layers.to_string(),
            "num_heads" => self.num_heads.to_string(),
            "d_model" => self.d_model.to_string(),
            "d_ff" => self.d_ff.to_string(),
            "dropout" => self.dropout.to_string(),
            "max_len" => self.max_len.to_string(),
            "relation_method" => self.relation_method.to_string(),
            "structure_aware" => self.structure_aware.to_string(),
            "max_path_len" => self.max_path_len.to_string(),
            "d_w" => self.d_w.to_string(),
            "cnn_kernel" => self.cnn_kernel.to_string(),
            "vocab_size" => self.vocab_size.to_string(),
            "num_labels" => self.num_labels.to_string(),
            "num_features" => self.num_features.to_string(),
            _ => return None,
        })
    }

    pub fn d_z(&self) -> usize {
        self.d_model / self.num_heads.max(1)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.num_heads == 0 || self.d_model == 0 || !self.d_model.is_multiple_of(self.num_heads) {
            return fail("d_model must be a positive multiple of num_heads");
        }
        if self.d_ff == 0 || self.max_len == 0 {
            return fail("d_ff and max_len must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("dropout must lie in [0, 1)");
        }
        if self.vocab_size <= crate::pipeline::EOS {
            return fail("vocab_size must include the reserved tokens");
        }
        if self.structure_aware {
            if self.max_path_len == 0 || self.num_labels <= crate::pipeline::LABEL_NONE {
                return fail("structure-aware models need max_path_len and num_labels");
            }
            if self.relation_method == RelationMethod::Feature && self.num_features == 0 {
                return fail("the feature method needs num_features");
            }
        }
        Ok(())
    }

    pub fn to_map(&self) -> BTreeMap<String, String> {
        Self::KEYS
            .iter()
            .map(|k| (k.to_string(), self.get(k).expect("known key")))
            .collect()
    }

    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self, ModelError> {
        let mut c = ModelConfig::default();
        for k in Self::KEYS {
            if let Some(v) = map.get(k) {
                c.set(k, v)?;
            }
        }
        Ok(c)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.to_map() {
            writeln!(out, "{k}={v}").expect("write to string");
        }
        out
    }
}

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>, ModelError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| ModelError::Config(format!("line {}: expected key=value", i + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut c = ModelConfig::default();
        c.vocab_size = 50;
        c.relation_method = RelationMethod::Cnn;
        c.dropout = 0.25;
        let map: BTreeMap<_, _> = parse_config_text(&c.to_text()).unwrap().into_iter().collect();
        assert_eq!(ModelConfig::from_map(&map).unwrap(), c);
    }

    #[test]
    fn rejects_bad_values() {
        let mut c = ModelConfig::default();
        assert!(c.set("num_heads", "four").is_err());
        assert!(c.set("structure_aware", "maybe").is_err());
        assert!(!c.set("learning_rate", "1").unwrap());
        c.vocab_size = 10;
        c.num_labels = 5;
        c.num_heads = 3;
        assert!(c.validate().is_err());
        assert!(parse_config_text("d_model 3").is_err());
        assert_eq!(parse_config_text("# x\n\n a = b \n").unwrap(), vec![("a".into(), "b".into())]);
    }
}
