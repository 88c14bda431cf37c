//! Flat `key = value` experiment configuration.
//!
//! Blank lines and `#` comments are ignored. Keys are dotted (`cnn.epochs`).
//! Environment variables prefixed `SYNTHMIX_` override file values, with `__`
//! standing for `.`: `SYNTHMIX_CNN__EPOCHS=3` sets `cnn.epochs`.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cnn::TrainConfig;
use crate::data::{BlendSpec, SplitSpec};
use crate::dcgan::GanTrainConfig;
use crate::error::{Error, Result};
use crate::metrics::TieRule;

pub const ENV_PREFIX: &str = "SYNTHMIX_";

/// Every key [`ExperimentConfig::set`] accepts.
pub const KEYS: &[&str] = &[
    "data_root",
    "toy",
    "toy_per_class",
    "toy_image_size",
    "seed",
    "out",
    "ratios",
    "synthetic_per_class",
    "threshold",
    "auc_ties",
    "split.cnn_pool",
    "split.gan_train",
    "split.test",
    "split.allow_overlap",
    "gan.epochs",
    "gan.learning_rate",
    "gan.batch_size",
    "gan.z_dim",
    "gan.base_width",
    "gan.sample_epochs",
    "gan.sample_count",
    "cnn.epochs",
    "cnn.learning_rate",
    "cnn.batch_size",
    "cnn.dropout",
    "cnn.patience",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data_root: Option<PathBuf>,
    pub toy: bool,
    pub toy_per_class: usize,
    pub toy_image_size: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub split: SplitSpec,
    pub gan: GanTrainConfig,
    pub cnn: TrainConfig,
    pub ratios: Vec<BlendSpec>,
    /// Images generated per class for the shared synthetic pool.
    pub synthetic_per_class: usize,
    pub threshold: f32,
    pub auc_ties: TieRule,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data_root: None,
            toy: false,
            toy_per_class: 1000,
            toy_image_size: 64,
            seed: 0,
            out: PathBuf::from("synthmix-out"),
            split: SplitSpec::default(),
            gan: GanTrainConfig::default(),
            cnn: TrainConfig::default(),
            ratios: BlendSpec::standard_rows(),
            synthetic_per_class: 500,
            threshold: 0.5,
            auc_ties: TieRule::Strict,
        }
    }
}

fn value<T: FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.trim()
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{raw}`")))
}

fn flag(key: &str, raw: &str) -> Result<bool> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!(
            "`{key}`: expected true or false, got `{raw}`"
        ))),
    }
}

fn list<T: FromStr>(key: &str, raw: &str) -> Result<Vec<T>> {
    raw.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| value(key, s))
        .collect()
}

impl ExperimentConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        let raw = raw.trim();
        match key {
            "data_root" => self.data_root = Some(PathBuf::from(raw)),
            "toy" => self.toy = flag(key, raw)?,
            "toy_per_class" => self.toy_per_class = value(key, raw)?,
            "toy_image_size" => self.toy_image_size = value(key, raw)?,
            "seed" => self.seed = value(key, raw)?,
            "out" => self.out = PathBuf::from(raw),
            "ratios" => {
                self.ratios = raw
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(BlendSpec::parse)
                    .collect::<Result<_>>()?
            }
            "synthetic_per_class" => self.synthetic_per_class = value(key, raw)?,
            "threshold" => self.threshold = value(key, raw)?,
            "auc_ties" => self.auc_ties = TieRule::parse(raw)?,
            "split.cnn_pool" => self.split.cnn_pool_size = value(key, raw)?,
            "split.gan_train" => {
                self.split.gan_train_size = if raw == "remaining" {
                    None
                } else {
                    Some(value(key, raw)?)
                }
            }
            "split.test" => self.split.test_size = value(key, raw)?,
            "split.allow_overlap" => self.split.allow_overlap = flag(key, raw)?,
            "gan.epochs" => self.gan.epochs = value(key, raw)?,
            "gan.learning_rate" => self.gan.learning_rate = value(key, raw)?,
            "gan.batch_size" => self.gan.batch_size = value(key, raw)?,
            "gan.z_dim" => self.gan.z_dim = value(key, raw)?,
            "gan.base_width" => self.gan.base_width = value(key, raw)?,
            "gan.sample_epochs" => self.gan.sample_epochs = list(key, raw)?,
            "gan.sample_count" => self.gan.sample_count = value(key, raw)?,
            "cnn.epochs" => self.cnn.epochs = value(key, raw)?,
            "cnn.learning_rate" => self.cnn.learning_rate = value(key, raw)?,
            "cnn.batch_size" => self.cnn.batch_size = value(key, raw)?,
            "cnn.dropout" => self.cnn.dropout_rate = value(key, raw)?,
            "cnn.patience" => {
                self.cnn.patience = if raw == "none" {
                    None
                } else {
                    Some(value(key, raw)?)
                }
            }
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, raw) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "line {}: expected `key = value`, got `{line}`",
                    n + 1
                ))
            })?;
            self.set(key.trim(), raw)?;
        }
        Ok(())
    }

    /// Applies `SYNTHMIX_*` overrides from `(name, value)` pairs; other names are ignored.
    pub fn apply_env<I, K, V>(&mut self, vars: I) -> Result<()>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        for (name, raw) in vars {
            if let Some(rest) = name.as_ref().strip_prefix(ENV_PREFIX) {
                let key = rest.to_ascii_lowercase().replace("__", ".");
                self.set(&key, raw.as_ref())?;
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.data_root.is_none() && !self.toy {
            return Err(Error::Config(
                "missing `data_root` (or enable `toy`)".into(),
            ));
        }
        if self.ratios.is_empty() {
            return Err(Error::Config("`ratios` is empty".into()));
        }
        for r in &self.ratios {
            BlendSpec::new(r.real_count, r.gan_count)?;
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!(
                "`threshold` {} outside (0, 1)",
                self.threshold
            )));
        }
        if self.synthetic_per_class == 0 {
            return Err(Error::Config(
                "`synthetic_per_class` must be positive".into(),
            ));
        }
        if self.toy && (self.toy_per_class == 0 || self.toy_image_size == 0) {
            return Err(Error::Config("toy dataset sizes must be positive".into()));
        }
        self.gan.validate()?;
        self.cnn.validate()
    }
}

/// Reads a config file over the defaults and validates it.
pub fn parse_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::default();
    config.apply_text(text)?;
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let c = parse_config_str("data_root = /data/br35h\n").unwrap();
        assert_eq!(c.cnn.learning_rate, 1e-4);
        assert_eq!(c.gan.learning_rate, 2e-4);
        assert_eq!((c.cnn.batch_size, c.gan.batch_size), (64, 64));
        assert_eq!(c.ratios.len(), 11);
        assert_eq!(c.data_root.as_deref(), Some(Path::new("/data/br35h")));
    }

    #[test]
    fn rejects_bad_input() {
        let err = parse_config_str("toy = true\nfoo = 1\n").unwrap_err();
        assert!(
            matches!(&err, Error::Config(m) if m.contains("`foo`")),
            "{err}"
        );
        assert!(matches!(
            parse_config_str("toy = true\nratios = 800:100\n"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            parse_config_str("seed = 3\n"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            parse_config_str("toy = true\ncnn.epochs = x\n"),
            Err(Error::Config(_))
        ));
        assert!(matches!(parse_config_str("toy\n"), Err(Error::Config(_))));
    }

    #[test]
    fn comments_lists_and_env() {
        let mut c = parse_config_str(
            "# header\ntoy = yes  # inline\nratios = 1000:0, 0:1000\ngan.sample_epochs = 1,2\n",
        )
        .unwrap();
        assert_eq!(
            c.ratios,
            vec![
                BlendSpec::new(1000, 0).unwrap(),
                BlendSpec::new(0, 1000).unwrap()
            ]
        );
        assert_eq!(c.gan.sample_epochs, vec![1, 2]);
        c.apply_env([
            ("SYNTHMIX_CNN__EPOCHS", "3"),
            ("HOME", "/root"),
            ("SYNTHMIX_SPLIT__GAN_TRAIN", "40"),
        ])
        .unwrap();
        assert_eq!(c.cnn.epochs, 3);
        assert_eq!(c.split.gan_train_size, Some(40));
        assert!(c.apply_env([("SYNTHMIX_NOPE", "1")]).is_err());
    }

    #[test]
    fn every_listed_key_is_settable() {
        let samples = [
            ("data_root", "x"),
            ("toy", "true"),
            ("toy_per_class", "4"),
            ("toy_image_size", "32"),
            ("seed", "1"),
            ("out", "o"),
            ("ratios", "500:500"),
            ("synthetic_per_class", "3"),
            ("threshold", "0.4"),
            ("auc_ties", "half"),
            ("split.cnn_pool", "10"),
            ("split.gan_train", "remaining"),
            ("split.test", "4"),
            ("split.allow_overlap", "false"),
            ("gan.epochs", "2"),
            ("gan.learning_rate", "0.001"),
            ("gan.batch_size", "8"),
            ("gan.z_dim", "10"),
            ("gan.base_width", "4"),
            ("gan.sample_epochs", "1"),
            ("gan.sample_count", "4"),
            ("cnn.epochs", "2"),
            ("cnn.learning_rate", "0.01"),
            ("cnn.batch_size", "8"),
            ("cnn.dropout", "0"),
            ("cnn.patience", "none"),
        ];
        assert_eq!(samples.len(), KEYS.len());
        let mut c = ExperimentConfig::default();
        for (k, v) in samples {
            assert!(KEYS.contains(&k));
            c.set(k, v).unwrap();
        }
        c.validate().unwrap();
    }
}
