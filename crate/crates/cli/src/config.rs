//! Run configuration: `key = value` files plus per-key flag overrides.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use stmix_core::{MixConfig, MixLayer, TrainConfig};

use crate::CliError;

/// Every recognized key, in the order `describe` prints them.
pub const KEYS: &[&str] = &[
    "seed",
    "lambda",
    "k_neighbors",
    "mix_portion",
    "max_concat_frames",
    "hidden",
    "epochs",
    "pretrain_epochs",
    "learning_rate",
    "batch_size",
    "mix_layer",
    "patience",
    "jsd_weight",
    "train_manifest",
    "dev_manifest",
    "embeddings",
    "neighbors",
    "words",
    "frame_mixed",
    "augmented",
    "output",
    "output_dir",
    "checkpoint",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mix: MixConfig,
    pub train: TrainConfig,
    /// Text-only epochs run before stage 1; 0 skips the pre-training stage.
    pub pretrain_epochs: usize,
    pub train_manifest: Option<PathBuf>,
    pub dev_manifest: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub neighbors: Option<PathBuf>,
    pub words: Option<PathBuf>,
    pub frame_mixed: Option<PathBuf>,
    /// Word- and sentence-mixed manifests added to the stage-1 CE stream.
    pub augmented: Vec<PathBuf>,
    pub output: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mix = MixConfig::default();
        let train = TrainConfig {
            lambda: mix.lambda,
            mix_portion: mix.mix_portion,
            seed: mix.rng_seed,
            ..TrainConfig::default()
        };
        Self {
            mix,
            train,
            pretrain_epochs: 0,
            train_manifest: None,
            dev_manifest: None,
            embeddings: None,
            neighbors: None,
            words: None,
            frame_mixed: None,
            augmented: Vec::new(),
            output: None,
            output_dir: None,
            checkpoint: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| CliError::Usage(format!("bad value {value:?} for {key}: {e}")))
}

impl RunConfig {
    /// Sets one key. Relative paths resolve against `base`.
    pub fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<(), CliError> {
        let path = || base.join(value);
        match key {
            "seed" => {
                let s = parse(key, value)?;
                self.mix.rng_seed = s;
                self.train.seed = s;
            }
            "lambda" => {
                let l = parse(key, value)?;
                self.mix.lambda = l;
                self.train.lambda = l;
            }
            "mix_portion" => {
                let m = parse(key, value)?;
                self.mix.mix_portion = m;
                self.train.mix_portion = m;
            }
            "k_neighbors" => self.mix.k_neighbors = parse(key, value)?,
            "max_concat_frames" => self.mix.max_concat_frames = parse(key, value)?,
            "hidden" => self.train.hidden = parse(key, value)?,
            "epochs" => self.train.epochs = parse(key, value)?,
            "pretrain_epochs" => self.pretrain_epochs = parse(key, value)?,
            "learning_rate" => self.train.learning_rate = parse(key, value)?,
            "batch_size" => self.train.batch_size = parse(key, value)?,
            "mix_layer" => self.train.mix_layer = parse::<MixLayer>(key, value)?,
            "patience" => {
                self.train.patience = match value {
                    "none" | "off" | "" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "jsd_weight" => self.train.jsd_weight = parse(key, value)?,
            "train_manifest" => self.train_manifest = Some(path()),
            "dev_manifest" => self.dev_manifest = Some(path()),
            "embeddings" => self.embeddings = Some(path()),
            "neighbors" => self.neighbors = Some(path()),
            "words" => self.words = Some(path()),
            "frame_mixed" => self.frame_mixed = Some(path()),
            "augmented" => {
                self.augmented = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| base.join(s))
                    .collect()
            }
            "output" => self.output = Some(path()),
            "output_dir" => self.output_dir = Some(path()),
            "checkpoint" => self.checkpoint = Some(path()),
            _ => return Err(CliError::Usage(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Applies a config file's text; `base` is the file's directory.
    pub fn apply_text(&mut self, text: &str, base: &Path, origin: &str) -> Result<(), CliError> {
        for (n, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Usage(format!("{origin}:{}: expected key = value", n + 1))
            })?;
            self.set(key.trim(), value.trim(), base)
                .map_err(|e| CliError::Usage(format!("{origin}:{}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let mut cfg = Self::default();
        cfg.apply_text(&text, base, &path.display().to_string())?;
        Ok(cfg)
    }

    /// The config file (if any) with `overrides` applied on top; override
    /// paths are taken relative to the working directory.
    pub fn resolve(file: Option<&Path>, overrides: &[(&str, String)]) -> Result<Self, CliError> {
        let mut cfg = match file {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        for (k, v) in overrides {
            cfg.set(k, v, Path::new(""))?;
        }
        Ok(cfg)
    }
}
