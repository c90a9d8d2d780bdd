//! Training configuration and its flat text format.
//!
//! One `key = value` per line, `#` starts a comment, keys may be dotted:
//!
//! | key | default |
//! |-----|---------|
//! | `learning_rate` | `0.001` |
//! | `epochs` | `100` |
//! | `batch_size` | `2` |
//! | `loss` | `dice` (`dice`, `bce`, `ssim`) |
//! | `seed` | `0` |
//! | `folds` | `10` |
//! | `dataset` | unset: synthesize phantoms |
//! | `num_phantoms` | `30` |
//! | `augment.include_original` | `false` |
//! | `augment.elastic_alpha`, `augment.elastic_sigma` | unset: `8`, `6` scaled by width / 128 |
//! | `model.base_channels` | `16` |
//! | `model.num_classes` | `2` |
//! | `model.enable_pdc`, `model.enable_se` | `true` |
//! | `model.se_reduction` | `16` |
//! | `model.input_size` / `model.input_height` / `model.input_width` | `128` |
//! | `postprocess.area_ratio` | `5` |
//! | `postprocess.erosion_size` | `3` |
//! | `postprocess.erosion_iterations` | `1` |
//! | `phantom.plaque_count` | unset: 1 or 2 at random |
//! | `phantom.speckle_shape` | `6` |
//! | `ssim.window` | `11` |
//! | `ssim.sigma` | `1.5` |
//! | `ssim.kind` | `gaussian` (`gaussian`, `uniform`, `global`) |
//!
//! Phantom size always follows the model input size.

use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{AugmentConfig, ElasticParams, PhantomConfig};
use crate::error::{Error, Result};
use crate::losses::{LossKind, SsimConfig, SsimWindow};
use crate::panet::ModelConfig;
use crate::postprocess::{PostprocessConfig, StructuringElement};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub loss: LossKind,
    pub seed: u64,
    pub folds: usize,
    pub dataset: Option<PathBuf>,
    pub num_phantoms: usize,
    pub augment: AugmentConfig,
    pub model: ModelConfig,
    pub postprocess: PostprocessConfig,
    pub phantom: PhantomConfig,
    pub ssim: SsimConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            epochs: 100,
            batch_size: 2,
            loss: LossKind::Dice,
            seed: 0,
            folds: 10,
            dataset: None,
            num_phantoms: 30,
            augment: AugmentConfig::default(),
            model: ModelConfig::default(),
            postprocess: PostprocessConfig::default(),
            phantom: PhantomConfig::default(),
            ssim: SsimConfig::default(),
        }
    }
}

fn parse<V: std::str::FromStr>(key: &str, value: &str, what: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}` expects {what}, got `{value}`")))
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.folds < 2 {
            return Err(Error::Config(format!("folds must be at least 2, got {}", self.folds)));
        }
        self.model.validate()?;
        self.postprocess.validate()?;
        self.phantom_config().validate()
    }

    /// Phantom settings with the size taken from the model input.
    pub fn phantom_config(&self) -> PhantomConfig {
        PhantomConfig {
            height: self.model.input_height,
            width: self.model.input_width,
            ..self.phantom.clone()
        }
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_text(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{line}`", n + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("line {}: {}", n + 1, e.to_string().trim_start_matches("invalid config: "))))?;
        }
        Ok(())
    }

    /// Applies a `key=value` override as given on the command line.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{kv}` is not `key=value`")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if let Some(k) = key.strip_prefix("model.") {
            return self.model.set(k, value);
        }
        let pp = &mut self.postprocess;
        match key {
            "learning_rate" => self.learning_rate = parse(key, value, "a number")?,
            "epochs" => self.epochs = parse(key, value, "an integer")?,
            "batch_size" => self.batch_size = parse(key, value, "an integer")?,
            "loss" => self.loss = value.parse()?,
            "seed" => self.seed = parse(key, value, "an unsigned integer")?,
            "folds" => self.folds = parse(key, value, "an integer")?,
            "dataset" => self.dataset = if value.is_empty() { None } else { Some(PathBuf::from(value)) },
            "num_phantoms" => self.num_phantoms = parse(key, value, "an integer")?,
            "augment.include_original" => self.augment.include_original = parse(key, value, "true or false")?,
            "augment.elastic_alpha" | "augment.elastic_sigma" => {
                let v: f64 = parse(key, value, "a number")?;
                let w = self.model.input_width;
                let e = self.augment.elastic.get_or_insert_with(|| ElasticParams::for_width(w));
                if key.ends_with("alpha") {
                    e.alpha = v;
                } else {
                    e.sigma = v;
                }
            }
            "postprocess.area_ratio" => pp.area_ratio = parse(key, value, "a number")?,
            "postprocess.erosion_size" => {
                pp.element = StructuringElement::square(parse(key, value, "an odd integer")?, pp.element.iterations)?
            }
            "postprocess.erosion_iterations" => {
                pp.element = StructuringElement::square(pp.element.side(), parse(key, value, "an integer")?)?
            }
            "phantom.plaque_count" => {
                self.phantom.plaque_count = match value {
                    "" | "random" => None,
                    v => Some(parse(key, v, "1, 2 or random")?),
                }
            }
            "phantom.speckle_shape" => self.phantom.speckle_shape = parse(key, value, "a number")?,
            "ssim.window" => self.ssim.window = parse(key, value, "an odd integer")?,
            "ssim.sigma" => self.ssim.sigma = parse(key, value, "a number")?,
            "ssim.kind" => {
                self.ssim.kind = match value {
                    "gaussian" => SsimWindow::Gaussian,
                    "uniform" => SsimWindow::Uniform,
                    "global" => SsimWindow::Global,
                    _ => return Err(Error::Config(format!("`ssim.kind` expects gaussian, uniform or global, got `{value}`"))),
                }
            }
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }
}

impl fmt::Display for TrainConfig {
    /// Canonical text; `from_text` of this output reproduces the config.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        let _ = writeln!(s, "learning_rate = {}", self.learning_rate);
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "loss = {}", self.loss);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "folds = {}", self.folds);
        if let Some(d) = &self.dataset {
            let _ = writeln!(s, "dataset = {}", d.display());
        }
        let _ = writeln!(s, "num_phantoms = {}", self.num_phantoms);
        let _ = writeln!(s, "augment.include_original = {}", self.augment.include_original);
        if let Some(e) = self.augment.elastic {
            let _ = writeln!(s, "augment.elastic_alpha = {}", e.alpha);
            let _ = writeln!(s, "augment.elastic_sigma = {}", e.sigma);
        }
        for line in self.model.canonical_text().lines() {
            let _ = writeln!(s, "model.{line}");
        }
        let _ = writeln!(s, "postprocess.area_ratio = {}", self.postprocess.area_ratio);
        let _ = writeln!(s, "postprocess.erosion_size = {}", self.postprocess.element.side());
        let _ = writeln!(s, "postprocess.erosion_iterations = {}", self.postprocess.element.iterations);
        match self.phantom.plaque_count {
            Some(n) => {
                let _ = writeln!(s, "phantom.plaque_count = {n}");
            }
            None => {
                let _ = writeln!(s, "phantom.plaque_count = random");
            }
        }
        let _ = writeln!(s, "phantom.speckle_shape = {}", self.phantom.speckle_shape);
        let _ = writeln!(s, "ssim.window = {}", self.ssim.window);
        let _ = writeln!(s, "ssim.sigma = {}", self.ssim.sigma);
        let kind = match self.ssim.kind {
            SsimWindow::Gaussian => "gaussian",
            SsimWindow::Uniform => "uniform",
            SsimWindow::Global => "global",
        };
        let _ = writeln!(s, "ssim.kind = {kind}");
        f.write_str(&s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_roundtrip() {
        let mut cfg = TrainConfig::default();
        cfg.apply_text("epochs = 3 # short\nmodel.enable_se = false\nloss = ssim\naugment.elastic_alpha = 4\nphantom.plaque_count = 2\n")
            .unwrap();
        assert_eq!(cfg.epochs, 3);
        assert!(!cfg.model.enable_se);
        assert_eq!(cfg.augment.elastic.unwrap().sigma, 6.0);
        assert_eq!(TrainConfig::from_text(&cfg.to_string()).unwrap(), cfg);
    }

    #[test]
    fn validation_and_errors() {
        let cfg = TrainConfig { epochs: 0, ..Default::default() };
        assert!(cfg.validate().is_err());
        let err = TrainConfig::from_text("lr = 1").unwrap_err();
        assert!(err.to_string().contains("unknown key `lr`"), "{err}");
        assert!(TrainConfig::from_text("epochs 3").is_err());
        let mut c = TrainConfig::default();
        assert!(c.apply_override("model.base_channels=8").is_ok());
        assert_eq!(c.model.base_channels, 8);
    }
}
