use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture description. The encoder widths are
/// `base_channels × (1, 2, 4, 8, 16)` over five stride-2 stages.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub base_channels: usize,
    pub num_classes: usize,
    pub enable_pdc: bool,
    pub enable_se: bool,
    pub se_reduction: usize,
    pub input_height: usize,
    pub input_width: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            base_channels: 16,
            num_classes: 2,
            enable_pdc: true,
            enable_se: true,
            se_reduction: 16,
            input_height: 128,
            input_width: 128,
        }
    }
}

pub const ENCODER_STAGES: usize = 5;
/// Spatial reduction of the full encoder.
pub const TOTAL_STRIDE: usize = 1 << ENCODER_STAGES;

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_channels < 4 {
            return Err(Error::Config(format!(
                "base_channels must be at least 4, got {}",
                self.base_channels
            )));
        }
        if self.num_classes != 2 {
            return Err(Error::Config(format!(
                "only two-class segmentation is supported, got num_classes = {}",
                self.num_classes
            )));
        }
        if self.se_reduction == 0 {
            return Err(Error::Config("se_reduction must be positive".into()));
        }
        for (name, v) in [("input_height", self.input_height), ("input_width", self.input_width)] {
            if v == 0 || v % TOTAL_STRIDE != 0 {
                return Err(Error::Config(format!("{name} must be a positive multiple of {TOTAL_STRIDE}, got {v}")));
            }
        }
        Ok(())
    }

    pub fn encoder_channels(&self) -> [usize; ENCODER_STAGES] {
        std::array::from_fn(|i| self.base_channels << i)
    }

    /// Width of each decoder output, equal across the three decoders.
    pub fn decoder_out_channels(&self) -> usize {
        self.base_channels / 2
    }

    /// Canonical `key = value` text, one key per line, used as the
    /// checkpoint config echo.
    pub fn canonical_text(&self) -> String {
        self.to_string()
    }

    pub fn from_canonical_text(text: &str) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("malformed line `{line}`")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    /// Sets one key (without the `model.` prefix) from its text value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num(key: &str, v: &str) -> Result<usize> {
            v.parse()
                .map_err(|_| Error::Config(format!("`{key}` expects an integer, got `{v}`")))
        }
        fn flag(key: &str, v: &str) -> Result<bool> {
            v.parse()
                .map_err(|_| Error::Config(format!("`{key}` expects true or false, got `{v}`")))
        }
        match key {
            "base_channels" => self.base_channels = num(key, value)?,
            "num_classes" => self.num_classes = num(key, value)?,
            "enable_pdc" => self.enable_pdc = flag(key, value)?,
            "enable_se" => self.enable_se = flag(key, value)?,
            "se_reduction" => self.se_reduction = num(key, value)?,
            "input_height" => self.input_height = num(key, value)?,
            "input_width" => self.input_width = num(key, value)?,
            "input_size" => {
                let n = num(key, value)?;
                self.input_height = n;
                self.input_width = n;
            }
            _ => return Err(Error::Config(format!("unknown model key `{key}`"))),
        }
        Ok(())
    }
}

impl fmt::Display for ModelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "base_channels = {}", self.base_channels)?;
        writeln!(f, "num_classes = {}", self.num_classes)?;
        writeln!(f, "enable_pdc = {}", self.enable_pdc)?;
        writeln!(f, "enable_se = {}", self.enable_se)?;
        writeln!(f, "se_reduction = {}", self.se_reduction)?;
        writeln!(f, "input_height = {}", self.input_height)?;
        writeln!(f, "input_width = {}", self.input_width)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_text_roundtrip() {
        let cfg = ModelConfig {
            base_channels: 8,
            enable_se: false,
            input_height: 64,
            ..Default::default()
        };
        assert_eq!(ModelConfig::from_canonical_text(&cfg.canonical_text()).unwrap(), cfg);
    }

    #[test]
    fn validation() {
        assert!(ModelConfig::default().validate().is_ok());
        let bad_size = ModelConfig {
            input_width: 100,
            ..Default::default()
        };
        assert!(bad_size.validate().is_err());
        let narrow = ModelConfig {
            base_channels: 3,
            ..Default::default()
        };
        assert!(narrow.validate().is_err());
    }
}
