//! The JSON run configuration shared by every subcommand.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::SceneConfig;
use crate::error::{Error, Result};
use crate::metrics::MetricConfig;
use crate::model::ModelConfig;
use crate::train::TrainConfig;

/// Every section and field is optional; unknown keys are rejected.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: SceneConfig,
    pub metrics: MetricConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Argument(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<(Self, String)> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Argument(format!("cannot read config {}: {e}", path.display())))?;
        Ok((Self::parse(&text)?, text))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.data.validate()?;
        self.metrics.validate()?;
        let div = self.model.image_divisor();
        if self.data.height % div != 0 || self.data.width % div != 0 {
            return Err(Error::Argument(format!(
                "scene size {}x{} is not divisible by the model's {div}",
                self.data.height, self.data.width
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        assert_eq!(RunConfig::parse("{}").unwrap(), RunConfig::default());
        let cfg = RunConfig::parse(r#"{"train": {"lr": 0.001}, "model": {"unet": {"base_channels": 16}}}"#).unwrap();
        assert_eq!(cfg.train.lr, 0.001);
        assert_eq!(cfg.model.unet.base_channels, 16);
        assert_eq!(cfg.train.batch_size, TrainConfig::default().batch_size);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_argument_errors() {
        for bad in [r#"{"trian": {}}"#, r#"{"train": {"learning_rate": 1}}"#, r#"{"train": {"lr": -1}}"#, "[", r#"{"data": {"height": 30}}"#] {
            assert!(matches!(RunConfig::parse(bad), Err(Error::Argument(_))), "{bad}");
        }
    }

    #[test]
    fn serialized_defaults_parse_back() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::parse(&cfg.to_json()).unwrap(), cfg);
    }
}
