//! TOML run configuration combining the per-stage configs. Every section
//! is optional and falls back to its default; unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::inference::InferenceConfig;
use crate::net::LayerSpec;
use crate::sampling::SamplingConfig;
use crate::synth::FigureConfig;
use crate::training::TrainConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("failed to parse {path}: {source}")]
    Parse {
        path: String,
        source: toml::de::Error,
    },
    #[error(transparent)]
    Figure(#[from] crate::synth::SynthError),
    #[error(transparent)]
    Sampling(#[from] crate::sampling::SamplingError),
    #[error(transparent)]
    Train(#[from] crate::training::TrainError),
    #[error(transparent)]
    Inference(#[from] crate::inference::InferenceError),
    #[error(transparent)]
    Net(#[from] crate::net::NetError),
}

fn default_net() -> LayerSpec {
    LayerSpec::desk_default(crate::synth::JOINT_COUNT)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub figure: FigureConfig,
    pub sampling: SamplingConfig,
    pub train: TrainConfig,
    pub inference: InferenceConfig,
    pub net: LayerSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            figure: FigureConfig::default(),
            sampling: SamplingConfig::default(),
            train: TrainConfig::default(),
            inference: InferenceConfig::default(),
            net: default_net(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.figure.validate()?;
        self.sampling.validate()?;
        self.train.validate()?;
        self.inference.validate(self.net.joints)?;
        self.net.validate()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let cfg: RunConfig = toml::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.display().to_string(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn partial_toml_overrides_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(
            &path,
            "[train]\nepochs = 2\n\n[inference]\nk = 2\n",
        )
        .unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.train.epochs, 2);
        assert_eq!(cfg.inference.k, 2);
        // untouched sections keep their defaults
        assert_eq!(cfg.sampling.stride, SamplingConfig::default().stride);
        assert_eq!(cfg.net, LayerSpec::desk_default(crate::synth::JOINT_COUNT));
    }

    #[test]
    fn unknown_key_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[train]\nepochz = 2\n").unwrap();
        assert!(matches!(
            RunConfig::load(&path),
            Err(ConfigError::Parse { .. })
        ));
        std::fs::write(&path, "[nonsense]\nx = 1\n").unwrap();
        assert!(matches!(
            RunConfig::load(&path),
            Err(ConfigError::Parse { .. })
        ));
    }

    #[test]
    fn invalid_values_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[inference]\nk = 0\n").unwrap();
        assert!(matches!(
            RunConfig::load(&path),
            Err(ConfigError::Inference(_))
        ));
        std::fs::write(&path, "[sampling]\nmu1 = 2.0\nmu2 = 1.0\n").unwrap();
        assert!(RunConfig::load(&path).is_err());
    }

    #[test]
    fn round_trip_toml() {
        let cfg = RunConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back.train.epochs, cfg.train.epochs);
        assert_eq!(back.net, cfg.net);
    }
}
