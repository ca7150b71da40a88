// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The radar-enhance Authors.

//! Pipeline configuration file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::history::DEFAULT_HISTORY_LEN;
use crate::localization::EkfConfig;
use crate::metrics::ChamferDistance;
use crate::preprocess::{GridConfig, PreprocessConfig};
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub preprocess: PreprocessConfig,
    pub grid: GridConfig,
    /// Edge radius of the node graph (m).
    pub graph_radius: f64,
    /// Probability at or above which a node is kept.
    pub decision_threshold: f64,
    /// Frames kept in the detection history.
    pub history_length: usize,
    /// Spacing of points sampled along map segments (m).
    pub map_resolution: f64,
    pub chamfer_distance: ChamferDistance,
    pub training: TrainConfig,
    pub ekf: EkfConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            preprocess: PreprocessConfig::default(),
            grid: GridConfig::default(),
            graph_radius: 10.0,
            decision_threshold: 0.5,
            history_length: DEFAULT_HISTORY_LEN,
            map_resolution: 0.05,
            chamfer_distance: ChamferDistance::Euclidean,
            training: TrainConfig::default(),
            ekf: EkfConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.preprocess.validate()?;
        self.grid.validate()?;
        if !(self.graph_radius > 0.0 && self.graph_radius.is_finite()) {
            return Err(Error::Config(format!("graph_radius = {} must be positive", self.graph_radius)));
        }
        if !(0.0..=1.0).contains(&self.decision_threshold) {
            return Err(Error::Config(format!(
                "decision_threshold = {} must lie in [0, 1]",
                self.decision_threshold
            )));
        }
        if self.history_length == 0 {
            return Err(Error::Config("history_length must be at least 1".into()));
        }
        if !(self.map_resolution > 0.0 && self.map_resolution.is_finite()) {
            return Err(Error::Config(format!("map_resolution = {} must be positive", self.map_resolution)));
        }
        self.training.validate()?;
        self.ekf.validate()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = PipelineConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_toml().unwrap();
        assert_eq!(PipelineConfig::from_toml(&text).unwrap(), cfg);
        assert_eq!(cfg.grid.window, 20);
        assert_eq!(cfg.ekf.p_valid, 0.95);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg = PipelineConfig::from_toml("graph_radius = 5.0\n[grid]\nwindow = 10\n").unwrap();
        assert_eq!(cfg.graph_radius, 5.0);
        assert_eq!(cfg.grid.window, 10);
        assert_eq!(cfg.grid.resolution, 0.2);
    }

    #[test]
    fn unknown_and_invalid_keys_are_rejected() {
        assert!(PipelineConfig::from_toml("graph_radiuss = 5.0\n").is_err());
        assert!(PipelineConfig::from_toml("[grid]\nbogus = 1\n").is_err());
        assert!(PipelineConfig::from_toml("graph_radius = -1.0\n").is_err());
        assert!(PipelineConfig::from_toml("decision_threshold = 1.5\n").is_err());
        assert!(PipelineConfig::from_toml("[ekf]\np_valid = 1.0\n").is_err());
        assert!(PipelineConfig::from_toml("[preprocess]\nmin_range = -1.0\n").is_err());
        assert!(PipelineConfig::from_toml("chamfer_distance = \"squared\"\n").is_ok());
    }
}
