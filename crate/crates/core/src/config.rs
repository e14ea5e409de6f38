//! One JSON document per run. Every field is optional; an empty object
//! gives the reference settings.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::{ExperimentConfig, GridConfig};
use crate::disentangle::{FactorParams, LossWeights, TrainConfig};
use crate::error::{Error, Result};
use crate::fusion::{FusionConfig, DEFAULT_RHO};
use crate::geometry::ProjectionConfig;
use crate::shaping::{
    FilterConfig, ShapingConfig, ThresholdScope, DEFAULT_CALIBRATION_STEPS, DEFAULT_KAPPA,
    DEFAULT_QUANTILE,
};
use crate::stage::{StartPolicy, TransitionConfig, DEFAULT_PATIENCE, DEFAULT_TRANSITION_THRESHOLD};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DisentangleSection {
    pub data: FactorParams,
    pub weights: LossWeights,
    pub train: TrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seeds: Vec<u64>,
    pub alpha: f64,
    pub rho: f64,
    pub kappa: f64,
    /// Noise-floor quantile `m`.
    #[serde(alias = "m")]
    pub quantile: f64,
    /// Scores collected before the threshold freezes.
    pub calibration_steps: usize,
    pub threshold_scope: ThresholdScope,
    pub transition_threshold: f64,
    pub patience: usize,
    pub start_policy: StartPolicy,
    pub filter: FilterConfig,
    pub grid: GridConfig,
    pub disentangle: DisentangleSection,
    pub dataset: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seeds: vec![0, 1, 2, 3, 4],
            alpha: ProjectionConfig::DEFAULT_ALPHA,
            rho: DEFAULT_RHO,
            kappa: DEFAULT_KAPPA,
            quantile: DEFAULT_QUANTILE,
            calibration_steps: DEFAULT_CALIBRATION_STEPS,
            threshold_scope: ThresholdScope::Global,
            transition_threshold: DEFAULT_TRANSITION_THRESHOLD,
            patience: DEFAULT_PATIENCE,
            start_policy: StartPolicy::FromSpec,
            filter: FilterConfig::default(),
            grid: GridConfig::default(),
            disentangle: DisentangleSection::default(),
            dataset: None,
            manifest: None,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    /// Parses and validates.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        self.projection()?;
        self.fusion()?;
        self.shaping().validate()?;
        self.transition().validate()?;
        self.grid.validate()?;
        self.disentangle.weights.validate()?;
        self.disentangle.train.validate()?;
        Ok(())
    }

    pub fn projection(&self) -> Result<ProjectionConfig> {
        ProjectionConfig::new(self.alpha)
    }

    pub fn fusion(&self) -> Result<FusionConfig> {
        FusionConfig::new(self.rho)
    }

    pub fn shaping(&self) -> ShapingConfig {
        ShapingConfig {
            kappa: self.kappa,
            quantile: self.quantile,
            calibration_steps: self.calibration_steps,
            threshold_scope: self.threshold_scope,
            filter: self.filter.clone(),
        }
    }

    pub fn transition(&self) -> TransitionConfig {
        TransitionConfig {
            threshold: self.transition_threshold,
            patience: self.patience,
            start_policy: self.start_policy,
        }
    }

    pub fn experiment(&self) -> Result<ExperimentConfig> {
        Ok(ExperimentConfig {
            grid: self.grid.clone(),
            projection: self.projection()?,
            shaping: self.shaping(),
            transition: self.transition(),
            fusion: self.fusion()?,
        })
    }
}
