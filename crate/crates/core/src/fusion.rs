use serde::{Deserialize, Serialize};

use crate::error::{check_finite, check_range, Result};

pub const DEFAULT_RHO: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub rho: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self { rho: DEFAULT_RHO }
    }
}

impl FusionConfig {
    pub fn new(rho: f64) -> Result<Self> {
        check_range("rho", rho, rho >= 0.0 && rho.is_finite(), "[0, inf)")?;
        Ok(Self { rho })
    }
}

/// `r_task + rho * r_vlm`, unclipped.
pub fn fuse(r_task: f64, r_vlm: f64, cfg: &FusionConfig) -> Result<f64> {
    check_finite(r_task, "task reward")?;
    check_finite(r_vlm, "vlm reward")?;
    Ok(r_task + cfg.rho * r_vlm)
}
