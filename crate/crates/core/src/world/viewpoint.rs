use rand::Rng as _;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{cosine_similarity, Embedding};
use crate::rng::seeded;

/// Simulated cameras as additive embedding offsets, switched every
/// `switch_period` steps.
#[derive(Clone, Debug)]
pub struct ViewpointModel {
    pub offsets: Vec<Embedding>,
    pub switch_period: usize,
    pub seed: u64,
}

impl ViewpointModel {
    pub const DEFAULT_SWITCH_PERIOD: usize = 5;

    pub fn new(offsets: Vec<Embedding>, switch_period: usize, seed: u64) -> Result<Self> {
        let first = offsets.first().ok_or(Error::EmptyOffsets)?;
        if let Some(bad) = offsets.iter().find(|o| o.dim() != first.dim()) {
            return Err(Error::DimMismatch {
                left: first.dim(),
                right: bad.dim(),
            });
        }
        if switch_period == 0 {
            return Err(Error::Config("switch_period must be positive".into()));
        }
        Ok(Self {
            offsets,
            switch_period,
            seed,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShiftedTrajectory {
    pub views: Vec<usize>,
    pub embeddings: Vec<Embedding>,
}

/// Adds a camera offset to every embedding. A fresh camera is drawn at
/// `t = 0` and at every multiple of the switch period; with more than one
/// camera the draw excludes the camera currently in use.
pub fn viewpoint_shift(trajectory: &[Embedding], vm: &ViewpointModel) -> Result<ShiftedTrajectory> {
    if vm.offsets.is_empty() {
        return Err(Error::EmptyOffsets);
    }
    let n = vm.offsets.len();
    let mut rng = seeded(vm.seed, 3);
    let mut view = rng.random_range(0..n);
    let mut views = Vec::with_capacity(trajectory.len());
    let mut embeddings = Vec::with_capacity(trajectory.len());
    for (t, e) in trajectory.iter().enumerate() {
        if t > 0 && t % vm.switch_period == 0 && n > 1 {
            let pick = rng.random_range(0..n - 1);
            view = if pick >= view { pick + 1 } else { pick };
        }
        views.push(view);
        embeddings.push(e.add(&vm.offsets[view])?);
    }
    Ok(ShiftedTrajectory { views, embeddings })
}

/// Emulates a view-invariant scene encoder by removing the span of the
/// camera offsets, leaving a `leakage` fraction of it behind.
#[derive(Clone, Debug)]
pub struct SceneAligner {
    basis: Vec<Embedding>,
    leakage: f64,
}

impl SceneAligner {
    pub fn from_offsets(offsets: &[Embedding], leakage: f64) -> Result<Self> {
        let mut basis: Vec<Embedding> = Vec::new();
        for o in offsets {
            let mut v = o.clone();
            for b in &basis {
                v = v.add_scaled(-v.dot(b)?, b)?;
            }
            if v.norm() > 1e-9 * (1.0 + o.norm()) {
                basis.push(v.normalized()?);
            }
        }
        Ok(Self { basis, leakage })
    }

    pub fn align(&self, e: &Embedding) -> Result<Embedding> {
        let mut out = e.clone();
        for b in &self.basis {
            out = out.add_scaled(-(1.0 - self.leakage) * e.dot(b)?, b)?;
        }
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ViewRobustness {
    /// Mean over time of the across-view variance of the raw reward.
    pub raw_variance: f64,
    /// Same statistic after scene alignment.
    pub aligned_variance: f64,
}

impl ViewRobustness {
    pub fn ratio(&self) -> f64 {
        self.aligned_variance / self.raw_variance
    }
}

fn variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n
}

/// Renders every step under every camera and compares how much the reward
/// spreads across cameras at a fixed step.
pub fn view_variance_report(
    trajectory: &[Embedding],
    instruction: &Embedding,
    offsets: &[Embedding],
    aligner: &SceneAligner,
) -> Result<ViewRobustness> {
    if offsets.is_empty() {
        return Err(Error::EmptyOffsets);
    }
    if trajectory.is_empty() {
        return Err(Error::TooShort);
    }
    let mut raw_total = 0.0;
    let mut aligned_total = 0.0;
    for e in trajectory {
        let mut raw = Vec::with_capacity(offsets.len());
        let mut aligned = Vec::with_capacity(offsets.len());
        for o in offsets {
            let seen = e.add(o)?;
            raw.push(cosine_similarity(&seen, instruction)?);
            aligned.push(cosine_similarity(&aligner.align(&seen)?, instruction)?);
        }
        raw_total += variance(&raw);
        aligned_total += variance(&aligned);
    }
    let n = trajectory.len() as f64;
    Ok(ViewRobustness {
        raw_variance: raw_total / n,
        aligned_variance: aligned_total / n,
    })
}
