use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    cosine_similarity, project_text, text_direction, Embedding, ProjectionConfig, TaskDirection,
};
use crate::rng::{gaussian_vec, seeded};
use crate::stage::StageSpec;
use crate::world::latent::{LatentTaskModel, Progress};

/// Geometry of a synthetic single-stage task.
///
/// With an orthonormal frame `u0..u4` drawn from the seed:
///
/// ```text
/// start       = common * u2 + spread * u0
/// goal        = common * u2 + spread * u1
/// baseline    = common * u2 + baseline_offset * u4
/// instruction = baseline + text_gain * unit(goal - start) + text_offset * u3
/// ```
///
/// A large `common` component relative to `spread` mimics the narrow
/// cosine range of real image/text embeddings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioParams {
    pub dim: usize,
    pub common: f64,
    pub spread: f64,
    pub text_gain: f64,
    pub text_offset: f64,
    pub baseline_offset: f64,
    pub seed: u64,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self {
            dim: 64,
            common: 1.0,
            spread: 0.1,
            text_gain: 0.1,
            text_offset: 0.1,
            baseline_offset: 0.3,
            seed: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlignedScenario {
    pub start: Embedding,
    pub goal: Embedding,
    pub instruction: Embedding,
    pub baseline: Embedding,
}

fn orthonormal_frame(dim: usize, count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if dim < count {
        return Err(Error::BadDimension(dim));
    }
    let mut rng = seeded(seed, 7);
    let mut frame: Vec<Vec<f64>> = Vec::with_capacity(count);
    while frame.len() < count {
        let mut v = gaussian_vec(&mut rng, dim, 1.0);
        // two Gram-Schmidt passes for numerical orthogonality
        for _ in 0..2 {
            for u in &frame {
                let c: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= c * b);
            }
        }
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n > 1e-6 {
            frame.push(v.into_iter().map(|a| a / n).collect());
        }
    }
    Ok(frame)
}

impl AlignedScenario {
    pub fn generate(p: &ScenarioParams) -> Result<Self> {
        let u = orthonormal_frame(p.dim, 5, p.seed)?;
        let combo = |terms: &[(f64, usize)]| -> Result<Embedding> {
            let mut v = vec![0.0; p.dim];
            for &(k, i) in terms {
                v.iter_mut().zip(&u[i]).for_each(|(a, b)| *a += k * b);
            }
            Embedding::new(v)
        };
        let start = combo(&[(p.common, 2), (p.spread, 0)])?;
        let goal = combo(&[(p.common, 2), (p.spread, 1)])?;
        let baseline = combo(&[(p.common, 2), (p.baseline_offset, 4)])?;
        let d_unit = goal.sub(&start)?.normalized()?;
        let instruction = baseline
            .add_scaled(p.text_gain, &d_unit)?
            .add(&combo(&[(p.text_offset, 3)])?)?;
        Ok(Self {
            start,
            goal,
            instruction,
            baseline,
        })
    }

    pub fn image_direction(&self) -> Result<TaskDirection> {
        TaskDirection::between(&self.start, &self.goal)
    }

    pub fn stage_spec(&self) -> Result<StageSpec> {
        StageSpec::new(
            self.instruction.clone(),
            self.baseline.clone(),
            self.start.clone(),
            self.goal.clone(),
        )
    }

    pub fn latent_model(
        &self,
        noise_sigma: f64,
        progress: Progress,
        seed: u64,
    ) -> Result<LatentTaskModel> {
        LatentTaskModel::new(
            self.start.clone(),
            self.image_direction()?,
            noise_sigma,
            progress,
            seed,
        )
    }

    pub fn projected_instruction(&self, cfg: ProjectionConfig) -> Result<Embedding> {
        project_text(
            &self.instruction,
            &text_direction(&self.instruction, &self.baseline)?,
            cfg,
        )
    }

    /// Smallest value over `c in [0, 1]` of
    /// `cos(d, e'_l) - cos(S(c), e'_l) * cos(S(c), d)` with
    /// `S(c) = start + c * d`. Positive means the projected reward has a
    /// positive slope in `c` along the whole noise-free segment.
    pub fn alignment_margin(&self, cfg: ProjectionConfig, grid: usize) -> Result<f64> {
        let d = self.image_direction()?;
        let target = self.projected_instruction(cfg)?;
        let lhs = cosine_similarity(d.vector(), &target)?;
        let mut margin = f64::INFINITY;
        for i in 0..=grid {
            let c = i as f64 / grid as f64;
            let s = self.start.add_scaled(c, d.vector())?;
            let rhs = cosine_similarity(&s, &target)? * cosine_similarity(&s, d.vector())?;
            margin = margin.min(lhs - rhs);
        }
        Ok(margin)
    }
}
