use serde::{Deserialize, Serialize};

use crate::error::{check_range, Error, Result};
use crate::geometry::{make_projector, split, Embedding, ProjectionConfig, TaskDirection};
use crate::rng::{gaussian_vec, seeded, Rng};

/// Monotone map from latent progress to the expected progress coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Progress {
    #[default]
    Identity,
    /// `lambda^0.5`, a saturating profile.
    Sqrt,
}

impl Progress {
    pub fn eval(self, lambda: f64) -> f64 {
        match self {
            Progress::Identity => lambda,
            Progress::Sqrt => lambda.max(0.0).sqrt(),
        }
    }

    /// Checks strict increase and `h(0) = 0` on a uniform grid.
    pub fn is_valid(self, points: usize) -> bool {
        let vals: Vec<f64> = (0..=points)
            .map(|i| self.eval(i as f64 / points as f64))
            .collect();
        vals[0] == 0.0 && vals.windows(2).all(|w| w[1] > w[0])
    }
}

/// Gaussian noise restricted to the orthogonal complement of `d`.
pub fn orthogonal_noise(rng: &mut Rng, d: &TaskDirection, sigma: f64) -> Result<Embedding> {
    let dim = d.dim();
    if dim < 2 {
        return Err(Error::BadDimension(dim));
    }
    if sigma == 0.0 {
        return Embedding::zeros(dim);
    }
    let raw = Embedding::new(gaussian_vec(rng, dim, sigma))?;
    Ok(split(&raw, d)?.1)
}

/// `e_t = e_start + h(lambda_t) * d + eps_t` with `eps_t` orthogonal to `d`.
#[derive(Clone, Debug)]
pub struct LatentTaskModel {
    pub e_start: Embedding,
    pub direction: TaskDirection,
    pub noise_sigma: f64,
    pub progress: Progress,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryPoint {
    pub lambda: f64,
    pub embedding: Embedding,
}

impl LatentTaskModel {
    pub fn new(
        e_start: Embedding,
        direction: TaskDirection,
        noise_sigma: f64,
        progress: Progress,
        seed: u64,
    ) -> Result<Self> {
        if e_start.dim() != direction.dim() {
            return Err(Error::DimMismatch {
                left: e_start.dim(),
                right: direction.dim(),
            });
        }
        check_range(
            "noise_sigma",
            noise_sigma,
            noise_sigma >= 0.0 && noise_sigma.is_finite(),
            "[0, inf)",
        )?;
        Ok(Self {
            e_start,
            direction,
            noise_sigma,
            progress,
            seed,
        })
    }

    pub fn dim(&self) -> usize {
        self.e_start.dim()
    }

    pub fn goal(&self) -> Embedding {
        self.signal(1.0)
    }

    /// Noise-free embedding at latent progress `lambda`.
    pub fn signal(&self, lambda: f64) -> Embedding {
        self.e_start
            .add_scaled(self.progress.eval(lambda), self.direction.vector())
            .expect("dims checked at construction")
    }

    pub fn sample(&self, lambda: f64, rng: &mut Rng) -> Result<Embedding> {
        let noise = orthogonal_noise(rng, &self.direction, self.noise_sigma)?;
        self.signal(lambda).add(&noise)
    }

    pub fn gen_trajectory(&self, len: usize) -> Result<Vec<TrajectoryPoint>> {
        if len < 2 {
            return Err(Error::TooShort);
        }
        let mut rng = seeded(self.seed, 0);
        (0..len)
            .map(|t| {
                let lambda = t as f64 / (len - 1) as f64;
                Ok(TrajectoryPoint {
                    lambda,
                    embedding: self.sample(lambda, &mut rng)?,
                })
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SnrReport {
    pub signal_energy: f64,
    pub noise_energy_raw: f64,
    pub noise_energy_projected: f64,
    pub snr_raw: f64,
    pub snr_projected: f64,
}

impl SnrReport {
    pub fn gain(&self) -> f64 {
        self.snr_projected / self.snr_raw
    }
}

/// Signal-to-noise ratio of the displacements `e_t - e_start` before and
/// after projection along `d`.
pub fn measure_snr(
    trajectory: &[TrajectoryPoint],
    e_start: &Embedding,
    d: &TaskDirection,
    alpha: f64,
) -> Result<SnrReport> {
    let projector = make_projector(d, ProjectionConfig::new(alpha)?)?;
    let d_norm_sq = d.norm() * d.norm();
    let mut signal = 0.0;
    let mut signal_proj = 0.0;
    let mut noise = 0.0;
    let mut noise_proj = 0.0;
    for p in trajectory {
        let delta = p.embedding.sub(e_start)?;
        let (c, eps) = split(&delta, d)?;
        signal += c * c * d_norm_sq;
        noise += eps.norm().powi(2);
        let (cp, eps_p) = split(&projector.apply(&delta)?, d)?;
        signal_proj += cp * cp * d_norm_sq;
        noise_proj += eps_p.norm().powi(2);
    }
    // sigma = 0 still leaves rounding residue in the orthogonal split
    let floor = 1e-20 * (signal + noise);
    if noise <= floor || noise_proj <= floor * (1.0 - alpha).powi(2) {
        return Err(Error::DegenerateNoise);
    }
    Ok(SnrReport {
        signal_energy: signal,
        noise_energy_raw: noise,
        noise_energy_projected: noise_proj,
        snr_raw: signal / noise,
        snr_projected: signal_proj / noise_proj,
    })
}

/// Fraction of adjacent pairs with `r[t + 1] < r[t]`.
pub fn monotonicity_violation_rate(rewards: &[f64]) -> Result<f64> {
    if rewards.len() < 2 {
        return Err(Error::TooShort);
    }
    let descents = rewards.windows(2).filter(|w| w[1] < w[0]).count();
    Ok(descents as f64 / (rewards.len() - 1) as f64)
}
