//! Self-checks behind `vlmshape verify`. The report layout is documented in
//! `docs/verify-report.md`.

use std::time::Instant;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::disentangle::{grad_check, FactorDataset, FactorParams, LossWeights, ParamSet, ToyModel};
use crate::error::{Error, Result};
use crate::geometry::{cosine_similarity, Embedding, ProjectionConfig, TaskDirection};
use crate::io::{EmbeddingDataset, Kind};
use crate::rng::{gaussian_vec, seeded, Rng};
use crate::shaping::{gate, sorted_quantile, GateConfig, NoiseCalibrator, Shaper, ShapingConfig};
use crate::stage::{StageMachine, StageSpec, TransitionConfig};
use crate::world::{
    measure_snr, monotonicity_violation_rate, AlignedScenario, LatentTaskModel, Progress,
    ScenarioParams,
};

pub const REPORT_VERSION: u32 = 1;

/// Projection strengths covered by the SNR check.
pub const SNR_ALPHAS: [f64; 3] = [0.5, 0.8, 0.95];

/// Per-coordinate noise for the monotonicity check on the default scenario.
pub const MONOTONICITY_SIGMA: f64 = 5e-4;

/// Deliberate defect used to confirm that the suite can fail.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fault {
    #[default]
    None,
    /// Projects with the next alpha in the sweep instead of the requested one.
    AlphaOffByOne,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    /// The measured statistic the threshold applies to.
    pub value: f64,
    pub threshold: f64,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerifyReport {
    pub version: u32,
    pub seed: u64,
    pub fault: Fault,
    pub passed: bool,
    pub checks: Vec<Check>,
}

fn timed(name: &'static str, f: impl FnOnce() -> Result<(bool, f64, f64, String)>) -> Check {
    let t0 = Instant::now();
    let (passed, value, threshold, detail) = match f() {
        Ok(r) => r,
        Err(e) => (false, f64::NAN, f64::NAN, format!("error: {e}")),
    };
    Check {
        name,
        passed,
        value,
        threshold,
        detail,
        seconds: t0.elapsed().as_secs_f64(),
    }
}

/// Measured SNR gain for each alpha in [`SNR_ALPHAS`] on a random dim-64
/// trajectory of `len` steps with per-coordinate noise 0.1. Returns
/// `(alpha, gain)` pairs.
pub fn snr_gains(seed: u64, len: usize, fault: Fault) -> Result<Vec<(f64, f64)>> {
    let mut rng = seeded(seed, 8);
    let start = Embedding::new(gaussian_vec(&mut rng, 64, 1.0))?;
    let d = TaskDirection::new(Embedding::new(gaussian_vec(&mut rng, 64, 1.0))?)?;
    let traj = LatentTaskModel::new(start.clone(), d.clone(), 0.1, Progress::Identity, seed)?
        .gen_trajectory(len)?;
    SNR_ALPHAS
        .iter()
        .enumerate()
        .map(|(i, &alpha)| {
            let used = match fault {
                Fault::None => alpha,
                Fault::AlphaOffByOne => SNR_ALPHAS[(i + 1) % SNR_ALPHAS.len()],
            };
            Ok((alpha, measure_snr(&traj, &start, &d, used)?.gain()))
        })
        .collect()
}

fn check_snr(seed: u64, fault: Fault) -> Result<(bool, f64, f64, String)> {
    let gains = snr_gains(seed, 10_000, fault)?;
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for (alpha, gain) in gains {
        let expected = (1.0 - alpha).powi(-2);
        worst = worst.max((gain / expected - 1.0).abs());
        parts.push(format!("alpha {alpha}: gain {gain:.3} vs {expected:.3}"));
    }
    Ok((worst <= 0.05, worst, 0.05, parts.join("; ")))
}

/// Mean raw and worst projected violation rate over `seeds` trajectories of
/// the default scenario.
pub fn monotonicity_rates(seeds: u64, len: usize, alpha: f64, sigma: f64) -> Result<(f64, f64)> {
    let scenario = AlignedScenario::generate(&ScenarioParams::default())?;
    let spec = scenario.stage_spec()?;
    let cfg = ProjectionConfig::new(alpha)?;
    let (mut raw_sum, mut proj_max) = (0.0, 0.0f64);
    for seed in 0..seeds {
        let traj = scenario.latent_model(sigma, Progress::Identity, seed)?.gen_trajectory(len)?;
        let mut raw = Vec::with_capacity(len);
        let mut proj = Vec::with_capacity(len);
        for p in &traj {
            raw.push(cosine_similarity(&p.embedding, &scenario.instruction)?);
            proj.push(spec.reward(&p.embedding, cfg)?);
        }
        raw_sum += monotonicity_violation_rate(&raw)?;
        proj_max = proj_max.max(monotonicity_violation_rate(&proj)?);
    }
    Ok((raw_sum / seeds as f64, proj_max))
}

fn check_monotonicity() -> Result<(bool, f64, f64, String)> {
    let margin = AlignedScenario::generate(&ScenarioParams::default())?
        .alignment_margin(ProjectionConfig::new(0.95)?, 1000)?;
    let (raw, proj) = monotonicity_rates(20, 1000, 0.95, MONOTONICITY_SIGMA)?;
    let passed = proj < 0.05 && raw > 0.25 && margin > 0.0;
    Ok((
        passed,
        proj,
        0.05,
        format!("worst projected {proj:.4}, mean raw {raw:.3} (needs > 0.25), alignment margin {margin:.3}"),
    ))
}

/// Fraction of post-calibration steps whose gate exceeds 0.5 when every
/// observation is a noisy start state.
pub fn noise_floor_rate(seed: u64, samples: usize) -> Result<f64> {
    let scenario = AlignedScenario::generate(&ScenarioParams::default())?;
    let spec = scenario.stage_spec()?;
    let geom = ProjectionConfig::default();
    let model = scenario.latent_model(0.005, Progress::Identity, seed)?;
    let cfg = ShapingConfig::default();
    let mut rng = seeded(seed, 9);
    let mut shaper = Shaper::new(cfg.clone())?;
    for _ in 0..cfg.calibration_steps {
        shaper.shape(0, spec.reward(&model.sample(0.0, &mut rng)?, geom)?)?;
    }
    let mut open = 0usize;
    for _ in 0..samples {
        let out = shaper.shape(0, spec.reward(&model.sample(0.0, &mut rng)?, geom)?)?;
        if out.reward > 0.5 {
            open += 1;
        }
    }
    Ok(open as f64 / samples as f64)
}

fn check_gate(seed: u64) -> Result<(bool, f64, f64, String)> {
    let mid = gate(0.3, &GateConfig::new(100.0, 0.3)?)?;
    let rate = noise_floor_rate(seed, 100_000)?;
    let deviation = (rate - 0.03).abs();
    let passed = (mid - 0.5).abs() < 1e-12 && deviation <= 0.01;
    Ok((
        passed,
        deviation,
        0.01,
        format!("open fraction {rate:.4} (target 0.03 +/- 0.01), gate at theta {mid}"),
    ))
}

fn check_quantile(seed: u64) -> Result<(bool, f64, f64, String)> {
    let mut rng = seeded(seed, 10);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let xs: Vec<f64> = (0..1001).map(|_| rng.random::<f64>()).collect();
        let mut sorted = xs.clone();
        sorted.sort_by(f64::total_cmp);
        // with 1001 points, m = k / 1000 lands exactly on the k-th order statistic
        let k = rng.random_range(0..=1000);
        let q = sorted_quantile(&sorted, k as f64 / 1000.0)?;
        worst = worst.max((q - sorted[k]).abs());
        let mut cal = NoiseCalibrator::new(xs.len(), k as f64 / 1000.0)?;
        for &x in &xs {
            cal.observe(x)?;
        }
        worst = worst.max((cal.threshold()? - sorted[k]).abs());
    }
    Ok((worst <= 1e-12, worst, 1e-12, "order-statistic agreement over 20 draws".into()))
}

fn unit(v: &[f64]) -> Result<Embedding> {
    Embedding::new(v.to_vec())
}

/// Runs `pattern` (bit t set = above threshold at step t) through a machine
/// of `stages` identical stages and returns the steps that fired.
pub fn stage_transitions(pattern: u32, len: usize, stages: usize) -> Result<Vec<usize>> {
    let spec = StageSpec::new(
        unit(&[1.0, 0.0, 1.0])?,
        unit(&[0.0, 0.0, 1.0])?,
        unit(&[0.0, 1.0, 0.0])?,
        unit(&[1.0, 0.0, 0.0])?,
    )?;
    let mut m = StageMachine::new(vec![spec; stages], TransitionConfig::default())?;
    let above = unit(&[0.999, (1.0f64 - 0.999 * 0.999).sqrt(), 0.0])?;
    let below = unit(&[0.99, (1.0f64 - 0.99 * 0.99).sqrt(), 0.0])?;
    let geom = ProjectionConfig::default();
    let mut fired = Vec::new();
    for t in 0..len {
        let obs = if pattern >> t & 1 == 1 { &above } else { &below };
        if m.step(obs, geom)?.transition {
            fired.push(t);
        }
    }
    Ok(fired)
}

fn check_stage() -> Result<(bool, f64, f64, String)> {
    let patience = TransitionConfig::default().patience;
    let mut mismatches = 0usize;
    for stages in [1, 2, 3] {
        for pattern in 0u32..256 {
            let mut expected = Vec::new();
            let mut run = 0;
            for t in 0..8 {
                run = if pattern >> t & 1 == 1 { run + 1 } else { 0 };
                if run > 0 && run % patience == 0 && expected.len() < stages {
                    expected.push(t);
                }
            }
            if stage_transitions(pattern, 8, stages)? != expected {
                mismatches += 1;
            }
        }
    }
    Ok((
        mismatches == 0,
        mismatches as f64,
        0.0,
        "all 256 length-8 patterns for 1, 2 and 3 stages".into(),
    ))
}

/// Random dataset with a random width, entry count, ids and metadata.
pub fn random_dataset(rng: &mut Rng) -> Result<EmbeddingDataset> {
    let dim = rng.random_range(1..=16u32);
    let mut ds = EmbeddingDataset::new(dim)?;
    for k in 0..rng.random_range(0..20) {
        let kind = if rng.random::<bool>() { Kind::Image } else { Kind::Text };
        let values = (0..dim).map(|_| rng.random_range(-1e3f32..1e3)).collect();
        ds.push(format!("e{k}-{}", rng.random::<u16>()), kind, values)?;
    }
    for k in 0..rng.random_range(0..3) {
        ds.metadata.insert(format!("key{k}"), format!("value \"{}\"", rng.random::<u32>()));
    }
    Ok(ds)
}

fn check_round_trip(seed: u64) -> Result<(bool, f64, f64, String)> {
    let mut rng = seeded(seed, 11);
    let mut failures = 0usize;
    for _ in 0..100 {
        let ds = random_dataset(&mut rng)?;
        let first = ds.to_bytes()?;
        let identical = EmbeddingDataset::from_bytes(&first)
            .and_then(|back| back.to_bytes())
            .is_ok_and(|second| second == first);
        if !identical {
            failures += 1;
        }
        // a flipped bit in magic or version must be named as such
        let mut bad = first.clone();
        let pos = rng.random_range(0..8);
        bad[pos] ^= 1 << rng.random_range(0..8);
        let named = match EmbeddingDataset::from_bytes(&bad) {
            Err(Error::BadMagic(_)) => pos < 4,
            Err(Error::UnsupportedVersion(_)) => pos >= 4,
            _ => false,
        };
        if !named {
            failures += 1;
        }
        let mut zero_dim = first.clone();
        zero_dim[8..12].copy_from_slice(&0u32.to_le_bytes());
        if !matches!(EmbeddingDataset::from_bytes(&zero_dim), Err(Error::BadDimension(0))) {
            failures += 1;
        }
        let cut = rng.random_range(0..first.len());
        if !matches!(EmbeddingDataset::from_bytes(&first[..cut]), Err(Error::Truncated(_))) {
            failures += 1;
        }
    }
    Ok((
        failures == 0,
        failures as f64,
        0.0,
        "100 write/read/write cycles with header and truncation corruption".into(),
    ))
}

/// Worst relative gradient error over `draws` random models and batches.
pub fn worst_grad_error(seed: u64, draws: usize) -> Result<f64> {
    let ds = FactorDataset::generate(&FactorParams::default())?;
    let w = LossWeights::default();
    let mut rng = seeded(seed, 12);
    let mut worst: f64 = 0.0;
    for _ in 0..draws {
        let model = ToyModel::init(ds.input_dim(), 8, 8, 0.5, &mut rng);
        let batch = ds.draw_batch(&mut rng);
        worst = worst.max(grad_check(&model, &ds, &batch, &w, 2, 1e-6, ParamSet::All)?);
    }
    Ok(worst)
}

fn check_grad(seed: u64) -> Result<(bool, f64, f64, String)> {
    let worst = worst_grad_error(seed, 10)?;
    Ok((worst < 1e-4, worst, 1e-4, "central differences, 10 draws, full loss".into()))
}

pub fn run_verify(seed: u64, fault: Fault) -> VerifyReport {
    let checks = vec![
        timed("snr", || check_snr(seed, fault)),
        timed("monotonicity", check_monotonicity),
        timed("gate", || check_gate(seed)),
        timed("quantile", || check_quantile(seed)),
        timed("stage", check_stage),
        timed("round_trip", || check_round_trip(seed)),
        timed("grad_check", || check_grad(seed)),
    ];
    VerifyReport {
        version: REPORT_VERSION,
        seed,
        fault,
        passed: checks.iter().all(|c| c.passed),
        checks,
    }
}
