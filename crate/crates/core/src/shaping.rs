//! Noise-floor calibration and gating of raw similarity scores.
//!
//! The default path collects the first `calibration_steps` raw scores, takes
//! their `m`-quantile as the threshold `theta`, and maps every later score
//! through `sigmoid(kappa * (score - theta))`. While calibrating, the emitted
//! reward is zero. EMA-with-hysteresis and a scalar Kalman filter are
//! available as alternative smoothing paths.

use serde::{Deserialize, Serialize};

use crate::error::{check_finite, check_range, Error, Result};

pub const DEFAULT_CALIBRATION_STEPS: usize = 10_000;
pub const DEFAULT_QUANTILE: f64 = 0.97;
pub const DEFAULT_KAPPA: f64 = 100.0;

/// Linear-interpolation quantile of an ascending slice.
pub fn sorted_quantile(sorted: &[f64], m: f64) -> Result<f64> {
    if sorted.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            have: sorted.len(),
        });
    }
    let h = m * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Ok(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

/// Bounded buffer of early raw scores; freezes once full.
#[derive(Clone, Debug)]
pub struct NoiseCalibrator {
    buffer: Vec<f64>,
    capacity: usize,
    quantile: f64,
    frozen: Option<f64>,
}

impl NoiseCalibrator {
    pub fn new(capacity: usize, quantile: f64) -> Result<Self> {
        check_range(
            "quantile",
            quantile,
            quantile > 0.0 && quantile < 1.0,
            "(0, 1)",
        )?;
        if capacity < 2 {
            return Err(Error::Config(format!(
                "calibration_steps must be at least 2, got {capacity}"
            )));
        }
        Ok(Self {
            buffer: Vec::with_capacity(capacity.min(1 << 16)),
            capacity,
            quantile,
            frozen: None,
        })
    }

    pub fn observe(&mut self, score: f64) -> Result<()> {
        check_finite(score, "calibration score")?;
        if self.buffer.len() < self.capacity {
            self.buffer.push(score);
            if self.buffer.len() == self.capacity {
                self.frozen = Some(self.compute_threshold()?);
            }
        }
        Ok(())
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen.is_some()
    }

    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn buffer(&self) -> &[f64] {
        &self.buffer
    }

    pub fn threshold(&self) -> Result<f64> {
        match self.frozen {
            Some(theta) => Ok(theta),
            None => self.compute_threshold(),
        }
    }

    fn compute_threshold(&self) -> Result<f64> {
        let mut sorted = self.buffer.clone();
        sorted.sort_by(f64::total_cmp);
        sorted_quantile(&sorted, self.quantile)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GateConfig {
    pub kappa: f64,
    pub theta: f64,
}

impl GateConfig {
    pub fn new(kappa: f64, theta: f64) -> Result<Self> {
        check_range("kappa", kappa, kappa > 0.0 && kappa.is_finite(), "(0, inf)")?;
        check_finite(theta, "theta")?;
        Ok(Self { kappa, theta })
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `sigmoid(kappa * (score - theta))`.
pub fn gate(score: f64, cfg: &GateConfig) -> Result<f64> {
    check_finite(score, "gate input")?;
    Ok(sigmoid(cfg.kappa * (score - cfg.theta)))
}

/// Exponential moving average with a two-threshold arming band around theta.
#[derive(Clone, Debug, PartialEq)]
pub struct EmaHysteresis {
    pub value: f64,
    pub beta: f64,
    pub band: f64,
    pub armed: bool,
}

impl EmaHysteresis {
    pub fn new(initial: f64, beta: f64, band: f64) -> Result<Self> {
        check_finite(initial, "ema initial value")?;
        check_range("ema_beta", beta, (0.0..1.0).contains(&beta), "[0, 1)")?;
        check_range("hysteresis_band", band, band >= 0.0 && band.is_finite(), "[0, inf)")?;
        Ok(Self {
            value: initial,
            beta,
            band,
            armed: false,
        })
    }

    /// Smooths `score` and updates the arming state against `theta`.
    pub fn step(&mut self, score: f64, theta: f64) -> Result<f64> {
        check_finite(score, "ema input")?;
        self.value = self.beta * self.value + (1.0 - self.beta) * score;
        if !self.armed && self.value > theta + self.band {
            self.armed = true;
        } else if self.armed && self.value < theta - self.band {
            self.armed = false;
        }
        Ok(self.value)
    }
}

/// Scalar random-walk Kalman filter.
#[derive(Clone, Debug, PartialEq)]
pub struct Kalman1D {
    pub mean: f64,
    pub var: f64,
    pub process_var: f64,
    pub measurement_var: f64,
}

impl Kalman1D {
    pub fn new(mean: f64, var: f64, process_var: f64, measurement_var: f64) -> Result<Self> {
        check_finite(mean, "kalman mean")?;
        check_range("kalman_var", var, var > 0.0 && var.is_finite(), "(0, inf)")?;
        check_range(
            "process_var",
            process_var,
            process_var >= 0.0 && process_var.is_finite(),
            "[0, inf)",
        )?;
        check_range(
            "measurement_var",
            measurement_var,
            measurement_var >= 0.0 && measurement_var.is_finite(),
            "[0, inf)",
        )?;
        Ok(Self {
            mean,
            var,
            process_var,
            measurement_var,
        })
    }

    pub fn step(&mut self, score: f64) -> Result<f64> {
        check_finite(score, "kalman input")?;
        let prior = self.var + self.process_var;
        let gain = prior / (prior + self.measurement_var);
        self.mean += gain * (score - self.mean);
        self.var = ((1.0 - gain) * prior).max(f64::MIN_POSITIVE);
        Ok(self.mean)
    }

    pub fn gain(&self) -> f64 {
        let prior = self.var + self.process_var;
        prior / (prior + self.measurement_var)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    #[default]
    SigmoidGate,
    EmaHysteresis,
    Kalman1d,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdScope {
    #[default]
    Global,
    PerStage,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub kind: FilterKind,
    pub ema_beta: f64,
    pub hysteresis_band: f64,
    pub process_var: f64,
    pub measurement_var: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            kind: FilterKind::SigmoidGate,
            ema_beta: 0.9,
            hysteresis_band: 0.01,
            process_var: 1e-4,
            measurement_var: 1e-2,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        EmaHysteresis::new(0.0, self.ema_beta, self.hysteresis_band)?;
        Kalman1D::new(0.0, 1.0, self.process_var, self.measurement_var)?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShapingConfig {
    pub kappa: f64,
    pub quantile: f64,
    pub calibration_steps: usize,
    pub threshold_scope: ThresholdScope,
    pub filter: FilterConfig,
}

impl Default for ShapingConfig {
    fn default() -> Self {
        Self {
            kappa: DEFAULT_KAPPA,
            quantile: DEFAULT_QUANTILE,
            calibration_steps: DEFAULT_CALIBRATION_STEPS,
            threshold_scope: ThresholdScope::Global,
            filter: FilterConfig::default(),
        }
    }
}

impl ShapingConfig {
    pub fn validate(&self) -> Result<()> {
        GateConfig::new(self.kappa, 0.0)?;
        NoiseCalibrator::new(self.calibration_steps, self.quantile)?;
        self.filter.validate()
    }
}

#[derive(Clone, Debug)]
enum FilterRuntime {
    Sigmoid,
    Ema(Option<EmaHysteresis>),
    Kalman(Option<Kalman1D>),
}

/// Output of one shaping step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Shaped {
    pub reward: f64,
    /// The score fed to the gate after smoothing.
    pub filtered: f64,
    pub calibrating: bool,
}

/// Calibrated gate plus the selected smoothing path.
#[derive(Clone, Debug)]
pub struct Shaper {
    cfg: ShapingConfig,
    calibrators: Vec<NoiseCalibrator>,
    fixed_theta: Option<f64>,
    runtime: FilterRuntime,
}

impl Shaper {
    pub fn new(cfg: ShapingConfig) -> Result<Self> {
        cfg.validate()?;
        let runtime = match cfg.filter.kind {
            FilterKind::SigmoidGate => FilterRuntime::Sigmoid,
            FilterKind::EmaHysteresis => FilterRuntime::Ema(None),
            FilterKind::Kalman1d => FilterRuntime::Kalman(None),
        };
        Ok(Self {
            cfg,
            calibrators: Vec::new(),
            fixed_theta: None,
            runtime,
        })
    }

    /// Skips calibration and gates against a known threshold.
    pub fn with_threshold(cfg: ShapingConfig, theta: f64) -> Result<Self> {
        GateConfig::new(cfg.kappa, theta)?;
        let mut shaper = Self::new(cfg)?;
        shaper.fixed_theta = Some(theta);
        Ok(shaper)
    }

    pub fn config(&self) -> &ShapingConfig {
        &self.cfg
    }

    fn calibrator_index(&self, stage: usize) -> usize {
        match self.cfg.threshold_scope {
            ThresholdScope::Global => 0,
            ThresholdScope::PerStage => stage,
        }
    }

    /// Threshold in effect for `stage`, if calibration has finished.
    pub fn threshold(&self, stage: usize) -> Option<f64> {
        if let Some(theta) = self.fixed_theta {
            return Some(theta);
        }
        self.calibrators
            .get(self.calibrator_index(stage))
            .and_then(|c| c.threshold().ok().filter(|_| c.is_frozen()))
    }

    pub fn shape(&mut self, stage: usize, raw: f64) -> Result<Shaped> {
        check_finite(raw, "raw reward")?;
        let theta = match self.fixed_theta {
            Some(theta) => theta,
            None => {
                let idx = self.calibrator_index(stage);
                while self.calibrators.len() <= idx {
                    self.calibrators.push(NoiseCalibrator::new(
                        self.cfg.calibration_steps,
                        self.cfg.quantile,
                    )?);
                }
                let cal = &mut self.calibrators[idx];
                if !cal.is_frozen() {
                    cal.observe(raw)?;
                    return Ok(Shaped {
                        reward: 0.0,
                        filtered: raw,
                        calibrating: true,
                    });
                }
                cal.threshold()?
            }
        };
        let gate_cfg = GateConfig::new(self.cfg.kappa, theta)?;
        let f = &self.cfg.filter;
        let (filtered, reward) = match &mut self.runtime {
            FilterRuntime::Sigmoid => (raw, gate(raw, &gate_cfg)?),
            FilterRuntime::Ema(state) => {
                let ema = match state {
                    Some(ema) => ema,
                    None => state.insert(EmaHysteresis::new(raw, f.ema_beta, f.hysteresis_band)?),
                };
                let y = ema.step(raw, theta)?;
                let r = if ema.armed { gate(y, &gate_cfg)? } else { 0.0 };
                (y, r)
            }
            FilterRuntime::Kalman(state) => {
                let kf = match state {
                    Some(kf) => kf,
                    None => state.insert(Kalman1D::new(
                        raw,
                        f.measurement_var.max(f64::MIN_POSITIVE),
                        f.process_var,
                        f.measurement_var,
                    )?),
                };
                let y = kf.step(raw)?;
                (y, gate(y, &gate_cfg)?)
            }
        };
        Ok(Shaped {
            reward,
            filtered,
            calibrating: false,
        })
    }
}
