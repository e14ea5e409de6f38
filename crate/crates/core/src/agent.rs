//! Tabular Q-learning on the sparse gridworld, with and without shaping.

use std::io::Write;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_finite, check_range, Error, Result};
use crate::fusion::{fuse, FusionConfig};
use crate::geometry::ProjectionConfig;
use crate::rng::seeded;
use crate::shaping::{Shaper, ShapingConfig};
use crate::stage::{StageMachine, TransitionConfig};
use crate::world::{AlignedScenario, GridWorld, Progress, ScenarioParams};

pub const DEFAULT_GAMMA: f64 = 0.99;

#[derive(Clone, Debug, PartialEq)]
pub struct QTable {
    values: Vec<[f64; 4]>,
    pub learning_rate: f64,
    pub gamma: f64,
}

impl QTable {
    pub fn new(num_states: usize, learning_rate: f64, gamma: f64) -> Result<Self> {
        check_range(
            "learning_rate",
            learning_rate,
            learning_rate > 0.0 && learning_rate <= 1.0,
            "(0, 1]",
        )?;
        check_range("gamma", gamma, (0.0..1.0).contains(&gamma), "[0, 1)")?;
        Ok(Self {
            values: vec![[0.0; 4]; num_states],
            learning_rate,
            gamma,
        })
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s][a]
    }

    pub fn set(&mut self, s: usize, a: usize, v: f64) {
        self.values[s][a] = v;
    }

    pub fn max(&self, s: usize) -> f64 {
        self.values[s].iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Argmax with ties going to the lowest action index.
    pub fn greedy(&self, s: usize) -> usize {
        let row = &self.values[s];
        let mut best = 0;
        for a in 1..4 {
            if row[a] > row[best] {
                best = a;
            }
        }
        best
    }

    pub fn max_abs(&self) -> f64 {
        self.values
            .iter()
            .flat_map(|r| r.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `Q(s,a) += lr * (r + gamma * max Q(s') * (1 - done) - Q(s,a))`.
    pub fn q_update(&mut self, s: usize, a: usize, r: f64, s_next: usize, done: bool) -> Result<()> {
        check_finite(r, "reward")?;
        if a >= 4 {
            return Err(Error::InvalidAction(a));
        }
        let bootstrap = if done { 0.0 } else { self.gamma * self.max(s_next) };
        let q = self.values[s][a];
        self.values[s][a] = q + self.learning_rate * (r + bootstrap - q);
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Shaped,
    Sparse,
}

impl Arm {
    pub fn name(self) -> &'static str {
        match self {
            Arm::Shaped => "shaped",
            Arm::Sparse => "sparse",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub size: usize,
    pub max_steps: usize,
    pub episodes: usize,
    pub learning_rate: f64,
    pub gamma: f64,
    pub epsilon: f64,
    /// Orthogonal noise on cell embeddings.
    pub noise_sigma: f64,
    /// Trailing window for the episodes-to-success statistic.
    pub success_window: usize,
    pub success_target: f64,
    pub scenario: ScenarioParams,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            size: 20,
            max_steps: 200,
            episodes: 1000,
            learning_rate: 1.0,
            gamma: DEFAULT_GAMMA,
            epsilon: 0.1,
            noise_sigma: 0.005,
            success_window: 20,
            success_target: 0.9,
            scenario: ScenarioParams::default(),
        }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        GridWorld::new(self.size, self.max_steps)?;
        QTable::new(1, self.learning_rate, self.gamma)?;
        check_range("epsilon", self.epsilon, (0.0..=1.0).contains(&self.epsilon), "[0, 1]")?;
        check_range(
            "noise_sigma",
            self.noise_sigma,
            self.noise_sigma >= 0.0 && self.noise_sigma.is_finite(),
            "[0, inf)",
        )?;
        check_range(
            "success_target",
            self.success_target,
            self.success_target > 0.0 && self.success_target <= 1.0,
            "(0, 1]",
        )?;
        if self.success_window == 0 {
            return Err(Error::Config("success_window must be positive".into()));
        }
        Ok(())
    }
}

/// Everything one experiment arm needs besides the seed.
#[derive(Clone, Debug, Default)]
pub struct ExperimentConfig {
    pub grid: GridConfig,
    pub projection: ProjectionConfig,
    pub shaping: ShapingConfig,
    pub transition: TransitionConfig,
    pub fusion: FusionConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpisodeLog {
    pub seed: u64,
    pub episode: usize,
    pub success: bool,
    pub steps: usize,
    #[serde(rename = "return")]
    pub fused_return: f64,
    pub transitions: usize,
}

/// Runs one arm for one seed.
///
/// Exploration draws come from stream 1 and embedding noise from stream 2,
/// so both arms see the same exploration sequence for a given seed. Only
/// reaching the goal cuts the bootstrap; running out of steps does not.
pub fn run_seed(cfg: &ExperimentConfig, arm: Arm, seed: u64) -> Result<Vec<EpisodeLog>> {
    let g = &cfg.grid;
    let env = GridWorld::new(g.size, g.max_steps)?;
    let mut table = QTable::new(env.num_cells(), g.learning_rate, g.gamma)?;
    let mut explore = seeded(seed, 1);
    let mut noise = seeded(seed, 2);

    let scenario = AlignedScenario::generate(&g.scenario)?;
    let model = scenario.latent_model(g.noise_sigma, Progress::Identity, seed)?;
    let mut machine = StageMachine::new(vec![scenario.stage_spec()?], cfg.transition)?;
    let mut shaper = Shaper::new(cfg.shaping.clone())?;

    let mut logs = Vec::with_capacity(g.episodes);
    for episode in 0..g.episodes {
        let mut state = env.reset();
        machine.reset();
        let mut total = 0.0;
        let mut transitions = 0;
        let success;
        loop {
            let s = env.cell_index(state.cell);
            let a = if explore.random::<f64>() < g.epsilon {
                explore.random_range(0..4)
            } else {
                table.greedy(s)
            };
            let out = env.step_index(&state, a)?;
            let reward = match arm {
                Arm::Sparse => out.reward,
                Arm::Shaped => {
                    let e = env.embedding(out.state.cell, &model, &mut noise)?;
                    let shaped = machine.shaped_step(&e, cfg.projection, &mut shaper)?;
                    transitions += usize::from(shaped.step.transition);
                    fuse(out.reward, shaped.vlm_reward, &cfg.fusion)?
                }
            };
            table.q_update(s, a, reward, env.cell_index(out.state.cell), out.success)?;
            total += reward;
            state = out.state;
            if out.done {
                success = out.success;
                break;
            }
        }
        logs.push(EpisodeLog {
            seed,
            episode,
            success,
            steps: state.steps,
            fused_return: total,
            transitions,
        });
    }
    log::debug!(
        "{} seed {seed}: {} successes, max |Q| {:.4}",
        arm.name(),
        logs.iter().filter(|l| l.success).count(),
        table.max_abs()
    );
    Ok(logs)
}

/// Runs every seed of one arm, in parallel. Output order follows `seeds`.
pub fn run_experiment(cfg: &ExperimentConfig, arm: Arm, seeds: &[u64]) -> Result<Vec<Vec<EpisodeLog>>> {
    if seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    cfg.grid.validate()?;
    seeds.par_iter().map(|&s| run_seed(cfg, arm, s)).collect()
}

/// 1-based index of the first episode whose trailing `window` episodes
/// succeed at rate `>= target`, or `None` if that never happens.
pub fn episodes_to_success(logs: &[EpisodeLog], window: usize, target: f64) -> Option<usize> {
    if window == 0 || logs.len() < window {
        return None;
    }
    let mut hits = logs[..window].iter().filter(|l| l.success).count();
    let need = |h: usize| h as f64 >= target * window as f64 - 1e-12;
    if need(hits) {
        return Some(window);
    }
    for end in window..logs.len() {
        hits += usize::from(logs[end].success);
        hits -= usize::from(logs[end - window].success);
        if need(hits) {
            return Some(end + 1);
        }
    }
    None
}

/// Median of per-seed episodes-to-success, counting seeds that never got
/// there as `budget`.
pub fn median_episodes_to_success(
    per_seed: &[Vec<EpisodeLog>],
    window: usize,
    target: f64,
    budget: usize,
) -> f64 {
    let mut v: Vec<f64> = per_seed
        .iter()
        .map(|l| episodes_to_success(l, window, target).unwrap_or(budget) as f64)
        .collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Learning curve CSV: `seed,episode,success,steps,return`.
pub fn write_curve_csv<W: Write>(per_seed: &[Vec<EpisodeLog>], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["seed", "episode", "success", "steps", "return"])?;
    for log in per_seed.iter().flatten() {
        w.write_record([
            log.seed.to_string(),
            log.episode.to_string(),
            u8::from(log.success).to_string(),
            log.steps.to_string(),
            log.fused_return.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
