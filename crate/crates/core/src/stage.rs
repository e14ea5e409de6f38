//! Multi-stage subtask controller.
//!
//! Each stage owns an instruction/baseline text pair and a start/goal image
//! pair. The dense reward is the cosine between the projected observation
//! and the projected instruction. A stage completes after `patience`
//! consecutive steps whose *unprojected* similarity to the stage goal image
//! reaches `transition_threshold`.

use serde::{Deserialize, Serialize};

use crate::error::{check_range, Error, Result};
use crate::geometry::{
    cosine_similarity, project_image, project_text, text_direction, Embedding, ProjectionConfig,
    TaskDirection,
};
use crate::shaping::Shaper;

pub const DEFAULT_TRANSITION_THRESHOLD: f64 = 0.997;
pub const DEFAULT_PATIENCE: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct StageSpec {
    pub instruction: Embedding,
    pub baseline: Embedding,
    pub start_image: Embedding,
    pub goal_image: Embedding,
}

impl StageSpec {
    pub fn new(
        instruction: Embedding,
        baseline: Embedding,
        start_image: Embedding,
        goal_image: Embedding,
    ) -> Result<Self> {
        let spec = Self {
            instruction,
            baseline,
            start_image,
            goal_image,
        };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        let dim = self.instruction.dim();
        for e in [&self.baseline, &self.start_image, &self.goal_image] {
            if e.dim() != dim {
                return Err(Error::DimMismatch {
                    left: dim,
                    right: e.dim(),
                });
            }
        }
        self.image_direction()?;
        self.text_direction()?;
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.instruction.dim()
    }

    pub fn image_direction(&self) -> Result<TaskDirection> {
        TaskDirection::between(&self.start_image, &self.goal_image)
    }

    pub fn text_direction(&self) -> Result<TaskDirection> {
        text_direction(&self.instruction, &self.baseline)
    }

    /// Projected-space reward for one observation.
    pub fn reward(&self, e_ot: &Embedding, cfg: ProjectionConfig) -> Result<f64> {
        let obs = project_image(e_ot, &self.start_image, &self.image_direction()?, cfg)?;
        let target = project_text(&self.instruction, &self.text_direction()?, cfg)?;
        cosine_similarity(&obs, &target)
    }
}

/// Where the next stage's start embedding comes from after a transition.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StartPolicy {
    /// Keep the start embedding given in the stage spec (by default the
    /// previous stage's goal image).
    #[default]
    FromSpec,
    /// Replace it with the observation that triggered the transition.
    LiveObservation,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionConfig {
    pub threshold: f64,
    pub patience: usize,
    pub start_policy: StartPolicy,
}

impl Default for TransitionConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_TRANSITION_THRESHOLD,
            patience: DEFAULT_PATIENCE,
            start_policy: StartPolicy::FromSpec,
        }
    }
}

impl TransitionConfig {
    pub fn validate(&self) -> Result<()> {
        check_range(
            "transition_threshold",
            self.threshold,
            (-1.0..=1.0).contains(&self.threshold),
            "[-1, 1]",
        )?;
        if self.patience == 0 {
            return Err(Error::Config("patience must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    /// Stage whose spec produced `raw_reward`.
    pub stage: usize,
    pub raw_reward: f64,
    /// Unprojected cosine between the observation and the stage goal image.
    pub goal_similarity: f64,
    pub transition: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShapedOutcome {
    pub step: StepOutcome,
    pub vlm_reward: f64,
    pub calibrating: bool,
}

#[derive(Clone, Debug)]
pub struct StageMachine {
    stages: Vec<StageSpec>,
    current: usize,
    above: usize,
    terminal: bool,
    cfg: TransitionConfig,
}

impl StageMachine {
    pub fn new(stages: Vec<StageSpec>, cfg: TransitionConfig) -> Result<Self> {
        cfg.validate()?;
        let first = stages.first().ok_or(Error::EmptyStages)?;
        let dim = first.dim();
        for s in &stages {
            s.validate()?;
            if s.dim() != dim {
                return Err(Error::DimMismatch {
                    left: dim,
                    right: s.dim(),
                });
            }
        }
        Ok(Self {
            stages,
            current: 0,
            above: 0,
            terminal: false,
            cfg,
        })
    }

    pub fn current(&self) -> usize {
        self.current
    }

    pub fn is_terminal(&self) -> bool {
        self.terminal
    }

    pub fn above_counter(&self) -> usize {
        self.above
    }

    pub fn num_stages(&self) -> usize {
        self.stages.len()
    }

    pub fn stages(&self) -> &[StageSpec] {
        &self.stages
    }

    pub fn config(&self) -> &TransitionConfig {
        &self.cfg
    }

    pub fn current_stage(&self) -> &StageSpec {
        &self.stages[self.current]
    }

    pub fn current_direction(&self) -> Result<TaskDirection> {
        self.current_stage().image_direction()
    }

    pub fn reset(&mut self) {
        self.current = 0;
        self.above = 0;
        self.terminal = false;
    }

    pub fn step(&mut self, e_ot: &Embedding, geom: ProjectionConfig) -> Result<StepOutcome> {
        let stage = self.current;
        let spec = &self.stages[stage];
        if e_ot.dim() != spec.dim() {
            return Err(Error::DimMismatch {
                left: spec.dim(),
                right: e_ot.dim(),
            });
        }
        let raw_reward = spec.reward(e_ot, geom)?;
        let goal_similarity = cosine_similarity(e_ot, &spec.goal_image)?;
        let mut transition = false;
        if !self.terminal {
            if goal_similarity >= self.cfg.threshold {
                self.above += 1;
            } else {
                self.above = 0;
            }
            if self.above == self.cfg.patience {
                self.above = 0;
                transition = true;
                self.advance(e_ot)?;
            }
        }
        Ok(StepOutcome {
            stage,
            raw_reward,
            goal_similarity,
            transition,
        })
    }

    fn advance(&mut self, e_ot: &Embedding) -> Result<()> {
        if self.current + 1 == self.stages.len() {
            self.terminal = true;
            return Ok(());
        }
        self.current += 1;
        if self.cfg.start_policy == StartPolicy::LiveObservation {
            let next = &mut self.stages[self.current];
            TaskDirection::between(e_ot, &next.goal_image)?;
            next.start_image = e_ot.clone();
        }
        Ok(())
    }

    /// `step` followed by the shaping gate on the raw reward.
    pub fn shaped_step(
        &mut self,
        e_ot: &Embedding,
        geom: ProjectionConfig,
        shaper: &mut Shaper,
    ) -> Result<ShapedOutcome> {
        let step = self.step(e_ot, geom)?;
        let shaped = shaper.shape(step.stage, step.raw_reward)?;
        Ok(ShapedOutcome {
            step,
            vlm_reward: shaped.reward,
            calibrating: shaped.calibrating,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shaping::ShapingConfig;
    use approx::assert_abs_diff_eq;

    fn e(v: &[f64]) -> Embedding {
        Embedding::new(v.to_vec()).unwrap()
    }

    /// Observation with the requested cosine to the x axis.
    fn obs_with_similarity(s: f64) -> Embedding {
        e(&[s, (1.0 - s * s).sqrt(), 0.0])
    }

    fn spec_to_x() -> StageSpec {
        StageSpec::new(
            e(&[0.9, 0.1, 0.4]),
            e(&[0.0, 0.0, 1.0]),
            e(&[0.0, 1.0, 0.0]),
            e(&[1.0, 0.0, 0.0]),
        )
        .unwrap()
    }

    fn machine(n: usize) -> StageMachine {
        StageMachine::new(vec![spec_to_x(); n], TransitionConfig::default()).unwrap()
    }

    #[test]
    fn fires_on_fourth_consecutive_step() {
        let mut m = machine(2);
        let geom = ProjectionConfig::default();
        let fired: Vec<bool> = (0..4)
            .map(|_| m.step(&obs_with_similarity(0.998), geom).unwrap().transition)
            .collect();
        assert_eq!(fired, vec![false, false, false, true]);
        assert_eq!(m.current(), 1);
        assert_eq!(m.above_counter(), 0);
    }

    #[test]
    fn interruption_resets_counter() {
        let mut m = machine(2);
        let geom = ProjectionConfig::default();
        for s in [0.998, 0.998, 0.5, 0.998] {
            assert!(!m.step(&obs_with_similarity(s), geom).unwrap().transition);
        }
        assert_eq!(m.above_counter(), 1);
        assert_eq!(m.current(), 0);
    }

    #[test]
    fn terminal_is_absorbing() {
        let mut m = machine(1);
        let geom = ProjectionConfig::default();
        let goal = obs_with_similarity(0.999);
        for _ in 0..4 {
            m.step(&goal, geom).unwrap();
        }
        assert!(m.is_terminal());
        let expected = m.stages()[0].reward(&goal, geom).unwrap();
        for _ in 0..10 {
            let out = m.step(&goal, geom).unwrap();
            assert!(!out.transition);
            assert_eq!(out.stage, 0);
            assert_eq!(out.raw_reward, expected);
        }
    }

    #[test]
    fn direction_follows_stage() {
        let s0 = StageSpec::new(e(&[1., 1.]), e(&[0., 1.]), e(&[0., 0.]), e(&[1., 0.])).unwrap();
        let s1 = StageSpec::new(e(&[1., 1.]), e(&[0., 1.]), e(&[1., 0.]), e(&[1., 3.])).unwrap();
        let mut m = StageMachine::new(vec![s0, s1], TransitionConfig::default()).unwrap();
        assert_eq!(m.current_direction().unwrap().vector().as_slice(), &[1., 0.]);
        for _ in 0..4 {
            m.step(&e(&[2., 0.]), ProjectionConfig::default()).unwrap();
        }
        assert_eq!(m.current_direction().unwrap().vector().as_slice(), &[0., 3.]);

        let single = machine(1);
        assert_eq!(
            single.current_direction().unwrap(),
            single.current_direction().unwrap()
        );
    }

    #[test]
    fn live_observation_policy_rewrites_start() {
        let s0 = StageSpec::new(e(&[1., 1.]), e(&[0., 1.]), e(&[0., 0.]), e(&[1., 0.])).unwrap();
        let s1 = StageSpec::new(e(&[1., 1.]), e(&[0., 1.]), e(&[1., 0.]), e(&[1., 3.])).unwrap();
        let cfg = TransitionConfig {
            start_policy: StartPolicy::LiveObservation,
            ..TransitionConfig::default()
        };
        let mut m = StageMachine::new(vec![s0, s1], cfg).unwrap();
        let obs = e(&[2., 0.001]);
        for _ in 0..4 {
            m.step(&obs, ProjectionConfig::default()).unwrap();
        }
        assert_eq!(m.current_stage().start_image, obs);
    }

    #[test]
    fn transition_similarity_ignores_alpha() {
        let seq = [0.998, 0.999, 0.2, 0.998, 0.998, 0.998, 0.998, 0.9];
        let run = |alpha: f64| {
            let mut m = machine(3);
            let geom = ProjectionConfig::new(alpha).unwrap();
            seq.iter()
                .map(|&s| m.step(&obs_with_similarity(s), geom).unwrap().transition)
                .collect::<Vec<_>>()
        };
        assert_eq!(run(0.0), run(0.8));
        assert_eq!(run(0.8), run(1.0));
    }

    #[test]
    fn errors() {
        assert!(matches!(
            StageMachine::new(vec![], TransitionConfig::default()),
            Err(Error::EmptyStages)
        ));
        assert!(matches!(
            StageSpec::new(e(&[1., 1.]), e(&[0., 1.]), e(&[1., 0.]), e(&[1., 0.])),
            Err(Error::ZeroVector)
        ));
        let mut m = machine(1);
        assert!(matches!(
            m.step(&e(&[1., 0.]), ProjectionConfig::default()),
            Err(Error::DimMismatch { .. })
        ));
    }

    #[test]
    fn shaped_step_examples() {
        let geom = ProjectionConfig::default();
        let obs = obs_with_similarity(0.3);
        let raw = spec_to_x().reward(&obs, geom).unwrap();

        let mut m = machine(1);
        let mut shaper = Shaper::with_threshold(ShapingConfig::default(), raw).unwrap();
        let out = m.shaped_step(&obs, geom, &mut shaper).unwrap();
        assert_eq!(out.vlm_reward, 0.5);

        let mut m = machine(1);
        let mut shaper = Shaper::new(ShapingConfig::default()).unwrap();
        let out = m.shaped_step(&obs, geom, &mut shaper).unwrap();
        assert!(out.calibrating);
        assert_eq!(out.vlm_reward, 0.0);

        let mut m = machine(1);
        let mut shaper = Shaper::with_threshold(ShapingConfig::default(), raw - 0.05).unwrap();
        let out = m.shaped_step(&obs, geom, &mut shaper).unwrap();
        assert_abs_diff_eq!(out.vlm_reward, 0.993_307_149_075_715, epsilon = 1e-9);
    }
}
