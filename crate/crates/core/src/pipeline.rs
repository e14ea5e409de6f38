//! Offline scoring of an observation sequence through the full reward path.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{cosine_similarity, progress_coordinate, Embedding, ProjectionConfig};
use crate::shaping::Shaper;
use crate::stage::StageMachine;

/// One scored observation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ShapeRow {
    pub t: usize,
    /// Latent progress when known (synthetic trajectories only).
    pub lambda: Option<f64>,
    /// Progress coordinate along the active stage's image direction.
    pub c_t: f64,
    /// Cosine between the unprojected observation and instruction.
    pub raw_reward: f64,
    pub projected_reward: f64,
    pub gated_reward: f64,
    pub stage: usize,
    pub transition: bool,
}

/// Scores `observations` in order. The machine and shaper are advanced
/// in place, so callers can chain several trajectories.
pub fn score_trajectory(
    machine: &mut StageMachine,
    shaper: &mut Shaper,
    geom: ProjectionConfig,
    observations: &[Embedding],
    lambdas: Option<&[f64]>,
) -> Result<Vec<ShapeRow>> {
    if let Some(l) = lambdas {
        if l.len() != observations.len() {
            return Err(Error::DimMismatch {
                left: observations.len(),
                right: l.len(),
            });
        }
    }
    let mut rows = Vec::with_capacity(observations.len());
    for (t, e) in observations.iter().enumerate() {
        let spec = machine.current_stage();
        let raw_reward = cosine_similarity(e, &spec.instruction)?;
        let c_t = progress_coordinate(e, &spec.start_image, &spec.image_direction()?)?;
        let out = machine.shaped_step(e, geom, shaper)?;
        rows.push(ShapeRow {
            t,
            lambda: lambdas.map(|l| l[t]),
            c_t,
            raw_reward,
            projected_reward: out.step.raw_reward,
            gated_reward: out.vlm_reward,
            stage: out.step.stage,
            transition: out.step.transition,
        });
    }
    Ok(rows)
}

/// Writes rows as CSV with a header. An unknown `lambda` is an empty field.
pub fn write_rows_csv<W: Write>(rows: &[ShapeRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    if rows.is_empty() {
        w.write_record([
            "t",
            "lambda",
            "c_t",
            "raw_reward",
            "projected_reward",
            "gated_reward",
            "stage",
            "transition",
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shaping::ShapingConfig;
    use crate::stage::TransitionConfig;
    use crate::world::{AlignedScenario, Progress, ScenarioParams};

    fn setup(alpha: f64) -> (StageMachine, Shaper, ProjectionConfig, Vec<Embedding>, Vec<f64>) {
        let s = AlignedScenario::generate(&ScenarioParams::default()).unwrap();
        let machine = StageMachine::new(vec![s.stage_spec().unwrap()], TransitionConfig::default()).unwrap();
        let shaper = Shaper::with_threshold(ShapingConfig::default(), 0.5).unwrap();
        let traj = s
            .latent_model(0.0, Progress::Identity, 0)
            .unwrap()
            .gen_trajectory(40)
            .unwrap();
        let lambdas = traj.iter().map(|p| p.lambda).collect();
        let obs = traj.into_iter().map(|p| p.embedding).collect();
        (machine, shaper, ProjectionConfig::new(alpha).unwrap(), obs, lambdas)
    }

    #[test]
    fn alpha_zero_projected_equals_raw() {
        let (mut m, mut sh, geom, obs, _) = setup(0.0);
        for row in score_trajectory(&mut m, &mut sh, geom, &obs, None).unwrap() {
            assert!((row.raw_reward - row.projected_reward).abs() < 1e-12);
        }
    }

    #[test]
    fn noise_free_projected_is_non_decreasing() {
        let (mut m, mut sh, geom, obs, lambdas) = setup(0.8);
        let rows = score_trajectory(&mut m, &mut sh, geom, &obs, Some(&lambdas)).unwrap();
        assert!(rows.windows(2).all(|w| w[1].projected_reward >= w[0].projected_reward));
        for r in &rows {
            assert!((r.c_t - r.lambda.unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn csv_header_and_blank_lambda() {
        let (mut m, mut sh, geom, obs, _) = setup(0.8);
        let rows = score_trajectory(&mut m, &mut sh, geom, &obs[..2], None).unwrap();
        let mut buf = Vec::new();
        write_rows_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "t,lambda,c_t,raw_reward,projected_reward,gated_reward,stage,transition"
        );
        assert!(lines.next().unwrap().starts_with("0,,"));
    }

    #[test]
    fn lambda_length_mismatch() {
        let (mut m, mut sh, geom, obs, _) = setup(0.8);
        assert!(score_trajectory(&mut m, &mut sh, geom, &obs, Some(&[0.0])).is_err());
    }
}
