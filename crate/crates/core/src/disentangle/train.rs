use std::io::Write;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::disentangle::data::FactorDataset;
use crate::disentangle::loss::{evaluate, LossBreakdown, LossWeights};
use crate::disentangle::model::{stack_rows, ParamSet, ToyModel};
use crate::error::{check_range, Error, Result};
use crate::rng::seeded;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Epochs for each of the three stages.
    pub epochs_per_stage: usize,
    pub scene_dim: usize,
    pub view_dim: usize,
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            epochs_per_stage: 2000,
            scene_dim: 8,
            view_dim: 8,
            init_scale: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        check_range(
            "learning_rate",
            self.learning_rate,
            self.learning_rate > 0.0 && self.learning_rate.is_finite(),
            "(0, inf)",
        )?;
        check_range(
            "init_scale",
            self.init_scale,
            self.init_scale > 0.0 && self.init_scale.is_finite(),
            "(0, inf)",
        )?;
        if self.scene_dim < 2 || self.view_dim < 2 {
            return Err(Error::Config("code widths must be >= 2".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DisentanglementMetrics {
    /// Mean cosine of scene codes of one scene seen from different views.
    pub scene_consistency: f64,
    /// Mean cosine of view codes of one view across different scenes.
    pub view_consistency: f64,
    /// Mean cosine of scene codes of different scenes.
    pub cross_scene_similarity: f64,
    pub cross_view_similarity: f64,
    /// Set when every scene code points the same way, which makes the
    /// consistency numbers meaningless.
    pub degenerate: bool,
}

impl DisentanglementMetrics {
    pub fn scene_gap(&self) -> f64 {
        self.scene_consistency - self.cross_scene_similarity
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub stage: usize,
    pub epoch: usize,
    pub loss: LossBreakdown,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StageSummary {
    pub stage: usize,
    pub metrics: DisentanglementMetrics,
    pub diagonal_dominance: f64,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub model: ToyModel,
    pub history: Vec<EpochRecord>,
    /// Summary before training followed by one per stage.
    pub initial: StageSummary,
    pub stages: Vec<StageSummary>,
}

fn normalize_rows(z: &mut Array2<f64>) {
    for mut row in z.rows_mut() {
        let n = row.dot(&row).sqrt();
        if n > 0.0 {
            row /= n;
        }
    }
}

fn pair_means(codes: &Array2<f64>, group: &[usize]) -> (f64, f64, bool) {
    let sim = codes.dot(&codes.t());
    let (mut same, mut ns, mut cross, mut nc) = (0.0, 0usize, 0.0, 0usize);
    for a in 0..group.len() {
        for b in a + 1..group.len() {
            if group[a] == group[b] {
                same += sim[[a, b]];
                ns += 1;
            } else {
                cross += sim[[a, b]];
                nc += 1;
            }
        }
    }
    let degenerate = nc > 0 && cross / nc as f64 > 1.0 - 1e-9;
    (same / ns.max(1) as f64, cross / nc.max(1) as f64, degenerate)
}

/// Pairwise cosine statistics of the scene and view codes over the dataset.
pub fn disentanglement_metrics(model: &ToyModel, ds: &FactorDataset) -> DisentanglementMetrics {
    let rows: Vec<_> = ds.samples().iter().map(|s| s.x.view()).collect();
    let x = stack_rows(&rows);
    let mut zs = model.encode_scene(x.view());
    let mut zv = model.encode_view(x.view());
    normalize_rows(&mut zs);
    normalize_rows(&mut zv);
    let scenes: Vec<usize> = ds.samples().iter().map(|s| s.scene).collect();
    let views: Vec<usize> = ds.samples().iter().map(|s| s.view).collect();
    let (scene_consistency, cross_scene_similarity, degenerate) = pair_means(&zs, &scenes);
    let (view_consistency, cross_view_similarity, _) = pair_means(&zv, &views);
    DisentanglementMetrics {
        scene_consistency,
        view_consistency,
        cross_scene_similarity,
        cross_view_similarity,
        degenerate,
    }
}

/// Mean diagonal minus mean off-diagonal of the cosine matrix between each
/// scene's mean unit scene code and the scene texts.
pub fn diagonal_dominance(model: &ToyModel, ds: &FactorDataset) -> Result<f64> {
    let k = ds.num_scenes();
    if model.scene_dim() != ds.texts().ncols() {
        return Err(Error::DimMismatch {
            left: model.scene_dim(),
            right: ds.texts().ncols(),
        });
    }
    let rows: Vec<_> = ds.samples().iter().map(|s| s.x.view()).collect();
    let mut zs = model.encode_scene(stack_rows(&rows).view());
    normalize_rows(&mut zs);
    let mut means = Array2::<f64>::zeros((k, model.scene_dim()));
    for (s, z) in ds.samples().iter().zip(zs.axis_iter(Axis(0))) {
        let mut row = means.row_mut(s.scene);
        row += &z;
    }
    normalize_rows(&mut means);
    let mut texts = ds.texts().clone();
    normalize_rows(&mut texts);
    let sim = means.dot(&texts.t());
    let diag: f64 = sim.diag().sum();
    let off = sim.sum() - diag;
    Ok(diag / k as f64 - off / (k * k - k).max(1) as f64)
}

fn summarize(stage: usize, model: &ToyModel, ds: &FactorDataset) -> Result<StageSummary> {
    Ok(StageSummary {
        stage,
        metrics: disentanglement_metrics(model, ds),
        diagonal_dominance: diagonal_dominance(model, ds)?,
    })
}

/// Three stages of full-batch gradient descent: decoder-only on the
/// reconstruction term, then the full objective with the clip weight taken
/// from the schedule at stages 1 and 2.
pub fn train(ds: &FactorDataset, weights: &LossWeights, cfg: &TrainConfig) -> Result<TrainReport> {
    weights.validate()?;
    cfg.validate()?;
    let mut init_rng = seeded(cfg.seed, 4);
    let mut batch_rng = seeded(cfg.seed, 5);
    let mut model = ToyModel::init(
        ds.input_dim(),
        cfg.scene_dim,
        cfg.view_dim,
        cfg.init_scale,
        &mut init_rng,
    );
    let initial = summarize(0, &model, ds)?;
    let warmup = weights.recon_only();
    let mut history = Vec::with_capacity(3 * cfg.epochs_per_stage);
    let mut stages = Vec::with_capacity(3);
    for stage in 0..3 {
        let (w, set) = if stage == 0 {
            (&warmup, ParamSet::DecoderOnly)
        } else {
            (weights, ParamSet::All)
        };
        for epoch in 0..cfg.epochs_per_stage {
            let batch = ds.draw_batch(&mut batch_rng);
            let (loss, grad) = evaluate(&model, ds, &batch, w, stage, true)?;
            if !loss.total.is_finite() {
                return Err(Error::Diverged { stage, epoch });
            }
            model.descend(&grad.expect("requested"), cfg.learning_rate, set);
            if !model.is_finite() {
                return Err(Error::Diverged { stage, epoch });
            }
            history.push(EpochRecord { stage, epoch, loss });
        }
        let summary = summarize(stage, &model, ds)?;
        log::info!(
            "stage {stage}: scene {:.4} cross {:.4} diag {:.4}",
            summary.metrics.scene_consistency,
            summary.metrics.cross_scene_similarity,
            summary.diagonal_dominance
        );
        stages.push(summary);
    }
    Ok(TrainReport {
        model,
        history,
        initial,
        stages,
    })
}

/// Loss history as CSV, one row per epoch.
pub fn write_history_csv<W: Write>(history: &[EpochRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "stage",
        "epoch",
        "recon",
        "shuffle",
        "scene_consistency",
        "view_consistency",
        "scene_clip",
        "view_clip",
        "clip_weight",
        "total",
    ])?;
    for rec in history {
        let l = &rec.loss;
        let mut row = vec![rec.stage.to_string(), rec.epoch.to_string()];
        row.extend(
            [
                l.recon,
                l.shuffle,
                l.scene_consistency,
                l.view_consistency,
                l.scene_clip,
                l.view_clip,
                l.clip_weight,
                l.total,
            ]
            .iter()
            .map(f64::to_string),
        );
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::disentangle::data::FactorParams;

    #[test]
    fn identical_codes_are_flagged() {
        let ds = FactorDataset::generate(&FactorParams::default()).unwrap();
        let mut rng = seeded(0, 0);
        let mut m = ToyModel::init(32, 8, 8, 0.1, &mut rng);
        m.enc.ws.fill(0.0);
        m.enc.bs.fill(1.0);
        m.enc.wv.fill(0.0);
        m.enc.bv.fill(1.0);
        let met = disentanglement_metrics(&m, &ds);
        assert!(met.degenerate);
        assert!((met.scene_consistency - 1.0).abs() < 1e-12);
        assert!((met.cross_scene_similarity - 1.0).abs() < 1e-12);
        assert!((met.view_consistency - 1.0).abs() < 1e-12);
    }

    #[test]
    fn divergence_is_reported() {
        let ds = FactorDataset::generate(&FactorParams::default()).unwrap();
        let cfg = TrainConfig {
            learning_rate: 1e6,
            epochs_per_stage: 50,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(&ds, &LossWeights::default(), &cfg),
            Err(Error::Diverged { .. })
        ));
    }

    #[test]
    fn short_run_history() {
        let ds = FactorDataset::generate(&FactorParams::default()).unwrap();
        let cfg = TrainConfig {
            epochs_per_stage: 5,
            ..TrainConfig::default()
        };
        let r = train(&ds, &LossWeights::default(), &cfg).unwrap();
        assert_eq!(r.history.len(), 15);
        assert_eq!(r.stages.len(), 3);
        assert!(r.history.iter().all(|h| h.loss.total >= 0.0));
        let mut buf = Vec::new();
        write_history_csv(&r.history, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("stage,epoch,recon,shuffle,"));
        assert_eq!(text.lines().count(), 16);
    }
}
