use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::disentangle::data::{Batch, FactorDataset};
use crate::disentangle::model::{stack_rows, ParamSet, ToyModel};
use crate::error::{check_range, Error, Result};
use crate::geometry::ZERO_NORM;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    /// Weight on the L1 cross-reconstruction term. Fixed at 1 in the
    /// reference objective; exposed so single terms can be isolated.
    pub recon: f64,
    pub shuffle: f64,
    pub scene_consistency: f64,
    pub view_consistency: f64,
    /// Multiplies the scene-text InfoNCE inside the clip term.
    pub scene_contrastive: f64,
    /// Multiplies the view-anchor InfoNCE inside the clip term.
    pub view_contrastive: f64,
    /// Clip weight per training stage.
    pub clip_schedule: Vec<f64>,
    pub temperature: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            recon: 1.0,
            shuffle: 1.0,
            scene_consistency: 1.0,
            view_consistency: 0.25,
            scene_contrastive: 1.0,
            view_contrastive: 0.25,
            clip_schedule: vec![0.0, 0.5, 1.0],
            temperature: 0.07,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        check_range(
            "temperature",
            self.temperature,
            self.temperature > 0.0 && self.temperature.is_finite(),
            "(0, inf)",
        )?;
        let scalars = [
            ("recon", self.recon),
            ("shuffle", self.shuffle),
            ("scene_consistency", self.scene_consistency),
            ("view_consistency", self.view_consistency),
            ("scene_contrastive", self.scene_contrastive),
            ("view_contrastive", self.view_contrastive),
        ];
        for (name, v) in scalars {
            check_range(name, v, v >= 0.0 && v.is_finite(), "[0, inf)")?;
        }
        if self.clip_schedule.is_empty() {
            return Err(Error::Config("clip_schedule must not be empty".into()));
        }
        if self.clip_schedule.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config("clip_schedule entries must be finite and >= 0".into()));
        }
        if self.clip_schedule.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Config("clip_schedule must be non-decreasing".into()));
        }
        Ok(())
    }

    /// Clip weight at `stage`; stages past the schedule keep the last value.
    pub fn clip_weight(&self, stage: usize) -> f64 {
        let s = &self.clip_schedule;
        s[stage.min(s.len() - 1)]
    }

    /// Only the reconstruction term, as used for decoder warm-up.
    pub fn recon_only(&self) -> Self {
        Self {
            recon: 1.0,
            shuffle: 0.0,
            scene_consistency: 0.0,
            view_consistency: 0.0,
            scene_contrastive: 0.0,
            view_contrastive: 0.0,
            clip_schedule: vec![0.0],
            temperature: self.temperature,
        }
    }
}

/// Unweighted term values plus the weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub recon: f64,
    pub shuffle: f64,
    pub scene_consistency: f64,
    pub view_consistency: f64,
    pub scene_clip: f64,
    pub view_clip: f64,
    pub clip_weight: f64,
    pub total: f64,
}

fn same_len(a: usize, b: usize) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::DimMismatch { left: a, right: b })
    }
}

/// Mean absolute error.
pub fn recon_loss(x_hat: &[f64], x: &[f64]) -> Result<f64> {
    same_len(x_hat.len(), x.len())?;
    if x.is_empty() {
        return Err(Error::EmptyBatch);
    }
    Ok(x_hat.iter().zip(x).map(|(a, b)| (a - b).abs()).sum::<f64>() / x.len() as f64)
}

/// Scene swap plus view swap, both measured against the base
/// reconstruction `D(zs_base, zv_base)`.
pub fn shuffle_loss(
    model: &ToyModel,
    zs_base: &[f64],
    zs_other_view: &[f64],
    zv_base: &[f64],
    zv_other_scene: &[f64],
) -> Result<f64> {
    let ks = model.scene_dim();
    let kv = model.view_dim();
    same_len(zs_base.len(), ks)?;
    same_len(zs_other_view.len(), ks)?;
    same_len(zv_base.len(), kv)?;
    same_len(zv_other_scene.len(), kv)?;
    let row = |v: &[f64]| Array2::from_shape_vec((1, v.len()), v.to_vec()).expect("one row");
    let base = model.decode(row(zs_base).view(), row(zv_base).view());
    let scene_swap = model.decode(row(zs_other_view).view(), row(zv_base).view());
    let view_swap = model.decode(row(zs_base).view(), row(zv_other_scene).view());
    let sq = |a: &Array2<f64>| (a - &base).mapv(|v| v * v).sum();
    Ok(sq(&scene_swap) + sq(&view_swap))
}

/// Cosine of `u` and `v` with its gradients with respect to both.
fn cos_with_grad(u: ArrayView1<f64>, v: ArrayView1<f64>) -> Result<(f64, Array1<f64>, Array1<f64>)> {
    let nu = u.dot(&u).sqrt();
    let nv = v.dot(&v).sqrt();
    if nu < ZERO_NORM || nv < ZERO_NORM {
        return Err(Error::ZeroVector);
    }
    let c = u.dot(&v) / (nu * nv);
    let du = &v / (nu * nv) - &u * (c / (nu * nu));
    let dv = &u / (nu * nv) - &v * (c / (nv * nv));
    Ok((c, du, dv))
}

/// `(1 - cos(zs_a, zs_b)) + (1 - cos(zv_a, zv_b))`.
pub fn consistency_loss(zs_a: &[f64], zs_b: &[f64], zv_a: &[f64], zv_b: &[f64]) -> Result<f64> {
    same_len(zs_a.len(), zs_b.len())?;
    same_len(zv_a.len(), zv_b.len())?;
    let cos = |a: &[f64], b: &[f64]| {
        cos_with_grad(ArrayView1::from(a), ArrayView1::from(b)).map(|(c, _, _)| c)
    };
    Ok((1.0 - cos(zs_a, zs_b)?) + (1.0 - cos(zv_a, zv_b)?))
}

/// Mean negative log-softmax of `z_b . a_{t_b} / tau` over the rows of `z`,
/// with the gradient of that mean with respect to `z`.
pub fn infonce_targeted(
    z: ArrayView2<f64>,
    anchors: ArrayView2<f64>,
    targets: &[usize],
    tau: f64,
) -> Result<(f64, Array2<f64>)> {
    let b = z.nrows();
    if b == 0 || anchors.nrows() == 0 {
        return Err(Error::EmptyBatch);
    }
    same_len(z.ncols(), anchors.ncols())?;
    same_len(targets.len(), b)?;
    check_range("temperature", tau, tau > 0.0 && tau.is_finite(), "(0, inf)")?;
    let k = anchors.nrows();
    if let Some(&t) = targets.iter().find(|&&t| t >= k) {
        return Err(Error::Pairing(format!("target {t} has no anchor")));
    }
    let logits = z.dot(&anchors.t()) / tau;
    let mut dlogits = Array2::zeros((b, k));
    let mut loss = 0.0;
    for (r, row) in logits.axis_iter(Axis(0)).enumerate() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let exp = row.mapv(|v| (v - max).exp());
        let sum = exp.sum();
        loss += sum.ln() + max - row[targets[r]];
        let mut g = dlogits.row_mut(r);
        g.assign(&(exp / sum));
        g[targets[r]] -= 1.0;
    }
    let bf = b as f64;
    let grad = dlogits.dot(&anchors) / (tau * bf);
    Ok((loss / bf, grad))
}

/// Row `i` of `z` is matched with row `i` of `texts`.
pub fn infonce_loss(z: ArrayView2<f64>, texts: ArrayView2<f64>, tau: f64) -> Result<f64> {
    if z.nrows() < 2 {
        return Err(Error::EmptyBatch);
    }
    same_len(z.nrows(), texts.nrows())?;
    let targets: Vec<usize> = (0..z.nrows()).collect();
    Ok(infonce_targeted(z, texts, &targets, tau)?.0)
}

fn signum0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// One-hot view anchors in the view code space.
fn view_anchors(num_views: usize, kv: usize) -> Result<Array2<f64>> {
    if kv < num_views {
        return Err(Error::Config(format!(
            "view code width {kv} cannot hold {num_views} one-hot view anchors"
        )));
    }
    let mut a = Array2::zeros((num_views, kv));
    for m in 0..num_views {
        a[[m, m]] = 1.0;
    }
    Ok(a)
}

/// Loss over a swap batch and, when `with_grad` is set, its gradient.
pub fn evaluate(
    model: &ToyModel,
    ds: &FactorDataset,
    batch: &Batch,
    w: &LossWeights,
    stage: usize,
    with_grad: bool,
) -> Result<(LossBreakdown, Option<ToyModel>)> {
    w.validate()?;
    let b = batch.items.len();
    if b == 0 {
        return Err(Error::EmptyBatch);
    }
    same_len(model.input_dim(), ds.input_dim())?;
    let samples = ds.samples();
    let rows = |f: fn(&crate::disentangle::data::Quad) -> usize| {
        let v: Vec<_> = batch.items.iter().map(|q| samples[f(q)].x.view()).collect();
        stack_rows(&v)
    };
    let xa = rows(|q| q.anchor);
    let xp = rows(|q| q.same_scene);
    let xq = rows(|q| q.same_view);
    let scene_ids: Vec<usize> = batch.items.iter().map(|q| samples[q.anchor].scene).collect();
    let view_ids: Vec<usize> = batch.items.iter().map(|q| samples[q.anchor].view).collect();

    let bf = b as f64;
    let din = model.input_dim() as f64;
    let zs_a = model.encode_scene(xa.view());
    let zs_p = model.encode_scene(xp.view());
    let zv_a = model.encode_view(xa.view());
    let zv_q = model.encode_view(xq.view());
    let wds = model.wd_scene();
    let wdv = model.wd_view();

    let mut grad = model.zeros_like();
    let mut g_zs_a = Array2::<f64>::zeros(zs_a.raw_dim());
    let mut g_zs_p = Array2::<f64>::zeros(zs_p.raw_dim());
    let mut g_zv_a = Array2::<f64>::zeros(zv_a.raw_dim());
    let mut g_zv_q = Array2::<f64>::zeros(zv_q.raw_dim());
    let ks = model.scene_dim();

    // cross reconstruction D(z_s(i,n), z_v(j,m)) against o(i,m)
    let resid = model.decode(zs_p.view(), zv_q.view()) - &xa;
    let recon = resid.mapv(f64::abs).sum() / (bf * din);
    let g_out = resid.mapv(signum0) * (w.recon / (bf * din));

    // swaps against the base reconstruction; the decoder bias cancels
    let d_s = &zs_p - &zs_a;
    let d_v = &zv_q - &zv_a;
    let s1 = d_s.dot(&wds);
    let s2 = d_v.dot(&wdv);
    let shuffle = (s1.mapv(|v| v * v).sum() + s2.mapv(|v| v * v).sum()) / bf;
    let g_s1 = &s1 * (2.0 * w.shuffle / bf);
    let g_s2 = &s2 * (2.0 * w.shuffle / bf);

    let mut scene_cons = 0.0;
    let mut view_cons = 0.0;
    for r in 0..b {
        let (cs, du, dv) = cos_with_grad(zs_a.row(r), zs_p.row(r))?;
        scene_cons += 1.0 - cs;
        g_zs_a.row_mut(r).scaled_add(-w.scene_consistency / bf, &du);
        g_zs_p.row_mut(r).scaled_add(-w.scene_consistency / bf, &dv);
        let (cv, du, dv) = cos_with_grad(zv_a.row(r), zv_q.row(r))?;
        view_cons += 1.0 - cv;
        g_zv_a.row_mut(r).scaled_add(-w.view_consistency / bf, &du);
        g_zv_q.row_mut(r).scaled_add(-w.view_consistency / bf, &dv);
    }
    scene_cons /= bf;
    view_cons /= bf;

    let clip_weight = w.clip_weight(stage);
    let (scene_clip, g_sc) = infonce_targeted(zs_a.view(), ds.texts().view(), &scene_ids, w.temperature)?;
    let anchors = view_anchors(ds.num_views(), model.view_dim())?;
    let (view_clip, g_vc) = infonce_targeted(zv_a.view(), anchors.view(), &view_ids, w.temperature)?;

    let total = w.recon * recon
        + w.shuffle * shuffle
        + w.scene_consistency * scene_cons
        + w.view_consistency * view_cons
        + clip_weight * (w.scene_contrastive * scene_clip + w.view_contrastive * view_clip);
    let breakdown = LossBreakdown {
        recon,
        shuffle,
        scene_consistency: scene_cons,
        view_consistency: view_cons,
        scene_clip,
        view_clip,
        clip_weight,
        total,
    };
    if !with_grad {
        return Ok((breakdown, None));
    }

    g_zs_a.scaled_add(clip_weight * w.scene_contrastive, &g_sc);
    g_zv_a.scaled_add(clip_weight * w.view_contrastive, &g_vc);

    {
        let mut gwd = grad.dec.wd.view_mut();
        let (mut gws, mut gwv) = gwd.view_mut().split_at(Axis(0), ks);
        gws += &zs_p.t().dot(&g_out);
        gwv += &zv_q.t().dot(&g_out);
        gws += &d_s.t().dot(&g_s1);
        gwv += &d_v.t().dot(&g_s2);
    }
    grad.dec.bd += &g_out.sum_axis(Axis(0));
    g_zs_p += &g_out.dot(&wds.t());
    g_zv_q += &g_out.dot(&wdv.t());
    let g_ds = g_s1.dot(&wds.t());
    g_zs_p += &g_ds;
    g_zs_a -= &g_ds;
    let g_dv = g_s2.dot(&wdv.t());
    g_zv_q += &g_dv;
    g_zv_a -= &g_dv;

    grad.enc.ws = xa.t().dot(&g_zs_a) + xp.t().dot(&g_zs_p);
    grad.enc.bs = g_zs_a.sum_axis(Axis(0)) + g_zs_p.sum_axis(Axis(0));
    grad.enc.wv = xa.t().dot(&g_zv_a) + xq.t().dot(&g_zv_q);
    grad.enc.bv = g_zv_a.sum_axis(Axis(0)) + g_zv_q.sum_axis(Axis(0));
    Ok((breakdown, Some(grad)))
}

pub fn total_loss(
    model: &ToyModel,
    ds: &FactorDataset,
    batch: &Batch,
    w: &LossWeights,
    stage: usize,
) -> Result<LossBreakdown> {
    Ok(evaluate(model, ds, batch, w, stage, false)?.0)
}

/// Central finite differences against the analytic gradient.
///
/// Returns the largest `|g_analytic - g_fd| / max(1, |g_fd|)` over the
/// selected parameters.
pub fn grad_check(
    model: &ToyModel,
    ds: &FactorDataset,
    batch: &Batch,
    w: &LossWeights,
    stage: usize,
    epsilon: f64,
    set: ParamSet,
) -> Result<f64> {
    check_range("epsilon", epsilon, (1e-7..=1e-4).contains(&epsilon), "[1e-7, 1e-4]")?;
    let (_, grad) = evaluate(model, ds, batch, w, stage, true)?;
    let analytic = grad.expect("requested").to_flat();
    let base = model.to_flat();
    let range = match set {
        ParamSet::All => 0..base.len(),
        ParamSet::DecoderOnly => model.decoder_range(),
    };
    let mut probe = model.clone();
    let mut flat = base.clone();
    let mut worst: f64 = 0.0;
    for k in range {
        flat[k] = base[k] + epsilon;
        probe.set_flat(&flat)?;
        let up = total_loss(&probe, ds, batch, w, stage)?.total;
        flat[k] = base[k] - epsilon;
        probe.set_flat(&flat)?;
        let down = total_loss(&probe, ds, batch, w, stage)?.total;
        flat[k] = base[k];
        let fd = (up - down) / (2.0 * epsilon);
        if !fd.is_finite() || !analytic[k].is_finite() {
            return Err(Error::NonFinite("gradient"));
        }
        worst = worst.max((analytic[k] - fd).abs() / fd.abs().max(1.0));
    }
    Ok(worst)
}
