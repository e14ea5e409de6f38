//! Embedding vectors, cosine similarity and the task-direction projector.
//!
//! The projector keeps the component of a vector along a task direction `d`
//! and shrinks everything orthogonal to it by `1 - alpha`:
//!
//! ```text
//! P(x) = alpha * (<x, d> / |d|^2) * d + (1 - alpha) * x
//! ```
//!
//! Image embeddings are projected relative to the stage start embedding,
//! text embeddings are projected directly. Outputs are not re-normalised;
//! the cosine reward is scale invariant.

use serde::{Deserialize, Serialize};

use crate::error::{check_range, Error, Result};

/// Norms below this are treated as zero.
pub const ZERO_NORM: f64 = 1e-12;

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn same_dim(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() == b.len() {
        Ok(())
    } else {
        Err(Error::DimMismatch {
            left: a.len(),
            right: b.len(),
        })
    }
}

/// Fixed-dimension real vector (dim >= 2, all entries finite).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::BadDimension(values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedding"));
        }
        Ok(Self(values))
    }

    pub fn from_f32(values: &[f32]) -> Result<Self> {
        Self::new(values.iter().map(|&v| f64::from(v)).collect())
    }

    pub fn zeros(dim: usize) -> Result<Self> {
        Self::new(vec![0.0; dim])
    }

    /// Standard basis vector `e_index` in `dim` dimensions.
    pub fn basis(dim: usize, index: usize) -> Result<Self> {
        let mut v = vec![0.0; dim];
        *v.get_mut(index).ok_or(Error::DimMismatch {
            left: dim,
            right: index + 1,
        })? = 1.0;
        Self::new(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.0.iter().map(|&v| v as f32).collect()
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub fn dot(&self, other: &Embedding) -> Result<f64> {
        same_dim(&self.0, &other.0)?;
        Ok(dot(&self.0, &other.0))
    }

    pub fn sub(&self, other: &Embedding) -> Result<Embedding> {
        same_dim(&self.0, &other.0)?;
        Ok(Embedding(
            self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect(),
        ))
    }

    pub fn add(&self, other: &Embedding) -> Result<Embedding> {
        same_dim(&self.0, &other.0)?;
        Ok(Embedding(
            self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect(),
        ))
    }

    pub fn scale(&self, k: f64) -> Embedding {
        Embedding(self.0.iter().map(|v| v * k).collect())
    }

    /// `self + k * other`
    pub fn add_scaled(&self, k: f64, other: &Embedding) -> Result<Embedding> {
        same_dim(&self.0, &other.0)?;
        Ok(Embedding(
            self.0.iter().zip(&other.0).map(|(a, b)| a + k * b).collect(),
        ))
    }

    pub fn normalized(&self) -> Result<Embedding> {
        let n = self.norm();
        if n < ZERO_NORM {
            return Err(Error::ZeroVector);
        }
        Ok(self.scale(1.0 / n))
    }
}

impl TryFrom<Vec<f64>> for Embedding {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<Embedding> for Vec<f64> {
    fn from(e: Embedding) -> Self {
        e.0
    }
}

/// A nonzero direction in embedding space.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskDirection {
    d: Embedding,
    norm_sq: f64,
}

impl TaskDirection {
    pub fn new(d: Embedding) -> Result<Self> {
        let n = d.norm();
        if n < ZERO_NORM {
            return Err(Error::ZeroVector);
        }
        Ok(Self { norm_sq: n * n, d })
    }

    /// `goal - start`.
    pub fn between(start: &Embedding, goal: &Embedding) -> Result<Self> {
        Self::new(goal.sub(start)?)
    }

    pub fn vector(&self) -> &Embedding {
        &self.d
    }

    pub fn dim(&self) -> usize {
        self.d.dim()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq.sqrt()
    }

    /// Scalar coordinate of `x` along the direction, in units of `|d|`.
    pub fn coordinate(&self, x: &Embedding) -> Result<f64> {
        Ok(self.d.dot(x)? / self.norm_sq)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectionConfig {
    pub alpha: f64,
}

impl ProjectionConfig {
    pub const DEFAULT_ALPHA: f64 = 0.8;

    pub fn new(alpha: f64) -> Result<Self> {
        let cfg = Self { alpha };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        check_range(
            "alpha",
            self.alpha,
            (0.0..=1.0).contains(&self.alpha),
            "[0, 1]",
        )
    }
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self {
            alpha: Self::DEFAULT_ALPHA,
        }
    }
}

/// The anisotropic operator `alpha * d d^T / |d|^2 + (1 - alpha) * I`.
#[derive(Clone, Debug)]
pub struct Projector {
    direction: TaskDirection,
    alpha: f64,
}

pub fn make_projector(direction: &TaskDirection, cfg: ProjectionConfig) -> Result<Projector> {
    cfg.validate()?;
    Ok(Projector {
        direction: direction.clone(),
        alpha: cfg.alpha,
    })
}

impl Projector {
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn direction(&self) -> &TaskDirection {
        &self.direction
    }

    pub fn apply(&self, x: &Embedding) -> Result<Embedding> {
        let c = self.direction.coordinate(x)?;
        let d = self.direction.vector().as_slice();
        let a = self.alpha;
        Ok(Embedding(
            x.as_slice()
                .iter()
                .zip(d)
                .map(|(xi, di)| a * c * di + (1.0 - a) * xi)
                .collect(),
        ))
    }
}

pub fn apply_projection(p: &Projector, x: &Embedding) -> Result<Embedding> {
    p.apply(x)
}

/// Cosine similarity clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &Embedding, b: &Embedding) -> Result<f64> {
    same_dim(a.as_slice(), b.as_slice())?;
    let na = a.norm();
    let nb = b.norm();
    if na < ZERO_NORM || nb < ZERO_NORM {
        return Err(Error::ZeroVector);
    }
    Ok((dot(a.as_slice(), b.as_slice()) / (na * nb)).clamp(-1.0, 1.0))
}

/// `e_task - e_baseline`: the text direction isolating the action semantics.
pub fn text_direction(e_task: &Embedding, e_baseline: &Embedding) -> Result<TaskDirection> {
    TaskDirection::new(e_task.sub(e_baseline)?)
}

pub fn project_text(
    e_instruction: &Embedding,
    d_text: &TaskDirection,
    cfg: ProjectionConfig,
) -> Result<Embedding> {
    make_projector(d_text, cfg)?.apply(e_instruction)
}

/// `P(e_ot - e_start) + e_start`.
pub fn project_image(
    e_ot: &Embedding,
    e_start: &Embedding,
    d_img: &TaskDirection,
    cfg: ProjectionConfig,
) -> Result<Embedding> {
    let displacement = e_ot.sub(e_start)?;
    make_projector(d_img, cfg)?.apply(&displacement)?.add(e_start)
}

/// `<e_ot - e_start, d> / |d|^2`.
pub fn progress_coordinate(
    e_ot: &Embedding,
    e_start: &Embedding,
    d_img: &TaskDirection,
) -> Result<f64> {
    d_img.coordinate(&e_ot.sub(e_start)?)
}

/// Splits `e_ot - e_start` into `c * d + eps` with `eps` orthogonal to `d`.
pub fn decompose(
    e_ot: &Embedding,
    e_start: &Embedding,
    d_img: &TaskDirection,
) -> Result<(f64, Embedding)> {
    let delta = e_ot.sub(e_start)?;
    split(&delta, d_img)
}

pub(crate) fn split(x: &Embedding, d: &TaskDirection) -> Result<(f64, Embedding)> {
    let c = d.coordinate(x)?;
    let eps = x.add_scaled(-c, d.vector())?;
    Ok((c, eps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn e(v: &[f64]) -> Embedding {
        Embedding::new(v.to_vec()).unwrap()
    }

    fn dir(v: &[f64]) -> TaskDirection {
        TaskDirection::new(e(v)).unwrap()
    }

    fn cfg(alpha: f64) -> ProjectionConfig {
        ProjectionConfig::new(alpha).unwrap()
    }

    fn close(a: &Embedding, b: &[f64], tol: f64) {
        assert_eq!(a.dim(), b.len());
        for (x, y) in a.as_slice().iter().zip(b) {
            assert_abs_diff_eq!(*x, *y, epsilon = tol);
        }
    }

    #[test]
    fn embedding_rejects_short_and_nonfinite() {
        assert!(matches!(Embedding::new(vec![1.0]), Err(Error::BadDimension(1))));
        assert!(matches!(
            Embedding::new(vec![1.0, f64::NAN]),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&e(&[1., 0., 0.]), &e(&[1., 0., 0.])).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&e(&[1., 0.]), &e(&[0., 1.])).unwrap(), 0.0);
        assert_abs_diff_eq!(
            cosine_similarity(&e(&[3., 4.]), &e(&[4., 3.])).unwrap(),
            0.96,
            epsilon = 1e-15
        );
    }

    #[test]
    fn cosine_errors() {
        assert!(matches!(
            cosine_similarity(&e(&[0., 0.]), &e(&[1., 0.])),
            Err(Error::ZeroVector)
        ));
        assert!(matches!(
            cosine_similarity(&e(&[1., 0.]), &e(&[1., 0., 0.])),
            Err(Error::DimMismatch { left: 2, right: 3 })
        ));
    }

    #[test]
    fn projector_examples() {
        let p0 = make_projector(&dir(&[0.3, -1.0]), cfg(0.0)).unwrap();
        assert_eq!(p0.apply(&e(&[2., 5.])).unwrap().as_slice(), &[2., 5.]);
        let p1 = make_projector(&dir(&[1., 0.]), cfg(1.0)).unwrap();
        close(&p1.apply(&e(&[3., 4.])).unwrap(), &[3., 0.], 1e-15);
        let p8 = make_projector(&dir(&[1., 0.]), cfg(0.8)).unwrap();
        close(&p8.apply(&e(&[3., 4.])).unwrap(), &[3., 0.8], 1e-15);
    }

    #[test]
    fn apply_projection_examples() {
        let p = make_projector(&dir(&[1., 2.]), cfg(0.37)).unwrap();
        close(&apply_projection(&p, &e(&[2., 4.])).unwrap(), &[2., 4.], 1e-15);
        let p = make_projector(&dir(&[1., 2.]), cfg(0.8)).unwrap();
        close(&apply_projection(&p, &e(&[2., -1.])).unwrap(), &[0.4, -0.2], 1e-15);
        let p = make_projector(&dir(&[0., 1.]), cfg(0.5)).unwrap();
        close(&apply_projection(&p, &e(&[4., 6.])).unwrap(), &[2., 6.], 1e-15);
        assert!(matches!(
            apply_projection(&p, &e(&[1., 2., 3.])),
            Err(Error::DimMismatch { .. })
        ));
    }

    #[test]
    fn projection_config_range() {
        assert!(ProjectionConfig::new(-0.01).is_err());
        assert!(ProjectionConfig::new(1.01).is_err());
        assert!(ProjectionConfig::new(f64::NAN).is_err());
        assert_eq!(ProjectionConfig::default().alpha, 0.8);
    }

    #[test]
    fn text_direction_examples() {
        assert_eq!(
            text_direction(&e(&[1., 1.]), &e(&[1., 0.])).unwrap().vector().as_slice(),
            &[0., 1.]
        );
        assert!(matches!(
            text_direction(&e(&[0.6, 0.8]), &e(&[0.6, 0.8])),
            Err(Error::ZeroVector)
        ));
        assert_eq!(
            text_direction(&e(&[2., 3., 5.]), &e(&[1., 1., 1.]))
                .unwrap()
                .vector()
                .as_slice(),
            &[1., 2., 4.]
        );
    }

    #[test]
    fn project_text_examples() {
        let d = dir(&[0., 1.]);
        assert_eq!(project_text(&e(&[1., 1.]), &d, cfg(0.0)).unwrap().as_slice(), &[1., 1.]);
        for alpha in [0.0, 0.3, 0.8, 1.0] {
            close(&project_text(&e(&[0., -2.5]), &d, cfg(alpha)).unwrap(), &[0., -2.5], 1e-15);
        }
        close(&project_text(&e(&[1., 1.]), &d, cfg(1.0)).unwrap(), &[0., 1.], 1e-15);
    }

    #[test]
    fn project_image_examples() {
        let start = e(&[0.2, -0.4, 1.0]);
        let d = dir(&[1.0, 0.5, -0.25]);
        let goal = start.add(d.vector()).unwrap();
        for alpha in [0.0, 0.5, 0.8, 1.0] {
            close(&project_image(&start, &start, &d, cfg(alpha)).unwrap(), start.as_slice(), 1e-15);
            close(&project_image(&goal, &start, &d, cfg(alpha)).unwrap(), goal.as_slice(), 1e-12);
        }
        let out = project_image(&e(&[2., 4.]), &e(&[0., 0.]), &dir(&[1., 0.]), cfg(0.75)).unwrap();
        close(&out, &[2., 1.], 1e-15);
    }

    #[test]
    fn progress_coordinate_examples() {
        let start = e(&[0.5, 1.5]);
        let d = dir(&[2., -1.]);
        assert_eq!(progress_coordinate(&start, &start, &d).unwrap(), 0.0);
        let goal = start.add(d.vector()).unwrap();
        assert_abs_diff_eq!(progress_coordinate(&goal, &start, &d).unwrap(), 1.0, epsilon = 1e-15);
        // Independent oracle: explicit dot product over squared norm.
        let (x, dv) = ([3.0f64, 7.0], [2.0f64, 0.0]);
        let expected = (x[0] * dv[0] + x[1] * dv[1]) / (dv[0] * dv[0] + dv[1] * dv[1]);
        assert_eq!(expected, 1.5);
        assert_eq!(
            progress_coordinate(&e(&[3., 7.]), &e(&[0., 0.]), &dir(&[2., 0.])).unwrap(),
            expected
        );
    }

    #[test]
    fn decompose_examples() {
        let zero = e(&[0., 0.]);
        let (c, eps) = decompose(&e(&[2., 4.]), &zero, &dir(&[1., 2.])).unwrap();
        assert_abs_diff_eq!(c, 2.0, epsilon = 1e-15);
        close(&eps, &[0., 0.], 1e-15);
        let (c, eps) = decompose(&e(&[-2., 1.]), &zero, &dir(&[1., 2.])).unwrap();
        assert_eq!(c, 0.0);
        close(&eps, &[-2., 1.], 0.0);
        let (c, eps) = decompose(&e(&[3., 4.]), &zero, &dir(&[1., 0.])).unwrap();
        assert_eq!(c, 3.0);
        close(&eps, &[0., 4.], 0.0);
    }

    #[test]
    fn zero_direction_rejected() {
        assert!(matches!(TaskDirection::new(e(&[1e-13, 0.])), Err(Error::ZeroVector)));
    }

    fn vec_strategy(dim: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0f64..10.0, dim)
    }

    fn nonzero(dim: usize) -> impl Strategy<Value = Vec<f64>> {
        vec_strategy(dim).prop_filter("nonzero", |v| norm(v) > 1e-3)
    }

    proptest! {
        #[test]
        fn spectrum(d in nonzero(6), x in vec_strategy(6), alpha in 0.0f64..=1.0) {
            let d = TaskDirection::new(Embedding::new(d).unwrap()).unwrap();
            let x = Embedding::new(x).unwrap();
            let p = make_projector(&d, ProjectionConfig::new(alpha).unwrap()).unwrap();
            let (c, eps) = split(&x, &d).unwrap();
            let par = d.vector().scale(c);
            let scale = 1.0 + x.norm();
            let out_par = p.apply(&par).unwrap();
            let out_perp = p.apply(&eps).unwrap();
            for (a, b) in out_par.as_slice().iter().zip(par.as_slice()) {
                prop_assert!((a - b).abs() <= 1e-9 * scale);
            }
            for (a, b) in out_perp.as_slice().iter().zip(eps.as_slice()) {
                prop_assert!((a - (1.0 - alpha) * b).abs() <= 1e-9 * scale);
            }
        }

        #[test]
        fn linearity(d in nonzero(5), x in vec_strategy(5), y in vec_strategy(5),
                     a in -3.0f64..3.0, b in -3.0f64..3.0, alpha in 0.0f64..=1.0) {
            let d = TaskDirection::new(Embedding::new(d).unwrap()).unwrap();
            let p = make_projector(&d, ProjectionConfig::new(alpha).unwrap()).unwrap();
            let x = Embedding::new(x).unwrap();
            let y = Embedding::new(y).unwrap();
            let lhs = p.apply(&x.scale(a).add_scaled(b, &y).unwrap()).unwrap();
            let rhs = p.apply(&x).unwrap().scale(a).add_scaled(b, &p.apply(&y).unwrap()).unwrap();
            let scale = 1.0 + lhs.norm() + rhs.norm();
            for (l, r) in lhs.as_slice().iter().zip(rhs.as_slice()) {
                prop_assert!((l - r).abs() <= 1e-9 * scale);
            }
        }

        #[test]
        fn idempotence_limits(d in nonzero(4), x in vec_strategy(4)) {
            let d = TaskDirection::new(Embedding::new(d).unwrap()).unwrap();
            let x = Embedding::new(x).unwrap();
            let full = make_projector(&d, ProjectionConfig::new(1.0).unwrap()).unwrap();
            let once = full.apply(&x).unwrap();
            let twice = full.apply(&once).unwrap();
            for (a, b) in once.as_slice().iter().zip(twice.as_slice()) {
                prop_assert!((a - b).abs() <= 1e-9 * (1.0 + x.norm()));
            }
            let ident = make_projector(&d, ProjectionConfig::new(0.0).unwrap()).unwrap();
            prop_assert_eq!(ident.apply(&x).unwrap(), x);
        }

        #[test]
        fn cosine_scale_invariant(a in nonzero(5), b in nonzero(5), k in 1e-3f64..1e3) {
            let a = Embedding::new(a).unwrap();
            let b = Embedding::new(b).unwrap();
            let base = cosine_similarity(&a, &b).unwrap();
            let scaled = cosine_similarity(&a.scale(k), &b).unwrap();
            prop_assert!((base - scaled).abs() <= 1e-12);
            prop_assert!((-1.0..=1.0).contains(&base));
        }

        #[test]
        fn image_projection_alpha_invariant_along_direction(
            start in vec_strategy(4), d in nonzero(4), t in -2.0f64..2.0,
            a1 in 0.0f64..=1.0, a2 in 0.0f64..=1.0,
        ) {
            let start = Embedding::new(start).unwrap();
            let d = TaskDirection::new(Embedding::new(d).unwrap()).unwrap();
            let obs = start.add_scaled(t, d.vector()).unwrap();
            let p1 = project_image(&obs, &start, &d, ProjectionConfig::new(a1).unwrap()).unwrap();
            let p2 = project_image(&obs, &start, &d, ProjectionConfig::new(a2).unwrap()).unwrap();
            for (x, y) in p1.as_slice().iter().zip(p2.as_slice()) {
                prop_assert!((x - y).abs() <= 1e-9 * (1.0 + obs.norm()));
            }
        }

        #[test]
        fn decompose_orthogonal(start in vec_strategy(6), obs in vec_strategy(6), d in nonzero(6)) {
            let start = Embedding::new(start).unwrap();
            let obs = Embedding::new(obs).unwrap();
            let d = TaskDirection::new(Embedding::new(d).unwrap()).unwrap();
            let (c, eps) = decompose(&obs, &start, &d).unwrap();
            let rebuilt = start.add_scaled(c, d.vector()).unwrap().add(&eps).unwrap();
            let inner = eps.dot(d.vector()).unwrap();
            prop_assert!(inner.abs() <= 1e-9 * d.norm() * eps.norm() + 1e-12);
            for (x, y) in rebuilt.as_slice().iter().zip(obs.as_slice()) {
                prop_assert!((x - y).abs() <= 1e-9 * (1.0 + obs.norm()));
            }
        }
    }
}
