use ndarray::{Array1, Array2};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{gaussian_vec, seeded, Rng};

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub x: Array1<f64>,
    pub scene: usize,
    pub view: usize,
}

/// Synthetic multi-view data `x = scale * (A s_i + view_scale * B v_m) + noise`.
///
/// View factors dominate by default, so untrained encoders see mostly
/// camera variation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FactorParams {
    pub scenes: usize,
    pub views: usize,
    pub input_dim: usize,
    pub scene_factors: usize,
    pub view_factors: usize,
    pub view_scale: f64,
    pub data_scale: f64,
    pub noise: f64,
    /// Width of the paired text embeddings; must equal the scene code width.
    pub text_dim: usize,
    pub seed: u64,
}

impl Default for FactorParams {
    fn default() -> Self {
        Self {
            scenes: 8,
            views: 6,
            input_dim: 32,
            scene_factors: 4,
            view_factors: 3,
            view_scale: 6.0,
            data_scale: 0.1,
            noise: 0.0,
            text_dim: 8,
            seed: 1,
        }
    }
}

/// Samples indexed by (scene, view) plus one unit text embedding per scene.
#[derive(Clone, Debug)]
pub struct FactorDataset {
    samples: Vec<Sample>,
    texts: Array2<f64>,
    num_views: usize,
    /// `grid[scene][view]` is an index into `samples`.
    grid: Vec<Vec<Option<usize>>>,
}

fn gaussian_matrix(rng: &mut Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_vec((rows, cols), gaussian_vec(rng, rows * cols, 1.0))
        .expect("shape matches length")
}

impl FactorDataset {
    pub fn generate(p: &FactorParams) -> Result<Self> {
        if p.input_dim == 0 || p.scene_factors == 0 || p.view_factors == 0 || p.text_dim < 2 {
            return Err(Error::Config("factor dimensions must be positive".into()));
        }
        let mut rng = seeded(p.seed, 6);
        let a = gaussian_matrix(&mut rng, p.input_dim, p.scene_factors);
        let b = gaussian_matrix(&mut rng, p.input_dim, p.view_factors);
        let sf = gaussian_matrix(&mut rng, p.scenes, p.scene_factors);
        let vf = gaussian_matrix(&mut rng, p.views, p.view_factors);
        let mut texts = gaussian_matrix(&mut rng, p.scenes, p.text_dim);
        for mut row in texts.rows_mut() {
            let n = row.dot(&row).sqrt();
            row /= n;
        }
        let mut samples = Vec::with_capacity(p.scenes * p.views);
        for i in 0..p.scenes {
            for m in 0..p.views {
                let clean = a.dot(&sf.row(i)) + p.view_scale * b.dot(&vf.row(m));
                let mut x = p.data_scale * clean;
                if p.noise > 0.0 {
                    x += &Array1::from(gaussian_vec(&mut rng, p.input_dim, p.noise));
                }
                samples.push(Sample { x, scene: i, view: m });
            }
        }
        Self::new(samples, texts)
    }

    /// Validates that every sample can take part in both swaps: each scene
    /// is seen from at least two views and each view shows at least two
    /// scenes.
    pub fn new(samples: Vec<Sample>, texts: Array2<f64>) -> Result<Self> {
        let first = samples.first().ok_or(Error::Pairing("dataset is empty".into()))?;
        let dim = first.x.len();
        let num_scenes = texts.nrows();
        let num_views = samples.iter().map(|s| s.view).max().unwrap_or(0) + 1;
        let mut grid = vec![vec![None; num_views]; num_scenes];
        for (k, s) in samples.iter().enumerate() {
            if s.x.len() != dim {
                return Err(Error::DimMismatch {
                    left: dim,
                    right: s.x.len(),
                });
            }
            if s.x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("sample"));
            }
            if s.scene >= num_scenes {
                return Err(Error::Pairing(format!("scene {} has no text embedding", s.scene)));
            }
            let slot = &mut grid[s.scene][s.view];
            if slot.is_some() {
                return Err(Error::Pairing(format!(
                    "duplicate sample for scene {} view {}",
                    s.scene, s.view
                )));
            }
            *slot = Some(k);
        }
        for (i, row) in grid.iter().enumerate() {
            let seen = row.iter().filter(|c| c.is_some()).count();
            if seen < 2 {
                return Err(Error::Pairing(format!("scene {i} appears under {seen} view(s)")));
            }
        }
        for m in 0..num_views {
            let seen = grid.iter().filter(|row| row[m].is_some()).count();
            if seen < 2 {
                return Err(Error::Pairing(format!("view {m} shows {seen} scene(s)")));
            }
        }
        Ok(Self {
            samples,
            texts,
            num_views,
            grid,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn texts(&self) -> &Array2<f64> {
        &self.texts
    }

    pub fn input_dim(&self) -> usize {
        self.samples[0].x.len()
    }

    pub fn num_scenes(&self) -> usize {
        self.texts.nrows()
    }

    pub fn num_views(&self) -> usize {
        self.num_views
    }

    pub fn index(&self, scene: usize, view: usize) -> Option<usize> {
        self.grid.get(scene)?.get(view).copied().flatten()
    }

    /// One swap quadruple per sample, with the partner view and partner
    /// scene drawn uniformly among the available ones.
    pub fn draw_batch(&self, rng: &mut Rng) -> Batch {
        let mut items = Vec::with_capacity(self.samples.len());
        for (k, s) in self.samples.iter().enumerate() {
            let views: Vec<usize> = (0..self.num_views)
                .filter(|&n| n != s.view)
                .filter_map(|n| self.index(s.scene, n))
                .collect();
            let scenes: Vec<usize> = (0..self.num_scenes())
                .filter(|&j| j != s.scene)
                .filter_map(|j| self.index(j, s.view))
                .collect();
            items.push(Quad {
                anchor: k,
                same_scene: views[rng.random_range(0..views.len())],
                same_view: scenes[rng.random_range(0..scenes.len())],
            });
        }
        Batch { items }
    }
}

/// Indices of `o_{i,m}`, `o_{i,n}` (same scene, other view) and `o_{j,m}`
/// (same view, other scene).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Quad {
    pub anchor: usize,
    pub same_scene: usize,
    pub same_view: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub items: Vec<Quad>,
}
