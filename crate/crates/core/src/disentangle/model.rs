use ndarray::{s, Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::rng::{gaussian_vec, Rng};

/// Linear scene and view encoders: `z_s = x W_s + b_s`, `z_v = x W_v + b_v`.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyEncoders {
    pub ws: Array2<f64>,
    pub bs: Array1<f64>,
    pub wv: Array2<f64>,
    pub bv: Array1<f64>,
}

/// Linear decoder over the concatenated codes: `[z_s, z_v] W_d + b_d`.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyDecoder {
    pub wd: Array2<f64>,
    pub bd: Array1<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyModel {
    pub enc: ToyEncoders,
    pub dec: ToyDecoder,
}

/// Which parameters a gradient step or gradient check touches.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamSet {
    All,
    DecoderOnly,
}

fn random(rng: &mut Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_vec((rows, cols), gaussian_vec(rng, rows * cols, scale))
        .expect("shape matches length")
}

impl ToyModel {
    /// Gaussian weights with std `scale`, zero biases.
    pub fn init(input_dim: usize, ks: usize, kv: usize, scale: f64, rng: &mut Rng) -> Self {
        let ws = random(rng, input_dim, ks, scale);
        let wv = random(rng, input_dim, kv, scale);
        let wd = random(rng, ks + kv, input_dim, scale);
        Self {
            enc: ToyEncoders {
                ws,
                bs: Array1::zeros(ks),
                wv,
                bv: Array1::zeros(kv),
            },
            dec: ToyDecoder {
                wd,
                bd: Array1::zeros(input_dim),
            },
        }
    }

    /// A model with every parameter zero and this model's shapes.
    pub fn zeros_like(&self) -> Self {
        let z2 = |a: &Array2<f64>| Array2::zeros(a.raw_dim());
        let z1 = |a: &Array1<f64>| Array1::zeros(a.len());
        Self {
            enc: ToyEncoders {
                ws: z2(&self.enc.ws),
                bs: z1(&self.enc.bs),
                wv: z2(&self.enc.wv),
                bv: z1(&self.enc.bv),
            },
            dec: ToyDecoder {
                wd: z2(&self.dec.wd),
                bd: z1(&self.dec.bd),
            },
        }
    }

    pub fn input_dim(&self) -> usize {
        self.enc.ws.nrows()
    }

    pub fn scene_dim(&self) -> usize {
        self.enc.ws.ncols()
    }

    pub fn view_dim(&self) -> usize {
        self.enc.wv.ncols()
    }

    pub fn encode_scene(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.enc.ws) + &self.enc.bs
    }

    pub fn encode_view(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.enc.wv) + &self.enc.bv
    }

    pub fn wd_scene(&self) -> ArrayView2<'_, f64> {
        self.dec.wd.slice(s![..self.scene_dim(), ..])
    }

    pub fn wd_view(&self) -> ArrayView2<'_, f64> {
        self.dec.wd.slice(s![self.scene_dim().., ..])
    }

    pub fn decode(&self, zs: ArrayView2<f64>, zv: ArrayView2<f64>) -> Array2<f64> {
        zs.dot(&self.wd_scene()) + zv.dot(&self.wd_view()) + &self.dec.bd
    }

    fn parts(&self) -> [&[f64]; 6] {
        [
            self.enc.ws.as_slice().expect("standard layout"),
            self.enc.bs.as_slice().expect("standard layout"),
            self.enc.wv.as_slice().expect("standard layout"),
            self.enc.bv.as_slice().expect("standard layout"),
            self.dec.wd.as_slice().expect("standard layout"),
            self.dec.bd.as_slice().expect("standard layout"),
        ]
    }

    fn parts_mut(&mut self) -> [&mut [f64]; 6] {
        [
            self.enc.ws.as_slice_mut().expect("standard layout"),
            self.enc.bs.as_slice_mut().expect("standard layout"),
            self.enc.wv.as_slice_mut().expect("standard layout"),
            self.enc.bv.as_slice_mut().expect("standard layout"),
            self.dec.wd.as_slice_mut().expect("standard layout"),
            self.dec.bd.as_slice_mut().expect("standard layout"),
        ]
    }

    /// Flat parameter vector in the order `W_s, b_s, W_v, b_v, W_d, b_d`.
    pub fn to_flat(&self) -> Vec<f64> {
        self.parts().concat()
    }

    pub fn num_params(&self) -> usize {
        self.parts().iter().map(|p| p.len()).sum()
    }

    /// Index range of the decoder inside the flat vector.
    pub fn decoder_range(&self) -> std::ops::Range<usize> {
        let n = self.num_params();
        n - self.dec.wd.len() - self.dec.bd.len()..n
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::DimMismatch {
                left: self.num_params(),
                right: flat.len(),
            });
        }
        let mut offset = 0;
        for part in self.parts_mut() {
            let n = part.len();
            part.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// `self -= lr * grad` on the selected parameters.
    pub fn descend(&mut self, grad: &ToyModel, lr: f64, set: ParamSet) {
        self.dec.wd.scaled_add(-lr, &grad.dec.wd);
        self.dec.bd.scaled_add(-lr, &grad.dec.bd);
        if set == ParamSet::All {
            self.enc.ws.scaled_add(-lr, &grad.enc.ws);
            self.enc.bs.scaled_add(-lr, &grad.enc.bs);
            self.enc.wv.scaled_add(-lr, &grad.enc.wv);
            self.enc.bv.scaled_add(-lr, &grad.enc.bv);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.parts().iter().all(|p| p.iter().all(|v| v.is_finite()))
    }
}

/// Stacks the given sample rows into a matrix.
pub(crate) fn stack_rows(rows: &[ndarray::ArrayView1<f64>]) -> Array2<f64> {
    ndarray::stack(Axis(0), rows).expect("rows share a length")
}
