use ndarray::{Array1, Array2};

use crate::disentangle::model::ToyEncoders;
use crate::error::{Error, Result};
use crate::io::{EmbeddingDataset, Kind};

/// Stores the encoders as an embedding file of width `input_dim`.
///
/// Entry `ws/k` is column `k` of `W_s` and `wv/k` column `k` of `W_v`, so
/// each entry is the direction an encoder output reads from input space.
/// Biases go into the metadata as JSON arrays under `bs` and `bv`.
/// Weights are stored in single precision.
pub fn export_encoders(enc: &ToyEncoders) -> Result<EmbeddingDataset> {
    let dim = u32::try_from(enc.ws.nrows()).map_err(|_| Error::BadDimension(enc.ws.nrows()))?;
    let mut ds = EmbeddingDataset::new(dim)?;
    for (prefix, w) in [("ws", &enc.ws), ("wv", &enc.wv)] {
        for (k, col) in w.columns().into_iter().enumerate() {
            ds.push(format!("{prefix}/{k}"), Kind::Image, col.iter().map(|&v| v as f32).collect())?;
        }
    }
    ds.metadata.insert("content".into(), "toy_encoders".into());
    ds.metadata.insert("scene_dim".into(), enc.ws.ncols().to_string());
    ds.metadata.insert("view_dim".into(), enc.wv.ncols().to_string());
    ds.metadata.insert("bs".into(), serde_json::to_string(&enc.bs.to_vec())?);
    ds.metadata.insert("bv".into(), serde_json::to_string(&enc.bv.to_vec())?);
    Ok(ds)
}

pub fn import_encoders(ds: &EmbeddingDataset) -> Result<ToyEncoders> {
    let meta = |key: &str| {
        ds.metadata
            .get(key)
            .ok_or_else(|| Error::Malformed(format!("metadata key {key} missing")))
    };
    let width = |key: &str| -> Result<usize> {
        meta(key)?
            .parse()
            .map_err(|_| Error::Malformed(format!("{key} is not an integer")))
    };
    let bias = |key: &str| -> Result<Array1<f64>> { Ok(Array1::from(serde_json::from_str::<Vec<f64>>(meta(key)?)?)) };
    let matrix = |prefix: &str, cols: usize| -> Result<Array2<f64>> {
        let mut w = Array2::zeros((ds.dim(), cols));
        for k in 0..cols {
            let e = ds.embedding(&format!("{prefix}/{k}"), Kind::Image)?;
            w.column_mut(k).assign(&Array1::from(e.into_vec()));
        }
        Ok(w)
    };
    let (ks, kv) = (width("scene_dim")?, width("view_dim")?);
    let enc = ToyEncoders {
        ws: matrix("ws", ks)?,
        bs: bias("bs")?,
        wv: matrix("wv", kv)?,
        bv: bias("bv")?,
    };
    if enc.bs.len() != ks || enc.bv.len() != kv {
        return Err(Error::Malformed("bias length does not match code width".into()));
    }
    Ok(enc)
}
