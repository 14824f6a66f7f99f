use crate::error::{Error, Result};

/// One clip: a `len × dim` row-major feature matrix plus its identity.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub clip_id: String,
    pub class_id: usize,
    len: usize,
    dim: usize,
    data: Vec<f64>,
}

impl FeatureSequence {
    pub fn new(clip_id: impl Into<String>, class_id: usize, len: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        let clip_id = clip_id.into();
        if len == 0 || dim == 0 {
            return Err(Error::Data(format!("clip {clip_id}: empty feature matrix {len}x{dim}")));
        }
        if data.len() != len * dim {
            return Err(Error::Data(format!(
                "clip {clip_id}: {len}x{dim} features need {} values, got {}",
                len * dim,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "clip {clip_id}: non-finite feature at row {}, column {}",
                i / dim,
                i % dim
            )));
        }
        Ok(Self {
            clip_id,
            class_id,
            len,
            dim,
            data,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Temporal mean of the rows.
    pub fn pooled(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for row in self.rows() {
            for (o, x) in out.iter_mut().zip(row) {
                *o += x;
            }
        }
        out.iter_mut().for_each(|o| *o /= self.len as f64);
        out
    }
}

/// Clips longer than `target_len` keep their first rows; shorter clips are
/// padded with zero rows.
pub fn pad_or_clip(seq: &FeatureSequence, target_len: usize) -> FeatureSequence {
    let dim = seq.dim;
    let mut data = seq.data[..seq.len.min(target_len) * dim].to_vec();
    data.resize(target_len * dim, 0.0);
    FeatureSequence {
        clip_id: seq.clip_id.clone(),
        class_id: seq.class_id,
        len: target_len,
        dim,
        data,
    }
}
