//! PCA with whitening, fit on training embeddings only.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::compose::emb::EmbeddingSet;
use crate::error::{Error, Result};

pub const DEFAULT_COMPONENTS: usize = 16;
pub const SCALE_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `r` orthonormal rows of length `D`, by decreasing variance.
    pub components: Vec<Vec<f64>>,
    /// Standard deviation of the training projections per component.
    pub scales: Vec<f64>,
}

/// Fits `r` whitened principal components to `train`.
///
/// Each component's sign is fixed so that its largest-magnitude entry is
/// positive.
pub fn fit_pca(train: &EmbeddingSet, r: usize) -> Result<PcaModel> {
    let (n, dim) = (train.len(), train.dim());
    if n < 2 {
        return Err(Error::contract(format!("PCA needs at least 2 rows, got {n}")));
    }
    if r == 0 || r > (n - 1).min(dim) {
        return Err(Error::contract(format!(
            "{r} components requested; at most min(n-1, D) = {} available",
            (n - 1).min(dim)
        )));
    }
    let rows = train.vectors();
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::non_finite("PCA input"));
    }
    let mut mean = vec![0.0f64; dim];
    for row in rows {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += f64::from(v);
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, dim, |i, j| f64::from(rows[i][j]) - mean[j]);

    let svd = centered.svd(false, true);
    let v_t = svd.v_t.ok_or_else(|| Error::non_finite("PCA singular vectors"))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));

    let denom = ((n - 1) as f64).sqrt();
    let mut components = Vec::with_capacity(r);
    let mut scales = Vec::with_capacity(r);
    for &idx in order.iter().take(r) {
        let mut c: Vec<f64> = v_t.row(idx).iter().copied().collect();
        let pivot = c.iter().copied().fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        if pivot < 0.0 {
            c.iter_mut().for_each(|v| *v = -*v);
        }
        components.push(c);
        scales.push((svd.singular_values[idx] / denom).max(SCALE_FLOOR));
    }
    Ok(PcaModel {
        mean,
        components,
        scales,
    })
}

impl PcaModel {
    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.components.len()
    }

    fn check(&self, len: usize, op: &'static str, expected: usize) -> Result<()> {
        if len != expected {
            return Err(Error::Shape {
                op,
                lhs: vec![expected],
                rhs: vec![len],
            });
        }
        Ok(())
    }

    /// Whitened projection `((x − mean)·Cᵀ) / scales`.
    pub fn transform(&self, x: &[f32]) -> Result<Vec<f64>> {
        self.check(x.len(), "pca transform", self.input_dim())?;
        Ok(self
            .components
            .iter()
            .zip(&self.scales)
            .map(|(c, s)| {
                c.iter()
                    .zip(x.iter().zip(&self.mean))
                    .map(|(ci, (&xi, mi))| ci * (f64::from(xi) - mi))
                    .sum::<f64>()
                    / s
            })
            .collect())
    }

    pub fn inverse_transform(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check(z.len(), "pca inverse", self.output_dim())?;
        let mut x = self.mean.clone();
        for ((c, s), zi) in self.components.iter().zip(&self.scales).zip(z) {
            for (xj, cj) in x.iter_mut().zip(c) {
                *xj += zi * s * cj;
            }
        }
        Ok(x)
    }

    /// Transforms every row of `set` to `f32`, zero-padded to `width`.
    pub fn transform_padded(&self, set: &EmbeddingSet, width: usize) -> Result<Vec<Vec<f32>>> {
        if width < self.output_dim() {
            return Err(Error::contract(format!(
                "{} PCA components do not fit in width {width}",
                self.output_dim()
            )));
        }
        set.vectors()
            .iter()
            .map(|v| {
                let mut out = vec![0.0f32; width];
                for (o, z) in out.iter_mut().zip(self.transform(v)?) {
                    *o = z as f32;
                }
                Ok(out)
            })
            .collect()
    }
}
