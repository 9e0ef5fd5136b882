//! Background illumination estimation: a linear map from pooled background
//! statistics to the illumination descriptor, fitted by closed-form ridge
//! regression on mean-centered data.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::envlight::{BasisPartition, IlluminationDescriptor};
use crate::error::{Error, Result};
use crate::raster::{LinearImage, Shading};
use crate::shading_field::{compose_shading, ShadingBases};

pub const DEFAULT_GRID_W: usize = 16;
pub const DEFAULT_GRID_H: usize = 12;
pub const DEFAULT_RIDGE_LAMBDA: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub grid_w: usize,
    pub grid_h: usize,
    pub dim: usize,
}

impl FeatureLayout {
    pub fn new(grid_w: usize, grid_h: usize) -> Self {
        Self {
            grid_w,
            grid_h,
            dim: 3 * grid_w * grid_h + 9,
        }
    }
}

impl Default for FeatureLayout {
    fn default() -> Self {
        Self::new(DEFAULT_GRID_W, DEFAULT_GRID_H)
    }
}

/// `[grid RGB row-major..., mean RGB, p10 RGB, p90 RGB]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BgFeatures {
    pub layout: FeatureLayout,
    pub values: Vec<f64>,
}

/// Percentile with linear interpolation between order statistics.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let t = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * t
}

/// Pixel `(x, y)` pools into grid cell `(⌊(x + ½)·Gw / W⌋, ⌊(y + ½)·Gh / H⌋)`.
pub fn extract_features(bg: &LinearImage, grid_w: usize, grid_h: usize) -> Result<BgFeatures> {
    if bg.is_empty() {
        return Err(Error::InvalidInput("empty background image".into()));
    }
    if grid_w == 0 || grid_h == 0 || bg.width < grid_w || bg.height < grid_h {
        return Err(Error::InvalidInput(format!(
            "feature grid {grid_w}x{grid_h} does not fit a {}x{} background",
            bg.width, bg.height
        )));
    }
    let layout = FeatureLayout::new(grid_w, grid_h);
    let (w, h) = bg.dims();
    let mut sums = vec![[0.0; 3]; grid_w * grid_h];
    let mut counts = vec![0usize; grid_w * grid_h];
    for y in 0..h {
        let gy = ((y as f64 + 0.5) * grid_h as f64 / h as f64) as usize;
        for x in 0..w {
            let gx = ((x as f64 + 0.5) * grid_w as f64 / w as f64) as usize;
            let g = gy.min(grid_h - 1) * grid_w + gx.min(grid_w - 1);
            let p = bg.get(x, y);
            for c in 0..3 {
                sums[g][c] += p[c];
            }
            counts[g] += 1;
        }
    }
    let mut values = Vec::with_capacity(layout.dim);
    for (s, n) in sums.iter().zip(&counts) {
        values.extend(s.iter().map(|v| v / *n as f64));
    }
    let mut stats = [[0.0; 3]; 3];
    for c in 0..3 {
        let mut ch = bg.channel(c);
        stats[0][c] = ch.iter().sum::<f64>() / ch.len() as f64;
        ch.sort_by(f64::total_cmp);
        stats[1][c] = percentile(&ch, 0.1);
        stats[2][c] = percentile(&ch, 0.9);
    }
    values.extend(stats.iter().flatten());
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(
            "background has non-finite values".into(),
        ));
    }
    Ok(BgFeatures { layout, values })
}

/// Linear estimator `l̂ = clamp(Wᵀφ + bias, 0, ∞)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BgEstimator {
    #[serde(rename = "K")]
    pub k: usize,
    pub partition: BasisPartition,
    pub lambda: f64,
    pub feature_layout: FeatureLayout,
    /// `F × 3K`, row-major; columns follow the channel-major descriptor layout.
    #[serde(rename = "W")]
    pub w: Vec<f64>,
    pub bias: Vec<f64>,
    /// Mean squared residual over the training set.
    #[serde(default)]
    pub training_mse: Option<f64>,
}

impl BgEstimator {
    pub fn is_fitted(&self) -> bool {
        let out = 3 * self.k;
        !self.w.is_empty()
            && self.w.len() == self.feature_layout.dim * out
            && self.bias.len() == out
    }

    pub fn predict_features(&self, features: &BgFeatures) -> Result<IlluminationDescriptor> {
        if !self.is_fitted() {
            return Err(Error::Unfitted);
        }
        if features.layout != self.feature_layout
            || features.values.len() != self.feature_layout.dim
        {
            return Err(Error::dims(
                "background features",
                self.feature_layout.dim,
                features.values.len(),
            ));
        }
        let out = 3 * self.k;
        let mut flat = self.bias.clone();
        for (f, &x) in features.values.iter().enumerate() {
            let row = &self.w[f * out..(f + 1) * out];
            for (y, wv) in flat.iter_mut().zip(row) {
                *y += wv * x;
            }
        }
        for v in &mut flat {
            *v = v.max(0.0);
        }
        IlluminationDescriptor::from_flat(self.partition, &flat)
    }
}

/// Ridge fit `W = (XᵀX + λI)⁻¹ XᵀY` on mean-centered `X`, `Y`.
pub fn fit(
    training: &[(BgFeatures, IlluminationDescriptor)],
    ridge_lambda: f64,
) -> Result<BgEstimator> {
    let Some((f0, d0)) = training.first() else {
        return Err(Error::InvalidInput("no training samples".into()));
    };
    if !(ridge_lambda >= 0.0 && ridge_lambda.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "ridge lambda must be >= 0, got {ridge_lambda}"
        )));
    }
    let layout = f0.layout;
    let partition = d0.partition;
    let fdim = layout.dim;
    let out = 3 * partition.k();
    for (i, (f, d)) in training.iter().enumerate() {
        if f.layout != layout || f.values.len() != fdim {
            return Err(Error::dims(
                format!("features of sample {i}"),
                fdim,
                f.values.len(),
            ));
        }
        d.validate()?;
        if d.partition != partition {
            return Err(Error::PartitionMismatch(format!(
                "sample {i} uses {}, sample 0 uses {}",
                d.partition.id(),
                partition.id()
            )));
        }
    }
    let n = training.len();
    let x = DMatrix::from_fn(n, fdim, |r, c| training[r].0.values[c]);
    let ys: Vec<Vec<f64>> = training.iter().map(|(_, d)| d.flatten()).collect();
    let y = DMatrix::from_fn(n, out, |r, c| ys[r][c]);
    let x_mean = DVector::from_fn(fdim, |c, _| x.column(c).mean());
    let y_mean = DVector::from_fn(out, |c, _| y.column(c).mean());
    let mut xc = x.clone();
    for (c, mut col) in xc.column_iter_mut().enumerate() {
        col.add_scalar_mut(-x_mean[c]);
    }
    let mut yc = y.clone();
    for (c, mut col) in yc.column_iter_mut().enumerate() {
        col.add_scalar_mut(-y_mean[c]);
    }
    let xt = xc.transpose();
    let mut gram = &xt * &xc;
    for i in 0..fdim {
        gram[(i, i)] += ridge_lambda;
    }
    let rhs = &xt * &yc;
    let scale = gram.diagonal().max().max(f64::MIN_POSITIVE);
    let chol = gram
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular("normal equations are not positive definite".into()))?;
    let min_pivot = chol
        .l_dirty()
        .diagonal()
        .iter()
        .map(|v| v * v)
        .fold(f64::INFINITY, f64::min);
    if min_pivot <= 1e-12 * scale {
        return Err(Error::Singular(format!(
            "normal equations are rank deficient (pivot {min_pivot:.3e}, scale {scale:.3e})"
        )));
    }
    let w = chol.solve(&rhs);
    let bias = &y_mean - w.transpose() * &x_mean;
    let resid = &xc * &w - &yc;
    let training_mse = resid.iter().map(|r| r * r).sum::<f64>() / (n * out) as f64;
    let mut w_rows = Vec::with_capacity(fdim * out);
    for r in 0..fdim {
        for c in 0..out {
            w_rows.push(w[(r, c)]);
        }
    }
    Ok(BgEstimator {
        k: partition.k(),
        partition,
        lambda: ridge_lambda,
        feature_layout: layout,
        w: w_rows,
        bias: bias.iter().copied().collect(),
        training_mse: Some(training_mse),
    })
}

pub fn estimate(est: &BgEstimator, bg: &LinearImage) -> Result<IlluminationDescriptor> {
    if !est.is_fitted() {
        return Err(Error::Unfitted);
    }
    let f = extract_features(bg, est.feature_layout.grid_w, est.feature_layout.grid_h)?;
    est.predict_features(&f)
}

/// Mean absolute descriptor error over `3K` coefficients plus mean absolute
/// error between `gt_shading` and the shading composed from `pred`, over all
/// pixels and channels.
pub fn eval_bie_loss(
    pred: &IlluminationDescriptor,
    gt: &IlluminationDescriptor,
    bases: &ShadingBases,
    gt_shading: &Shading,
) -> Result<f64> {
    pred.validate()?;
    gt.validate()?;
    if pred.partition != gt.partition {
        return Err(Error::PartitionMismatch(format!(
            "{} vs {}",
            pred.partition.id(),
            gt.partition.id()
        )));
    }
    gt_shading.check_same_dims((bases.width, bases.height), "ground-truth shading")?;
    let desc = pred
        .flatten()
        .iter()
        .zip(gt.flatten())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / (3 * pred.k) as f64;
    let s = compose_shading(bases, pred)?;
    let shade = s
        .data
        .iter()
        .zip(&gt_shading.data)
        .map(|(a, b)| (0..3).map(|c| (a[c] - b[c]).abs()).sum::<f64>())
        .sum::<f64>()
        / (3 * s.len()) as f64;
    Ok(desc + shade)
}
