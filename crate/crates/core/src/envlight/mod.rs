//! Equirectangular environment lighting.
//!
//! Convention: row `v = 0` is the zenith (`+y`), column `u = 0` is azimuth
//! zero (`+x`) and azimuth grows toward `+z`. Pixel `(u, v)` has center
//! direction `θ = π(v + ½)/H`, `φ = 2π(u + ½)/W`.

mod partition;
mod sky;

use std::f64::consts::PI;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{Rgb, RgbImage};

pub use partition::{azimuth, make_partition, BasisPartition};
pub use sky::{procedural_sky, sky_energy_closed_form, SkyCondition, SkyParams};

/// HDR radiance map in the equirectangular convention above.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvMap {
    pub radiance: RgbImage,
}

impl EnvMap {
    pub fn new(radiance: RgbImage) -> Result<Self> {
        if radiance.is_empty() {
            return Err(Error::InvalidInput("empty environment map".into()));
        }
        if !radiance.is_finite_nonnegative() {
            return Err(Error::InvalidInput(
                "environment radiance must be finite and nonnegative".into(),
            ));
        }
        Ok(Self { radiance })
    }

    pub fn uniform(width: usize, height: usize, value: Rgb) -> Self {
        Self {
            radiance: RgbImage::filled(width, height, value),
        }
    }

    pub fn width(&self) -> usize {
        self.radiance.width
    }

    pub fn height(&self) -> usize {
        self.radiance.height
    }

    /// Per-channel `Σ_p L(p) ω(p)` accumulated in pixel order.
    pub fn total_energy(&self) -> Rgb {
        let (w, h) = (self.width(), self.height());
        let mut e = [0.0; 3];
        for v in 0..h {
            let omega = pixel_solid_angle(v, w, h);
            for u in 0..w {
                let l = self.radiance.get(u, v);
                for c in 0..3 {
                    e[c] += l[c] * omega;
                }
            }
        }
        e
    }

    /// Bilinear lookup in the direction `dir`, wrapping in azimuth and
    /// clamping at the poles.
    pub fn sample(&self, dir: &Vector3<f64>) -> Rgb {
        let (w, h) = (self.width(), self.height());
        let d = dir.normalize();
        let theta = d.y.clamp(-1.0, 1.0).acos();
        let uc = azimuth(&d) / (2.0 * PI) * w as f64 - 0.5;
        let vc = (theta / PI * h as f64 - 0.5).clamp(0.0, (h - 1) as f64);
        self.sample_continuous(uc, vc)
    }

    /// Bilinear lookup at continuous pixel coordinates (pixel centers at
    /// integers), wrapping `u`.
    pub fn sample_continuous(&self, uc: f64, vc: f64) -> Rgb {
        let (w, h) = (self.width() as i64, self.height() as i64);
        let u0 = uc.floor();
        let v0 = vc.floor();
        let (fu, fv) = (uc - u0, vc - v0);
        let (u0, v0) = (u0 as i64, v0 as i64);
        let mut out = [0.0; 3];
        for (dv, wv) in [(0, 1.0 - fv), (1, fv)] {
            if wv == 0.0 {
                continue;
            }
            let vv = (v0 + dv).clamp(0, h - 1) as usize;
            for (du, wu) in [(0, 1.0 - fu), (1, fu)] {
                if wu == 0.0 {
                    continue;
                }
                let uu = (u0 + du).rem_euclid(w) as usize;
                let l = self.radiance.get(uu, vv);
                for c in 0..3 {
                    out[c] += wu * wv * l[c];
                }
            }
        }
        out
    }
}

#[inline]
pub fn dir_from_pixel(u: usize, v: usize, width: usize, height: usize) -> Vector3<f64> {
    let theta = PI * (v as f64 + 0.5) / height as f64;
    let phi = 2.0 * PI * (u as f64 + 0.5) / width as f64;
    let s = theta.sin();
    Vector3::new(s * phi.cos(), theta.cos(), s * phi.sin())
}

/// Inverse of [`dir_from_pixel`]: the pixel whose cell contains `dir`.
#[inline]
pub fn pixel_from_dir(dir: &Vector3<f64>, width: usize, height: usize) -> (usize, usize) {
    let d = dir.normalize();
    let theta = d.y.clamp(-1.0, 1.0).acos();
    let v = ((theta / PI * height as f64).floor() as usize).min(height - 1);
    let u = ((azimuth(&d) / (2.0 * PI) * width as f64).floor() as usize).min(width - 1);
    (u, v)
}

/// Exact solid angle of any pixel in row `v`.
#[inline]
pub fn pixel_solid_angle(v: usize, width: usize, height: usize) -> f64 {
    let h = height as f64;
    (2.0 * PI / width as f64) * ((PI * v as f64 / h).cos() - (PI * (v as f64 + 1.0) / h).cos())
}

/// Rotates the map about the zenith axis: the result seen in direction of
/// azimuth `φ` equals the input at `φ + yaw`. Whole-column shifts are exact;
/// fractional shifts interpolate linearly with wrap-around.
pub fn rotate_envmap(env: &EnvMap, yaw_degrees: f64) -> EnvMap {
    let w = env.width();
    let h = env.height();
    let shift = (yaw_degrees / 360.0 * w as f64).rem_euclid(w as f64);
    let whole = shift.round();
    let radiance = if (shift - whole).abs() < 1e-9 {
        let s = whole as usize % w;
        RgbImage::from_fn(w, h, |u, v| env.radiance.get((u + s) % w, v))
    } else {
        let s0 = shift.floor() as usize;
        let f = shift - shift.floor();
        RgbImage::from_fn(w, h, |u, v| {
            let a = env.radiance.get((u + s0) % w, v);
            let b = env.radiance.get((u + s0 + 1) % w, v);
            [
                (1.0 - f) * a[0] + f * b[0],
                (1.0 - f) * a[1] + f * b[1],
                (1.0 - f) * a[2] + f * b[2],
            ]
        })
    };
    EnvMap { radiance }
}

/// Direction-aware illumination descriptor `l ∈ R^{3×K}`: per-channel
/// radiant energy integrated over each partition cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IlluminationDescriptor {
    #[serde(rename = "K")]
    pub k: usize,
    pub partition: BasisPartition,
    /// `l[c][k]`.
    pub l: [Vec<f64>; 3],
}

impl IlluminationDescriptor {
    pub fn zeros(partition: BasisPartition) -> Self {
        let k = partition.k();
        Self {
            k,
            partition,
            l: [vec![0.0; k], vec![0.0; k], vec![0.0; k]],
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.partition.validate()?;
        if self.k != self.partition.k() || self.l.iter().any(|c| c.len() != self.k) {
            return Err(Error::dims(
                "descriptor coefficients",
                format!("3x{}", self.partition.k()),
                format!(
                    "K={} lens {:?}",
                    self.k,
                    self.l.iter().map(Vec::len).collect::<Vec<_>>()
                ),
            ));
        }
        if self.l.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "descriptor has non-finite coefficients".into(),
            ));
        }
        Ok(())
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.l.iter_mut().flatten().for_each(|v| *v *= s);
        out
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.partition != other.partition {
            return Err(Error::PartitionMismatch(format!(
                "{} vs {}",
                self.partition.id(),
                other.partition.id()
            )));
        }
        let mut out = self.clone();
        for c in 0..3 {
            for (a, b) in out.l[c].iter_mut().zip(&other.l[c]) {
                *a += b;
            }
        }
        Ok(out)
    }

    /// Channel-major flattening `[l_r..., l_g..., l_b...]`.
    pub fn flatten(&self) -> Vec<f64> {
        self.l.iter().flatten().copied().collect()
    }

    pub fn from_flat(partition: BasisPartition, flat: &[f64]) -> Result<Self> {
        let k = partition.k();
        if flat.len() != 3 * k {
            return Err(Error::dims("flat descriptor", 3 * k, flat.len()));
        }
        Ok(Self {
            k,
            partition,
            l: [
                flat[..k].to_vec(),
                flat[k..2 * k].to_vec(),
                flat[2 * k..].to_vec(),
            ],
        })
    }

    pub fn channel_sums(&self) -> Rgb {
        [
            self.l[0].iter().sum(),
            self.l[1].iter().sum(),
            self.l[2].iter().sum(),
        ]
    }
}

pub fn descriptor_from_envmap(env: &EnvMap, part: &BasisPartition) -> IlluminationDescriptor {
    let (w, h) = (env.width(), env.height());
    let mut out = IlluminationDescriptor::zeros(*part);
    for v in 0..h {
        let omega = pixel_solid_angle(v, w, h);
        for u in 0..w {
            let k = part.cell_of_direction(&dir_from_pixel(u, v, w, h));
            let l = env.radiance.get(u, v);
            for c in 0..3 {
                out.l[c][k] += l[c] * omega;
            }
        }
    }
    out
}
