//! Partitions of the sphere of directions into `K` basis cells.

use std::f64::consts::PI;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{dir_from_pixel, pixel_from_dir, pixel_solid_angle};
use crate::error::{Error, Result};

const GOLDEN: f64 = 0.618_033_988_749_894_9;

/// Cell layout. Directions use the environment-map frame: `+y` is the
/// zenith, azimuth `φ` is measured from `+x` toward `+z`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BasisPartition {
    /// `rings` bands of equal width in `cos θ` (top band first), each split
    /// into `sectors` equal azimuth ranges. Cell `k = ring * sectors + sector`.
    EqualArea { rings: usize, sectors: usize },
    /// One cell per pixel of an equirectangular map; `k = v * width + u`.
    EnvPixels { env_width: usize, env_height: usize },
}

/// Equal-area partition with the ring/sector split used everywhere in the
/// toolkit: `rings` is the largest divisor of `K` not above `√K`.
///
/// K=4 → 2×2, 8 → 2 rings × 4 sectors, 16 → 4×4, 32 → 4 rings × 8 sectors,
/// 64 → 8×8.
pub fn make_partition(k: usize) -> Result<BasisPartition> {
    if k < 1 {
        return Err(Error::InvalidInput("partition needs K >= 1".into()));
    }
    let rings = (1..=k)
        .take_while(|b| b * b <= k)
        .filter(|b| k % b == 0)
        .last()
        .unwrap_or(1);
    Ok(BasisPartition::EqualArea {
        rings,
        sectors: k / rings,
    })
}

impl BasisPartition {
    pub fn env_pixels(env_width: usize, env_height: usize) -> Self {
        BasisPartition::EnvPixels {
            env_width,
            env_height,
        }
    }

    pub fn k(&self) -> usize {
        match *self {
            BasisPartition::EqualArea { rings, sectors } => rings * sectors,
            BasisPartition::EnvPixels {
                env_width,
                env_height,
            } => env_width * env_height,
        }
    }

    /// Stable textual identifier used in file metadata.
    pub fn id(&self) -> String {
        match *self {
            BasisPartition::EqualArea { rings, sectors } => format!("equal-area:{rings}x{sectors}"),
            BasisPartition::EnvPixels {
                env_width,
                env_height,
            } => format!("env-pixels:{env_width}x{env_height}"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            BasisPartition::EqualArea { rings, sectors } => rings > 0 && sectors > 0,
            BasisPartition::EnvPixels {
                env_width,
                env_height,
            } => env_width > 0 && env_height > 0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "degenerate partition {}",
                self.id()
            )))
        }
    }

    pub fn cell_of_direction(&self, dir: &Vector3<f64>) -> usize {
        match *self {
            BasisPartition::EqualArea { rings, sectors } => {
                let d = dir.normalize();
                let y = d.y.clamp(-1.0, 1.0);
                let ring = (((1.0 - y) * 0.5 * rings as f64).floor() as usize).min(rings - 1);
                let phi = azimuth(&d);
                let sector =
                    ((phi / (2.0 * PI) * sectors as f64).floor() as usize).min(sectors - 1);
                ring * sectors + sector
            }
            BasisPartition::EnvPixels {
                env_width,
                env_height,
            } => {
                let (u, v) = pixel_from_dir(dir, env_width, env_height);
                v * env_width + u
            }
        }
    }

    pub fn cell_solid_angle(&self, k: usize) -> f64 {
        match *self {
            BasisPartition::EqualArea { rings, sectors } => 4.0 * PI / (rings * sectors) as f64,
            BasisPartition::EnvPixels {
                env_width,
                env_height,
            } => pixel_solid_angle(k / env_width, env_width, env_height),
        }
    }

    /// `(cos θ_top, cos θ_bottom, φ_start, φ_end)` bounds of cell `k`.
    fn bounds(&self, k: usize) -> (f64, f64, f64, f64) {
        match *self {
            BasisPartition::EqualArea { rings, sectors } => {
                let (ring, sector) = (k / sectors, k % sectors);
                let c_top = 1.0 - 2.0 * ring as f64 / rings as f64;
                let c_bot = 1.0 - 2.0 * (ring + 1) as f64 / rings as f64;
                let p0 = 2.0 * PI * sector as f64 / sectors as f64;
                let p1 = 2.0 * PI * (sector + 1) as f64 / sectors as f64;
                (c_top, c_bot, p0, p1)
            }
            BasisPartition::EnvPixels {
                env_width,
                env_height,
            } => {
                let (u, v) = (k % env_width, k / env_width);
                let c_top = (PI * v as f64 / env_height as f64).cos();
                let c_bot = (PI * (v + 1) as f64 / env_height as f64).cos();
                let p0 = 2.0 * PI * u as f64 / env_width as f64;
                let p1 = 2.0 * PI * (u + 1) as f64 / env_width as f64;
                (c_top, c_bot, p0, p1)
            }
        }
    }

    /// Unit mean direction of the cell (`+y` when the mean vanishes, e.g. K=1).
    pub fn cell_centroid(&self, k: usize) -> Vector3<f64> {
        let (c0, c1, p0, p1) = self.bounds(k);
        // mean of sin θ over cos θ ∈ [c1, c0]: ∫√(1−c²)dc / (c0 − c1)
        let prim = |c: f64| 0.5 * (c * (1.0 - c * c).max(0.0).sqrt() + c.clamp(-1.0, 1.0).asin());
        let mean_sin = (prim(c0) - prim(c1)) / (c0 - c1);
        let mean_cos_phi = (p1.sin() - p0.sin()) / (p1 - p0);
        let mean_sin_phi = (p0.cos() - p1.cos()) / (p1 - p0);
        let m = Vector3::new(
            mean_sin * mean_cos_phi,
            0.5 * (c0 + c1),
            mean_sin * mean_sin_phi,
        );
        if m.norm() < 1e-12 {
            Vector3::y()
        } else {
            m.normalize()
        }
    }

    /// Deterministic stratified quadrature directions for cell `k`. Each
    /// sample carries the same weight `|A_k| / samples`.
    ///
    /// A single sample sits at the cell center (for env-pixel cells exactly
    /// the pixel-center direction). More samples use a rank-1 lattice in
    /// `(cos θ, φ)`: stratified in `cos θ`, golden-ratio spaced in `φ`, with
    /// a per-cell phase offset.
    pub fn sample_directions(&self, k: usize, samples: usize) -> Vec<Vector3<f64>> {
        if samples <= 1 {
            return vec![self.cell_center(k)];
        }
        let (c0, c1, p0, p1) = self.bounds(k);
        let offset = cell_phase(k);
        (0..samples)
            .map(|j| {
                let s = (j as f64 + 0.5) / samples as f64;
                let t = (offset + j as f64 * GOLDEN).fract();
                let c = c0 + (c1 - c0) * s;
                let phi = p0 + (p1 - p0) * t;
                direction(c, phi)
            })
            .collect()
    }

    fn cell_center(&self, k: usize) -> Vector3<f64> {
        match *self {
            BasisPartition::EqualArea { .. } => {
                let (c0, c1, p0, p1) = self.bounds(k);
                direction(0.5 * (c0 + c1), 0.5 * (p0 + p1))
            }
            BasisPartition::EnvPixels {
                env_width,
                env_height,
            } => dir_from_pixel(k % env_width, k / env_width, env_width, env_height),
        }
    }

    /// Map from every cell of `fine` to the cell of `self` containing it, if
    /// `fine` nests inside `self`.
    pub fn refinement_map(&self, fine: &BasisPartition) -> Option<Vec<usize>> {
        match (*self, *fine) {
            (
                BasisPartition::EqualArea { rings, sectors },
                BasisPartition::EqualArea {
                    rings: fr,
                    sectors: fs,
                },
            ) if fr % rings == 0 && fs % sectors == 0 => Some(
                (0..fr * fs)
                    .map(|k| {
                        let (r, s) = (k / fs, k % fs);
                        (r / (fr / rings)) * sectors + s / (fs / sectors)
                    })
                    .collect(),
            ),
            _ => None,
        }
    }
}

/// Azimuth in `[0, 2π)` measured from `+x` toward `+z`.
#[inline]
pub fn azimuth(d: &Vector3<f64>) -> f64 {
    let phi = d.z.atan2(d.x);
    if phi < 0.0 {
        (phi + 2.0 * PI).min(2.0 * PI - 1e-15)
    } else {
        phi
    }
}

#[inline]
fn direction(cos_theta: f64, phi: f64) -> Vector3<f64> {
    let s = (1.0 - cos_theta * cos_theta).max(0.0).sqrt();
    Vector3::new(s * phi.cos(), cos_theta, s * phi.sin())
}

fn cell_phase(k: usize) -> f64 {
    // splitmix64 of the cell index, mapped to [0, 1)
    let mut z = (k as u64).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64
}
