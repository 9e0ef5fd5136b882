//! Procedural outdoor skies: a sun disc over a zenith-to-horizon gradient,
//! an optional circumsolar halo and a uniform ground below the horizon.

use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::EnvMap;
use crate::error::{Error, Result};
use crate::raster::{Rgb, RgbImage};

/// Subsamples per pixel side when integrating the sky over a pixel.
const SUPERSAMPLE: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkyCondition {
    Sunny,
    SunriseSunset,
    Cloudy,
    Night,
}

impl SkyCondition {
    pub const ALL: [SkyCondition; 4] = [
        SkyCondition::Sunny,
        SkyCondition::SunriseSunset,
        SkyCondition::Cloudy,
        SkyCondition::Night,
    ];

    pub fn tag(&self) -> &'static str {
        match self {
            SkyCondition::Sunny => "sunny",
            SkyCondition::SunriseSunset => "sunrise_sunset",
            SkyCondition::Cloudy => "cloudy",
            SkyCondition::Night => "night",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkyParams {
    pub sun_dir: [f64; 3],
    pub sun_radiance: Rgb,
    /// Angular radius of the sun disc, radians.
    pub sun_angular_radius: f64,
    pub zenith: Rgb,
    pub horizon: Rgb,
    pub ground: Rgb,
    /// Peak radiance of the circumsolar halo (upper hemisphere only).
    pub halo: Rgb,
    /// Angular e-folding width of the halo, radians.
    pub halo_width: f64,
}

impl SkyParams {
    pub fn validate(&self) -> Result<()> {
        let d = Vector3::from(self.sun_dir);
        if (d.norm() - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidInput(
                "sun direction must be a unit vector".into(),
            ));
        }
        let rgb = [
            self.sun_radiance,
            self.zenith,
            self.horizon,
            self.ground,
            self.halo,
        ];
        if rgb.iter().flatten().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidInput(
                "sky radiances must be finite and nonnegative".into(),
            ));
        }
        if !(self.sun_angular_radius >= 0.0 && self.halo_width > 0.0) {
            return Err(Error::InvalidInput(
                "sun radius must be >= 0, halo width > 0".into(),
            ));
        }
        Ok(())
    }

    /// Radiance seen in unit direction `d`.
    pub fn radiance(&self, d: &Vector3<f64>) -> Rgb {
        let sun = Vector3::from(self.sun_dir);
        let cos_gamma = d.dot(&sun).clamp(-1.0, 1.0);
        let mut out = if d.y >= 0.0 {
            let gamma = cos_gamma.acos();
            let glow = (-gamma / self.halo_width).exp();
            [0, 1, 2].map(|c| {
                self.horizon[c] + (self.zenith[c] - self.horizon[c]) * d.y + self.halo[c] * glow
            })
        } else {
            self.ground
        };
        if cos_gamma >= self.sun_angular_radius.cos() {
            for c in 0..3 {
                out[c] += self.sun_radiance[c];
            }
        }
        out
    }

    /// Draws a sky for the given condition. The sun azimuth is uniform.
    pub fn random<R: Rng>(condition: SkyCondition, rng: &mut R) -> Self {
        let azimuth = rng.random_range(0.0..2.0 * PI);
        let tint = |rng: &mut R, base: Rgb, jitter: f64| -> Rgb {
            base.map(|b| b * rng.random_range(1.0 - jitter..1.0 + jitter))
        };
        let (elev_deg, sun_irr, sun_col, zenith, horizon, halo, radius) = match condition {
            SkyCondition::Sunny => (
                rng.random_range(20.0..70.0),
                rng.random_range(0.5..1.0),
                tint(rng, [1.0, 0.95, 0.88], 0.05),
                tint(rng, [0.05, 0.08, 0.14], 0.3),
                tint(rng, [0.10, 0.12, 0.15], 0.3),
                tint(rng, [0.15, 0.14, 0.12], 0.3),
                0.15,
            ),
            SkyCondition::SunriseSunset => (
                rng.random_range(5.0..18.0),
                rng.random_range(0.35..0.8),
                tint(rng, [1.0, 0.62, 0.35], 0.1),
                tint(rng, [0.05, 0.05, 0.09], 0.3),
                tint(rng, [0.16, 0.10, 0.07], 0.3),
                tint(rng, [0.20, 0.11, 0.05], 0.3),
                0.15,
            ),
            SkyCondition::Cloudy => (
                rng.random_range(30.0..70.0),
                0.0,
                [0.0; 3],
                tint(rng, [0.22, 0.23, 0.25], 0.35),
                tint(rng, [0.16, 0.16, 0.17], 0.35),
                tint(rng, [0.06, 0.06, 0.06], 0.5),
                0.15,
            ),
            SkyCondition::Night => (
                rng.random_range(25.0..60.0),
                rng.random_range(0.02..0.06),
                tint(rng, [0.8, 0.85, 1.0], 0.05),
                tint(rng, [0.008, 0.01, 0.02], 0.3),
                tint(rng, [0.02, 0.02, 0.025], 0.3),
                tint(rng, [0.005, 0.005, 0.006], 0.3),
                0.12,
            ),
        };
        let elev = (elev_deg as f64).to_radians();
        let sun_dir = [
            elev.cos() * azimuth.cos(),
            elev.sin(),
            elev.cos() * azimuth.sin(),
        ];
        let solid = 2.0 * PI * (1.0 - (radius as f64).cos());
        let sun_radiance = sun_col.map(|c| c * sun_irr / solid);
        let ground_level = rng.random_range(0.15..0.35);
        let ground = [0, 1, 2]
            .map(|c| ground_level * (zenith[c] + horizon[c] + 0.3 * sun_radiance[c] * solid));
        SkyParams {
            sun_dir,
            sun_radiance,
            sun_angular_radius: radius,
            zenith,
            horizon,
            ground,
            halo,
            halo_width: 0.35,
        }
    }
}

/// Renders the sky into a `width × height` equirectangular map. Each pixel
/// holds the solid-angle-weighted mean of the sky over its cell, estimated
/// on a fixed subsample grid uniform in `(cos θ, φ)`.
pub fn procedural_sky(params: &SkyParams, width: usize, height: usize) -> Result<EnvMap> {
    params.validate()?;
    if width == 0 || height == 0 {
        return Err(Error::InvalidInput("empty sky size".into()));
    }
    let n = SUPERSAMPLE;
    let radiance = RgbImage::from_fn(width, height, |u, v| {
        let c0 = (PI * v as f64 / height as f64).cos();
        let c1 = (PI * (v + 1) as f64 / height as f64).cos();
        let mut acc = [0.0; 3];
        for i in 0..n {
            let c = c0 + (c1 - c0) * (i as f64 + 0.5) / n as f64;
            let s = (1.0 - c * c).max(0.0).sqrt();
            for j in 0..n {
                let phi = 2.0 * PI * (u as f64 + (j as f64 + 0.5) / n as f64) / width as f64;
                let d = Vector3::new(s * phi.cos(), c, s * phi.sin());
                let l = params.radiance(&d);
                for ch in 0..3 {
                    acc[ch] += l[ch];
                }
            }
        }
        acc.map(|a| a / (n * n) as f64)
    });
    EnvMap::new(radiance)
}

/// Closed-form total energy `∫ L dω` per channel, ignoring the halo term:
/// gradient over the upper hemisphere, uniform ground and the full sun disc.
pub fn sky_energy_closed_form(params: &SkyParams) -> Rgb {
    let disc = 2.0 * PI * (1.0 - params.sun_angular_radius.cos());
    [0, 1, 2].map(|c| {
        2.0 * PI * params.horizon[c]
            + PI * (params.zenith[c] - params.horizon[c])
            + 2.0 * PI * params.ground[c]
            + disc * params.sun_radiance[c]
    })
}
