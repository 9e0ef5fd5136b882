//! Dense row-major rasters shared by every stage of the pipeline.
//!
//! All radiometric values are linear. sRGB conversion happens only at the
//! display/file boundary through [`srgb_encode`] and [`srgb_decode`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Rgb = [f64; 3];

/// Three-channel linear image, stored as one `[r, g, b]` triple per pixel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<Rgb>,
}

/// Linear radiance image (`I`, `Ĩ`, `Î`).
pub type LinearImage = RgbImage;
/// Shading image `S`; nonnegative and linear in the illumination.
pub type Shading = RgbImage;
/// Diffuse reflectance in `[0, 1]` per channel.
pub type Albedo = RgbImage;

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, [0.0; 3])
    }

    pub fn filled(width: usize, height: usize, value: Rgb) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> Rgb) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<Rgb>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::dims("image data", width * height, data.len()));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Rgb {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: Rgb) {
        self.data[y * self.width + x] = v;
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn check_same_dims(&self, other: (usize, usize), context: &str) -> Result<()> {
        if self.dims() != other {
            return Err(Error::dims(
                context,
                format!("{}x{}", other.0, other.1),
                format!("{}x{}", self.width, self.height),
            ));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(Rgb) -> Rgb) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&p| f(p)).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|p| [p[0] * s, p[1] * s, p[2] * s])
    }

    /// Single channel as a flat vector.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.data.iter().map(|p| p[c]).collect()
    }

    pub fn is_finite_nonnegative(&self) -> bool {
        self.data
            .iter()
            .all(|p| p.iter().all(|v| v.is_finite() && *v >= 0.0))
    }
}

/// Foreground mask. Values are in `[0, 1]`; a pixel counts as foreground
/// when its value is at least one half.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(if f(x, y) { 1.0 } else { 0.0 });
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn is_fg(&self, i: usize) -> bool {
        self.data[i] >= 0.5
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn count(&self) -> usize {
        (0..self.data.len()).filter(|&i| self.is_fg(i)).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    /// Snap soft values to `{0, 1}` at the one-half threshold.
    pub fn binarized(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .map(|&m| if m >= 0.5 { 1.0 } else { 0.0 })
                .collect(),
        }
    }

    /// Tight bounding box `(x0, y0, x1, y1)` of foreground pixels, exclusive
    /// upper bounds.
    pub fn bbox(&self) -> Option<(usize, usize, usize, usize)> {
        let mut bb: Option<(usize, usize, usize, usize)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.is_fg(y * self.width + x) {
                    bb = Some(match bb {
                        None => (x, y, x + 1, y + 1),
                        Some((a, b, c, d)) => (a.min(x), b.min(y), c.max(x + 1), d.max(y + 1)),
                    });
                }
            }
        }
        bb
    }
}

#[inline]
pub fn srgb_encode(linear: f64) -> f64 {
    let v = linear.clamp(0.0, 1.0);
    if v <= 0.003_130_8 {
        12.92 * v
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    }
}

#[inline]
pub fn srgb_decode(encoded: f64) -> f64 {
    let v = encoded.clamp(0.0, 1.0);
    if v <= 0.040_45 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

/// Clamp to `[0, 1]` and sRGB-encode: the display space metrics work in.
pub fn to_display(img: &RgbImage) -> RgbImage {
    img.map(|p| [srgb_encode(p[0]), srgb_encode(p[1]), srgb_encode(p[2])])
}

pub fn from_display(img: &RgbImage) -> RgbImage {
    img.map(|p| [srgb_decode(p[0]), srgb_decode(p[1]), srgb_decode(p[2])])
}

/// Bilinear sample of a scalar field where only some samples are valid.
/// Weights of invalid taps are dropped and the rest renormalized. Returns
/// the interpolated value and the valid weight mass, or `None` when no tap
/// is valid.
#[inline]
pub fn bilinear_masked(
    width: usize,
    height: usize,
    x: f64,
    y: f64,
    mut fetch: impl FnMut(usize) -> Option<f64>,
) -> Option<(f64, f64)> {
    if !(x > -1.0 && y > -1.0 && x < width as f64 && y < height as f64) {
        return None;
    }
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let (x0, y0) = (x0 as i64, y0 as i64);
    let mut acc = 0.0;
    let mut wsum = 0.0;
    for (dx, wx) in [(0i64, 1.0 - fx), (1, fx)] {
        for (dy, wy) in [(0i64, 1.0 - fy), (1, fy)] {
            let w = wx * wy;
            if w <= 0.0 {
                continue;
            }
            let (xi, yi) = (x0 + dx, y0 + dy);
            if xi < 0 || yi < 0 || xi >= width as i64 || yi >= height as i64 {
                continue;
            }
            if let Some(v) = fetch(yi as usize * width + xi as usize) {
                acc += w * v;
                wsum += w;
            }
        }
    }
    if wsum > 0.0 {
        Some((acc / wsum, wsum))
    } else {
        None
    }
}
