//! Camera-space geometry: pinhole unprojection and plane-fit normals.
//!
//! Camera space is right-handed with `+x` right, `+y` down and `+z` forward,
//! so a surface facing the camera has a normal with negative `z`.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_WINDOW_RADIUS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    /// Square pixels, principal point at the image center, horizontal field
    /// of view in degrees.
    pub fn from_fov(width: usize, height: usize, hfov_deg: f64) -> Result<Self> {
        if !(hfov_deg > 0.0 && hfov_deg < 180.0) {
            return Err(Error::InvalidInput(format!(
                "field of view {hfov_deg} outside (0, 180)"
            )));
        }
        let f = 0.5 * width as f64 / (0.5 * hfov_deg.to_radians()).tan();
        Self::new(
            f,
            f,
            0.5 * width as f64 - 0.5,
            0.5 * height as f64 - 0.5,
            width,
            height,
        )
    }

    /// Focal lengths must be positive. The principal point only has to be
    /// finite: cropping and rescaling a rendered object moves it, possibly
    /// outside the new frame.
    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(Error::InvalidInput("principal point not finite".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidInput("empty image size".into()));
        }
        Ok(())
    }

    /// Pixel-center ray with unit `z`.
    #[inline]
    pub fn ray(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    #[inline]
    pub fn project(&self, p: &Vector3<f64>) -> (f64, f64) {
        (self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
}

impl DepthMap {
    /// Builds a depth map; non-finite or non-positive values become invalid.
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::dims("depth values", width * height, values.len()));
        }
        let valid = values.iter().map(|z| z.is_finite() && *z > 0.0).collect();
        Ok(Self {
            width,
            height,
            values,
            valid,
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> Option<f64>,
    ) -> Self {
        let mut values = Vec::with_capacity(width * height);
        let mut valid = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                match f(x, y) {
                    Some(z) if z.is_finite() && z > 0.0 => {
                        values.push(z);
                        valid.push(true);
                    }
                    _ => {
                        values.push(0.0);
                        valid.push(false);
                    }
                }
            }
        }
        Self {
            width,
            height,
            values,
            valid,
        }
    }

    #[inline]
    pub fn at(&self, i: usize) -> Option<f64> {
        self.valid[i].then_some(self.values[i])
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    pub fn check_intrinsics(&self, k: &Intrinsics) -> Result<()> {
        if self.width != k.width || self.height != k.height {
            return Err(Error::dims(
                "depth map vs intrinsics",
                format!("{}x{}", k.width, k.height),
                format!("{}x{}", self.width, self.height),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointMap {
    pub width: usize,
    pub height: usize,
    pub points: Vec<Vector3<f64>>,
    pub valid: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalMap {
    pub width: usize,
    pub height: usize,
    pub normals: Vec<Vector3<f64>>,
    pub valid: Vec<bool>,
}

impl NormalMap {
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }
}

pub fn unproject(depth: &DepthMap, k: &Intrinsics) -> Result<PointMap> {
    depth.check_intrinsics(k)?;
    let mut points = Vec::with_capacity(depth.values.len());
    for v in 0..depth.height {
        for u in 0..depth.width {
            let i = v * depth.width + u;
            let z = depth.values[i];
            points.push(if depth.valid[i] {
                k.ray(u as f64, v as f64) * z
            } else {
                Vector3::zeros()
            });
        }
    }
    Ok(PointMap {
        width: depth.width,
        height: depth.height,
        points,
        valid: depth.valid.clone(),
    })
}

/// Total-least-squares plane through a point set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneFit {
    pub normal: Vector3<f64>,
    pub centroid: Vector3<f64>,
    /// Root-mean-square orthogonal distance of the points to the plane.
    pub rms_residual: f64,
}

/// Fits a plane via the smallest-eigenvalue eigenvector of the point
/// covariance. `None` for fewer than three points or a degenerate (collinear)
/// configuration.
pub fn fit_plane(points: &[Vector3<f64>]) -> Option<PlaneFit> {
    if points.len() < 3 {
        return None;
    }
    let n = points.len() as f64;
    let centroid = points.iter().fold(Vector3::zeros(), |a, p| a + p) / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    cov /= n;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (smallest, middle, largest) = (
        eig.eigenvalues[order[0]],
        eig.eigenvalues[order[1]],
        eig.eigenvalues[order[2]],
    );
    if largest <= 0.0 || middle <= 1e-12 * largest {
        return None;
    }
    let normal = eig.eigenvectors.column(order[0]).into_owned().normalize();
    Some(PlaneFit {
        normal,
        centroid,
        rms_residual: smallest.max(0.0).sqrt(),
    })
}

/// Per-pixel normals from a plane fit over the `(2r+1)²` window of valid
/// unprojected neighbors, oriented toward the camera. Pixels with fewer than
/// three valid neighbors (or a degenerate fit) come out invalid.
pub fn normals_from_depth(
    depth: &DepthMap,
    k: &Intrinsics,
    window_radius: usize,
) -> Result<NormalMap> {
    if window_radius == 0 {
        return Err(Error::InvalidInput(
            "window_radius must be at least 1".into(),
        ));
    }
    if depth.valid_count() == 0 {
        return Err(Error::NoValidGeometry(
            "depth map has no valid pixels".into(),
        ));
    }
    let pts = unproject(depth, k)?;
    let (w, h) = (depth.width, depth.height);
    let r = window_radius as i64;

    let rows: Vec<Vec<Option<Vector3<f64>>>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut window = Vec::with_capacity((2 * window_radius + 1).pow(2));
            (0..w)
                .map(|x| {
                    let i = y * w + x;
                    if !pts.valid[i] {
                        return None;
                    }
                    window.clear();
                    for dy in -r..=r {
                        for dx in -r..=r {
                            let (xx, yy) = (x as i64 + dx, y as i64 + dy);
                            if xx < 0 || yy < 0 || xx >= w as i64 || yy >= h as i64 {
                                continue;
                            }
                            let j = yy as usize * w + xx as usize;
                            if pts.valid[j] {
                                window.push(pts.points[j]);
                            }
                        }
                    }
                    let fit = fit_plane(&window)?;
                    let p = pts.points[i];
                    // face the camera: n · (−p) ≥ 0
                    Some(if fit.normal.dot(&p) > 0.0 {
                        -fit.normal
                    } else {
                        fit.normal
                    })
                })
                .collect()
        })
        .collect();

    let mut normals = Vec::with_capacity(w * h);
    let mut valid = Vec::with_capacity(w * h);
    for n in rows.into_iter().flatten() {
        valid.push(n.is_some());
        normals.push(n.unwrap_or_else(Vector3::zeros));
    }
    Ok(NormalMap {
        width: w,
        height: h,
        normals,
        valid,
    })
}
