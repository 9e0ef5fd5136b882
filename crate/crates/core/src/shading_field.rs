//! Shadow-aware Lambertian shading bases.
//!
//! For a partition of the sphere into cells `A_k`, basis `k` at pixel `p` is
//! the cell average of cosine-weighted visibility,
//!
//! ```text
//! SB_k(p) = 1/|A_k| · Σ_j max(0, n(p)·ω_kj) · V(p, ω_kj) · Δω_kj
//! ```
//!
//! so with a descriptor holding per-cell radiant energy `l_ck`, the shading
//! `S_c(p) = Σ_k l_ck · SB_k(p)` is a quadrature of the Lambertian
//! reflection integral under piecewise-constant radiance.
//!
//! Visibility is decided against the depth map seen as a heightfield (every
//! point behind the visible surface is solid) plus an optional ground plane.

use std::hash::Hasher;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envlight::{
    dir_from_pixel, pixel_solid_angle, BasisPartition, EnvMap, IlluminationDescriptor,
};
use crate::error::{Error, Result};
use crate::geometry::{normals_from_depth, unproject, DepthMap, Intrinsics, NormalMap, PointMap};
use crate::raster::{RgbImage, Shading};

pub const DEFAULT_SAMPLES_PER_CELL: usize = 8;

/// Plane `normal · x + offset = 0` in camera space; `normal` points into the
/// free half-space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub normal: [f64; 3],
    pub offset: f64,
}

impl Plane {
    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        Vector3::from(self.normal).dot(p) + self.offset
    }
}

/// Shadow and quadrature settings. `None` selects the resolution-adaptive
/// default computed from the geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShadowConfig {
    pub samples_per_cell: usize,
    /// Marching step in meters; default half the median adjacent-point spacing.
    pub ray_step: Option<f64>,
    /// Default: diagonal of the bounding box of the valid points.
    pub max_ray_distance: Option<f64>,
    /// Offset along the normal before marching; default `2 · ray_step`.
    pub shadow_bias: Option<f64>,
    pub ground_plane: Option<Plane>,
}

impl Default for ShadowConfig {
    fn default() -> Self {
        Self {
            samples_per_cell: DEFAULT_SAMPLES_PER_CELL,
            ray_step: None,
            max_ray_distance: None,
            shadow_bias: None,
            ground_plane: None,
        }
    }
}

impl ShadowConfig {
    pub fn with_ground(mut self, plane: Option<Plane>) -> Self {
        self.ground_plane = plane;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples_per_cell < 1 {
            return Err(Error::InvalidInput("samples_per_cell must be >= 1".into()));
        }
        for (name, v) in [
            ("ray_step", self.ray_step),
            ("max_ray_distance", self.max_ray_distance),
        ] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::InvalidInput(format!("{name} must be positive")));
                }
            }
        }
        if let Some(b) = self.shadow_bias {
            if !(b >= 0.0 && b.is_finite()) {
                return Err(Error::InvalidInput("shadow_bias must be >= 0".into()));
            }
        }
        Ok(())
    }
}

/// Concrete marching parameters for one geometry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResolvedShadow {
    pub step: f64,
    pub max_distance: f64,
    pub bias: f64,
    /// Tangent-plane disagreement marking a depth edge between taps.
    pub edge_tolerance: f64,
    pub ground_plane: Option<Plane>,
}

/// Camera-space surface samples plus the camera orientation relating them
/// to the environment-map frame.
#[derive(Debug, Clone)]
pub struct SurfaceGeometry {
    pub intrinsics: Intrinsics,
    /// Rotation taking camera-space vectors into the environment frame.
    pub camera_to_world: Matrix3<f64>,
    pub depth: DepthMap,
    pub points: PointMap,
    pub normals: NormalMap,
    valid: Vec<bool>,
    /// Continuous pixel bounds of valid depth, padded for bilinear support.
    bounds: [f64; 4],
}

impl SurfaceGeometry {
    pub fn new(
        depth: DepthMap,
        normals: NormalMap,
        intrinsics: Intrinsics,
        camera_to_world: Matrix3<f64>,
    ) -> Result<Self> {
        intrinsics.validate()?;
        depth.check_intrinsics(&intrinsics)?;
        if normals.dims() != (depth.width, depth.height) {
            return Err(Error::dims(
                "normals vs depth",
                format!("{}x{}", depth.width, depth.height),
                format!("{}x{}", normals.width, normals.height),
            ));
        }
        let ortho = camera_to_world.transpose() * camera_to_world - Matrix3::identity();
        if ortho.abs().max() > 1e-6 || camera_to_world.determinant() < 0.0 {
            return Err(Error::InvalidInput(
                "camera_to_world must be a rotation".into(),
            ));
        }
        let points = unproject(&depth, &intrinsics)?;
        let valid: Vec<bool> = depth
            .valid
            .iter()
            .zip(&normals.valid)
            .map(|(a, b)| *a && *b)
            .collect();
        if !valid.iter().any(|v| *v) {
            return Err(Error::NoValidGeometry(
                "no pixel has both depth and normal".into(),
            ));
        }
        let mut bounds = [
            f64::INFINITY,
            f64::NEG_INFINITY,
            f64::INFINITY,
            f64::NEG_INFINITY,
        ];
        for y in 0..depth.height {
            for x in 0..depth.width {
                if depth.valid[y * depth.width + x] {
                    bounds[0] = bounds[0].min(x as f64 - 1.0);
                    bounds[1] = bounds[1].max(x as f64 + 1.0);
                    bounds[2] = bounds[2].min(y as f64 - 1.0);
                    bounds[3] = bounds[3].max(y as f64 + 1.0);
                }
            }
        }
        Ok(Self {
            intrinsics,
            camera_to_world,
            depth,
            points,
            normals,
            valid,
            bounds,
        })
    }

    /// Normals by plane fitting over the given window radius.
    pub fn from_depth(
        depth: DepthMap,
        intrinsics: Intrinsics,
        camera_to_world: Matrix3<f64>,
        window_radius: usize,
    ) -> Result<Self> {
        let normals = normals_from_depth(&depth, &intrinsics, window_radius)?;
        Self::new(depth, normals, intrinsics, camera_to_world)
    }

    pub fn width(&self) -> usize {
        self.depth.width
    }

    pub fn height(&self) -> usize {
        self.depth.height
    }

    #[inline]
    pub fn is_valid(&self, i: usize) -> bool {
        self.valid[i]
    }

    pub fn valid_mask(&self) -> &[bool] {
        &self.valid
    }

    /// Median distance between horizontally or vertically adjacent valid
    /// points.
    pub fn median_spacing(&self) -> f64 {
        let (w, h) = (self.width(), self.height());
        let mut d = Vec::new();
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if !self.depth.valid[i] {
                    continue;
                }
                if x + 1 < w && self.depth.valid[i + 1] {
                    d.push((self.points.points[i + 1] - self.points.points[i]).norm());
                }
                if y + 1 < h && self.depth.valid[i + w] {
                    d.push((self.points.points[i + w] - self.points.points[i]).norm());
                }
            }
        }
        if d.is_empty() {
            // isolated pixels: one pixel footprint at the mean depth
            let (sum, n) = self
                .depth
                .values
                .iter()
                .zip(&self.depth.valid)
                .filter(|(_, v)| **v)
                .fold((0.0, 0usize), |(s, n), (z, _)| (s + z, n + 1));
            return sum / n.max(1) as f64 / self.intrinsics.fx;
        }
        d.sort_by(f64::total_cmp);
        d[d.len() / 2]
    }

    pub fn bbox_diagonal(&self) -> f64 {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for (p, v) in self.points.points.iter().zip(&self.depth.valid) {
            if *v {
                lo = lo.inf(p);
                hi = hi.sup(p);
            }
        }
        (hi - lo).norm()
    }

    pub fn resolve(&self, cfg: &ShadowConfig) -> Result<ResolvedShadow> {
        cfg.validate()?;
        let step = match cfg.ray_step {
            Some(s) => s,
            None => 0.5 * self.median_spacing(),
        };
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::NoValidGeometry(
                "cannot derive a positive ray step".into(),
            ));
        }
        let max_distance = cfg
            .max_ray_distance
            .unwrap_or_else(|| self.bbox_diagonal().max(step));
        Ok(ResolvedShadow {
            step,
            max_distance,
            bias: cfg.shadow_bias.unwrap_or(2.0 * step),
            edge_tolerance: 4.0 * step,
            ground_plane: cfg.ground_plane,
        })
    }

    /// Stable FNV-1a digest of depth, normals, intrinsics and orientation.
    pub fn hash(&self) -> u64 {
        let mut h = Fnv1a::default();
        let k = &self.intrinsics;
        for v in [k.fx, k.fy, k.cx, k.cy] {
            h.write_u64(v.to_bits());
        }
        h.write_u64(k.width as u64);
        h.write_u64(k.height as u64);
        for v in self.camera_to_world.iter() {
            h.write_u64(v.to_bits());
        }
        for i in 0..self.depth.values.len() {
            h.write_u8(self.valid[i] as u8);
            if self.valid[i] {
                h.write_u64(self.depth.values[i].to_bits());
                for c in self.normals.normals[i].iter() {
                    h.write_u64(c.to_bits());
                }
            }
        }
        h.finish()
    }

    /// Depth of the surface seen through continuous pixel `(u, v)`. Taps
    /// on one continuous patch are blended in inverse depth, which
    /// reproduces planes exactly. Where the taps' tangent planes disagree by
    /// more than `tol` the patch straddles a depth edge and the nearest
    /// pixel's tangent plane is used instead. `None` past the outer pixel
    /// centers or when the nearest pixel has no depth.
    #[inline]
    fn depth_at(&self, u: f64, v: f64, tol: f64) -> Option<f64> {
        let w = self.depth.width;
        let h = self.depth.height;
        if !(u >= 0.0 && v >= 0.0 && u <= (w - 1) as f64 && v <= (h - 1) as f64) {
            return None;
        }
        let (x0, y0) = (u.floor() as usize, v.floor() as usize);
        let (fx, fy) = (u - x0 as f64, v - y0 as f64);
        let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
        let nearest = if fy < 0.5 { y0 } else { y1 } * w + if fx < 0.5 { x0 } else { x1 };
        if !self.depth.valid[nearest] {
            return None;
        }
        let taps = [
            (y0 * w + x0, (1.0 - fx) * (1.0 - fy)),
            (y0 * w + x1, fx * (1.0 - fy)),
            (y1 * w + x0, (1.0 - fx) * fy),
            (y1 * w + x1, fx * fy),
        ];
        let (mut zlo, mut zhi) = (f64::INFINITY, f64::NEG_INFINITY);
        let mut acc = 0.0;
        let mut wsum = 0.0;
        for &(i, wt) in &taps {
            if wt > 0.0 && self.depth.valid[i] {
                let z = self.depth.values[i];
                zlo = zlo.min(z);
                zhi = zhi.max(z);
                acc += wt / z;
                wsum += wt;
            }
        }
        let k = &self.intrinsics;
        let ray = Vector3::new((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
        // tangent-plane depth along the ray, kept within the tap depths
        let tangent = |i: usize| {
            let z = self.depth.values[i];
            let n = &self.normals.normals[i];
            let den = n.dot(&ray);
            if !self.normals.valid[i] || den.abs() <= 1e-6 * ray.norm() {
                return z;
            }
            (n.dot(&self.points.points[i]) / den).clamp(zlo, zhi)
        };
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &(i, wt) in &taps {
            if wt > 0.0 && self.depth.valid[i] {
                let t = tangent(i);
                lo = lo.min(t);
                hi = hi.max(t);
            }
        }
        if hi - lo > tol {
            Some(tangent(nearest))
        } else {
            Some(wsum / acc)
        }
    }

    /// Visibility from pixel `i` along a camera-space unit direction.
    fn visible_cam(&self, i: usize, d: &Vector3<f64>, rs: &ResolvedShadow) -> bool {
        let n = self.normals.normals[i];
        let start = self.points.points[i] + n * rs.bias;
        if let Some(g) = rs.ground_plane {
            if Vector3::from(g.normal).dot(d) < -1e-12 {
                return false;
            }
        }
        let Some((t0, t1)) = self.march_interval(&start, d, rs) else {
            return true;
        };
        let k = &self.intrinsics;
        let mut j = (t0 / rs.step).ceil().max(1.0);
        loop {
            let t = j * rs.step;
            if t > t1 {
                return true;
            }
            let q = start + d * t;
            let u = k.fx * q.x / q.z + k.cx;
            let v = k.fy * q.y / q.z + k.cy;
            if let Some(surface) = self.depth_at(u, v, rs.edge_tolerance) {
                if q.z > surface {
                    return false;
                }
            }
            j += 1.0;
        }
    }

    /// Parameter range `[t0, t1]` where the ray is in front of the camera and
    /// projects inside the padded bounds of the valid depth.
    fn march_interval(
        &self,
        s: &Vector3<f64>,
        d: &Vector3<f64>,
        rs: &ResolvedShadow,
    ) -> Option<(f64, f64)> {
        let k = &self.intrinsics;
        let mut lo = rs.step;
        let mut hi = rs.max_distance;
        // a + b t >= 0
        let mut clip = |a: f64, b: f64| {
            if b.abs() < 1e-300 {
                if a < 0.0 {
                    hi = f64::NEG_INFINITY;
                }
            } else if b > 0.0 {
                lo = lo.max(-a / b);
            } else {
                hi = hi.min(-a / b);
            }
        };
        let zmin = 1e-9;
        clip(s.z - zmin, d.z);
        let [umin, umax, vmin, vmax] = self.bounds;
        // u >= umin  <=>  fx x + (cx - umin) z >= 0
        clip(
            k.fx * s.x + (k.cx - umin) * s.z,
            k.fx * d.x + (k.cx - umin) * d.z,
        );
        clip(
            -(k.fx * s.x + (k.cx - umax) * s.z),
            -(k.fx * d.x + (k.cx - umax) * d.z),
        );
        clip(
            k.fy * s.y + (k.cy - vmin) * s.z,
            k.fy * d.y + (k.cy - vmin) * d.z,
        );
        clip(
            -(k.fy * s.y + (k.cy - vmax) * s.z),
            -(k.fy * d.y + (k.cy - vmax) * d.z),
        );
        (lo <= hi).then_some((lo, hi))
    }
}

#[derive(Clone, Copy)]
struct Fnv1a(u64);

impl Default for Fnv1a {
    fn default() -> Self {
        Fnv1a(0xcbf2_9ce4_8422_2325)
    }
}

impl Hasher for Fnv1a {
    fn finish(&self) -> u64 {
        self.0
    }

    fn write(&mut self, bytes: &[u8]) {
        for b in bytes {
            self.0 ^= *b as u64;
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
    }
}

/// Binary visibility `V(p, ω)` of direction `direction` (environment frame)
/// from pixel `(x, y)`. Invalid pixels report `false`.
pub fn visibility(
    geom: &SurfaceGeometry,
    pixel: (usize, usize),
    direction: &Vector3<f64>,
    cfg: &ShadowConfig,
) -> Result<bool> {
    let rs = geom.resolve(cfg)?;
    Ok(visibility_resolved(geom, pixel, direction, &rs))
}

pub fn visibility_resolved(
    geom: &SurfaceGeometry,
    pixel: (usize, usize),
    direction: &Vector3<f64>,
    rs: &ResolvedShadow,
) -> bool {
    let i = pixel.1 * geom.width() + pixel.0;
    if !geom.is_valid(i) {
        return false;
    }
    let d = geom.camera_to_world.transpose() * direction.normalize();
    geom.visible_cam(i, &d, rs)
}

/// Shadow mask for a single distant light: `true` where lit.
pub fn light_visibility_mask(
    geom: &SurfaceGeometry,
    direction: &Vector3<f64>,
    cfg: &ShadowConfig,
) -> Result<Vec<bool>> {
    let rs = geom.resolve(cfg)?;
    let d = geom.camera_to_world.transpose() * direction.normalize();
    Ok((0..geom.valid.len())
        .into_par_iter()
        .map(|i| geom.is_valid(i) && geom.visible_cam(i, &d, &rs))
        .collect())
}

/// `K × H × W` transfer images, basis-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ShadingBases {
    pub partition: BasisPartition,
    pub width: usize,
    pub height: usize,
    pub samples_per_cell: usize,
    pub geometry_hash: u64,
    pub data: Vec<f64>,
}

impl ShadingBases {
    pub fn k(&self) -> usize {
        self.partition.k()
    }

    pub fn basis(&self, k: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.data[k * n..(k + 1) * n]
    }

    pub fn basis_mean(&self, k: usize) -> f64 {
        let b = self.basis(k);
        b.iter().sum::<f64>() / b.len() as f64
    }
}

/// Per-pixel sums `Σ w · max(0, n·d) · V` over a fixed direction list, with
/// each direction mapped to an output slot.
fn transfer_rows<F>(
    geom: &SurfaceGeometry,
    rs: &ResolvedShadow,
    dirs_cam: &[Vector3<f64>],
    slots: usize,
    mut per_dir: F,
) -> Vec<Vec<f64>>
where
    F: FnMut(usize) -> (usize, f64) + Sync + Clone + Send,
{
    let w = geom.width();
    let mapping: Vec<(usize, f64)> = (0..dirs_cam.len()).map(&mut per_dir).collect();
    (0..geom.height())
        .into_par_iter()
        .map(|y| {
            let mut row = vec![0.0; w * slots];
            for x in 0..w {
                let i = y * w + x;
                if !geom.is_valid(i) {
                    continue;
                }
                let n = geom.normals.normals[i];
                let out = &mut row[x * slots..(x + 1) * slots];
                for (d, &(slot, weight)) in dirs_cam.iter().zip(&mapping) {
                    let cos = n.dot(d);
                    if cos <= 0.0 || weight == 0.0 {
                        continue;
                    }
                    if geom.visible_cam(i, d, rs) {
                        out[slot] += weight * cos;
                    }
                }
            }
            row
        })
        .collect()
}

pub fn shading_bases(
    geom: &SurfaceGeometry,
    part: &BasisPartition,
    cfg: &ShadowConfig,
) -> Result<ShadingBases> {
    part.validate()?;
    let rs = geom.resolve(cfg)?;
    let m = cfg.samples_per_cell;
    let kk = part.k();
    let to_cam = geom.camera_to_world.transpose();
    let mut dirs = Vec::with_capacity(kk * m);
    let mut cell = Vec::with_capacity(kk * m);
    for k in 0..kk {
        let samples = part.sample_directions(k, m);
        let share = 1.0 / samples.len() as f64;
        for d in samples {
            dirs.push(to_cam * d);
            cell.push((k, share));
        }
    }
    let rows = transfer_rows(geom, &rs, &dirs, kk, |j| cell[j]);
    let (w, h) = (geom.width(), geom.height());
    let n = w * h;
    let mut data = vec![0.0; kk * n];
    for (y, row) in rows.iter().enumerate() {
        for x in 0..w {
            for k in 0..kk {
                data[k * n + y * w + x] = row[x * kk + k].clamp(0.0, 1.0);
            }
        }
    }
    Ok(ShadingBases {
        partition: *part,
        width: w,
        height: h,
        samples_per_cell: m,
        geometry_hash: geom.hash(),
        data,
    })
}

/// `S_c(p) = Σ_k l_ck · SB_k(p)`, accumulated in increasing `k`.
pub fn compose_shading(bases: &ShadingBases, l: &IlluminationDescriptor) -> Result<Shading> {
    l.validate()?;
    if l.partition != bases.partition {
        return Err(Error::PartitionMismatch(format!(
            "bases use {} (K={}), descriptor uses {} (K={})",
            bases.partition.id(),
            bases.k(),
            l.partition.id(),
            l.k
        )));
    }
    let n = bases.width * bases.height;
    let kk = bases.k();
    let data = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut s = [0.0; 3];
            for k in 0..kk {
                let b = bases.data[k * n + i];
                for c in 0..3 {
                    s[c] += l.l[c][k] * b;
                }
            }
            s
        })
        .collect();
    RgbImage::from_data(bases.width, bases.height, data)
}

/// Dense oracle: `S_c(p) = Σ_q L_c(q) · max(0, n·dir(q)) · V(p, dir(q)) · ω(q)`
/// over every environment pixel `q`.
pub fn reference_shading(
    geom: &SurfaceGeometry,
    env: &EnvMap,
    cfg: &ShadowConfig,
) -> Result<Shading> {
    let rs = geom.resolve(cfg)?;
    let (ew, eh) = (env.width(), env.height());
    let to_cam = geom.camera_to_world.transpose();
    let mut dirs = Vec::new();
    let mut energy = Vec::new();
    for v in 0..eh {
        let omega = pixel_solid_angle(v, ew, eh);
        for u in 0..ew {
            let l = env.radiance.get(u, v);
            if l == [0.0; 3] {
                continue;
            }
            dirs.push(to_cam * dir_from_pixel(u, v, ew, eh));
            energy.push([l[0] * omega, l[1] * omega, l[2] * omega]);
        }
    }
    let w = geom.width();
    let rows: Vec<Vec<[f64; 3]>> = (0..geom.height())
        .into_par_iter()
        .map(|y| {
            (0..w)
                .map(|x| {
                    let i = y * w + x;
                    let mut s = [0.0; 3];
                    if !geom.is_valid(i) {
                        return s;
                    }
                    let n = geom.normals.normals[i];
                    for (d, e) in dirs.iter().zip(&energy) {
                        let cos = n.dot(d);
                        if cos <= 0.0 || !geom.visible_cam(i, d, &rs) {
                            continue;
                        }
                        for c in 0..3 {
                            s[c] += e[c] * cos;
                        }
                    }
                    s
                })
                .collect()
        })
        .collect();
    RgbImage::from_data(w, geom.height(), rows.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envlight::{descriptor_from_envmap, make_partition};
    use std::f64::consts::PI;

    /// Camera looking straight down: camera +z is world −y.
    fn down_camera() -> Matrix3<f64> {
        // columns: camera x, y, z axes in world coordinates
        Matrix3::from_columns(&[
            Vector3::new(0.0, 0.0, 1.0),
            Vector3::new(-1.0, 0.0, 0.0),
            Vector3::new(0.0, -1.0, 0.0),
        ])
    }

    fn flat_plane(n: usize) -> SurfaceGeometry {
        let k = Intrinsics::new(n as f64, n as f64, n as f64 / 2.0, n as f64 / 2.0, n, n).unwrap();
        let depth = DepthMap::from_fn(n, n, |_, _| Some(2.0));
        SurfaceGeometry::from_depth(depth, k, down_camera(), 2).unwrap()
    }

    #[test]
    fn plane_normal_points_up_in_world() {
        let g = flat_plane(8);
        let nw = g.camera_to_world * g.normals.normals[27];
        assert!((nw - Vector3::y()).norm() < 1e-9);
    }

    #[test]
    fn isolated_plane_sees_the_whole_upper_hemisphere() {
        let g = flat_plane(16);
        let cfg = ShadowConfig::default();
        for d in [
            Vector3::y(),
            Vector3::new(1.0, 0.2, 0.0),
            Vector3::new(-0.3, 0.05, 0.9),
        ] {
            for px in [(0, 0), (8, 8), (15, 3)] {
                assert!(visibility(&g, px, &d, &cfg).unwrap());
            }
        }
    }

    #[test]
    fn direction_below_ground_plane_is_blocked() {
        let g = flat_plane(16);
        let up_cam = g.camera_to_world.transpose() * Vector3::y();
        let plane = Plane {
            normal: up_cam.into(),
            offset: -up_cam.dot(&g.points.points[0]),
        };
        let cfg = ShadowConfig::default().with_ground(Some(plane));
        assert!(!visibility(&g, (5, 5), &Vector3::new(1.0, -0.1, 0.0), &cfg).unwrap());
        assert!(visibility(&g, (5, 5), &Vector3::new(1.0, 0.1, 0.0), &cfg).unwrap());
    }

    #[test]
    fn invalid_pixel_is_not_visible() {
        let k = Intrinsics::new(8.0, 8.0, 4.0, 4.0, 8, 8).unwrap();
        let depth = DepthMap::from_fn(8, 8, |x, _| (x < 6).then_some(2.0));
        let g = SurfaceGeometry::from_depth(depth, k, down_camera(), 2).unwrap();
        assert!(!visibility(&g, (7, 2), &Vector3::y(), &ShadowConfig::default()).unwrap());
    }

    #[test]
    fn single_cell_plane_basis_is_a_quarter() {
        let g = flat_plane(8);
        let part = make_partition(1).unwrap();
        let cfg = ShadowConfig {
            samples_per_cell: 256,
            ..Default::default()
        };
        let b = shading_bases(&g, &part, &cfg).unwrap();
        for v in b.basis(0) {
            assert!((v - 0.25).abs() < 0.25 * 0.02, "{v}");
        }
    }

    #[test]
    fn cells_below_tangent_plane_are_zero() {
        let g = flat_plane(8);
        let part = make_partition(8).unwrap(); // 2 rings: top ring is k < 4
        let b = shading_bases(&g, &part, &ShadowConfig::default()).unwrap();
        for k in 4..8 {
            assert!(b.basis(k).iter().all(|v| *v == 0.0));
        }
        for k in 0..4 {
            assert!(b.basis(k).iter().all(|v| *v > 0.0 && *v <= 1.0));
        }
    }

    #[test]
    fn furnace() {
        let g = flat_plane(8);
        let env = EnvMap::uniform(32, 16, [1.0; 3]);
        let s = reference_shading(&g, &env, &ShadowConfig::default()).unwrap();
        for p in &s.data {
            assert!((p[0] - PI).abs() < 0.01 * PI);
        }
        // band edges of the partition fall inside env rows; a finer map keeps
        // the center-assignment error of the descriptor small
        let env = EnvMap::uniform(256, 128, [1.0; 3]);
        let part = make_partition(16).unwrap();
        let b = shading_bases(&g, &part, &ShadowConfig::default()).unwrap();
        let s = compose_shading(&b, &descriptor_from_envmap(&env, &part)).unwrap();
        for p in &s.data {
            assert!((p[1] - PI).abs() < 0.02 * PI);
        }
    }

    #[test]
    fn black_env_and_zero_descriptor() {
        let g = flat_plane(6);
        let env = EnvMap::uniform(16, 8, [0.0; 3]);
        let s = reference_shading(&g, &env, &ShadowConfig::default()).unwrap();
        assert!(s.data.iter().all(|p| *p == [0.0; 3]));
        let part = make_partition(4).unwrap();
        let b = shading_bases(&g, &part, &ShadowConfig::default()).unwrap();
        let s = compose_shading(&b, &IlluminationDescriptor::zeros(part)).unwrap();
        assert!(s.data.iter().all(|p| *p == [0.0; 3]));
    }

    #[test]
    fn composition_rejects_partition_mismatch() {
        let g = flat_plane(6);
        let b = shading_bases(&g, &make_partition(4).unwrap(), &ShadowConfig::default()).unwrap();
        let l = IlluminationDescriptor::zeros(make_partition(8).unwrap());
        assert!(matches!(
            compose_shading(&b, &l),
            Err(Error::PartitionMismatch(_))
        ));
    }

    #[test]
    fn composition_is_linear() {
        let g = flat_plane(6);
        let part = make_partition(8).unwrap();
        let b = shading_bases(&g, &part, &ShadowConfig::default()).unwrap();
        let mut l1 = IlluminationDescriptor::zeros(part);
        let mut l2 = IlluminationDescriptor::zeros(part);
        for c in 0..3 {
            for k in 0..8 {
                l1.l[c][k] = 0.1 + 0.37 * ((c * 8 + k) as f64).sin().abs();
                l2.l[c][k] = 0.05 * (k + c) as f64;
            }
        }
        let s1 = compose_shading(&b, &l1).unwrap();
        let s2 = compose_shading(&b, &l2).unwrap();
        let s12 = compose_shading(&b, &l1.add(&l2).unwrap()).unwrap();
        let s1x2 = compose_shading(&b, &l1.scaled(2.0)).unwrap();
        for i in 0..s1.len() {
            for c in 0..3 {
                assert_eq!(s1x2.data[i][c], 2.0 * s1.data[i][c]);
                let sum = s1.data[i][c] + s2.data[i][c];
                assert!((s12.data[i][c] - sum).abs() <= 1e-12 * sum.abs().max(1.0));
            }
        }
    }
}
