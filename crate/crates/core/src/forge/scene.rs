//! Procedural scenes of analytic primitives on a ground plane, rendered by
//! ray casting with direct environment lighting.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envlight::{rotate_envmap, EnvMap};
use crate::error::{Error, Result};
use crate::geometry::{DepthMap, Intrinsics, NormalMap};
use crate::raster::{Albedo, LinearImage, Mask, Rgb, RgbImage, Shading};
use crate::shading_field::{reference_shading, Plane, ShadowConfig, SurfaceGeometry};

pub const DEFAULT_RENDER_WIDTH: usize = 640;
pub const DEFAULT_RENDER_HEIGHT: usize = 480;

/// World frame: `+y` up, ground plane `y = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Sphere {
        radius: f64,
    },
    /// Axis-aligned box turned by `yaw_deg` about the vertical axis.
    Box {
        half_extents: [f64; 3],
        yaw_deg: f64,
    },
    /// Vertical capsule: a cylinder of `half_height` capped by hemispheres.
    Capsule {
        radius: f64,
        half_height: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Material {
    Solid {
        albedo: Rgb,
    },
    /// 3D checker with cells of side `scale` in world units.
    Checker {
        a: Rgb,
        b: Rgb,
        scale: f64,
    },
}

impl Material {
    fn albedo_at(&self, p: &Vector3<f64>) -> Rgb {
        match *self {
            Material::Solid { albedo } => albedo,
            Material::Checker { a, b, scale } => {
                let s = (p.x / scale).floor() + (p.y / scale).floor() + (p.z / scale).floor();
                if (s as i64).rem_euclid(2) == 0 {
                    a
                } else {
                    b
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub shape: Shape,
    pub center: [f64; 3],
    pub material: Material,
}

impl Primitive {
    fn lowest_point(&self) -> f64 {
        let c = self.center[1];
        match self.shape {
            Shape::Sphere { radius } => c - radius,
            Shape::Box { half_extents, .. } => c - half_extents[1],
            Shape::Capsule {
                radius,
                half_height,
            } => c - half_height - radius,
        }
    }

    /// Nearest hit `t > t_min` along `o + t d` with the outward world normal.
    fn intersect(
        &self,
        o: &Vector3<f64>,
        d: &Vector3<f64>,
        t_min: f64,
    ) -> Option<(f64, Vector3<f64>)> {
        let c = Vector3::from(self.center);
        match self.shape {
            Shape::Sphere { radius } => sphere_hit(&c, radius, o, d, t_min),
            Shape::Box {
                half_extents,
                yaw_deg,
            } => {
                let rot = yaw_rotation(yaw_deg);
                let lo = rot.transpose() * (o - c);
                let ld = rot.transpose() * d;
                let mut t0 = t_min;
                let mut t1 = f64::INFINITY;
                let mut axis = None;
                for a in 0..3 {
                    let h = half_extents[a];
                    if ld[a].abs() < 1e-300 {
                        if lo[a].abs() > h {
                            return None;
                        }
                        continue;
                    }
                    let mut ta = (-h - lo[a]) / ld[a];
                    let mut tb = (h - lo[a]) / ld[a];
                    if ta > tb {
                        std::mem::swap(&mut ta, &mut tb);
                    }
                    if ta > t0 {
                        t0 = ta;
                        axis = Some(a);
                    }
                    t1 = t1.min(tb);
                    if t0 > t1 {
                        return None;
                    }
                }
                let a = axis?;
                let mut n = Vector3::zeros();
                n[a] = -ld[a].signum();
                Some((t0, rot * n))
            }
            Shape::Capsule {
                radius,
                half_height,
            } => {
                let mut best: Option<(f64, Vector3<f64>)> = None;
                let mut keep = |hit: Option<(f64, Vector3<f64>)>| {
                    if let Some(h) = hit {
                        if best.is_none_or(|b| h.0 < b.0) {
                            best = Some(h);
                        }
                    }
                };
                let up = Vector3::new(0.0, half_height, 0.0);
                keep(sphere_hit(&(c + up), radius, o, d, t_min));
                keep(sphere_hit(&(c - up), radius, o, d, t_min));
                // finite vertical cylinder
                let (ox, oz) = (o.x - c.x, o.z - c.z);
                let a = d.x * d.x + d.z * d.z;
                if a > 1e-300 {
                    let b = ox * d.x + oz * d.z;
                    let cc = ox * ox + oz * oz - radius * radius;
                    let disc = b * b - a * cc;
                    if disc >= 0.0 {
                        let sq = disc.sqrt();
                        for t in [(-b - sq) / a, (-b + sq) / a] {
                            let y = o.y + t * d.y - c.y;
                            if t > t_min && y.abs() <= half_height {
                                let p = o + d * t;
                                let n = Vector3::new(p.x - c.x, 0.0, p.z - c.z) / radius;
                                keep(Some((t, n)));
                                break;
                            }
                        }
                    }
                }
                best
            }
        }
    }
}

fn sphere_hit(
    c: &Vector3<f64>,
    r: f64,
    o: &Vector3<f64>,
    d: &Vector3<f64>,
    t_min: f64,
) -> Option<(f64, Vector3<f64>)> {
    let oc = o - c;
    let a = d.norm_squared();
    let b = oc.dot(d);
    let cc = oc.norm_squared() - r * r;
    let disc = b * b - a * cc;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    [(-b - sq) / a, (-b + sq) / a]
        .into_iter()
        .find(|&t| t > t_min)
        .map(|t| (t, (o + d * t - c) / r))
}

fn yaw_rotation(yaw_deg: f64) -> Matrix3<f64> {
    let (s, c) = yaw_deg.to_radians().sin_cos();
    Matrix3::new(c, 0.0, -s, 0.0, 1.0, 0.0, s, 0.0, c)
}

/// Camera-to-world rotation for a camera looking along azimuth `yaw` (from
/// `+x` toward `+z`) tilted down by `pitch`. Columns are the camera right,
/// down and forward axes.
pub fn camera_rotation(yaw_deg: f64, pitch_deg: f64) -> Matrix3<f64> {
    let (sy, cy) = yaw_deg.to_radians().sin_cos();
    let (sp, cp) = pitch_deg.to_radians().sin_cos();
    let f = Vector3::new(cp * cy, -sp, cp * sy);
    let r = f.cross(&Vector3::y()).normalize();
    let down = f.cross(&r);
    Matrix3::from_columns(&[r, down, f])
}

/// The world ground plane `y = 0` in the camera frame of a camera at height
/// `camera_height`.
pub fn ground_plane_in_camera(camera_to_world: &Matrix3<f64>, camera_height: f64) -> Plane {
    let n = camera_to_world.transpose() * Vector3::y();
    Plane {
        normal: [n.x, n.y, n.z],
        offset: camera_height,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraSpec {
    /// Camera center is `(0, height, 0)`.
    pub height: f64,
    pub yaw_deg: f64,
    pub pitch_deg: f64,
    pub hfov_deg: f64,
}

impl Default for CameraSpec {
    fn default() -> Self {
        Self {
            height: 1.0,
            yaw_deg: 0.0,
            pitch_deg: 0.0,
            hfov_deg: 60.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub primitives: Vec<Primitive>,
    pub ground_albedo: Rgb,
    pub camera: CameraSpec,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.primitives.is_empty() {
            return Err(Error::InvalidInput("scene has no primitives".into()));
        }
        for (i, p) in self.primitives.iter().enumerate() {
            if p.lowest_point() < -1e-9 {
                return Err(Error::InvalidInput(format!(
                    "primitive {i} extends below the ground plane"
                )));
            }
        }
        if !(self.camera.height > 0.0) {
            return Err(Error::InvalidInput(
                "camera must be above the ground".into(),
            ));
        }
        Ok(())
    }

    /// One or two primitives standing in front of a level camera looking
    /// along `+x`.
    pub fn random<R: Rng>(rng: &mut R) -> Self {
        let count = rng.random_range(1..=2usize);
        let mut primitives = Vec::with_capacity(count);
        for i in 0..count {
            let z = if count == 1 {
                rng.random_range(-0.3..0.3)
            } else {
                (i as f64 - 0.5) * 1.3 + rng.random_range(-0.1..0.1)
            };
            let x = rng.random_range(4.0..5.5);
            let (shape, y) = match rng.random_range(0..3) {
                0 => {
                    let r = rng.random_range(0.35..0.6);
                    (Shape::Sphere { radius: r }, r)
                }
                1 => {
                    let h = [
                        rng.random_range(0.25..0.45),
                        rng.random_range(0.3..0.7),
                        rng.random_range(0.25..0.45),
                    ];
                    let yaw = rng.random_range(0.0..90.0);
                    (
                        Shape::Box {
                            half_extents: h,
                            yaw_deg: yaw,
                        },
                        h[1],
                    )
                }
                _ => {
                    let r = rng.random_range(0.2..0.35);
                    let hh = rng.random_range(0.2..0.5);
                    (
                        Shape::Capsule {
                            radius: r,
                            half_height: hh,
                        },
                        r + hh,
                    )
                }
            };
            let base: Rgb = [0, 1, 2].map(|_| rng.random_range(0.25..0.9));
            let material = if rng.random_bool(0.4) {
                let other = base.map(|v| v * rng.random_range(0.35..0.7));
                Material::Checker {
                    a: base,
                    b: other,
                    scale: rng.random_range(0.15..0.3),
                }
            } else {
                Material::Solid { albedo: base }
            };
            primitives.push(Primitive {
                shape,
                center: [x, y, z],
                material,
            });
        }
        Self {
            primitives,
            ground_albedo: [0.3, 0.3, 0.3],
            camera: CameraSpec::default(),
        }
    }
}

/// Per-object rasters, all aligned.
#[derive(Debug, Clone)]
pub struct ObjectRender {
    pub image: LinearImage,
    pub shading: Shading,
    pub albedo: Albedo,
    pub depth: DepthMap,
    pub mask: Mask,
    pub intrinsics: Intrinsics,
    pub camera_to_world: Matrix3<f64>,
    pub ground_plane: Plane,
}

/// Analytic depth, normals and albedo of the primitives (the ground plane is
/// never part of the object).
pub fn rasterize(
    scene: &SceneSpec,
    size: (usize, usize),
) -> Result<(DepthMap, NormalMap, Albedo, Intrinsics, Matrix3<f64>)> {
    scene.validate()?;
    let (w, h) = size;
    let k = Intrinsics::from_fov(w, h, scene.camera.hfov_deg)?;
    let rot = camera_rotation(scene.camera.yaw_deg, scene.camera.pitch_deg);
    let origin = Vector3::new(0.0, scene.camera.height, 0.0);
    let to_cam = rot.transpose();
    let n = w * h;
    let mut depth = vec![0.0; n];
    let mut normals = vec![Vector3::zeros(); n];
    let mut valid = vec![false; n];
    let mut albedo = RgbImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let d = rot * k.ray(x as f64, y as f64);
            let mut best: Option<(f64, Vector3<f64>, &Primitive)> = None;
            for p in &scene.primitives {
                if let Some((t, nrm)) = p.intersect(&origin, &d, 1e-9) {
                    if best.is_none_or(|b| t < b.0) {
                        best = Some((t, nrm, p));
                    }
                }
            }
            if let Some((t, nrm, p)) = best {
                let i = y * w + x;
                depth[i] = t;
                normals[i] = to_cam * nrm;
                valid[i] = true;
                albedo.set(x, y, p.material.albedo_at(&(origin + d * t)));
            }
        }
    }
    if !valid.iter().any(|v| *v) {
        return Err(Error::InvalidInput(
            "no primitive is visible from the camera".into(),
        ));
    }
    let depth = DepthMap::from_fn(w, h, |x, y| valid[y * w + x].then(|| depth[y * w + x]));
    let normals = NormalMap {
        width: w,
        height: h,
        normals,
        valid,
    };
    Ok((depth, normals, albedo, k, rot))
}

/// Renders the scene under `env` turned by `rotation_deg` (a multiple of 45).
pub fn render_object(
    scene: &SceneSpec,
    env: &EnvMap,
    rotation_deg: f64,
    size: (usize, usize),
    shadow: &ShadowConfig,
) -> Result<ObjectRender> {
    if (rotation_deg / 45.0 - (rotation_deg / 45.0).round()).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!(
            "rotation {rotation_deg} is not a multiple of 45 degrees"
        )));
    }
    let rotated = rotate_envmap(env, rotation_deg);
    render_object_rotated(scene, &rotated, size, shadow)
}

/// Renders the scene under an already rotated environment.
pub fn render_object_rotated(
    scene: &SceneSpec,
    env: &EnvMap,
    size: (usize, usize),
    shadow: &ShadowConfig,
) -> Result<ObjectRender> {
    let (depth, normals, albedo, intrinsics, rot) = rasterize(scene, size)?;
    let plane = ground_plane_in_camera(&rot, scene.camera.height);
    let cfg = shadow.clone().with_ground(Some(plane));
    let geom = SurfaceGeometry::new(depth, normals, intrinsics, rot)?;
    let shading = reference_shading(&geom, env, &cfg)?;
    let mask = Mask::from_fn(size.0, size.1, |x, y| geom.depth.valid[y * size.0 + x]);
    let image = RgbImage::from_data(
        size.0,
        size.1,
        albedo
            .data
            .iter()
            .zip(&shading.data)
            .map(|(a, s)| [a[0] * s[0], a[1] * s[1], a[2] * s[2]])
            .collect(),
    )?;
    Ok(ObjectRender {
        image,
        shading,
        albedo,
        depth: geom.depth,
        mask,
        intrinsics,
        camera_to_world: rot,
        ground_plane: plane,
    })
}

/// Level perspective view of the environment looking along azimuth `yaw`.
pub fn crop_background(
    env: &EnvMap,
    yaw_deg: f64,
    fov_deg: f64,
    size: (usize, usize),
) -> Result<LinearImage> {
    let (w, h) = size;
    let k = Intrinsics::from_fov(w, h, fov_deg)?;
    let rot = camera_rotation(yaw_deg, 0.0);
    Ok(RgbImage::from_fn(w, h, |x, y| {
        env.sample(&(rot * k.ray(x as f64, y as f64)))
    }))
}
