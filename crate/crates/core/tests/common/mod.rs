#![allow(dead_code)]

use nalgebra::{Matrix3, Vector3};
use shadefield::forge::camera_rotation;
use shadefield::geometry::{DepthMap, Intrinsics, NormalMap};
use shadefield::raster::Mask;
use shadefield::shading_field::SurfaceGeometry;

/// Analytic occluder resting on the ground plane `y = 0`.
#[derive(Debug, Clone, Copy)]
pub enum Solid {
    Sphere {
        center: Vector3<f64>,
        radius: f64,
    },
    Aabb {
        min: Vector3<f64>,
        max: Vector3<f64>,
    },
}

impl Solid {
    pub fn hit(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<(f64, Vector3<f64>)> {
        match *self {
            Solid::Sphere { center, radius } => {
                let oc = o - center;
                let a = d.dot(d);
                let b = 2.0 * oc.dot(d);
                let c = oc.dot(&oc) - radius * radius;
                let disc = b * b - 4.0 * a * c;
                if disc < 0.0 {
                    return None;
                }
                let t = (-b - disc.sqrt()) / (2.0 * a);
                (t > 1e-9).then(|| (t, (o + d * t - center) / radius))
            }
            Solid::Aabb { min, max } => {
                let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
                let mut axis = 0;
                for i in 0..3 {
                    if d[i].abs() < 1e-300 {
                        if o[i] < min[i] || o[i] > max[i] {
                            return None;
                        }
                        continue;
                    }
                    let (a, b) = ((min[i] - o[i]) / d[i], (max[i] - o[i]) / d[i]);
                    let (a, b) = if a < b { (a, b) } else { (b, a) };
                    if a > t0 {
                        t0 = a;
                        axis = i;
                    }
                    t1 = t1.min(b);
                }
                if t0 > t1 || t0 <= 1e-9 {
                    return None;
                }
                let mut n = Vector3::zeros();
                n[axis] = -d[axis].signum();
                Some((t0, n))
            }
        }
    }

    /// Whether the ray from `o` along `d` meets the solid at all.
    pub fn blocks(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> bool {
        self.hit(o, d).is_some()
    }
}

/// A pinhole view of the ground plane plus one solid, with analytic depth,
/// normals and a label of which pixels see the ground.
pub struct GroundScene {
    pub intrinsics: Intrinsics,
    pub rotation: Matrix3<f64>,
    pub origin: Vector3<f64>,
    pub depth: DepthMap,
    pub normals: NormalMap,
    pub ground: Vec<bool>,
    pub world_points: Vec<Vector3<f64>>,
}

impl GroundScene {
    pub fn render(size: (usize, usize), height: f64, pitch_deg: f64, solid: Solid) -> Self {
        Self::render_with_fov(size, height, pitch_deg, 60.0, solid)
    }

    pub fn render_with_fov(
        size: (usize, usize),
        height: f64,
        pitch_deg: f64,
        fov_deg: f64,
        solid: Solid,
    ) -> Self {
        let (w, h) = size;
        let k = Intrinsics::from_fov(w, h, fov_deg).unwrap();
        let rot = camera_rotation(0.0, pitch_deg);
        let origin = Vector3::new(0.0, height, 0.0);
        let n = w * h;
        let (mut z, mut normals, mut valid, mut ground, mut pts) = (
            vec![0.0; n],
            vec![Vector3::zeros(); n],
            vec![false; n],
            vec![false; n],
            vec![Vector3::zeros(); n],
        );
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let d = rot * k.ray(x as f64, y as f64);
                let plane = (d.y < 0.0).then(|| (-origin.y / d.y, Vector3::y()));
                let hit = match (solid.hit(&origin, &d), plane) {
                    (Some(s), Some(p)) if s.0 < p.0 => Some((s, false)),
                    (_, Some(p)) => Some((p, true)),
                    (Some(s), None) => Some((s, false)),
                    (None, None) => None,
                };
                if let Some(((t, nw), g)) = hit {
                    z[i] = t;
                    normals[i] = rot.transpose() * nw;
                    valid[i] = true;
                    ground[i] = g;
                    pts[i] = origin + d * t;
                }
            }
        }
        let depth = DepthMap::from_fn(w, h, |x, y| valid[y * w + x].then(|| z[y * w + x]));
        Self {
            intrinsics: k,
            rotation: rot,
            origin,
            depth,
            normals: NormalMap {
                width: w,
                height: h,
                normals,
                valid,
            },
            ground,
            world_points: pts,
        }
    }

    pub fn analytic_geometry(&self) -> SurfaceGeometry {
        SurfaceGeometry::new(
            self.depth.clone(),
            self.normals.clone(),
            self.intrinsics,
            self.rotation,
        )
        .unwrap()
    }

    pub fn estimated_geometry(&self, radius: usize) -> SurfaceGeometry {
        SurfaceGeometry::from_depth(self.depth.clone(), self.intrinsics, self.rotation, radius)
            .unwrap()
    }

    pub fn mask(&self) -> Mask {
        Mask::from_fn(self.depth.width, self.depth.height, |x, y| {
            self.normals.valid[y * self.depth.width + x]
        })
    }
}

/// 64×64-class test scene: a sphere of radius 0.5 resting on the ground in
/// front of a camera tilted 40° down.
pub fn sphere_on_plane(size: (usize, usize)) -> GroundScene {
    GroundScene::render(
        size,
        1.5,
        40.0,
        Solid::Sphere {
            center: Vector3::new(1.8, 0.5, 0.0),
            radius: 0.5,
        },
    )
}

pub fn intersection_over_union(a: &[bool], b: &[bool]) -> f64 {
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    let union = a.iter().zip(b).filter(|(x, y)| **x || **y).count();
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

pub fn angle_deg(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    (a.normalize().dot(&b.normalize()))
        .clamp(-1.0, 1.0)
        .acos()
        .to_degrees()
}

/// Foreground PSNR of a shading estimate against an oracle, both divided by
/// the oracle's peak inside the mask so that the peak maps to 1.
pub fn shading_fpsnr(
    pred: &shadefield::raster::RgbImage,
    oracle: &shadefield::raster::RgbImage,
    mask: &Mask,
) -> f64 {
    let peak = (0..mask.data.len())
        .filter(|&i| mask.is_fg(i))
        .flat_map(|i| oracle.data[i])
        .fold(0.0f64, f64::max)
        .max(1e-12);
    shadefield::metrics::fpsnr(&pred.scale(1.0 / peak), &oracle.scale(1.0 / peak), mask).unwrap()
}

/// Mean absolute difference over foreground pixels and channels.
pub fn masked_mean_abs(
    a: &shadefield::raster::RgbImage,
    b: &shadefield::raster::RgbImage,
    mask: &Mask,
) -> f64 {
    let idx: Vec<usize> = (0..mask.data.len()).filter(|&i| mask.is_fg(i)).collect();
    idx.iter()
        .map(|&i| {
            (0..3)
                .map(|c| (a.data[i][c] - b.data[i][c]).abs())
                .sum::<f64>()
        })
        .sum::<f64>()
        / (3 * idx.len()) as f64
}

/// Object-only geometry of a forge scene; the ground enters as the shadow
/// plane rather than as depth.
pub fn object_geometry(
    scene: &shadefield::forge::SceneSpec,
    size: (usize, usize),
) -> (
    SurfaceGeometry,
    shadefield::shading_field::ShadowConfig,
    Mask,
) {
    let (depth, normals, _, k, rot) = shadefield::forge::rasterize(scene, size).unwrap();
    let plane = shadefield::forge::ground_plane_in_camera(&rot, scene.camera.height);
    let cfg = shadefield::shading_field::ShadowConfig::default().with_ground(Some(plane));
    let geom = SurfaceGeometry::new(depth, normals, k, rot).unwrap();
    let mask = Mask::from_fn(size.0, size.1, |x, y| geom.is_valid(y * size.0 + x));
    (geom, cfg, mask)
}

/// A sphere of radius 0.5 resting on the ground 4.5 m in front of the
/// default level camera.
pub fn sphere_scene() -> shadefield::forge::SceneSpec {
    use shadefield::forge::{CameraSpec, Material, Primitive, SceneSpec, Shape};
    SceneSpec {
        primitives: vec![Primitive {
            shape: Shape::Sphere { radius: 0.5 },
            center: [4.5, 0.5, 0.0],
            material: Material::Solid { albedo: [0.8; 3] },
        }],
        ground_albedo: [0.5; 3],
        camera: CameraSpec::default(),
    }
}

/// Mean SSIM over all pixels and channels, recomputed per pixel from raw
/// moments with a 2D Gaussian window truncated at the image border.
pub fn brute_force_ssim(a: &shadefield::raster::RgbImage, b: &shadefield::raster::RgbImage) -> f64 {
    let (w, h) = a.dims();
    let (c1, c2, sigma, r) = (1e-4, 9e-4, 1.5f64, 5i64);
    let mut total = 0.0;
    for c in 0..3 {
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                let (mut sw, mut sa, mut sb, mut saa, mut sbb, mut sab) =
                    (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
                for yy in (y - r).max(0)..=(y + r).min(h as i64 - 1) {
                    for xx in (x - r).max(0)..=(x + r).min(w as i64 - 1) {
                        let d2 = ((xx - x) * (xx - x) + (yy - y) * (yy - y)) as f64;
                        let wt = (-d2 / (2.0 * sigma * sigma)).exp();
                        let (p, q) = (
                            a.get(xx as usize, yy as usize)[c],
                            b.get(xx as usize, yy as usize)[c],
                        );
                        sw += wt;
                        sa += wt * p;
                        sb += wt * q;
                        saa += wt * p * p;
                        sbb += wt * q * q;
                        sab += wt * p * q;
                    }
                }
                let (ma, mb) = (sa / sw, sb / sw);
                let va = saa / sw - ma * ma;
                let vb = sbb / sw - mb * mb;
                let cov = sab / sw - ma * mb;
                total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            }
        }
    }
    total / (3 * w * h) as f64
}

/// L1 as a mean over pixels and channels.
pub fn brute_force_l1(a: &shadefield::raster::RgbImage, b: &shadefield::raster::RgbImage) -> f64 {
    let mut s = 0.0;
    for (p, q) in a.data.iter().zip(&b.data) {
        for c in 0..3 {
            s += (p[c] - q[c]).abs();
        }
    }
    s / (3 * a.len()) as f64
}

pub fn brute_force_l_nr(imgs: [&shadefield::raster::RgbImage; 6], lambda: f64) -> f64 {
    let mut loss = 0.0;
    for pair in imgs.chunks(2) {
        loss +=
            brute_force_l1(pair[0], pair[1]) + lambda * (1.0 - brute_force_ssim(pair[0], pair[1]));
    }
    loss
}

pub fn random_image(w: usize, h: usize, seed: u64) -> shadefield::raster::RgbImage {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    shadefield::raster::RgbImage::from_fn(w, h, |_, _| [rng.random(), rng.random(), rng.random()])
}

/// Mean absolute descriptor error plus mean absolute shading error of the
/// basis composition, summed term by term.
pub fn brute_force_bie_loss(
    pred: &shadefield::envlight::IlluminationDescriptor,
    gt: &shadefield::envlight::IlluminationDescriptor,
    bases: &shadefield::shading_field::ShadingBases,
    gt_shading: &shadefield::raster::RgbImage,
) -> f64 {
    let k = bases.k();
    let n = bases.width * bases.height;
    let mut desc = 0.0;
    for c in 0..3 {
        for j in 0..k {
            desc += (pred.l[c][j] - gt.l[c][j]).abs();
        }
    }
    desc /= (3 * k) as f64;
    let mut shade = 0.0;
    for p in 0..n {
        for c in 0..3 {
            let mut s = 0.0;
            for j in 0..k {
                s += pred.l[c][j] * bases.data[j * n + p];
            }
            shade += (s - gt_shading.data[p][c]).abs();
        }
    }
    desc + shade / (3 * n) as f64
}
