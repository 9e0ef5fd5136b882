//! Synthetic harmonization dataset: procedural scenes and skies, direct
//! lighting renders, background crops, placement and paired tuples.

mod placement;
mod scene;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use placement::{
    place_object, resample_layers, sample_placement, PlacedLayers, PlacementRecord,
    PlanarAnnotation, MIN_PLACED_SIZE, MIN_VISIBLE_FRACTION, SCALE_RANGE,
};
pub use scene::{
    camera_rotation, crop_background, ground_plane_in_camera, rasterize, render_object,
    render_object_rotated, CameraSpec, Material, ObjectRender, Primitive, SceneSpec, Shape,
    DEFAULT_RENDER_HEIGHT, DEFAULT_RENDER_WIDTH,
};

use crate::envlight::{procedural_sky, rotate_envmap, EnvMap, SkyCondition, SkyParams};
use crate::error::{Error, Result};
use crate::geometry::DepthMap;
use crate::harmonize::composite;
use crate::io::{self, CameraInfo};
use crate::raster::{Albedo, LinearImage, Mask, Shading};
use crate::shading_field::ShadowConfig;

/// Candidate rotations are multiples of this step.
pub const ROTATION_STEP_DEG: f64 = 45.0;
pub const ROTATION_CANDIDATES: usize = 8;
pub const ANGLES_PER_PAIR: usize = 4;

#[derive(Debug, Clone)]
pub struct NamedEnv {
    pub id: String,
    /// Free-form lighting tag such as `sunny` or `night`.
    pub condition: String,
    pub env: EnvMap,
}

/// Procedural skies cycling through the sky conditions.
pub fn random_envs(count: usize, seed: u64, size: (usize, usize)) -> Result<Vec<NamedEnv>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let cond = SkyCondition::ALL[i % SkyCondition::ALL.len()];
            let params = SkyParams::random(cond, &mut rng);
            Ok(NamedEnv {
                id: format!("env{i:03}"),
                condition: cond.tag().to_string(),
                env: procedural_sky(&params, size.0, size.1)?,
            })
        })
        .collect()
}

pub fn random_scenes(count: usize, seed: u64) -> Vec<SceneSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| SceneSpec::random(&mut rng)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForgeConfig {
    pub seed: u64,
    pub render_size: (usize, usize),
    pub bg_size: (usize, usize),
    pub fov_deg: f64,
    pub shadow: ShadowConfig,
    pub split: String,
}

impl Default for ForgeConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            render_size: (DEFAULT_RENDER_WIDTH, DEFAULT_RENDER_HEIGHT),
            bg_size: (DEFAULT_RENDER_WIDTH, DEFAULT_RENDER_HEIGHT),
            fov_deg: 60.0,
            shadow: ShadowConfig::default(),
            split: "train".into(),
        }
    }
}

/// One planned tuple before rendering.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TuplePlan {
    pub scene: usize,
    /// Illumination of the ground truth and of the background.
    pub env: usize,
    /// Illumination of the unharmonized input.
    pub src_env: usize,
    pub rotation_deg: u32,
    pub placement_seed: u64,
}

/// For every scene, half of the environments (rounded down) are drawn
/// without replacement and each gets four distinct rotations out of eight;
/// the input illumination is a uniformly drawn different environment.
pub fn plan_tuples(scenes: usize, envs: usize, seed: u64) -> Result<Vec<TuplePlan>> {
    if envs < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 environments, got {envs}"
        )));
    }
    if scenes == 0 {
        return Err(Error::InvalidInput("need at least one scene".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for s in 0..scenes {
        let mut chosen = sample(&mut rng, envs, envs / 2).into_vec();
        chosen.sort_unstable();
        for e in chosen {
            let mut angles = sample(&mut rng, ROTATION_CANDIDATES, ANGLES_PER_PAIR).into_vec();
            angles.sort_unstable();
            for a in angles {
                let r = rng.random_range(0..envs - 1);
                let src_env = if r >= e { r + 1 } else { r };
                out.push(TuplePlan {
                    scene: s,
                    env: e,
                    src_env,
                    rotation_deg: (a as f64 * ROTATION_STEP_DEG) as u32,
                    placement_seed: rng.random(),
                });
            }
        }
    }
    Ok(out)
}

/// A paired example: the same placed object under the background's
/// illumination (ground truth) and under another one (input).
#[derive(Debug, Clone)]
pub struct HarmonyTuple {
    pub id: String,
    pub plan: TuplePlan,
    pub env_id: String,
    pub src_env_id: String,
    pub condition: String,
    pub placement: PlacementRecord,
    pub camera: CameraInfo,
    pub unharmonized: LinearImage,
    pub harmonized_gt: LinearImage,
    pub background: LinearImage,
    pub mask: Mask,
    pub depth: DepthMap,
    pub albedo: Albedo,
    pub shading_gt: Shading,
    pub src_shading: Shading,
}

/// Renders and composites every planned tuple. Renders are shared between
/// tuples with the same scene, environment and rotation.
pub fn build_tuples(
    scenes: &[SceneSpec],
    envs: &[NamedEnv],
    cfg: &ForgeConfig,
    annotations: &BTreeMap<String, PlanarAnnotation>,
) -> Result<Vec<HarmonyTuple>> {
    let plans = plan_tuples(scenes.len(), envs.len(), cfg.seed)?;
    build_planned(scenes, envs, cfg, annotations, &plans)
}

pub fn build_planned(
    scenes: &[SceneSpec],
    envs: &[NamedEnv],
    cfg: &ForgeConfig,
    annotations: &BTreeMap<String, PlanarAnnotation>,
    plans: &[TuplePlan],
) -> Result<Vec<HarmonyTuple>> {
    let mut keys: Vec<(usize, usize, u32)> = plans
        .iter()
        .flat_map(|p| {
            [
                (p.scene, p.env, p.rotation_deg),
                (p.scene, p.src_env, p.rotation_deg),
            ]
        })
        .collect();
    keys.sort_unstable();
    keys.dedup();
    let renders: Vec<ObjectRender> = keys
        .par_iter()
        .map(|&(s, e, a)| {
            render_object(
                &scenes[s],
                &envs[e].env,
                a as f64,
                cfg.render_size,
                &cfg.shadow,
            )
        })
        .collect::<Result<_>>()?;
    let cache: BTreeMap<(usize, usize, u32), &ObjectRender> =
        keys.iter().copied().zip(renders.iter()).collect();
    plans
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let gt = cache[&(p.scene, p.env, p.rotation_deg)];
            let src = cache[&(p.scene, p.src_env, p.rotation_deg)];
            let named = &envs[p.env];
            let bg = crop_background(&named.env, p.rotation_deg as f64, cfg.fov_deg, cfg.bg_size)?;
            let band;
            let ann = match annotations.get(&named.id) {
                Some(a) => a,
                None => {
                    band = PlanarAnnotation::horizon_band(cfg.bg_size.0, cfg.bg_size.1);
                    &band
                }
            };
            let record = sample_placement(&gt.mask, cfg.bg_size, ann, p.placement_seed)?;
            let placed = resample_layers(
                &record,
                &gt.mask,
                &[&gt.image, &src.image, &gt.albedo, &gt.shading, &src.shading],
                Some(&gt.depth),
                cfg.bg_size,
            )?;
            let [gt_img, src_img, albedo, shading_gt, src_shading]: [LinearImage; 5] = placed
                .layers
                .try_into()
                .map_err(|_| Error::Internal("layer count".into()))?;
            let harmonized_gt = composite(&gt_img, &bg, &placed.mask)?;
            let unharmonized = composite(&src_img, &bg, &placed.mask)?;
            let intrinsics = record.intrinsics(&gt.intrinsics, cfg.bg_size)?;
            Ok(HarmonyTuple {
                id: format!("t{i:05}"),
                plan: p.clone(),
                env_id: named.id.clone(),
                src_env_id: envs[p.src_env].id.clone(),
                condition: named.condition.clone(),
                placement: record,
                camera: CameraInfo::new(intrinsics, &gt.camera_to_world, Some(gt.ground_plane)),
                unharmonized,
                harmonized_gt,
                background: bg,
                mask: placed.mask,
                depth: placed.depth,
                albedo,
                shading_gt,
                src_shading,
            })
        })
        .collect()
}

/// Environment after the tuple's rotation, i.e. the light the object sees.
pub fn rotated_env(envs: &[NamedEnv], index: usize, rotation_deg: u32) -> EnvMap {
    rotate_envmap(&envs[index].env, rotation_deg as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TupleMeta {
    pub id: String,
    pub split: String,
    pub condition: String,
    pub scene: usize,
    pub env_id: String,
    pub src_env_id: String,
    pub rotation_deg: u32,
    pub placement: PlacementRecord,
    pub camera: CameraInfo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvEntry {
    pub id: String,
    pub condition: String,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub dir: String,
    pub split: String,
    pub condition: String,
    pub env_id: String,
    pub src_env_id: String,
    pub rotation_deg: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub split: String,
    pub render_size: (usize, usize),
    pub bg_size: (usize, usize),
    pub fov_deg: f64,
    pub envs: Vec<EnvEntry>,
    pub tuples: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes `root/tuples/<id>/…`, `root/envs/<id>.pfm`, `root/scenes.json`
/// and `root/manifest.json`.
pub fn write_dataset(
    root: &Path,
    tuples: &[HarmonyTuple],
    scenes: &[SceneSpec],
    envs: &[NamedEnv],
    cfg: &ForgeConfig,
) -> Result<Manifest> {
    let mut env_entries = Vec::with_capacity(envs.len());
    for e in envs {
        let file = format!("envs/{}.pfm", e.id);
        io::write_rgb_pfm(&root.join(&file), &e.env.radiance)?;
        env_entries.push(EnvEntry {
            id: e.id.clone(),
            condition: e.condition.clone(),
            file,
        });
    }
    io::write_json(&root.join("scenes.json"), &scenes)?;
    tuples
        .par_iter()
        .map(|t| write_tuple(&root.join("tuples").join(&t.id), t, &cfg.split))
        .collect::<Result<Vec<()>>>()?;
    let manifest = Manifest {
        seed: cfg.seed,
        split: cfg.split.clone(),
        render_size: cfg.render_size,
        bg_size: cfg.bg_size,
        fov_deg: cfg.fov_deg,
        envs: env_entries,
        tuples: tuples
            .iter()
            .map(|t| ManifestEntry {
                id: t.id.clone(),
                dir: format!("tuples/{}", t.id),
                split: cfg.split.clone(),
                condition: t.condition.clone(),
                env_id: t.env_id.clone(),
                src_env_id: t.src_env_id.clone(),
                rotation_deg: t.plan.rotation_deg,
            })
            .collect(),
    };
    io::write_json(&root.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

fn write_tuple(dir: &Path, t: &HarmonyTuple, split: &str) -> Result<()> {
    io::write_png(&dir.join("composite.png"), &t.unharmonized)?;
    io::write_png(&dir.join("gt.png"), &t.harmonized_gt)?;
    io::write_mask_png(&dir.join("mask.png"), &t.mask)?;
    io::write_depth_pfm(&dir.join("depth.pfm"), &t.depth)?;
    io::write_rgb_pfm(&dir.join("albedo.pfm"), &t.albedo)?;
    io::write_rgb_pfm(&dir.join("shading.pfm"), &t.shading_gt)?;
    io::write_rgb_pfm(&dir.join("composite.pfm"), &t.unharmonized)?;
    io::write_rgb_pfm(&dir.join("gt.pfm"), &t.harmonized_gt)?;
    io::write_rgb_pfm(&dir.join("src_shading.pfm"), &t.src_shading)?;
    io::write_rgb_pfm(&dir.join("background.pfm"), &t.background)?;
    let meta = TupleMeta {
        id: t.id.clone(),
        split: split.to_string(),
        condition: t.condition.clone(),
        scene: t.plan.scene,
        env_id: t.env_id.clone(),
        src_env_id: t.src_env_id.clone(),
        rotation_deg: t.plan.rotation_deg,
        placement: t.placement.clone(),
        camera: t.camera,
    };
    io::write_json(&dir.join("meta.json"), &meta)
}

/// A tuple read back from disk (linear PFM copies).
#[derive(Debug, Clone)]
pub struct StoredTuple {
    pub dir: PathBuf,
    pub meta: TupleMeta,
    pub composite: LinearImage,
    pub gt: LinearImage,
    pub background: LinearImage,
    pub mask: Mask,
    pub depth: DepthMap,
    pub albedo: Albedo,
    pub shading: Shading,
    pub src_shading: Shading,
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    io::read_json(path)
}

pub fn load_tuple(root: &Path, entry: &ManifestEntry) -> Result<StoredTuple> {
    let dir = root.join(&entry.dir);
    Ok(StoredTuple {
        meta: io::read_json(&dir.join("meta.json"))?,
        composite: io::read_rgb_pfm(&dir.join("composite.pfm"))?,
        gt: io::read_rgb_pfm(&dir.join("gt.pfm"))?,
        background: io::read_rgb_pfm(&dir.join("background.pfm"))?,
        mask: io::read_mask_png(&dir.join("mask.png"))?,
        depth: io::read_depth_pfm(&dir.join("depth.pfm"))?,
        albedo: io::read_rgb_pfm(&dir.join("albedo.pfm"))?,
        shading: io::read_rgb_pfm(&dir.join("shading.pfm"))?,
        src_shading: io::read_rgb_pfm(&dir.join("src_shading.pfm"))?,
        dir,
    })
}

pub fn load_env(root: &Path, entry: &EnvEntry) -> Result<EnvMap> {
    io::read_envmap(&root.join(&entry.file))
}
