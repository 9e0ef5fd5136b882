//! Albedo recovery, re-rendering and the full harmonization pipeline.
//!
//! All arithmetic is on linear radiance. The foreground albedo is recovered
//! by Lambertian inversion against the shading it was captured under, then
//! re-lit with shading composed from the target descriptor.

use std::collections::VecDeque;

use nalgebra::Matrix3;

use crate::envlight::IlluminationDescriptor;
use crate::error::{Error, Result};
use crate::geometry::{DepthMap, Intrinsics, DEFAULT_WINDOW_RADIUS};
use crate::raster::{Albedo, LinearImage, Mask, RgbImage, Shading};
use crate::shading_field::{
    compose_shading, shading_bases, ShadingBases, ShadowConfig, SurfaceGeometry,
};

pub const DEFAULT_ALBEDO_EPS: f64 = 1e-3;

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "albedo eps must be positive, got {eps}"
        )));
    }
    Ok(())
}

/// `a_c = clamp(img_c / max(S_c, eps), 0, 1)`.
pub fn albedo_from_image(img: &LinearImage, shading: &Shading, eps: f64) -> Result<Albedo> {
    check_eps(eps)?;
    shading.check_same_dims(img.dims(), "shading vs image")?;
    let data = img
        .data
        .iter()
        .zip(&shading.data)
        .map(|(p, s)| [0, 1, 2].map(|c| (p[c] / s[c].max(eps)).clamp(0.0, 1.0)))
        .collect();
    RgbImage::from_data(img.width, img.height, data)
}

/// Replaces the albedo of foreground pixels whose shading is below `eps` in
/// any channel with the albedo of the nearest well-lit foreground pixel
/// (4-connected breadth-first distance). Pixels with no reachable source keep
/// their value.
pub fn fill_shadow_floor(
    albedo: &mut Albedo,
    shading: &Shading,
    eps: f64,
    mask: &Mask,
) -> Result<()> {
    shading.check_same_dims(albedo.dims(), "shading vs albedo")?;
    if mask.dims() != albedo.dims() {
        return Err(Error::dims(
            "mask vs albedo",
            format!("{}x{}", albedo.width, albedo.height),
            format!("{}x{}", mask.width, mask.height),
        ));
    }
    let (w, h) = albedo.dims();
    let lit = |i: usize| shading.data[i].iter().all(|&s| s >= eps);
    let mut done: Vec<bool> = (0..w * h).map(|i| !mask.is_fg(i) || lit(i)).collect();
    let mut queue: VecDeque<usize> = (0..w * h).filter(|&i| mask.is_fg(i) && lit(i)).collect();
    while let Some(i) = queue.pop_front() {
        let (x, y) = (i % w, i / w);
        let mut visit = |j: usize| {
            if !done[j] {
                done[j] = true;
                albedo.data[j] = albedo.data[i];
                queue.push_back(j);
            }
        };
        if x > 0 {
            visit(i - 1);
        }
        if x + 1 < w {
            visit(i + 1);
        }
        if y > 0 {
            visit(i - w);
        }
        if y + 1 < h {
            visit(i + w);
        }
    }
    Ok(())
}

/// Elementwise `albedo ⊙ shading`.
pub fn render_image(albedo: &Albedo, shading: &Shading) -> Result<LinearImage> {
    shading.check_same_dims(albedo.dims(), "shading vs albedo")?;
    let data = albedo
        .data
        .iter()
        .zip(&shading.data)
        .map(|(a, s)| [a[0] * s[0], a[1] * s[1], a[2] * s[2]])
        .collect();
    RgbImage::from_data(albedo.width, albedo.height, data)
}

/// `m·fg + (1 − m)·bg`. Pixels with `m = 0` copy `bg` and pixels with
/// `m = 1` copy `fg` bit for bit.
pub fn composite(fg: &LinearImage, bg: &LinearImage, mask: &Mask) -> Result<LinearImage> {
    bg.check_same_dims(fg.dims(), "background vs foreground")?;
    if mask.dims() != fg.dims() {
        return Err(Error::dims(
            "mask",
            format!("{}x{}", fg.width, fg.height),
            format!("{}x{}", mask.width, mask.height),
        ));
    }
    let data = (0..fg.len())
        .map(|i| {
            let m = mask.data[i];
            if m <= 0.0 {
                bg.data[i]
            } else if m >= 1.0 {
                fg.data[i]
            } else {
                [0, 1, 2].map(|c| m * fg.data[i][c] + (1.0 - m) * bg.data[i][c])
            }
        })
        .collect();
    RgbImage::from_data(fg.width, fg.height, data)
}

/// Inputs of one harmonization run.
#[derive(Debug, Clone)]
pub struct HarmonizeRequest<'a> {
    pub composite: &'a LinearImage,
    pub mask: &'a Mask,
    /// Foreground depth in the composite's camera; background pixels invalid.
    pub depth: &'a DepthMap,
    pub intrinsics: Intrinsics,
    pub camera_to_world: Matrix3<f64>,
    /// Expected number of descriptor cells.
    pub k: usize,
    /// Shading the foreground was captured under.
    pub src_shading: &'a Shading,
    pub target: &'a IlluminationDescriptor,
    pub shadow: ShadowConfig,
    pub window_radius: usize,
    pub eps: f64,
}

impl<'a> HarmonizeRequest<'a> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        composite: &'a LinearImage,
        mask: &'a Mask,
        depth: &'a DepthMap,
        intrinsics: Intrinsics,
        camera_to_world: Matrix3<f64>,
        src_shading: &'a Shading,
        target: &'a IlluminationDescriptor,
    ) -> Self {
        Self {
            composite,
            mask,
            depth,
            intrinsics,
            camera_to_world,
            k: target.k,
            src_shading,
            target,
            shadow: ShadowConfig::default(),
            window_radius: DEFAULT_WINDOW_RADIUS,
            eps: DEFAULT_ALBEDO_EPS,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Harmonized {
    pub image: LinearImage,
    pub shading: Shading,
    pub albedo: Albedo,
}

/// Depth → normals → bases → target shading, then re-renders the foreground
/// and composites it over the input.
pub fn harmonize(req: &HarmonizeRequest) -> Result<Harmonized> {
    if req.target.k != req.k || req.target.partition.k() != req.k {
        return Err(Error::PartitionMismatch(format!(
            "expected K={}, descriptor has K={}",
            req.k, req.target.k
        )));
    }
    if req.mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    let geom = SurfaceGeometry::from_depth(
        req.depth.clone(),
        req.intrinsics,
        req.camera_to_world,
        req.window_radius,
    )?;
    let bases = shading_bases(&geom, &req.target.partition, &req.shadow)?;
    harmonize_with_bases(
        req.composite,
        req.mask,
        &bases,
        req.src_shading,
        req.target,
        req.eps,
    )
}

/// The pipeline after basis generation, for callers that reuse bases.
pub fn harmonize_with_bases(
    composite_img: &LinearImage,
    mask: &Mask,
    bases: &ShadingBases,
    src_shading: &Shading,
    target: &IlluminationDescriptor,
    eps: f64,
) -> Result<Harmonized> {
    if mask.dims() != composite_img.dims() {
        return Err(Error::dims(
            "mask",
            format!("{}x{}", composite_img.width, composite_img.height),
            format!("{}x{}", mask.width, mask.height),
        ));
    }
    if (bases.width, bases.height) != composite_img.dims() {
        return Err(Error::dims(
            "shading bases",
            format!("{}x{}", composite_img.width, composite_img.height),
            format!("{}x{}", bases.width, bases.height),
        ));
    }
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    let shading = compose_shading(bases, target)?;
    let mut albedo = albedo_from_image(composite_img, src_shading, eps)?;
    fill_shadow_floor(&mut albedo, src_shading, eps, mask)?;
    let fg = render_image(&albedo, &shading)?;
    let image = composite(&fg, composite_img, mask)?;
    Ok(Harmonized {
        image,
        shading,
        albedo,
    })
}
