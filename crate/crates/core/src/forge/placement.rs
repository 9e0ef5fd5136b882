//! Planar annotations and object placement into background crops.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{DepthMap, Intrinsics};
use crate::harmonize::composite;
use crate::raster::{bilinear_masked, LinearImage, Mask, RgbImage};

/// Smallest allowed placed object side, pixels.
pub const MIN_PLACED_SIZE: f64 = 8.0;
pub const SCALE_RANGE: (f64, f64) = (0.3, 0.8);

/// Ground-plane regions of a background crop as polygons in pixel
/// coordinates (pixel centers at integer + ½).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PlanarAnnotation {
    pub polygons: Vec<Vec<[f64; 2]>>,
}

fn point_in_polygon(poly: &[[f64; 2]], x: f64, y: f64) -> bool {
    let mut inside = false;
    let n = poly.len();
    for i in 0..n {
        let [xi, yi] = poly[i];
        let [xj, yj] = poly[(i + n - 1) % n];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
    }
    inside
}

impl PlanarAnnotation {
    /// Band of ground rows below the horizon of a level camera.
    pub fn horizon_band(width: usize, height: usize) -> Self {
        let (w, h) = (width as f64, height as f64);
        let top = 0.6 * h;
        let bottom = 0.95 * h;
        Self {
            polygons: vec![vec![[0.0, top], [w, top], [w, bottom], [0.0, bottom]]],
        }
    }

    /// Pixels whose centers fall inside any polygon, row-major.
    pub fn pixels(&self, width: usize, height: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for y in 0..height {
            for x in 0..width {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                if self
                    .polygons
                    .iter()
                    .any(|p| p.len() >= 3 && point_in_polygon(p, px, py))
                {
                    out.push((x, y));
                }
            }
        }
        out
    }
}

/// Where and how big the object was pasted. The bottom-left corner of the
/// tight object crop lands on the bottom-left corner of `pixel`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementRecord {
    pub pixel: [usize; 2],
    pub scale: f64,
    pub corner: String,
    /// Tight crop `[x0, y0, x1, y1)` of the object in its render.
    pub crop: [usize; 4],
    pub seed: u64,
}

impl PlacementRecord {
    /// Source render coordinates of the target pixel center `(x, y)`.
    fn source(&self, x: usize, y: usize) -> (f64, f64) {
        let s = self.scale;
        let [tx, ty] = self.pixel;
        let [x0, _, _, y1] = self.crop;
        (
            (x as f64 + 0.5 - tx as f64) / s + x0 as f64 - 0.5,
            (y as f64 - 0.5 - ty as f64) / s + y1 as f64 - 0.5,
        )
    }

    /// Intrinsics of the composite, so that every placed pixel keeps the
    /// viewing ray it had in the render.
    pub fn intrinsics(&self, render: &Intrinsics, bg_size: (usize, usize)) -> Result<Intrinsics> {
        let s = self.scale;
        let [tx, ty] = self.pixel;
        let [x0, _, _, y1] = self.crop;
        Intrinsics::new(
            s * render.fx,
            s * render.fy,
            s * (render.cx - x0 as f64 + 0.5) + tx as f64 - 0.5,
            s * (render.cy - y1 as f64 + 0.5) + ty as f64 + 0.5,
            bg_size.0,
            bg_size.1,
        )
    }
}

/// Placements keeping less than this fraction of the scaled object box
/// inside the frame are redrawn.
pub const MIN_VISIBLE_FRACTION: f64 = 0.5;
const MAX_DRAWS: usize = 64;

/// Draws a target pixel from the annotation and a scale in
/// `[0.3, 0.8] · bg_height / crop_height`, redrawing while the object would
/// be mostly clipped by the frame.
pub fn sample_placement(
    mask: &Mask,
    bg_size: (usize, usize),
    ann: &PlanarAnnotation,
    seed: u64,
) -> Result<PlacementRecord> {
    let (x0, y0, x1, y1) = mask.bbox().ok_or(Error::EmptyMask)?;
    let candidates = ann.pixels(bg_size.0, bg_size.1);
    if candidates.is_empty() {
        return Err(Error::InvalidInput(
            "planar annotation covers no background pixel".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = bg_size.1 as f64 / (y1 - y0) as f64;
    let mut last = None;
    for _ in 0..MAX_DRAWS {
        let (tx, ty) = candidates[rng.random_range(0..candidates.len())];
        let scale = base * rng.random_range(SCALE_RANGE.0..SCALE_RANGE.1);
        let record = PlacementRecord {
            pixel: [tx, ty],
            scale,
            corner: "bottom_left".into(),
            crop: [x0, y0, x1, y1],
            seed,
        };
        check_size(&record)?;
        if visible_fraction(&record, bg_size) >= MIN_VISIBLE_FRACTION {
            return Ok(record);
        }
        last = Some(record);
    }
    last.ok_or_else(|| Error::Internal("no placement drawn".into()))
}

/// Fraction of the scaled object box that lies inside the frame.
fn visible_fraction(r: &PlacementRecord, bg_size: (usize, usize)) -> f64 {
    let [x0, y0, x1, y1] = r.crop;
    let w = r.scale * (x1 - x0) as f64;
    let h = r.scale * (y1 - y0) as f64;
    let left = r.pixel[0] as f64;
    let bottom = r.pixel[1] as f64 + 1.0;
    let vis_w = (left + w).min(bg_size.0 as f64) - left.max(0.0);
    let vis_h = bottom.min(bg_size.1 as f64) - (bottom - h).max(0.0);
    (vis_w.max(0.0) * vis_h.max(0.0)) / (w * h)
}

fn check_size(r: &PlacementRecord) -> Result<()> {
    let [x0, y0, x1, y1] = r.crop;
    let (w, h) = (r.scale * (x1 - x0) as f64, r.scale * (y1 - y0) as f64);
    if !(r.scale > 0.0) || w < MIN_PLACED_SIZE || h < MIN_PLACED_SIZE {
        return Err(Error::InvalidInput(format!(
            "placed object would be {w:.1}x{h:.1} px, below {MIN_PLACED_SIZE} px"
        )));
    }
    Ok(())
}

/// Object layers resampled into the background frame.
#[derive(Debug, Clone)]
pub struct PlacedLayers {
    pub mask: Mask,
    pub layers: Vec<LinearImage>,
    pub depth: DepthMap,
}

/// Resamples `layers` (all aligned with `mask`) and `depth` into a
/// `bg_size` frame. Each output is a bilinear average over foreground taps
/// only; the output mask is the bilinear mask thresholded at ½.
pub fn resample_layers(
    record: &PlacementRecord,
    mask: &Mask,
    layers: &[&LinearImage],
    depth: Option<&DepthMap>,
    bg_size: (usize, usize),
) -> Result<PlacedLayers> {
    check_size(record)?;
    let (sw, sh) = mask.dims();
    for l in layers {
        l.check_same_dims((sw, sh), "object layer")?;
    }
    if let Some(d) = depth {
        if (d.width, d.height) != (sw, sh) {
            return Err(Error::dims(
                "object depth",
                format!("{sw}x{sh}"),
                format!("{}x{}", d.width, d.height),
            ));
        }
    }
    let (bw, bh) = bg_size;
    let mut out_mask = Mask::new(bw, bh);
    let mut outs: Vec<LinearImage> = layers.iter().map(|_| RgbImage::new(bw, bh)).collect();
    let mut depth_vals = vec![None; bw * bh];
    for y in 0..bh {
        for x in 0..bw {
            let (u, v) = record.source(x, y);
            let Some((_, mass)) = bilinear_masked(sw, sh, u, v, |i| mask.is_fg(i).then_some(1.0))
            else {
                continue;
            };
            if mass < 0.5 {
                continue;
            }
            let i = y * bw + x;
            out_mask.data[i] = 1.0;
            for (src, dst) in layers.iter().zip(outs.iter_mut()) {
                let mut p = [0.0; 3];
                for (c, pc) in p.iter_mut().enumerate() {
                    *pc = bilinear_masked(sw, sh, u, v, |j| mask.is_fg(j).then(|| src.data[j][c]))
                        .map_or(0.0, |r| r.0);
                }
                dst.data[i] = p;
            }
            if let Some(d) = depth {
                depth_vals[i] = bilinear_masked(sw, sh, u, v, |j| {
                    (mask.is_fg(j) && d.valid[j]).then(|| d.values[j])
                })
                .map(|r| r.0);
            }
        }
    }
    if out_mask.is_empty() {
        return Err(Error::InvalidInput(
            "placed object falls outside the background".into(),
        ));
    }
    let depth = DepthMap::from_fn(bw, bh, |x, y| depth_vals[y * bw + x]);
    Ok(PlacedLayers {
        mask: out_mask,
        layers: outs,
        depth,
    })
}

/// Places `fg` over `bg` and returns the composite, the placed mask and the
/// placement record.
pub fn place_object(
    fg_image: &LinearImage,
    fg_mask: &Mask,
    bg: &LinearImage,
    ann: &PlanarAnnotation,
    seed: u64,
) -> Result<(LinearImage, Mask, PlacementRecord)> {
    let record = sample_placement(fg_mask, bg.dims(), ann, seed)?;
    let placed = resample_layers(&record, fg_mask, &[fg_image], None, bg.dims())?;
    let out = composite(&placed.layers[0], bg, &placed.mask)?;
    Ok((out, placed.mask, record))
}
