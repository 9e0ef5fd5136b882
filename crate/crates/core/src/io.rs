//! File formats: PFM (linear float), 8-bit sRGB PNG, Radiance RGBE and JSON.
//!
//! PFM files are written little-endian (scale `-1.0`) with rows stored
//! bottom-to-top as the format prescribes. Invalid depth is stored as `0`.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::Matrix3;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::envlight::{BasisPartition, EnvMap};
use crate::error::{Error, Result};
use crate::geometry::{DepthMap, Intrinsics};
use crate::raster::{from_display, srgb_encode, Mask, RgbImage};
use crate::shading_field::{Plane, ShadingBases};

/// Decoded PFM payload: `channels` interleaved floats, top row first.
#[derive(Debug, Clone, PartialEq)]
pub struct Pfm {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

pub fn write_pfm(
    path: &Path,
    width: usize,
    height: usize,
    channels: usize,
    data: &[f32],
) -> Result<()> {
    assert!(channels == 1 || channels == 3);
    if data.len() != width * height * channels {
        return Err(Error::dims(
            "pfm payload",
            width * height * channels,
            data.len(),
        ));
    }
    let mut buf = Vec::with_capacity(32 + data.len() * 4);
    write!(
        buf,
        "{}\n{} {}\n-1.0\n",
        if channels == 3 { "PF" } else { "Pf" },
        width,
        height
    )
    .expect("write to vec");
    for y in (0..height).rev() {
        let row = &data[y * width * channels..(y + 1) * width * channels];
        for v in row {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    write_bytes(path, &buf)
}

fn header_token<R: BufRead>(r: &mut R, path: &Path) -> Result<String> {
    let mut tok = String::new();
    let mut byte = [0u8; 1];
    loop {
        let n = r.read(&mut byte).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        let c = byte[0] as char;
        if c.is_ascii_whitespace() {
            if tok.is_empty() {
                continue;
            }
            break;
        }
        tok.push(c);
    }
    if tok.is_empty() {
        return Err(Error::format(path, "truncated PFM header"));
    }
    Ok(tok)
}

pub fn read_pfm(path: &Path) -> Result<Pfm> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(f);
    let magic = header_token(&mut r, path)?;
    let channels = match magic.as_str() {
        "PF" => 3,
        "Pf" => 1,
        other => {
            return Err(Error::format(
                path,
                format!("not a PFM file (magic {other:?})"),
            ))
        }
    };
    let parse = |t: String, what: &str| -> Result<f64> {
        t.parse::<f64>()
            .map_err(|_| Error::format(path, format!("bad PFM {what}: {t:?}")))
    };
    let width = parse(header_token(&mut r, path)?, "width")? as usize;
    let height = parse(header_token(&mut r, path)?, "height")? as usize;
    let scale = parse(header_token(&mut r, path)?, "scale")?;
    if width == 0 || height == 0 || scale == 0.0 {
        return Err(Error::format(path, "PFM header has zero size or scale"));
    }
    let little = scale < 0.0;
    let n = width * height * channels;
    let mut raw = vec![0u8; n * 4];
    r.read_exact(&mut raw)
        .map_err(|_| Error::format(path, format!("PFM payload shorter than {n} floats")))?;
    let mut data = vec![0f32; n];
    for y in 0..height {
        let src_row = height - 1 - y;
        for i in 0..width * channels {
            let o = (src_row * width * channels + i) * 4;
            let b = [raw[o], raw[o + 1], raw[o + 2], raw[o + 3]];
            data[y * width * channels + i] = if little {
                f32::from_le_bytes(b)
            } else {
                f32::from_be_bytes(b)
            };
        }
    }
    Ok(Pfm {
        width,
        height,
        channels,
        data,
    })
}

pub fn write_rgb_pfm(path: &Path, img: &RgbImage) -> Result<()> {
    let data: Vec<f32> = img.data.iter().flat_map(|p| p.map(|v| v as f32)).collect();
    write_pfm(path, img.width, img.height, 3, &data)
}

pub fn read_rgb_pfm(path: &Path) -> Result<RgbImage> {
    let p = read_pfm(path)?;
    let data = match p.channels {
        3 => p
            .data
            .chunks_exact(3)
            .map(|c| [c[0] as f64, c[1] as f64, c[2] as f64])
            .collect(),
        _ => p.data.iter().map(|&v| [v as f64; 3]).collect(),
    };
    RgbImage::from_data(p.width, p.height, data)
}

pub fn write_gray_pfm(path: &Path, width: usize, height: usize, values: &[f64]) -> Result<()> {
    let data: Vec<f32> = values.iter().map(|v| *v as f32).collect();
    write_pfm(path, width, height, 1, &data)
}

pub fn read_gray_pfm(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let p = read_pfm(path)?;
    if p.channels != 1 {
        return Err(Error::format(path, "expected a single-channel PFM"));
    }
    Ok((
        p.width,
        p.height,
        p.data.iter().map(|v| *v as f64).collect(),
    ))
}

pub fn write_depth_pfm(path: &Path, depth: &DepthMap) -> Result<()> {
    let vals: Vec<f64> = depth
        .values
        .iter()
        .zip(&depth.valid)
        .map(|(z, ok)| if *ok { *z } else { 0.0 })
        .collect();
    write_gray_pfm(path, depth.width, depth.height, &vals)
}

pub fn read_depth_pfm(path: &Path) -> Result<DepthMap> {
    let (w, h, vals) = read_gray_pfm(path)?;
    DepthMap::new(w, h, vals)
}

/// Linear image to 8-bit sRGB PNG.
pub fn write_png(path: &Path, img: &RgbImage) -> Result<()> {
    let bytes: Vec<u8> = img
        .data
        .iter()
        .flat_map(|p| p.map(|v| (srgb_encode(v) * 255.0).round() as u8))
        .collect();
    ensure_parent(path)?;
    image::save_buffer(
        path,
        &bytes,
        img.width as u32,
        img.height as u32,
        image::ColorType::Rgb8,
    )
    .map_err(|e| Error::format(path, e.to_string()))
}

/// 8-bit sRGB PNG to linear image.
pub fn read_png(path: &Path) -> Result<RgbImage> {
    let img = image::open(path)
        .map_err(|e| Error::format(path, e.to_string()))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img
        .pixels()
        .map(|p| p.0.map(|v| v as f64 / 255.0))
        .collect();
    Ok(from_display(&RgbImage::from_data(w, h, data)?))
}

pub fn write_mask_png(path: &Path, mask: &Mask) -> Result<()> {
    let bytes: Vec<u8> = mask
        .data
        .iter()
        .map(|m| (m.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    ensure_parent(path)?;
    image::save_buffer(
        path,
        &bytes,
        mask.width as u32,
        mask.height as u32,
        image::ColorType::L8,
    )
    .map_err(|e| Error::format(path, e.to_string()))
}

pub fn read_mask_png(path: &Path) -> Result<Mask> {
    let img = image::open(path)
        .map_err(|e| Error::format(path, e.to_string()))?
        .to_luma8();
    Ok(Mask {
        width: img.width() as usize,
        height: img.height() as usize,
        data: img.pixels().map(|p| p.0[0] as f64 / 255.0).collect(),
    })
}

/// Linear image by extension: `.pfm` as-is, anything else decoded as sRGB.
pub fn read_image(path: &Path) -> Result<RgbImage> {
    match extension(path).as_str() {
        "pfm" => read_rgb_pfm(path),
        _ => read_png(path),
    }
}

/// Environment map from PFM or Radiance `.hdr` (RGBE).
pub fn read_envmap(path: &Path) -> Result<EnvMap> {
    let radiance = match extension(path).as_str() {
        "pfm" => read_rgb_pfm(path)?,
        "hdr" | "pic" => read_rgbe(path)?,
        other => {
            return Err(Error::format(
                path,
                format!("unsupported environment map extension {other:?}"),
            ))
        }
    };
    EnvMap::new(radiance).map_err(|e| Error::format(path, e.to_string()))
}

fn read_rgbe(path: &Path) -> Result<RgbImage> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let img = image::ImageReader::with_format(BufReader::new(f), image::ImageFormat::Hdr)
        .decode()
        .map_err(|e| Error::format(path, e.to_string()))?
        .to_rgb32f();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.pixels().map(|p| p.0.map(|v| v as f64)).collect();
    RgbImage::from_data(w, h, data)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Internal(e.to_string()))?;
    s.push('\n');
    write_bytes(path, s.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    Ok(())
}

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase()
}

/// Camera of a composite: intrinsics, camera-to-world rotation (row-major)
/// and the ground plane in camera coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraInfo {
    pub intrinsics: Intrinsics,
    pub camera_to_world: [[f64; 3]; 3],
    #[serde(default)]
    pub ground_plane: Option<Plane>,
}

impl CameraInfo {
    pub fn new(
        intrinsics: Intrinsics,
        camera_to_world: &Matrix3<f64>,
        ground_plane: Option<Plane>,
    ) -> Self {
        let r = camera_to_world;
        Self {
            intrinsics,
            camera_to_world: [0, 1, 2].map(|i| [r[(i, 0)], r[(i, 1)], r[(i, 2)]]),
            ground_plane,
        }
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        let m = &self.camera_to_world;
        Matrix3::from_fn(|i, j| m[i][j])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BasesMeta {
    #[serde(rename = "K")]
    k: usize,
    partition: BasisPartition,
    width: usize,
    height: usize,
    samples_per_cell: usize,
    geometry_hash: u64,
}

/// Writes `dir/meta.json` and one single-channel `dir/SB_<k>.pfm` per cell.
pub fn write_bases(dir: &Path, bases: &ShadingBases) -> Result<()> {
    let meta = BasesMeta {
        k: bases.k(),
        partition: bases.partition,
        width: bases.width,
        height: bases.height,
        samples_per_cell: bases.samples_per_cell,
        geometry_hash: bases.geometry_hash,
    };
    write_json(&dir.join("meta.json"), &meta)?;
    for k in 0..bases.k() {
        write_gray_pfm(
            &dir.join(format!("SB_{k}.pfm")),
            bases.width,
            bases.height,
            bases.basis(k),
        )?;
    }
    Ok(())
}

pub fn read_bases(dir: &Path) -> Result<ShadingBases> {
    let meta: BasesMeta = read_json(&dir.join("meta.json"))?;
    meta.partition.validate()?;
    if meta.partition.k() != meta.k {
        return Err(Error::format(
            &dir.join("meta.json"),
            "K does not match the partition",
        ));
    }
    let n = meta.width * meta.height;
    let mut data = Vec::with_capacity(meta.k * n);
    for k in 0..meta.k {
        let path = dir.join(format!("SB_{k}.pfm"));
        let (w, h, values) = read_gray_pfm(&path)?;
        if (w, h) != (meta.width, meta.height) {
            return Err(Error::format(
                &path,
                format!("expected {}x{}, found {w}x{h}", meta.width, meta.height),
            ));
        }
        data.extend(values);
    }
    Ok(ShadingBases {
        partition: meta.partition,
        width: meta.width,
        height: meta.height,
        samples_per_cell: meta.samples_per_cell,
        geometry_hash: meta.geometry_hash,
        data,
    })
}
