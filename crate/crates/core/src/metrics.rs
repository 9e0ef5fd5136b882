//! Foreground-masked image metrics and the training objectives.
//!
//! `fmae`, `fpsnr` and `fssim` expect display-space inputs in `[0, 1]`
//! (see [`crate::raster::to_display`]). Foreground means mask value ≥ ½.
//!
//! SSIM uses an 11×11 Gaussian window (σ = 1.5) with `C1 = 0.01²`,
//! `C2 = 0.03²`. Window weights are restricted to the pixels that take part
//! in the measurement (the mask for `fssim`, the image for `ssim_map`) and
//! renormalized, so out-of-mask pixels never influence `fssim`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{to_display, LinearImage, Mask, RgbImage};

pub const PSNR_CAP_DB: f64 = 99.0;
pub const SSIM_RADIUS: usize = 5;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
pub const DEFAULT_LNR_LAMBDA: f64 = 1.0;

fn check_pair(a: &RgbImage, b: &RgbImage) -> Result<()> {
    b.check_same_dims(a.dims(), "metric operands")
}

fn check_mask(a: &RgbImage, mask: &Mask) -> Result<Vec<usize>> {
    if mask.dims() != a.dims() {
        return Err(Error::dims(
            "mask",
            format!("{}x{}", a.width, a.height),
            format!("{}x{}", mask.width, mask.height),
        ));
    }
    let idx: Vec<usize> = (0..mask.data.len()).filter(|&i| mask.is_fg(i)).collect();
    if idx.is_empty() {
        return Err(Error::EmptyMask);
    }
    Ok(idx)
}

/// Mean absolute error over foreground pixels and the three channels.
pub fn fmae(pred: &RgbImage, gt: &RgbImage, mask: &Mask) -> Result<f64> {
    check_pair(pred, gt)?;
    let idx = check_mask(pred, mask)?;
    let sum: f64 = idx
        .iter()
        .map(|&i| {
            (0..3)
                .map(|c| (pred.data[i][c] - gt.data[i][c]).abs())
                .sum::<f64>()
        })
        .sum();
    Ok(sum / (3 * idx.len()) as f64)
}

pub fn fmse(pred: &RgbImage, gt: &RgbImage, mask: &Mask) -> Result<f64> {
    check_pair(pred, gt)?;
    let idx = check_mask(pred, mask)?;
    let sum: f64 = idx
        .iter()
        .map(|&i| {
            (0..3)
                .map(|c| (pred.data[i][c] - gt.data[i][c]).powi(2))
                .sum::<f64>()
        })
        .sum();
    Ok(sum / (3 * idx.len()) as f64)
}

/// `10 log10(1 / MSE)` with peak 1, capped at [`PSNR_CAP_DB`].
pub fn fpsnr(pred: &RgbImage, gt: &RgbImage, mask: &Mask) -> Result<f64> {
    Ok(psnr_from_mse(fmse(pred, gt, mask)?))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP_DB
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB)
    }
}

fn gaussian_window() -> [f64; 2 * SSIM_RADIUS + 1] {
    let mut w = [0.0; 2 * SSIM_RADIUS + 1];
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - SSIM_RADIUS as f64;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    w
}

/// Single-channel SSIM evaluated at every pixel where `support` is true,
/// with window taps outside `support` dropped. Entries outside the support
/// are `NaN`.
pub fn ssim_map_channel(
    a: &[f64],
    b: &[f64],
    width: usize,
    height: usize,
    support: &[bool],
) -> Result<Vec<f64>> {
    let n = width * height;
    if a.len() != n || b.len() != n || support.len() != n {
        return Err(Error::dims(
            "ssim channel",
            n,
            a.len().min(b.len()).min(support.len()),
        ));
    }
    let side = 2 * SSIM_RADIUS + 1;
    if width < side || height < side {
        return Err(Error::InvalidInput(format!(
            "image {width}x{height} smaller than the {side}x{side} SSIM window"
        )));
    }
    let g = gaussian_window();
    let r = SSIM_RADIUS as i64;
    let out = (0..n)
        .into_par_iter()
        .map(|i| {
            if !support[i] {
                return f64::NAN;
            }
            let (x, y) = ((i % width) as i64, (i / width) as i64);
            let mut taps: [(usize, f64); (2 * SSIM_RADIUS + 1) * (2 * SSIM_RADIUS + 1)] =
                [(0, 0.0); (2 * SSIM_RADIUS + 1) * (2 * SSIM_RADIUS + 1)];
            let mut nt = 0;
            let mut wsum = 0.0;
            for dy in -r..=r {
                let yy = y + dy;
                if yy < 0 || yy >= height as i64 {
                    continue;
                }
                for dx in -r..=r {
                    let xx = x + dx;
                    if xx < 0 || xx >= width as i64 {
                        continue;
                    }
                    let j = yy as usize * width + xx as usize;
                    if !support[j] {
                        continue;
                    }
                    let w = g[(dy + r) as usize] * g[(dx + r) as usize];
                    taps[nt] = (j, w);
                    nt += 1;
                    wsum += w;
                }
            }
            let taps = &taps[..nt];
            let (mut ma, mut mb) = (0.0, 0.0);
            for &(j, w) in taps {
                ma += w * a[j];
                mb += w * b[j];
            }
            ma /= wsum;
            mb /= wsum;
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for &(j, w) in taps {
                let da = a[j] - ma;
                let db = b[j] - mb;
                va += w * da * da;
                vb += w * db * db;
                cov += w * da * db;
            }
            va /= wsum;
            vb /= wsum;
            cov /= wsum;
            ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2))
        })
        .collect();
    Ok(out)
}

fn ssim_map_support(pred: &RgbImage, gt: &RgbImage, support: &[bool]) -> Result<Vec<f64>> {
    check_pair(pred, gt)?;
    let mut acc = vec![0.0; pred.len()];
    for c in 0..3 {
        let m = ssim_map_channel(
            &pred.channel(c),
            &gt.channel(c),
            pred.width,
            pred.height,
            support,
        )?;
        for (a, v) in acc.iter_mut().zip(m) {
            *a += v;
        }
    }
    Ok(acc.into_iter().map(|v| v / 3.0).collect())
}

/// Channel-averaged SSIM at every pixel of the full image.
pub fn ssim_map(pred: &RgbImage, gt: &RgbImage) -> Result<Vec<f64>> {
    ssim_map_support(pred, gt, &vec![true; pred.len()])
}

/// Mean of [`ssim_map`].
pub fn ssim(pred: &RgbImage, gt: &RgbImage) -> Result<f64> {
    let m = ssim_map(pred, gt)?;
    Ok(m.iter().sum::<f64>() / m.len() as f64)
}

/// Mean SSIM over foreground pixels, windows restricted to the foreground.
pub fn fssim(pred: &RgbImage, gt: &RgbImage, mask: &Mask) -> Result<f64> {
    check_pair(pred, gt)?;
    let idx = check_mask(pred, mask)?;
    let support: Vec<bool> = (0..mask.data.len()).map(|i| mask.is_fg(i)).collect();
    let m = ssim_map_support(pred, gt, &support)?;
    Ok(idx.iter().map(|&i| m[i]).sum::<f64>() / idx.len() as f64)
}

/// Mean absolute difference over all pixels and channels (`‖·‖₁` as a mean).
pub fn l1(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    check_pair(a, b)?;
    let s: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(p, q)| (0..3).map(|c| (p[c] - q[c]).abs()).sum::<f64>())
        .sum();
    Ok(s / (3 * a.len()) as f64)
}

/// Neural-rendering objective: L1 on shading, albedo and image plus
/// `λ (1 − SSIM)` on each.
pub fn l_nr(
    s: &RgbImage,
    s_hat: &RgbImage,
    a: &RgbImage,
    a_hat: &RgbImage,
    i: &RgbImage,
    i_hat: &RgbImage,
    lambda: f64,
) -> Result<f64> {
    let mut loss = l1(s, s_hat)? + l1(a, a_hat)? + l1(i, i_hat)?;
    if lambda != 0.0 {
        loss += lambda * (1.0 - ssim(s, s_hat)?);
        loss += lambda * (1.0 - ssim(a, a_hat)?);
        loss += lambda * (1.0 - ssim(i, i_hat)?);
    }
    Ok(loss)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub fmae: f64,
    pub fpsnr_db: f64,
    pub fssim: f64,
    pub pixel_count: usize,
}

/// All three foreground metrics after mapping linear inputs to display space.
pub fn evaluate_linear(pred: &LinearImage, gt: &LinearImage, mask: &Mask) -> Result<MetricReport> {
    let p = to_display(pred);
    let g = to_display(gt);
    Ok(MetricReport {
        fmae: fmae(&p, &g, mask)?,
        fpsnr_db: fpsnr(&p, &g, mask)?,
        fssim: fssim(&p, &g, mask)?,
        pixel_count: mask.count(),
    })
}

/// Mean of each metric over a set of reports.
pub fn aggregate(reports: &[MetricReport]) -> Option<MetricReport> {
    if reports.is_empty() {
        return None;
    }
    let n = reports.len() as f64;
    Some(MetricReport {
        fmae: reports.iter().map(|r| r.fmae).sum::<f64>() / n,
        fpsnr_db: reports.iter().map(|r| r.fpsnr_db).sum::<f64>() / n,
        fssim: reports.iter().map(|r| r.fssim).sum::<f64>() / n,
        pixel_count: reports.iter().map(|r| r.pixel_count).sum(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize, off: f64) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| {
            let v = (0.3 * x as f64 + 0.7 * y as f64).sin() * 0.25 + 0.5 + off;
            [v, 0.8 * v, 0.5 * v + 0.1]
        })
    }

    #[test]
    fn identical_images() {
        let a = ramp(16, 14, 0.0);
        let m = Mask::from_fn(16, 14, |x, y| x > 3 && y > 2);
        assert_eq!(fmae(&a, &a, &m).unwrap(), 0.0);
        assert_eq!(fpsnr(&a, &a, &m).unwrap(), PSNR_CAP_DB);
        assert_eq!(fssim(&a, &a, &m).unwrap(), 1.0);
        assert!(ssim_map(&a, &a).unwrap().iter().all(|v| *v == 1.0));
    }

    #[test]
    fn constant_offset_inside_mask() {
        let a = ramp(16, 16, 0.0);
        let m = Mask::from_fn(16, 16, |x, _| x < 8);
        let b = RgbImage::from_fn(16, 16, |x, y| {
            let p = a.get(x, y);
            if x < 8 {
                p.map(|v| v + 0.1)
            } else {
                p
            }
        });
        assert!((fmae(&b, &a, &m).unwrap() - 0.1).abs() < 1e-12);
        assert!((fpsnr(&b, &a, &m).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn empty_mask_errors() {
        let a = ramp(12, 12, 0.0);
        let m = Mask::new(12, 12);
        assert!(matches!(fmae(&a, &a, &m), Err(Error::EmptyMask)));
        assert!(matches!(fpsnr(&a, &a, &m), Err(Error::EmptyMask)));
        assert!(matches!(fssim(&a, &a, &m), Err(Error::EmptyMask)));
    }

    #[test]
    fn window_larger_than_image_errors() {
        let a = ramp(10, 30, 0.0);
        assert!(ssim_map(&a, &a).is_err());
    }

    #[test]
    fn constant_images_closed_form() {
        let a = RgbImage::filled(16, 16, [0.5; 3]);
        let b = RgbImage::filled(16, 16, [0.6; 3]);
        let expect = (2.0 * 0.5 * 0.6 + SSIM_C1) / (0.25 + 0.36 + SSIM_C1);
        for v in ssim_map(&a, &b).unwrap() {
            assert!((v - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn ssim_symmetric_and_bounded() {
        let a = ramp(20, 18, 0.0);
        let b = RgbImage::from_fn(20, 18, |x, y| {
            [((x * y) % 7) as f64 / 7.0, 0.3, (x % 3) as f64 / 3.0]
        });
        let m = Mask::from_fn(20, 18, |x, y| (x + y) % 5 != 0);
        let ab = fssim(&a, &b, &m).unwrap();
        let ba = fssim(&b, &a, &m).unwrap();
        assert!((ab - ba).abs() < 1e-12);
        assert!(ssim_map(&a, &b)
            .unwrap()
            .iter()
            .all(|v| *v <= 1.0 + 1e-15 && *v >= -1.0));
    }

    #[test]
    fn lnr_zero_and_pure_l1() {
        let a = ramp(12, 12, 0.0);
        assert_eq!(l_nr(&a, &a, &a, &a, &a, &a, 1.0).unwrap(), 0.0);
        let b = ramp(12, 12, 0.05);
        let l = l_nr(&a, &b, &a, &a, &a, &a, 0.0).unwrap();
        assert!((l - l1(&a, &b).unwrap()).abs() < 1e-15);
    }
}
