//! Structural similarity between sticker images.
//!
//! Images are alpha-flattened onto white, converted to 8-bit luma and resized
//! to 128×128. SSIM uses an 11×11 Gaussian window (σ = 1.5) over the valid
//! region with K1 = 0.01, K2 = 0.03, L = 255. The mean SSIM in [-1, 1] is
//! clamped to [0, 1].

use std::path::Path;

use image::imageops::FilterType;
use image::{DynamicImage, GrayImage, Luma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::types::Sticker;
use crate::error::{Error, Result};

pub const SSIM_SIDE: u32 = 128;
const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
const C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

fn gaussian_kernel() -> [f64; WINDOW] {
    let mut k = [0.0; WINDOW];
    let c = (WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let x = i as f64 - c;
        *v = (-(x * x) / (2.0 * SIGMA * SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian filter, valid region only.
fn filter_valid(src: &[f64], side: usize, kernel: &[f64; WINDOW]) -> Vec<f64> {
    let out_side = side - WINDOW + 1;
    let mut horiz = vec![0.0; side * out_side];
    for y in 0..side {
        let row = &src[y * side..(y + 1) * side];
        for x in 0..out_side {
            horiz[y * out_side + x] = kernel.iter().zip(&row[x..x + WINDOW]).map(|(k, v)| k * v).sum();
        }
    }
    let mut out = vec![0.0; out_side * out_side];
    for y in 0..out_side {
        for x in 0..out_side {
            let mut acc = 0.0;
            for (i, k) in kernel.iter().enumerate() {
                acc += k * horiz[(y + i) * out_side + x];
            }
            out[y * out_side + x] = acc;
        }
    }
    out
}

/// A preprocessed image with the per-image local statistics cached, so that a
/// pairwise comparison only needs the cross term.
#[derive(Debug, Clone)]
pub struct GrayPlane {
    side: usize,
    pixels: Vec<f64>,
    mean: Vec<f64>,
    mean_sq: Vec<f64>,
}

impl GrayPlane {
    pub fn from_image(img: &DynamicImage) -> Self {
        let rgba = img.to_rgba8();
        let mut gray = GrayImage::new(rgba.width(), rgba.height());
        for (x, y, p) in rgba.enumerate_pixels() {
            let a = p[3] as f64 / 255.0;
            let flat = |c: u8| c as f64 * a + 255.0 * (1.0 - a);
            let l = 0.299 * flat(p[0]) + 0.587 * flat(p[1]) + 0.114 * flat(p[2]);
            gray.put_pixel(x, y, Luma([l.round().clamp(0.0, 255.0) as u8]));
        }
        let resized = image::imageops::resize(&gray, SSIM_SIDE, SSIM_SIDE, FilterType::Triangle);
        let pixels: Vec<f64> = resized.pixels().map(|p| p[0] as f64).collect();
        Self::from_pixels(SSIM_SIDE as usize, pixels)
    }

    fn from_pixels(side: usize, pixels: Vec<f64>) -> Self {
        let k = gaussian_kernel();
        let mean = filter_valid(&pixels, side, &k);
        let sq: Vec<f64> = pixels.iter().map(|v| v * v).collect();
        let mean_sq = filter_valid(&sq, side, &k);
        Self { side, pixels, mean, mean_sq }
    }

    pub fn open(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::Asset {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Ok(Self::from_image(&img))
    }
}

pub fn ssim_planes(a: &GrayPlane, b: &GrayPlane) -> f64 {
    assert_eq!(a.side, b.side, "planes must share a resolution");
    let k = gaussian_kernel();
    let prod: Vec<f64> = a.pixels.iter().zip(&b.pixels).map(|(x, y)| x * y).collect();
    let cross = filter_valid(&prod, a.side, &k);
    let mut total = 0.0;
    for i in 0..cross.len() {
        let (ma, mb) = (a.mean[i], b.mean[i]);
        let mab = ma * mb;
        let var_a = a.mean_sq[i] - ma * ma;
        let var_b = b.mean_sq[i] - mb * mb;
        let cov = cross[i] - mab;
        let num = (2.0 * mab + C1) * (2.0 * cov + C2);
        let den = (ma * ma + mb * mb + C1) * (var_a + var_b + C2);
        total += num / den;
    }
    (total / cross.len() as f64).clamp(0.0, 1.0)
}

/// SSIM of two decoded images, in [0, 1].
pub fn ssim(a: &DynamicImage, b: &DynamicImage) -> f64 {
    ssim_planes(&GrayPlane::from_image(a), &GrayPlane::from_image(b))
}

pub fn ssim_files(a: &Path, b: &Path) -> Result<f64> {
    Ok(ssim_planes(&GrayPlane::open(a)?, &GrayPlane::open(b)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub stickers: usize,
    pub pairs: usize,
    pub mean: f64,
    pub histogram: Vec<HistogramBin>,
}

impl SimilarityReport {
    /// Builds the report from all pairwise scores of `stickers` items.
    pub fn from_scores(stickers: usize, scores: &[f64], bins: usize) -> Result<Self> {
        if stickers < 2 {
            return Err(Error::Domain(format!("similarity report needs at least 2 stickers, got {stickers}")));
        }
        if bins == 0 {
            return Err(Error::Domain("histogram needs at least one bin".into()));
        }
        let mut histogram: Vec<HistogramBin> = (0..bins)
            .map(|i| HistogramBin { lo: i as f64 / bins as f64, hi: (i + 1) as f64 / bins as f64, count: 0 })
            .collect();
        for &s in scores {
            let b = ((s * bins as f64) as usize).min(bins - 1);
            histogram[b].count += 1;
        }
        let mean = if scores.is_empty() { 0.0 } else { scores.iter().sum::<f64>() / scores.len() as f64 };
        Ok(Self { stickers, pairs: scores.len(), mean, histogram })
    }
}

/// Pairwise SSIM over a sticker set.
pub fn similarity_report<'a>(stickers: impl IntoIterator<Item = &'a Sticker>, bins: usize) -> Result<SimilarityReport> {
    let stickers: Vec<&Sticker> = stickers.into_iter().collect();
    if stickers.len() < 2 {
        return Err(Error::Domain(format!("similarity report needs at least 2 stickers, got {}", stickers.len())));
    }
    let planes: Vec<GrayPlane> = stickers
        .par_iter()
        .map(|s| GrayPlane::open(&s.image_ref))
        .collect::<Result<_>>()?;
    let scores: Vec<f64> = (0..planes.len())
        .into_par_iter()
        .flat_map_iter(|i| {
            let planes = &planes;
            (i + 1..planes.len()).map(move |j| ssim_planes(&planes[i], &planes[j]))
        })
        .collect();
    SimilarityReport::from_scores(stickers.len(), &scores, bins)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::RgbImage;

    fn gradient_image(w: u32, h: u32) -> DynamicImage {
        DynamicImage::ImageRgb8(RgbImage::from_fn(w, h, |x, y| {
            image::Rgb([(x * 7 % 256) as u8, (y * 3 % 256) as u8, ((x * y) % 256) as u8])
        }))
    }

    #[test]
    fn identical_images_score_one() {
        let img = gradient_image(40, 30);
        assert_eq!(ssim(&img, &img), 1.0);
    }

    #[test]
    fn negative_scores_below_one_and_symmetric() {
        let img = gradient_image(64, 64);
        let mut neg = img.clone();
        neg.invert();
        let ab = ssim(&img, &neg);
        let ba = ssim(&neg, &img);
        assert!(ab < 1.0);
        assert_eq!(ab, ba);
    }

    #[test]
    fn report_mean_and_bins() {
        let r = SimilarityReport::from_scores(3, &[1.0, 0.0, 0.0], 10).unwrap();
        assert!((r.mean - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.histogram.iter().map(|b| b.count).sum::<usize>(), 3);
        assert_eq!(r.histogram[9].count, 1);
        assert_eq!(r.histogram[0].count, 2);
    }

    #[test]
    fn report_needs_two_stickers() {
        assert!(matches!(SimilarityReport::from_scores(1, &[], 10), Err(Error::Domain(_))));
    }

    #[test]
    fn undecodable_asset_is_an_asset_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.png");
        std::fs::write(&p, b"not an image").unwrap();
        assert!(matches!(GrayPlane::open(&p), Err(Error::Asset { .. })));
    }
}
