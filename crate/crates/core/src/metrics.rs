//! Image quality metrics and row-wise error profiles.

use serde::Serialize;

use crate::error::{shape_mismatch, Error, Result};
use crate::geometry::GsSequence;
use crate::tensor::ImageBuf;

/// Axis-aligned crop `[x0, x0 + width) x [y0, y0 + height)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Region {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

impl Region {
    pub fn full(width: usize, height: usize) -> Self {
        Self { x0: 0, y0: 0, width, height }
    }

    /// Centred crop keeping `fraction` of each dimension.
    pub fn interior(width: usize, height: usize, fraction: f64) -> Self {
        let margin = |len: usize| ((len as f64 * (1.0 - fraction.clamp(0.0, 1.0)) / 2.0).round() as usize).min((len - 1) / 2);
        let (mx, my) = (margin(width), margin(height));
        Self { x0: mx, y0: my, width: width - 2 * mx, height: height - 2 * my }
    }

    fn check(&self, img: &ImageBuf) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.x0 + self.width > img.width() || self.y0 + self.height > img.height() {
            return Err(Error::InvalidArgument(format!(
                "region {self:?} does not fit a {}x{} image",
                img.width(),
                img.height()
            )));
        }
        Ok(())
    }
}

fn check_pair(a: &ImageBuf, b: &ImageBuf) -> Result<()> {
    if !a.same_shape(b) {
        return Err(shape_mismatch("images (w, h, c)", a.dims(), b.dims()));
    }
    Ok(())
}

/// Mean squared error over `region` (whole image when `None`), all channels.
pub fn mse(a: &ImageBuf, b: &ImageBuf, region: Option<Region>) -> Result<f64> {
    check_pair(a, b)?;
    let region = region.unwrap_or(Region::full(a.width(), a.height()));
    region.check(a)?;
    let ch = a.channels();
    let mut sum = 0.0f64;
    for y in region.y0..region.y0 + region.height {
        let (ra, rb) = (a.row(y), b.row(y));
        let span = region.x0 * ch..(region.x0 + region.width) * ch;
        sum += ra[span.clone()]
            .iter()
            .zip(&rb[span])
            .map(|(&p, &q)| {
                let d = p as f64 - q as f64;
                d * d
            })
            .sum::<f64>();
    }
    Ok(sum / (region.width * region.height * ch) as f64)
}

/// Peak signal-to-noise ratio in dB for peak value 1. Identical inputs give
/// `f64::INFINITY`.
pub fn psnr(a: &ImageBuf, b: &ImageBuf, region: Option<Region>) -> Result<f64> {
    let e = mse(a, b, region)?;
    Ok(if e == 0.0 { f64::INFINITY } else { -10.0 * e.log10() })
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian filter of `plane` (w x h) keeping only full windows.
fn filter_valid(plane: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w + 1 - SSIM_WINDOW, h + 1 - SSIM_WINDOW);
    let mut horiz = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            horiz[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * horiz[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean structural similarity over all full 11x11 Gaussian windows
/// (sigma 1.5, K1 0.01, K2 0.03, dynamic range 1), averaged over channels.
pub fn ssim(a: &ImageBuf, b: &ImageBuf) -> Result<f64> {
    check_pair(a, b)?;
    let (w, h, ch) = a.dims();
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {w}x{h}"
        )));
    }
    let k = gaussian_kernel();
    let (c1, c2) = (SSIM_K1 * SSIM_K1, SSIM_K2 * SSIM_K2);
    let mut total = 0.0;
    for c in 0..ch {
        let pa: Vec<f64> = (0..w * h).map(|i| a.pixels()[i * ch + c] as f64).collect();
        let pb: Vec<f64> = (0..w * h).map(|i| b.pixels()[i * ch + c] as f64).collect();
        let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<_>>();
        let mu_a = filter_valid(&pa, w, h, &k);
        let mu_b = filter_valid(&pb, w, h, &k);
        let saa = filter_valid(&prod(&pa, &pa), w, h, &k);
        let sbb = filter_valid(&prod(&pb, &pb), w, h, &k);
        let sab = filter_valid(&prod(&pa, &pb), w, h, &k);
        let mut sum = 0.0;
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = saa[i] - ma * ma;
            let vb = sbb[i] - mb * mb;
            let cov = sab[i] - ma * mb;
            sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
        total += sum / mu_a.len() as f64;
    }
    Ok(total / ch as f64)
}

/// Per-row mean squared error of one extracted frame.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowProfile {
    /// 0-based target index.
    pub target: usize,
    pub mse: Vec<f64>,
}

/// Row-wise MSE (averaged over columns and channels) for every target.
pub fn row_profile(outputs: &GsSequence, gt: &GsSequence) -> Result<Vec<RowProfile>> {
    if outputs.len() != gt.len() {
        return Err(shape_mismatch("sequence lengths", outputs.len(), gt.len()));
    }
    outputs
        .frames
        .iter()
        .zip(&gt.frames)
        .enumerate()
        .map(|(target, (o, g))| {
            check_pair(o, g)?;
            let mse = (0..o.height())
                .map(|y| {
                    let s: f64 = o
                        .row(y)
                        .iter()
                        .zip(g.row(y))
                        .map(|(&p, &q)| {
                            let d = p as f64 - q as f64;
                            d * d
                        })
                        .sum();
                    s / o.row_len() as f64
                })
                .collect();
            Ok(RowProfile { target, mse })
        })
        .collect()
}

/// 1-based ranks with ties sharing their average rank.
fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut out = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            out[i] = rank;
        }
        start = end;
    }
    out
}

/// Spearman rank correlation (Pearson correlation of average ranks).
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(shape_mismatch("spearman inputs (len)", a.len(), b.len()));
    }
    if a.len() < 2 || a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("spearman needs at least two finite pairs".into()));
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let mean = (a.len() + 1) as f64 / 2.0;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - mean) * (y - mean);
        va += (x - mean) * (x - mean);
        vb += (y - mean) * (y - mean);
    }
    if va == 0.0 || vb == 0.0 {
        return Err(Error::InvalidArgument("spearman is undefined for a constant input".into()));
    }
    Ok(cov / (va * vb).sqrt())
}
