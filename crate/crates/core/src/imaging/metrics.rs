use std::fmt;

use serde::Serialize;

use super::{Image, CHANNELS};
use crate::error::{Error, Result};

/// Side length of the Gaussian SSIM window.
pub const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum MetricKind {
    Psnr,
    Ssim,
}

/// A PSNR (dB) or SSIM score. Identical images have an infinite PSNR,
/// represented by `f64::INFINITY`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricValue {
    pub kind: MetricKind,
    pub value: f64,
}

impl MetricValue {
    pub fn is_infinite(&self) -> bool {
        self.value.is_infinite()
    }

    pub fn finite(&self) -> Option<f64> {
        self.value.is_finite().then_some(self.value)
    }
}

impl fmt::Display for MetricValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.value.is_infinite() {
            f.write_str("inf")
        } else {
            write!(f, "{}", self.value)
        }
    }
}

/// Peak signal-to-noise ratio with peak 1.0, MSE over all `3·H·W` elements.
pub fn psnr(a: &Image, b: &Image) -> Result<MetricValue> {
    a.check_same_shape(b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&p, &q)| {
            let d = p as f64 - q as f64;
            d * d
        })
        .sum();
    let mse = sum / a.len() as f64;
    let value = if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    };
    Ok(MetricValue {
        kind: MetricKind::Psnr,
        value,
    })
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, w) in k.iter_mut().enumerate() {
        let d = i as f64 - half;
        *w = (-(d * d) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|w| *w /= total);
    k
}

/// Separable Gaussian filter restricted to fully valid window positions.
fn filter_valid(plane: &[f64], h: usize, w: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        let src = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = k
                .iter()
                .zip(&src[x..x + SSIM_WINDOW])
                .map(|(a, b)| a * b)
                .sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = k
                .iter()
                .enumerate()
                .map(|(i, kw)| kw * rows[(y + i) * ow + x])
                .sum();
        }
    }
    out
}

fn ssim_plane(a: &[f32], b: &[f32], h: usize, w: usize, k: &[f64; SSIM_WINDOW]) -> f64 {
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let a: Vec<f64> = a.iter().map(|&v| v as f64).collect();
    let b: Vec<f64> = b.iter().map(|&v| v as f64).collect();
    let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = a.iter().zip(&b).map(|(p, q)| p * q).collect();

    let mu_a = filter_valid(&a, h, w, k);
    let mu_b = filter_valid(&b, h, w, k);
    let e_aa = filter_valid(&aa, h, w, k);
    let e_bb = filter_valid(&bb, h, w, k);
    let e_ab = filter_valid(&ab, h, w, k);

    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let var_a = e_aa[i] - ma * ma;
        let var_b = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
        let den = (ma * ma + mb * mb + c1) * (var_a + var_b + c2);
        total += num / den;
    }
    total / mu_a.len() as f64
}

/// Mean SSIM (11×11 Gaussian window, σ = 1.5, valid positions only),
/// averaged over the three channels.
pub fn ssim(a: &Image, b: &Image) -> Result<MetricValue> {
    a.check_same_shape(b)?;
    let (h, w) = (a.height(), a.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}"
        )));
    }
    let k = gaussian_kernel();
    let sum: f64 = (0..CHANNELS)
        .map(|c| ssim_plane(a.plane(c), b.plane(c), h, w, &k))
        .sum();
    Ok(MetricValue {
        kind: MetricKind::Ssim,
        value: sum / CHANNELS as f64,
    })
}

/// Per-channel counts of quantized intensities `round(v·255)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Histogram256 {
    pub bins: [[u64; 256]; CHANNELS],
}

impl Histogram256 {
    pub fn channel_total(&self, c: usize) -> u64 {
        self.bins[c].iter().sum()
    }

    /// Mean quantized level of channel `c`, in `[0, 255]`.
    pub fn mean_level(&self, c: usize) -> f64 {
        let total = self.channel_total(c);
        if total == 0 {
            return 0.0;
        }
        let weighted: u64 = self.bins[c]
            .iter()
            .enumerate()
            .map(|(i, n)| i as u64 * n)
            .sum();
        weighted as f64 / total as f64
    }
}

pub fn histogram256(img: &Image) -> Histogram256 {
    let mut bins = [[0u64; 256]; CHANNELS];
    for (c, channel_bins) in bins.iter_mut().enumerate() {
        for &v in img.plane(c) {
            let idx = (v * 255.0).round() as usize;
            channel_bins[idx.min(255)] += 1;
        }
    }
    Histogram256 { bins }
}
