//! Robustness estimates and the reports built on them.
//!
//! Every report is computed per image over a shared read-only model and
//! aggregated in image order, so results do not depend on the thread
//! count. Per-image attack and noise seeds derive from the base seed and
//! the image index.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{
    pgd_attack, random_noise, AttackConfig, AttackLoss, ChannelMask, InitMode, NoiseKind,
    Projection,
};
use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::imaging::{histogram256, psnr, rgb_to_yuv, save_image, ssim, Histogram256, Image};
use crate::models::Model;
use crate::seed;

/// How the input is perturbed before the second forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Pixel,
    Color,
    ChannelR,
    ChannelG,
    ChannelB,
    Mse,
    Gaussian,
    Uniform,
    None,
}

string_enum!(Method {
    Pixel => "pixel",
    Color => "color",
    ChannelR => "channel-r",
    ChannelG => "channel-g",
    ChannelB => "channel-b",
    Mse => "mse",
    Gaussian => "gaussian",
    Uniform => "uniform",
    None => "none",
});

impl Method {
    pub fn is_attack(self) -> bool {
        !matches!(self, Method::Gaussian | Method::Uniform | Method::None)
    }

    fn attack_parts(self) -> Option<(AttackLoss, ChannelMask)> {
        Some(match self {
            Method::Pixel => (AttackLoss::Pixel, ChannelMask::None),
            Method::Color => (AttackLoss::ColorShift, ChannelMask::None),
            Method::ChannelR => (AttackLoss::Pixel, ChannelMask::R),
            Method::ChannelG => (AttackLoss::Pixel, ChannelMask::G),
            Method::ChannelB => (AttackLoss::Pixel, ChannelMask::B),
            Method::Mse => (AttackLoss::Mse, ChannelMask::None),
            _ => return None,
        })
    }
}

/// One evaluation condition. Budgets are in `1/255` units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSpec {
    pub method: Method,
    pub eps: f64,
    pub alpha: f64,
    pub iters: usize,
    pub projection: Projection,
    pub init: InitMode,
    pub seed: u64,
}

impl Default for EvalSpec {
    fn default() -> Self {
        Self {
            method: Method::Pixel,
            eps: 8.0,
            alpha: 2.0,
            iters: 20,
            projection: Projection::Cumulative,
            init: InitMode::Uniform,
            seed: 42,
        }
    }
}

impl EvalSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps.is_finite() && (0.0..=255.0).contains(&self.eps)) {
            return Err(Error::Config(format!("eps {} outside [0, 255]", self.eps)));
        }
        if self.method.is_attack() {
            self.attack_config(0).expect("attack method").validate()?;
        }
        Ok(())
    }

    /// Attack settings for image `index`, or `None` for noise methods.
    pub fn attack_config(&self, index: usize) -> Option<AttackConfig> {
        let (loss, mask) = self.method.attack_parts()?;
        Some(AttackConfig {
            epsilon: (self.eps / 255.0) as f32,
            alpha: (self.alpha / 255.0) as f32,
            iters: self.iters,
            loss,
            mask,
            projection: self.projection,
            init: self.init,
            seed: self.image_seed(index),
        })
    }

    pub fn image_seed(&self, index: usize) -> u64 {
        seed::derive(self.seed, &[index as u64])
    }

    /// Perturbs `x` for image `index`, returning the perturbed input and
    /// the attack loss trace (empty for noise).
    pub fn perturb(
        &self,
        model: &Model,
        x: &Image,
        y: &Image,
        index: usize,
    ) -> Result<(Image, Vec<f64>)> {
        let eps = (self.eps / 255.0) as f32;
        match self.method {
            Method::None => Ok((x.clone(), Vec::new())),
            Method::Gaussian => Ok((
                random_noise(x, NoiseKind::Gaussian, eps, self.image_seed(index))?,
                Vec::new(),
            )),
            Method::Uniform => Ok((
                random_noise(x, NoiseKind::Uniform, eps, self.image_seed(index))?,
                Vec::new(),
            )),
            _ => {
                let cfg = self.attack_config(index).expect("attack method");
                let r = pgd_attack(model, x, y, &cfg)?;
                Ok((r.adversarial, r.loss_trace))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessRow {
    pub image_id: String,
    pub method: Method,
    pub eps: f64,
    pub alpha: f64,
    pub iters: usize,
    pub projection: Projection,
    pub psnr_clean: f64,
    pub ssim_clean: f64,
    pub psnr_adv: f64,
    pub ssim_adv: f64,
    pub psnr_x_xadv: f64,
    /// Attack loss at every iterate; empty for noise methods.
    pub loss_trace: Vec<f64>,
}

/// Mean over the finite entries plus the count of infinite ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiniteMean {
    pub mean: f64,
    pub infinite: usize,
}

impl FiniteMean {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let (mut sum, mut n, mut infinite) = (0.0, 0usize, 0usize);
        for v in values {
            if v.is_finite() {
                sum += v;
                n += 1;
            } else {
                infinite += 1;
            }
        }
        Self {
            mean: if n == 0 { f64::NAN } else { sum / n as f64 },
            infinite,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub method: Method,
    pub eps: f64,
    pub alpha: f64,
    pub iters: usize,
    pub projection: Projection,
    pub images: usize,
    pub psnr_clean: FiniteMean,
    pub ssim_clean: FiniteMean,
    pub psnr_adv: FiniteMean,
    pub ssim_adv: FiniteMean,
    pub psnr_x_xadv: FiniteMean,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessReport {
    pub spec: EvalSpec,
    pub rows: Vec<RobustnessRow>,
    pub summary: Summary,
}

impl RobustnessReport {
    /// Mean PSNR drop from clean to perturbed outputs.
    pub fn psnr_drop(&self) -> f64 {
        self.summary.psnr_clean.mean - self.summary.psnr_adv.mean
    }
}

fn summarize(spec: &EvalSpec, rows: &[RobustnessRow]) -> Summary {
    let col = |f: fn(&RobustnessRow) -> f64| FiniteMean::of(rows.iter().map(f));
    Summary {
        method: spec.method,
        eps: spec.eps,
        alpha: spec.alpha,
        iters: spec.iters,
        projection: spec.projection,
        images: rows.len(),
        psnr_clean: col(|r| r.psnr_clean),
        ssim_clean: col(|r| r.ssim_clean),
        psnr_adv: col(|r| r.psnr_adv),
        ssim_adv: col(|r| r.ssim_adv),
        psnr_x_xadv: col(|r| r.psnr_x_xadv),
    }
}

fn check_samples(samples: &[Sample]) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::Dataset("evaluation split is empty".into()));
    }
    Ok(())
}

/// Clean and perturbed quality of `model` on every sample.
pub fn evaluate(model: &Model, samples: &[Sample], spec: &EvalSpec) -> Result<RobustnessReport> {
    spec.validate()?;
    check_samples(samples)?;
    let rows = samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let clean = model.enhance(&s.x)?;
            let (x_adv, loss_trace) = spec.perturb(model, &s.x, &s.y, i)?;
            let adv = model.enhance(&x_adv)?;
            Ok(RobustnessRow {
                image_id: s.id.clone(),
                method: spec.method,
                eps: spec.eps,
                alpha: spec.alpha,
                iters: spec.iters,
                projection: spec.projection,
                psnr_clean: psnr(&clean, &s.y)?.value,
                ssim_clean: ssim(&clean, &s.y)?.value,
                psnr_adv: psnr(&adv, &s.y)?.value,
                ssim_adv: ssim(&adv, &s.y)?.value,
                psnr_x_xadv: psnr(&s.x, &x_adv)?.value,
                loss_trace,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RobustnessReport {
        spec: *spec,
        summary: summarize(spec, &rows),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub eps: f64,
    pub iters: usize,
    pub psnr: FiniteMean,
    pub ssim: FiniteMean,
}

/// Mean adversarial-output quality over an `ε × T` grid, `ε`-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub eps: Vec<f64>,
    pub iters: Vec<usize>,
    pub cells: Vec<SweepCell>,
}

impl SweepGrid {
    pub fn cell(&self, eps: f64, iters: usize) -> Option<&SweepCell> {
        self.cells.iter().find(|c| c.eps == eps && c.iters == iters)
    }
}

pub const PAPER_SWEEP_EPS: [f64; 4] = [1.0, 2.0, 4.0, 8.0];
pub const PAPER_SWEEP_ITERS: [usize; 5] = [1, 5, 10, 15, 20];

/// Runs [`evaluate`] once per grid cell with the base settings of `spec`.
pub fn sweep(
    model: &Model,
    samples: &[Sample],
    eps: &[f64],
    iters: &[usize],
    spec: &EvalSpec,
) -> Result<SweepGrid> {
    if eps.is_empty() || iters.is_empty() {
        return Err(Error::Config(
            "sweep needs at least one eps and one iteration count".into(),
        ));
    }
    let mut cells = Vec::with_capacity(eps.len() * iters.len());
    for &e in eps {
        for &t in iters {
            let r = evaluate(
                model,
                samples,
                &EvalSpec {
                    eps: e,
                    iters: t,
                    ..*spec
                },
            )?;
            cells.push(SweepCell {
                eps: e,
                iters: t,
                psnr: r.summary.psnr_adv,
                ssim: r.summary.ssim_adv,
            });
        }
    }
    Ok(SweepGrid {
        eps: eps.to_vec(),
        iters: iters.to_vec(),
        cells,
    })
}

/// Five-number summary with linearly interpolated quartiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
}

impl Quartiles {
    /// Summary of the finite values, or `None` if there are none.
    pub fn of(values: &[f64]) -> Option<Self> {
        let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let pos = p * (v.len() - 1) as f64;
            let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
            v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
        };
        Some(Self {
            min: v[0],
            q1: q(0.25),
            median: q(0.5),
            q3: q(0.75),
            max: v[v.len() - 1],
            mean: v.iter().sum::<f64>() / v.len() as f64,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseCondition {
    /// `adversarial`, `gaussian`, `uniform` or `none`.
    pub condition: &'static str,
    pub image_ids: Vec<String>,
    pub psnr: Vec<f64>,
    pub ssim: Vec<f64>,
}

impl NoiseCondition {
    pub fn psnr_quartiles(&self) -> Option<Quartiles> {
        Quartiles::of(&self.psnr)
    }

    pub fn ssim_quartiles(&self) -> Option<Quartiles> {
        Quartiles::of(&self.ssim)
    }

    pub fn mean_psnr(&self) -> f64 {
        FiniteMean::of(self.psnr.iter().copied()).mean
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseComparison {
    pub eps: f64,
    /// Output quality with the clean input, the reference for every drop.
    pub clean_psnr: f64,
    pub conditions: Vec<NoiseCondition>,
}

impl NoiseComparison {
    pub fn condition(&self, name: &str) -> Option<&NoiseCondition> {
        self.conditions.iter().find(|c| c.condition == name)
    }

    /// Mean PSNR drop of `name` relative to the clean condition.
    pub fn drop(&self, name: &str) -> Option<f64> {
        Some(self.clean_psnr - self.condition(name)?.mean_psnr())
    }
}

/// Output quality under the attack in `attack`, Gaussian and uniform noise
/// of the same strength, and no perturbation.
pub fn noise_compare(
    model: &Model,
    samples: &[Sample],
    attack: &EvalSpec,
) -> Result<NoiseComparison> {
    if !attack.method.is_attack() {
        return Err(Error::Config(format!(
            "noise comparison needs an attack method, got {}",
            attack.method
        )));
    }
    let conditions = [
        ("adversarial", attack.method),
        ("gaussian", Method::Gaussian),
        ("uniform", Method::Uniform),
        ("none", Method::None),
    ];
    let mut out = Vec::with_capacity(conditions.len());
    let mut clean_psnr = f64::NAN;
    for (name, method) in conditions {
        let r = evaluate(model, samples, &EvalSpec { method, ..*attack })?;
        clean_psnr = r.summary.psnr_clean.mean;
        out.push(NoiseCondition {
            condition: name,
            image_ids: r.rows.iter().map(|row| row.image_id.clone()).collect(),
            psnr: r.rows.iter().map(|row| row.psnr_adv).collect(),
            ssim: r.rows.iter().map(|row| row.ssim_adv).collect(),
        });
    }
    Ok(NoiseComparison {
        eps: attack.eps,
        clean_psnr,
        conditions: out,
    })
}

/// Mean absolute output change in luma and chroma.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Displacement {
    /// `E|ΔY|`.
    pub luma: f64,
    /// `E|ΔU| + E|ΔV|`.
    pub chroma: f64,
}

impl Displacement {
    pub fn between(a: &Image, b: &Image) -> Result<Self> {
        if !a.same_shape(b) {
            return Err(Error::Shape("displacement needs equal shapes".into()));
        }
        let (ya, yb) = (rgb_to_yuv(a), rgb_to_yuv(b));
        let n = a.pixels() as f64;
        let mean_abs = |c: usize| {
            ya.plane(c)
                .iter()
                .zip(yb.plane(c))
                .map(|(p, q)| (p - q).abs() as f64)
                .sum::<f64>()
                / n
        };
        Ok(Self {
            luma: mean_abs(0),
            chroma: mean_abs(1) + mean_abs(2),
        })
    }

    /// Chroma-to-luma ratio; infinite when only chroma moved.
    pub fn ratio(&self) -> f64 {
        if self.luma > 0.0 {
            self.chroma / self.luma
        } else if self.chroma > 0.0 {
            f64::INFINITY
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistogramCondition {
    /// `clean`, `pixel` or `color-shift`.
    pub condition: &'static str,
    pub output: Image,
    pub histogram: Histogram256,
    /// Output change relative to the clean output.
    pub displacement: Displacement,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistogramReport {
    pub image_id: String,
    pub conditions: Vec<HistogramCondition>,
}

impl HistogramReport {
    pub fn condition(&self, name: &str) -> Option<&HistogramCondition> {
        self.conditions.iter().find(|c| c.condition == name)
    }
}

/// Output histograms of one pair for the clean input, a Pixel Attack and a
/// Color Shift Attack. `spec` supplies budget and seed; its method is
/// ignored. `index` selects the per-image seed.
pub fn histogram_report(
    model: &Model,
    sample: &Sample,
    index: usize,
    spec: &EvalSpec,
) -> Result<HistogramReport> {
    let clean = model.enhance(&sample.x)?;
    let mut conditions = vec![HistogramCondition {
        condition: "clean",
        histogram: histogram256(&clean),
        displacement: Displacement {
            luma: 0.0,
            chroma: 0.0,
        },
        output: clean.clone(),
    }];
    for (name, method) in [("pixel", Method::Pixel), ("color-shift", Method::Color)] {
        let s = EvalSpec { method, ..*spec };
        s.validate()?;
        let (x_adv, _) = s.perturb(model, &sample.x, &sample.y, index)?;
        let out = model.enhance(&x_adv)?;
        conditions.push(HistogramCondition {
            condition: name,
            histogram: histogram256(&out),
            displacement: Displacement::between(&out, &clean)?,
            output: out,
        });
    }
    Ok(HistogramReport {
        image_id: sample.id.clone(),
        conditions,
    })
}

/// Histogram reports for every sample, in order.
pub fn histogram_study(
    model: &Model,
    samples: &[Sample],
    spec: &EvalSpec,
) -> Result<Vec<HistogramReport>> {
    check_samples(samples)?;
    samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| histogram_report(model, s, i, spec))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImperceptRow {
    pub eps: f64,
    pub iters: usize,
    pub projection: Projection,
    pub mean_psnr_x_xadv: f64,
    pub min_psnr_x_xadv: f64,
    /// Guaranteed lower bound on every image's `PSNR(x, x_adv)`.
    pub floor_db: f64,
    pub images: usize,
    pub infinite: usize,
}

/// Largest possible `‖x_adv − x‖∞` for the given settings (all in the
/// same units).
pub fn linf_bound(
    eps: f64,
    alpha: f64,
    iters: usize,
    projection: Projection,
    init: InitMode,
) -> f64 {
    let start = match init {
        InitMode::Uniform => eps,
        InitMode::Zero => 0.0,
    };
    match projection {
        Projection::Cumulative => eps,
        Projection::StepClip => start + iters as f64 * alpha.min(eps),
    }
}

/// `20·log10(255 / bound)` for a bound in `1/255` units.
pub fn psnr_floor_db(bound_255: f64) -> f64 {
    if bound_255 <= 0.0 {
        f64::INFINITY
    } else {
        20.0 * (255.0 / bound_255.min(255.0)).log10()
    }
}

/// Mean and minimum `PSNR(x, x_adv)` per `ε`, with the analytic floor.
pub fn imperceptibility_report(
    model: &Model,
    samples: &[Sample],
    eps: &[f64],
    spec: &EvalSpec,
) -> Result<Vec<ImperceptRow>> {
    if eps.is_empty() {
        return Err(Error::Config(
            "imperceptibility report needs at least one eps".into(),
        ));
    }
    eps.iter()
        .map(|&e| {
            let s = EvalSpec { eps: e, ..*spec };
            let r = evaluate(model, samples, &s)?;
            let values: Vec<f64> = r.rows.iter().map(|row| row.psnr_x_xadv).collect();
            Ok(ImperceptRow {
                eps: e,
                iters: s.iters,
                projection: s.projection,
                mean_psnr_x_xadv: r.summary.psnr_x_xadv.mean,
                min_psnr_x_xadv: values.iter().copied().fold(f64::INFINITY, f64::min),
                floor_db: psnr_floor_db(linf_bound(e, s.alpha, s.iters, s.projection, s.init)),
                images: values.len(),
                infinite: r.summary.psnr_x_xadv.infinite,
            })
        })
        .collect()
}

/// Everything [`write_reports`] can emit; absent parts are skipped.
#[derive(Debug, Default)]
pub struct ReportArtifacts<'a> {
    pub robustness: Option<&'a RobustnessReport>,
    pub sweep: Option<&'a SweepGrid>,
    pub noise: Option<&'a NoiseComparison>,
    pub histograms: Option<&'a [HistogramReport]>,
    pub impercept: Option<&'a [ImperceptRow]>,
    pub meta: serde_json::Value,
    /// Save `x_adv` and `f(x_adv)` PNGs under `images/`.
    pub save_images: Option<(&'a Model, &'a [Sample])>,
}

/// Formats a number for CSV: shortest round-trip form, `inf` for infinity,
/// integers without a fraction.
pub fn fmt_num(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else if v.is_nan() {
        "nan".into()
    } else if v == v.trunc() && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

fn csv_writer(dir: &Path, name: &str) -> Result<csv::Writer<fs::File>> {
    Ok(csv::Writer::from_path(dir.join(name))?)
}

fn finish(mut w: csv::Writer<fs::File>, dir: &Path, name: &str) -> Result<()> {
    w.flush().map_err(|e| Error::io(dir.join(name), e))
}

fn write_per_image(dir: &Path, r: &RobustnessReport) -> Result<()> {
    let mut w = csv_writer(dir, "per_image.csv")?;
    w.write_record([
        "image_id",
        "method",
        "eps",
        "alpha",
        "iters",
        "projection",
        "psnr_clean",
        "ssim_clean",
        "psnr_adv",
        "ssim_adv",
        "psnr_x_xadv",
        "attack_loss_final",
    ])?;
    for row in &r.rows {
        w.write_record([
            row.image_id.clone(),
            row.method.to_string(),
            fmt_num(row.eps),
            fmt_num(row.alpha),
            row.iters.to_string(),
            row.projection.to_string(),
            fmt_num(row.psnr_clean),
            fmt_num(row.ssim_clean),
            fmt_num(row.psnr_adv),
            fmt_num(row.ssim_adv),
            fmt_num(row.psnr_x_xadv),
            row.loss_trace
                .last()
                .map(|&v| fmt_num(v))
                .unwrap_or_default(),
        ])?;
    }
    finish(w, dir, "per_image.csv")
}

fn write_summary(dir: &Path, s: &Summary) -> Result<()> {
    let mut w = csv_writer(dir, "summary.csv")?;
    w.write_record([
        "method",
        "eps",
        "alpha",
        "iters",
        "projection",
        "images",
        "psnr_clean",
        "ssim_clean",
        "psnr_adv",
        "ssim_adv",
        "psnr_x_xadv",
        "inf_psnr_clean",
        "inf_psnr_adv",
        "inf_psnr_x_xadv",
    ])?;
    w.write_record([
        s.method.to_string(),
        fmt_num(s.eps),
        fmt_num(s.alpha),
        s.iters.to_string(),
        s.projection.to_string(),
        s.images.to_string(),
        fmt_num(s.psnr_clean.mean),
        fmt_num(s.ssim_clean.mean),
        fmt_num(s.psnr_adv.mean),
        fmt_num(s.ssim_adv.mean),
        fmt_num(s.psnr_x_xadv.mean),
        s.psnr_clean.infinite.to_string(),
        s.psnr_adv.infinite.to_string(),
        s.psnr_x_xadv.infinite.to_string(),
    ])?;
    finish(w, dir, "summary.csv")
}

fn write_sweep(dir: &Path, g: &SweepGrid) -> Result<()> {
    let mut w = csv_writer(dir, "sweep.csv")?;
    w.write_record(["eps", "iters", "psnr_adv", "ssim_adv", "inf_psnr_adv"])?;
    for c in &g.cells {
        w.write_record([
            fmt_num(c.eps),
            c.iters.to_string(),
            fmt_num(c.psnr.mean),
            fmt_num(c.ssim.mean),
            c.psnr.infinite.to_string(),
        ])?;
    }
    finish(w, dir, "sweep.csv")
}

fn write_noise(dir: &Path, n: &NoiseComparison) -> Result<()> {
    let mut w = csv_writer(dir, "noise.csv")?;
    w.write_record(["condition", "eps", "image_id", "psnr", "ssim"])?;
    for c in &n.conditions {
        for ((id, p), s) in c.image_ids.iter().zip(&c.psnr).zip(&c.ssim) {
            w.write_record([
                c.condition.to_string(),
                fmt_num(n.eps),
                id.clone(),
                fmt_num(*p),
                fmt_num(*s),
            ])?;
        }
    }
    finish(w, dir, "noise.csv")?;

    let mut w = csv_writer(dir, "noise_summary.csv")?;
    w.write_record([
        "condition",
        "metric",
        "min",
        "q1",
        "median",
        "q3",
        "max",
        "mean",
    ])?;
    for c in &n.conditions {
        for (metric, q) in [("psnr", c.psnr_quartiles()), ("ssim", c.ssim_quartiles())] {
            let mut rec = vec![c.condition.to_string(), metric.to_string()];
            match q {
                Some(q) => rec.extend([q.min, q.q1, q.median, q.q3, q.max, q.mean].map(fmt_num)),
                None => rec.extend(std::iter::repeat_n(String::new(), 6)),
            }
            w.write_record(rec)?;
        }
    }
    finish(w, dir, "noise_summary.csv")
}

fn write_hist(dir: &Path, reports: &[HistogramReport]) -> Result<()> {
    let mut w = csv_writer(dir, "hist.csv")?;
    w.write_record(["image_id", "condition", "channel", "bin", "count"])?;
    for r in reports {
        for c in &r.conditions {
            for (ch, name) in ["r", "g", "b"].iter().enumerate() {
                for (bin, count) in c.histogram.bins[ch].iter().enumerate() {
                    w.write_record([
                        r.image_id.clone(),
                        c.condition.to_string(),
                        name.to_string(),
                        bin.to_string(),
                        count.to_string(),
                    ])?;
                }
            }
        }
    }
    finish(w, dir, "hist.csv")?;

    let mut w = csv_writer(dir, "displacement.csv")?;
    w.write_record([
        "image_id",
        "condition",
        "luma",
        "chroma",
        "chroma_luma_ratio",
    ])?;
    for r in reports {
        for c in r.conditions.iter().filter(|c| c.condition != "clean") {
            let d = c.displacement;
            w.write_record([
                r.image_id.clone(),
                c.condition.to_string(),
                fmt_num(d.luma),
                fmt_num(d.chroma),
                fmt_num(d.ratio()),
            ])?;
        }
    }
    finish(w, dir, "displacement.csv")
}

fn write_impercept(dir: &Path, rows: &[ImperceptRow]) -> Result<()> {
    let mut w = csv_writer(dir, "impercept.csv")?;
    w.write_record([
        "eps",
        "iters",
        "projection",
        "images",
        "mean_psnr_x_xadv",
        "min_psnr_x_xadv",
        "floor_db",
        "inf_psnr_x_xadv",
    ])?;
    for r in rows {
        w.write_record([
            fmt_num(r.eps),
            r.iters.to_string(),
            r.projection.to_string(),
            r.images.to_string(),
            fmt_num(r.mean_psnr_x_xadv),
            fmt_num(r.min_psnr_x_xadv),
            fmt_num(r.floor_db),
            r.infinite.to_string(),
        ])?;
    }
    finish(w, dir, "impercept.csv")
}

fn write_images(dir: &Path, model: &Model, samples: &[Sample], spec: &EvalSpec) -> Result<()> {
    let img_dir = dir.join("images");
    fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
    samples.par_iter().enumerate().try_for_each(|(i, s)| {
        let (x_adv, _) = spec.perturb(model, &s.x, &s.y, i)?;
        let stem = s.id.trim_end_matches(".png");
        save_image(&x_adv, img_dir.join(format!("{stem}_xadv.png")))?;
        save_image(
            &model.enhance(&s.x)?,
            img_dir.join(format!("{stem}_out_clean.png")),
        )?;
        save_image(
            &model.enhance(&x_adv)?,
            img_dir.join(format!("{stem}_out_adv.png")),
        )
    })
}

/// Writes every present artifact plus `meta.json` into `dir`.
pub fn write_reports(dir: impl AsRef<Path>, a: &ReportArtifacts<'_>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    if let Some(r) = a.robustness {
        write_per_image(dir, r)?;
        write_summary(dir, &r.summary)?;
        if let Some((model, samples)) = a.save_images {
            write_images(dir, model, samples, &r.spec)?;
        }
    }
    if let Some(g) = a.sweep {
        write_sweep(dir, g)?;
    }
    if let Some(n) = a.noise {
        write_noise(dir, n)?;
    }
    if let Some(h) = a.histograms {
        write_hist(dir, h)?;
    }
    if let Some(rows) = a.impercept {
        write_impercept(dir, rows)?;
    }
    write_meta(dir, &a.meta)
}

/// Pretty JSON with a trailing newline.
pub fn write_meta(dir: &Path, meta: &serde_json::Value) -> Result<()> {
    let path = dir.join("meta.json");
    let text = serde_json::to_string_pretty(meta)? + "\n";
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Common `meta.json` fields for a model evaluation.
pub fn eval_meta(
    model: &Model,
    spec: &EvalSpec,
    extra: BTreeMap<String, serde_json::Value>,
) -> serde_json::Value {
    let mut m = serde_json::Map::new();
    m.insert("architecture".into(), model.architecture().id().into());
    m.insert("checkpoint_digest".into(), model.digest().into());
    m.insert(
        "spec".into(),
        serde_json::to_value(spec).expect("plain data"),
    );
    m.insert("projection".into(), spec.projection.as_str().into());
    m.insert("base_seed".into(), spec.seed.into());
    m.insert(
        "per_image_seed".into(),
        "derive(base_seed, image_index)".into(),
    );
    m.insert(
        "gaussian_noise".into(),
        serde_json::json!({
            "eps_is": "standard deviation",
            "sigma": spec.eps / 255.0,
            "alternative_reading": "variance eps, i.e. sigma = sqrt(eps)",
        }),
    );
    m.extend(extra);
    serde_json::Value::Object(m)
}
