//! White-box attacks on enhancement models.
//!
//! [`pgd_attack`] runs iterative sign-gradient ascent on an attack loss
//! computed between the model output and the ground truth:
//!
//! ```text
//! x⁰     = clamp01(x + M ⊙ U(−ε, ε))            (uniform init; x⁰ = x for zero init)
//! xᵗ⁺¹   = clamp01(Π(xᵗ + α · M ⊙ sgn ∇ₓ L(f(xᵗ), y)))
//! ```
//!
//! `Π` is either the projection onto the l∞ ball `[x − ε, x + ε]`
//! ([`Projection::Cumulative`]) or a clip of the single step to `[−ε, ε]`
//! ([`Projection::StepClip`]). The second variant never bounds the
//! accumulated perturbation; it exists to reproduce published numbers that
//! were produced that way.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Real, Reduction, Region, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::imaging::{Image, CHANNELS};
use crate::models::{Model, ParamMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackLoss {
    /// Per-channel RGB distance to the ground truth.
    Pixel,
    /// U/V chroma distance to the ground truth; luma is ignored.
    ColorShift,
    Mse,
}
string_enum!(AttackLoss { Pixel => "pixel", ColorShift => "color-shift", Mse => "mse" });

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChannelMask {
    None,
    R,
    G,
    B,
}
string_enum!(ChannelMask { None => "none", R => "r", G => "g", B => "b" });

impl ChannelMask {
    pub fn weights(self) -> [f32; 3] {
        match self {
            ChannelMask::None => [1.0, 1.0, 1.0],
            ChannelMask::R => [1.0, 0.0, 0.0],
            ChannelMask::G => [0.0, 1.0, 0.0],
            ChannelMask::B => [0.0, 0.0, 1.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Projection {
    Cumulative,
    StepClip,
}
string_enum!(Projection { Cumulative => "cumulative", StepClip => "step-clip" });

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitMode {
    Uniform,
    Zero,
}
string_enum!(InitMode { Uniform => "uniform", Zero => "zero" });

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    /// Zero-mean Gaussian with standard deviation ε.
    Gaussian,
    Uniform,
}
string_enum!(NoiseKind { Gaussian => "gaussian", Uniform => "uniform" });

/// Attack settings. `epsilon` and `alpha` are in intensity units (`8/255`,
/// not `8`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub epsilon: f32,
    pub alpha: f32,
    pub iters: usize,
    pub loss: AttackLoss,
    pub mask: ChannelMask,
    pub projection: Projection,
    pub init: InitMode,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            epsilon: 8.0 / 255.0,
            alpha: 2.0 / 255.0,
            iters: 20,
            loss: AttackLoss::Pixel,
            mask: ChannelMask::None,
            projection: Projection::Cumulative,
            init: InitMode::Uniform,
            seed: 42,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && (0.0..=1.0).contains(&self.epsilon)) {
            return Err(Error::Config(format!(
                "epsilon {} outside [0, 1]",
                self.epsilon
            )));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config(format!(
                "alpha {} outside [0, 1]",
                self.alpha
            )));
        }
        if self.iters == 0 {
            return Err(Error::Config("iters must be at least 1".into()));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackResult {
    pub adversarial: Image,
    /// Attack loss at `x⁰, x¹, …, xᵀ` (`T + 1` entries).
    pub loss_trace: Vec<f64>,
    /// `‖x_adv − x‖∞`.
    pub linf: f32,
    pub seed: u64,
}

impl AttackResult {
    pub fn initial_loss(&self) -> f64 {
        self.loss_trace[0]
    }

    pub fn final_loss(&self) -> f64 {
        *self.loss_trace.last().expect("non-empty trace")
    }
}

fn image_tensor<T: Real>(img: &Image) -> Tensor<T> {
    Tensor::from_f32(vec![CHANNELS, img.height(), img.width()], img.data()).expect("image shape")
}

/// Records `kind` between model output `out` and constant target `y` on `tape`.
pub fn record_loss<T: Real>(tape: &mut Tape<T>, out: Var, y: Var, kind: AttackLoss) -> Result<Var> {
    let shape = tape.shape(out).to_vec();
    let pixels = (shape[1] * shape[2]) as f64;
    match kind {
        AttackLoss::Pixel => {
            let d = tape.sub(out, y)?;
            let norms = tape.reduce(d, Reduction::L2Norm, Region::PerChannel)?;
            let total = tape.sum(norms)?;
            Ok(tape.scale(total, T::of(1.0 / (3.0 * pixels))))
        }
        AttackLoss::ColorShift => {
            let yuv_out = tape.color_transform(out)?;
            let yuv_y = tape.color_transform(y)?;
            let d = tape.sub(yuv_out, yuv_y)?;
            let norms = tape.reduce(d, Reduction::L2Norm, Region::PerChannel)?;
            let chroma = tape.constant(Tensor::new(vec![3], vec![T::zero(), T::one(), T::one()])?);
            let uv = tape.mul(norms, chroma)?;
            let total = tape.sum(uv)?;
            Ok(tape.scale(total, T::of(1.0 / (2.0 * pixels))))
        }
        AttackLoss::Mse => {
            let d = tape.sub(out, y)?;
            let sq = tape.mul(d, d)?;
            tape.mean(sq)
        }
    }
}

fn loss_value(out: &Image, y: &Image, kind: AttackLoss) -> Result<f64> {
    out.check_same_shape(y)?;
    let mut tape = Tape::<f64>::new();
    let o = tape.constant(image_tensor(out));
    let t = tape.constant(image_tensor(y));
    let l = record_loss(&mut tape, o, t, kind)?;
    Ok(tape.value(l).data()[0])
}

/// `(1 / 3WH) · Σ_c ‖out_c − y_c‖₂`.
pub fn pixel_loss(out: &Image, y: &Image) -> Result<f64> {
    loss_value(out, y, AttackLoss::Pixel)
}

/// `(1 / 2WH) · Σ_{u ∈ {U, V}} ‖YUV(out)_u − YUV(y)_u‖₂`.
pub fn color_shift_loss(out: &Image, y: &Image) -> Result<f64> {
    loss_value(out, y, AttackLoss::ColorShift)
}

/// Attack loss at `x` and its gradient with respect to `x`.
fn loss_and_grad(model: &Model, x: &[f32], y: &Image, kind: AttackLoss) -> Result<(f64, Vec<f32>)> {
    let shape = vec![CHANNELS, y.height(), y.width()];
    let mut tape = Tape::<f32>::new();
    let xv = tape.leaf(Tensor::new(shape, x.to_vec())?);
    let yv = tape.constant(image_tensor(y));
    let rec = model.record(&mut tape, xv, ParamMode::Frozen)?;
    let loss = record_loss(&mut tape, rec.output, yv, kind)?;
    let value = tape.value(loss).data()[0] as f64;
    let grads = tape.backward(loss)?;
    let g = grads.grad(xv).expect("input is a leaf").clone().into_data();
    if !value.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("attack loss or gradient".into()));
    }
    Ok((value, g))
}

fn loss_only(model: &Model, x: &[f32], y: &Image, kind: AttackLoss) -> Result<f64> {
    let shape = vec![CHANNELS, y.height(), y.width()];
    let mut tape = Tape::<f32>::new();
    let xv = tape.constant(Tensor::new(shape, x.to_vec())?);
    let yv = tape.constant(image_tensor(y));
    let rec = model.record(&mut tape, xv, ParamMode::Frozen)?;
    let loss = record_loss(&mut tape, rec.output, yv, kind)?;
    Ok(tape.value(loss).data()[0] as f64)
}

fn sign(v: f32) -> f32 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Runs exactly `cfg.iters` sign-gradient steps against `model`.
pub fn pgd_attack(model: &Model, x: &Image, y: &Image, cfg: &AttackConfig) -> Result<AttackResult> {
    cfg.validate()?;
    x.check_same_shape(y)?;
    let n = x.pixels();
    let mask = cfg.mask.weights();
    let channel_of = |i: usize| i / n;
    let (eps, alpha) = (cfg.epsilon, cfg.alpha);

    let mut current: Vec<f32> = match cfg.init {
        InitMode::Zero => x.data().to_vec(),
        InitMode::Uniform => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            x.data()
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    let u: f32 = rng.random_range(-1.0f32..=1.0) * eps;
                    (v + u * mask[channel_of(i)]).clamp(0.0, 1.0)
                })
                .collect()
        }
    };

    let mut loss_trace = Vec::with_capacity(cfg.iters + 1);
    for _ in 0..cfg.iters {
        let (loss, grad) = loss_and_grad(model, &current, y, cfg.loss)?;
        loss_trace.push(loss);
        for (i, (cur, g)) in current.iter_mut().zip(&grad).enumerate() {
            let step = alpha * sign(*g) * mask[channel_of(i)];
            let orig = x.data()[i];
            *cur = match cfg.projection {
                Projection::Cumulative => (*cur + step).clamp(orig - eps, orig + eps),
                Projection::StepClip => *cur + step.clamp(-eps, eps),
            }
            .clamp(0.0, 1.0);
        }
    }
    loss_trace.push(loss_only(model, &current, y, cfg.loss)?);

    let adversarial = Image::from_trusted(x.height(), x.width(), current);
    let linf = adversarial.max_abs_diff(x);
    Ok(AttackResult {
        adversarial,
        loss_trace,
        linf,
        seed: cfg.seed,
    })
}

/// Adds seeded random noise of strength `epsilon` and clamps to `[0, 1]`.
pub fn random_noise(x: &Image, kind: NoiseKind, epsilon: f32, seed: u64) -> Result<Image> {
    if !(epsilon.is_finite() && epsilon >= 0.0) {
        return Err(Error::Config(format!(
            "noise epsilon {epsilon} must be >= 0"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = match kind {
        NoiseKind::Gaussian => {
            let normal = Normal::new(0.0f32, epsilon).expect("non-negative sigma");
            x.data()
                .iter()
                .map(|&v| (v + normal.sample(&mut rng)).clamp(0.0, 1.0))
                .collect()
        }
        NoiseKind::Uniform => x
            .data()
            .iter()
            .map(|&v| (v + rng.random_range(-1.0f32..=1.0) * epsilon).clamp(0.0, 1.0))
            .collect(),
    };
    Ok(Image::from_trusted(x.height(), x.width(), data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_image(seed: u64, h: usize, w: usize) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::new(
            h,
            w,
            (0..3 * h * w).map(|_| rng.random_range(0.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn pixel_loss_values() {
        let y = random_image(1, 4, 4);
        assert_eq!(pixel_loss(&y, &y).unwrap(), 0.0);
        let out = Image::from_channel_values(1, 1, [0.5; 3]).unwrap();
        let zero = Image::from_channel_values(1, 1, [0.0; 3]).unwrap();
        assert!((pixel_loss(&out, &zero).unwrap() - 0.5).abs() < 1e-12);
        assert!(pixel_loss(&out, &y).is_err());
    }

    #[test]
    fn color_shift_loss_values() {
        let y = random_image(2, 4, 4);
        assert_eq!(color_shift_loss(&y, &y).unwrap(), 0.0);
        let g1 = Image::from_channel_values(2, 2, [0.2; 3]).unwrap();
        let g2 = Image::from_channel_values(2, 2, [0.9; 3]).unwrap();
        assert!(color_shift_loss(&g1, &g2).unwrap() < 1e-6);
        let red = Image::from_channel_values(1, 1, [1.0, 0.0, 0.0]).unwrap();
        let blue = Image::from_channel_values(1, 1, [0.0, 0.0, 1.0]).unwrap();
        // U: −0.147108 vs 0.435912, V: 0.614777 vs −0.099978.
        let l = color_shift_loss(&red, &blue).unwrap();
        let expected = ((0.435912f64 + 0.147108) + (0.614777 + 0.099978)) / 2.0;
        assert!((l - expected).abs() < 1e-6, "{l}");
    }

    #[test]
    fn config_validation() {
        assert!(AttackConfig::default().validate().is_ok());
        let bad = AttackConfig {
            epsilon: 1.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = AttackConfig {
            iters: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = AttackConfig {
            alpha: -0.1,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert_eq!(
            "color-shift".parse::<AttackLoss>().unwrap(),
            AttackLoss::ColorShift
        );
        assert!("cw".parse::<AttackLoss>().is_err());
    }

    #[test]
    fn zero_budget_is_identity() {
        let model = Model::tiny_enhancer(1);
        let x = random_image(3, 8, 8);
        let y = random_image(4, 8, 8);
        for projection in [Projection::Cumulative, Projection::StepClip] {
            let cfg = AttackConfig {
                epsilon: 0.0,
                iters: 3,
                projection,
                ..Default::default()
            };
            let r = pgd_attack(&model, &x, &y, &cfg).unwrap();
            assert_eq!(r.adversarial, x);
            assert_eq!(r.linf, 0.0);
            assert_eq!(r.loss_trace.len(), 4);
        }
    }

    fn hand_trace(projection: Projection) -> f32 {
        let model = Model::affine([1.0; 3], [0.0; 3]).unwrap();
        let x = Image::from_channel_values(1, 1, [0.5; 3]).unwrap();
        let y = Image::from_channel_values(1, 1, [0.3; 3]).unwrap();
        let cfg = AttackConfig {
            epsilon: 8.0 / 255.0,
            alpha: 2.0 / 255.0,
            iters: 20,
            loss: AttackLoss::Mse,
            init: InitMode::Zero,
            projection,
            ..Default::default()
        };
        let r = pgd_attack(&model, &x, &y, &cfg).unwrap();
        assert!(r.loss_trace.windows(2).all(|w| w[1] >= w[0]));
        r.adversarial.data()[0]
    }

    #[test]
    fn cumulative_hand_trace() {
        let v = hand_trace(Projection::Cumulative);
        assert!((v - (0.5 + 8.0 / 255.0)).abs() < 1e-6, "{v}");
        assert!((v - 0.53137).abs() < 1e-5);
    }

    #[test]
    fn step_clip_hand_trace() {
        let v = hand_trace(Projection::StepClip);
        assert!((v - (0.5 + 40.0 / 255.0)).abs() < 1e-5, "{v}");
        assert!((v - 0.65686).abs() < 1e-5);
    }

    #[test]
    fn masked_attack_leaves_other_channels() {
        let model = Model::tiny_enhancer(2);
        let x = random_image(5, 8, 8);
        let y = random_image(6, 8, 8);
        for (mask, kept) in [
            (ChannelMask::R, 0),
            (ChannelMask::G, 1),
            (ChannelMask::B, 2),
        ] {
            let cfg = AttackConfig {
                mask,
                iters: 4,
                ..Default::default()
            };
            let r = pgd_attack(&model, &x, &y, &cfg).unwrap();
            for c in 0..3 {
                if c == kept {
                    assert_ne!(r.adversarial.plane(c), x.plane(c));
                } else {
                    assert_eq!(r.adversarial.plane(c), x.plane(c));
                }
            }
        }
    }

    #[test]
    fn attack_is_deterministic() {
        let model = Model::tiny_enhancer(3);
        let x = random_image(7, 8, 8);
        let y = random_image(8, 8, 8);
        let cfg = AttackConfig {
            iters: 3,
            loss: AttackLoss::ColorShift,
            seed: 17,
            ..Default::default()
        };
        let a = pgd_attack(&model, &x, &y, &cfg).unwrap();
        let b = pgd_attack(&model, &x, &y, &cfg).unwrap();
        assert_eq!(a, b);
        let c = pgd_attack(&model, &x, &y, &cfg.with_seed(18)).unwrap();
        assert_ne!(a.adversarial, c.adversarial);
    }

    #[test]
    fn noise_properties() {
        let x = random_image(9, 6, 6);
        for kind in [NoiseKind::Gaussian, NoiseKind::Uniform] {
            assert_eq!(random_noise(&x, kind, 0.0, 1).unwrap(), x);
            let a = random_noise(&x, kind, 8.0 / 255.0, 3).unwrap();
            let b = random_noise(&x, kind, 8.0 / 255.0, 3).unwrap();
            assert_eq!(a, b);
            assert_ne!(a, x);
        }
        let eps = 0.05;
        let u = random_noise(&x, NoiseKind::Uniform, eps, 4).unwrap();
        for (&a, &b) in u.data().iter().zip(x.data()) {
            assert!(a >= (b - eps).max(0.0) - 1e-7 && a <= (b + eps).min(1.0) + 1e-7);
        }
        assert!(random_noise(&x, NoiseKind::Uniform, -1.0, 0).is_err());
    }

    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn step_clip_bound(seed in 0u64..1000, eps_units in 0u32..=16, alpha_units in 0u32..=4, iters in 1usize..5, zero_init in any::<bool>()) {
            let model = Model::tiny_enhancer(seed % 7);
            let x = random_image(seed, 5, 5);
            let y = random_image(seed + 1, 5, 5);
            let cfg = AttackConfig {
                epsilon: eps_units as f32 / 255.0,
                alpha: alpha_units as f32 / 255.0,
                iters,
                projection: Projection::StepClip,
                init: if zero_init { InitMode::Zero } else { InitMode::Uniform },
                seed,
                ..Default::default()
            };
            let r = pgd_attack(&model, &x, &y, &cfg).unwrap();
            let init = if zero_init { 0.0 } else { cfg.epsilon };
            let bound = (iters as f32 * cfg.alpha.min(cfg.epsilon) + init).min(1.0);
            prop_assert!(r.linf <= bound + 1e-6);
        }
    }
}
