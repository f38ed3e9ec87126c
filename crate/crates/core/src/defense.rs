//! Standard and adversarial training.
//!
//! Each step minimizes
//!
//! ```text
//! L = L_model(f(x), y) + λ · Σ_x ‖f(x) − f(x_adv)‖₂
//! ```
//!
//! over a mini-batch, where `L_model` is the batch mean of the per-image
//! MSE and `x_adv` comes from the inner attack run against the current
//! parameters. `x_adv` enters the tape as data, so no gradient flows back
//! through the attack. Standard mode is the same loop with the
//! regularizer switched off and no attack generated.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attack::{pgd_attack, AttackConfig, AttackLoss};
use crate::autodiff::{Real, Reduction, Region, Tape, Tensor, Var};
use crate::dataset::batch_iter;
use crate::error::{Error, Result};
use crate::imaging::{Image, CHANNELS};
use crate::models::{save_checkpoint, Model, ParamMode};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    Standard,
    Adversarial,
}

string_enum!(TrainMode { Standard => "standard", Adversarial => "adversarial" });

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    /// Weight of the adversarial regularizer.
    pub lambda: f32,
    /// Inner attack; its seed is replaced per item.
    pub attack: AttackConfig,
    pub seed: u64,
    pub checkpoint_out: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::Standard,
            epochs: 50,
            batch_size: 6,
            optimizer: AdamConfig::default(),
            lambda: 1.0,
            attack: AttackConfig {
                loss: AttackLoss::Mse,
                ..AttackConfig::default()
            },
            seed: 42,
            checkpoint_out: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::Config(format!(
                "lambda {} must be >= 0",
                self.lambda
            )));
        }
        let o = &self.optimizer;
        if !(o.lr.is_finite() && o.lr > 0.0) {
            return Err(Error::Config(format!("learning rate {} must be > 0", o.lr)));
        }
        if !((0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2)) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        if !(o.eps.is_finite() && o.eps > 0.0) {
            return Err(Error::Config("Adam epsilon must be > 0".into()));
        }
        if self.mode == TrainMode::Adversarial {
            self.attack.validate()?;
        }
        Ok(())
    }

    fn effective_lambda(&self) -> f32 {
        match self.mode {
            TrainMode::Standard => 0.0,
            TrainMode::Adversarial => self.lambda,
        }
    }
}

/// Adam moments for every parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    cfg: AdamConfig,
    step: u32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(model: &Model, cfg: AdamConfig) -> Self {
        let zeros = || {
            model
                .params()
                .iter()
                .map(|p| vec![0.0; p.data.len()])
                .collect()
        };
        Self {
            cfg,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps(&self) -> u32 {
        self.step
    }

    /// Applies one update with per-parameter gradients `grads`.
    pub fn update(&mut self, model: &mut Model, grads: &[Vec<f32>]) {
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (k, p) in model.params_mut().iter_mut().enumerate() {
            for (i, w) in p.data.iter_mut().enumerate() {
                let g = grads[k][i];
                let m = &mut self.m[k][i];
                let v = &mut self.v[k][i];
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            }
        }
    }
}

fn image_tensor<T: Real>(img: &Image) -> Tensor<T> {
    Tensor::from_f32(vec![CHANNELS, img.height(), img.width()], img.data()).expect("image shape")
}

fn record_mse<T: Real>(tape: &mut Tape<T>, out: Var, y: Var) -> Result<Var> {
    let d = tape.sub(out, y)?;
    let sq = tape.mul(d, d)?;
    tape.mean(sq)
}

fn record_adv<T: Real>(tape: &mut Tape<T>, fx: Var, fx_adv: Var) -> Result<Var> {
    let d = tape.sub(fx, fx_adv)?;
    let n = tape.reduce(d, Reduction::L2Norm, Region::All)?;
    tape.sum(n)
}

fn scalar_on_tape(
    a: &Image,
    b: &Image,
    f: fn(&mut Tape<f64>, Var, Var) -> Result<Var>,
) -> Result<f64> {
    a.check_same_shape(b)?;
    let mut tape = Tape::<f64>::new();
    let av = tape.constant(image_tensor(a));
    let bv = tape.constant(image_tensor(b));
    let l = f(&mut tape, av, bv)?;
    Ok(tape.value(l).data()[0])
}

/// Mean squared error over all elements.
pub fn model_loss(out: &Image, y: &Image) -> Result<f64> {
    scalar_on_tape(out, y, record_mse)
}

/// `Σ_items ‖f(x) − f(x_adv)‖₂`, each norm over all `3·H·W` elements.
pub fn adv_regularizer(f_x: &[Image], f_xadv: &[Image]) -> Result<f64> {
    if f_x.len() != f_xadv.len() {
        return Err(Error::Shape(format!(
            "regularizer needs matching batches, got {} and {}",
            f_x.len(),
            f_xadv.len()
        )));
    }
    f_x.iter()
        .zip(f_xadv)
        .map(|(a, b)| scalar_on_tape(a, b, record_adv))
        .sum()
}

/// Losses of one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    /// Batch mean of the per-image MSE.
    pub l_model: f64,
    /// Batch sum of `‖f(x) − f(x_adv)‖₂`; zero in standard mode.
    pub l_adv: f64,
    pub total: f64,
}

struct ItemGrad {
    mse: f64,
    adv: f64,
    grads: Vec<Vec<f32>>,
}

fn item_gradient(
    model: &Model,
    x: &Image,
    y: &Image,
    x_adv: Option<&Image>,
    lambda: f32,
    batch: usize,
) -> Result<ItemGrad> {
    let mut tape = Tape::<f32>::new();
    let params = model.push_params(&mut tape, ParamMode::Trainable);
    let xv = tape.constant(image_tensor(x));
    let yv = tape.constant(image_tensor(y));
    let fx = model.apply(&mut tape, xv, &params)?;
    let mse = record_mse(&mut tape, fx, yv)?;
    let mut loss = tape.scale(mse, 1.0 / batch as f32);
    let mut adv = 0.0;
    if let Some(xa) = x_adv {
        let xav = tape.constant(image_tensor(xa));
        let fxa = model.apply(&mut tape, xav, &params)?;
        let reg = record_adv(&mut tape, fx, fxa)?;
        adv = tape.value(reg).data()[0] as f64;
        let weighted = tape.scale(reg, lambda);
        loss = tape.add(loss, weighted)?;
    }
    let mse_value = tape.value(mse).data()[0] as f64;
    if !(mse_value.is_finite() && adv.is_finite()) {
        return Err(Error::NonFinite(format!(
            "training loss (mse {mse_value}, adversarial {adv}); lower the learning rate or check the data"
        )));
    }
    let report = tape.backward(loss)?;
    let grads = params
        .iter()
        .map(|&p| report.grad(p).expect("trainable leaf").data().to_vec())
        .collect();
    Ok(ItemGrad {
        mse: mse_value,
        adv,
        grads,
    })
}

/// One optimizer update on `(x, y)` pairs. `attack_seeds` supplies the
/// inner-attack seed of every item and is ignored in standard mode.
pub fn train_step(
    model: &mut Model,
    opt: &mut Adam,
    batch: &[(&Image, &Image)],
    attack_seeds: &[u64],
    cfg: &TrainConfig,
) -> Result<StepLosses> {
    if batch.is_empty() {
        return Err(Error::Dataset("empty training batch".into()));
    }
    let adversarial = cfg.mode == TrainMode::Adversarial;
    if adversarial && attack_seeds.len() != batch.len() {
        return Err(Error::InvalidValue(
            "one attack seed per batch item is required".into(),
        ));
    }
    let lambda = cfg.effective_lambda();
    let frozen: &Model = model;
    let items: Vec<ItemGrad> = batch
        .par_iter()
        .enumerate()
        .map(|(i, (x, y))| {
            let x_adv = if adversarial {
                let acfg = cfg.attack.with_seed(attack_seeds[i]);
                Some(pgd_attack(frozen, x, y, &acfg)?.adversarial)
            } else {
                None
            };
            item_gradient(frozen, x, y, x_adv.as_ref(), lambda, batch.len())
        })
        .collect::<Result<_>>()?;

    let mut grads: Vec<Vec<f32>> = model
        .params()
        .iter()
        .map(|p| vec![0.0; p.data.len()])
        .collect();
    let (mut l_model, mut l_adv) = (0.0, 0.0);
    for item in &items {
        l_model += item.mse;
        l_adv += item.adv;
        for (acc, g) in grads.iter_mut().zip(&item.grads) {
            for (a, v) in acc.iter_mut().zip(g) {
                *a += v;
            }
        }
    }
    l_model /= batch.len() as f64;
    opt.update(model, &grads);
    Ok(StepLosses {
        l_model,
        l_adv,
        total: l_model + lambda as f64 * l_adv,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean per-image MSE over the epoch.
    pub l_model: f64,
    /// Mean per-image `‖f(x) − f(x_adv)‖₂` over the epoch.
    pub l_adv: f64,
    pub seconds: f64,
    /// SHA-256 prefix of the epoch's shuffle order and attack seeds.
    pub rng_digest: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainLog {
    /// CSV with columns `epoch, l_model, l_adv, seconds`. Wall time varies
    /// between runs, so `with_time = false` leaves that column empty and
    /// the file becomes reproducible byte for byte.
    pub fn write_csv(&self, path: impl AsRef<Path>, with_time: bool) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["epoch", "l_model", "l_adv", "seconds"])?;
        for e in &self.epochs {
            let secs = if with_time {
                format!("{:.3}", e.seconds)
            } else {
                String::new()
            };
            w.write_record([
                e.epoch.to_string(),
                e.l_model.to_string(),
                e.l_adv.to_string(),
                secs,
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn digest_epoch(order: &[Vec<usize>], seeds: &[u64]) -> String {
    let mut h = Sha256::new();
    for i in order.iter().flatten() {
        h.update((*i as u64).to_le_bytes());
    }
    for s in seeds {
        h.update(s.to_le_bytes());
    }
    hex::encode(&h.finalize()[..8])
}

/// Per-item inner-attack seed for `(epoch, item)`.
pub fn attack_seed(base: u64, epoch: usize, item: usize) -> u64 {
    seed::derive(base, &[1, epoch as u64, item as u64])
}

/// Trains `model` on `(x, y)` pairs. `progress` sees each finished epoch.
pub fn train_with(
    mut model: Model,
    pairs: &[(Image, Image)],
    cfg: &TrainConfig,
    mut progress: impl FnMut(&EpochLog),
) -> Result<(Model, TrainLog)> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::Dataset("training set is empty".into()));
    }
    let mut opt = Adam::new(&model, cfg.optimizer);
    let mut log = TrainLog::default();
    let shuffle_seed = seed::derive(cfg.seed, &[0]);
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let order = batch_iter(pairs.len(), cfg.batch_size, shuffle_seed, epoch);
        let mut seeds_used = Vec::new();
        let (mut sum_model, mut sum_adv) = (0.0, 0.0);
        for idx in &order {
            let batch: Vec<(&Image, &Image)> =
                idx.iter().map(|&i| (&pairs[i].0, &pairs[i].1)).collect();
            let seeds: Vec<u64> = idx
                .iter()
                .map(|&i| attack_seed(cfg.seed, epoch, i))
                .collect();
            let step = train_step(&mut model, &mut opt, &batch, &seeds, cfg)?;
            sum_model += step.l_model * idx.len() as f64;
            sum_adv += step.l_adv;
            if cfg.mode == TrainMode::Adversarial {
                seeds_used.extend(seeds);
            }
        }
        let entry = EpochLog {
            epoch,
            l_model: sum_model / pairs.len() as f64,
            l_adv: sum_adv / pairs.len() as f64,
            seconds: start.elapsed().as_secs_f64(),
            rng_digest: digest_epoch(&order, &seeds_used),
        };
        progress(&entry);
        log.epochs.push(entry);
    }

    if let Some(dir) = &cfg.checkpoint_out {
        let mut meta = std::collections::BTreeMap::new();
        meta.insert("train_config".to_string(), serde_json::to_value(cfg)?);
        save_checkpoint(&model, dir, meta)?;
    }
    Ok((model, log))
}

pub fn train(
    model: Model,
    pairs: &[(Image, Image)],
    cfg: &TrainConfig,
) -> Result<(Model, TrainLog)> {
    train_with(model, pairs, cfg, |_| {})
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use crate::dataset::{degrade, synth_clean, DegradationParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(seed: u64, h: usize, w: usize) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::new(
            h,
            w,
            (0..3 * h * w).map(|_| rng.random_range(0.0..1.0)).collect(),
        )
        .unwrap()
    }

    fn pairs(n: usize, size: usize) -> Vec<(Image, Image)> {
        (0..n as u64)
            .map(|i| {
                let y = synth_clean(i, size).unwrap();
                (
                    degrade(&y, 0.8, &DegradationParams::default(), i).unwrap(),
                    y,
                )
            })
            .collect()
    }

    #[test]
    fn mse_values() {
        let a = Image::filled(4, 4, 0.3).unwrap();
        let b = Image::filled(4, 4, 0.4).unwrap();
        assert_eq!(model_loss(&a, &a).unwrap(), 0.0);
        assert!((model_loss(&a, &b).unwrap() - 0.01).abs() < 1e-8);
        assert!(model_loss(&a, &Image::filled(4, 5, 0.3).unwrap()).is_err());
    }

    #[test]
    fn mse_gradient() {
        let y = random_image(1, 3, 3);
        let out = random_image(2, 3, 3);
        let yt: Tensor<f64> = image_tensor(&y);
        let check = grad_check(
            |t, o| {
                let yv = t.constant(yt.clone());
                record_mse(t, o, yv)
            },
            &image_tensor(&out),
            1e-3,
        )
        .unwrap();
        assert!(check.max_rel_error < 1e-6, "{}", check.max_rel_error);
        let n = out.len() as f64;
        for i in 0..out.len() {
            let expected = 2.0 * (out.data()[i] as f64 - y.data()[i] as f64) / n;
            assert!((check.analytic[i] - expected).abs() < 1e-7);
        }
    }

    #[test]
    fn regularizer_values() {
        let a = Image::filled(2, 2, 0.5).unwrap();
        let b = Image::filled(2, 2, 0.6).unwrap();
        assert_eq!(
            adv_regularizer(std::slice::from_ref(&a), std::slice::from_ref(&a)).unwrap(),
            0.0
        );
        let v = adv_regularizer(std::slice::from_ref(&a), std::slice::from_ref(&b)).unwrap();
        assert!((v - 0.12f64.sqrt()).abs() < 1e-6, "{v}");
        let two = adv_regularizer(&[a.clone(), a.clone()], &[b.clone(), b]).unwrap();
        assert!((two - 2.0 * v).abs() < 1e-9);
        assert!(adv_regularizer(&[a], &[]).is_err());
    }

    #[test]
    fn affine_loss_decreases_with_small_lr() {
        let data = pairs(3, 16);
        let cfg = TrainConfig {
            optimizer: AdamConfig {
                lr: 1e-3,
                ..AdamConfig::default()
            },
            ..TrainConfig::default()
        };
        let mut model = Model::affine([1.0; 3], [0.0; 3]).unwrap();
        let mut opt = Adam::new(&model, cfg.optimizer);
        let batch: Vec<_> = data.iter().map(|(x, y)| (x, y)).collect();
        let mut last = f64::INFINITY;
        for _ in 0..20 {
            let s = train_step(&mut model, &mut opt, &batch, &[], &cfg).unwrap();
            assert!(s.l_model < last);
            last = s.l_model;
        }
    }

    #[test]
    fn lambda_zero_matches_standard() {
        let data = pairs(4, 16);
        let standard = TrainConfig {
            epochs: 2,
            batch_size: 3,
            attack: AttackConfig {
                iters: 2,
                loss: AttackLoss::Mse,
                ..AttackConfig::default()
            },
            ..TrainConfig::default()
        };
        let adversarial = TrainConfig {
            mode: TrainMode::Adversarial,
            lambda: 0.0,
            ..standard.clone()
        };
        let (a, la) = train(Model::tiny_enhancer(1), &data, &standard).unwrap();
        let (b, lb) = train(Model::tiny_enhancer(1), &data, &adversarial).unwrap();
        assert_eq!(a, b);
        assert!(lb.epochs[0].l_adv > 0.0);
        assert_eq!(la.epochs[0].l_model, lb.epochs[0].l_model);
    }

    #[test]
    fn adversarial_training_is_deterministic() {
        let data = pairs(3, 16);
        let cfg = TrainConfig {
            mode: TrainMode::Adversarial,
            epochs: 1,
            batch_size: 2,
            attack: AttackConfig {
                iters: 2,
                loss: AttackLoss::Mse,
                ..AttackConfig::default()
            },
            ..TrainConfig::default()
        };
        let (a, la) = train(Model::tiny_enhancer(5), &data, &cfg).unwrap();
        let (b, lb) = train(Model::tiny_enhancer(5), &data, &cfg).unwrap();
        assert_eq!(a.digest(), b.digest());
        assert_eq!(la.epochs[0].rng_digest, lb.epochs[0].rng_digest);
        assert_ne!(a.digest(), Model::tiny_enhancer(5).digest());
    }

    #[test]
    fn one_epoch_one_batch_is_one_step() {
        let data = pairs(2, 16);
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 2,
            ..TrainConfig::default()
        };
        let (trained, _) = train(Model::tiny_enhancer(2), &data, &cfg).unwrap();
        let mut manual = Model::tiny_enhancer(2);
        let mut opt = Adam::new(&manual, cfg.optimizer);
        let order = batch_iter(2, 2, seed::derive(cfg.seed, &[0]), 1);
        let batch: Vec<_> = order[0].iter().map(|&i| (&data[i].0, &data[i].1)).collect();
        train_step(&mut manual, &mut opt, &batch, &[], &cfg).unwrap();
        assert_eq!(trained, manual);
    }

    #[test]
    fn checkpoint_and_log_written() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            checkpoint_out: Some(dir.path().join("ckpt")),
            ..TrainConfig::default()
        };
        let (model, log) = train(Model::tiny_enhancer(0), &pairs(2, 16), &cfg).unwrap();
        let (loaded, _) = crate::models::load_checkpoint(dir.path().join("ckpt")).unwrap();
        assert_eq!(loaded, model);
        assert_eq!(log.epochs.len(), 2);
        let csv_path = dir.path().join("log.csv");
        log.write_csv(&csv_path, false).unwrap();
        let text = std::fs::read_to_string(&csv_path).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("epoch,l_model,l_adv,seconds\n"));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            lambda: -1.0,
            ..TrainConfig::default()
        }
        .validate()
        .is_err());
        assert!(train(Model::tiny_enhancer(0), &[], &TrainConfig::default()).is_err());
    }
}
