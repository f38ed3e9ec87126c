//! Reference enhancement models.
//!
//! * [`Architecture::Affine`]: `f(x)_c = a_c·x_c + b_c`, unclamped. Its
//!   gradients have closed forms, which makes it the analytic test subject.
//! * [`Architecture::TinyEnhancer`]: three same-padded 3×3 convolutions
//!   (3→16→16→3) with ReLU between them and a sigmoid head, so outputs always
//!   lie strictly inside `(0, 1)`.

mod checkpoint;

pub use checkpoint::{
    load_checkpoint, read_manifest, save_checkpoint, Manifest, ParamEntry, FORMAT_VERSION,
};

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::autodiff::{Real, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::imaging::{clamp01, ChwTensor, Image, CHANNELS};

const HIDDEN: usize = 16;
const KERNEL: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Architecture {
    Affine,
    TinyEnhancer,
}

impl Architecture {
    pub fn id(self) -> &'static str {
        match self {
            Architecture::Affine => "affine",
            Architecture::TinyEnhancer => "tiny-enhancer",
        }
    }

    /// Smallest accepted spatial size.
    pub fn min_size(self) -> usize {
        match self {
            Architecture::Affine => 1,
            Architecture::TinyEnhancer => KERNEL,
        }
    }

    /// Parameter names and shapes, in storage order.
    pub fn layout(self) -> Vec<(&'static str, Vec<usize>)> {
        match self {
            Architecture::Affine => vec![("scale", vec![CHANNELS]), ("offset", vec![CHANNELS])],
            Architecture::TinyEnhancer => vec![
                ("conv1.weight", vec![KERNEL, KERNEL, CHANNELS, HIDDEN]),
                ("conv1.bias", vec![HIDDEN]),
                ("conv2.weight", vec![KERNEL, KERNEL, HIDDEN, HIDDEN]),
                ("conv2.bias", vec![HIDDEN]),
                ("conv3.weight", vec![KERNEL, KERNEL, HIDDEN, CHANNELS]),
                ("conv3.bias", vec![CHANNELS]),
            ],
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "affine" => Ok(Architecture::Affine),
            "tiny-enhancer" => Ok(Architecture::TinyEnhancer),
            other => Err(Error::InvalidValue(format!(
                "unknown architecture id {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// Whether a recorded forward pass should track parameter gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamMode {
    Frozen,
    Trainable,
}

/// Handles produced by [`Model::record`].
#[derive(Debug, Clone)]
pub struct Recorded {
    pub output: Var,
    /// One handle per parameter, in [`Architecture::layout`] order.
    pub params: Vec<Var>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    arch: Architecture,
    params: Vec<Param>,
}

impl Model {
    /// Builds a model from explicit parameters, checking them against the
    /// architecture layout.
    pub fn from_params(arch: Architecture, params: Vec<Param>) -> Result<Self> {
        let layout = arch.layout();
        if layout.len() != params.len() {
            return Err(Error::InvalidValue(format!(
                "{arch} expects {} parameters, got {}",
                layout.len(),
                params.len()
            )));
        }
        for ((name, shape), p) in layout.iter().zip(&params) {
            if p.name != *name || p.shape != *shape {
                return Err(Error::InvalidValue(format!(
                    "{arch} expects parameter {name} with shape {shape:?}, got {} with shape {:?}",
                    p.name, p.shape
                )));
            }
            if p.data.len() != shape.iter().product::<usize>() {
                return Err(Error::InvalidValue(format!(
                    "parameter {name} has wrong length"
                )));
            }
            if p.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("parameter {name}")));
            }
        }
        Ok(Self { arch, params })
    }

    pub fn affine(scale: [f32; 3], offset: [f32; 3]) -> Result<Self> {
        let param = |name: &str, v: [f32; 3]| Param {
            name: name.to_string(),
            shape: vec![CHANNELS],
            data: v.to_vec(),
        };
        Self::from_params(
            Architecture::Affine,
            vec![param("scale", scale), param("offset", offset)],
        )
    }

    /// Seeded tiny enhancer: weights uniform in `±sqrt(6 / fan_in)`, zero biases.
    pub fn tiny_enhancer(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = Architecture::TinyEnhancer
            .layout()
            .into_iter()
            .map(|(name, shape)| {
                let n: usize = shape.iter().product();
                let data = if shape.len() == 4 {
                    let fan_in = (shape[0] * shape[1] * shape[2]) as f32;
                    let bound = (6.0 / fan_in).sqrt();
                    (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
                } else {
                    vec![0.0; n]
                };
                Param {
                    name: name.to_string(),
                    shape,
                    data,
                }
            })
            .collect();
        Self {
            arch: Architecture::TinyEnhancer,
            params,
        }
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    /// SHA-256 over the little-endian parameter blob.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        for p in &self.params {
            for v in &p.data {
                hasher.update(v.to_le_bytes());
            }
        }
        hex::encode(hasher.finalize())
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let min = self.arch.min_size();
        match shape {
            [c, h, w] if *c == CHANNELS && *h >= min && *w >= min => Ok(()),
            _ => Err(Error::Shape(format!(
                "{} needs a 3xHxW input with H, W >= {min}, got {shape:?}",
                self.arch
            ))),
        }
    }

    /// Records the forward pass of `input` (a `[3, h, w]` node) on `tape`.
    pub fn record<T: Real>(
        &self,
        tape: &mut Tape<T>,
        input: Var,
        mode: ParamMode,
    ) -> Result<Recorded> {
        self.check_input(tape.shape(input))?;
        let params = self.push_params(tape, mode);
        let output = self.apply(tape, input, &params)?;
        Ok(Recorded { output, params })
    }

    /// Places every parameter on `tape`, in layout order.
    pub fn push_params<T: Real>(&self, tape: &mut Tape<T>, mode: ParamMode) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| {
                let t = Tensor::from_f32(p.shape.clone(), &p.data).expect("layout checked");
                match mode {
                    ParamMode::Frozen => tape.constant(t),
                    ParamMode::Trainable => tape.leaf(t),
                }
            })
            .collect()
    }

    /// Records the forward pass using parameter nodes already on `tape`, so
    /// several passes can share one set of trainable leaves.
    pub fn apply<T: Real>(&self, tape: &mut Tape<T>, input: Var, params: &[Var]) -> Result<Var> {
        self.check_input(tape.shape(input))?;
        if params.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "{} needs {} parameter nodes, got {}",
                self.arch,
                self.params.len(),
                params.len()
            )));
        }
        Ok(match self.arch {
            Architecture::Affine => tape.channel_affine(input, params[0], params[1])?,
            Architecture::TinyEnhancer => {
                let h1 = tape.conv2d(input, params[0], params[1])?;
                let h1 = tape.relu(h1);
                let h2 = tape.conv2d(h1, params[2], params[3])?;
                let h2 = tape.relu(h2);
                let out = tape.conv2d(h2, params[4], params[5])?;
                tape.sigmoid(out)
            }
        })
    }

    /// Unclamped model output for `x`.
    pub fn forward(&self, x: &Image) -> Result<ChwTensor> {
        let mut tape = Tape::<f32>::new();
        let input = tape.constant(Tensor::from_f32(
            vec![CHANNELS, x.height(), x.width()],
            x.data(),
        )?);
        let rec = self.record(&mut tape, input, ParamMode::Frozen)?;
        let out = tape.value(rec.output).clone();
        ChwTensor::new(CHANNELS, x.height(), x.width(), out.into_data())
    }

    /// Model output as an image. Values outside `[0, 1]` (possible only for
    /// the affine model) are clamped.
    pub fn enhance(&self, x: &Image) -> Result<Image> {
        clamp01(&self.forward(x)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, Reduction, Region};

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
    fn affine_identity_and_constant() {
        let x = random_image(1, 4, 5);
        let id = Model::affine([1.0; 3], [0.0; 3]).unwrap();
        assert_eq!(id.forward(&x).unwrap().data(), x.data());
        let constant = Model::affine([0.0; 3], [0.5; 3]).unwrap();
        assert!(constant
            .forward(&x)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.5));
    }

    #[test]
    fn affine_mse_gradient_closed_form() {
        let (a, b) = ([0.8f32, 1.3, -0.4], [0.1f32, -0.2, 0.3]);
        let model = Model::affine(a, b).unwrap();
        let x = random_image(2, 3, 4);
        let y = random_image(3, 3, 4);
        let mut tape = Tape::<f64>::new();
        let xv = tape.leaf(Tensor::from_f32(vec![3, 3, 4], x.data()).unwrap());
        let yv = tape.constant(Tensor::from_f32(vec![3, 3, 4], y.data()).unwrap());
        let rec = model.record(&mut tape, xv, ParamMode::Frozen).unwrap();
        let d = tape.sub(rec.output, yv).unwrap();
        let sq = tape.mul(d, d).unwrap();
        let loss = tape.mean(sq).unwrap();
        let g = tape.backward(loss).unwrap();
        let grad = g.grad(xv).unwrap().data();
        let n = x.len() as f64;
        for c in 0..3 {
            for i in 0..12 {
                let idx = c * 12 + i;
                let (ac, bc) = (a[c] as f64, b[c] as f64);
                let expected =
                    2.0 * ac * (ac * x.data()[idx] as f64 + bc - y.data()[idx] as f64) / n;
                assert!((grad[idx] - expected).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn tiny_enhancer_shapes_and_range() {
        let model = Model::tiny_enhancer(7);
        assert_eq!(
            model.num_parameters(),
            3 * 3 * 3 * 16 + 16 + 3 * 3 * 16 * 16 + 16 + 3 * 3 * 16 * 3 + 3
        );
        for (h, w) in [(3, 3), (5, 9), (16, 16)] {
            let out = model.forward(&random_image(h as u64, h, w)).unwrap();
            assert_eq!((out.channels(), out.height(), out.width()), (3, h, w));
            assert!(out.data().iter().all(|&v| v > 0.0 && v < 1.0));
        }
        assert!(model.forward(&random_image(0, 2, 8)).is_err());
    }

    #[test]
    fn tiny_enhancer_is_seeded() {
        assert_eq!(Model::tiny_enhancer(5), Model::tiny_enhancer(5));
        assert_ne!(Model::tiny_enhancer(5), Model::tiny_enhancer(6));
        let m = Model::tiny_enhancer(5);
        let bound = (6.0f32 / 27.0).sqrt();
        assert!(m.params()[0].data.iter().all(|v| v.abs() <= bound));
        assert!(m.params()[1].data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn recorded_matches_unrecorded() {
        let model = Model::tiny_enhancer(3);
        let x = random_image(4, 6, 6);
        let plain = model.forward(&x).unwrap();
        let mut tape = Tape::<f32>::new();
        let xv = tape.leaf(Tensor::from_f32(vec![3, 6, 6], x.data()).unwrap());
        let rec = model.record(&mut tape, xv, ParamMode::Trainable).unwrap();
        assert_eq!(tape.value(rec.output).data(), plain.data());
    }

    #[test]
    fn tiny_enhancer_input_gradient() {
        let model = Model::tiny_enhancer(11);
        let x = random_image(12, 8, 8);
        let point = Tensor::<f64>::from_f32(vec![3, 8, 8], x.data()).unwrap();
        let check = grad_check(
            |t: &mut Tape<f64>, v| {
                let rec = model.record(t, v, ParamMode::Frozen)?;
                t.reduce(rec.output, Reduction::L2Norm, Region::All)
            },
            &point,
            1e-3,
        )
        .unwrap();
        assert!(check.max_rel_error < 1e-3, "{}", check.max_rel_error);
    }

    #[test]
    fn from_params_validates() {
        let mut params = Model::tiny_enhancer(1).params().to_vec();
        params.pop();
        assert!(Model::from_params(Architecture::TinyEnhancer, params).is_err());
        assert!("mystery".parse::<Architecture>().is_err());
        assert_eq!(
            "tiny-enhancer".parse::<Architecture>().unwrap(),
            Architecture::TinyEnhancer
        );
    }
}
