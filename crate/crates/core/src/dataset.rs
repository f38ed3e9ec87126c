//! Desk-scale paired data.
//!
//! Clean images are procedural (gradient background plus a handful of solid
//! shapes). Degraded inputs follow a simple attenuation-plus-backscatter
//! water model:
//!
//! ```text
//! x_c = y_c · e^{−β_c d} + B_c · (1 − e^{−β_c d})
//! ```
//!
//! optionally followed by a 3×3 box blur and Gaussian sensor noise, then
//! clamped to `[0, 1]`.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{load_image, save_image, Image, CHANNELS};
use crate::seed;

pub const CLEAN_DIR: &str = "clean";
pub const DEGRADED_DIR: &str = "degraded";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const MIN_SYNTH_SIZE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DegradationParams {
    /// Per-channel attenuation per unit depth (R, G, B).
    pub attenuation: [f32; 3],
    /// Backscatter color.
    pub backscatter: [f32; 3],
    pub depth_min: f32,
    pub depth_max: f32,
    pub blur: bool,
    pub noise_sigma: f32,
}

/// Named water presets; red attenuates fastest in all of them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WaterType {
    I,
    II,
    III,
}

impl std::str::FromStr for WaterType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "I" | "TYPE-I" | "1" => Ok(WaterType::I),
            "II" | "TYPE-II" | "2" => Ok(WaterType::II),
            "III" | "TYPE-III" | "3" => Ok(WaterType::III),
            _ => Err(Error::Config(format!("unknown water type {s:?}"))),
        }
    }
}

impl DegradationParams {
    pub fn preset(water: WaterType) -> Self {
        let attenuation = match water {
            WaterType::I => [0.8, 0.4, 0.2],
            WaterType::II => [1.2, 0.6, 0.3],
            WaterType::III => [1.8, 0.9, 0.45],
        };
        Self {
            attenuation,
            backscatter: [0.05, 0.25, 0.35],
            depth_min: 0.3,
            depth_max: 1.2,
            blur: false,
            noise_sigma: 0.01,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self
            .attenuation
            .iter()
            .chain(&self.backscatter)
            .chain([&self.depth_min, &self.depth_max, &self.noise_sigma])
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Config(
                "degradation parameters must be finite".into(),
            ));
        }
        if self.attenuation.iter().any(|&b| b < 0.0) {
            return Err(Error::Config("attenuation must be >= 0".into()));
        }
        if self.backscatter.iter().any(|b| !(0.0..=1.0).contains(b)) {
            return Err(Error::Config("backscatter must lie in [0, 1]".into()));
        }
        if self.depth_min < 0.0 || self.depth_min > self.depth_max {
            return Err(Error::Config(format!(
                "depth range [{}, {}] must be non-negative and ordered",
                self.depth_min, self.depth_max
            )));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::Config("noise sigma must be >= 0".into()));
        }
        Ok(())
    }
}

impl Default for DegradationParams {
    fn default() -> Self {
        Self::preset(WaterType::II)
    }
}

fn random_color(rng: &mut ChaCha8Rng) -> [f32; 3] {
    [rng.random(), rng.random(), rng.random()]
}

/// Procedural clean image: two-color linear gradient plus 3–8 solid
/// ellipses or rectangles.
pub fn synth_clean(seed: u64, size: usize) -> Result<Image> {
    if size < MIN_SYNTH_SIZE {
        return Err(Error::Config(format!(
            "synthetic images need size >= {MIN_SYNTH_SIZE}, got {size}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = size * size;
    let mut data = vec![0.0f32; CHANNELS * n];

    let (c0, c1) = (random_color(&mut rng), random_color(&mut rng));
    let angle: f32 = rng.random_range(0.0..std::f32::consts::TAU);
    let (dx, dy) = (angle.cos(), angle.sin());
    let extent = (dx.abs() + dy.abs()) * (size - 1) as f32;
    let origin = dx.min(0.0) * (size - 1) as f32 + dy.min(0.0) * (size - 1) as f32;
    for y in 0..size {
        for x in 0..size {
            let t = ((x as f32 * dx + y as f32 * dy - origin) / extent.max(1e-6)).clamp(0.0, 1.0);
            for c in 0..CHANNELS {
                data[c * n + y * size + x] = c0[c] * (1.0 - t) + c1[c] * t;
            }
        }
    }

    let shapes = rng.random_range(3..=8);
    let s = size as f32;
    for _ in 0..shapes {
        let ellipse: bool = rng.random();
        let (cx, cy) = (rng.random_range(0.0..s), rng.random_range(0.0..s));
        let (rx, ry) = (
            rng.random_range(s / 10.0..s / 3.0),
            rng.random_range(s / 10.0..s / 3.0),
        );
        let color = random_color(&mut rng);
        for y in 0..size {
            for x in 0..size {
                let (px, py) = (x as f32 + 0.5 - cx, y as f32 + 0.5 - cy);
                let inside = if ellipse {
                    (px / rx).powi(2) + (py / ry).powi(2) <= 1.0
                } else {
                    px.abs() <= rx && py.abs() <= ry
                };
                if inside {
                    for c in 0..CHANNELS {
                        data[c * n + y * size + x] = color[c];
                    }
                }
            }
        }
    }
    Image::new(size, size, data)
}

fn box_blur(data: &[f32], h: usize, w: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; data.len()];
    let n = h * w;
    for c in 0..CHANNELS {
        let plane = &data[c * n..(c + 1) * n];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0f32;
                for oy in -1isize..=1 {
                    for ox in -1isize..=1 {
                        let yy = (y as isize + oy).clamp(0, h as isize - 1) as usize;
                        let xx = (x as isize + ox).clamp(0, w as isize - 1) as usize;
                        acc += plane[yy * w + xx];
                    }
                }
                out[c * n + y * w + x] = acc / 9.0;
            }
        }
    }
    out
}

/// Applies the water model at depth `depth`, then blur and noise.
pub fn degrade(y: &Image, depth: f32, params: &DegradationParams, seed: u64) -> Result<Image> {
    params.validate()?;
    if !(depth.is_finite() && depth >= 0.0) {
        return Err(Error::Config(format!("depth {depth} must be >= 0")));
    }
    let n = y.pixels();
    let mut data = vec![0.0f32; y.len()];
    for c in 0..CHANNELS {
        let t = (-params.attenuation[c] * depth).exp();
        let haze = params.backscatter[c] * (1.0 - t);
        for (dst, &v) in data[c * n..(c + 1) * n].iter_mut().zip(y.plane(c)) {
            *dst = v * t + haze;
        }
    }
    if params.blur {
        data = box_blur(&data, y.height(), y.width());
    }
    if params.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0f32, params.noise_sigma).expect("validated sigma");
        for v in &mut data {
            *v += normal.sample(&mut rng);
        }
    }
    data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    Image::new(y.height(), y.width(), data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pair {
    /// File name shared by the clean and degraded images.
    pub name: String,
    pub degraded: PathBuf,
    pub clean: PathBuf,
}

/// A decoded pair: degraded input `x` and reference `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub x: Image,
    pub y: Image,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub seed: u64,
    pub count: usize,
    pub size: usize,
    pub params: DegradationParams,
    pub train_fraction: f64,
    /// Per-image depth, by file name.
    pub depths: BTreeMap<String, f32>,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

/// Pairs aligned by file name, sorted, plus split membership.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedDataset {
    pub root: PathBuf,
    pub pairs: Vec<Pair>,
    pub manifest: Option<DatasetManifest>,
}

impl PairedDataset {
    /// Pairs in `split`. Without a manifest every pair belongs to both splits.
    pub fn split(&self, split: Split) -> Vec<&Pair> {
        let Some(m) = &self.manifest else {
            return self.pairs.iter().collect();
        };
        let names: HashSet<&str> = match split {
            Split::Train => m.train.iter().map(String::as_str).collect(),
            Split::Test => m.test.iter().map(String::as_str).collect(),
        };
        self.pairs
            .iter()
            .filter(|p| names.contains(p.name.as_str()))
            .collect()
    }

    /// Decodes the pairs of `split`, keeping file names as ids.
    pub fn samples(&self, split: Split) -> Result<Vec<Sample>> {
        self.split(split)
            .into_iter()
            .map(|p| {
                Ok(Sample {
                    id: p.name.clone(),
                    x: load_image(&p.degraded)?,
                    y: load_image(&p.clean)?,
                })
            })
            .collect()
    }

    /// Decodes every pair regardless of split.
    pub fn samples_all(&self) -> Result<Vec<Sample>> {
        self.pairs
            .iter()
            .map(|p| {
                Ok(Sample {
                    id: p.name.clone(),
                    x: load_image(&p.degraded)?,
                    y: load_image(&p.clean)?,
                })
            })
            .collect()
    }

    /// Decodes the pairs of `split` as `(degraded, clean)` images.
    pub fn load(&self, split: Split) -> Result<Vec<(Image, Image)>> {
        self.split(split)
            .into_iter()
            .map(|p| Ok((load_image(&p.degraded)?, load_image(&p.clean)?)))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

pub fn pair_name(index: usize) -> String {
    format!("{index:04}.png")
}

/// Writes `count` synthetic pairs plus `manifest.json` under `out`.
pub fn generate_dataset(
    out: impl AsRef<Path>,
    count: usize,
    size: usize,
    params: &DegradationParams,
    seed: u64,
    train_fraction: f64,
) -> Result<PairedDataset> {
    let out = out.as_ref();
    params.validate()?;
    if count == 0 {
        return Err(Error::Config("count must be at least 1".into()));
    }
    if size < MIN_SYNTH_SIZE {
        return Err(Error::Config(format!("size must be >= {MIN_SYNTH_SIZE}")));
    }
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::Config("train fraction must lie in [0, 1]".into()));
    }
    for sub in [CLEAN_DIR, DEGRADED_DIR] {
        let d = out.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }

    let mut depths = BTreeMap::new();
    let mut pairs = Vec::with_capacity(count);
    for i in 0..count {
        let name = pair_name(i);
        let clean = synth_clean(seed::derive(seed, &[0, i as u64]), size)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, &[1, i as u64]));
        let depth = if params.depth_max > params.depth_min {
            rng.random_range(params.depth_min..=params.depth_max)
        } else {
            params.depth_min
        };
        let degraded = degrade(&clean, depth, params, seed::derive(seed, &[2, i as u64]))?;
        let pair = Pair {
            name: name.clone(),
            clean: out.join(CLEAN_DIR).join(&name),
            degraded: out.join(DEGRADED_DIR).join(&name),
        };
        save_image(&clean, &pair.clean)?;
        save_image(&degraded, &pair.degraded)?;
        depths.insert(name, depth);
        pairs.push(pair);
    }

    let n_train = (count as f64 * train_fraction).round() as usize;
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed::derive(seed, &[3])));
    let mut train: Vec<usize> = order[..n_train].to_vec();
    let mut test: Vec<usize> = order[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();

    let manifest = DatasetManifest {
        seed,
        count,
        size,
        params: *params,
        train_fraction,
        depths,
        train: train.into_iter().map(pair_name).collect(),
        test: test.into_iter().map(pair_name).collect(),
    };
    let mpath = out.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest)? + "\n";
    fs::write(&mpath, json).map_err(|e| Error::io(&mpath, e))?;

    Ok(PairedDataset {
        root: out.to_path_buf(),
        pairs,
        manifest: Some(manifest),
    })
}

fn list_files(dir: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if entry.file_type().map_err(|e| Error::io(dir, e))?.is_file() {
            names.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    names.sort();
    Ok(names)
}

/// Loads a `clean/` + `degraded/` directory pair with matching file names.
/// A `manifest.json`, if present, supplies the train/test split.
pub fn load_paired_dir(dir: impl AsRef<Path>) -> Result<PairedDataset> {
    let dir = dir.as_ref();
    let clean = list_files(&dir.join(CLEAN_DIR))?;
    let degraded = list_files(&dir.join(DEGRADED_DIR))?;
    if clean.is_empty() && degraded.is_empty() {
        return Err(Error::Dataset(format!(
            "{} contains no image pairs",
            dir.display()
        )));
    }
    let clean_set: HashSet<&String> = clean.iter().collect();
    let degraded_set: HashSet<&String> = degraded.iter().collect();
    if let Some(orphan) = clean.iter().find(|n| !degraded_set.contains(n)) {
        return Err(Error::Dataset(format!(
            "{}/{orphan} has no matching {DEGRADED_DIR}/{orphan}",
            CLEAN_DIR
        )));
    }
    if let Some(orphan) = degraded.iter().find(|n| !clean_set.contains(n)) {
        return Err(Error::Dataset(format!(
            "{}/{orphan} has no matching {CLEAN_DIR}/{orphan}",
            DEGRADED_DIR
        )));
    }

    let mut dims = None;
    let mut pairs = Vec::with_capacity(clean.len());
    for name in clean {
        let pair = Pair {
            clean: dir.join(CLEAN_DIR).join(&name),
            degraded: dir.join(DEGRADED_DIR).join(&name),
            name,
        };
        for path in [&pair.clean, &pair.degraded] {
            let d = image::image_dimensions(path).map_err(|e| Error::Image {
                path: path.clone(),
                message: e.to_string(),
            })?;
            match dims {
                None => dims = Some(d),
                Some(first) if first != d => {
                    return Err(Error::Dataset(format!(
                        "{} is {}x{}, expected {}x{} like the rest of the dataset",
                        path.display(),
                        d.0,
                        d.1,
                        first.0,
                        first.1
                    )))
                }
                _ => {}
            }
        }
        pairs.push(pair);
    }

    let mpath = dir.join(MANIFEST_FILE);
    let manifest = if mpath.exists() {
        let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let m: DatasetManifest = serde_json::from_str(&text)?;
        let known: HashSet<&str> = pairs.iter().map(|p| p.name.as_str()).collect();
        if let Some(missing) = m
            .train
            .iter()
            .chain(&m.test)
            .find(|n| !known.contains(n.as_str()))
        {
            return Err(Error::Dataset(format!(
                "manifest lists {missing}, which is not on disk"
            )));
        }
        Some(m)
    } else {
        None
    };

    Ok(PairedDataset {
        root: dir.to_path_buf(),
        pairs,
        manifest,
    })
}

/// Index batches for one epoch, shuffled by `(seed, epoch)`. The final
/// partial batch is kept.
pub fn batch_iter(len: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch size must be at least 1");
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed::derive(
        seed,
        &[epoch as u64],
    )));
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}
