//! Command-line front end.
//!
//! Every subcommand accepts `--config FILE`, a JSON object with flat dotted
//! keys (`"attack.eps": 8`). Inline flags override file values and unknown
//! keys are rejected. All settings are resolved and validated before
//! anything is written, and each run records the normalized settings in
//! `meta.json` next to its outputs.
//!
//! Exit codes: 0 success, 1 invalid usage or configuration, 2 runtime
//! failure.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::attack::{InitMode, Projection};
use crate::dataset::{
    generate_dataset, load_paired_dir, DegradationParams, Sample, Split, WaterType,
};
use crate::defense::{train_with, AdamConfig, TrainConfig, TrainMode};
use crate::error::{Error, Result};
use crate::eval::{
    eval_meta, evaluate, histogram_study, imperceptibility_report, noise_compare, psnr_floor_db,
    sweep, write_meta, write_reports, EvalSpec, Method, ReportArtifacts, PAPER_SWEEP_EPS,
    PAPER_SWEEP_ITERS,
};
use crate::imaging::{load_image, psnr, save_image};
use crate::models::{load_checkpoint, Architecture, Model};

pub const DEFAULT_SEED: u64 = 42;
pub const MAX_EPS: f64 = 64.0;
pub const MAX_ITERS: usize = 1000;

#[derive(Debug, Parser)]
#[command(
    name = "uwadv",
    version,
    about = "Adversarial attacks and defenses for image enhancement models"
)]
pub struct Cli {
    /// Worker threads for per-image work (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic paired dataset.
    GenData(GenDataArgs),
    /// Train or adversarially finetune an enhancer.
    Train(TrainArgs),
    /// Attack images and write the adversarial inputs.
    Attack(AttackArgs),
    /// Robustness, noise, histogram and imperceptibility reports.
    Eval(EvalArgs),
    /// Mean adversarial quality over an eps x iterations grid.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub size: Option<usize>,
    /// Water preset: I, II or III.
    #[arg(long)]
    pub water: Option<String>,
    /// Apply a 3x3 box blur after attenuation.
    #[arg(long)]
    pub blur: bool,
    #[arg(long)]
    pub noise_sigma: Option<f32>,
    #[arg(long)]
    pub depth_min: Option<f32>,
    #[arg(long)]
    pub depth_max: Option<f32>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Flags shared by the attack-driven subcommands. Budgets are in 1/255 units.
#[derive(Debug, Args)]
pub struct AttackFlags {
    /// pixel, color, channel-r, channel-g, channel-b, mse, gaussian or uniform.
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub iters: Option<usize>,
    /// cumulative or step-clip.
    #[arg(long)]
    pub proj: Option<String>,
    /// uniform or zero.
    #[arg(long)]
    pub init: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset directory (clean/ and degraded/).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Checkpoint directory to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Start from this checkpoint instead of a fresh model.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// affine or tiny-enhancer (fresh models only).
    #[arg(long)]
    pub arch: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f32>,
    /// Adversarial training.
    #[arg(long)]
    pub adv: bool,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f32>,
    /// Record wall time in train_log.csv (makes the file run-dependent).
    #[arg(long)]
    pub log_time: bool,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct AttackArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Checkpoint directory.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// A PNG or a dataset directory.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Reference image for a single-PNG input.
    #[arg(long)]
    pub target: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// train, test or all (dataset inputs).
    #[arg(long)]
    pub split: Option<String>,
    #[command(flatten)]
    pub attack: AttackFlags,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<String>,
    #[command(flatten)]
    pub attack: AttackFlags,
    /// Budgets for the imperceptibility table, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub impercept_eps: Option<Vec<f64>>,
    #[arg(long)]
    pub impercept_iters: Option<usize>,
    /// Save adversarial inputs and outputs as PNGs.
    #[arg(long)]
    pub save_images: bool,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub eps_list: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub iters_list: Option<Vec<usize>>,
    #[command(flatten)]
    pub attack: AttackFlags,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Merges inline flags over a flat JSON config and records the result.
#[derive(Debug, Default)]
pub struct Resolver {
    file: BTreeMap<String, Value>,
    seen: BTreeSet<String>,
    resolved: BTreeMap<String, Value>,
}

impl Resolver {
    pub fn new(config: Option<&Path>) -> Result<Self> {
        let file = match config {
            None => BTreeMap::new(),
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
                let v: Value = serde_json::from_str(&text).map_err(|e| {
                    Error::Config(format!("{} is not valid JSON: {e}", p.display()))
                })?;
                match v {
                    Value::Object(m) => m.into_iter().collect(),
                    _ => {
                        return Err(Error::Config(format!(
                            "{} must hold a JSON object",
                            p.display()
                        )))
                    }
                }
            }
        };
        Ok(Self {
            file,
            ..Self::default()
        })
    }

    fn lookup<T: DeserializeOwned + Serialize>(
        &mut self,
        key: &str,
        inline: Option<T>,
    ) -> Result<Option<T>> {
        self.seen.insert(key.to_string());
        let value = match inline {
            Some(v) => Some(v),
            None => match self.file.get(key) {
                Some(raw) => Some(
                    serde_json::from_value(raw.clone())
                        .map_err(|e| Error::Config(format!("config key `{key}`: {e}")))?,
                ),
                None => None,
            },
        };
        if let Some(v) = &value {
            self.resolved
                .insert(key.to_string(), serde_json::to_value(v)?);
        }
        Ok(value)
    }

    /// Inline value, else file value, else `default`.
    pub fn get<T: DeserializeOwned + Serialize>(
        &mut self,
        key: &str,
        inline: Option<T>,
        default: T,
    ) -> Result<T> {
        match self.lookup(key, inline)? {
            Some(v) => Ok(v),
            None => {
                self.resolved
                    .insert(key.to_string(), serde_json::to_value(&default)?);
                Ok(default)
            }
        }
    }

    pub fn optional<T: DeserializeOwned + Serialize>(
        &mut self,
        key: &str,
        inline: Option<T>,
    ) -> Result<Option<T>> {
        self.lookup(key, inline)
    }

    pub fn required<T: DeserializeOwned + Serialize>(
        &mut self,
        key: &str,
        inline: Option<T>,
    ) -> Result<T> {
        self.lookup(key, inline)?.ok_or_else(|| {
            Error::Config(format!(
                "missing required setting `{key}` (flag --{})",
                flag_name(key)
            ))
        })
    }

    /// `true` if the flag is set inline or in the file.
    pub fn switch(&mut self, key: &str, inline: bool) -> Result<bool> {
        self.get(key, inline.then_some(true), false)
    }

    /// Whether the value of `key` was supplied rather than defaulted.
    pub fn supplied(&self, key: &str, inline: bool) -> bool {
        inline || self.file.contains_key(key)
    }

    /// Rejects file keys no setting asked for and returns the normalized tree.
    pub fn finish(self, command: &str) -> Result<BTreeMap<String, Value>> {
        if let Some(k) = self.file.keys().find(|k| !self.seen.contains(*k)) {
            return Err(Error::Config(format!(
                "unknown config key `{k}` for {command}"
            )));
        }
        Ok(self.resolved)
    }
}

fn flag_name(key: &str) -> String {
    key.rsplit('.').next().unwrap_or(key).replace('_', "-")
}

fn parse_named<T: std::str::FromStr<Err = Error>>(key: &str, text: &str) -> Result<T> {
    text.parse().map_err(|e: Error| {
        Error::Config(format!(
            "`{key}`: {}",
            e.to_string().trim_start_matches("invalid config: ")
        ))
    })
}

fn check_range(key: &str, v: f64, lo: f64, hi: f64) -> Result<()> {
    if v.is_finite() && (lo..=hi).contains(&v) {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "`{key}` = {v} is outside [{lo}, {hi}]"
        )))
    }
}

fn check_iters(key: &str, t: usize) -> Result<()> {
    if (1..=MAX_ITERS).contains(&t) {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "`{key}` = {t} is outside [1, {MAX_ITERS}]"
        )))
    }
}

fn parse_split(key: &str, s: &str) -> Result<Option<Split>> {
    match s {
        "train" => Ok(Some(Split::Train)),
        "test" => Ok(Some(Split::Test)),
        "all" => Ok(None),
        other => Err(Error::Config(format!(
            "`{key}` must be train, test or all, got {other:?}"
        ))),
    }
}

/// Resolves attack flags under `prefix` into an [`EvalSpec`].
fn resolve_attack(
    r: &mut Resolver,
    prefix: &str,
    flags: AttackFlags,
    default_method: Option<Method>,
    seed: u64,
) -> Result<EvalSpec> {
    let key = |k: &str| format!("{prefix}.{k}");
    let method = match default_method {
        Some(d) => r.get(&key("method"), flags.method, d.to_string())?,
        None => r.required(&key("method"), flags.method)?,
    };
    let method: Method = parse_named(&key("method"), &method)?;
    let d = EvalSpec::default();
    if !method.is_attack() {
        for (name, inline) in [
            ("alpha", flags.alpha.is_some()),
            ("iters", flags.iters.is_some()),
            ("proj", flags.proj.is_some()),
            ("init", flags.init.is_some()),
        ] {
            if r.supplied(&key(name), inline) {
                return Err(Error::Config(format!(
                    "`{}` does not apply to the noise method {method}",
                    key(name)
                )));
            }
        }
    }
    let eps = r.get(&key("eps"), flags.eps, d.eps)?;
    check_range(&key("eps"), eps, 0.0, MAX_EPS)?;
    let mut spec = EvalSpec {
        method,
        eps,
        seed,
        ..d
    };
    if method.is_attack() {
        spec.alpha = r.get(&key("alpha"), flags.alpha, d.alpha)?;
        check_range(&key("alpha"), spec.alpha, 0.0, MAX_EPS)?;
        spec.iters = r.get(&key("iters"), flags.iters, d.iters)?;
        check_iters(&key("iters"), spec.iters)?;
        let proj = r.get(&key("proj"), flags.proj, d.projection.to_string())?;
        spec.projection = parse_named::<Projection>(&key("proj"), &proj)?;
        let init = r.get(&key("init"), flags.init, d.init.to_string())?;
        spec.init = parse_named::<InitMode>(&key("init"), &init)?;
    }
    Ok(spec)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenDataRun {
    pub out: PathBuf,
    pub count: usize,
    pub size: usize,
    pub params: DegradationParams,
    pub train_fraction: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRun {
    pub data: PathBuf,
    pub out: PathBuf,
    pub init: Option<PathBuf>,
    pub arch: Architecture,
    pub train: TrainConfig,
    pub log_time: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackRun {
    pub model: PathBuf,
    pub input: PathBuf,
    pub target: Option<PathBuf>,
    pub out: PathBuf,
    pub split: Option<Split>,
    pub spec: EvalSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRun {
    pub model: PathBuf,
    pub data: PathBuf,
    pub out: PathBuf,
    pub split: Option<Split>,
    pub spec: EvalSpec,
    pub impercept_eps: Vec<f64>,
    pub impercept_iters: usize,
    pub save_images: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRun {
    pub model: PathBuf,
    pub data: PathBuf,
    pub out: PathBuf,
    pub split: Option<Split>,
    pub spec: EvalSpec,
    pub eps_list: Vec<f64>,
    pub iters_list: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Job {
    GenData(GenDataRun),
    Train(TrainRun),
    Attack(AttackRun),
    Eval(EvalRun),
    Sweep(SweepRun),
}

/// A validated run: the typed job plus the normalized flat settings.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: &'static str,
    pub job: Job,
    pub settings: BTreeMap<String, Value>,
}

impl RunConfig {
    pub fn out_dir(&self) -> &Path {
        match &self.job {
            Job::GenData(j) => &j.out,
            Job::Train(j) => &j.out,
            Job::Attack(j) => &j.out,
            Job::Eval(j) => &j.out,
            Job::Sweep(j) => &j.out,
        }
    }

    fn meta(&self) -> Value {
        serde_json::json!({
            "command": self.command,
            "version": env!("CARGO_PKG_VERSION"),
            "config": self.settings,
        })
    }
}

/// Resolves and checks every setting of `command` without touching the
/// file system beyond reading `--config`.
pub fn validate_config(command: Command) -> Result<RunConfig> {
    match command {
        Command::GenData(a) => {
            let mut r = Resolver::new(a.config.as_deref())?;
            let out = r.required("out", a.out)?;
            let seed = r.get("seed", a.seed, DEFAULT_SEED)?;
            let count = r.get("data.count", a.count, 250usize)?;
            let size = r.get("data.size", a.size, 64usize)?;
            let water: WaterType = parse_named(
                "data.water",
                &r.get("data.water", a.water, "II".to_string())?,
            )?;
            let preset = DegradationParams::preset(water);
            let params = DegradationParams {
                blur: r.switch("data.blur", a.blur)?,
                noise_sigma: r.get("data.noise_sigma", a.noise_sigma, preset.noise_sigma)?,
                depth_min: r.get("data.depth_min", a.depth_min, preset.depth_min)?,
                depth_max: r.get("data.depth_max", a.depth_max, preset.depth_max)?,
                ..preset
            };
            let train_fraction = r.get("data.train_fraction", a.train_fraction, 0.8)?;
            if count == 0 {
                return Err(Error::Config("`data.count` must be at least 1".into()));
            }
            if size < crate::dataset::MIN_SYNTH_SIZE {
                return Err(Error::Config(format!(
                    "`data.size` must be at least {}",
                    crate::dataset::MIN_SYNTH_SIZE
                )));
            }
            check_range("data.train_fraction", train_fraction, 0.0, 1.0)?;
            params.validate()?;
            Ok(RunConfig {
                command: "gen-data",
                job: Job::GenData(GenDataRun {
                    out,
                    count,
                    size,
                    params,
                    train_fraction,
                    seed,
                }),
                settings: r.finish("gen-data")?,
            })
        }
        Command::Train(a) => {
            let mut r = Resolver::new(a.config.as_deref())?;
            let data = r.required("data", a.data)?;
            let out = r.required("out", a.out)?;
            let init = r.optional("train.init", a.init)?;
            let seed = r.get("seed", a.seed, DEFAULT_SEED)?;
            let adv = r.switch("train.adv", a.adv)?;
            let d = TrainConfig::default();
            let arch_key_given = r.supplied("train.arch", a.arch.is_some());
            let arch: Architecture = parse_named(
                "train.arch",
                &r.get(
                    "train.arch",
                    a.arch,
                    Architecture::TinyEnhancer.id().to_string(),
                )?,
            )
            .map_err(|e| Error::Config(e.to_string()))?;
            if init.is_some() && arch_key_given {
                return Err(Error::Config(
                    "`train.arch` cannot be combined with `train.init`".into(),
                ));
            }
            let epochs = r.get("train.epochs", a.epochs, d.epochs)?;
            let batch_size = r.get("train.batch_size", a.batch_size, d.batch_size)?;
            let lr = r.get("train.lr", a.lr, d.optimizer.lr)?;
            let log_time = r.switch("train.log_time", a.log_time)?;
            let mut train = TrainConfig {
                mode: if adv {
                    TrainMode::Adversarial
                } else {
                    TrainMode::Standard
                },
                epochs,
                batch_size,
                optimizer: AdamConfig { lr, ..d.optimizer },
                seed,
                checkpoint_out: Some(out.clone()),
                ..d
            };
            let adv_flags = [
                ("train.eps", a.eps.is_some()),
                ("train.alpha", a.alpha.is_some()),
                ("train.iters", a.iters.is_some()),
                ("train.lambda", a.lambda.is_some()),
            ];
            if adv {
                let eps = r.get("train.eps", a.eps, 8.0)?;
                check_range("train.eps", eps, 0.0, MAX_EPS)?;
                let alpha = r.get("train.alpha", a.alpha, 2.0)?;
                check_range("train.alpha", alpha, 0.0, MAX_EPS)?;
                let iters = r.get("train.iters", a.iters, d.attack.iters)?;
                check_iters("train.iters", iters)?;
                train.lambda = r.get("train.lambda", a.lambda, d.lambda)?;
                train.attack.epsilon = (eps / 255.0) as f32;
                train.attack.alpha = (alpha / 255.0) as f32;
                train.attack.iters = iters;
            } else if let Some((k, _)) = adv_flags.iter().find(|(k, inline)| r.supplied(k, *inline))
            {
                return Err(Error::Config(format!(
                    "`{k}` requires adversarial training (--adv)"
                )));
            }
            train.validate()?;
            Ok(RunConfig {
                command: "train",
                job: Job::Train(TrainRun {
                    data,
                    out,
                    init,
                    arch,
                    train,
                    log_time,
                }),
                settings: r.finish("train")?,
            })
        }
        Command::Attack(a) => {
            let mut r = Resolver::new(a.config.as_deref())?;
            let model = r.required("model", a.model)?;
            let input = r.required("input", a.input)?;
            let target = r.optional("target", a.target)?;
            let out = r.required("out", a.out)?;
            let split = parse_split("split", &r.get("split", a.split, "all".to_string())?)?;
            let seed = r.get("seed", a.seed, DEFAULT_SEED)?;
            let spec = resolve_attack(&mut r, "attack", a.attack, None, seed)?;
            Ok(RunConfig {
                command: "attack",
                job: Job::Attack(AttackRun {
                    model,
                    input,
                    target,
                    out,
                    split,
                    spec,
                }),
                settings: r.finish("attack")?,
            })
        }
        Command::Eval(a) => {
            let mut r = Resolver::new(a.config.as_deref())?;
            let model = r.required("model", a.model)?;
            let data = r.required("data", a.data)?;
            let out = r.required("out", a.out)?;
            let split = parse_split("split", &r.get("split", a.split, "test".to_string())?)?;
            let seed = r.get("seed", a.seed, DEFAULT_SEED)?;
            let spec = resolve_attack(&mut r, "attack", a.attack, Some(Method::Pixel), seed)?;
            if !spec.method.is_attack() {
                return Err(Error::Config(
                    "`attack.method` for eval must be an attack, not noise".into(),
                ));
            }
            let impercept_eps = r.get(
                "eval.impercept_eps",
                a.impercept_eps,
                PAPER_SWEEP_EPS.to_vec(),
            )?;
            for &e in &impercept_eps {
                check_range("eval.impercept_eps", e, 0.0, MAX_EPS)?;
            }
            if impercept_eps.is_empty() {
                return Err(Error::Config(
                    "`eval.impercept_eps` must not be empty".into(),
                ));
            }
            let impercept_iters = r.get("eval.impercept_iters", a.impercept_iters, 5usize)?;
            check_iters("eval.impercept_iters", impercept_iters)?;
            let save_images = r.switch("eval.save_images", a.save_images)?;
            Ok(RunConfig {
                command: "eval",
                job: Job::Eval(EvalRun {
                    model,
                    data,
                    out,
                    split,
                    spec,
                    impercept_eps,
                    impercept_iters,
                    save_images,
                }),
                settings: r.finish("eval")?,
            })
        }
        Command::Sweep(a) => {
            let mut r = Resolver::new(a.config.as_deref())?;
            let model = r.required("model", a.model)?;
            let data = r.required("data", a.data)?;
            let out = r.required("out", a.out)?;
            let split = parse_split("split", &r.get("split", a.split, "test".to_string())?)?;
            let seed = r.get("seed", a.seed, DEFAULT_SEED)?;
            if a.attack.eps.is_some() || a.attack.iters.is_some() {
                return Err(Error::Config(
                    "sweep takes --eps-list and --iters-list, not --eps or --iters".into(),
                ));
            }
            let eps_list = r.get("sweep.eps_list", a.eps_list, PAPER_SWEEP_EPS.to_vec())?;
            let iters_list = r.get("sweep.iters_list", a.iters_list, PAPER_SWEEP_ITERS.to_vec())?;
            if eps_list.is_empty() || iters_list.is_empty() {
                return Err(Error::Config("sweep lists must not be empty".into()));
            }
            for &e in &eps_list {
                check_range("sweep.eps_list", e, 0.0, MAX_EPS)?;
            }
            for &t in &iters_list {
                check_iters("sweep.iters_list", t)?;
            }
            let spec = resolve_attack(&mut r, "attack", a.attack, Some(Method::Pixel), seed)?;
            if !spec.method.is_attack() {
                return Err(Error::Config(
                    "`attack.method` for sweep must be an attack, not noise".into(),
                ));
            }
            Ok(RunConfig {
                command: "sweep",
                job: Job::Sweep(SweepRun {
                    model,
                    data,
                    out,
                    split,
                    spec,
                    eps_list,
                    iters_list,
                }),
                settings: r.finish("sweep")?,
            })
        }
    }
}

fn create_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn load_samples(data: &Path, split: Option<Split>) -> Result<Vec<Sample>> {
    let ds = load_paired_dir(data)?;
    let samples = match split {
        Some(s) => ds.samples(s)?,
        None => ds.samples_all()?,
    };
    if samples.is_empty() {
        return Err(Error::Dataset(format!(
            "{} has no pairs in the requested split",
            data.display()
        )));
    }
    Ok(samples)
}

fn run_gen_data(cfg: &RunConfig, j: &GenDataRun) -> Result<()> {
    let ds = generate_dataset(&j.out, j.count, j.size, &j.params, j.seed, j.train_fraction)?;
    let m = ds.manifest.as_ref().expect("generated manifest");
    eprintln!(
        "wrote {} pairs ({} train, {} test) to {}",
        ds.len(),
        m.train.len(),
        m.test.len(),
        j.out.display()
    );
    write_meta(&j.out, &cfg.meta())
}

fn run_train(cfg: &RunConfig, j: &TrainRun) -> Result<()> {
    let ds = load_paired_dir(&j.data)?;
    let pairs = ds.load(Split::Train)?;
    let model = match &j.init {
        Some(p) => load_checkpoint(p)?.0,
        None => match j.arch {
            Architecture::TinyEnhancer => Model::tiny_enhancer(j.train.seed),
            Architecture::Affine => Model::affine([1.0; 3], [0.0; 3])?,
        },
    };
    create_out(&j.out)?;
    let (model, log) = train_with(model, &pairs, &j.train, |e| {
        eprintln!(
            "epoch {:>4}  l_model {:.6}  l_adv {:.6}  {:.1}s",
            e.epoch, e.l_model, e.l_adv, e.seconds
        )
    })?;
    log.write_csv(j.out.join("train_log.csv"), j.log_time)?;
    let mut meta = cfg.meta();
    meta["checkpoint_digest"] = model.digest().into();
    meta["architecture"] = model.architecture().id().into();
    meta["train_pairs"] = pairs.len().into();
    meta["lambda_note"] = "the regularizer weight is called lambda in the loss and gamma in the experiment settings; treated as one coefficient".into();
    meta["rng_digests"] = log
        .epochs
        .iter()
        .map(|e| Value::from(e.rng_digest.clone()))
        .collect();
    write_meta(&j.out, &meta)
}

fn run_attack(cfg: &RunConfig, j: &AttackRun) -> Result<()> {
    let (model, _) = load_checkpoint(&j.model)?;
    let samples = if j.input.is_dir() {
        if j.target.is_some() {
            return Err(Error::Config(
                "`target` applies only to a single-image input".into(),
            ));
        }
        load_samples(&j.input, j.split)?
    } else {
        let target = j.target.as_ref().ok_or_else(|| {
            Error::Config("a single-image attack needs `target` (flag --target)".into())
        })?;
        let id = j
            .input
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "input.png".into());
        let x = load_image(&j.input)?;
        let y = load_image(target)?;
        if !x.same_shape(&y) {
            return Err(Error::Dataset("input and target sizes differ".into()));
        }
        vec![Sample { id, x, y }]
    };
    create_out(&j.out)?;
    use rayon::prelude::*;
    let rows = samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let (x_adv, trace) = j.spec.perturb(&model, &s.x, &s.y, i)?;
            let name = if s.id.ends_with(".png") {
                s.id.clone()
            } else {
                format!("{}.png", s.id)
            };
            save_image(&x_adv, j.out.join(&name))?;
            Ok((
                name,
                x_adv.max_abs_diff(&s.x),
                psnr(&s.x, &x_adv)?.value,
                trace,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let path = j.out.join("attack.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record([
        "image_id",
        "linf_255",
        "psnr_x_xadv",
        "attack_loss_initial",
        "attack_loss_final",
    ])?;
    for (name, linf, p, trace) in &rows {
        let num = crate::eval::fmt_num;
        w.write_record([
            name.clone(),
            num(*linf as f64 * 255.0),
            num(*p),
            trace.first().map(|&v| num(v)).unwrap_or_default(),
            trace.last().map(|&v| num(v)).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    let mut meta = eval_meta(&model, &j.spec, BTreeMap::new());
    meta["run"] = cfg.meta();
    write_meta(&j.out, &meta)
}

fn run_eval(cfg: &RunConfig, j: &EvalRun) -> Result<()> {
    let (model, _) = load_checkpoint(&j.model)?;
    let samples = load_samples(&j.data, j.split)?;
    let report = evaluate(&model, &samples, &j.spec)?;
    let noise = noise_compare(&model, &samples, &j.spec)?;
    let hist = histogram_study(&model, &samples, &j.spec)?;
    let imp_spec = EvalSpec {
        iters: j.impercept_iters,
        ..j.spec
    };
    let impercept = imperceptibility_report(&model, &samples, &j.impercept_eps, &imp_spec)?;
    create_out(&j.out)?;
    let mut extra = BTreeMap::new();
    extra.insert("run".to_string(), cfg.meta());
    extra.insert(
        "cumulative_floor_db".to_string(),
        serde_json::to_value(
            j.impercept_eps
                .iter()
                .map(|&e| psnr_floor_db(e))
                .collect::<Vec<_>>(),
        )?,
    );
    let s = &report.summary;
    eprintln!(
        "{} images: clean {:.3} dB / {:.4}, adversarial {:.3} dB / {:.4}",
        s.images, s.psnr_clean.mean, s.ssim_clean.mean, s.psnr_adv.mean, s.ssim_adv.mean
    );
    write_reports(
        &j.out,
        &ReportArtifacts {
            robustness: Some(&report),
            noise: Some(&noise),
            histograms: Some(&hist),
            impercept: Some(&impercept),
            meta: eval_meta(&model, &j.spec, extra),
            save_images: j.save_images.then_some((&model, samples.as_slice())),
            ..ReportArtifacts::default()
        },
    )
}

fn run_sweep(cfg: &RunConfig, j: &SweepRun) -> Result<()> {
    let (model, _) = load_checkpoint(&j.model)?;
    let samples = load_samples(&j.data, j.split)?;
    let grid = sweep(&model, &samples, &j.eps_list, &j.iters_list, &j.spec)?;
    create_out(&j.out)?;
    let mut extra = BTreeMap::new();
    extra.insert("run".to_string(), cfg.meta());
    write_reports(
        &j.out,
        &ReportArtifacts {
            sweep: Some(&grid),
            meta: eval_meta(&model, &j.spec, extra),
            ..ReportArtifacts::default()
        },
    )
}

/// Executes a validated run.
pub fn execute(cfg: &RunConfig) -> Result<()> {
    match &cfg.job {
        Job::GenData(j) => run_gen_data(cfg, j),
        Job::Train(j) => run_train(cfg, j),
        Job::Attack(j) => run_attack(cfg, j),
        Job::Eval(j) => run_eval(cfg, j),
        Job::Sweep(j) => run_sweep(cfg, j),
    }
}

/// Parses `argv`, validates, runs, and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    if let Some(n) = cli.jobs {
        if n == 0 {
            eprintln!("error: --jobs must be at least 1");
            return 1;
        }
        // A pool may already exist when called repeatedly in one process.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    let cfg = match validate_config(cli.command) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    match execute(&cfg) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Result<RunConfig> {
        let cli =
            Cli::try_parse_from(std::iter::once("uwadv").chain(args.iter().copied())).unwrap();
        validate_config(cli.command)
    }

    fn config_file(json: &str) -> tempfile::NamedTempFile {
        let f = tempfile::NamedTempFile::new().unwrap();
        fs::write(f.path(), json).unwrap();
        f
    }

    #[test]
    fn missing_method_is_named() {
        let err = parse(&["attack", "--model", "m", "--input", "i", "--out", "o"]).unwrap_err();
        assert!(err.to_string().contains("method"), "{err}");
        assert!(err.is_validation());
    }

    #[test]
    fn eps_range_checked() {
        let err = parse(&[
            "attack", "--model", "m", "--input", "i", "--out", "o", "--method", "pixel", "--eps",
            "300",
        ])
        .unwrap_err();
        assert!(err.to_string().contains("eps"), "{err}");
    }

    #[test]
    fn eval_defaults_follow_paper_settings() {
        let cfg = parse(&["eval", "--model", "m", "--data", "d", "--out", "o"]).unwrap();
        let Job::Eval(j) = cfg.job else { panic!() };
        assert_eq!((j.spec.eps, j.spec.alpha, j.spec.iters), (8.0, 2.0, 20));
        assert_eq!(
            j.spec.attack_config(0).unwrap().epsilon,
            (8.0f64 / 255.0) as f32
        );
        assert_eq!(j.spec.seed, 42);
        assert_eq!(cfg.settings["attack.eps"], 8.0);
    }

    #[test]
    fn noise_method_rejects_alpha() {
        let err = parse(&[
            "attack", "--model", "m", "--input", "i", "--out", "o", "--method", "gaussian",
            "--alpha", "2",
        ])
        .unwrap_err();
        assert!(err.to_string().contains("alpha"), "{err}");
    }

    #[test]
    fn config_file_and_override() {
        let f = config_file(r#"{"attack.eps": 4, "attack.method": "color", "seed": 7}"#);
        let path = f.path().to_str().unwrap();
        let cfg = parse(&[
            "attack", "--config", path, "--model", "m", "--input", "i", "--out", "o", "--eps", "2",
        ])
        .unwrap();
        let Job::Attack(j) = cfg.job else { panic!() };
        assert_eq!(j.spec.eps, 2.0);
        assert_eq!(j.spec.method, Method::Color);
        assert_eq!(j.spec.seed, 7);
    }

    #[test]
    fn unknown_key_rejected() {
        let f = config_file(r#"{"attack.epsilon": 4}"#);
        let path = f.path().to_str().unwrap();
        let err = parse(&[
            "eval", "--config", path, "--model", "m", "--data", "d", "--out", "o",
        ])
        .unwrap_err();
        assert!(err.to_string().contains("attack.epsilon"), "{err}");
    }

    #[test]
    fn train_flags() {
        let cfg = parse(&[
            "train", "--data", "d", "--out", "o", "--adv", "--eps", "4", "--lambda", "0.5",
        ])
        .unwrap();
        let Job::Train(j) = cfg.job else { panic!() };
        assert_eq!(j.train.mode, TrainMode::Adversarial);
        assert_eq!(j.train.lambda, 0.5);
        assert_eq!(j.train.attack.epsilon, (4.0f64 / 255.0) as f32);
        assert!(parse(&["train", "--data", "d", "--out", "o", "--lambda", "1"]).is_err());
        assert!(parse(&["train", "--data", "d", "--out", "o", "--adv", "--lambda=-1"]).is_err());
        assert!(parse(&["train", "--data", "d", "--out", "o", "--adv", "--iters", "0"]).is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(run(["uwadv", "bogus"]), 1);
        assert_eq!(run(["uwadv", "attack", "--out", "x"]), 1);
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("missing");
        let out = dir.path().join("out");
        let code = run([
            "uwadv",
            "eval",
            "--model",
            missing.to_str().unwrap(),
            "--data",
            missing.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 2);
        assert!(!out.exists());
    }
}
