//! Flat `key = value` experiment configs; repeated keys build lists.
//!
//! ```text
//! task = mnist-reduced
//! variant = baseline
//! variant = coopsubnet bottleneck=64 alpha=1.0
//! fraction = 0.01
//! seed = 0
//! seed = 1
//! epochs = 30
//! output = out/mnist-budget
//! ```

use std::fmt::Write as _;
use std::path::PathBuf;

use sha2::{Digest, Sha256};

use crate::coop::NetworkVariant;
use crate::error::{Error, Result};
use crate::trainer::{AdamConfig, AlphaMode, TrainSchedule};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    MnistReduced,
    SynthRegression,
    SynthSegmentation,
}

impl Task {
    pub const NAMES: [&'static str; 3] = ["mnist-reduced", "synth-regression", "synth-segmentation"];

    pub fn name(self) -> &'static str {
        match self {
            Task::MnistReduced => "mnist-reduced",
            Task::SynthRegression => "synth-regression",
            Task::SynthSegmentation => "synth-segmentation",
        }
    }

    pub fn parse(s: &str) -> Option<Task> {
        match s {
            "mnist-reduced" => Some(Task::MnistReduced),
            "synth-regression" => Some(Task::SynthRegression),
            "synth-segmentation" => Some(Task::SynthSegmentation),
            _ => None,
        }
    }

    /// Whether larger metric values are better (accuracy, F1) or worse (MSE).
    pub fn higher_is_better(self) -> bool {
        !matches!(self, Task::SynthRegression)
    }
}

/// One network variant with its hyperparameters. Unset values fall back to
/// the experiment-wide defaults.
#[derive(Clone, Debug, PartialEq)]
pub struct VariantSpec {
    pub name: String,
    /// Column label in reports; defaults to `name`.
    pub label: String,
    pub bottleneck: Option<usize>,
    pub alpha: Option<f64>,
    pub p: Option<f64>,
    pub weight_decay: Option<f64>,
    pub l1: Option<f64>,
}

/// Bottleneck width per reduction fraction for the MNIST comparison grid.
pub const BUDGET_BOTTLENECKS: [(f64, usize); 5] = [(0.005, 16), (0.01, 64), (0.1, 256), (0.5, 512), (1.0, 512)];

pub fn budget_bottleneck(fraction: f64) -> Option<usize> {
    BUDGET_BOTTLENECKS.iter().find(|(f, _)| (f - fraction).abs() < 1e-12).map(|&(_, l)| l)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Timing {
    /// Measure wall time per run.
    Wall,
    /// Report zero wall time so outputs are byte-reproducible.
    Off,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub task: Task,
    pub variants: Vec<VariantSpec>,
    pub fractions: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Take Coop/HardCon bottlenecks from [`BUDGET_BOTTLENECKS`].
    pub budget_schedule: bool,
    pub epochs: usize,
    pub batch_size: usize,
    pub burn_in_fraction: f64,
    pub alpha: f64,
    pub alpha_mode: AlphaMode,
    pub learning_rate: f64,
    pub attach: String,
    pub output: PathBuf,
    pub timing: Timing,
    pub checkpoints: bool,
    /// Primary network widths: two conv layers and the hidden dense layer.
    pub conv1: usize,
    pub conv2: usize,
    pub feature: usize,
    /// MNIST directory relative to the data root.
    pub mnist_dir: String,
    /// Size that `fraction` refers to; defaults to the training pool size.
    pub nominal_train_size: Option<usize>,
    /// Use only the first `test_limit` test samples.
    pub test_limit: Option<usize>,
    /// Seed of synthetic data generation (fixed across run seeds).
    pub data_seed: u64,
    pub train_pool: usize,
    pub test_size: usize,
    pub latent_dim: usize,
    pub ambient_dim: usize,
    pub noise: f64,
    pub image_size: usize,
    pub patch: usize,
    pub stride: usize,
    pub nuclei: usize,
    pub radius: f64,
}

impl ExperimentConfig {
    /// Defaults for `task`; every other field can be overridden by a key.
    pub fn defaults(task: Task) -> Self {
        let (conv1, conv2, feature) = match task {
            Task::MnistReduced => (32, 64, 1024),
            Task::SynthRegression => (8, 16, 128),
            Task::SynthSegmentation => (8, 16, 256),
        };
        Self {
            task,
            variants: Vec::new(),
            fractions: Vec::new(),
            seeds: Vec::new(),
            budget_schedule: false,
            epochs: 30,
            batch_size: 32,
            burn_in_fraction: 0.05,
            alpha: 1.0,
            alpha_mode: AlphaMode::Fixed,
            learning_rate: AdamConfig::default().learning_rate,
            attach: crate::coop::DEFAULT_ATTACH.into(),
            output: PathBuf::from("out"),
            timing: Timing::Wall,
            checkpoints: true,
            conv1,
            conv2,
            feature,
            mnist_dir: "mnist".into(),
            nominal_train_size: None,
            test_limit: None,
            data_seed: 0,
            train_pool: 150,
            test_size: 500,
            latent_dim: 4,
            ambient_dim: 20,
            noise: 0.05,
            image_size: 48,
            patch: 16,
            stride: 8,
            nuclei: 12,
            radius: 1.5,
        }
    }

    /// Parses and validates `text`; the error lists every problem found.
    pub fn parse(text: &str) -> Result<Self> {
        let mut problems = Vec::new();
        let mut pairs = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            match line.split_once('=') {
                Some((k, v)) => pairs.push((i + 1, k.trim().to_string(), v.trim().to_string())),
                None => problems.push(format!("line {}: expected key = value, got `{line}`", i + 1)),
            }
        }
        let task = match pairs.iter().filter(|(_, k, _)| k == "task").collect::<Vec<_>>().as_slice() {
            [] => {
                problems.push("missing key `task`".into());
                Task::MnistReduced
            }
            [(line, _, v), rest @ ..] => {
                if !rest.is_empty() {
                    problems.push("`task` given more than once".into());
                }
                Task::parse(v).unwrap_or_else(|| {
                    problems.push(format!("line {line}: unknown task `{v}`; allowed: {}", Task::NAMES.join(", ")));
                    Task::MnistReduced
                })
            }
        };
        let mut cfg = Self::defaults(task);
        let mut seen = std::collections::BTreeSet::new();
        for (line, key, value) in &pairs {
            let list_key = matches!(key.as_str(), "variant" | "fraction" | "seed");
            if !list_key && !seen.insert(key.clone()) {
                problems.push(format!("line {line}: `{key}` given more than once"));
            }
            if let Err(msg) = cfg.apply(key, value) {
                problems.push(format!("line {line}: {msg}"));
            }
        }
        problems.extend(cfg.validate());
        if problems.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Config(problems.join("\n")))
        }
    }

    fn apply(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> std::result::Result<T, String> {
            v.parse().map_err(|_| format!("`{key}` expects a number, got `{v}`"))
        }
        fn flag(key: &str, v: &str) -> std::result::Result<bool, String> {
            match v {
                "true" | "yes" | "1" => Ok(true),
                "false" | "no" | "0" => Ok(false),
                _ => Err(format!("`{key}` expects true or false, got `{v}`")),
            }
        }
        match key {
            "task" => {}
            "variant" => self.variants.push(parse_variant(value)?),
            "fraction" => self.fractions.push(num(key, value)?),
            "seed" => self.seeds.push(num(key, value)?),
            "bottleneck_schedule" => match value {
                "budget" => self.budget_schedule = true,
                "none" => self.budget_schedule = false,
                _ => return Err(format!("`bottleneck_schedule` expects budget or none, got `{value}`")),
            },
            "epochs" => self.epochs = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "burn_in_fraction" => self.burn_in_fraction = num(key, value)?,
            "alpha" => self.alpha = num(key, value)?,
            "alpha_mode" => {
                self.alpha_mode = match value {
                    "fixed" => AlphaMode::Fixed,
                    "auto" => AlphaMode::AutoBalance,
                    _ => return Err(format!("`alpha_mode` expects fixed or auto, got `{value}`")),
                }
            }
            "learning_rate" => self.learning_rate = num(key, value)?,
            "attach" => self.attach = value.to_string(),
            "output" => self.output = PathBuf::from(value),
            "timing" => {
                self.timing = match value {
                    "wall" => Timing::Wall,
                    "off" => Timing::Off,
                    _ => return Err(format!("`timing` expects wall or off, got `{value}`")),
                }
            }
            "checkpoints" => self.checkpoints = flag(key, value)?,
            "conv1" => self.conv1 = num(key, value)?,
            "conv2" => self.conv2 = num(key, value)?,
            "feature" => self.feature = num(key, value)?,
            "mnist_dir" => self.mnist_dir = value.to_string(),
            "nominal_train_size" => self.nominal_train_size = Some(num(key, value)?),
            "test_limit" => self.test_limit = Some(num(key, value)?),
            "data_seed" => self.data_seed = num(key, value)?,
            "train_pool" => self.train_pool = num(key, value)?,
            "test_size" => self.test_size = num(key, value)?,
            "latent_dim" => self.latent_dim = num(key, value)?,
            "ambient_dim" => self.ambient_dim = num(key, value)?,
            "noise" => self.noise = num(key, value)?,
            "image_size" => self.image_size = num(key, value)?,
            "patch" => self.patch = num(key, value)?,
            "stride" => self.stride = num(key, value)?,
            "nuclei" => self.nuclei = num(key, value)?,
            "radius" => self.radius = num(key, value)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Every problem with the config (empty when valid).
    pub fn validate(&self) -> Vec<String> {
        let mut p = Vec::new();
        if self.variants.is_empty() {
            p.push("no `variant` given".to_string());
        }
        if self.fractions.is_empty() {
            p.push("no `fraction` given".into());
        }
        if self.seeds.is_empty() {
            p.push("no `seed` given".into());
        }
        for f in &self.fractions {
            if !(*f > 0.0 && *f <= 1.0) {
                p.push(format!("fraction {f} outside (0, 1]"));
            }
        }
        let mut labels = std::collections::BTreeSet::new();
        for v in &self.variants {
            if !labels.insert(&v.label) {
                p.push(format!("duplicate variant label `{}`; set label=... to tell them apart", v.label));
            }
            let needs_l = matches!(v.name.as_str(), "coopsubnet" | "coopsubnet-l1" | "hardcon");
            if needs_l && v.bottleneck.is_none() && !self.budget_schedule {
                p.push(format!("variant `{}` needs bottleneck=L or bottleneck_schedule = budget", v.label));
            }
            if needs_l && v.bottleneck.is_none() && self.budget_schedule {
                for f in &self.fractions {
                    if budget_bottleneck(*f).is_none() {
                        p.push(format!("bottleneck_schedule budget has no entry for fraction {f}"));
                    }
                }
            }
            if let Some(a) = v.alpha {
                if !(a >= 0.0) {
                    p.push(format!("variant `{}`: alpha must be non-negative", v.label));
                }
            }
        }
        let schedule = TrainSchedule {
            total_epochs: self.epochs,
            burn_in_fraction: self.burn_in_fraction,
            batch_size: self.batch_size,
            alpha: self.alpha,
            alpha_mode: self.alpha_mode,
            adam: AdamConfig {
                learning_rate: self.learning_rate,
                ..AdamConfig::default()
            },
            seed: 0,
        };
        if let Err(Error::Config(m)) = schedule.validate() {
            p.push(m);
        }
        if self.conv1 == 0 || self.conv2 == 0 || self.feature == 0 {
            p.push("conv1, conv2 and feature must be positive".into());
        }
        match self.task {
            Task::MnistReduced => {}
            Task::SynthRegression => {
                if self.latent_dim == 0 || self.latent_dim >= self.ambient_dim || self.ambient_dim % 2 != 0 {
                    p.push("synth-regression needs 0 < latent_dim < ambient_dim with ambient_dim even".into());
                }
                if self.train_pool < 2 || self.test_size == 0 {
                    p.push("synth-regression needs train_pool >= 2 and test_size >= 1".into());
                }
            }
            Task::SynthSegmentation => {
                if self.patch % 4 != 0 || self.patch == 0 || self.patch > self.image_size || self.stride == 0 {
                    p.push("synth-segmentation needs a positive patch divisible by 4, no larger than image_size, and stride >= 1".into());
                }
                if self.train_pool < 1 || self.test_size == 0 {
                    p.push("synth-segmentation needs train_pool >= 1 and test_size >= 1 images".into());
                }
            }
        }
        p
    }

    /// Canonical text form: every field in a fixed order.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "task={}", self.task.name());
        for v in &self.variants {
            let _ = writeln!(
                s,
                "variant={} label={} bottleneck={:?} alpha={:?} p={:?} weight_decay={:?} l1={:?}",
                v.name, v.label, v.bottleneck, v.alpha, v.p, v.weight_decay, v.l1
            );
        }
        for f in &self.fractions {
            let _ = writeln!(s, "fraction={f}");
        }
        for seed in &self.seeds {
            let _ = writeln!(s, "seed={seed}");
        }
        let _ = write!(
            s,
            "budget_schedule={}\nepochs={}\nbatch_size={}\nburn_in_fraction={}\nalpha={}\nalpha_mode={:?}\nlearning_rate={}\nattach={}\n\
             timing={:?}\nconv1={}\nconv2={}\nfeature={}\nmnist_dir={}\nnominal_train_size={:?}\ntest_limit={:?}\ndata_seed={}\n\
             train_pool={}\ntest_size={}\nlatent_dim={}\nambient_dim={}\nnoise={}\nimage_size={}\npatch={}\nstride={}\nnuclei={}\nradius={}\n",
            self.budget_schedule,
            self.epochs,
            self.batch_size,
            self.burn_in_fraction,
            self.alpha,
            self.alpha_mode,
            self.learning_rate,
            self.attach,
            self.timing,
            self.conv1,
            self.conv2,
            self.feature,
            self.mnist_dir,
            self.nominal_train_size,
            self.test_limit,
            self.data_seed,
            self.train_pool,
            self.test_size,
            self.latent_dim,
            self.ambient_dim,
            self.noise,
            self.image_size,
            self.patch,
            self.stride,
            self.nuclei,
            self.radius
        );
        s
    }

    /// First 16 hex digits of the SHA-256 of [`canonical`](Self::canonical).
    /// The output directory is deliberately excluded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// The concrete network variant for one run.
    pub fn network_variant(&self, spec: &VariantSpec, fraction: f64) -> Result<NetworkVariant> {
        let bottleneck = || {
            spec.bottleneck
                .or_else(|| if self.budget_schedule { budget_bottleneck(fraction) } else { None })
                .ok_or_else(|| Error::Config(format!("no bottleneck for `{}` at fraction {fraction}", spec.label)))
        };
        Ok(match spec.name.as_str() {
            "baseline" => NetworkVariant::Baseline,
            "coopsubnet" => NetworkVariant::CoopSubNet { bottleneck: bottleneck()? },
            "coopsubnet-l1" => NetworkVariant::CoopSubNetL1 {
                bottleneck: bottleneck()?,
                l1: spec.l1.unwrap_or(1e-3),
            },
            "dropout" => NetworkVariant::Dropout { p: spec.p.unwrap_or(0.5) },
            "l2reg" => NetworkVariant::L2Reg {
                weight_decay: spec.weight_decay.unwrap_or(1e-4),
            },
            "hardcon" => NetworkVariant::HardCon { bottleneck: bottleneck()? },
            other => return Err(Error::Config(format!("unknown variant `{other}`"))),
        })
    }

    pub fn schedule(&self, spec: &VariantSpec, seed: u64) -> TrainSchedule {
        TrainSchedule {
            total_epochs: self.epochs,
            burn_in_fraction: self.burn_in_fraction,
            batch_size: self.batch_size,
            alpha: spec.alpha.unwrap_or(self.alpha),
            alpha_mode: self.alpha_mode,
            adam: AdamConfig {
                learning_rate: self.learning_rate,
                ..AdamConfig::default()
            },
            seed,
        }
    }
}

/// `name [key=value ...]` with keys bottleneck (or L), alpha, p,
/// weight_decay, l1 and label.
pub fn parse_variant(text: &str) -> std::result::Result<VariantSpec, String> {
    let mut parts = text.split_whitespace();
    let name = parts.next().ok_or("empty variant")?;
    if !NetworkVariant::NAMES.contains(&name) {
        return Err(format!("unknown variant `{name}`; allowed: {}", NetworkVariant::NAMES.join(", ")));
    }
    let mut spec = VariantSpec {
        name: name.to_string(),
        label: name.to_string(),
        bottleneck: None,
        alpha: None,
        p: None,
        weight_decay: None,
        l1: None,
    };
    for part in parts {
        let (k, v) = part.split_once('=').ok_or_else(|| format!("variant option `{part}` is not key=value"))?;
        let bad = || format!("variant option `{k}` has bad value `{v}`");
        match k {
            "bottleneck" | "L" => spec.bottleneck = Some(v.parse().map_err(|_| bad())?),
            "alpha" => spec.alpha = Some(v.parse().map_err(|_| bad())?),
            "p" => spec.p = Some(v.parse().map_err(|_| bad())?),
            "weight_decay" => spec.weight_decay = Some(v.parse().map_err(|_| bad())?),
            "l1" => spec.l1 = Some(v.parse().map_err(|_| bad())?),
            "label" => spec.label = v.to_string(),
            _ => return Err(format!("unknown variant option `{k}`")),
        }
    }
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = "task = mnist-reduced\nvariant = baseline\nvariant = coopsubnet L=64\nfraction = 0.01\nseed = 0\nseed = 1\nseed = 2\n";

    #[test]
    fn parses_lists_and_defaults() {
        let c = ExperimentConfig::parse(BASIC).unwrap();
        assert_eq!(c.variants.len(), 2);
        assert_eq!(c.seeds, vec![0, 1, 2]);
        assert_eq!(c.variants[1].bottleneck, Some(64));
        assert_eq!(c.epochs, 30);
        assert_eq!(c.batch_size, 32);
    }

    #[test]
    fn unknown_variant_lists_allowed_set() {
        let err = ExperimentConfig::parse("task = mnist-reduced\nvariant = maxout\nfraction = 0.1\nseed = 0\n").unwrap_err();
        let msg = err.to_string();
        for name in NetworkVariant::NAMES {
            assert!(msg.contains(name), "{msg}");
        }
    }

    #[test]
    fn every_problem_is_reported() {
        let err = ExperimentConfig::parse("task = mnist-reduced\nvariant = hardcon\nfraction = 2\nepochs = x\nbogus = 1\n").unwrap_err();
        let msg = err.to_string();
        for needle in ["no `seed`", "outside (0, 1]", "expects a number", "unknown key `bogus`", "needs bottleneck"] {
            assert!(msg.contains(needle), "missing {needle:?} in {msg}");
        }
    }

    #[test]
    fn budget_schedule_expansion() {
        let mut text = String::from("task = mnist-reduced\nvariant = coopsubnet\nbottleneck_schedule = budget\nseed = 0\n");
        for f in [0.005, 0.01, 0.1, 0.5, 1.0] {
            text.push_str(&format!("fraction = {f}\n"));
        }
        let c = ExperimentConfig::parse(&text).unwrap();
        let got: Vec<Option<usize>> = c.fractions.iter().map(|&f| c.network_variant(&c.variants[0], f).unwrap().bottleneck()).collect();
        assert_eq!(got, vec![Some(16), Some(64), Some(256), Some(512), Some(512)]);
        let bad = text.replace("fraction = 1\n", "fraction = 0.2\n");
        assert!(ExperimentConfig::parse(&bad).is_err());
    }

    #[test]
    fn hash_tracks_content_not_output() {
        let a = ExperimentConfig::parse(BASIC).unwrap();
        let b = ExperimentConfig::parse(&format!("{BASIC}output = elsewhere\n")).unwrap();
        let c = ExperimentConfig::parse(&format!("{BASIC}epochs = 5\n")).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 16);
    }
}
