//! Flat key=value run configuration.
//!
//! Values resolve in three layers: built-in defaults, then the optional
//! config file, then command-line flags. Unknown file keys are rejected by
//! name so a typo cannot silently fall back to a default. The canonical
//! text rendering (sorted keys, one per line) is hashed into checkpoints
//! for reproducibility audits.

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use anywidth::data::{self, synth, Dataset, Preprocess, Split};
use anywidth::train::{Schedule, TrainConfig, WidthsMode};
use anywidth::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub variant: String,
    pub dataset: String,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Fixed training widths, descending from 1.0. Empty selects the
    /// variant's default mode (random sampling for awn/usnet).
    pub widths: Vec<f64>,
    pub random_n: usize,
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub schedule: String,
    pub milestones: Vec<f64>,
    pub decay_factor: f64,
    pub base_channels: usize,
    pub synth_train: usize,
    pub synth_test: usize,
    pub synth_classes: usize,
    pub synth_noise: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            variant: "awn".into(),
            dataset: "synthetic".into(),
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("runs/out"),
            epochs: 20,
            batch_size: 128,
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 0.0,
            seed: 0,
            widths: Vec::new(),
            random_n: 4,
            alpha_min: 0.25,
            alpha_max: 1.0,
            schedule: "step".into(),
            milestones: vec![0.5, 0.75],
            decay_factor: 0.1,
            base_channels: 32,
            synth_train: 3000,
            synth_test: 1000,
            synth_classes: 10,
            synth_noise: 0.18,
        }
    }
}

/// Optional per-field overrides from one source (file or flags).
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub variant: Option<String>,
    pub dataset: Option<String>,
    pub data_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub momentum: Option<f64>,
    pub weight_decay: Option<f64>,
    pub seed: Option<u64>,
    pub widths: Option<Vec<f64>>,
    pub random_n: Option<usize>,
    pub alpha_min: Option<f64>,
    pub alpha_max: Option<f64>,
    pub schedule: Option<String>,
    pub milestones: Option<Vec<f64>>,
    pub decay_factor: Option<f64>,
    pub base_channels: Option<usize>,
    pub synth_train: Option<usize>,
    pub synth_test: Option<usize>,
    pub synth_classes: Option<usize>,
    pub synth_noise: Option<f64>,
}

pub fn parse_config_file(path: impl AsRef<Path>) -> Result<Overrides> {
    let path = path.as_ref();
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let mut over = Overrides::default();
    for (line_no, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "{}:{}: expected key=value, got '{line}'",
                path.display(),
                line_no + 1
            )));
        };
        apply_key(&mut over, key.trim(), value.trim()).map_err(|e| {
            Error::Config(format!("{}:{}: {e}", path.display(), line_no + 1))
        })?;
    }
    Ok(over)
}

fn apply_key(over: &mut Overrides, key: &str, value: &str) -> Result<()> {
    fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
        value
            .parse::<T>()
            .map_err(|_| Error::Config(format!("bad value '{value}' for '{key}'")))
    }
    match key {
        "variant" => over.variant = Some(value.to_string()),
        "dataset" => over.dataset = Some(value.to_string()),
        "data_dir" => over.data_dir = Some(PathBuf::from(value)),
        "out_dir" => over.out_dir = Some(PathBuf::from(value)),
        "epochs" => over.epochs = Some(num(key, value)?),
        "batch_size" => over.batch_size = Some(num(key, value)?),
        "lr" => over.lr = Some(num(key, value)?),
        "momentum" => over.momentum = Some(num(key, value)?),
        "weight_decay" => over.weight_decay = Some(num(key, value)?),
        "seed" => over.seed = Some(num(key, value)?),
        "widths" => over.widths = Some(parse_float_list(value)?),
        "random_n" => over.random_n = Some(num(key, value)?),
        "alpha_min" => over.alpha_min = Some(num(key, value)?),
        "alpha_max" => over.alpha_max = Some(num(key, value)?),
        "schedule" => over.schedule = Some(value.to_string()),
        "milestones" => over.milestones = Some(parse_float_list(value)?),
        "decay_factor" => over.decay_factor = Some(num(key, value)?),
        "base_channels" => over.base_channels = Some(num(key, value)?),
        "synth_train" => over.synth_train = Some(num(key, value)?),
        "synth_test" => over.synth_test = Some(num(key, value)?),
        "synth_classes" => over.synth_classes = Some(num(key, value)?),
        "synth_noise" => over.synth_noise = Some(num(key, value)?),
        other => return Err(Error::Config(format!("unknown config key '{other}'"))),
    }
    Ok(())
}

pub fn parse_float_list(value: &str) -> Result<Vec<f64>> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad number '{t}' in list")))
        })
        .collect()
}

impl RunConfig {
    /// defaults <- file <- flags.
    pub fn resolve(file: Option<Overrides>, flags: Overrides) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        for layer in [file, Some(flags)].into_iter().flatten() {
            macro_rules! merge {
                ($($field:ident),*) => {
                    $(if let Some(v) = layer.$field { cfg.$field = v; })*
                };
            }
            merge!(
                variant, dataset, data_dir, out_dir, epochs, batch_size, lr, momentum,
                weight_decay, seed, widths, random_n, alpha_min, alpha_max, schedule,
                milestones, decay_factor, base_channels, synth_train, synth_test,
                synth_classes, synth_noise
            );
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        anywidth::model::VariantKind::parse(&self.variant)?;
        match self.dataset.as_str() {
            "mnist" | "fashionmnist" | "cifar10" | "synthetic" => {}
            other => {
                return Err(Error::Config(format!(
                    "unknown dataset '{other}' (expected mnist|fashionmnist|cifar10|synthetic)"
                )))
            }
        }
        match self.schedule.as_str() {
            "step" | "linear" => {}
            other => {
                return Err(Error::Config(format!(
                    "unknown schedule '{other}' (expected step|linear)"
                )))
            }
        }
        self.train_config()?.validate()
    }

    /// Sorted key=value rendering used for hashing and reproduction files.
    /// Covers everything that determines the trained result; output and
    /// data locations are environment-specific and deliberately excluded,
    /// so runs from different directories hash identically.
    pub fn canonical_text(&self) -> String {
        let float_list =
            |v: &[f64]| v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(",");
        let mut pairs = vec![
            ("alpha_max".to_string(), format!("{}", self.alpha_max)),
            ("alpha_min".to_string(), format!("{}", self.alpha_min)),
            ("base_channels".to_string(), self.base_channels.to_string()),
            ("batch_size".to_string(), self.batch_size.to_string()),
            ("dataset".to_string(), self.dataset.clone()),
            ("decay_factor".to_string(), format!("{}", self.decay_factor)),
            ("epochs".to_string(), self.epochs.to_string()),
            ("lr".to_string(), format!("{}", self.lr)),
            ("milestones".to_string(), float_list(&self.milestones)),
            ("momentum".to_string(), format!("{}", self.momentum)),
            ("random_n".to_string(), self.random_n.to_string()),
            ("schedule".to_string(), self.schedule.clone()),
            ("seed".to_string(), self.seed.to_string()),
            ("synth_classes".to_string(), self.synth_classes.to_string()),
            ("synth_noise".to_string(), format!("{}", self.synth_noise)),
            ("synth_test".to_string(), self.synth_test.to_string()),
            ("synth_train".to_string(), self.synth_train.to_string()),
            ("variant".to_string(), self.variant.clone()),
            ("weight_decay".to_string(), format!("{}", self.weight_decay)),
            ("widths".to_string(), float_list(&self.widths)),
        ];
        pairs.sort();
        let mut out = String::new();
        for (k, v) in pairs {
            out.push_str(&k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        }
        out
    }

    pub fn config_hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// The engine-level training config implied by this run config.
    pub fn train_config(&self) -> Result<TrainConfig> {
        let schedule = match self.schedule.as_str() {
            "linear" => Schedule::Linear,
            _ => Schedule::StepDecay {
                milestones: self.milestones.clone(),
                factor: self.decay_factor,
            },
        };
        let widths_mode = if !self.widths.is_empty() {
            WidthsMode::Fixed(self.widths.clone())
        } else {
            match self.variant.as_str() {
                // Any-width and calibrated variants default to random
                // sampling; the fixed-set baselines default to the
                // standard four widths / plain full-width training.
                "awn" | "usnet" => WidthsMode::Random {
                    n: self.random_n,
                    alpha_min: self.alpha_min,
                    alpha_max: self.alpha_max,
                },
                "snet" => WidthsMode::Fixed(vec![1.0, 0.75, 0.5, 0.25]),
                _ => WidthsMode::Fixed(vec![1.0]),
            }
        };
        Ok(TrainConfig {
            batch_size: self.batch_size,
            lr0: self.lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            epochs: self.epochs,
            schedule,
            widths_mode,
            seed: self.seed,
        })
    }

    /// Widths the switchable bank is built over, ascending. The calibrated
    /// variant starts with a single full-width state.
    pub fn bank_widths(&self) -> Option<Vec<f64>> {
        match self.variant.as_str() {
            "snet" => {
                let mut w = if self.widths.is_empty() {
                    vec![1.0, 0.75, 0.5, 0.25]
                } else {
                    self.widths.clone()
                };
                w.sort_by(|a, b| a.partial_cmp(b).expect("finite widths"));
                Some(w)
            }
            "usnet" => Some(vec![1.0]),
            _ => None,
        }
    }

    /// Load the (train, test, preprocess) triple this config names.
    pub fn load_data(&self) -> Result<(Dataset<f32>, Dataset<f32>, Preprocess<f32>)> {
        match self.dataset.as_str() {
            "mnist" | "fashionmnist" => {
                let train = data::load_idx(
                    self.data_dir.join("train-images-idx3-ubyte"),
                    self.data_dir.join("train-labels-idx1-ubyte"),
                    Split::Train,
                )?;
                let test = data::load_idx(
                    self.data_dir.join("t10k-images-idx3-ubyte"),
                    self.data_dir.join("t10k-labels-idx1-ubyte"),
                    Split::Test,
                )?;
                Ok((train, test, Preprocess::mnist()))
            }
            "cifar10" => {
                let train = data::load_cifar10(&self.data_dir, Split::Train)?;
                let test = data::load_cifar10(&self.data_dir, Split::Test)?;
                Ok((train, test, Preprocess::cifar10()))
            }
            "synthetic" => {
                let spec = synth::SynthSpec {
                    classes: self.synth_classes,
                    side: 28,
                    train_n: self.synth_train,
                    test_n: self.synth_test,
                    seed: self.seed,
                    noise: self.synth_noise,
                    max_shift: 4,
                };
                let (train, test) = synth::generate(&spec);
                Ok((train, test, Preprocess::mnist()))
            }
            other => Err(Error::Config(format!("unknown dataset '{other}'"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp_config(name: &str, body: &str) -> PathBuf {
        let dir = std::env::temp_dir().join("awn_config_tests");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join(name);
        std::fs::write(&path, body).unwrap();
        path
    }

    #[test]
    fn unknown_key_is_named() {
        let path = tmp_config("bad.cfg", "epochs=5\nlerning_rate=0.1\n");
        let err = parse_config_file(&path).unwrap_err();
        assert!(err.to_string().contains("lerning_rate"), "{err}");
    }

    #[test]
    fn flags_override_file_overrides_defaults() {
        let path = tmp_config("layered.cfg", "# comment\nepochs=7\nlr=0.5\n");
        let file = parse_config_file(&path).unwrap();
        let flags = Overrides {
            lr: Some(0.25),
            ..Default::default()
        };
        let cfg = RunConfig::resolve(Some(file), flags).unwrap();
        assert_eq!(cfg.epochs, 7);
        assert_eq!(cfg.lr, 0.25);
        assert_eq!(cfg.batch_size, 128); // default
    }

    #[test]
    fn canonical_text_is_stable_and_hashable() {
        let a = RunConfig::default();
        let mut b = RunConfig::default();
        assert_eq!(a.config_hash(), b.config_hash());
        b.seed = 1;
        assert_ne!(a.config_hash(), b.config_hash());
        assert!(a.canonical_text().lines().count() >= 18);
    }

    #[test]
    fn widths_flag_selects_fixed_mode() {
        let cfg = RunConfig {
            widths: vec![1.0, 0.5],
            ..Default::default()
        };
        assert!(matches!(
            cfg.train_config().unwrap().widths_mode,
            WidthsMode::Fixed(_)
        ));
        let cfg2 = RunConfig::default();
        assert!(matches!(
            cfg2.train_config().unwrap().widths_mode,
            WidthsMode::Random { .. }
        ));
    }

    #[test]
    fn bad_variant_or_dataset_is_rejected() {
        let err = RunConfig::resolve(
            None,
            Overrides {
                variant: Some("mobilenet".into()),
                ..Default::default()
            },
        )
        .unwrap_err();
        assert!(err.to_string().contains("mobilenet"), "{err}");
        let err = RunConfig::resolve(
            None,
            Overrides {
                dataset: Some("imagenet".into()),
                ..Default::default()
            },
        )
        .unwrap_err();
        assert!(err.to_string().contains("imagenet"), "{err}");
    }
}
