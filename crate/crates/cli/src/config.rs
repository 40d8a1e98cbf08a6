//! Run configuration: one JSON document with every tunable, layered as
//! defaults, then the config file, then `T4PDM_*` environment variables,
//! then command-line flags.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use t4pdm::data::{ClassSignature, SynthConfig};
use t4pdm::model::{FeatureOptions, ModelDims, Preset};
use t4pdm::train::{SplitSpec, TrainConfig};

pub const ENV_PREFIX: &str = "T4PDM_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Seeds the split, weight initialization, shuffling and dropout.
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub window: WindowConfig,
    pub features: FeatureOptions,
    pub tokens: TokenConfig,
    pub preset: Preset,
    pub model: ModelDims,
    pub train: TrainConfig,
    pub split: SplitSpec,
    pub transfer: TransferConfig,
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            dataset: DatasetConfig::default(),
            window: WindowConfig::default(),
            features: FeatureOptions::default(),
            tokens: TokenConfig::default(),
            preset: Preset::Transformer4bPca,
            model: ModelDims::default(),
            train: TrainConfig::default(),
            split: SplitSpec::default(),
            transfer: TransferConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    /// Recordings on disk. Without a manifest a synthetic set is generated.
    pub manifest: Option<PathBuf>,
    pub synthetic: SynthSection,
}

/// Overrides on top of the built-in 7-class or 4-class generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSection {
    pub classes: usize,
    pub recordings_per_class: Option<usize>,
    pub samples_per_recording: Option<usize>,
    pub sample_rate_hz: Option<f64>,
    pub rotation_hz: Option<(f64, f64)>,
    pub noise_std: Option<f64>,
    pub amplitude_jitter: Option<f64>,
    /// Defaults to the run seed.
    pub seed: Option<u64>,
    pub signatures: Option<Vec<ClassSignature>>,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            classes: 7,
            recordings_per_class: None,
            samples_per_recording: None,
            sample_rate_hz: None,
            rotation_hz: None,
            noise_std: None,
            amplitude_jitter: None,
            seed: None,
            signatures: None,
        }
    }
}

impl SynthSection {
    pub fn resolve(&self, run_seed: u64) -> Result<SynthConfig> {
        let mut cfg = match self.classes {
            7 => SynthConfig::seven_class(),
            4 => SynthConfig::four_class(),
            n => bail!("synthetic data comes in 7 or 4 classes, not {n}"),
        };
        if let Some(v) = self.recordings_per_class {
            cfg.recordings_per_class = v;
        }
        if let Some(v) = self.samples_per_recording {
            cfg.samples_per_recording = v;
        }
        if let Some(v) = self.sample_rate_hz {
            cfg.sample_rate_hz = v;
        }
        if let Some(v) = self.rotation_hz {
            cfg.rotation_hz = v;
        }
        if let Some(v) = self.noise_std {
            cfg.noise_std = v;
        }
        if let Some(v) = self.amplitude_jitter {
            cfg.amplitude_jitter = v;
        }
        if let Some(v) = &self.signatures {
            cfg.signatures = v.clone();
        }
        cfg.seed = self.seed.unwrap_or(run_seed);
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowConfig {
    pub len: usize,
    pub hop: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            len: t4pdm::signal::DEFAULT_WINDOW_LEN,
            hop: t4pdm::signal::DEFAULT_WINDOW_LEN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TokenConfig {
    pub token_dim: Option<usize>,
    /// Zero-pad reduced vectors whose length has no usable factorization.
    pub pad: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TransferConfig {
    /// Source run directory or bundle file.
    pub source: Option<PathBuf>,
    pub freeze_body: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsConfig {
    /// Feature store to read instead of `<out>/features/features.bin`.
    pub features: Option<PathBuf>,
}

impl RunConfig {
    /// Defaults, then `file`, then environment overrides from `env`.
    pub fn load<I>(file: Option<&Path>, env: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut doc = serde_json::to_value(Self::default())?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            let user: Value = serde_json::from_str(&text)
                .with_context(|| format!("parsing config {}", path.display()))?;
            merge(&mut doc, user);
        }
        let mut overrides: Vec<(String, String)> = env
            .into_iter()
            .filter(|(k, _)| k.starts_with(ENV_PREFIX))
            .collect();
        overrides.sort();
        for (key, raw) in overrides {
            let path: Vec<String> = key[ENV_PREFIX.len()..]
                .split("__")
                .map(str::to_lowercase)
                .collect();
            let value = serde_json::from_str(&raw).unwrap_or(Value::String(raw));
            set_path(&mut doc, &path, value).with_context(|| format!("applying {key}"))?;
        }
        let cfg: Self = serde_json::from_value(doc.clone()).context("invalid config")?;
        let unknown = unknown_keys(&doc, &serde_json::to_value(&cfg)?);
        if !unknown.is_empty() {
            bail!("unknown config keys: {}", unknown.into_iter().collect::<Vec<_>>().join(", "));
        }
        Ok(cfg)
    }

    pub fn from_env(file: Option<&Path>) -> Result<Self> {
        Self::load(file, std::env::vars())
    }

    /// Pushes the run seed into the split and training seeds, then checks
    /// every section.
    pub fn resolve(mut self, seed: Option<u64>) -> Result<Self> {
        if let Some(s) = seed {
            self.seed = s;
        }
        self.split.seed = self.seed;
        self.train.seed = self.seed;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.split.validate()?;
        self.train.validate()?;
        if self.window.len < 2 || self.window.len % 2 != 0 || self.window.hop == 0 {
            bail!("window length must be even and >= 2, hop positive");
        }
        let m = &self.model;
        if m.d_model == 0 || m.n_heads == 0 || m.d_model % m.n_heads != 0 || m.d_ff == 0 {
            bail!("model dims: d_model must be a positive multiple of n_heads, d_ff positive");
        }
        if self.features.pca_components == 0 {
            bail!("pca_components must be positive");
        }
        if self.dataset.manifest.is_none() {
            self.dataset.synthetic.resolve(self.seed)?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn set_path(doc: &mut Value, path: &[String], value: Value) -> Result<()> {
    let (last, parents) = path.split_last().context("empty override key")?;
    let mut node = doc;
    for p in parents {
        if node.get(p).is_none_or(Value::is_null) {
            node[p.as_str()] = Value::Object(Default::default());
        }
        node = node.get_mut(p).context("override path")?;
        if !node.is_object() {
            bail!("`{p}` is not a section");
        }
    }
    node[last.as_str()] = value;
    Ok(())
}

/// Dotted paths present in `given` but absent after a parse/serialize trip.
fn unknown_keys(given: &Value, parsed: &Value) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    walk(given, parsed, String::new(), &mut out);
    out
}

fn walk(given: &Value, parsed: &Value, prefix: String, out: &mut BTreeSet<String>) {
    if let (Value::Object(g), Value::Object(p)) = (given, parsed) {
        for (k, v) in g {
            let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
            match p.get(k) {
                Some(pv) => walk(v, pv, path, out),
                None => {
                    out.insert(path);
                }
            }
        }
    }
}
