//! Versioned little-endian binary container for fitted pipelines, model
//! bundles and feature stores. The byte layout is described in
//! `docs/container.md`.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::data::FeatureSet;
use crate::error::{Error, Result};
use crate::features::{FeaturePipelineState, PcaModel, VarianceMask};
use crate::model::{ModelConfig, ModelParams, Preset, TokenLayout};
use crate::train::predict;

pub const MAGIC: &[u8; 8] = b"T4PDMBIN";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContainerKind {
    Pipeline = 1,
    ModelBundle = 2,
    FeatureStore = 3,
}

impl ContainerKind {
    fn from_u32(v: u32) -> Result<Self> {
        match v {
            1 => Ok(Self::Pipeline),
            2 => Ok(Self::ModelBundle),
            3 => Ok(Self::FeatureStore),
            other => Err(Error::Container(format!("unknown container kind {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Entry {
    Json(String),
    F64 { shape: Vec<usize>, data: Vec<f64> },
    U64(Vec<u64>),
}

const TAG_JSON: u8 = 0;
const TAG_F64: u8 = 1;
const TAG_U64: u8 = 2;

/// An ordered list of named entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: ContainerKind,
    pub entries: Vec<(String, Entry)>,
}

/// FNV-1a 64 over `bytes`, the container trailer.
pub fn checksum(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Container(format!("truncated at byte {}", self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Container("length overflow".into()))
    }

    fn words(&mut self, n: usize) -> Result<impl Iterator<Item = [u8; 8]> + 'a> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Container("length overflow".into()))?)?;
        Ok(bytes.chunks_exact(8).map(|c| c.try_into().expect("8 bytes")))
    }
}

impl Container {
    pub fn new(kind: ContainerKind) -> Self {
        Self {
            kind,
            entries: Vec::new(),
        }
    }

    pub fn push_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        self.entries
            .push((name.to_string(), Entry::Json(serde_json::to_string(value)?)));
        Ok(())
    }

    pub fn push_f64(&mut self, name: &str, shape: &[usize], data: &[f64]) {
        self.entries.push((
            name.to_string(),
            Entry::F64 {
                shape: shape.to_vec(),
                data: data.to_vec(),
            },
        ));
    }

    pub fn push_array1(&mut self, name: &str, a: &Array1<f64>) {
        self.push_f64(name, &[a.len()], &a.to_vec());
    }

    pub fn push_array2(&mut self, name: &str, a: &Array2<f64>) {
        let data: Vec<f64> = a.iter().copied().collect();
        self.push_f64(name, &[a.nrows(), a.ncols()], &data);
    }

    pub fn push_u64(&mut self, name: &str, values: Vec<u64>) {
        self.entries.push((name.to_string(), Entry::U64(values)));
    }

    fn get(&self, name: &str) -> Result<&Entry> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, e)| e)
            .ok_or_else(|| Error::Container(format!("missing entry `{name}`")))
    }

    pub fn has(&self, name: &str) -> bool {
        self.entries.iter().any(|(n, _)| n == name)
    }

    pub fn json<T: for<'de> Deserialize<'de>>(&self, name: &str) -> Result<T> {
        match self.get(name)? {
            Entry::Json(s) => Ok(serde_json::from_str(s)?),
            _ => Err(Error::Container(format!("`{name}` is not a json entry"))),
        }
    }

    pub fn f64(&self, name: &str) -> Result<(&[usize], &[f64])> {
        match self.get(name)? {
            Entry::F64 { shape, data } => Ok((shape, data)),
            _ => Err(Error::Container(format!("`{name}` is not a float tensor"))),
        }
    }

    pub fn array1(&self, name: &str) -> Result<Array1<f64>> {
        match self.f64(name)? {
            ([_], data) => Ok(Array1::from(data.to_vec())),
            (shape, _) => Err(Error::Container(format!("`{name}` has shape {shape:?}, expected 1-d"))),
        }
    }

    pub fn array2(&self, name: &str) -> Result<Array2<f64>> {
        match self.f64(name)? {
            (&[r, c], data) => Ok(Array2::from_shape_vec((r, c), data.to_vec()).expect("checked on read")),
            (shape, _) => Err(Error::Container(format!("`{name}` has shape {shape:?}, expected 2-d"))),
        }
    }

    pub fn u64(&self, name: &str) -> Result<&[u64]> {
        match self.get(name)? {
            Entry::U64(v) => Ok(v),
            _ => Err(Error::Container(format!("`{name}` is not an integer array"))),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.kind as u32).to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, entry) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            match entry {
                Entry::Json(s) => {
                    out.push(TAG_JSON);
                    out.extend_from_slice(&(s.len() as u64).to_le_bytes());
                    out.extend_from_slice(s.as_bytes());
                }
                Entry::F64 { shape, data } => {
                    out.push(TAG_F64);
                    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
                    for &d in shape {
                        out.extend_from_slice(&(d as u64).to_le_bytes());
                    }
                    for v in data {
                        out.extend_from_slice(&v.to_bits().to_le_bytes());
                    }
                }
                Entry::U64(values) => {
                    out.push(TAG_U64);
                    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
                    for v in values {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
            }
        }
        let sum = checksum(&out);
        out.extend_from_slice(&sum.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 20 || &bytes[..8] != MAGIC {
            return Err(Error::Container("not a container file".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
        if stored != checksum(body) {
            return Err(Error::Container("checksum mismatch".into()));
        }
        let mut r = Reader { buf: body, pos: 8 };
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Container(format!("unsupported version {version}")));
        }
        let kind = ContainerKind::from_u32(r.u32()?)?;
        let count = r.u32()? as usize;
        let mut entries = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Container("entry name is not utf-8".into()))?
                .to_string();
            let entry = match r.u8()? {
                TAG_JSON => {
                    let n = r.len()?;
                    let s = std::str::from_utf8(r.take(n)?)
                        .map_err(|_| Error::Container(format!("`{name}` is not utf-8")))?;
                    Entry::Json(s.to_string())
                }
                TAG_F64 => {
                    let ndim = r.u32()? as usize;
                    let shape = (0..ndim).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
                    let n = shape
                        .iter()
                        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                        .ok_or_else(|| Error::Container("shape overflow".into()))?;
                    let data = r.words(n)?.map(|w| f64::from_bits(u64::from_le_bytes(w))).collect();
                    Entry::F64 { shape, data }
                }
                TAG_U64 => {
                    let n = r.len()?;
                    Entry::U64(r.words(n)?.map(u64::from_le_bytes).collect())
                }
                tag => return Err(Error::Container(format!("`{name}` has unknown tag {tag}"))),
            };
            entries.push((name, entry));
        }
        if r.pos != body.len() {
            return Err(Error::Container("trailing bytes".into()));
        }
        Ok(Self { kind, entries })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path, kind: ContainerKind) -> Result<Self> {
        let c = Self::from_bytes(&fs::read(path)?)?;
        if c.kind != kind {
            return Err(Error::Container(format!(
                "{} holds {:?}, expected {kind:?}",
                path.display(),
                c.kind
            )));
        }
        Ok(c)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct PipelineHeader {
    input_dim: usize,
    output_dim: usize,
    mask_threshold: Option<f64>,
    pca: bool,
}

fn push_pipeline(c: &mut Container, prefix: &str, p: &FeaturePipelineState) -> Result<()> {
    c.push_json(
        &format!("{prefix}header"),
        &PipelineHeader {
            input_dim: p.input_dim,
            output_dim: p.output_dim,
            mask_threshold: p.mask.as_ref().map(|m| m.threshold),
            pca: p.pca.is_some(),
        },
    )?;
    if let Some(m) = &p.mask {
        c.push_u64(&format!("{prefix}mask.keep"), m.keep.iter().map(|&k| k as u64).collect());
        c.push_f64(&format!("{prefix}mask.variances"), &[m.variances.len()], &m.variances);
    }
    if let Some(pca) = &p.pca {
        c.push_array1(&format!("{prefix}pca.mean"), &pca.mean);
        c.push_array2(&format!("{prefix}pca.components"), &pca.components);
        c.push_array1(&format!("{prefix}pca.explained_variance"), &pca.explained_variance);
    }
    Ok(())
}

fn read_pipeline(c: &Container, prefix: &str) -> Result<FeaturePipelineState> {
    let h: PipelineHeader = c.json(&format!("{prefix}header"))?;
    let mask = match h.mask_threshold {
        Some(threshold) => Some(VarianceMask {
            keep: c.u64(&format!("{prefix}mask.keep"))?.iter().map(|&v| v != 0).collect(),
            threshold,
            variances: c.array1(&format!("{prefix}mask.variances"))?.to_vec(),
        }),
        None => None,
    };
    let pca = if h.pca {
        Some(PcaModel {
            mean: c.array1(&format!("{prefix}pca.mean"))?,
            components: c.array2(&format!("{prefix}pca.components"))?,
            explained_variance: c.array1(&format!("{prefix}pca.explained_variance"))?,
        })
    } else {
        None
    };
    let state = FeaturePipelineState {
        mask,
        pca,
        input_dim: h.input_dim,
        output_dim: h.output_dim,
    };
    state.validate()?;
    Ok(state)
}

pub fn pipeline_to_container(p: &FeaturePipelineState) -> Result<Container> {
    let mut c = Container::new(ContainerKind::Pipeline);
    push_pipeline(&mut c, "", p)?;
    Ok(c)
}

pub fn pipeline_from_container(c: &Container) -> Result<FeaturePipelineState> {
    read_pipeline(c, "")
}

pub fn save_pipeline(path: &Path, p: &FeaturePipelineState) -> Result<()> {
    pipeline_to_container(p)?.write(path)
}

pub fn load_pipeline(path: &Path) -> Result<FeaturePipelineState> {
    pipeline_from_container(&Container::read(path, ContainerKind::Pipeline)?)
}

/// Everything needed to classify raw feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub pipeline: FeaturePipelineState,
    pub layout: TokenLayout,
    pub model: ModelParams,
    pub class_labels: Vec<String>,
    pub preset: Option<Preset>,
    /// Samples per analysis window the features were computed from.
    pub window_len: usize,
    pub n_channels: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct BundleHeader {
    config: ModelConfig,
    layout: TokenLayout,
    class_labels: Vec<String>,
    preset: Option<Preset>,
    window_len: usize,
    n_channels: usize,
}

impl ModelBundle {
    pub fn validate(&self) -> Result<()> {
        self.pipeline.validate()?;
        self.model.validate()?;
        if self.class_labels.len() != self.model.config.n_classes {
            return Err(Error::DimMismatch {
                context: "class labels vs model classes".into(),
                expected: self.model.config.n_classes,
                actual: self.class_labels.len(),
            });
        }
        if (self.window_len / 2) * self.n_channels != self.pipeline.input_dim {
            return Err(Error::DimMismatch {
                context: "spectral width vs pipeline input".into(),
                expected: self.pipeline.input_dim,
                actual: (self.window_len / 2) * self.n_channels,
            });
        }
        if self.layout.input_len != self.pipeline.output_dim {
            return Err(Error::DimMismatch {
                context: "token layout vs pipeline output".into(),
                expected: self.pipeline.output_dim,
                actual: self.layout.input_len,
            });
        }
        if self.layout.seq_len != self.model.config.seq_len || self.layout.token_dim != self.model.config.token_dim {
            return Err(Error::Shape("token layout disagrees with the model config".into()));
        }
        Ok(())
    }

    pub fn to_container(&self) -> Result<Container> {
        self.validate()?;
        let mut c = Container::new(ContainerKind::ModelBundle);
        c.push_json(
            "bundle",
            &BundleHeader {
                config: self.model.config.clone(),
                layout: self.layout,
                class_labels: self.class_labels.clone(),
                preset: self.preset,
                window_len: self.window_len,
                n_channels: self.n_channels,
            },
        )?;
        push_pipeline(&mut c, "pipeline.", &self.pipeline)?;
        for t in self.model.weights.tensors() {
            c.push_f64(&format!("weights.{}", t.name), &t.shape, t.data);
        }
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let h: BundleHeader = c.json("bundle")?;
        let pipeline = read_pipeline(c, "pipeline.")?;
        let mut model = ModelParams::init(h.config, 0)?;
        let layout: Vec<(String, Vec<usize>)> = model
            .weights
            .tensors()
            .into_iter()
            .map(|t| (t.name, t.shape))
            .collect();
        for ((name, shape), dst) in layout.iter().zip(model.weights.tensors_mut()) {
            let (stored_shape, data) = c.f64(&format!("weights.{name}"))?;
            if stored_shape != shape.as_slice() {
                return Err(Error::Container(format!(
                    "`{name}` has shape {stored_shape:?}, config implies {shape:?}"
                )));
            }
            dst.copy_from_slice(data);
        }
        let bundle = Self {
            pipeline,
            layout: h.layout,
            model,
            class_labels: h.class_labels,
            preset: h.preset,
            window_len: h.window_len,
            n_channels: h.n_channels,
        };
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container()?.write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::read(path, ContainerKind::ModelBundle)?)
    }

    /// Class ids and probabilities for raw spectral feature rows.
    pub fn predict(&self, features: &Array2<f64>) -> Result<(Vec<usize>, Array2<f64>)> {
        predict(&self.model, &self.pipeline, &self.layout, features)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct FeatureHeader {
    class_labels: Vec<String>,
    source_ids: Vec<String>,
    window_len: usize,
    n_channels: usize,
}

pub fn save_features(path: &Path, fs: &FeatureSet) -> Result<()> {
    let mut c = Container::new(ContainerKind::FeatureStore);
    c.push_json(
        "header",
        &FeatureHeader {
            class_labels: fs.class_labels.clone(),
            source_ids: fs.source_ids.clone(),
            window_len: fs.window_len,
            n_channels: fs.n_channels,
        },
    )?;
    c.push_array2("features", &fs.features);
    c.push_u64("labels", fs.labels.iter().map(|&l| l as u64).collect());
    c.push_u64("offsets", fs.offsets.iter().map(|&o| o as u64).collect());
    c.write(path)
}

pub fn load_features(path: &Path) -> Result<FeatureSet> {
    let c = Container::read(path, ContainerKind::FeatureStore)?;
    let h: FeatureHeader = c.json("header")?;
    let features = c.array2("features")?;
    let labels: Vec<usize> = c.u64("labels")?.iter().map(|&l| l as usize).collect();
    let offsets: Vec<usize> = c.u64("offsets")?.iter().map(|&o| o as usize).collect();
    let n = features.nrows();
    if labels.len() != n || offsets.len() != n || h.source_ids.len() != n {
        return Err(Error::Container("feature store columns have different lengths".into()));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= h.class_labels.len()) {
        return Err(Error::LabelOutOfRange {
            label,
            n_classes: h.class_labels.len(),
        });
    }
    Ok(FeatureSet {
        features,
        labels,
        class_labels: h.class_labels,
        source_ids: h.source_ids,
        offsets,
        window_len: h.window_len,
        n_channels: h.n_channels,
    })
}
