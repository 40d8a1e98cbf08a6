//! Dataset manifests, CSV loaders for the two bearing/rotor layouts, the
//! synthetic vibration generator, and windowed feature extraction.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{segment, RawRecording, SpectralExtractor};

/// The seven rotor classes; overhang bearing faults are not among them.
pub const MAFAULDA_CLASSES: [&str; 7] = [
    "normal",
    "imbalance",
    "horizontal_misalignment",
    "vertical_misalignment",
    "ball_fault",
    "cage_fault",
    "outer_race",
];

pub const CWRU_CLASSES: [&str; 4] = ["ball_fault", "inner_race", "normal", "outer_race"];

pub const MAFAULDA_RATE_HZ: f64 = 50_000.0;
pub const CWRU_RATE_HZ: f64 = 48_000.0;

const MAFAULDA_COLUMNS: usize = 8;
/// Underhang accelerometer columns (axial, radial, tangential).
const MAFAULDA_SELECTED: [usize; 3] = [1, 2, 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Mafaulda,
    Cwru,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingEntry {
    /// Relative to the manifest root.
    pub path: String,
    /// Class name. Optional for the rotor layout, whose labels come from
    /// the directory path.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub sample_rate_hz: f64,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub kind: DatasetKind,
    pub classes: Vec<String>,
    pub recordings: Vec<RecordingEntry>,
    #[serde(skip)]
    pub root: PathBuf,
}

impl DatasetManifest {
    /// Reads a manifest; relative recording paths resolve against its
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut m: Self = serde_json::from_str(&text)?;
        m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == name)
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.len() < 2 {
            return Err(Error::Manifest("at least two classes are required".into()));
        }
        let mut seen = self.classes.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.classes.len() {
            return Err(Error::Manifest("duplicate class names".into()));
        }
        for r in &self.recordings {
            match (&r.label, self.kind) {
                (Some(l), _) if self.class_index(l).is_none() => {
                    return Err(Error::Manifest(format!(
                        "{}: label `{l}` is not a declared class",
                        r.path
                    )));
                }
                (None, DatasetKind::Cwru | DatasetKind::Synthetic) => {
                    return Err(Error::Manifest(format!("{}: missing label", r.path)));
                }
                _ => {}
            }
            if !(r.sample_rate_hz > 0.0) {
                return Err(Error::Manifest(format!(
                    "{}: sample rate {}",
                    r.path, r.sample_rate_hz
                )));
            }
        }
        if self.kind == DatasetKind::Cwru {
            for c in CWRU_CLASSES {
                if self.class_index(c).is_none() {
                    return Err(Error::Manifest(format!("bearing class `{c}` not declared")));
                }
                if !self.recordings.iter().any(|r| r.label.as_deref() == Some(c)) {
                    return Err(Error::Manifest(format!("no recording for class `{c}`")));
                }
            }
        }
        Ok(())
    }

    /// Recordings per class name, in class-table order.
    pub fn class_counts(&self) -> Result<Vec<(String, usize)>> {
        let mut counts = vec![0usize; self.classes.len()];
        for r in &self.recordings {
            if let Some(idx) = self.entry_class(r)? {
                counts[idx] += 1;
            }
        }
        Ok(self.classes.iter().cloned().zip(counts).collect())
    }

    fn entry_class(&self, r: &RecordingEntry) -> Result<Option<usize>> {
        let name = match self.kind {
            DatasetKind::Mafaulda => match mafaulda_class(Path::new(&r.path))? {
                None => return Ok(None),
                Some(derived) => {
                    if let Some(l) = &r.label {
                        if l != derived {
                            return Err(Error::UnknownClass {
                                path: r.path.clone().into(),
                                reason: format!("label `{l}` contradicts directory class `{derived}`"),
                            });
                        }
                    }
                    derived.to_string()
                }
            },
            _ => r.label.clone().unwrap_or_default(),
        };
        self.class_index(&name)
            .map(Some)
            .ok_or_else(|| Error::UnknownClass {
                path: r.path.clone().into(),
                reason: format!("class `{name}` is not declared in the manifest"),
            })
    }
}

/// Class of a rotor-layout recording from its directory path; `None` for
/// overhang bearing recordings, which are discarded.
pub fn mafaulda_class(path: &Path) -> Result<Option<&'static str>> {
    let parts: Vec<String> = path
        .components()
        .map(|c| c.as_os_str().to_string_lossy().to_lowercase().replace('-', "_"))
        .collect();
    if parts.iter().any(|p| p == "overhang") {
        return Ok(None);
    }
    let unknown = || Error::UnknownClass {
        path: path.to_path_buf(),
        reason: "no known class directory in the path".into(),
    };
    if let Some(i) = parts.iter().position(|p| p == "underhang") {
        let fault = parts.get(i + 1).ok_or_else(unknown)?;
        return ["ball_fault", "cage_fault", "outer_race"]
            .into_iter()
            .find(|c| c == fault)
            .map(Some)
            .ok_or_else(unknown);
    }
    for p in &parts {
        if let Some(c) = MAFAULDA_CLASSES[..4].iter().find(|c| *c == p) {
            return Ok(Some(c));
        }
    }
    Err(unknown())
}

/// Reads a headerless numeric CSV whose rows all have `n_columns` fields.
pub fn read_numeric_csv(path: &Path, n_columns: usize) -> Result<Array2<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)?;
    let mut data = Vec::new();
    let mut rows: usize = 0;
    let mut record = csv::StringRecord::new();
    while reader.read_record(&mut record)? {
        let line = rows as u64 + 1;
        let malformed = |reason: String| Error::MalformedCsv {
            path: path.to_path_buf(),
            line,
            reason,
        };
        if record.len() != n_columns {
            return Err(malformed(format!(
                "expected {n_columns} columns, found {}",
                record.len()
            )));
        }
        for field in record.iter() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| malformed(format!("`{field}` is not a number")))?;
            if !v.is_finite() {
                return Err(malformed(format!("`{field}` is not finite")));
            }
            data.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::EmptyFile(path.to_path_buf()));
    }
    Ok(Array2::from_shape_vec((rows, n_columns), data).expect("row-major buffer"))
}

/// Writes `[n_samples x n_channels]` as a headerless CSV. Values use the
/// shortest representation that parses back to the same bits.
pub fn write_numeric_csv(path: &Path, x: &Array2<f64>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    let mut buf = Vec::with_capacity(x.ncols());
    for row in x.rows() {
        buf.clear();
        buf.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&buf)?;
    }
    w.flush()?;
    Ok(())
}

fn load_entries(
    manifest: &DatasetManifest,
    n_columns: usize,
    select: &[usize],
) -> Result<Vec<RawRecording>> {
    let mut jobs: Vec<(&RecordingEntry, usize)> = Vec::new();
    for r in &manifest.recordings {
        match manifest.entry_class(r)? {
            Some(label) => jobs.push((r, label)),
            None => log::info!("skipping {} (overhang bearing)", r.path),
        }
    }
    jobs.sort_by(|a, b| a.0.path.cmp(&b.0.path));
    jobs.par_iter()
        .map(|(entry, label)| {
            let path = manifest.root.join(&entry.path);
            let table = read_numeric_csv(&path, n_columns)?;
            let channels = if select.len() == n_columns {
                table
            } else {
                table.select(ndarray::Axis(1), select)
            };
            let mut rec = RawRecording::new(entry.path.clone(), channels, entry.sample_rate_hz, *label)?;
            rec.meta = entry.meta.clone();
            Ok(rec)
        })
        .collect()
}

/// Eight-column rotor recordings reduced to the three underhang
/// accelerometer channels. Recordings are returned sorted by path.
pub fn load_mafaulda(manifest: &DatasetManifest) -> Result<Vec<RawRecording>> {
    expect_kind(manifest, DatasetKind::Mafaulda)?;
    load_entries(manifest, MAFAULDA_COLUMNS, &MAFAULDA_SELECTED)
}

/// Single-column drive-end recordings.
pub fn load_cwru(manifest: &DatasetManifest) -> Result<Vec<RawRecording>> {
    expect_kind(manifest, DatasetKind::Cwru)?;
    load_entries(manifest, 1, &[0])
}

/// Synthetic recordings with `n_channels` columns.
pub fn load_synthetic(manifest: &DatasetManifest, n_channels: usize) -> Result<Vec<RawRecording>> {
    expect_kind(manifest, DatasetKind::Synthetic)?;
    let all: Vec<usize> = (0..n_channels).collect();
    load_entries(manifest, n_channels, &all)
}

/// Loads any manifest; synthetic channel counts come from the `channels`
/// meta key (default 1).
pub fn load_manifest(manifest: &DatasetManifest) -> Result<Vec<RawRecording>> {
    match manifest.kind {
        DatasetKind::Mafaulda => load_mafaulda(manifest),
        DatasetKind::Cwru => load_cwru(manifest),
        DatasetKind::Synthetic => {
            let channels = manifest
                .recordings
                .first()
                .and_then(|r| r.meta.get("channels"))
                .map(|c| c.parse::<usize>())
                .transpose()
                .map_err(|e| Error::Manifest(format!("channels meta: {e}")))?
                .unwrap_or(1);
            load_synthetic(manifest, channels)
        }
    }
}

fn expect_kind(m: &DatasetManifest, kind: DatasetKind) -> Result<()> {
    if m.kind != kind {
        return Err(Error::Manifest(format!(
            "expected a {kind:?} manifest, got {:?}",
            m.kind
        )));
    }
    Ok(())
}

/// Builds a rotor-layout manifest from every `.csv` below `root`.
pub fn scan_mafaulda(root: &Path) -> Result<DatasetManifest> {
    let mut files = Vec::new();
    collect_csv(root, root, &mut files)?;
    files.sort();
    let recordings = files
        .into_iter()
        .map(|path| RecordingEntry {
            path,
            label: None,
            sample_rate_hz: MAFAULDA_RATE_HZ,
            meta: BTreeMap::new(),
        })
        .collect();
    let m = DatasetManifest {
        kind: DatasetKind::Mafaulda,
        classes: MAFAULDA_CLASSES.iter().map(|s| s.to_string()).collect(),
        recordings,
        root: root.to_path_buf(),
    };
    m.validate()?;
    Ok(m)
}

fn collect_csv(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_csv(root, &path, out)?;
        } else if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
            let rel = path.strip_prefix(root).unwrap_or(&path);
            out.push(rel.to_string_lossy().replace('\\', "/"));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Harmonic {
    /// Multiple of the rotation frequency.
    pub multiplier: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSignature {
    pub name: String,
    pub harmonics: Vec<Harmonic>,
    /// Per-channel scale; length is the channel count.
    pub channel_gains: Vec<f64>,
}

impl ClassSignature {
    fn new(name: &str, harmonics: &[(f64, f64)], channel_gains: &[f64]) -> Self {
        Self {
            name: name.into(),
            harmonics: harmonics
                .iter()
                .map(|&(multiplier, amplitude)| Harmonic {
                    multiplier,
                    amplitude,
                })
                .collect(),
            channel_gains: channel_gains.to_vec(),
        }
    }

    fn key(&self) -> Vec<u64> {
        let mut k: Vec<u64> = self
            .harmonics
            .iter()
            .flat_map(|h| [h.multiplier.to_bits(), h.amplitude.to_bits()])
            .collect();
        k.extend(self.channel_gains.iter().map(|g| g.to_bits()));
        k
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub recordings_per_class: usize,
    pub samples_per_recording: usize,
    pub sample_rate_hz: f64,
    /// Rotation frequency range in Hz, drawn uniformly per recording.
    pub rotation_hz: (f64, f64),
    pub noise_std: f64,
    /// Relative amplitude spread per recording and harmonic.
    pub amplitude_jitter: f64,
    pub seed: u64,
    pub signatures: Vec<ClassSignature>,
}

impl SynthConfig {
    /// Seven rotor classes on three channels at 50 kHz.
    pub fn seven_class() -> Self {
        let all = [1.0, 1.0, 1.0];
        Self {
            recordings_per_class: 70,
            samples_per_recording: 5000,
            sample_rate_hz: MAFAULDA_RATE_HZ,
            rotation_hz: (48.0, 52.0),
            noise_std: 0.02,
            amplitude_jitter: 0.1,
            seed: 0,
            signatures: vec![
                ClassSignature::new("normal", &[(1.0, 0.05)], &all),
                ClassSignature::new("imbalance", &[(1.0, 0.5)], &all),
                ClassSignature::new("horizontal_misalignment", &[(2.0, 0.4)], &[0.3, 1.0, 1.0]),
                // the axial channel carries most of the vertical offset
                ClassSignature::new("vertical_misalignment", &[(2.0, 0.4)], &[1.0, 0.3, 0.3]),
                ClassSignature::new("ball_fault", &[(4.7, 0.3)], &all),
                ClassSignature::new("cage_fault", &[(0.4, 0.3)], &all),
                ClassSignature::new("outer_race", &[(3.1, 0.3)], &all),
            ],
        }
    }

    /// Four bearing classes on one channel at 48 kHz.
    pub fn four_class() -> Self {
        Self {
            recordings_per_class: 70,
            samples_per_recording: 5000,
            sample_rate_hz: CWRU_RATE_HZ,
            rotation_hz: (28.5, 30.0),
            noise_std: 0.02,
            amplitude_jitter: 0.1,
            seed: 0,
            signatures: vec![
                ClassSignature::new("ball_fault", &[(4.7, 0.3)], &[1.0]),
                ClassSignature::new("inner_race", &[(5.4, 0.3)], &[1.0]),
                ClassSignature::new("normal", &[(1.0, 0.05)], &[1.0]),
                ClassSignature::new("outer_race", &[(3.1, 0.3)], &[1.0]),
            ],
        }
    }

    pub fn n_classes(&self) -> usize {
        self.signatures.len()
    }

    pub fn n_channels(&self) -> usize {
        self.signatures.first().map_or(0, |s| s.channel_gains.len())
    }

    pub fn class_names(&self) -> Vec<String> {
        self.signatures.iter().map(|s| s.name.clone()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.n_classes() < 2 {
            return bad("synthetic data needs at least two classes".into());
        }
        if self.recordings_per_class == 0 || self.samples_per_recording == 0 {
            return bad("recording counts and lengths must be positive".into());
        }
        if !(self.sample_rate_hz > 0.0) {
            return bad(format!("sample rate {}", self.sample_rate_hz));
        }
        let (lo, hi) = self.rotation_hz;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return bad(format!("rotation range ({lo}, {hi})"));
        }
        if !(self.noise_std >= 0.0) || !(0.0..1.0).contains(&self.amplitude_jitter) {
            return bad("noise_std must be >= 0 and amplitude_jitter in [0, 1)".into());
        }
        let channels = self.n_channels();
        if channels == 0 {
            return bad("signatures need at least one channel gain".into());
        }
        for s in &self.signatures {
            if s.channel_gains.len() != channels {
                return bad(format!("`{}` has {} channel gains, expected {channels}", s.name, s.channel_gains.len()));
            }
            if s.harmonics.is_empty() {
                return bad(format!("`{}` has no harmonics", s.name));
            }
            let nyquist = self.sample_rate_hz / 2.0;
            if s.harmonics.iter().any(|h| h.multiplier <= 0.0 || h.multiplier * hi >= nyquist) {
                return bad(format!("`{}` has a harmonic outside (0, Nyquist)", s.name));
            }
        }
        for (i, a) in self.signatures.iter().enumerate() {
            for b in &self.signatures[i + 1..] {
                if a.name == b.name {
                    return bad(format!("duplicate class `{}`", a.name));
                }
                if a.key() == b.key() {
                    return bad(format!("`{}` and `{}` share a signature", a.name, b.name));
                }
            }
        }
        Ok(())
    }
}

/// Sums of class-specific harmonics of a per-recording rotation frequency
/// plus Gaussian noise. Recordings are ordered by class, then index.
pub fn synth_generate(cfg: &SynthConfig) -> Result<Vec<RawRecording>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let n = cfg.samples_per_recording;
    let channels = cfg.n_channels();
    let dt = 1.0 / cfg.sample_rate_hz;
    let mut out = Vec::with_capacity(cfg.n_classes() * cfg.recordings_per_class);
    for (label, sig) in cfg.signatures.iter().enumerate() {
        for r in 0..cfg.recordings_per_class {
            let f_r = rng.random_range(cfg.rotation_hz.0..=cfg.rotation_hz.1);
            let mut x = Array2::<f64>::zeros((n, channels));
            for h in &sig.harmonics {
                let freq = 2.0 * PI * h.multiplier * f_r;
                for (c, &gain) in sig.channel_gains.iter().enumerate() {
                    let phase = rng.random_range(0.0..2.0 * PI);
                    let jitter = 1.0 + cfg.amplitude_jitter * rng.random_range(-1.0..=1.0);
                    let amp = h.amplitude * gain * jitter;
                    for (t, v) in x.column_mut(c).iter_mut().enumerate() {
                        *v += amp * (freq * t as f64 * dt + phase).sin();
                    }
                }
            }
            if cfg.noise_std > 0.0 {
                x.mapv_inplace(|v| v + noise.sample(&mut rng));
            }
            let mut rec = RawRecording::new(format!("{}/{:04}", sig.name, r), x, cfg.sample_rate_hz, label)?;
            rec.meta.insert("rotation_hz".into(), f_r.to_string());
            rec.meta.insert("channels".into(), channels.to_string());
            out.push(rec);
        }
    }
    Ok(out)
}

/// Writes recordings as CSV files plus a manifest into `dir`.
pub fn write_dataset(
    dir: &Path,
    kind: DatasetKind,
    classes: &[String],
    recordings: &[RawRecording],
) -> Result<DatasetManifest> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(recordings.len());
    for rec in recordings {
        let rel = format!("{}.csv", rec.source_id);
        let path = dir.join(&rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        write_numeric_csv(&path, &rec.channels)?;
        let mut meta = rec.meta.clone();
        meta.insert("channels".into(), rec.n_channels().to_string());
        entries.push(RecordingEntry {
            path: rel,
            label: Some(classes[rec.label].clone()),
            sample_rate_hz: rec.sample_rate_hz,
            meta,
        });
    }
    let manifest = DatasetManifest {
        kind,
        classes: classes.to_vec(),
        recordings: entries,
        root: dir.to_path_buf(),
    };
    manifest.validate()?;
    manifest.save(&dir.join("manifest.json"))?;
    Ok(manifest)
}

/// Spectral features of every window of every recording, one row per window.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub class_labels: Vec<String>,
    pub source_ids: Vec<String>,
    pub offsets: Vec<usize>,
    pub window_len: usize,
    pub n_channels: usize,
}

impl FeatureSet {
    /// Segments with `window_len`/`hop` and extracts magnitudes. Row order
    /// follows the recordings, then window offset.
    pub fn extract(
        recordings: &[RawRecording],
        class_labels: &[String],
        window_len: usize,
        hop: usize,
    ) -> Result<Self> {
        let n_channels = recordings.first().map_or(0, RawRecording::n_channels);
        if let Some(r) = recordings.iter().find(|r| r.n_channels() != n_channels) {
            return Err(Error::DimMismatch {
                context: format!("channels of `{}`", r.source_id),
                expected: n_channels,
                actual: r.n_channels(),
            });
        }
        if let Some(r) = recordings.iter().find(|r| r.label >= class_labels.len()) {
            return Err(Error::LabelOutOfRange {
                label: r.label,
                n_classes: class_labels.len(),
            });
        }
        let extractor = SpectralExtractor::new(window_len)?;
        let per_recording: Vec<Vec<(Vec<f64>, usize, String, usize)>> = recordings
            .par_iter()
            .map(|rec| {
                segment(rec, window_len, hop)?
                    .into_iter()
                    .map(|w| {
                        let v = extractor.extract(&w)?;
                        Ok((v.values, w.label, w.source_id, w.offset))
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        let width = (window_len / 2) * n_channels;
        let rows: Vec<_> = per_recording.into_iter().flatten().collect();
        let mut features = Array2::zeros((rows.len(), width));
        let mut labels = Vec::with_capacity(rows.len());
        let mut source_ids = Vec::with_capacity(rows.len());
        let mut offsets = Vec::with_capacity(rows.len());
        for (i, (values, label, source, offset)) in rows.into_iter().enumerate() {
            features.row_mut(i).assign(&ndarray::ArrayView1::from(&values));
            labels.push(label);
            source_ids.push(source);
            offsets.push(offset);
        }
        Ok(Self {
            features,
            labels,
            class_labels: class_labels.to_vec(),
            source_ids,
            offsets,
            window_len,
            n_channels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn width(&self) -> usize {
        self.features.ncols()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_labels.len()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            features: self.features.select(ndarray::Axis(0), idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            class_labels: self.class_labels.clone(),
            source_ids: idx.iter().map(|&i| self.source_ids[i].clone()).collect(),
            offsets: idx.iter().map(|&i| self.offsets[i]).collect(),
            window_len: self.window_len,
            n_channels: self.n_channels,
        }
    }
}
