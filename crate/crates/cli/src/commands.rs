//! Subcommand implementations. Each one reads and writes only below the run
//! directory, except for explicitly configured input paths.

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context as _, Result};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use t4pdm::container::{checksum, load_features, save_features, ModelBundle};
use t4pdm::data::{
    load_manifest, read_numeric_csv, synth_generate, write_dataset, DatasetKind, DatasetManifest,
    FeatureSet,
};
use t4pdm::eval::{render_ablation, AblationRow, EvalReport};
use t4pdm::features::FeaturePipelineState;
use t4pdm::model::{build, replace_head, ModelParams, Preset, TokenLayout};
use t4pdm::signal::{segment, RawRecording};
use t4pdm::train::{stratified_split, train as fit_model, SplitIndices, TokenizedSet, TrainHistory};

use crate::config::RunConfig;

pub struct Context {
    pub out: PathBuf,
    pub config: RunConfig,
    pub force: bool,
}

impl Context {
    pub fn features_path(&self) -> PathBuf {
        self.config
            .paths
            .features
            .clone()
            .unwrap_or_else(|| self.out.join("features").join("features.bin"))
    }

    pub fn bundle_path(&self) -> PathBuf {
        self.out.join("bundle").join("model.bin")
    }

    fn echo_config(&self) -> Result<()> {
        fs::create_dir_all(&self.out)?;
        fs::write(self.out.join("config.json"), self.config.to_json()?)?;
        Ok(())
    }
}

fn guard(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        bail!("{} already exists; pass --force to overwrite", path.display());
    }
    Ok(())
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

/// Generates the configured synthetic dataset as CSV files plus a manifest
/// under `<out>/data`.
pub fn synth(ctx: &Context) -> Result<DatasetManifest> {
    let dir = ctx.out.join("data");
    guard(&dir.join("manifest.json"), ctx.force)?;
    let cfg = ctx.config.dataset.synthetic.resolve(ctx.config.seed)?;
    let recs = synth_generate(&cfg)?;
    let manifest = write_dataset(&dir, DatasetKind::Synthetic, &cfg.class_names(), &recs)?;
    ctx.echo_config()?;
    println!("wrote {} recordings to {}", recs.len(), dir.display());
    for (name, n) in manifest.class_counts()? {
        println!("  {name:<26}{n:>6}");
    }
    Ok(manifest)
}

fn load_recordings(cfg: &RunConfig) -> Result<(Vec<RawRecording>, Vec<String>)> {
    match &cfg.dataset.manifest {
        Some(path) => {
            let m = DatasetManifest::load(path)
                .with_context(|| format!("loading manifest {}", path.display()))?;
            Ok((load_manifest(&m)?, m.classes.clone()))
        }
        None => {
            let s = cfg.dataset.synthetic.resolve(cfg.seed)?;
            Ok((synth_generate(&s)?, s.class_names()))
        }
    }
}

/// Segments, extracts spectra and writes the feature store.
pub fn prepare(ctx: &Context) -> Result<FeatureSet> {
    let path = ctx.features_path();
    guard(&path, ctx.force)?;
    let (recs, classes) = load_recordings(&ctx.config)?;
    let w = &ctx.config.window;
    let fs = FeatureSet::extract(&recs, &classes, w.len, w.hop)?;
    ensure!(!fs.is_empty(), "no windows extracted");
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    save_features(&path, &fs)?;
    ctx.echo_config()?;
    println!("{} windows of width {} from {} recordings", fs.len(), fs.width(), recs.len());
    for (name, n) in fs.class_labels.iter().zip(fs.class_counts()) {
        println!("  {name:<26}{n:>6}");
    }
    Ok(fs)
}

fn read_features(ctx: &Context) -> Result<FeatureSet> {
    let path = ctx.features_path();
    load_features(&path).with_context(|| format!("reading features {} (run `prepare` first)", path.display()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub split: SplitIndices,
    pub test_hash: String,
}

impl SplitRecord {
    fn new(split: SplitIndices) -> Self {
        let bytes: Vec<u8> = split.test.iter().flat_map(|&i| (i as u64).to_le_bytes()).collect();
        Self {
            test_hash: format!("{:016x}", checksum(&bytes)),
            split,
        }
    }
}

fn split_features(cfg: &RunConfig, fs: &FeatureSet) -> Result<SplitRecord> {
    Ok(SplitRecord::new(stratified_split(&fs.labels, &fs.class_labels, &cfg.split)?))
}

pub struct TrainedRun {
    pub bundle: ModelBundle,
    pub history: TrainHistory,
}

fn tokenized(fs: &FeatureSet, idx: &[usize], pipeline: &FeaturePipelineState, layout: &TokenLayout) -> Result<TokenizedSet> {
    let part = fs.subset(idx);
    Ok(TokenizedSet::from_features(&part.features, &part.labels, pipeline, layout)?)
}

/// Fits the preset's feature pipeline on the training rows, builds (or
/// adapts) the model and trains it.
pub fn fit_preset(
    cfg: &RunConfig,
    preset: Preset,
    fs: &FeatureSet,
    split: &SplitIndices,
    start: Option<ModelParams>,
) -> Result<TrainedRun> {
    let train_rows = fs.subset(&split.train);
    let pipeline = FeaturePipelineState::fit(&train_rows.features, &preset.pipeline(&cfg.features))?;
    let (layout, model) = match start {
        None => {
            let layout = TokenLayout::resolve(pipeline.output_dim, cfg.tokens.token_dim, cfg.tokens.pad)?;
            let model = build(preset, &cfg.model, layout, fs.class_labels.len(), cfg.seed)?;
            (layout, model)
        }
        Some(mut model) => {
            // the body does not depend on sequence length, only token width
            let layout = TokenLayout::resolve(pipeline.output_dim, Some(model.config.token_dim), cfg.tokens.pad)?;
            model.config.seq_len = layout.seq_len;
            (layout, model)
        }
    };
    let train_set = tokenized(fs, &split.train, &pipeline, &layout)?;
    let val_set = tokenized(fs, &split.val, &pipeline, &layout)?;
    let mut train_cfg = cfg.train.clone();
    train_cfg.batch_size = train_cfg.batch_size.min(train_set.len());
    log::info!(
        "{preset}: {} train / {} val, layout {}x{}",
        train_set.len(),
        val_set.len(),
        layout.seq_len,
        layout.token_dim
    );
    let (model, history) = fit_model(model, &train_set, &val_set, &train_cfg)?;
    Ok(TrainedRun {
        bundle: ModelBundle {
            pipeline,
            layout,
            model,
            class_labels: fs.class_labels.clone(),
            preset: Some(preset),
            window_len: fs.window_len,
            n_channels: fs.n_channels,
        },
        history,
    })
}

fn save_run(dir: &Path, run: &TrainedRun, split: &SplitRecord) -> Result<()> {
    fs::create_dir_all(dir.join("bundle"))?;
    run.bundle.save(&dir.join("bundle").join("model.bin"))?;
    write_file(&dir.join("history.csv"), run.history.to_csv())?;
    write_file(&dir.join("split.json"), serde_json::to_string(split)? + "\n")?;
    Ok(())
}

pub fn train(ctx: &Context) -> Result<TrainedRun> {
    guard(&ctx.bundle_path(), ctx.force)?;
    let fs = read_features(ctx)?;
    let split = split_features(&ctx.config, &fs)?;
    let run = fit_preset(&ctx.config, ctx.config.preset, &fs, &split.split, None)?;
    save_run(&ctx.out, &run, &split)?;
    ctx.echo_config()?;
    let last = run.history.epochs.last().context("no epochs recorded")?;
    println!(
        "trained {} for {} epochs: train loss {:.5}, val loss {:.5}, convergence epoch {}",
        ctx.config.preset,
        run.history.epochs.len(),
        last.train_loss,
        last.val_loss,
        run.history.convergence_epoch
    );
    Ok(run)
}

fn report_for(cfg: &RunConfig, bundle: &ModelBundle, fs: &FeatureSet, test: &[usize]) -> Result<EvalReport> {
    ensure!(
        bundle.class_labels == fs.class_labels,
        "bundle classes {:?} differ from feature classes {:?}",
        bundle.class_labels,
        fs.class_labels
    );
    let part = fs.subset(test);
    let (_, probs) = bundle.predict(&part.features)?;
    let preset = bundle.preset.map_or("custom", Preset::name);
    Ok(EvalReport::from_scores(
        &part.labels,
        &probs,
        &fs.class_labels,
        preset,
        cfg.seed,
        serde_json::to_value(cfg)?,
    )?)
}

fn write_report(dir: &Path, report: &EvalReport) -> Result<()> {
    write_file(&dir.join("report.json"), report.to_json()? + "\n")?;
    write_file(&dir.join("report.txt"), report.render_text())
}

/// Scores the saved bundle on the held-out test rows.
pub fn evaluate(ctx: &Context) -> Result<EvalReport> {
    let bundle = ModelBundle::load(&ctx.bundle_path())
        .with_context(|| format!("loading {} (run `train` first)", ctx.bundle_path().display()))?;
    let fs = read_features(ctx)?;
    let split: SplitRecord = serde_json::from_str(&fs::read_to_string(ctx.out.join("split.json"))?)?;
    let report = report_for(&ctx.config, &bundle, &fs, &split.split.test)?;
    write_report(&ctx.out, &report)?;
    print!("{}", report.render_text());
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    pub test_hash: String,
    pub rows: Vec<AblationRow>,
}

/// Trains and scores every preset on one shared split.
pub fn ablation(ctx: &Context) -> Result<AblationSummary> {
    let root = ctx.out.join("ablation");
    guard(&root.join("ablation.json"), ctx.force)?;
    let fs = read_features(ctx)?;
    let split = split_features(&ctx.config, &fs)?;
    ctx.echo_config()?;
    let mut summary = AblationSummary {
        test_hash: split.test_hash.clone(),
        rows: Vec::new(),
    };
    for preset in Preset::ALL {
        let dir = root.join(preset.name());
        let result = fit_preset(&ctx.config, preset, &fs, &split.split, None).and_then(|run| {
            save_run(&dir, &run, &split)?;
            let report = report_for(&ctx.config, &run.bundle, &fs, &split.split.test)?;
            write_report(&dir, &report)?;
            Ok(AblationRow::from_report(preset.display_name(), &report, run.history.convergence_epoch))
        });
        match result {
            Ok(row) => {
                summary.rows.push(row);
                write_file(&root.join("ablation.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
                write_file(&root.join("ablation.txt"), render_ablation(&summary.rows))?;
            }
            Err(e) => {
                write_file(
                    &root.join("error.json"),
                    serde_json::to_string_pretty(&serde_json::json!({
                        "preset": preset.name(),
                        "error": format!("{e:#}"),
                        "completed": summary.rows.len(),
                    }))? + "\n",
                )?;
                return Err(e.context(format!("preset {preset} failed")));
            }
        }
    }
    print!("{}", render_ablation(&summary.rows));
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferRecord {
    pub source_classes: Vec<String>,
    pub target_classes: Vec<String>,
    /// Body tensors equal to the source bit for bit at handoff.
    pub body_preserved: bool,
    pub freeze_body: bool,
}

fn source_bundle_path(cfg: &RunConfig) -> Result<PathBuf> {
    let src = cfg
        .transfer
        .source
        .clone()
        .context("transfer needs transfer.source (a run directory or bundle file)")?;
    Ok(if src.is_dir() { src.join("bundle").join("model.bin") } else { src })
}

/// True when every tensor except the head matches bit for bit.
pub fn body_equal(a: &ModelParams, b: &ModelParams) -> bool {
    let ta = a.weights.tensors();
    let tb = b.weights.tensors();
    ta.len() == tb.len()
        && ta.iter().zip(&tb).filter(|(x, _)| !x.name.starts_with("head.")).all(|(x, y)| {
            x.name == y.name && x.data.len() == y.data.len() && x.data.iter().zip(y.data).all(|(p, q)| p.to_bits() == q.to_bits())
        })
}

/// Replaces the source model's head for this run's classes, refits the
/// feature pipeline on the new data, retrains and evaluates.
pub fn transfer(ctx: &Context) -> Result<(TrainedRun, EvalReport, TransferRecord)> {
    guard(&ctx.bundle_path(), ctx.force)?;
    let source_path = source_bundle_path(&ctx.config)?;
    let source = ModelBundle::load(&source_path)
        .with_context(|| format!("loading source bundle {}", source_path.display()))?;
    let fs = read_features(ctx)?;
    let split = split_features(&ctx.config, &fs)?;
    let start = replace_head(&source.model, fs.class_labels.len(), ctx.config.seed)?;
    let record = TransferRecord {
        source_classes: source.class_labels.clone(),
        target_classes: fs.class_labels.clone(),
        body_preserved: body_equal(&source.model, &start),
        freeze_body: ctx.config.transfer.freeze_body,
    };
    ensure!(record.body_preserved, "head replacement altered the body");
    let mut cfg = ctx.config.clone();
    cfg.train.freeze_body = cfg.transfer.freeze_body;
    let preset = source.preset.unwrap_or(cfg.preset);
    let run = fit_preset(&cfg, preset, &fs, &split.split, Some(start))?;
    save_run(&ctx.out, &run, &split)?;
    let report = report_for(&cfg, &run.bundle, &fs, &split.split.test)?;
    write_report(&ctx.out, &report)?;
    write_file(&ctx.out.join("transfer.json"), serde_json::to_string_pretty(&record)? + "\n")?;
    ctx.echo_config()?;
    print!("{}", report.render_text());
    Ok((run, report, record))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowPrediction {
    pub offset: usize,
    pub class: String,
    pub probabilities: Vec<f64>,
}

/// Classifies every window of a headerless CSV recording with the run's
/// bundle and writes `<out>/predictions.csv`.
pub fn predict(ctx: &Context, input: &Path) -> Result<Vec<WindowPrediction>> {
    let bundle = ModelBundle::load(&ctx.bundle_path())
        .with_context(|| format!("loading {}", ctx.bundle_path().display()))?;
    let mut first = String::new();
    BufReader::new(fs::File::open(input)?).read_line(&mut first)?;
    ensure!(!first.trim().is_empty(), "{} is empty", input.display());
    let n_channels = first.split(',').count();
    ensure!(
        n_channels == bundle.n_channels,
        "{} has {n_channels} columns, the model expects {} channels",
        input.display(),
        bundle.n_channels
    );
    let (window_len, width) = (bundle.window_len, bundle.pipeline.input_dim);
    let samples = read_numeric_csv(input, n_channels)?;
    let rec = RawRecording::new(input.display().to_string(), samples, 1.0, 0)?;
    let hop = ctx.config.window.hop.min(window_len);
    let windows = segment(&rec, window_len, hop)?;
    let extractor = t4pdm::signal::SpectralExtractor::new(window_len)?;
    let mut features = Array2::zeros((windows.len(), width));
    for (i, w) in windows.iter().enumerate() {
        let v = extractor.extract(w)?;
        features.row_mut(i).assign(&ndarray::ArrayView1::from(&v.values));
    }
    let (ids, probs) = bundle.predict(&features)?;
    let out: Vec<WindowPrediction> = windows
        .iter()
        .zip(ids)
        .zip(probs.rows())
        .map(|((w, id), p)| WindowPrediction {
            offset: w.offset,
            class: bundle.class_labels[id].clone(),
            probabilities: p.to_vec(),
        })
        .collect();
    let mut text = format!("offset,class,{}\n", bundle.class_labels.join(","));
    for p in &out {
        let probs: Vec<String> = p.probabilities.iter().map(|v| v.to_string()).collect();
        text.push_str(&format!("{},{},{}\n", p.offset, p.class, probs.join(",")));
    }
    write_file(&ctx.out.join("predictions.csv"), &text)?;
    print!("{text}");
    Ok(out)
}
