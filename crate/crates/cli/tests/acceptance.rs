//! End-to-end acceptance checks. Runs every criterion, prints one line per
//! criterion and exits non-zero if any fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use ndarray::{Array2, Array3, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use t4pdm::container::ModelBundle;
use t4pdm::eval::{classification_metrics, ConfusionMatrix};
use t4pdm::features::fit_pca;
use t4pdm::model::{build, ModelConfig, ModelDims, ModelParams, Preset, TokenLayout};
use t4pdm::signal::SpectralExtractor;
use t4pdm_cli::commands::{self, Context};
use t4pdm_cli::config::RunConfig;

type Outcome = Result<String, String>;

macro_rules! check {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn within(elapsed: Duration, limit: Duration) -> Outcome {
    if elapsed > limit {
        Err(format!("took {:.1} s, limit {} s", elapsed.as_secs_f64(), limit.as_secs()))
    } else {
        Ok(String::new())
    }
}

fn fft_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut lengths: Vec<usize> = (0..99).map(|_| 2 * rng.random_range(4..=256)).collect();
    lengths.push(5000);
    let (mut worst_mag, mut worst_parseval) = (0.0f64, 0.0f64);
    for &n in &lengths {
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ex = SpectralExtractor::new(n).map_err(|e| e.to_string())?;
        let got = ex.magnitude(&x).map_err(|e| e.to_string())?;
        let want = common::naive_magnitude(&x);
        let scale = want.iter().fold(0.0f64, |m, v| m.max(*v));
        let err = got.iter().zip(&want).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        worst_mag = worst_mag.max(err / scale);

        let spec = ex.full_spectrum(&x).map_err(|e| e.to_string())?;
        let time: f64 = x.iter().map(|v| v * v).sum();
        let freq: f64 = spec.iter().map(|c| c.norm_sqr()).sum::<f64>() / n as f64;
        worst_parseval = worst_parseval.max((time - freq).abs() / time);
    }
    check!(worst_mag <= 1e-9, "magnitude relative error {worst_mag:e}");
    check!(worst_parseval <= 1e-9, "Parseval relative error {worst_parseval:e}");
    within(start.elapsed(), Duration::from_secs(10))?;
    Ok(format!(
        "{} windows, max rel err {worst_mag:.1e}, Parseval {worst_parseval:.1e}, {:.2} s",
        lengths.len(),
        start.elapsed().as_secs_f64()
    ))
}

fn pca_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut worst_var, mut worst_angle) = (0.0f64, 0.0f64);
    for trial in 0..20 {
        let (n, f) = if trial == 0 { (200, 30) } else { (rng.random_range(40..=200), rng.random_range(3..=30)) };
        let k = rng.random_range(1..=f);
        // distinct column scales keep the eigenvalues apart without making the
        // covariance so ill-conditioned that the oracle itself loses digits
        let scales: Vec<f64> = (0..f).map(|j| 1.2f64.powi(-(j as i32))).collect();
        let x = Array2::from_shape_fn((n, f), |(_, j)| scales[j] * rng.random_range(-1.0..1.0) + 0.3 * j as f64);
        let mixing = Array2::from_shape_fn((f, f), |(i, j)| if i == j { 1.0 } else { 0.05 * ((i * 7 + j * 3) % 5) as f64 });
        let x = x.dot(&mixing);

        let pca = fit_pca(&x, k).map_err(|e| e.to_string())?;
        let (values, vectors) = common::jacobi_eigen(&common::covariance(&x));
        for (got, want) in pca.explained_variance.iter().zip(&values[..k]) {
            worst_var = worst_var.max((got - want).abs() / want.abs());
        }
        let reference = vectors.slice(ndarray::s![.., ..k]).t().to_owned();
        worst_angle = worst_angle.max(common::max_principal_angle(&pca.components, &reference));
    }
    check!(worst_var <= 1e-8, "explained variance relative error {worst_var:e}");
    check!(worst_angle <= 1e-6, "principal angle {worst_angle:e} rad");
    within(start.elapsed(), Duration::from_secs(10))?;
    Ok(format!(
        "20 matrices, max var err {worst_var:.1e}, max angle {worst_angle:.1e} rad, {:.2} s",
        start.elapsed().as_secs_f64()
    ))
}

fn gradient_gate() -> Outcome {
    let start = Instant::now();
    let config = ModelConfig {
        n_blocks: 2,
        attention_layers: 1,
        n_heads: 2,
        d_model: 4,
        d_ff: 8,
        dropout_rate: 0.5,
        sublayer_dropout: 0.0,
        seq_len: 6,
        token_dim: 4,
        n_classes: 3,
    };
    let model = ModelParams::init(config, 11).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = Array3::from_shape_simple_fn((4, 6, 4), || rng.random_range(-1.5..1.5));
    let labels = [0, 1, 2, 1];
    let report = common::gradient_check(&model, &x, &labels, 1e-5, 99);
    let (name, worst) = report
        .iter()
        .cloned()
        .fold((String::new(), 0.0f64), |acc, (n, r)| if r > acc.1 { (n, r) } else { acc });
    check!(worst <= 1e-4, "{name}: relative error {worst:e}");
    within(start.elapsed(), Duration::from_secs(60))?;
    Ok(format!(
        "{} tensors, worst {worst:.1e} ({name}), {:.2} s",
        report.len(),
        start.elapsed().as_secs_f64()
    ))
}

fn permutation_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let layout = TokenLayout::resolve(64, None, false).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for preset in Preset::ALL {
        let model = build(preset, &ModelDims::default(), layout, 7, 5).map_err(|e| e.to_string())?;
        let x = Array3::from_shape_simple_fn((50, layout.seq_len, layout.token_dim), || rng.random_range(-3.0..3.0));
        let mut permuted = x.clone();
        for (i, mut sample) in permuted.outer_iter_mut().enumerate() {
            let mut order: Vec<usize> = (0..layout.seq_len).collect();
            order.shuffle(&mut rng);
            let src = x.index_axis(Axis(0), i);
            for (dst, &s) in order.iter().enumerate() {
                sample.row_mut(dst).assign(&src.row(s));
            }
        }
        let a = model.forward(&x, false, &mut rng).map_err(|e| e.to_string())?;
        let b = model.forward(&permuted, false, &mut rng).map_err(|e| e.to_string())?;
        worst = worst.max(a.iter().zip(&b).fold(0.0f64, |m, (p, q)| m.max((p - q).abs())));
    }
    check!(worst <= 1e-9, "max-abs logit change {worst:e}");
    Ok(format!("50 inputs x {} presets, max-abs change {worst:.1e}", Preset::ALL.len()))
}

fn bearing_metrics() -> Outcome {
    let cm = ConfusionMatrix::from_counts(
        vec![vec![7, 0, 0, 0], vec![1, 7, 0, 0], vec![0, 0, 5, 0], vec![0, 0, 0, 5]],
        ["ball_fault", "inner_race", "normal", "outer_race"].map(String::from).to_vec(),
    )
    .map_err(|e| e.to_string())?;
    let m = classification_metrics(&cm).map_err(|e| e.to_string())?;
    let expected = [
        ("ball precision", m.per_class[0].precision, 87.50),
        ("ball F1", m.per_class[0].f1, 93.33),
        ("inner F1", m.per_class[1].f1, 93.33),
        ("macro precision", m.macro_avg.precision, 96.88),
        ("macro accuracy", m.macro_avg.accuracy, 98.00),
    ];
    for (name, got, want) in expected {
        check!((100.0 * got - want).abs() <= 0.5, "{name} {:.2}% vs {want:.2}%", 100.0 * got);
    }
    Ok("ball P 87.50, F1 93.33/93.33, macro P 96.88, macro acc 98.00".into())
}

fn context(out: &Path, config: RunConfig) -> Context {
    Context {
        out: out.to_path_buf(),
        config: config.resolve(Some(7)).expect("valid config"),
        force: false,
    }
}

fn e2e_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.dataset.synthetic.classes = 7;
    cfg.dataset.synthetic.recordings_per_class = Some(70);
    cfg.window.len = 5000;
    cfg.window.hop = 5000;
    cfg.features.pca_components = 64;
    cfg.features.mask_before_pca = true;
    cfg.preset = Preset::Transformer4bPca;
    cfg
}

fn train_and_evaluate(out: &Path, cfg: RunConfig) -> Result<t4pdm::eval::EvalReport, String> {
    let ctx = context(out, cfg);
    commands::prepare(&ctx).map_err(|e| format!("{e:#}"))?;
    commands::train(&ctx).map_err(|e| format!("{e:#}"))?;
    commands::evaluate(&ctx).map_err(|e| format!("{e:#}"))
}

fn end_to_end(run: &Path) -> Outcome {
    let start = Instant::now();
    let report = train_and_evaluate(run, e2e_config())?;
    let fs = t4pdm::container::load_features(&run.join("features").join("features.bin")).map_err(|e| e.to_string())?;
    check!(fs.width() == 7500, "feature width {}", fs.width());
    let bundle = ModelBundle::load(&run.join("bundle").join("model.bin")).map_err(|e| e.to_string())?;
    check!(
        bundle.pipeline.output_dim == 64 && bundle.pipeline.mask.is_some(),
        "pipeline output {} (mask: {})",
        bundle.pipeline.output_dim,
        bundle.pipeline.mask.is_some()
    );
    let acc = report.macro_avg.micro_accuracy;
    let f1 = report.macro_avg.f1;
    check!(acc >= 0.95, "test accuracy {:.2}%", 100.0 * acc);
    check!(f1 >= 0.95, "macro F1 {:.2}%", 100.0 * f1);
    within(start.elapsed(), Duration::from_secs(600))?;
    Ok(format!(
        "{} test windows, accuracy {:.2}%, macro F1 {:.2}%, {:.1} s",
        report.confusion.total(),
        100.0 * acc,
        100.0 * f1,
        start.elapsed().as_secs_f64()
    ))
}

fn ablation_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.dataset.synthetic.recordings_per_class = Some(15);
    cfg.dataset.synthetic.samples_per_recording = Some(1000);
    cfg.window.len = 1000;
    cfg.window.hop = 1000;
    cfg.features.pca_components = 32;
    cfg.train.epochs = 8;
    cfg.train.learning_rate = 1e-3;
    cfg
}

fn ablation_once(out: &Path) -> Result<Vec<u8>, String> {
    let ctx = context(out, ablation_config());
    commands::prepare(&ctx).map_err(|e| format!("{e:#}"))?;
    let summary = commands::ablation(&ctx).map_err(|e| format!("{e:#}"))?;
    check!(summary.rows.len() == 5, "{} rows", summary.rows.len());
    for (row, preset) in summary.rows.iter().zip(Preset::ALL) {
        check!(row.preset == preset.name() && row.model == preset.display_name(), "row {} for {}", row.preset, preset.name());
        let cols = [row.f1, row.recall, row.precision, row.accuracy];
        check!(cols.iter().all(|v| v.is_finite()), "{}: non-finite metric", row.preset);
        check!(row.auc_roc.is_some() && row.auc_prc.is_some(), "{}: AUC missing", row.preset);
        check!(row.convergence_epoch >= 1, "{}: no convergence epoch", row.preset);
    }
    fs::read(out.join("ablation").join("ablation.json")).map_err(|e| e.to_string())
}

fn ablation(dir: &Path) -> Outcome {
    let start = Instant::now();
    let first = ablation_once(&dir.join("a"))?;
    let second = ablation_once(&dir.join("b"))?;
    check!(first == second, "ablation.json differs between reruns");
    for preset in Preset::ALL {
        for file in ["report.json", "report.txt", "bundle/model.bin"] {
            let a = fs::read(dir.join("a/ablation").join(preset.name()).join(file)).map_err(|e| e.to_string())?;
            let b = fs::read(dir.join("b/ablation").join(preset.name()).join(file)).map_err(|e| e.to_string())?;
            check!(a == b, "{}/{file} differs between reruns", preset.name());
        }
    }
    Ok(format!("5 rows, reruns byte-identical, {:.1} s", start.elapsed().as_secs_f64()))
}

fn transfer(source: &Path, out: &Path) -> Outcome {
    let start = Instant::now();
    let mut cfg = e2e_config();
    cfg.dataset.synthetic.classes = 4;
    cfg.transfer.source = Some(source.to_path_buf());
    let ctx = context(out, cfg);
    commands::prepare(&ctx).map_err(|e| format!("{e:#}"))?;
    let (run, report, record) = commands::transfer(&ctx).map_err(|e| format!("{e:#}"))?;
    check!(record.body_preserved, "body changed at handoff");
    check!(record.target_classes.len() == 4, "{} target classes", record.target_classes.len());
    check!(run.bundle.model.config.n_classes == 4, "head has {} outputs", run.bundle.model.config.n_classes);
    let acc = report.macro_avg.micro_accuracy;
    check!(acc >= 0.90, "test accuracy {:.2}%", 100.0 * acc);
    Ok(format!(
        "7 -> 4 classes, body preserved, test accuracy {:.2}%, {:.1} s",
        100.0 * acc,
        start.elapsed().as_secs_f64()
    ))
}

fn determinism(first: &Path, second: &Path) -> Outcome {
    train_and_evaluate(second, e2e_config())?;
    let files = [
        "features/features.bin",
        "bundle/model.bin",
        "split.json",
        "report.json",
        "report.txt",
        "config.json",
    ];
    for file in files {
        let a = fs::read(first.join(file)).map_err(|e| e.to_string())?;
        let b = fs::read(second.join(file)).map_err(|e| e.to_string())?;
        check!(a == b, "{file} differs between reruns");
    }
    Ok(format!("{} artifacts byte-identical across reruns", files.len()))
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let root = tmp.path();
    let e2e = root.join("e2e");
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("FFT matches naive DFT", Box::new(fft_oracle)),
        ("PCA matches Jacobi eigendecomposition", Box::new(pca_oracle)),
        ("gradient gate on micro model", Box::new(gradient_gate)),
        ("permutation invariance", Box::new(permutation_invariance)),
        ("bearing confusion-matrix metrics", Box::new(bearing_metrics)),
        ("end-to-end synthetic 7-class run", Box::new(|| end_to_end(&e2e))),
        ("ablation harness", Box::new(|| ablation(&root.join("ablation")))),
        ("transfer 7 -> 4 classes", Box::new(|| transfer(&e2e, &root.join("transfer")))),
        ("determinism", Box::new(|| determinism(&e2e, &root.join("e2e_rerun")))),
    ];

    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS criterion {}: {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {}: {name}: {why}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
