//! Stratified splitting, Adam, the epoch loop and batched prediction.

use std::io::Write;
use std::time::Instant;

use ndarray::{Array2, Array3, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeaturePipelineState;
use crate::model::{tokenize_rows, ModelParams, TokenLayout, Weights};
use crate::nn::softmax_rows;

/// Split fractions. The test share is whatever train and validation leave.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_frac: 0.576,
            val_frac: 0.18,
            test_frac: 0.244,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let fr = [self.train_frac, self.val_frac, self.test_frac];
        if fr.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::InvalidArgument(format!("split fractions {fr:?}")));
        }
        let sum: f64 = fr.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "split fractions sum to {sum}, expected 1"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Largest-remainder apportionment of `n` items over `fractions`; ties go
/// to the earlier share.
fn apportion(n: usize, fractions: &[f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts = [0usize; 3];
    for (c, e) in counts.iter_mut().zip(&exact) {
        *c = e.floor() as usize;
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).expect("finite").then(a.cmp(&b))
    });
    let assigned: usize = counts.iter().sum();
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    // every split needs at least one sample; borrow from the largest share
    for i in 0..3 {
        if counts[i] == 0 {
            let donor = (0..3).max_by_key(|&j| (counts[j], usize::MAX - j)).expect("3 splits");
            counts[donor] -= 1;
            counts[i] += 1;
        }
    }
    counts
}

/// Per-class shuffled split with class proportions preserved in each part.
/// Index lists are returned sorted.
pub fn stratified_split(
    labels: &[usize],
    class_names: &[String],
    spec: &SplitSpec,
) -> Result<SplitIndices> {
    spec.validate()?;
    let n_classes = class_names.len();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= n_classes {
            return Err(Error::LabelOutOfRange {
                label: l,
                n_classes,
            });
        }
        by_class[l].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = SplitIndices {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    let fractions = [spec.train_frac, spec.val_frac, spec.test_frac];
    for (class, mut idx) in by_class.into_iter().enumerate() {
        if idx.is_empty() {
            continue;
        }
        if idx.len() < 3 {
            return Err(Error::ClassTooSmall {
                class: class_names[class].clone(),
                count: idx.len(),
            });
        }
        idx.shuffle(&mut rng);
        let [n_train, n_val, _] = apportion(idx.len(), &fractions);
        out.train.extend_from_slice(&idx[..n_train]);
        out.val.extend_from_slice(&idx[n_train..n_train + n_val]);
        out.test.extend_from_slice(&idx[n_train + n_val..]);
    }
    out.train.sort_unstable();
    out.val.sort_unstable();
    out.test.sort_unstable();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub early_stop_patience: Option<usize>,
    /// Only the classification head is updated.
    pub freeze_body: bool,
    /// Window used to report the convergence epoch.
    pub convergence_patience: usize,
    pub improvement_tolerance: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            early_stop_patience: None,
            freeze_body: false,
            convergence_patience: 10,
            improvement_tolerance: 1e-4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "epochs and batch_size must be positive".into(),
            ));
        }
        if !(self.learning_rate >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "learning rate {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidArgument("adam betas must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Weights,
    v: Weights,
}

impl Adam {
    pub fn new(params: &Weights, cfg: &TrainConfig) -> Self {
        Self {
            learning_rate: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            t: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn step(&mut self, params: &mut Weights, grads: &Weights) {
        self.t += 1;
        let hyper = AdamStep::new(self, self.t);
        let grads = grads.tensors();
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        for (((p, g), m), v) in params.tensors_mut().into_iter().zip(grads).zip(ms).zip(vs) {
            hyper.apply(p, g.data, m, v);
        }
    }
}

/// One Adam update over flat slices.
#[derive(Debug, Clone, Copy)]
pub struct AdamStep {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    correction1: f64,
    correction2: f64,
}

impl AdamStep {
    fn new(adam: &Adam, t: i32) -> Self {
        Self::with(adam.learning_rate, adam.beta1, adam.beta2, adam.eps, t)
    }

    pub fn with(lr: f64, beta1: f64, beta2: f64, eps: f64, t: i32) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            correction1: 1.0 - beta1.powi(t),
            correction2: 1.0 - beta2.powi(t),
        }
    }

    pub fn apply(&self, params: &mut [f64], grads: &[f64], m: &mut [f64], v: &mut [f64]) {
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / self.correction1;
            let v_hat = *v / self.correction2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Tokenized samples with their class indices.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenizedSet {
    pub x: Array3<f64>,
    pub labels: Vec<usize>,
}

impl TokenizedSet {
    /// Applies a fitted pipeline then tokenizes.
    pub fn from_features(
        features: &Array2<f64>,
        labels: &[usize],
        pipeline: &FeaturePipelineState,
        layout: &TokenLayout,
    ) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} feature rows for {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        let reduced = pipeline.transform(features)?;
        Ok(Self {
            x: tokenize_rows(&reduced, layout)?,
            labels: labels.to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn subset(&self, idx: &[usize]) -> (Array3<f64>, Vec<usize>) {
        (
            self.x.select(Axis(0), idx),
            idx.iter().map(|&i| self.labels[i]).collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Last epoch that improved the best validation loss by at least the
    /// tolerance before a full patience window without improvement.
    pub convergence_epoch: usize,
    /// Whether a full patience window without improvement was observed.
    pub plateau_reached: bool,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainHistory {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "epoch,train_loss,val_loss,seconds")?;
        for e in &self.epochs {
            writeln!(w, "{},{},{},{}", e.epoch, e.train_loss, e.val_loss, e.seconds)?;
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("write to vec");
        String::from_utf8(buf).expect("ascii csv")
    }
}

/// `(convergence_epoch, plateau_reached)` for a validation-loss curve.
/// Epochs are 1-based.
pub fn convergence_epoch(val_losses: &[f64], patience: usize, tolerance: f64) -> (usize, bool) {
    let mut best = f64::INFINITY;
    let mut best_epoch = 0;
    let mut stall = 0;
    for (i, &loss) in val_losses.iter().enumerate() {
        if loss < best - tolerance || best_epoch == 0 {
            best = loss;
            best_epoch = i + 1;
            stall = 0;
        } else {
            stall += 1;
            if stall >= patience {
                return (best_epoch, true);
            }
        }
    }
    (best_epoch, false)
}

/// Mean cross-entropy in inference mode.
pub fn evaluate_loss(model: &ModelParams, set: &TokenizedSet, batch_size: usize) -> Result<f64> {
    let probs = predict_tokens(model, &set.x, batch_size)?;
    let mut total = 0.0;
    for (row, &label) in probs.rows().into_iter().zip(&set.labels) {
        total -= row[label].max(f64::MIN_POSITIVE).ln();
    }
    Ok(total / set.len() as f64)
}

/// Mini-batch Adam on mean cross-entropy with per-epoch seeded shuffling.
pub fn train(
    mut model: ModelParams,
    train_set: &TokenizedSet,
    val_set: &TokenizedSet,
    cfg: &TrainConfig,
) -> Result<(ModelParams, TrainHistory)> {
    cfg.validate()?;
    model.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::InvalidArgument(
            "training and validation sets must be non-empty".into(),
        ));
    }
    if cfg.batch_size > train_set.len() {
        return Err(Error::InvalidArgument(format!(
            "batch size {} exceeds {} training samples",
            cfg.batch_size,
            train_set.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(&model.weights, cfg);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut best = (f64::INFINITY, 0usize, model.weights.clone());
    let mut stall = 0;
    let mut stopped_early = false;

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let (x, labels) = train_set.subset(chunk);
            let (loss, mut grads) = model
                .loss_and_grad(&x, &labels, true, &mut rng)
                .map_err(|e| diverged(e, epoch))?;
            if cfg.freeze_body {
                let head = grads.head;
                grads = model.weights.zeros_like();
                grads.head = head;
            }
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            loss_sum += loss * chunk.len() as f64;
            adam.step(&mut model.weights, &grads);
        }
        let train_loss = loss_sum / train_set.len() as f64;
        let val_loss = evaluate_loss(&model, val_set, cfg.batch_size.max(64))
            .map_err(|e| diverged(e, epoch))?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                loss: val_loss,
            });
        }
        records.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            seconds: started.elapsed().as_secs_f64(),
        });
        log::debug!("epoch {epoch}: train {train_loss:.6} val {val_loss:.6}");

        if val_loss < best.0 - cfg.improvement_tolerance || best.1 == 0 {
            best = (val_loss, epoch, model.weights.clone());
            stall = 0;
        } else {
            stall += 1;
        }
        if let Some(patience) = cfg.early_stop_patience {
            if stall >= patience {
                stopped_early = true;
                break;
            }
        }
    }
    if stopped_early {
        model.weights = best.2;
    }
    let val: Vec<f64> = records.iter().map(|r| r.val_loss).collect();
    let (convergence, plateau) =
        convergence_epoch(&val, cfg.convergence_patience, cfg.improvement_tolerance);
    Ok((
        model,
        TrainHistory {
            epochs: records,
            convergence_epoch: convergence,
            plateau_reached: plateau,
            best_epoch: best.1,
            stopped_early,
        },
    ))
}

fn diverged(e: Error, epoch: usize) -> Error {
    match e {
        Error::NonFinite(_) => Error::Diverged {
            epoch,
            loss: f64::NAN,
        },
        other => other,
    }
}

/// Softmax probabilities for tokenized samples, in inference mode.
pub fn predict_tokens(model: &ModelParams, x: &Array3<f64>, batch_size: usize) -> Result<Array2<f64>> {
    let n = x.len_of(Axis(0));
    let mut probs = Array2::zeros((n, model.config.n_classes));
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let step = batch_size.max(1);
    for start in (0..n).step_by(step) {
        let end = (start + step).min(n);
        let batch = x.slice(ndarray::s![start..end, .., ..]).to_owned();
        let logits = model.forward(&batch, false, &mut rng)?;
        let p = softmax_rows(&logits);
        probs.slice_mut(ndarray::s![start..end, ..]).assign(&p);
    }
    Ok(probs)
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(row: ndarray::ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Class ids and probability rows for raw feature vectors.
pub fn predict(
    model: &ModelParams,
    pipeline: &FeaturePipelineState,
    layout: &TokenLayout,
    features: &Array2<f64>,
) -> Result<(Vec<usize>, Array2<f64>)> {
    if layout.padded_len() != model.config.input_len() {
        return Err(Error::DimMismatch {
            context: "token layout vs model".into(),
            expected: model.config.input_len(),
            actual: layout.padded_len(),
        });
    }
    let reduced = pipeline.transform(features)?;
    let tokens = tokenize_rows(&reduced, layout)?;
    let probs = predict_tokens(model, &tokens, 256)?;
    let ids = probs.rows().into_iter().map(argmax).collect();
    Ok((ids, probs))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn single_class_thousand() {
        let labels = vec![0; 1000];
        let s = stratified_split(&labels, &names(1), &SplitSpec::default()).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (576, 180, 244));
    }

    #[test]
    fn balanced_classes_stay_balanced() {
        let labels: Vec<usize> = (0..1000).map(|i| i % 2).collect();
        let s = stratified_split(&labels, &names(2), &SplitSpec::default()).unwrap();
        for part in [&s.train, &s.val, &s.test] {
            let ones = part.iter().filter(|&&i| labels[i] == 1).count();
            let zeros = part.len() - ones;
            assert!(ones.abs_diff(zeros) <= 1, "{ones} vs {zeros}");
        }
    }

    #[test]
    fn split_is_a_deterministic_partition() {
        let labels: Vec<usize> = (0..97).map(|i| (i * 7) % 4).collect();
        let spec = SplitSpec {
            seed: 11,
            ..SplitSpec::default()
        };
        let a = stratified_split(&labels, &names(4), &spec).unwrap();
        let b = stratified_split(&labels, &names(4), &spec).unwrap();
        assert_eq!(a, b);
        let mut all: Vec<usize> = a.train.iter().chain(&a.val).chain(&a.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..97).collect::<Vec<_>>());
    }

    #[test]
    fn tiny_class_rejected_and_minimum_class_covered() {
        let err = stratified_split(&[0, 0, 1, 1, 1], &names(2), &SplitSpec::default());
        match err {
            Err(Error::ClassTooSmall { class, count }) => {
                assert_eq!((class.as_str(), count), ("c0", 2));
            }
            other => panic!("{other:?}"),
        }
        let s = stratified_split(&[0, 0, 0], &names(1), &SplitSpec::default()).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (1, 1, 1));
    }

    #[test]
    fn fractions_must_sum_to_one() {
        let spec = SplitSpec {
            test_frac: 0.246,
            ..SplitSpec::default()
        };
        assert!(stratified_split(&[0; 10], &names(1), &spec).is_err());
    }

    #[test]
    fn adam_matches_scalar_reference() {
        // minimize (p - 3)^2 from p = 0
        let (lr, b1, b2, eps) = (0.1, 0.9, 0.999, 1e-8);
        let mut p = [0.0f64];
        let mut m = [0.0];
        let mut v = [0.0];
        let (mut rp, mut rm, mut rv) = (0.0f64, 0.0f64, 0.0f64);
        for t in 1..=100 {
            let g = [2.0 * (p[0] - 3.0)];
            AdamStep::with(lr, b1, b2, eps, t).apply(&mut p, &g, &mut m, &mut v);

            let rg = 2.0 * (rp - 3.0);
            rm = b1 * rm + (1.0 - b1) * rg;
            rv = b2 * rv + (1.0 - b2) * rg * rg;
            let mh = rm / (1.0 - b1.powi(t));
            let vh = rv / (1.0 - b2.powi(t));
            rp -= lr * mh / (vh.sqrt() + eps);
            assert!((p[0] - rp).abs() <= 1e-12);
        }
    }

    #[test]
    fn convergence_epoch_rules() {
        let curve = [1.0, 0.5, 0.4, 0.39999, 0.4, 0.41];
        assert_eq!(convergence_epoch(&curve, 3, 1e-4), (3, true));
        assert_eq!(convergence_epoch(&curve, 10, 1e-4), (3, false));
        assert_eq!(convergence_epoch(&[2.0, 1.0], 1, 1e-4), (2, false));
    }

    #[test]
    fn argmax_ties_pick_lowest_index() {
        let row = ndarray::array![0.25, 0.25, 0.25, 0.25];
        assert_eq!(argmax(row.view()), 0);
        let row = ndarray::array![0.1, 0.45, 0.45];
        assert_eq!(argmax(row.view()), 1);
    }

    #[test]
    fn history_csv_layout() {
        let h = TrainHistory {
            epochs: vec![EpochRecord {
                epoch: 1,
                train_loss: 0.5,
                val_loss: 0.25,
                seconds: 1.5,
            }],
            convergence_epoch: 1,
            plateau_reached: false,
            best_epoch: 1,
            stopped_early: false,
        };
        assert_eq!(h.to_csv(), "epoch,train_loss,val_loss,seconds\n1,0.5,0.25,1.5\n");
    }
}
