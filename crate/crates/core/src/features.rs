//! Variance-threshold feature selection and PCA, fitted once and applied as
//! a fixed transform.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Variance threshold used by the feature-selection experiment.
pub const DEFAULT_VARIANCE_THRESHOLD: f64 = 3.68e-5;
/// Number of principal components kept from the 7,500 spectral bins.
pub const DEFAULT_PCA_COMPONENTS: usize = 4500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceMask {
    pub keep: Vec<bool>,
    pub threshold: f64,
    pub variances: Vec<f64>,
}

impl VarianceMask {
    pub fn input_dim(&self) -> usize {
        self.keep.len()
    }

    pub fn kept(&self) -> usize {
        self.keep.iter().filter(|&&k| k).count()
    }

    pub fn kept_indices(&self) -> Vec<usize> {
        self.keep
            .iter()
            .enumerate()
            .filter_map(|(i, &k)| k.then_some(i))
            .collect()
    }

    pub fn apply(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        check_width("variance mask", self.input_dim(), x.ncols())?;
        Ok(x.select(Axis(1), &self.kept_indices()))
    }
}

/// Population variance per column; keeps columns with variance >= threshold.
pub fn fit_variance_mask(x: &Array2<f64>, threshold: f64) -> Result<VarianceMask> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::InsufficientRows(n));
    }
    if !(threshold >= 0.0) || !threshold.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "variance threshold must be finite and non-negative, got {threshold}"
        )));
    }
    ensure_finite(x, "variance mask input")?;
    let variances: Vec<f64> = x
        .columns()
        .into_iter()
        .map(|col| {
            let mean = col.sum() / n as f64;
            col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64
        })
        .collect();
    let keep: Vec<bool> = variances.iter().map(|&v| v >= threshold).collect();
    if !keep.iter().any(|&k| k) {
        return Err(Error::DegenerateMask {
            threshold,
            n_features: keep.len(),
        });
    }
    Ok(VarianceMask {
        keep,
        threshold,
        variances,
    })
}

/// Principal axes of a training matrix. `components` rows are orthonormal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Array1<f64>,
    pub components: Array2<f64>,
    pub explained_variance: Array1<f64>,
}

impl PcaModel {
    pub fn k(&self) -> usize {
        self.components.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    /// Centered projection `(x - mean) C^T`.
    pub fn project(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        check_width("pca", self.input_dim(), x.ncols())?;
        let centered = x - &self.mean;
        Ok(centered.dot(&self.components.t()))
    }

    pub fn reconstruct(&self, projected: &Array2<f64>) -> Array2<f64> {
        projected.dot(&self.components) + &self.mean
    }
}

/// PCA by thin SVD of the centered matrix.
pub fn fit_pca(x: &Array2<f64>, k: usize) -> Result<PcaModel> {
    let (n, f) = x.dim();
    if n < 2 {
        return Err(Error::InsufficientRows(n));
    }
    if k == 0 || k > n.min(f) {
        return Err(Error::RankTooSmall {
            k,
            n_rows: n,
            n_features: f,
        });
    }
    ensure_finite(x, "pca input")?;
    let mean = x.mean_axis(Axis(0)).expect("n >= 2");
    let centered = x - &mean;

    let m = DMatrix::from_fn(n, f, |i, j| centered[[i, j]]);
    let svd = m.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::InvalidArgument("svd did not produce right singular vectors".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .expect("finite singular values")
            .then(a.cmp(&b))
    });

    let mut components = Array2::zeros((k, f));
    let mut explained = Array1::zeros(k);
    for (row, &idx) in order.iter().take(k).enumerate() {
        let sigma = svd.singular_values[idx];
        explained[row] = sigma * sigma / (n - 1) as f64;
        let mut comp: Vec<f64> = v_t.row(idx).iter().copied().collect();
        // sign rule: the largest-magnitude entry is positive
        let pivot = comp
            .iter()
            .copied()
            .fold(0.0f64, |best, v| if v.abs() > best.abs() { v } else { best });
        if pivot < 0.0 {
            comp.iter_mut().for_each(|v| *v = -*v);
        }
        for (j, v) in comp.into_iter().enumerate() {
            components[[row, j]] = v;
        }
    }
    Ok(PcaModel {
        mean,
        components,
        explained_variance: explained,
    })
}

/// Which reductions a pipeline applies. The mask always runs before PCA.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineSpec {
    pub variance_threshold: Option<f64>,
    pub pca_components: Option<usize>,
}

impl PipelineSpec {
    pub const IDENTITY: Self = Self {
        variance_threshold: None,
        pca_components: None,
    };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturePipelineState {
    pub mask: Option<VarianceMask>,
    pub pca: Option<PcaModel>,
    pub input_dim: usize,
    pub output_dim: usize,
}

impl FeaturePipelineState {
    pub fn identity(input_dim: usize) -> Self {
        Self {
            mask: None,
            pca: None,
            input_dim,
            output_dim: input_dim,
        }
    }

    /// Fit on training rows only; the returned state never refits.
    pub fn fit(x: &Array2<f64>, spec: &PipelineSpec) -> Result<Self> {
        let input_dim = x.ncols();
        let mask = spec
            .variance_threshold
            .map(|t| fit_variance_mask(x, t))
            .transpose()?;
        let pca = match spec.pca_components {
            Some(k) => {
                let masked;
                let source = match &mask {
                    Some(m) => {
                        masked = m.apply(x)?;
                        &masked
                    }
                    None => x,
                };
                Some(fit_pca(source, k)?)
            }
            None => None,
        };
        let output_dim = match (&mask, &pca) {
            (_, Some(p)) => p.k(),
            (Some(m), None) => m.kept(),
            (None, None) => input_dim,
        };
        Ok(Self {
            mask,
            pca,
            input_dim,
            output_dim,
        })
    }

    pub fn transform(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        check_width("feature pipeline", self.input_dim, x.ncols())?;
        let masked = match &self.mask {
            Some(m) => m.apply(x)?,
            None => x.clone(),
        };
        match &self.pca {
            Some(p) => p.project(&masked),
            None => Ok(masked),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut width = self.input_dim;
        if let Some(m) = &self.mask {
            check_width("mask input", self.input_dim, m.input_dim())?;
            width = m.kept();
        }
        if let Some(p) = &self.pca {
            check_width("pca input", width, p.input_dim())?;
            if p.components.ncols() != p.input_dim() || p.explained_variance.len() != p.k() {
                return Err(Error::Shape("inconsistent pca shapes".into()));
            }
            width = p.k();
        }
        check_width("pipeline output", self.output_dim, width)
    }
}

fn check_width(context: &str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimMismatch {
            context: context.to_string(),
            expected,
            actual,
        });
    }
    Ok(())
}

fn ensure_finite(x: &Array2<f64>, what: &str) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, f: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, f), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn constant_column_removed() {
        let x = array![[1.0, 0.0], [1.0, 1.0], [1.0, 2.0]];
        let m = fit_variance_mask(&x, DEFAULT_VARIANCE_THRESHOLD).unwrap();
        assert_eq!(m.keep, vec![false, true]);
    }

    #[test]
    fn variance_at_threshold_is_kept() {
        // population variance of [0, 2a] is a^2
        let a = 0.25f64;
        let x = array![[0.0], [2.0 * a]];
        let t = a * a;
        let m = fit_variance_mask(&x, t).unwrap();
        assert_eq!(m.variances[0], t);
        assert!(m.keep[0]);
    }

    #[test]
    fn mask_errors() {
        assert!(matches!(
            fit_variance_mask(&array![[1.0, 2.0]], 0.0),
            Err(Error::InsufficientRows(1))
        ));
        assert!(matches!(
            fit_variance_mask(&array![[1.0], [1.0]], 1e-3),
            Err(Error::DegenerateMask { .. })
        ));
    }

    #[test]
    fn mask_matches_two_pass_oracle_at_median() {
        let x = random(100, 20, 7);
        let mut oracle: Vec<f64> = (0..20)
            .map(|j| {
                let col: Vec<f64> = (0..100).map(|i| x[[i, j]]).collect();
                let mean = col.iter().sum::<f64>() / 100.0;
                col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 100.0
            })
            .collect();
        let per_column = oracle.clone();
        oracle.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = oracle[10];
        let m = fit_variance_mask(&x, median).unwrap();
        let expected = per_column.iter().filter(|&&v| v >= median).count();
        assert_eq!(m.kept(), expected);
        assert_eq!(m.kept(), 10);
    }

    #[test]
    fn mask_is_idempotent_on_masked_width() {
        let x = random(30, 6, 1);
        let m = fit_variance_mask(&x, 0.0).unwrap();
        assert_eq!(m.apply(&x).unwrap(), x);
    }

    #[test]
    fn axis_aligned_pca() {
        // variances 4 along axis 0, 1 along axis 1 (sample variance, n - 1)
        let x = array![[2.0 * 1.5f64.sqrt(), 0.0], [-2.0 * 1.5f64.sqrt(), 0.0], [0.0, 1.5f64.sqrt()], [0.0, -(1.5f64.sqrt())]];
        let p = fit_pca(&x, 2).unwrap();
        assert!((p.explained_variance[0] - 4.0).abs() < 1e-12);
        assert!((p.explained_variance[1] - 1.0).abs() < 1e-12);
        assert!((p.components[[0, 0]] - 1.0).abs() < 1e-12);
        assert!((p.components[[1, 1]] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn full_rank_reconstruction() {
        for (n, f) in [(12, 5), (5, 12), (8, 8)] {
            let x = random(n, f, (n * f) as u64);
            let k = n.min(f);
            let p = fit_pca(&x, k).unwrap();
            let back = p.reconstruct(&p.project(&x).unwrap());
            let err = (&back - &x).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            // n <= f loses one direction to centering; still exact reconstruction
            assert!(err <= 1e-8, "{n}x{f}: {err}");
        }
    }

    #[test]
    fn pca_errors() {
        let x = random(4, 3, 2);
        assert!(matches!(fit_pca(&x, 4), Err(Error::RankTooSmall { .. })));
        let mut bad = x.clone();
        bad[[0, 0]] = f64::INFINITY;
        assert!(matches!(fit_pca(&bad, 2), Err(Error::NonFinite(_))));
    }

    #[test]
    fn pipeline_widths_and_identity() {
        let x = random(40, 10, 3);
        let id = FeaturePipelineState::fit(&x, &PipelineSpec::IDENTITY).unwrap();
        assert_eq!(id.transform(&x).unwrap(), x);
        let spec = PipelineSpec {
            variance_threshold: Some(0.0),
            pca_components: Some(4),
        };
        let st = FeaturePipelineState::fit(&x, &spec).unwrap();
        assert_eq!(st.output_dim, 4);
        st.validate().unwrap();
        let err = st.transform(&random(2, 9, 1)).unwrap_err();
        assert!(err.to_string().contains("expected 10, got 9"));
    }

    #[test]
    fn transform_is_repeatable_and_centered() {
        let x = random(60, 8, 4);
        let st = FeaturePipelineState::fit(
            &x,
            &PipelineSpec {
                variance_threshold: None,
                pca_components: Some(5),
            },
        )
        .unwrap();
        let a = st.transform(&x).unwrap();
        let b = st.transform(&x).unwrap();
        assert_eq!(a, b);
        let pca = st.pca.as_ref().unwrap();
        for (j, col) in a.columns().into_iter().enumerate() {
            let mean = col.sum() / 60.0;
            assert!(mean.abs() <= 1e-8);
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 59.0;
            let ev = pca.explained_variance[j];
            assert!(((var - ev) / ev).abs() <= 1e-6);
        }
        let gram = pca.components.dot(&pca.components.t());
        for i in 0..5 {
            for j in 0..5 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((gram[[i, j]] - want).abs() <= 1e-8);
            }
        }
    }
}
