//! Independent reference implementations used to check the library:
//! a naive DFT, a Jacobi eigensolver, and central finite differences.
#![allow(dead_code)]

use std::f64::consts::PI;

use ndarray::{Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use t4pdm::model::ModelParams;

/// O(N^2) DFT, `(re, im)` per bin.
pub fn naive_dft(x: &[f64]) -> Vec<(f64, f64)> {
    let n = x.len();
    (0..n)
        .map(|k| {
            let mut re = 0.0;
            let mut im = 0.0;
            for (t, &v) in x.iter().enumerate() {
                let angle = -2.0 * PI * ((k * t) % n) as f64 / n as f64;
                re += v * angle.cos();
                im += v * angle.sin();
            }
            (re, im)
        })
        .collect()
}

pub fn naive_magnitude(x: &[f64]) -> Vec<f64> {
    naive_dft(x)[1..=x.len() / 2]
        .iter()
        .map(|(re, im)| re.hypot(*im))
        .collect()
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns
/// eigenvalues in descending order and eigenvectors as matching columns.
pub fn jacobi_eigen(a: &Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let n = a.nrows();
    let mut a = a.clone();
    let mut v = Array2::<f64>::eye(n);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[[i, j]] * a[[i, j]])
            .sum();
        let scale: f64 = a.iter().map(|x| x * x).sum();
        if off <= 1e-30 * scale.max(1e-300) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[[p, q]];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[[k, p]];
                    let akq = a[[k, q]];
                    a[[k, p]] = c * akp - s * akq;
                    a[[k, q]] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[[p, k]];
                    let aqk = a[[q, k]];
                    a[[p, k]] = c * apk - s * aqk;
                    a[[q, k]] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[[j, j]].partial_cmp(&a[[i, i]]).unwrap());
    let values = order.iter().map(|&i| a[[i, i]]).collect();
    let mut vectors = Array2::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        vectors.column_mut(dst).assign(&v.column(src));
    }
    (values, vectors)
}

/// Sample covariance (divide by n - 1).
pub fn covariance(x: &Array2<f64>) -> Array2<f64> {
    let n = x.nrows();
    let mean = x.mean_axis(ndarray::Axis(0)).unwrap();
    let c = x - &mean;
    c.t().dot(&c) / (n - 1) as f64
}

/// Largest principal angle (radians) between the row spaces of two
/// matrices with orthonormal rows, via `|| A - A B^T B ||_F >= sin(theta)`.
pub fn max_principal_angle(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let residual = a - &a.dot(&b.t()).dot(b);
    let frob = residual.iter().map(|v| v * v).sum::<f64>().sqrt();
    frob.min(1.0).asin()
}

/// Per-tensor relative error between analytic and central-difference
/// gradients of the mean cross-entropy, `||g_a - g_n|| / max(||g_a||, ||g_n||)`.
/// Dropout masks are pinned by reseeding the RNG for every evaluation.
pub fn gradient_check(
    model: &ModelParams,
    batch: &Array3<f64>,
    labels: &[usize],
    step: f64,
    rng_seed: u64,
) -> Vec<(String, f64)> {
    let loss_at = |m: &ModelParams| {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        m.loss_and_grad(batch, labels, true, &mut rng).unwrap().0
    };
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let (_, analytic) = model.loss_and_grad(batch, labels, true, &mut rng).unwrap();
    let analytic: Vec<(String, Vec<f64>)> = analytic
        .tensors()
        .into_iter()
        .map(|t| (t.name, t.data.to_vec()))
        .collect();

    let mut probe = model.clone();
    let n_tensors = analytic.len();
    let mut out = Vec::with_capacity(n_tensors);
    for (ti, (name, grad)) in analytic.iter().enumerate() {
        let mut numeric = vec![0.0; grad.len()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let orig = probe.weights.tensors_mut()[ti][j];
            probe.weights.tensors_mut()[ti][j] = orig + step;
            let up = loss_at(&probe);
            probe.weights.tensors_mut()[ti][j] = orig - step;
            let down = loss_at(&probe);
            probe.weights.tensors_mut()[ti][j] = orig;
            *slot = (up - down) / (2.0 * step);
        }
        let diff = norm(grad.iter().zip(&numeric).map(|(a, b)| a - b));
        let scale = norm(grad.iter().copied()).max(norm(numeric.iter().copied()));
        let rel = if scale == 0.0 { diff } else { diff / scale };
        out.push((name.clone(), rel));
    }
    out
}

fn norm(it: impl Iterator<Item = f64>) -> f64 {
    it.map(|v| v * v).sum::<f64>().sqrt()
}
