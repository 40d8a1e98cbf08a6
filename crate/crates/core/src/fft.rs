//! Forward discrete Fourier transform for arbitrary lengths.
//!
//! Lengths whose prime factors are all small use a recursive mixed-radix
//! decimation-in-time transform. Lengths with a prime factor above
//! [`MAX_DIRECT_RADIX`] fall back to Bluestein's chirp-z algorithm on top of a
//! power-of-two transform.

use std::f64::consts::PI;

use num_complex::Complex64;

/// Largest prime radix handled by the direct O(p^2) butterfly.
pub const MAX_DIRECT_RADIX: usize = 61;

#[derive(Debug, Clone)]
enum Algorithm {
    MixedRadix { factors: Vec<usize> },
    Bluestein(Box<Bluestein>),
}

/// Precomputed transform of a fixed length. Plans are immutable and can be
/// shared across threads.
#[derive(Debug, Clone)]
pub struct FftPlan {
    len: usize,
    // roots[j] = exp(-2 pi i j / len)
    roots: Vec<Complex64>,
    algorithm: Algorithm,
}

impl FftPlan {
    pub fn new(len: usize) -> Self {
        assert!(len > 0, "fft length must be positive");
        let roots = unit_roots(len);
        let factors = factorize(len);
        let algorithm = if factors.iter().any(|&p| p > MAX_DIRECT_RADIX) {
            Algorithm::Bluestein(Box::new(Bluestein::new(len)))
        } else {
            Algorithm::MixedRadix {
                factors: radix_order(factors),
            }
        };
        Self {
            len,
            roots,
            algorithm,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Out-of-place forward transform: `X_k = sum_t x_t exp(-2 pi i k t / N)`.
    pub fn forward(&self, input: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(input.len(), self.len, "input length does not match plan");
        match &self.algorithm {
            Algorithm::MixedRadix { factors } => {
                let mut out = vec![Complex64::new(0.0, 0.0); self.len];
                let mut scratch = Vec::new();
                self.mixed_radix(input, 0, 1, self.len, &mut out, factors, &mut scratch);
                out
            }
            Algorithm::Bluestein(b) => b.forward(input),
        }
    }

    pub fn forward_real(&self, input: &[f64]) -> Vec<Complex64> {
        let buf: Vec<Complex64> = input.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.forward(&buf)
    }

    #[allow(clippy::too_many_arguments)]
    fn mixed_radix(
        &self,
        input: &[Complex64],
        offset: usize,
        stride: usize,
        n: usize,
        out: &mut [Complex64],
        factors: &[usize],
        scratch: &mut Vec<Complex64>,
    ) {
        if n == 1 {
            out[0] = input[offset];
            return;
        }
        let p = factors[0];
        let m = n / p;
        for q in 0..p {
            self.mixed_radix(
                input,
                offset + q * stride,
                stride * p,
                m,
                &mut out[q * m..(q + 1) * m],
                &factors[1..],
                scratch,
            );
        }

        // roots of the sub-problem: w_n^j = w_N^(j * N / n)
        let root_step = self.len / n;
        let butterfly_step = self.len / p;
        scratch.clear();
        scratch.resize(p, Complex64::new(0.0, 0.0));
        for k in 0..m {
            for (q, slot) in scratch.iter_mut().enumerate() {
                let w = self.roots[(q * k * root_step) % self.len];
                *slot = out[q * m + k] * w;
            }
            match p {
                2 => {
                    let (a, b) = (scratch[0], scratch[1]);
                    out[k] = a + b;
                    out[k + m] = a - b;
                }
                4 => {
                    let (a, b, c, d) = (scratch[0], scratch[1], scratch[2], scratch[3]);
                    let s0 = a + c;
                    let s1 = a - c;
                    let s2 = b + d;
                    // -i * (b - d)
                    let bd = b - d;
                    let s3 = Complex64::new(bd.im, -bd.re);
                    out[k] = s0 + s2;
                    out[k + m] = s1 + s3;
                    out[k + 2 * m] = s0 - s2;
                    out[k + 3 * m] = s1 - s3;
                }
                _ => {
                    for r in 0..p {
                        let mut acc = Complex64::new(0.0, 0.0);
                        for (q, &v) in scratch.iter().enumerate() {
                            acc += v * self.roots[((q * r) % p) * butterfly_step];
                        }
                        out[k + r * m] = acc;
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
struct Bluestein {
    len: usize,
    inner: FftPlan,
    // chirp[t] = exp(-i pi t^2 / N)
    chirp: Vec<Complex64>,
    // forward transform of the conjugate chirp, zero-padded and wrapped
    kernel_spectrum: Vec<Complex64>,
}

impl Bluestein {
    fn new(len: usize) -> Self {
        let inner_len = (2 * len - 1).next_power_of_two();
        let inner = FftPlan::new(inner_len);
        let modulus = 2 * len as u128;
        let chirp: Vec<Complex64> = (0..len)
            .map(|t| {
                let t = t as u128;
                // reduce t^2 mod 2N so the angle stays small and exact
                let r = (t * t) % modulus;
                let angle = -PI * r as f64 / len as f64;
                Complex64::new(angle.cos(), angle.sin())
            })
            .collect();
        let mut kernel = vec![Complex64::new(0.0, 0.0); inner_len];
        kernel[0] = chirp[0].conj();
        for t in 1..len {
            kernel[t] = chirp[t].conj();
            kernel[inner_len - t] = chirp[t].conj();
        }
        let kernel_spectrum = inner.forward(&kernel);
        Self {
            len,
            inner,
            chirp,
            kernel_spectrum,
        }
    }

    fn forward(&self, input: &[Complex64]) -> Vec<Complex64> {
        let m = self.inner.len();
        let mut a = vec![Complex64::new(0.0, 0.0); m];
        for t in 0..self.len {
            a[t] = input[t] * self.chirp[t];
        }
        let mut spec = self.inner.forward(&a);
        for (s, k) in spec.iter_mut().zip(&self.kernel_spectrum) {
            *s *= k;
        }
        // inverse via conjugation: ifft(x) = conj(fft(conj(x))) / m
        for s in spec.iter_mut() {
            *s = s.conj();
        }
        let conv = self.inner.forward(&spec);
        let scale = 1.0 / m as f64;
        (0..self.len)
            .map(|k| conv[k].conj() * scale * self.chirp[k])
            .collect()
    }
}

fn unit_roots(n: usize) -> Vec<Complex64> {
    (0..n)
        .map(|j| {
            let angle = -2.0 * PI * j as f64 / n as f64;
            Complex64::new(angle.cos(), angle.sin())
        })
        .collect()
}

/// Prime factorization in non-decreasing order.
pub fn factorize(mut n: usize) -> Vec<usize> {
    let mut factors = Vec::new();
    let mut p = 2;
    while p * p <= n {
        while n % p == 0 {
            factors.push(p);
            n /= p;
        }
        p += 1;
    }
    if n > 1 {
        factors.push(n);
    }
    factors
}

/// Merge pairs of 2s into radix-4 passes.
fn radix_order(primes: Vec<usize>) -> Vec<usize> {
    let twos = primes.iter().filter(|&&p| p == 2).count();
    let mut out = vec![4; twos / 2];
    if twos % 2 == 1 {
        out.push(2);
    }
    out.extend(primes.into_iter().filter(|&p| p != 2));
    out
}
