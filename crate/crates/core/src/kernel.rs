//! Gaussian kernel on the outcome space, its bandwidth heuristic, and the
//! random Fourier features used by the split criterion.
//!
//! The kernel is `k(u, v) = exp(-‖u - v‖² / (2σ²))`. Its spectral measure is
//! `N(0, σ⁻² I)`, so `k(u, v) = E_ω[cos(ωᵀ(u - v))]` and the features
//! `(cos ωᵀy, sin ωᵀy)` give an unbiased estimate of any kernel inner product.

use rand::Rng;
use rand::seq::index::sample;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Matrix;
use crate::error::{Error, Result};
use crate::rng;

/// Largest number of rows used for exact pairwise-distance enumeration in
/// [`median_heuristic`].
pub const MEDIAN_HEURISTIC_MAX_ROWS: usize = 5000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    bandwidth: f64,
    outcome_dim: usize,
}

impl KernelSpec {
    pub fn new(bandwidth: f64, outcome_dim: usize) -> Result<Self> {
        if !(bandwidth.is_finite() && bandwidth > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "kernel bandwidth must be positive, got {bandwidth}"
            )));
        }
        if outcome_dim == 0 {
            return Err(Error::InvalidConfig("outcome dimension must be >= 1".into()));
        }
        Ok(KernelSpec {
            bandwidth,
            outcome_dim,
        })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn outcome_dim(&self) -> usize {
        self.outcome_dim
    }

    /// `sup_y k(y, y)`; the width constant of the confidence band.
    pub fn sup_bound(&self) -> f64 {
        1.0
    }

    /// Kernel value without the dimension check.
    #[inline]
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let sq: f64 = a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum();
        (-sq / (2.0 * self.bandwidth * self.bandwidth)).exp()
    }

    fn check_dim(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.outcome_dim {
            return Err(Error::DimensionMismatch {
                expected: self.outcome_dim,
                got: v.len(),
            });
        }
        Ok(())
    }
}

pub fn gaussian_kernel(y1: &[f64], y2: &[f64], spec: &KernelSpec) -> Result<f64> {
    spec.check_dim(y1)?;
    spec.check_dim(y2)?;
    Ok(spec.eval(y1, y2))
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(u, v)| (u - v) * (u - v))
        .sum::<f64>()
        .sqrt()
}

fn median_in_place(values: &mut [f64]) -> f64 {
    let m = values.len();
    let (_, upper, _) = values.select_nth_unstable_by(m / 2, f64::total_cmp);
    let upper = *upper;
    if m % 2 == 1 {
        upper
    } else {
        let lower = values[..m / 2]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

/// Median of all pairwise Euclidean distances between the rows of `y`.
///
/// Above [`MEDIAN_HEURISTIC_MAX_ROWS`] rows a uniform subset of that many rows
/// is drawn from a stream derived from `seed`. If more than half of the pairs
/// coincide, the median of the nonzero distances is returned instead.
pub fn median_heuristic(y: &Matrix, seed: u64) -> Result<f64> {
    let n = y.rows();
    if n < 2 {
        return Err(Error::InsufficientData(
            "median heuristic needs at least two outcomes".into(),
        ));
    }
    let rows: Vec<usize> = if n > MEDIAN_HEURISTIC_MAX_ROWS {
        let mut r = rng::stream(seed, &[rng::TAG_BANDWIDTH]);
        let mut idx = sample(&mut r, n, MEDIAN_HEURISTIC_MAX_ROWS).into_vec();
        idx.sort_unstable();
        idx
    } else {
        (0..n).collect()
    };
    let mut dists = Vec::with_capacity(rows.len() * (rows.len() - 1) / 2);
    for (a, &i) in rows.iter().enumerate() {
        for &j in &rows[a + 1..] {
            dists.push(euclidean(y.row(i), y.row(j)));
        }
    }
    let med = median_in_place(&mut dists);
    if med > 0.0 {
        return Ok(med);
    }
    let mut positive: Vec<f64> = dists.into_iter().filter(|&d| d > 0.0).collect();
    if positive.is_empty() {
        return Err(Error::AllPointsIdentical);
    }
    Ok(median_in_place(&mut positive))
}

/// Symmetric Gram matrix `K_ij = k(y_i, y_j)`.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelMatrix {
    n: usize,
    values: Vec<f64>,
    spec: KernelSpec,
}

impl KernelMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    /// `wᵀ K w`.
    pub fn quadratic_form(&self, w: &[f64]) -> Result<f64> {
        if w.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: w.len(),
            });
        }
        let mut total = 0.0;
        for (i, &wi) in w.iter().enumerate() {
            if wi == 0.0 {
                continue;
            }
            let row = self.row(i);
            let inner: f64 = row.iter().zip(w).map(|(k, wj)| k * wj).sum();
            total += wi * inner;
        }
        Ok(total)
    }
}

pub fn kernel_matrix(y: &Matrix, spec: &KernelSpec) -> Result<KernelMatrix> {
    if y.cols() != spec.outcome_dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.outcome_dim(),
            got: y.cols(),
        });
    }
    let n = y.rows();
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        values[i * n + i] = 1.0;
        for j in i + 1..n {
            let k = spec.eval(y.row(i), y.row(j));
            values[i * n + j] = k;
            values[j * n + i] = k;
        }
    }
    Ok(KernelMatrix {
        n,
        values,
        spec: *spec,
    })
}

/// Frequencies `ω_s ~ N(0, σ⁻² I_d)` defining a random Fourier feature map.
#[derive(Clone, Debug, PartialEq)]
pub struct FourierFeatures {
    frequencies: Matrix,
}

impl FourierFeatures {
    pub fn sample<R: Rng + ?Sized>(spec: &KernelSpec, count: usize, rng: &mut R) -> Self {
        let d = spec.outcome_dim();
        let scale = 1.0 / spec.bandwidth();
        let data = (0..count * d)
            .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
            .collect();
        FourierFeatures {
            frequencies: Matrix::new(count, d, data).expect("shape is consistent"),
        }
    }

    pub fn from_frequencies(frequencies: Matrix) -> Self {
        FourierFeatures { frequencies }
    }

    pub fn frequencies(&self) -> &Matrix {
        &self.frequencies
    }

    pub fn count(&self) -> usize {
        self.frequencies.rows()
    }

    pub fn dim(&self) -> usize {
        self.frequencies.cols()
    }

    /// Writes `(cos ω_sᵀy, sin ω_sᵀy)` pairs into `out` (length `2S`).
    #[inline]
    pub fn embed_into(&self, y: &[f64], out: &mut [f64]) {
        for (s, pair) in out.chunks_exact_mut(2).enumerate() {
            let phase: f64 = self.frequencies.row(s).iter().zip(y).map(|(w, v)| w * v).sum();
            let (sin, cos) = phase.sin_cos();
            pair[0] = cos;
            pair[1] = sin;
        }
    }

    /// `(1/S) Σ_s Re[φ_s(u) conj(φ_s(v))]`.
    pub fn approx_kernel(&self, u: &[f64], v: &[f64]) -> Result<f64> {
        let a = fourier_embed(u, self)?;
        let b = fourier_embed(v, self)?;
        let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        Ok(dot / self.count() as f64)
    }
}

pub fn sample_fourier_features(spec: &KernelSpec, count: usize, seed: u64) -> Result<FourierFeatures> {
    if count == 0 {
        return Err(Error::InvalidConfig("need at least one Fourier feature".into()));
    }
    let mut r = rng::stream(seed, &[]);
    Ok(FourierFeatures::sample(spec, count, &mut r))
}

/// Complex feature vector `e^{i ω_sᵀ y}` stored as interleaved `(cos, sin)`.
pub fn fourier_embed(y: &[f64], ff: &FourierFeatures) -> Result<Vec<f64>> {
    if y.len() != ff.dim() {
        return Err(Error::DimensionMismatch {
            expected: ff.dim(),
            got: y.len(),
        });
    }
    let mut out = vec![0.0; 2 * ff.count()];
    ff.embed_into(y, &mut out);
    Ok(out)
}
