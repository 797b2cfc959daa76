//! Witness function, H0 test and simultaneous confidence band.
//!
//! With `K = (k(Y_i, Y_j))`, the squared RKHS norm of the estimate is
//! `ŵᵀKŵ` and the `b`-th resampled deviation is
//! `(ŵ^{S_b} − ŵ)ᵀ K (ŵ^{S_b} − ŵ)`. The test rejects when the former
//! exceeds the `1 − α` empirical quantile `q` of the latter, and the band is
//! `τ̂(x)(y) ± sqrt(q · C)` with `C = sup_y k(y, y)`.
//!
//! All weight vectors vanish outside the rows that populate some leaf of `x`,
//! so the quadratic forms are evaluated on that support only.

use serde::{Deserialize, Serialize};

use crate::data::Matrix;
use crate::error::{Error, Result};
use crate::estimator::{WeightBundle, WeightModel};
use crate::kernel::{kernel_matrix, KernelMatrix, KernelSpec};

/// Default number of grid points for one-dimensional outcomes.
pub const DEFAULT_GRID_SIZE: usize = 201;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    /// `‖τ̂(x)‖²_H = ŵᵀKŵ`.
    pub statistic: f64,
    /// The `1 − α` quantile `q` of the resampled deviations.
    pub quantile: f64,
    pub resample_values: Vec<f64>,
    pub alpha: f64,
    pub reject: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WitnessBand {
    pub grid: Matrix,
    pub estimate: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub half_width: f64,
    pub test: TestResult,
}

impl WitnessBand {
    /// Whether `values` lie inside the band at every grid point.
    pub fn covers(&self, values: &[f64]) -> bool {
        values.len() == self.estimate.len()
            && values
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| lo <= v && v <= hi)
    }
}

fn check_grid(grid: &Matrix, spec: &KernelSpec) -> Result<()> {
    if grid.cols() != spec.outcome_dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.outcome_dim(),
            got: grid.cols(),
        });
    }
    Ok(())
}

/// `Σ_i w_i k(Y_i, y)` at every grid point.
pub fn witness_from_weights(w: &[f64], y_train: &Matrix, spec: &KernelSpec, grid: &Matrix) -> Result<Vec<f64>> {
    check_grid(grid, spec)?;
    if w.len() != y_train.rows() {
        return Err(Error::LengthMismatch {
            left: w.len(),
            right: y_train.rows(),
        });
    }
    let support: Vec<(usize, f64)> = w
        .iter()
        .enumerate()
        .filter(|(_, &v)| v != 0.0)
        .map(|(i, &v)| (i, v))
        .collect();
    Ok(grid
        .iter_rows()
        .map(|y| support.iter().map(|&(i, v)| v * spec.eval(y_train.row(i), y)).sum())
        .collect())
}

/// Estimated witness `τ̂(x)(y) = ŵᵀk(y)` at every grid point.
pub fn witness_eval(bundle: &WeightBundle, y_train: &Matrix, spec: &KernelSpec, grid: &Matrix) -> Result<Vec<f64>> {
    witness_from_weights(&bundle.aggregate, y_train, spec, grid)
}

/// `wᵀKw`, clamped at zero.
pub fn test_statistic(w: &[f64], k: &KernelMatrix) -> Result<f64> {
    Ok(k.quadratic_form(w)?.max(0.0))
}

/// `(ŵ^{S_b} − ŵ)ᵀ K (ŵ^{S_b} − ŵ)` for every group `b`.
pub fn resample_stats(bundle: &WeightBundle, k: &KernelMatrix) -> Result<Vec<f64>> {
    bundle
        .groups
        .iter()
        .map(|g| {
            let diff: Vec<f64> = g.iter().zip(&bundle.aggregate).map(|(a, b)| a - b).collect();
            test_statistic(&diff, k)
        })
        .collect()
}

/// The `ceil((1 − α) B)`-th smallest of `B` values.
pub fn empirical_quantile(values: &[f64], alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if values.is_empty() {
        return Err(Error::InsufficientData("no resampled values".into()));
    }
    let b = values.len();
    // The small offset keeps e.g. (1 - 0.05) * 20 = 19.000000000000004 at 19.
    let rank = (((1.0 - alpha) * b as f64 - 1e-9).ceil() as usize).clamp(1, b);
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    Ok(sorted[rank - 1])
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidConfig(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

/// Runs the test on precomputed weights. The kernel matrix is restricted to
/// the bundle's support.
pub fn test_from_bundle(bundle: &WeightBundle, y_train: &Matrix, spec: &KernelSpec, alpha: f64) -> Result<TestResult> {
    check_alpha(alpha)?;
    let support = bundle.support();
    let k = kernel_matrix(&y_train.select_rows(&support), spec)?;
    let restrict = |w: &[f64]| support.iter().map(|&i| w[i]).collect::<Vec<_>>();
    let reduced = WeightBundle {
        aggregate: restrict(&bundle.aggregate),
        groups: bundle.groups.iter().map(|g| restrict(g)).collect(),
        query: bundle.query.clone(),
    };
    let statistic = test_statistic(&reduced.aggregate, &k)?;
    let resample_values = resample_stats(&reduced, &k)?;
    let quantile = empirical_quantile(&resample_values, alpha)?;
    Ok(TestResult {
        statistic,
        quantile,
        resample_values,
        alpha,
        reject: statistic > quantile,
    })
}

/// Test of `H0: P⁰(Y | X = x) = P¹(Y | X = x)` at level `alpha`.
pub fn h0_test<M: WeightModel + ?Sized>(model: &M, x: &[f64], alpha: f64) -> Result<TestResult> {
    let bundle = model.weights_at(x)?;
    test_from_bundle(&bundle, model.dataset().y(), model.kernel(), alpha)
}

/// Band from precomputed weights.
pub fn band_from_bundle(
    bundle: &WeightBundle,
    y_train: &Matrix,
    spec: &KernelSpec,
    grid: &Matrix,
    alpha: f64,
) -> Result<WitnessBand> {
    let estimate = witness_eval(bundle, y_train, spec, grid)?;
    let test = test_from_bundle(bundle, y_train, spec, alpha)?;
    let half_width = (test.quantile * spec.sup_bound()).sqrt();
    Ok(WitnessBand {
        grid: grid.clone(),
        lower: estimate.iter().map(|e| e - half_width).collect(),
        upper: estimate.iter().map(|e| e + half_width).collect(),
        estimate,
        half_width,
        test,
    })
}

/// Simultaneous `1 − alpha` band for the witness function at `x`.
pub fn confidence_band<M: WeightModel + ?Sized>(model: &M, x: &[f64], grid: &Matrix, alpha: f64) -> Result<WitnessBand> {
    let bundle = model.weights_at(x)?;
    band_from_bundle(&bundle, model.dataset().y(), model.kernel(), grid, alpha)
}

/// `size` equally spaced points spanning `[lo, hi]`.
pub fn linear_grid(lo: f64, hi: f64, size: usize) -> Matrix {
    let step = if size > 1 { (hi - lo) / (size - 1) as f64 } else { 0.0 };
    Matrix::column(
        (0..size)
            .map(|i| if i + 1 == size && size > 1 { hi } else { lo + step * i as f64 })
            .collect(),
    )
}

/// Equally spaced grid over the range of one-dimensional outcomes `y`.
pub fn default_grid(y: &Matrix, size: usize) -> Result<Matrix> {
    if y.cols() != 1 {
        return Err(Error::InvalidConfig(
            "a default grid exists only for one-dimensional outcomes; supply a grid".into(),
        ));
    }
    if size == 0 || y.rows() == 0 {
        return Err(Error::InvalidConfig("empty grid".into()));
    }
    let (lo, hi) = y
        .as_slice()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    Ok(linear_grid(lo, hi, size))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_order_statistics() {
        let v: Vec<f64> = (1..=20).map(|i| i as f64).collect();
        assert_eq!(empirical_quantile(&v, 0.05).unwrap(), 19.0);
        assert_eq!(empirical_quantile(&v, 0.01).unwrap(), 20.0);
        assert_eq!(empirical_quantile(&v, 1.0 - 1.0 / 20.0).unwrap(), 1.0);
        assert_eq!(empirical_quantile(&v, 0.5).unwrap(), 10.0);
        assert!(empirical_quantile(&v, 0.0).is_err());
        assert!(empirical_quantile(&v, 1.0).is_err());
    }

    #[test]
    fn zero_weights_give_zero_witness() {
        let y = Matrix::column(vec![0.0, 1.0, 2.0]);
        let spec = KernelSpec::new(1.0, 1).unwrap();
        let grid = linear_grid(-1.0, 3.0, 9);
        let v = witness_from_weights(&[0.0; 3], &y, &spec, &grid).unwrap();
        assert!(v.iter().all(|&x| x == 0.0));
        let y = Matrix::column(vec![0.5, 0.5]);
        let v = witness_from_weights(&[1.0, -1.0], &y, &spec, &grid).unwrap();
        assert!(v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn single_group_has_zero_quantile() {
        let y = Matrix::column(vec![0.0, 1.0, 2.0, 3.0]);
        let spec = KernelSpec::new(1.0, 1).unwrap();
        let w = vec![0.5, 0.5, -0.5, -0.5];
        let bundle = WeightBundle {
            aggregate: w.clone(),
            groups: vec![w],
            query: vec![],
        };
        let grid = linear_grid(0.0, 3.0, 5);
        let band = band_from_bundle(&bundle, &y, &spec, &grid, 0.05).unwrap();
        assert_eq!(band.test.resample_values, vec![0.0]);
        assert_eq!(band.half_width, 0.0);
        assert_eq!(band.lower, band.estimate);
        assert!(band.test.reject);
    }

    #[test]
    fn grid_shapes() {
        let g = linear_grid(-1.0, 1.0, 201);
        assert_eq!(g.rows(), 201);
        assert_eq!(g.get(0, 0), -1.0);
        assert_eq!(g.get(100, 0), 0.0);
        assert_eq!(g.get(200, 0), 1.0);
        let y = Matrix::new(2, 2, vec![0.0; 4]).unwrap();
        assert!(default_grid(&y, 10).is_err());
    }

    #[test]
    fn dimension_checks() {
        let y = Matrix::column(vec![0.0, 1.0]);
        let spec = KernelSpec::new(1.0, 1).unwrap();
        let grid = Matrix::new(1, 2, vec![0.0, 0.0]).unwrap();
        assert!(matches!(
            witness_from_weights(&[1.0, -1.0], &y, &spec, &grid),
            Err(Error::DimensionMismatch { .. })
        ));
        let k = kernel_matrix(&y, &spec).unwrap();
        assert!(test_statistic(&[1.0], &k).is_err());
        assert_eq!(test_statistic(&[0.0, 0.0], &k).unwrap(), 0.0);
        assert_eq!(test_statistic(&[1.0, 0.0], &k).unwrap(), 1.0);
    }
}
