use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::mix64;

/// Dense row-major matrix of `f64`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    expected: cols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// A single-column matrix.
    pub fn column(values: Vec<f64>) -> Self {
        Matrix {
            rows: values.len(),
            cols: 1,
            data: values,
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        (0..self.rows).map(move |i| self.row(i))
    }

    /// Rows selected by `indices`, in that order.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }
}

/// Observed sample: covariates `x` (n×p), binary treatment `w` and outcomes
/// `y` (n×d).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    x: Matrix,
    w: Vec<bool>,
    y: Matrix,
}

impl Dataset {
    pub fn new(x: Matrix, w: Vec<bool>, y: Matrix) -> Result<Self> {
        if x.rows() != w.len() {
            return Err(Error::LengthMismatch {
                left: x.rows(),
                right: w.len(),
            });
        }
        if y.rows() != w.len() {
            return Err(Error::LengthMismatch {
                left: y.rows(),
                right: w.len(),
            });
        }
        if x.as_slice().iter().chain(y.as_slice()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig(
                "dataset contains non-finite values".into(),
            ));
        }
        Ok(Dataset { x, w, y })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.w.len()
    }

    #[inline]
    pub fn p(&self) -> usize {
        self.x.cols()
    }

    #[inline]
    pub fn d(&self) -> usize {
        self.y.cols()
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn y(&self) -> &Matrix {
        &self.y
    }

    pub fn w(&self) -> &[bool] {
        &self.w
    }

    #[inline]
    pub fn treated(&self, i: usize) -> bool {
        self.w[i]
    }

    /// Number of treated and control observations.
    pub fn arm_counts(&self) -> (usize, usize) {
        let t = self.w.iter().filter(|&&w| w).count();
        (t, self.n() - t)
    }

    /// Sub-dataset made of the given rows.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(indices),
            w: indices.iter().map(|&i| self.w[i]).collect(),
            y: self.y.select_rows(indices),
        }
    }

    /// Content hash of every row. Row-level random draws are keyed by these
    /// hashes, which makes fitted forests independent of row order.
    pub fn row_keys(&self) -> Vec<u64> {
        (0..self.n())
            .map(|i| {
                let mut h = mix64(self.w[i] as u64);
                for v in self.x.row(i).iter().chain(self.y.row(i)) {
                    h = mix64(h ^ v.to_bits());
                }
                h
            })
            .collect()
    }
}
