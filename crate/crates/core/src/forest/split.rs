//! The weighted-MMD split search.
//!
//! For a candidate partition of a node into `L` and `R`, each observation gets
//! a side weight `ν_i = W_i / n_side(W=1) − (1 − W_i) / n_side(W=0)`, so that
//! `Σ_{i∈side} ν_i k(Y_i, ·)` is the side's treated-minus-control embedding.
//! The score is
//!
//! ```text
//! |L||R| / (|L| + |R|)² · (1/S) Σ_s | Σ_{i∈L} ν_i φ_s(Y_i) − Σ_{i∈R} ν_i φ_s(Y_i) |²
//! ```
//!
//! with `φ_s(y) = e^{i ω_sᵀ y}`. In plain mode `ν_i = 1 / |side|`.
//!
//! The scan sorts the node along each candidate feature once and sweeps the
//! thresholds with running per-arm feature sums, so a feature costs
//! `O(m log m + m S)` for a node of `m` observations.

use std::cmp::Ordering;

use rand::Rng;
use rand::seq::index::sample;

use super::config::{ForestConfig, SplitMode};
use crate::data::{Dataset, Matrix};
use crate::error::{Error, Result};
use crate::kernel::FourierFeatures;

/// Per-observation Fourier features, `2S` reals per row.
#[derive(Clone, Debug)]
pub struct Embedding {
    features: usize,
    data: Vec<f64>,
}

impl Embedding {
    /// Embeds the given rows of `y`, in order.
    pub fn new(ff: &FourierFeatures, y: &Matrix, rows: &[usize]) -> Self {
        let width = 2 * ff.count();
        let mut data = vec![0.0; rows.len() * width];
        for (chunk, &r) in data.chunks_exact_mut(width).zip(rows) {
            ff.embed_into(y.row(r), chunk);
        }
        Embedding {
            features: ff.count(),
            data,
        }
    }

    /// Embeds every row of `y`.
    pub fn of_outcomes(ff: &FourierFeatures, y: &Matrix) -> Self {
        let rows: Vec<usize> = (0..y.rows()).collect();
        Self::new(ff, y, &rows)
    }

    pub fn features(&self) -> usize {
        self.features
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        let w = 2 * self.features;
        &self.data[i * w..(i + 1) * w]
    }
}

/// Side weights `ν_i` for the observations in `side` (indices into `w`).
pub fn group_split_weights(side: &[usize], w: &[bool]) -> Result<Vec<f64>> {
    let treated = side.iter().filter(|&&i| w[i]).count();
    let control = side.len() - treated;
    if treated == 0 || control == 0 {
        return Err(Error::EmptyTreatmentArm);
    }
    let (pos, neg) = (1.0 / treated as f64, -1.0 / control as f64);
    Ok(side.iter().map(|&i| if w[i] { pos } else { neg }).collect())
}

fn side_weights(side: &[usize], w: &[bool], mode: SplitMode) -> Result<Vec<f64>> {
    match mode {
        SplitMode::CausalWeightedMmd => group_split_weights(side, w),
        SplitMode::PlainMmd => {
            if side.is_empty() {
                return Err(Error::EmptyTreatmentArm);
            }
            Ok(vec![1.0 / side.len() as f64; side.len()])
        }
    }
}

/// Split score of the partition (`left`, `right`); indices refer to rows of
/// `embedded` and entries of `w`.
pub fn split_criterion(
    embedded: &Embedding,
    left: &[usize],
    right: &[usize],
    w: &[bool],
    mode: SplitMode,
) -> Result<f64> {
    let nu_left = side_weights(left, w, mode)?;
    let nu_right = side_weights(right, w, mode)?;
    let width = 2 * embedded.features();
    let mut diff = vec![0.0; width];
    for (&i, nu) in left.iter().zip(&nu_left) {
        for (d, e) in diff.iter_mut().zip(embedded.row(i)) {
            *d += nu * e;
        }
    }
    for (&i, nu) in right.iter().zip(&nu_right) {
        for (d, e) in diff.iter_mut().zip(embedded.row(i)) {
            *d -= nu * e;
        }
    }
    let (nl, nr) = (left.len() as f64, right.len() as f64);
    let norm: f64 = diff.iter().map(|v| v * v).sum::<f64>() / embedded.features() as f64;
    Ok(nl * nr / ((nl + nr) * (nl + nr)) * norm)
}

/// A chosen split of a node.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitChoice {
    pub feature: usize,
    /// Observations with `x[feature] < threshold` go left.
    pub threshold: f64,
    pub score: f64,
    pub left: Vec<usize>,
    pub right: Vec<usize>,
}

/// The observations a tree searches splits over, with their embeddings.
///
/// Observations are addressed by local position `0..len()`.
pub struct SplitProblem<'a> {
    x: &'a Matrix,
    rows: Vec<usize>,
    treated: Vec<bool>,
    sort_keys: Vec<u64>,
    embedding: Embedding,
    mode: SplitMode,
}

impl<'a> SplitProblem<'a> {
    /// `rows` are dataset rows; `keys` are the dataset's row keys and order
    /// observations with equal covariate values.
    pub fn new(
        data: &'a Dataset,
        rows: &[usize],
        keys: &[u64],
        ff: &FourierFeatures,
        mode: SplitMode,
    ) -> Self {
        SplitProblem {
            x: data.x(),
            rows: rows.to_vec(),
            treated: rows.iter().map(|&r| data.treated(r)).collect(),
            sort_keys: rows.iter().map(|&r| keys[r]).collect(),
            embedding: Embedding::new(ff, data.y(), rows),
            mode,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Dataset row of local observation `i`.
    pub fn row(&self, i: usize) -> usize {
        self.rows[i]
    }

    pub fn treated(&self) -> &[bool] {
        &self.treated
    }

    pub fn embedding(&self) -> &Embedding {
        &self.embedding
    }

    #[inline]
    fn value(&self, i: usize, feature: usize) -> f64 {
        self.x.get(self.rows[i], feature)
    }

    /// Best admissible split of `node` over `mtry` randomly drawn features, or
    /// `None` if no candidate is admissible.
    ///
    /// A candidate is admissible when both children keep at least
    /// `alpha_regularity` of the node and at least `κ` observations per arm
    /// (`κ` observations in plain mode). Ties go to the smaller feature index,
    /// then the smaller threshold.
    pub fn best_split<R: Rng + ?Sized>(
        &self,
        node: &[usize],
        config: &ForestConfig,
        rng: &mut R,
    ) -> Option<SplitChoice> {
        let p = self.x.cols();
        let mut features = sample(rng, p, config.mtry_for(p)).into_vec();
        features.sort_unstable();
        self.best_split_over(node, &features, config)
    }

    /// As [`best_split`](Self::best_split) with a fixed candidate feature set.
    pub fn best_split_over(
        &self,
        node: &[usize],
        features: &[usize],
        config: &ForestConfig,
    ) -> Option<SplitChoice> {
        let m = node.len();
        if m < 2 {
            return None;
        }
        let width = 2 * self.embedding.features();
        let mut total_t = vec![0.0; width];
        let mut total_c = vec![0.0; width];
        let mut count_t = 0usize;
        for &i in node {
            let (acc, e) = if self.treated[i] {
                count_t += 1;
                (&mut total_t, self.embedding.row(i))
            } else {
                (&mut total_c, self.embedding.row(i))
            };
            for (a, v) in acc.iter_mut().zip(e) {
                *a += v;
            }
        }
        let count_c = m - count_t;
        let kappa = config.min_leaf_per_arm;
        match self.mode {
            SplitMode::CausalWeightedMmd if count_t < 2 * kappa || count_c < 2 * kappa => {
                return None
            }
            SplitMode::PlainMmd if m < 2 * kappa => return None,
            _ => {}
        }
        let min_child = config.alpha_regularity * m as f64;
        let inv_s = 1.0 / self.embedding.features() as f64;

        let mut order = node.to_vec();
        let mut left_t = vec![0.0; width];
        let mut left_c = vec![0.0; width];
        let mut best: Option<(usize, usize, f64, f64)> = None; // (feature, cut, threshold, score)
        let mut best_order: Vec<usize> = Vec::new();

        for &feature in features {
            order.sort_unstable_by(|&a, &b| {
                self.value(a, feature)
                    .total_cmp(&self.value(b, feature))
                    .then_with(|| self.sort_keys[a].cmp(&self.sort_keys[b]))
            });
            left_t.iter_mut().for_each(|v| *v = 0.0);
            left_c.iter_mut().for_each(|v| *v = 0.0);
            let (mut lt, mut lc) = (0usize, 0usize);
            let mut improved = false;
            for k in 0..m - 1 {
                let i = order[k];
                let e = self.embedding.row(i);
                if self.treated[i] {
                    lt += 1;
                    left_t.iter_mut().zip(e).for_each(|(a, v)| *a += v);
                } else {
                    lc += 1;
                    left_c.iter_mut().zip(e).for_each(|(a, v)| *a += v);
                }
                let here = self.value(i, feature);
                let next = self.value(order[k + 1], feature);
                if here == next {
                    continue;
                }
                let nl = k + 1;
                let nr = m - nl;
                if (nl as f64) < min_child || (nr as f64) < min_child {
                    continue;
                }
                let (rt, rc) = (count_t - lt, count_c - lc);
                let admissible = match self.mode {
                    SplitMode::CausalWeightedMmd => {
                        lt >= kappa && lc >= kappa && rt >= kappa && rc >= kappa
                    }
                    SplitMode::PlainMmd => nl >= kappa && nr >= kappa,
                };
                if !admissible {
                    continue;
                }
                let norm = match self.mode {
                    SplitMode::CausalWeightedMmd => {
                        let (a, b) = (1.0 / lt as f64, 1.0 / lc as f64);
                        let (c, d) = (1.0 / rt as f64, 1.0 / rc as f64);
                        let mut acc = 0.0;
                        for q in 0..width {
                            let tau_l = left_t[q] * a - left_c[q] * b;
                            let tau_r = (total_t[q] - left_t[q]) * c - (total_c[q] - left_c[q]) * d;
                            let diff = tau_l - tau_r;
                            acc += diff * diff;
                        }
                        acc
                    }
                    SplitMode::PlainMmd => {
                        let (a, c) = (1.0 / nl as f64, 1.0 / nr as f64);
                        let mut acc = 0.0;
                        for q in 0..width {
                            let l = left_t[q] + left_c[q];
                            let r = total_t[q] + total_c[q] - l;
                            let diff = l * a - r * c;
                            acc += diff * diff;
                        }
                        acc
                    }
                };
                let score = (nl * nr) as f64 / (m * m) as f64 * norm * inv_s;
                if best.is_none_or(|(_, _, _, s)| score > s) {
                    best = Some((feature, nl, midpoint(here, next), score));
                    improved = true;
                }
            }
            if improved {
                best_order.clone_from(&order);
            }
        }

        best.map(|(feature, cut, threshold, score)| SplitChoice {
            feature,
            threshold,
            score,
            left: best_order[..cut].to_vec(),
            right: best_order[cut..].to_vec(),
        })
    }
}

/// A threshold `t` with `lo < t <= hi`.
fn midpoint(lo: f64, hi: f64) -> f64 {
    let mid = lo + 0.5 * (hi - lo);
    match mid.partial_cmp(&lo) {
        Some(Ordering::Greater) => mid,
        _ => hi,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{sample_fourier_features, KernelSpec};

    fn toy(x: Vec<f64>, w: Vec<bool>, y: Vec<f64>) -> Dataset {
        Dataset::new(Matrix::column(x), w, Matrix::column(y)).unwrap()
    }

    #[test]
    fn side_weights_by_hand() {
        let w = [true, false];
        assert_eq!(group_split_weights(&[0, 1], &w).unwrap(), vec![1.0, -1.0]);
        let w = [true, true, false];
        let nu = group_split_weights(&[0, 1, 2], &w).unwrap();
        assert_eq!(nu, vec![0.5, 0.5, -1.0]);
        assert_eq!(nu.iter().sum::<f64>(), 0.0);
    }

    #[test]
    fn side_weights_need_both_arms() {
        let w = [true, true];
        assert!(matches!(
            group_split_weights(&[0, 1], &w),
            Err(Error::EmptyTreatmentArm)
        ));
    }

    #[test]
    fn identical_sides_score_zero() {
        let spec = KernelSpec::new(1.0, 1).unwrap();
        let ff = sample_fourier_features(&spec, 64, 2).unwrap();
        let y = Matrix::column(vec![0.1, 0.7, -0.4, 0.1, 0.7, -0.4]);
        let emb = Embedding::of_outcomes(&ff, &y);
        let w = [true, false, true, true, false, true];
        let s = split_criterion(&emb, &[0, 1, 2], &[3, 4, 5], &w, SplitMode::CausalWeightedMmd)
            .unwrap();
        assert!(s.abs() < 1e-10, "{s}");
    }

    #[test]
    fn midpoint_is_strictly_above_lower() {
        assert_eq!(midpoint(1.0, 3.0), 2.0);
        let lo = 1.0f64;
        let hi = f64::from_bits(lo.to_bits() + 1);
        assert_eq!(midpoint(lo, hi), hi);
    }

    #[test]
    fn single_arm_node_has_no_causal_split() {
        let data = toy(vec![0.0, 1.0, 2.0], vec![true; 3], vec![0.0, 1.0, 2.0]);
        let spec = KernelSpec::new(1.0, 1).unwrap();
        let ff = sample_fourier_features(&spec, 8, 0).unwrap();
        let keys = data.row_keys();
        let problem = SplitProblem::new(&data, &[0, 1, 2], &keys, &ff, SplitMode::CausalWeightedMmd);
        let cfg = ForestConfig {
            min_leaf_per_arm: 1,
            alpha_regularity: 0.1,
            ..Default::default()
        };
        assert!(problem.best_split_over(&[0, 1, 2], &[0], &cfg).is_none());
    }

    #[test]
    fn ties_prefer_lower_feature() {
        // Two identical covariate columns give bitwise-identical scores.
        let n = 12;
        let col: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let mut xs = Vec::new();
        for &v in &col {
            xs.extend_from_slice(&[v, v]);
        }
        let w: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
        let y: Vec<f64> = (0..n).map(|i| if i < 6 { 0.0 } else { 3.0 } + (i % 2) as f64).collect();
        let data = Dataset::new(Matrix::new(n, 2, xs).unwrap(), w, Matrix::column(y)).unwrap();
        let spec = KernelSpec::new(1.0, 1).unwrap();
        let ff = sample_fourier_features(&spec, 16, 4).unwrap();
        let keys = data.row_keys();
        let rows: Vec<usize> = (0..n).collect();
        let problem = SplitProblem::new(&data, &rows, &keys, &ff, SplitMode::CausalWeightedMmd);
        let cfg = ForestConfig {
            min_leaf_per_arm: 2,
            alpha_regularity: 0.1,
            ..Default::default()
        };
        let choice = problem.best_split_over(&rows, &[0, 1], &cfg).unwrap();
        assert_eq!(choice.feature, 0);
        let alt = problem.best_split_over(&rows, &[1], &cfg).unwrap();
        assert_eq!(alt.score, choice.score);
        assert_eq!(alt.threshold, choice.threshold);
    }

    #[test]
    fn incremental_scan_matches_direct_score() {
        let n = 20;
        let x: Vec<f64> = (0..n).map(|i| ((i * 7) % n) as f64).collect();
        let w: Vec<bool> = (0..n).map(|i| (i * 3) % 5 < 2).collect();
        let y: Vec<f64> = (0..n).map(|i| ((i * 13) % 17) as f64 / 5.0).collect();
        let data = toy(x, w, y);
        let spec = KernelSpec::new(1.3, 1).unwrap();
        let ff = sample_fourier_features(&spec, 32, 8).unwrap();
        let keys = data.row_keys();
        let rows: Vec<usize> = (0..n).collect();
        for mode in [SplitMode::CausalWeightedMmd, SplitMode::PlainMmd] {
            let problem = SplitProblem::new(&data, &rows, &keys, &ff, mode);
            let cfg = ForestConfig {
                min_leaf_per_arm: 2,
                alpha_regularity: 0.05,
                split_mode: mode,
                ..Default::default()
            };
            let choice = problem.best_split_over(&rows, &[0], &cfg).unwrap();
            let direct =
                split_criterion(problem.embedding(), &choice.left, &choice.right, problem.treated(), mode)
                    .unwrap();
            assert!((direct - choice.score).abs() <= 1e-12 * direct.max(1.0));
            assert!(choice
                .left
                .iter()
                .all(|&i| data.x().get(i, 0) < choice.threshold));
            assert!(choice
                .right
                .iter()
                .all(|&i| data.x().get(i, 0) >= choice.threshold));
        }
    }
}
