//! The half-sampled forest: `B` groups of `L` honest trees, each group grown
//! on its own Bernoulli(1/2) half-sample of the training rows.
//!
//! At a query point `x` every tree contributes signed leaf weights; averaging
//! within a group gives `ŵ^{S_b}`, and averaging the groups gives the point
//! estimate `ŵ`. The conditional treatment embedding is then
//! `τ̂(x) = Σ_i ŵ_i k(Y_i, ·)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::forest::{build_tree, keyed_uniform, tree_weights, ForestConfig, SplitMode, Tree};
use crate::kernel::{median_heuristic, KernelSpec};
use crate::rng::{self, mix64};

/// Redraw budget for half-samples and tree subsamples that miss an arm.
const MAX_REDRAWS: u64 = 100;

/// Half-sample membership: row `i` is included when its keyed uniform draw
/// under `seed` is below 1/2, independently across rows.
pub fn draw_half_sample(keys: &[u64], seed: u64) -> Vec<usize> {
    let salt = rng::derive_seed(seed, &[rng::TAG_HALF_SAMPLE]);
    keys.iter()
        .enumerate()
        .filter(|&(_, &k)| keyed_uniform(salt, k) < 0.5)
        .map(|(i, _)| i)
        .collect()
}

/// `size` rows of `pool` drawn uniformly without replacement.
fn draw_subsample(pool: &[usize], keys: &[u64], size: usize, seed: u64) -> Vec<usize> {
    let salt = rng::derive_seed(seed, &[rng::TAG_SUBSAMPLE]);
    let mut ranked: Vec<(u64, usize)> = pool.iter().map(|&i| (mix64(salt ^ keys[i]), i)).collect();
    if size < ranked.len() {
        ranked.select_nth_unstable(size);
        ranked.truncate(size);
    }
    let mut rows: Vec<usize> = ranked.into_iter().map(|(_, i)| i).collect();
    rows.sort_unstable();
    rows
}

fn meets_floor(rows: &[usize], data: &Dataset, mode: SplitMode, floor: usize) -> bool {
    match mode {
        SplitMode::CausalWeightedMmd => {
            let t = rows.iter().filter(|&&i| data.treated(i)).count();
            t >= floor && rows.len() - t >= floor
        }
        SplitMode::PlainMmd => rows.len() >= floor,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Group {
    /// The half-sample `S_b` (ascending row indices).
    pub half_sample: Vec<usize>,
    pub trees: Vec<Tree>,
}

/// Point weights `ŵ` and per-group weights `ŵ^{S_b}` at one query point.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightBundle {
    pub aggregate: Vec<f64>,
    pub groups: Vec<Vec<f64>>,
    pub query: Vec<f64>,
}

impl WeightBundle {
    /// Rows with a nonzero weight in some group, ascending.
    pub fn support(&self) -> Vec<usize> {
        (0..self.aggregate.len())
            .filter(|&i| self.groups.iter().any(|g| g[i] != 0.0))
            .collect()
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }
}

/// A fitted model that yields kernel weights over its training rows.
pub trait WeightModel: Sync {
    fn dataset(&self) -> &Dataset;
    fn kernel(&self) -> &KernelSpec;
    fn weights_at(&self, x: &[f64]) -> Result<WeightBundle>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CausalDrfModel {
    config: ForestConfig,
    kernel: KernelSpec,
    dataset: Dataset,
    groups: Vec<Group>,
}

impl CausalDrfModel {
    /// Fits the forest; the kernel bandwidth is the median heuristic on all
    /// training outcomes.
    pub fn fit(data: &Dataset, config: &ForestConfig) -> Result<Self> {
        let sigma = median_heuristic(data.y(), config.seed)?;
        let kernel = KernelSpec::new(sigma, data.d())?;
        Self::fit_with_kernel(data, config, kernel)
    }

    pub fn fit_with_kernel(data: &Dataset, config: &ForestConfig, kernel: KernelSpec) -> Result<Self> {
        config.validate(data.p())?;
        if kernel.outcome_dim() != data.d() {
            return Err(Error::DimensionMismatch {
                expected: data.d(),
                got: kernel.outcome_dim(),
            });
        }
        let kappa = config.min_leaf_per_arm;
        let mode = config.split_mode;
        if !meets_floor(&(0..data.n()).collect::<Vec<_>>(), data, mode, 4 * kappa) {
            let (t, c) = data.arm_counts();
            return Err(Error::InsufficientData(format!(
                "need at least {} observations per arm, have {t} treated and {c} control",
                4 * kappa
            )));
        }

        let keys = data.row_keys();
        let trees_per_group = config.trees_per_group();
        let groups = (0..config.num_groups)
            .into_par_iter()
            .map(|b| {
                let half_sample = (0..MAX_REDRAWS)
                    .map(|attempt| {
                        draw_half_sample(&keys, rng::derive_seed(config.seed, &[b as u64, attempt]))
                    })
                    .find(|s| meets_floor(s, data, mode, 2 * kappa))
                    .ok_or_else(|| {
                        Error::InsufficientData(format!(
                            "half-sample {b} missed the per-arm floor {MAX_REDRAWS} times"
                        ))
                    })?;
                let size = config.subsample_size(half_sample.len());
                if size < config.min_subsample() {
                    return Err(Error::InsufficientData(format!(
                        "tree subsample of {size} rows is below the minimum of {}",
                        config.min_subsample()
                    )));
                }
                let trees = (0..trees_per_group)
                    .into_par_iter()
                    .map(|l| {
                        let tree_seed =
                            rng::derive_seed(config.seed, &[rng::TAG_TREE, b as u64, l as u64]);
                        let subsample = (0..MAX_REDRAWS)
                            .map(|attempt| {
                                let s = rng::derive_seed(tree_seed, &[attempt]);
                                draw_subsample(&half_sample, &keys, size, s)
                            })
                            .find(|s| meets_floor(s, data, mode, 2 * kappa))
                            .ok_or_else(|| {
                                Error::InsufficientData(format!(
                                    "subsample for tree {l} of group {b} missed an arm"
                                ))
                            })?;
                        build_tree(&subsample, data, &keys, &kernel, config, tree_seed)
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Group { half_sample, trees })
            })
            .collect::<Result<Vec<_>>>()?;

        Ok(CausalDrfModel {
            config: config.clone(),
            kernel,
            dataset: data.clone(),
            groups,
        })
    }

    pub fn config(&self) -> &ForestConfig {
        &self.config
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    pub fn num_trees(&self) -> usize {
        self.groups.iter().map(|g| g.trees.len()).sum()
    }

    /// Group weights `ŵ^{S_b}` (mean of the group's tree weights) and their
    /// mean `ŵ`.
    pub fn aggregate_weights(&self, x: &[f64]) -> Result<WeightBundle> {
        let p = self.dataset.p();
        if x.len() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: x.len(),
            });
        }
        let n = self.dataset.n();
        let groups: Vec<Vec<f64>> = self
            .groups
            .iter()
            .map(|g| {
                let mut w = vec![0.0; n];
                let scale = 1.0 / g.trees.len() as f64;
                for tree in &g.trees {
                    for (i, v) in tree_weights(tree, x, &self.dataset).entries {
                        w[i] += v * scale;
                    }
                }
                w
            })
            .collect();
        let scale = 1.0 / groups.len() as f64;
        let mut aggregate = vec![0.0; n];
        for g in &groups {
            for (a, v) in aggregate.iter_mut().zip(g) {
                *a += v * scale;
            }
        }
        Ok(WeightBundle {
            aggregate,
            groups,
            query: x.to_vec(),
        })
    }
}

impl WeightModel for CausalDrfModel {
    fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    fn weights_at(&self, x: &[f64]) -> Result<WeightBundle> {
        self.aggregate_weights(x)
    }
}

/// Baseline estimator: one plain distributional forest per treatment arm,
/// each half-sampled into the same number of groups. The treatment embedding
/// is the difference of the two forests' embeddings, and group `b` of the
/// difference pairs group `b` of each arm.
#[derive(Clone, Debug)]
pub struct TwoForestModel {
    dataset: Dataset,
    kernel: KernelSpec,
    treated_rows: Vec<usize>,
    control_rows: Vec<usize>,
    treated: CausalDrfModel,
    control: CausalDrfModel,
}

impl TwoForestModel {
    pub fn fit(data: &Dataset, config: &ForestConfig) -> Result<Self> {
        let sigma = median_heuristic(data.y(), config.seed)?;
        let kernel = KernelSpec::new(sigma, data.d())?;
        let treated_rows: Vec<usize> = (0..data.n()).filter(|&i| data.treated(i)).collect();
        let control_rows: Vec<usize> = (0..data.n()).filter(|&i| !data.treated(i)).collect();
        let arm_config = |tag: u64| ForestConfig {
            split_mode: SplitMode::PlainMmd,
            seed: rng::derive_seed(config.seed, &[tag]),
            ..config.clone()
        };
        let treated =
            CausalDrfModel::fit_with_kernel(&data.subset(&treated_rows), &arm_config(1), kernel)?;
        let control =
            CausalDrfModel::fit_with_kernel(&data.subset(&control_rows), &arm_config(0), kernel)?;
        Ok(TwoForestModel {
            dataset: data.clone(),
            kernel,
            treated_rows,
            control_rows,
            treated,
            control,
        })
    }
}

impl WeightModel for TwoForestModel {
    fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    fn weights_at(&self, x: &[f64]) -> Result<WeightBundle> {
        let t = self.treated.aggregate_weights(x)?;
        let c = self.control.aggregate_weights(x)?;
        let n = self.dataset.n();
        let combine = |wt: &[f64], wc: &[f64]| {
            let mut w = vec![0.0; n];
            for (&row, &v) in self.treated_rows.iter().zip(wt) {
                w[row] = v;
            }
            for (&row, &v) in self.control_rows.iter().zip(wc) {
                w[row] = -v;
            }
            w
        };
        Ok(WeightBundle {
            aggregate: combine(&t.aggregate, &c.aggregate),
            groups: t
                .groups
                .iter()
                .zip(&c.groups)
                .map(|(a, b)| combine(a, b))
                .collect(),
            query: x.to_vec(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Matrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dataset(n: usize, seed: u64) -> Dataset {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let p = 2;
        let x: Vec<f64> = (0..n * p).map(|_| r.random::<f64>()).collect();
        let w: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
        let y: Vec<f64> = (0..n).map(|i| x[i * p] + w[i] as u8 as f64 + r.random::<f64>()).collect();
        Dataset::new(Matrix::new(n, p, x).unwrap(), w, Matrix::column(y)).unwrap()
    }

    fn arm_sums(w: &[f64], data: &Dataset) -> (f64, f64) {
        let mut s = (0.0, 0.0);
        for (i, v) in w.iter().enumerate() {
            if data.treated(i) {
                s.0 += v
            } else {
                s.1 += v
            }
        }
        s
    }

    #[test]
    fn half_sample_is_reproducible_and_balanced() {
        let keys: Vec<u64> = (0..100_000u64).collect();
        let a = draw_half_sample(&keys, 1);
        assert_eq!(a, draw_half_sample(&keys, 1));
        let frac = a.len() as f64 / keys.len() as f64;
        assert!((0.49..=0.51).contains(&frac), "{frac}");
        let b = draw_half_sample(&keys, 2);
        let in_a: std::collections::HashSet<_> = a.iter().collect();
        let overlap = b.iter().filter(|i| in_a.contains(i)).count() as f64 / keys.len() as f64;
        assert!((overlap - 0.25).abs() < 0.01, "{overlap}");
    }

    #[test]
    fn subsample_has_requested_size() {
        let keys: Vec<u64> = (0..50u64).map(mix64).collect();
        let pool: Vec<usize> = (0..50).step_by(2).collect();
        let s = draw_subsample(&pool, &keys, 10, 4);
        assert_eq!(s.len(), 10);
        assert!(s.iter().all(|i| i % 2 == 0));
        assert!(s.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn smallest_fit() {
        let data = dataset(40, 3);
        let cfg = ForestConfig {
            num_trees: 2,
            num_groups: 2,
            min_leaf_per_arm: 2,
            ..Default::default()
        };
        let model = CausalDrfModel::fit(&data, &cfg).unwrap();
        assert_eq!(model.num_trees(), 2);
        let bundle = model.aggregate_weights(&[0.5, 0.5]).unwrap();
        for g in &bundle.groups {
            let (t, c) = arm_sums(g, &data);
            assert!((t - 1.0).abs() < 1e-12 && (c + 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_group_single_tree_matches_tree() {
        let data = dataset(60, 4);
        let cfg = ForestConfig {
            num_trees: 1,
            num_groups: 1,
            min_leaf_per_arm: 2,
            ..Default::default()
        };
        let model = CausalDrfModel::fit(&data, &cfg).unwrap();
        let x = [0.3, 0.8];
        let bundle = model.aggregate_weights(&x).unwrap();
        let direct = tree_weights(&model.groups()[0].trees[0], &x, &data).to_dense(60);
        assert_eq!(bundle.aggregate, direct);
    }

    #[test]
    fn rejects_wrong_query_dimension() {
        let data = dataset(40, 3);
        let cfg = ForestConfig {
            num_trees: 2,
            num_groups: 2,
            min_leaf_per_arm: 2,
            ..Default::default()
        };
        let model = CausalDrfModel::fit(&data, &cfg).unwrap();
        assert!(model.aggregate_weights(&[0.1]).is_err());
    }

    #[test]
    fn too_few_per_arm() {
        let data = dataset(30, 3);
        let cfg = ForestConfig {
            min_leaf_per_arm: 5,
            ..Default::default()
        };
        assert!(matches!(
            CausalDrfModel::fit(&data, &cfg),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn two_forest_weights_are_signed() {
        let data = dataset(120, 7);
        let cfg = ForestConfig {
            num_trees: 20,
            num_groups: 4,
            min_leaf_per_arm: 3,
            ..Default::default()
        };
        let model = TwoForestModel::fit(&data, &cfg).unwrap();
        let bundle = model.weights_at(&[0.5, 0.5]).unwrap();
        assert_eq!(bundle.num_groups(), 4);
        for w in bundle.groups.iter().chain([&bundle.aggregate]) {
            let (t, c) = arm_sums(w, &data);
            assert!((t - 1.0).abs() < 1e-12 && (c + 1.0).abs() < 1e-12);
        }
    }
}
