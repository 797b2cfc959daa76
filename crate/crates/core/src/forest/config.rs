use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How node impurity is scored.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Weighted MMD between the treated-minus-control embeddings of the two
    /// children. Leaves carry signed weights.
    CausalWeightedMmd,
    /// Plain MMD between the outcome embeddings of the two children, as in an
    /// ordinary distributional forest. Leaves carry nonnegative weights.
    PlainMmd,
}

/// Forest hyperparameters.
///
/// Missing fields in a JSON config fall back to [`ForestConfig::default`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestConfig {
    /// Total number of trees `N`.
    pub num_trees: usize,
    /// Number of half-sample groups `B`.
    pub num_groups: usize,
    /// Minimum leaf size `κ` per treatment arm (per leaf in plain mode).
    #[serde(alias = "kappa")]
    pub min_leaf_per_arm: usize,
    /// Each child keeps at least this fraction of its parent's build sample.
    #[serde(alias = "alpha")]
    pub alpha_regularity: f64,
    /// Trees subsample `ceil(m^β)` rows from a half-sample of size `m`.
    #[serde(alias = "beta")]
    pub subsample_exponent: f64,
    /// Candidate features per split; `None` means `ceil(sqrt(p))`.
    pub mtry: Option<usize>,
    /// Number of random Fourier features drawn per tree.
    pub fourier_features: usize,
    /// Fraction of each tree's subsample used to choose splits.
    pub honesty_fraction: f64,
    pub split_mode: SplitMode,
    pub seed: u64,
    /// Level of the H0 test and confidence band.
    pub significance_alpha: f64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            num_trees: 1000,
            num_groups: 50,
            min_leaf_per_arm: 5,
            alpha_regularity: 0.05,
            subsample_exponent: 0.9,
            mtry: None,
            fourier_features: 10,
            honesty_fraction: 0.5,
            split_mode: SplitMode::CausalWeightedMmd,
            seed: 0,
            significance_alpha: 0.05,
        }
    }
}

impl ForestConfig {
    /// Trees per group, `L = round(N / B)` (at least one).
    pub fn trees_per_group(&self) -> usize {
        ((self.num_trees as f64 / self.num_groups.max(1) as f64).round() as usize).max(1)
    }

    pub fn mtry_for(&self, p: usize) -> usize {
        self.mtry
            .unwrap_or_else(|| (p as f64).sqrt().ceil() as usize)
            .clamp(1, p.max(1))
    }

    /// Subsample size `s = ceil(m^β)` drawn from a pool of `m` rows.
    pub fn subsample_size(&self, pool: usize) -> usize {
        ((pool as f64).powf(self.subsample_exponent).ceil() as usize).min(pool)
    }

    /// Smallest subsample a tree can be grown from: `2κ` per arm (causal
    /// mode) or `2κ` rows (plain mode).
    pub fn min_subsample(&self) -> usize {
        match self.split_mode {
            SplitMode::CausalWeightedMmd => 4 * self.min_leaf_per_arm,
            SplitMode::PlainMmd => 2 * self.min_leaf_per_arm,
        }
    }

    /// Checks parameter ranges against a covariate dimension `p`.
    pub fn validate(&self, p: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.num_groups == 0 {
            return bad("num_groups must be >= 1".into());
        }
        if self.num_trees == 0 {
            return bad("num_trees must be >= 1".into());
        }
        if self.min_leaf_per_arm == 0 {
            return bad("min_leaf_per_arm must be >= 1".into());
        }
        if !(self.alpha_regularity > 0.0 && self.alpha_regularity <= 0.2) {
            return bad(format!(
                "alpha_regularity must lie in (0, 0.2], got {}",
                self.alpha_regularity
            ));
        }
        if !(self.subsample_exponent > 0.0 && self.subsample_exponent < 1.0) {
            return bad(format!(
                "subsample_exponent must lie in (0, 1), got {}",
                self.subsample_exponent
            ));
        }
        if let Some(m) = self.mtry {
            if m == 0 || m > p {
                return bad(format!("mtry must lie in [1, {p}], got {m}"));
            }
        }
        if self.fourier_features == 0 {
            return bad("fourier_features must be >= 1".into());
        }
        if !(self.honesty_fraction > 0.0 && self.honesty_fraction < 1.0) {
            return bad(format!(
                "honesty_fraction must lie in (0, 1), got {}",
                self.honesty_fraction
            ));
        }
        if !(self.significance_alpha > 0.0 && self.significance_alpha < 1.0) {
            return bad(format!(
                "significance_alpha must lie in (0, 1), got {}",
                self.significance_alpha
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trees_per_group_rounds() {
        let c = ForestConfig {
            num_trees: 2500,
            num_groups: 50,
            ..Default::default()
        };
        assert_eq!(c.trees_per_group(), 50);
        let c = ForestConfig {
            num_trees: 4000,
            num_groups: 40,
            ..Default::default()
        };
        assert_eq!(c.trees_per_group(), 100);
        let c = ForestConfig {
            num_trees: 10,
            num_groups: 4,
            ..Default::default()
        };
        assert_eq!(c.trees_per_group(), 3);
    }

    #[test]
    fn mtry_default_is_ceil_sqrt() {
        let c = ForestConfig::default();
        assert_eq!(c.mtry_for(5), 3);
        assert_eq!(c.mtry_for(1), 1);
        assert_eq!(c.mtry_for(16), 4);
    }

    #[test]
    fn partial_json_uses_defaults() {
        let c: ForestConfig = serde_json::from_str(r#"{"num_trees": 40, "kappa": 3}"#).unwrap();
        assert_eq!(c.num_trees, 40);
        assert_eq!(c.min_leaf_per_arm, 3);
        assert_eq!(c.num_groups, 50);
        assert!(serde_json::from_str::<ForestConfig>(r#"{"trees": 4}"#).is_err());
    }

    #[test]
    fn validation_ranges() {
        assert!(ForestConfig::default().validate(5).is_ok());
        let c = ForestConfig {
            alpha_regularity: 0.3,
            ..Default::default()
        };
        assert!(c.validate(5).is_err());
        let c = ForestConfig {
            mtry: Some(6),
            ..Default::default()
        };
        assert!(c.validate(5).is_err());
        let c = ForestConfig {
            subsample_exponent: 1.0,
            ..Default::default()
        };
        assert!(c.validate(5).is_err());
    }
}
