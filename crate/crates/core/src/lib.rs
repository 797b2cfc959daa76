//! Causal distributional random forests.
//!
//! Estimates the conditional kernel treatment effect
//! `τ(x) = E[k(Y¹, ·) | X = x] − E[k(Y⁰, ·) | X = x]`, the difference of the
//! kernel mean embeddings of the two potential-outcome laws at covariate
//! value `x`, with a single honest forest whose splits maximize a weighted
//! MMD between the treated-minus-control embeddings of the two children.
//!
//! The forest is grown as `B` groups of `L` trees, each group on its own
//! random half of the data. The spread of the group estimates around the
//! full estimate calibrates a test of `H0: P⁰(Y | X = x) = P¹(Y | X = x)` and
//! a simultaneous confidence band for the witness function
//! `y ↦ τ(x)(y)`.
//!
//! ```
//! use causal_drf::{confidence_band, h0_test, simulate_dataset, CausalDrfModel, ForestConfig};
//! use causal_drf::simulation::SimulationRegime;
//! use causal_drf::inference::linear_grid;
//! use rand::SeedableRng;
//!
//! let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
//! let data = simulate_dataset(SimulationRegime::Motivational(2), 400, &mut rng);
//! let config = ForestConfig { num_trees: 100, num_groups: 20, ..Default::default() };
//! let model = CausalDrfModel::fit(&data, &config).unwrap();
//!
//! let x = [2.5; 5];
//! let test = h0_test(&model, &x, 0.05).unwrap();
//! let band = confidence_band(&model, &x, &linear_grid(-3.0, 6.0, 91), 0.05).unwrap();
//! assert_eq!(band.test, test);
//! assert!(band.lower.iter().zip(&band.upper).all(|(lo, hi)| lo <= hi));
//! ```

pub mod data;
pub mod error;
pub mod estimator;
pub mod forest;
pub mod inference;
pub mod io;
pub mod kernel;
pub mod rng;
pub mod simulation;

pub use data::{Dataset, Matrix};
pub use error::{Error, Result};
pub use estimator::{draw_half_sample, CausalDrfModel, TwoForestModel, WeightBundle, WeightModel};
pub use forest::{ForestConfig, SplitMode};
pub use inference::{confidence_band, h0_test, TestResult, WitnessBand};
pub use kernel::{gaussian_kernel, kernel_matrix, median_heuristic, KernelMatrix, KernelSpec};
pub use simulation::{run_study, simulate_dataset, Method, SimulationRegime, StudyReport};

/// The guide's chapters, compiled so their snippets run as doc-tests.
#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/kernels.md")]
    mod kernels {}
    #[doc = include_str!("../../../book/src/forest.md")]
    mod forest {}
    #[doc = include_str!("../../../book/src/inference.md")]
    mod inference {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
