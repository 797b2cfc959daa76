//! Synthetic benchmarks with known conditional outcome laws.
//!
//! Four benchmark regimes cross confounding with a heterogeneous effect:
//! `X ~ U(0,1)^5`, `W | X ~ Bernoulli(e(X))` and
//! `Y | W, X ~ N(2X₃ − 1 + (W − 0.5) t(X), 1)`. The four motivational
//! examples draw `X ~ U(2,3)^5` with `P(W = 1) = 1/2` and Gaussian arms that
//! differ in mean, variance, both, or not at all.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Matrix};
use crate::error::{Error, Result};
use crate::estimator::{CausalDrfModel, TwoForestModel, WeightModel};
use crate::forest::ForestConfig;
use crate::inference::{band_from_bundle, linear_grid, DEFAULT_GRID_SIZE};
use crate::kernel::KernelSpec;
use crate::rng;

/// Draws per arm for the Monte Carlo ground-truth witness.
pub const TRUTH_DRAWS: usize = 8000;

/// Covariate dimension of every synthetic design.
pub const NUM_COVARIATES: usize = 5;

/// Benchmark test point for regimes 1–4.
pub const REGIME_TEST_POINT: [f64; 5] = [0.7, 0.3, 0.5, 0.68, 0.43];

/// Test point for the motivational examples.
pub const MOTIVATIONAL_TEST_POINT: [f64; 5] = [2.5; 5];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SimulationRegime {
    /// 1: constant propensity, no effect.
    Nothing,
    /// 2: propensity depends on `X₃`, no effect.
    Confounding,
    /// 3: constant propensity, effect `η(X₁)η(X₂)`.
    Effect,
    /// 4: confounding and effect.
    ConfoundingAndEffect,
    /// Motivational example 1–4.
    Motivational(u8),
}

/// Beta(2, 4) density, `20 x (1 − x)³` on `[0, 1]`.
pub fn beta24_density(x: f64) -> f64 {
    if (0.0..=1.0).contains(&x) {
        20.0 * x * (1.0 - x).powi(3)
    } else {
        0.0
    }
}

/// `η(x) = 1 + 1 / (1 + exp(−20 (x − 1/3)))`.
pub fn eta(x: f64) -> f64 {
    1.0 + 1.0 / (1.0 + (-20.0 * (x - 1.0 / 3.0)).exp())
}

/// A univariate normal law.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gaussian {
    pub mean: f64,
    pub sd: f64,
}

impl SimulationRegime {
    pub fn all_benchmarks() -> [SimulationRegime; 4] {
        use SimulationRegime::*;
        [Nothing, Confounding, Effect, ConfoundingAndEffect]
    }

    pub fn is_motivational(&self) -> bool {
        matches!(self, SimulationRegime::Motivational(_))
    }

    pub fn test_point(&self) -> [f64; 5] {
        if self.is_motivational() {
            MOTIVATIONAL_TEST_POINT
        } else {
            REGIME_TEST_POINT
        }
    }

    /// `P(W = 1 | X = x)`.
    pub fn propensity(&self, x: &[f64]) -> f64 {
        use SimulationRegime::*;
        match self {
            Confounding | ConfoundingAndEffect => 0.25 * (1.0 + beta24_density(x[2])),
            Nothing | Effect | Motivational(_) => 0.5,
        }
    }

    /// Effect modifier `t(x)` of the benchmark regimes (zero otherwise).
    pub fn effect(&self, x: &[f64]) -> f64 {
        use SimulationRegime::*;
        match self {
            Effect | ConfoundingAndEffect => eta(x[0]) * eta(x[1]),
            Nothing | Confounding | Motivational(_) => 0.0,
        }
    }

    /// Law of `Y | X = x, W = treated`.
    pub fn outcome_law(&self, x: &[f64], treated: bool) -> Gaussian {
        let control = Gaussian { mean: 0.0, sd: 1.0 };
        match *self {
            SimulationRegime::Motivational(_) if !treated => control,
            SimulationRegime::Motivational(id) => {
                let x1 = x[0];
                match id {
                    2 => Gaussian { mean: x1, sd: 1.0 },
                    3 => Gaussian { mean: 0.0, sd: 1.0 / x1 },
                    4 => Gaussian { mean: x1, sd: x1 },
                    _ => control,
                }
            }
            _ => {
                let shift = if treated { 0.5 } else { -0.5 };
                Gaussian {
                    mean: 2.0 * x[2] - 1.0 + shift * self.effect(x),
                    sd: 1.0,
                }
            }
        }
    }

    fn covariate_range(&self) -> (f64, f64) {
        if self.is_motivational() {
            (2.0, 3.0)
        } else {
            (0.0, 1.0)
        }
    }
}

impl fmt::Display for SimulationRegime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use SimulationRegime::*;
        match self {
            Nothing => f.write_str("1"),
            Confounding => f.write_str("2"),
            Effect => f.write_str("3"),
            ConfoundingAndEffect => f.write_str("4"),
            Motivational(id) => write!(f, "m{id}"),
        }
    }
}

impl FromStr for SimulationRegime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        use SimulationRegime::*;
        Ok(match s {
            "1" => Nothing,
            "2" => Confounding,
            "3" => Effect,
            "4" => ConfoundingAndEffect,
            "m1" => Motivational(1),
            "m2" => Motivational(2),
            "m3" => Motivational(3),
            "m4" => Motivational(4),
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown regime `{other}` (expected 1-4 or m1-m4)"
                )))
            }
        })
    }
}

impl TryFrom<String> for SimulationRegime {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<SimulationRegime> for String {
    fn from(r: SimulationRegime) -> String {
        r.to_string()
    }
}

fn normal(law: Gaussian) -> Normal<f64> {
    Normal::new(law.mean, law.sd).expect("finite positive sd")
}

/// `n` i.i.d. draws `(X, W, Y)` from `regime`.
pub fn simulate_dataset<R: Rng + ?Sized>(regime: SimulationRegime, n: usize, rng: &mut R) -> Dataset {
    let p = NUM_COVARIATES;
    let (lo, hi) = regime.covariate_range();
    let mut x = Vec::with_capacity(n * p);
    let mut w = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let row: Vec<f64> = (0..p).map(|_| lo + (hi - lo) * rng.random::<f64>()).collect();
        let treated = rng.random::<f64>() < regime.propensity(&row);
        y.push(normal(regime.outcome_law(&row, treated)).sample(rng));
        w.push(treated);
        x.extend(row);
    }
    Dataset::new(Matrix::new(n, p, x).expect("shape"), w, Matrix::column(y)).expect("finite draws")
}

/// Motivational example `id` and the arm laws at its test point.
pub fn motivational_example<R: Rng + ?Sized>(
    id: u8,
    n: usize,
    rng: &mut R,
) -> Result<(Dataset, Gaussian, Gaussian)> {
    if !(1..=4).contains(&id) {
        return Err(Error::InvalidConfig(format!("motivational example {id} does not exist")));
    }
    let regime = SimulationRegime::Motivational(id);
    let x = MOTIVATIONAL_TEST_POINT;
    Ok((
        simulate_dataset(regime, n, rng),
        regime.outcome_law(&x, true),
        regime.outcome_law(&x, false),
    ))
}

/// `m` outcome draws at `x` under treatment and under control.
pub fn conditional_draws<R: Rng + ?Sized>(
    regime: SimulationRegime,
    x: &[f64],
    m: usize,
    rng: &mut R,
) -> (Vec<f64>, Vec<f64>) {
    let t = normal(regime.outcome_law(x, true));
    let c = normal(regime.outcome_law(x, false));
    let treated = (0..m).map(|_| t.sample(rng)).collect();
    let control = (0..m).map(|_| c.sample(rng)).collect();
    (treated, control)
}

/// Empirical witness `(1/m) Σ k(Y¹_j, y) − (1/m) Σ k(Y⁰_j, y)` of two samples.
pub fn sample_witness(treated: &[f64], control: &[f64], grid: &Matrix, spec: &KernelSpec) -> Vec<f64> {
    let mean_embedding = |s: &[f64], y: f64| {
        s.iter().map(|&v| spec.eval(&[v], &[y])).sum::<f64>() / s.len() as f64
    };
    grid.iter_rows()
        .map(|y| mean_embedding(treated, y[0]) - mean_embedding(control, y[0]))
        .collect()
}

/// Monte Carlo ground-truth witness at `x` from `m` draws per arm.
pub fn true_witness<R: Rng + ?Sized>(
    regime: SimulationRegime,
    x: &[f64],
    grid: &Matrix,
    spec: &KernelSpec,
    m: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if m == 0 {
        return Err(Error::InvalidConfig("need at least one ground-truth draw".into()));
    }
    if grid.cols() != 1 || spec.outcome_dim() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: grid.cols(),
        });
    }
    let (t, c) = conditional_draws(regime, x, m, rng);
    Ok(sample_witness(&t, &c, grid, spec))
}

/// Mean absolute pointwise difference.
pub fn mae(estimate: &[f64], truth: &[f64]) -> Result<f64> {
    if estimate.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: estimate.len(),
            right: truth.len(),
        });
    }
    if estimate.is_empty() {
        return Ok(0.0);
    }
    Ok(estimate.iter().zip(truth).map(|(a, b)| (a - b).abs()).sum::<f64>() / estimate.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// One forest with the weighted-MMD criterion.
    CausalDrf,
    /// Two plain forests, one per arm.
    TwoDrf,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::CausalDrf => "causal_drf",
            Method::TwoDrf => "two_drf",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "causal" | "causal_drf" | "causal-drf" => Ok(Method::CausalDrf),
            "two-drf" | "two_drf" => Ok(Method::TwoDrf),
            other => Err(Error::InvalidConfig(format!("unknown method `{other}`"))),
        }
    }
}

/// Metrics of one replication.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Replication {
    pub seed: u64,
    pub mae: f64,
    /// Band contains the true witness at every grid point.
    pub covered: bool,
    /// The H0 test rejected at the band's level.
    pub rejected: bool,
    pub half_width: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub regime: SimulationRegime,
    pub n: usize,
    pub n_sims: usize,
    pub method: Method,
    pub mae_mean: f64,
    pub mae_sd: f64,
    /// Fraction of replications whose band covers the truth everywhere.
    pub coverage_rate: f64,
    /// Binomial standard error of `coverage_rate`.
    pub coverage_se: f64,
    pub rejection_rate: f64,
    pub alpha: f64,
    pub seed: u64,
    pub replications: Vec<Replication>,
    /// Wall-clock seconds; not reproducible, so excluded from serialized output.
    #[serde(skip)]
    pub runtime_secs: f64,
}

/// Seed of replication `r` under `master_seed`.
pub fn replication_seed(master_seed: u64, r: usize) -> u64 {
    rng::derive_seed(master_seed, &[r as u64])
}

/// Simulates, fits and scores a single replication.
pub fn run_replication(
    regime: SimulationRegime,
    n: usize,
    method: Method,
    config: &ForestConfig,
    seed: u64,
) -> Result<Replication> {
    let mut data_rng = rng::stream(seed, &[0]);
    let data = simulate_dataset(regime, n, &mut data_rng);
    let config = ForestConfig {
        seed: rng::derive_seed(seed, &[1]),
        ..config.clone()
    };
    let x = regime.test_point();
    let model: Box<dyn WeightModel> = match method {
        Method::CausalDrf => Box::new(CausalDrfModel::fit(&data, &config)?),
        Method::TwoDrf => Box::new(TwoForestModel::fit(&data, &config)?),
    };
    let bundle = model.weights_at(&x)?;

    let mut truth_rng = rng::stream(seed, &[2]);
    let (t, c) = conditional_draws(regime, &x, TRUTH_DRAWS, &mut truth_rng);
    let (lo, hi) = t
        .iter()
        .chain(&c)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let grid = linear_grid(lo, hi, DEFAULT_GRID_SIZE);
    let truth = sample_witness(&t, &c, &grid, model.kernel());

    let band = band_from_bundle(&bundle, data.y(), model.kernel(), &grid, config.significance_alpha)?;
    Ok(Replication {
        seed,
        mae: mae(&band.estimate, &truth)?,
        covered: band.covers(&truth),
        rejected: band.test.reject,
        half_width: band.half_width,
    })
}

/// Runs `n_sims` independent replications and averages their metrics.
///
/// Replication `r` depends only on `(master_seed, r)`.
pub fn run_study(
    regime: SimulationRegime,
    n: usize,
    n_sims: usize,
    method: Method,
    config: &ForestConfig,
    master_seed: u64,
) -> Result<StudyReport> {
    if n_sims == 0 {
        return Err(Error::InvalidConfig("n_sims must be >= 1".into()));
    }
    let start = Instant::now();
    let replications = (0..n_sims)
        .into_par_iter()
        .map(|r| run_replication(regime, n, method, config, replication_seed(master_seed, r)))
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(regime, n, method, config.significance_alpha, master_seed, replications, start.elapsed().as_secs_f64()))
}

fn summarize(
    regime: SimulationRegime,
    n: usize,
    method: Method,
    alpha: f64,
    seed: u64,
    replications: Vec<Replication>,
    runtime_secs: f64,
) -> StudyReport {
    let k = replications.len() as f64;
    let mae_mean = replications.iter().map(|r| r.mae).sum::<f64>() / k;
    let mae_sd = if replications.len() > 1 {
        (replications.iter().map(|r| (r.mae - mae_mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
    } else {
        0.0
    };
    let coverage_rate = replications.iter().filter(|r| r.covered).count() as f64 / k;
    let rejection_rate = replications.iter().filter(|r| r.rejected).count() as f64 / k;
    StudyReport {
        regime,
        n,
        n_sims: replications.len(),
        method,
        mae_mean,
        mae_sd,
        coverage_rate,
        coverage_se: (coverage_rate * (1.0 - coverage_rate) / k).sqrt(),
        rejection_rate,
        alpha,
        seed,
        replications,
        runtime_secs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn closed_form_pieces() {
        assert_eq!(eta(1.0 / 3.0), 1.5);
        let e = SimulationRegime::Confounding.propensity(&[0.0, 0.0, 0.5, 0.0, 0.0]);
        assert!((e - 0.5625).abs() < 1e-15);
        let t = SimulationRegime::Effect.effect(&REGIME_TEST_POINT);
        assert!((t - eta(0.7) * eta(0.3)).abs() < 1e-15);
        assert!((t - 2.678).abs() < 1e-3, "{t}");
    }

    #[test]
    fn regime_ids_round_trip() {
        for id in ["1", "2", "3", "4", "m1", "m2", "m3", "m4"] {
            let r: SimulationRegime = id.parse().unwrap();
            assert_eq!(r.to_string(), id);
        }
        assert!("5".parse::<SimulationRegime>().is_err());
        assert!("m5".parse::<SimulationRegime>().is_err());
    }

    #[test]
    fn motivational_laws() {
        let x = MOTIVATIONAL_TEST_POINT;
        let law = SimulationRegime::Motivational(3).outcome_law(&x, true);
        assert!((law.sd * law.sd - 0.16).abs() < 1e-15);
        assert_eq!(SimulationRegime::Motivational(2).outcome_law(&x, true).mean, 2.5);
        assert_eq!(
            SimulationRegime::Motivational(4).outcome_law(&x, true),
            Gaussian { mean: 2.5, sd: 2.5 }
        );
        assert_eq!(
            SimulationRegime::Motivational(4).outcome_law(&x, false),
            Gaussian { mean: 0.0, sd: 1.0 }
        );
        let mut r = ChaCha8Rng::seed_from_u64(0);
        assert!(motivational_example(5, 10, &mut r).is_err());
        let (data, _, _) = motivational_example(1, 50, &mut r).unwrap();
        assert!(data.x().as_slice().iter().all(|&v| (2.0..3.0).contains(&v)));
    }

    #[test]
    fn mae_basics() {
        assert_eq!(mae(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        let m = mae(&[1.1, 2.1, -0.9], &[1.0, 2.0, -1.0]).unwrap();
        assert!((m - 0.1).abs() < 1e-12);
        assert!(mae(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn single_replication_report() {
        let cfg = ForestConfig {
            num_trees: 40,
            num_groups: 8,
            ..Default::default()
        };
        let report = run_study(SimulationRegime::Nothing, 200, 1, Method::CausalDrf, &cfg, 3).unwrap();
        let rep = &report.replications[0];
        assert_eq!(report.mae_mean, rep.mae);
        assert_eq!(report.coverage_rate, if rep.covered { 1.0 } else { 0.0 });
        assert_eq!(report.n_sims, 1);
        let again = run_replication(SimulationRegime::Nothing, 200, Method::CausalDrf, &cfg, replication_seed(3, 0)).unwrap();
        assert_eq!(&again, rep);
    }
}
