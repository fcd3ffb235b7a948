//! Error-distribution samplers, the panel data-generating process, and the
//! replication engine that turns estimator runs into bias / SE / MSE tables.
//!
//! Reproducibility contract: replication `r` draws from a ChaCha stream
//! keyed by `(seed, r)` and nothing else, results are aggregated in
//! replication order, and the table is therefore bit-identical for a given
//! (config, seed) regardless of how many threads ran the replications.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::distr::{Distribution, Open01};
use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::covariance::CovarianceModel;
use crate::error::{Error, Result};
use crate::estimators::{
    estimate_md, estimate_ols, estimate_random_effects, estimate_variance_components,
    estimate_within, Method, RhoVariant,
};
use crate::panel::PanelDataset;
use crate::weights::{d_ols_equivalent, d_omega_eigen, d_pseudo_whitening, EigenSelection, WeightMatrix};

/// Zero-mean error distributions for the two panel error components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DistributionSpec {
    Normal { mu: f64, sigma: f64 },
    Laplace { mu: f64, sigma: f64 },
    Logistic { mu: f64, sigma: f64 },
    /// `weight_a N(0, sigma_a^2) + (1 - weight_a) N(0, sigma_b^2)`.
    MixtureTwoNormals { weight_a: f64, sigma_a: f64, sigma_b: f64 },
}

/// Logistic quantile function `mu + sigma ln(u / (1 - u))`.
pub fn logistic_inverse_cdf(u: f64, mu: f64, sigma: f64) -> f64 {
    mu + sigma * (u / (1.0 - u)).ln()
}

/// Laplace quantile function `mu - sigma sign(u - 1/2) ln(1 - 2|u - 1/2|)`.
pub fn laplace_inverse_cdf(u: f64, mu: f64, sigma: f64) -> f64 {
    let c = u - 0.5;
    mu - sigma * c.signum() * (1.0 - 2.0 * c.abs()).ln()
}

impl DistributionSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            DistributionSpec::Normal { mu, sigma }
            | DistributionSpec::Laplace { mu, sigma }
            | DistributionSpec::Logistic { mu, sigma } => mu.is_finite() && sigma > 0.0,
            DistributionSpec::MixtureTwoNormals {
                weight_a,
                sigma_a,
                sigma_b,
            } => sigma_a > 0.0 && sigma_b > 0.0 && 0.0 < weight_a && weight_a < 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "invalid distribution parameters: {self}"
            )))
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            DistributionSpec::Normal { mu, .. }
            | DistributionSpec::Laplace { mu, .. }
            | DistributionSpec::Logistic { mu, .. } => mu,
            DistributionSpec::MixtureTwoNormals { .. } => 0.0,
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            DistributionSpec::Normal { sigma, .. } => sigma * sigma,
            DistributionSpec::Laplace { sigma, .. } => 2.0 * sigma * sigma,
            DistributionSpec::Logistic { sigma, .. } => {
                sigma * sigma * std::f64::consts::PI * std::f64::consts::PI / 3.0
            }
            DistributionSpec::MixtureTwoNormals {
                weight_a,
                sigma_a,
                sigma_b,
            } => weight_a * sigma_a * sigma_a + (1.0 - weight_a) * sigma_b * sigma_b,
        }
    }

    /// One draw. Laplace and logistic go through their quantile functions on
    /// an open-interval uniform; the normal uses the exact standard-normal
    /// primitive; the mixture picks its component first, then draws.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            DistributionSpec::Normal { mu, sigma } => {
                let z: f64 = StandardNormal.sample(rng);
                mu + sigma * z
            }
            DistributionSpec::Laplace { mu, sigma } => {
                let u: f64 = Open01.sample(rng);
                laplace_inverse_cdf(u, mu, sigma)
            }
            DistributionSpec::Logistic { mu, sigma } => {
                let u: f64 = Open01.sample(rng);
                logistic_inverse_cdf(u, mu, sigma)
            }
            DistributionSpec::MixtureTwoNormals {
                weight_a,
                sigma_a,
                sigma_b,
            } => {
                let u: f64 = Open01.sample(rng);
                let sigma = if u < weight_a { sigma_a } else { sigma_b };
                let z: f64 = StandardNormal.sample(rng);
                sigma * z
            }
        }
    }

    /// The conventional sigma = 5 instance of each named family; the mixture
    /// is 0.9 N(0, 4) + 0.1 N(0, 25).
    pub fn from_family_name(name: &str) -> Result<Self> {
        match name {
            "normal" => Ok(DistributionSpec::Normal { mu: 0.0, sigma: 5.0 }),
            "laplace" => Ok(DistributionSpec::Laplace { mu: 0.0, sigma: 5.0 }),
            "logistic" => Ok(DistributionSpec::Logistic { mu: 0.0, sigma: 5.0 }),
            "mtn" => Ok(DistributionSpec::MixtureTwoNormals {
                weight_a: 0.9,
                sigma_a: 2.0,
                sigma_b: 5.0,
            }),
            other => Err(Error::InvalidArgument(format!(
                "unknown distribution family {other:?}; expected one of \
                 normal, laplace, logistic, mtn"
            ))),
        }
    }
}

impl fmt::Display for DistributionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            DistributionSpec::Normal { mu, sigma } => write!(f, "normal({mu},{sigma})"),
            DistributionSpec::Laplace { mu, sigma } => write!(f, "laplace({mu},{sigma})"),
            DistributionSpec::Logistic { mu, sigma } => write!(f, "logistic({mu},{sigma})"),
            DistributionSpec::MixtureTwoNormals {
                weight_a,
                sigma_a,
                sigma_b,
            } => write!(f, "mtn({weight_a},{sigma_a},{sigma_b})"),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ols" => Ok(Method::Ols),
            "within" => Ok(Method::Within),
            "re" => Ok(Method::RandomEffects),
            "md" => Ok(Method::Md),
            other => Err(Error::InvalidArgument(format!(
                "unknown estimator {other:?}; expected one of ols, within, re, md"
            ))),
        }
    }
}

/// How the weight matrix for the minimum distance run is built. All
/// strategies act on the within-transformed model, whose error covariance is
/// the demeaned-noise matrix `sigma_nu^2 (I - J/T)` per unit block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DStrategy {
    /// Every positive eigenpair of the demeaned-noise covariance; the weight
    /// matrix squares to its pseudo-inverse. The default.
    PseudoWhitenWithin,
    /// `D = X_w (X_w'X_w)^{-1/2}` from the within-transformed regressors,
    /// reproducing least squares on the within model.
    OlsEquivalent,
    /// The `p` smallest positive eigenpairs (the n zero eigenvalues of the
    /// demeaned-noise covariance are skipped).
    OmegaEigenSmallest,
    /// The `p` largest eigenpairs.
    OmegaEigenLargest,
}

impl fmt::Display for DStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DStrategy::PseudoWhitenWithin => "pseudo-whiten",
            DStrategy::OlsEquivalent => "ols-equiv",
            DStrategy::OmegaEigenSmallest => "omega-eigen-small",
            DStrategy::OmegaEigenLargest => "omega-eigen-large",
        })
    }
}

impl FromStr for DStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pseudo-whiten" => Ok(DStrategy::PseudoWhitenWithin),
            "ols-equiv" => Ok(DStrategy::OlsEquivalent),
            "omega-eigen-small" => Ok(DStrategy::OmegaEigenSmallest),
            "omega-eigen-large" => Ok(DStrategy::OmegaEigenLargest),
            other => Err(Error::InvalidArgument(format!(
                "unknown weight strategy {other:?}; expected one of \
                 pseudo-whiten, ols-equiv, omega-eigen-small, omega-eigen-large"
            ))),
        }
    }
}

/// Full description of one simulation study.
#[derive(Debug, Clone)]
pub struct SimulationConfig {
    pub n: usize,
    pub t: usize,
    pub p: usize,
    pub beta_true: DVector<f64>,
    pub gamma_dist: DistributionSpec,
    pub nu_dist: DistributionSpec,
    /// Regressor entries are iid uniform on this interval.
    pub x_range: (f64, f64),
    pub estimators: Vec<Method>,
    pub d_strategy: DStrategy,
    pub reps: usize,
    pub seed: u64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            n: 10,
            t: 5,
            p: 3,
            beta_true: DVector::from_column_slice(&[-2.0, 1.2, 3.3]),
            gamma_dist: DistributionSpec::Normal { mu: 0.0, sigma: 5.0 },
            nu_dist: DistributionSpec::Normal { mu: 0.0, sigma: 5.0 },
            x_range: (0.0, 30.0),
            estimators: vec![Method::Ols, Method::Within, Method::RandomEffects, Method::Md],
            d_strategy: DStrategy::PseudoWhitenWithin,
            reps: 1000,
            seed: 42,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return Err(Error::InvalidArgument("need at least one unit".into()));
        }
        if self.t < 2 {
            return Err(Error::InvalidArgument(
                "need at least two periods per unit".into(),
            ));
        }
        if self.p < 1 {
            return Err(Error::InvalidArgument("need at least one regressor".into()));
        }
        if self.beta_true.len() != self.p {
            return Err(Error::DimensionMismatch(format!(
                "beta has {} entries but p = {}",
                self.beta_true.len(),
                self.p
            )));
        }
        if self.beta_true.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidArgument("beta must be finite".into()));
        }
        self.gamma_dist.validate()?;
        self.nu_dist.validate()?;
        let (lo, hi) = self.x_range;
        if !lo.is_finite() || !hi.is_finite() || lo >= hi {
            return Err(Error::InvalidArgument(format!(
                "x range must be a nonempty finite interval, got ({lo}, {hi})"
            )));
        }
        if self.estimators.is_empty() {
            return Err(Error::InvalidArgument(
                "at least one estimator must be requested".into(),
            ));
        }
        if self.reps < 1 {
            return Err(Error::InvalidArgument(
                "at least one replication is required".into(),
            ));
        }
        Ok(())
    }

    /// One-line `key=value` echo of every field except the seed.
    pub fn echo(&self) -> String {
        let beta = self
            .beta_true
            .iter()
            .map(|b| b.to_string())
            .collect::<Vec<_>>()
            .join(",");
        let estimators = self
            .estimators
            .iter()
            .map(|m| m.to_string())
            .collect::<Vec<_>>()
            .join(",");
        format!(
            "n={} T={} p={} beta={} gamma={} nu={} x-range={},{} estimators={} \
             d-strategy={} reps={}",
            self.n,
            self.t,
            self.p,
            beta,
            self.gamma_dist,
            self.nu_dist,
            self.x_range.0,
            self.x_range.1,
            estimators,
            self.d_strategy,
            self.reps
        )
    }
}

/// The RNG stream for replication `rep`: same seed, distinct stream, so
/// replications are independent and schedule-free.
pub fn replication_rng(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}

/// Draws one panel: X entries first (row-major), then the n individual
/// effects, then the nT remainder disturbances. The fixed draw order is part
/// of the determinism contract. Returns the dataset and the realized errors.
pub fn generate_dataset<R: Rng + ?Sized>(
    config: &SimulationConfig,
    rng: &mut R,
) -> Result<(PanelDataset, DVector<f64>)> {
    config.validate()?;
    let nt = config.n * config.t;
    let (lo, hi) = config.x_range;
    let width = hi - lo;

    let mut x = DMatrix::zeros(nt, config.p);
    for r in 0..nt {
        for c in 0..config.p {
            x[(r, c)] = lo + width * rng.random::<f64>();
        }
    }
    let gammas: Vec<f64> = (0..config.n)
        .map(|_| config.gamma_dist.sample(rng))
        .collect();
    let mut eps = DVector::zeros(nt);
    for i in 0..config.n {
        for s in 0..config.t {
            eps[i * config.t + s] = gammas[i] + config.nu_dist.sample(rng);
        }
    }
    let y = &x * &config.beta_true + &eps;
    let data = PanelDataset::new(config.n, config.t, x, y)?;
    Ok((data, eps))
}

/// Bias, population standard error, and mean squared error of one
/// coefficient across replications.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoefficientMetrics {
    pub bias: f64,
    pub se: f64,
    pub mse: f64,
}

/// Per-coefficient metrics over a set of estimates. The standard error is
/// the population standard deviation (divide by R, not R - 1), which makes
/// `mse = bias^2 + se^2` an identity rather than an approximation.
pub fn metrics(estimates: &[DVector<f64>], beta_true: &DVector<f64>) -> Result<Vec<CoefficientMetrics>> {
    if estimates.is_empty() {
        return Err(Error::InsufficientSamples(
            "metrics need at least one estimate".into(),
        ));
    }
    let p = beta_true.len();
    if estimates.iter().any(|e| e.len() != p) {
        return Err(Error::DimensionMismatch(
            "estimates and beta must share a common length".into(),
        ));
    }
    let r = estimates.len() as f64;
    let mut out = Vec::with_capacity(p);
    for k in 0..p {
        let mean = estimates.iter().map(|e| e[k]).sum::<f64>() / r;
        let var = estimates
            .iter()
            .map(|e| (e[k] - mean) * (e[k] - mean))
            .sum::<f64>()
            / r;
        let mse = estimates
            .iter()
            .map(|e| (e[k] - beta_true[k]) * (e[k] - beta_true[k]))
            .sum::<f64>()
            / r;
        out.push(CoefficientMetrics {
            bias: mean - beta_true[k],
            se: var.sqrt(),
            mse,
        });
    }
    Ok(out)
}

/// One output row: an estimator, a coefficient (1-based), and its metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub method: Method,
    pub coefficient: usize,
    pub bias: f64,
    pub se: f64,
    pub mse: f64,
}

/// Aggregated simulation output plus the config echo that reproduces it.
#[derive(Debug, Clone)]
pub struct SimulationTable {
    pub rows: Vec<MetricRow>,
    /// Replications in which an estimator failed and was skipped (at most
    /// 1% of reps each; beyond that the run aborts instead).
    pub failures: Vec<(Method, usize)>,
    pub config: SimulationConfig,
}

impl SimulationTable {
    /// CSV rendering with the reproducibility header.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("# config: {}\n", self.config.echo()));
        out.push_str(&format!("# seed: {}\n", self.config.seed));
        for (method, count) in &self.failures {
            if *count > 0 {
                out.push_str(&format!("# failures: {method}={count}\n"));
            }
        }
        out.push_str("estimator,coefficient,bias,se,mse\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                row.method, row.coefficient, row.bias, row.se, row.mse
            ));
        }
        out
    }
}

/// The weight matrix a strategy prescribes for the within-transformed model,
/// or `None` when it depends on the regressors (and so must be rebuilt per
/// dataset). The estimate is invariant to the overall scale of D, so the
/// demeaned-noise covariance is taken at unit variance.
pub fn within_pipeline_weights(
    strategy: DStrategy,
    n: usize,
    t: usize,
    p: usize,
) -> Result<Option<WeightMatrix>> {
    let omega_w = CovarianceModel::within_noise(1.0, n, t)?;
    match strategy {
        DStrategy::OlsEquivalent => Ok(None),
        DStrategy::PseudoWhitenWithin => Ok(Some(d_pseudo_whitening(&omega_w)?)),
        DStrategy::OmegaEigenSmallest => {
            // Positions n..n+p of the ascending spectrum: right past the n
            // zero eigenvalues contributed by the demeaning projection.
            let idx: Vec<usize> = (n..n + p).collect();
            Ok(Some(d_omega_eigen(&omega_w, p, EigenSelection::Indices(idx))?))
        }
        DStrategy::OmegaEigenLargest => Ok(Some(d_omega_eigen(
            &omega_w,
            p,
            EigenSelection::LargestEigenvalues,
        )?)),
    }
}

/// Runs every requested estimator on one replication's dataset. A `None`
/// records an estimator failure for that replication.
fn run_estimators(
    config: &SimulationConfig,
    data: &PanelDataset,
    shared_d: Option<&WeightMatrix>,
) -> Vec<Option<DVector<f64>>> {
    config
        .estimators
        .iter()
        .map(|method| {
            let fitted = match method {
                Method::Ols => estimate_ols(data).map(|r| r.beta_hat),
                Method::Within => estimate_within(data).map(|r| r.beta_hat),
                Method::RandomEffects => estimate_variance_components(data, RhoVariant::Standard)
                    .and_then(|vc| estimate_random_effects(data, &vc))
                    .map(|r| r.beta_hat),
                Method::Md => {
                    let dw = data.within_transform();
                    match shared_d {
                        Some(d) => estimate_md(&dw, d).map(|r| r.beta_hat),
                        None => d_ols_equivalent(&dw)
                            .and_then(|d| estimate_md(&dw, &d))
                            .map(|r| r.beta_hat),
                    }
                }
            };
            fitted.ok()
        })
        .collect()
}

fn aggregate(
    config: &SimulationConfig,
    per_rep: Vec<Vec<Option<DVector<f64>>>>,
) -> Result<SimulationTable> {
    let reps = config.reps;
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (e_idx, method) in config.estimators.iter().enumerate() {
        let estimates: Vec<DVector<f64>> = per_rep
            .iter()
            .filter_map(|rep| rep[e_idx].clone())
            .collect();
        let failed = reps - estimates.len();
        if (failed as f64) > 0.01 * reps as f64 {
            return Err(Error::Numerical(format!(
                "estimator {method} failed in {failed} of {reps} replications"
            )));
        }
        failures.push((*method, failed));
        let stats = metrics(&estimates, &config.beta_true)?;
        for (k, m) in stats.iter().enumerate() {
            rows.push(MetricRow {
                method: *method,
                coefficient: k + 1,
                bias: m.bias,
                se: m.se,
                mse: m.mse,
            });
        }
    }
    Ok(SimulationTable {
        rows,
        failures,
        config: config.clone(),
    })
}

fn replication(
    config: &SimulationConfig,
    shared_d: Option<&WeightMatrix>,
    rep: u64,
) -> Result<Vec<Option<DVector<f64>>>> {
    let mut rng = replication_rng(config.seed, rep);
    let (data, _) = generate_dataset(config, &mut rng)?;
    Ok(run_estimators(config, &data, shared_d))
}

/// The full study, one replication at a time on the calling thread.
pub fn run_simulation_sequential(config: &SimulationConfig) -> Result<SimulationTable> {
    config.validate()?;
    let shared_d = within_pipeline_weights(config.d_strategy, config.n, config.t, config.p)?;
    let per_rep = (0..config.reps as u64)
        .map(|rep| replication(config, shared_d.as_ref(), rep))
        .collect::<Result<Vec<_>>>()?;
    aggregate(config, per_rep)
}

/// The full study. With the `parallel` feature the replications run on the
/// rayon pool; the per-replication RNG streams and the ordered aggregation
/// make the output identical to the sequential path bit for bit.
#[cfg(feature = "parallel")]
pub fn run_simulation(config: &SimulationConfig) -> Result<SimulationTable> {
    config.validate()?;
    let shared_d = within_pipeline_weights(config.d_strategy, config.n, config.t, config.p)?;
    let per_rep = (0..config.reps as u64)
        .into_par_iter()
        .map(|rep| replication(config, shared_d.as_ref(), rep))
        .collect::<Result<Vec<_>>>()?;
    aggregate(config, per_rep)
}

/// The full study; without the `parallel` feature this is the sequential
/// path under its usual name.
#[cfg(not(feature = "parallel"))]
pub fn run_simulation(config: &SimulationConfig) -> Result<SimulationTable> {
    run_simulation_sequential(config)
}
