//! Exact covariance of the minimum distance estimator, the standardization
//! it implies, and an empirical normality diagnostic for simulation output.
//!
//! With errors of covariance Ω, the estimator `(X'DD'X)^{-1} X'DD'y` has
//! covariance `Sigma_beta = G^{-1} Sigma_xdo G^{-1}` where `G = X'DD'X` and
//! `Sigma_xdo = X'D (D'ΩD) D'X`. When D whitens Ω (`D'ΩD = I`) the sandwich
//! collapses to `G^{-1}`.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::covariance::CovarianceModel;
use crate::error::{Error, Result};
use crate::linalg::{max_abs, spd_solve, sym_inv_sqrt};
use crate::panel::PanelDataset;
use crate::weights::WeightMatrix;

/// Tolerance on `max |D'ΩD - I|` under which D counts as whitening Ω.
pub const WHITENED_TOL: f64 = 1e-8;

/// The covariance pieces for one (data, D, Ω) triple.
#[derive(Debug, Clone)]
pub struct CovarianceReport {
    /// `X'D D'ΩD D'X`, the middle of the sandwich.
    pub sigma_xdomega: DMatrix<f64>,
    /// `G^{-1} sigma_xdomega G^{-1}` with `G = X'DD'X`.
    pub sigma_beta: DMatrix<f64>,
    /// True when `max |D'ΩD - I| <= WHITENED_TOL`.
    pub whitened: bool,
    /// `tr(X sigma_xdomega^{-1} X')`, evaluated cyclically.
    pub trace_stat: f64,
}

/// `tr(X S^{-1} X')` computed as `tr(S^{-1} (X'X))`; the nT x nT product is
/// never formed. Zero regressors short-circuit to zero without a solve.
fn cyclic_trace(x: &DMatrix<f64>, s: &DMatrix<f64>) -> Result<f64> {
    let xtx = x.transpose() * x;
    if max_abs(&xtx) == 0.0 {
        return Ok(0.0);
    }
    Ok(spd_solve(s, &xtx)?.trace())
}

/// Exact covariance of the minimum distance estimator for weight matrix D
/// under error covariance Ω. All Ω products go through its block structure.
pub fn covariance_beta(
    data: &PanelDataset,
    d: &WeightMatrix,
    omega: &CovarianceModel,
) -> Result<CovarianceReport> {
    d.check_shape(data)?;
    if omega.n() != data.n() || omega.t() != data.t() {
        return Err(Error::DimensionMismatch(format!(
            "covariance model is laid out for n = {}, T = {} but the panel \
             has n = {}, T = {}",
            omega.n(),
            omega.t(),
            data.n(),
            data.t()
        )));
    }

    let w = omega.quadratic(d.d(), d.d())?;
    let mut dev: f64 = 0.0;
    for j in 0..w.nrows() {
        for k in 0..w.ncols() {
            let target = if j == k { 1.0 } else { 0.0 };
            dev = dev.max((w[(j, k)] - target).abs());
        }
    }
    let whitened = dev <= WHITENED_TOL;

    let xt = d.d().transpose() * data.x();
    let g = xt.transpose() * &xt;
    let sigma_xdomega = xt.transpose() * &w * &xt;
    let sigma_xdomega = (&sigma_xdomega + sigma_xdomega.transpose()) * 0.5;

    let half = spd_solve(&g, &sigma_xdomega)
        .map_err(|_| Error::SingularMatrix("X'DD'X is singular".into()))?;
    let sandwich = spd_solve(&g, &half.transpose())
        .map_err(|_| Error::SingularMatrix("X'DD'X is singular".into()))?;
    let sigma_beta = (&sandwich + sandwich.transpose()) * 0.5;

    let trace_stat = cyclic_trace(data.x(), &sigma_xdomega).map_err(|_| {
        Error::SingularCovariance(
            "X'D D'ΩD D'X is singular; the trace statistic is undefined".into(),
        )
    })?;

    Ok(CovarianceReport {
        sigma_xdomega,
        sigma_beta,
        whitened,
        trace_stat,
    })
}

/// `Sigma_beta^{-1/2} (beta_hat - beta_true)`; under the estimator's limit
/// distribution this is standard normal coordinate by coordinate.
pub fn standardized_deviation(
    beta_hat: &DVector<f64>,
    beta_true: &DVector<f64>,
    sigma_beta: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    if beta_hat.len() != beta_true.len() || sigma_beta.nrows() != beta_hat.len() {
        return Err(Error::DimensionMismatch(format!(
            "coefficient vectors of length {} and {} with a {}x{} covariance",
            beta_hat.len(),
            beta_true.len(),
            sigma_beta.nrows(),
            sigma_beta.ncols()
        )));
    }
    let root = sym_inv_sqrt(sigma_beta)?;
    Ok(root * (beta_hat - beta_true))
}

/// The cyclic trace `tr(X sigma_xdomega^{-1} X')` for an existing report.
pub fn trace_condition(data: &PanelDataset, report: &CovarianceReport) -> Result<f64> {
    cyclic_trace(data.x(), &report.sigma_xdomega)
}

/// Kolmogorov-Smirnov verdict for one coordinate of the standardized draws.
#[derive(Debug, Clone, Copy)]
pub struct CoordinateDiagnostic {
    pub ks_statistic: f64,
    pub p_value: f64,
    pub mean: f64,
    pub variance: f64,
}

/// Minimum number of standardized draws the diagnostic accepts; the p-values
/// come from the asymptotic Kolmogorov distribution and need the sample size.
pub const MIN_NORMALITY_SAMPLES: usize = 200;

/// Survival function of the Kolmogorov distribution at `x`:
/// `2 sum_{k>=1} (-1)^{k-1} exp(-2 k^2 x^2)`, clamped into [0, 1].
fn kolmogorov_p(x: f64) -> f64 {
    if x < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let term = (-2.0 * (k as f64) * (k as f64) * x * x).exp();
        sum += sign * term;
        if term < 1e-12 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// One-sample Kolmogorov-Smirnov test of each coordinate against the
/// standard normal, with the coordinate's sample mean and variance
/// (denominator R - 1). Vectors must share a common length.
pub fn normality_diagnostic(samples: &[DVector<f64>]) -> Result<Vec<CoordinateDiagnostic>> {
    let r = samples.len();
    if r < MIN_NORMALITY_SAMPLES {
        return Err(Error::InsufficientSamples(format!(
            "normality diagnostic needs at least {MIN_NORMALITY_SAMPLES} \
             draws, got {r}"
        )));
    }
    let p = samples[0].len();
    if p == 0 {
        return Err(Error::InvalidArgument(
            "standardized draws have zero length".into(),
        ));
    }
    if samples.iter().any(|s| s.len() != p) {
        return Err(Error::DimensionMismatch(
            "standardized draws must share a common length".into(),
        ));
    }
    let normal = Normal::new(0.0, 1.0).expect("unit normal");

    let mut out = Vec::with_capacity(p);
    for k in 0..p {
        let mut zs: Vec<f64> = samples.iter().map(|s| s[k]).collect();
        if zs.iter().any(|z| !z.is_finite()) {
            return Err(Error::Numerical(format!(
                "coordinate {} contains non-finite draws",
                k + 1
            )));
        }
        zs.sort_by(|a, b| a.partial_cmp(b).expect("finite draws compare"));

        let rf = r as f64;
        let mut d_stat: f64 = 0.0;
        for (i, &z) in zs.iter().enumerate() {
            let cdf = normal.cdf(z);
            let above = (i + 1) as f64 / rf - cdf;
            let below = cdf - i as f64 / rf;
            d_stat = d_stat.max(above).max(below);
        }

        let mean = zs.iter().sum::<f64>() / rf;
        let variance = zs.iter().map(|z| (z - mean) * (z - mean)).sum::<f64>() / (rf - 1.0);
        out.push(CoordinateDiagnostic {
            ks_statistic: d_stat,
            p_value: kolmogorov_p(rf.sqrt() * d_stat),
            mean,
            variance,
        });
    }
    Ok(out)
}
