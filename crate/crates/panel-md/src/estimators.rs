//! The four estimators: ordinary least squares, the within estimator, the
//! random-effects (quasi-demeaning) estimator, and the closed-form minimum
//! distance estimator, plus the quadratic distance function the latter
//! minimizes and its analytic gradient.
//!
//! The minimum distance criterion for a weight matrix D is
//! `L(b) = 4 * ||D'(y - Xb)||^2`, an exact quadratic in `b` whose minimizer
//! solves the normal equations `(X'DD'X) b = X'DD'y`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{spd_solve, spd_solve_vec};
use crate::panel::PanelDataset;
use crate::weights::{validate_d, AssumptionReport, WeightMatrix};

/// Estimator tags, also used to select estimators in simulation configs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Ols,
    Within,
    RandomEffects,
    Md,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Ols => "ols",
            Method::Within => "within",
            Method::RandomEffects => "re",
            Method::Md => "md",
        })
    }
}

/// Which formula turns variance components into the quasi-demeaning fraction.
///
/// `Standard` is the conventional `1 - sigma_nu / sqrt(sigma_nu^2 + T*sigma_gamma^2)`.
/// `Verbatim` keeps `sigma_nu^2` in the numerator; that expression is not
/// scale-invariant and can go negative, so the result is clamped like any
/// other estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RhoVariant {
    Standard,
    Verbatim,
}

/// Upper clamp for estimated demeaning fractions; estimation never returns
/// exactly 1 (which would be the pure within transform).
pub const RHO_MAX: f64 = 1.0 - 1e-12;

/// First-order-condition bound checked at the closed-form minimizer,
/// relative to the scale of the normal equations. The criterion is invariant
/// to uniform rescaling of D, so the check has to be too: an absolute bound
/// would spuriously reject weight matrices with large entries.
pub const FIRST_ORDER_TOL: f64 = 1e-8;

/// Estimated error variance components and the demeaning fraction they imply.
#[derive(Debug, Clone, Copy)]
pub struct VarianceComponents {
    pub sigma_gamma2: f64,
    pub sigma_nu2: f64,
    pub rho_hat: f64,
}

impl VarianceComponents {
    /// Components with a caller-chosen demeaning fraction in [0, 1]. The
    /// endpoints are allowed so the ordinary-least-squares (0) and within (1)
    /// special cases can be forced.
    pub fn with_rho(sigma_gamma2: f64, sigma_nu2: f64, rho_hat: f64) -> Result<Self> {
        if !sigma_gamma2.is_finite() || sigma_gamma2 < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "individual-effect variance must be nonnegative, got {sigma_gamma2}"
            )));
        }
        if !sigma_nu2.is_finite() || sigma_nu2 <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "remainder variance must be positive, got {sigma_nu2}"
            )));
        }
        if !rho_hat.is_finite() || !(0.0..=1.0).contains(&rho_hat) {
            return Err(Error::InvalidArgument(format!(
                "demeaning fraction must lie in [0, 1], got {rho_hat}"
            )));
        }
        Ok(VarianceComponents {
            sigma_gamma2,
            sigma_nu2,
            rho_hat,
        })
    }
}

/// One estimator's output: the coefficients, optionally a coefficient
/// covariance, the demeaning fraction (random effects only), and the weight
/// diagnostics (minimum distance only).
#[derive(Debug, Clone)]
pub struct EstimateReport {
    pub method: Method,
    pub beta_hat: DVector<f64>,
    pub sigma_beta: Option<DMatrix<f64>>,
    pub rho_hat: Option<f64>,
    pub diagnostics: Option<AssumptionReport>,
}

/// Least squares on (x, y) returning the coefficients, the residual sum of
/// squares, and the normal-equations matrix for covariance reuse.
fn classical_fit(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    context: &str,
) -> Result<(DVector<f64>, f64, DMatrix<f64>)> {
    let g = x.transpose() * x;
    let rhs = x.transpose() * y;
    let beta = spd_solve_vec(&g, &rhs)
        .map_err(|_| Error::RankDeficient(format!("{context} is singular to working precision")))?;
    let resid = y - x * &beta;
    Ok((beta, resid.norm_squared(), g))
}

/// `scale * G^{-1}`, symmetrized against roundoff.
fn scaled_inverse(g: &DMatrix<f64>, scale: f64) -> Result<DMatrix<f64>> {
    let inv = spd_solve(g, &DMatrix::identity(g.nrows(), g.ncols()))?;
    let sym = (&inv + inv.transpose()) * (0.5 * scale);
    Ok(sym)
}

/// Ordinary least squares. The reported covariance is the classical
/// homoskedastic `sigma^2 (X'X)^{-1}` (omitted when there are no residual
/// degrees of freedom); with two-component panel errors it understates the
/// truth, which is exactly what the estimator comparisons are about.
pub fn estimate_ols(data: &PanelDataset) -> Result<EstimateReport> {
    let (beta_hat, ssr, g) = classical_fit(data.x(), data.y(), "X'X")?;
    let dof = data.nt() as isize - data.p() as isize;
    let sigma_beta = if dof > 0 {
        Some(scaled_inverse(&g, ssr / dof as f64)?)
    } else {
        None
    };
    Ok(EstimateReport {
        method: Method::Ols,
        beta_hat,
        sigma_beta,
        rho_hat: None,
        diagnostics: None,
    })
}

/// The within estimator: least squares on unit-demeaned data, which wipes out
/// any time-invariant error component. Time-invariant regressors are wiped
/// out too and rejected by name.
pub fn estimate_within(data: &PanelDataset) -> Result<EstimateReport> {
    let dw = data.within_transform();
    for k in 0..data.p() {
        let demeaned = dw.x().column(k).norm();
        let raw = data.x().column(k).norm();
        if demeaned <= 1e-10 * (1.0 + raw) {
            return Err(Error::RankDeficient(format!(
                "regressor x{} is time-invariant within every unit; \
                 the within transform annihilates it",
                k + 1
            )));
        }
    }
    let (beta_hat, ssr, g) = classical_fit(dw.x(), dw.y(), "within-transformed X'X")?;
    let dof = (data.n() * (data.t() - 1)) as isize - data.p() as isize;
    let sigma_beta = if dof > 0 {
        Some(scaled_inverse(&g, ssr / dof as f64)?)
    } else {
        None
    };
    Ok(EstimateReport {
        method: Method::Within,
        beta_hat,
        sigma_beta,
        rho_hat: None,
        diagnostics: None,
    })
}

/// Demeaning fraction from variance components, clamped to [0, RHO_MAX].
pub fn rho_from_components(
    sigma_gamma2: f64,
    sigma_nu2: f64,
    t: usize,
    variant: RhoVariant,
) -> f64 {
    let root = (sigma_nu2 + t as f64 * sigma_gamma2).sqrt();
    let raw = match variant {
        RhoVariant::Standard => 1.0 - sigma_nu2.sqrt() / root,
        RhoVariant::Verbatim => 1.0 - sigma_nu2 / root,
    };
    raw.clamp(0.0, RHO_MAX)
}

/// Variance components by the within / between decomposition:
/// `sigma_nu^2` from the within residual sum of squares over `n(T-1) - p`,
/// the between residual variance from least squares on unit means over
/// `n - p`, and `sigma_gamma^2 = max(0, between - sigma_nu^2 / T)`.
pub fn estimate_variance_components(
    data: &PanelDataset,
    variant: RhoVariant,
) -> Result<VarianceComponents> {
    if data.n() < 2 {
        return Err(Error::InsufficientSamples(
            "variance components need at least two units".into(),
        ));
    }
    let dof_within = (data.n() * (data.t() - 1)) as isize - data.p() as isize;
    if dof_within <= 0 {
        return Err(Error::InsufficientSamples(format!(
            "within degrees of freedom n(T-1) - p = {dof_within} must be positive"
        )));
    }
    let dof_between = data.n() as isize - data.p() as isize;
    if dof_between <= 0 {
        return Err(Error::InsufficientSamples(format!(
            "between degrees of freedom n - p = {dof_between} must be positive"
        )));
    }

    let dw = data.within_transform();
    let (_, ssr_within, _) = classical_fit(dw.x(), dw.y(), "within-transformed X'X")?;
    let sigma_nu2 = ssr_within / dof_within as f64;
    if sigma_nu2 <= 0.0 {
        return Err(Error::Numerical(
            "within residuals vanish; the remainder variance is zero".into(),
        ));
    }

    let means_x = data.unit_means_x();
    let means_y = data.unit_means_y();
    let (_, ssr_between, _) = classical_fit(&means_x, &means_y, "between-regression X'X")?;
    let between_var = ssr_between / dof_between as f64;
    let sigma_gamma2 = (between_var - sigma_nu2 / data.t() as f64).max(0.0);

    Ok(VarianceComponents {
        sigma_gamma2,
        sigma_nu2,
        rho_hat: rho_from_components(sigma_gamma2, sigma_nu2, data.t(), variant),
    })
}

/// The random-effects estimator: least squares after subtracting the fraction
/// `rho_hat` of each unit's mean. `rho_hat = 0` reproduces ordinary least
/// squares and `rho_hat = 1` the within estimator, through the identical
/// arithmetic path.
pub fn estimate_random_effects(
    data: &PanelDataset,
    vc: &VarianceComponents,
) -> Result<EstimateReport> {
    let rho = vc.rho_hat;
    let dq = data.quasi_demean(rho)?;
    let (beta_hat, ssr, g) = classical_fit(dq.x(), dq.y(), "quasi-demeaned X'X")?;
    let dof = data.nt() as isize - data.p() as isize;
    let sigma_beta = if dof > 0 {
        Some(scaled_inverse(&g, ssr / dof as f64)?)
    } else {
        None
    };
    Ok(EstimateReport {
        method: Method::RandomEffects,
        beta_hat,
        sigma_beta,
        rho_hat: Some(rho),
        diagnostics: None,
    })
}

/// The closed-form minimum distance estimator for a weight matrix D:
/// `beta_hat = (X'DD'X)^{-1} X'DD'y`, computed through `X~ = D'X`. The report
/// carries the weight diagnostics; the first-order condition (zero gradient
/// at the minimizer) is verified to [`FIRST_ORDER_TOL`].
pub fn estimate_md(data: &PanelDataset, d: &WeightMatrix) -> Result<EstimateReport> {
    let diagnostics = validate_d(d, data)?;
    if !diagnostics.a3_ok {
        return Err(Error::SingularMatrix(
            "X'DD'X is numerically rank-deficient; the normal equations have no \
             unique solution"
                .into(),
        ));
    }
    let xt = d.d().transpose() * data.x();
    let yt = d.d().transpose() * data.y();
    let g = xt.transpose() * &xt;
    let rhs = xt.transpose() * &yt;
    let beta_hat = spd_solve_vec(&g, &rhs)?;
    let gradient = (&g * &beta_hat - &rhs) * 8.0;
    let gradient_norm = gradient.norm();
    let scale = 1.0 + 8.0 * (g.norm() * beta_hat.norm() + rhs.norm());
    if gradient_norm > FIRST_ORDER_TOL * scale {
        return Err(Error::Numerical(format!(
            "first-order condition violated at the closed-form minimizer: \
             gradient norm {gradient_norm:.3e} at problem scale {scale:.3e}"
        )));
    }
    Ok(EstimateReport {
        method: Method::Md,
        beta_hat,
        sigma_beta: None,
        rho_hat: None,
        diagnostics: Some(diagnostics),
    })
}

/// The minimum distance criterion `L(b) = 4 ||D'(y - Xb)||^2`.
pub fn distance_closed_form(
    data: &PanelDataset,
    d: &WeightMatrix,
    b: &DVector<f64>,
) -> Result<f64> {
    d.check_shape(data)?;
    let resid = data.residuals(b)?;
    let v = d.d().transpose() * resid.values;
    Ok(4.0 * v.norm_squared())
}

/// Analytic gradient of the distance: `8 (X'DD'X b - X'DD'y)`, an affine
/// function of `b`.
pub fn distance_gradient(
    data: &PanelDataset,
    d: &WeightMatrix,
    b: &DVector<f64>,
) -> Result<DVector<f64>> {
    d.check_shape(data)?;
    let resid = data.residuals(b)?;
    let v = d.d().transpose() * resid.values;
    let xt = d.d().transpose() * data.x();
    Ok(xt.transpose() * v * (-8.0))
}
