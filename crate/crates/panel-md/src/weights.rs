//! Construction and validation of the weight matrix D that defines the
//! minimum distance estimator.
//!
//! D has one row per observation (`nT` rows, unit-major like the data) and an
//! arbitrary number of columns m >= 1; every estimator formula downstream is
//! written in terms of `X~ = D'X`. Two named constructions are provided (the
//! OLS-equivalent projection weights and covariance-eigenpair whitening
//! weights) plus a pseudo-whitening variant that takes every eigenpair above
//! the positive floor (the GLS-style choice, defined even when the covariance
//! is singular).

use nalgebra::{DMatrix, DVector};

use crate::covariance::CovarianceModel;
use crate::error::{Error, Result};
use crate::linalg::{rank_and_condition, sym_eigen, EIGEN_REL_FLOOR};
use crate::panel::PanelDataset;

/// Which eigenpairs of the covariance to turn into weight columns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EigenSelection {
    SmallestEigenvalues,
    LargestEigenvalues,
    /// Positions into the ascending assembled eigenvalue order.
    Indices(Vec<usize>),
}

/// How a weight matrix was produced.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WeightStrategy {
    OlsEquivalent,
    OmegaEigen(EigenSelection),
    PseudoWhitening,
    Custom,
}

/// Weight matrix D: `nT x m`, unit-major rows, finite entries.
#[derive(Debug, Clone)]
pub struct WeightMatrix {
    d: DMatrix<f64>,
    t: usize,
    strategy: WeightStrategy,
}

impl WeightMatrix {
    /// Wraps a caller-supplied matrix; rows must split into per-unit blocks
    /// of `t` and all entries must be finite.
    pub fn custom(d: DMatrix<f64>, t: usize) -> Result<Self> {
        Self::from_parts(d, t, WeightStrategy::Custom)
    }

    fn from_parts(d: DMatrix<f64>, t: usize, strategy: WeightStrategy) -> Result<Self> {
        if t < 1 {
            return Err(Error::InvalidArgument(
                "weight matrix needs at least one row per unit".into(),
            ));
        }
        if d.nrows() == 0 || !d.nrows().is_multiple_of(t) {
            return Err(Error::DimensionMismatch(format!(
                "weight matrix has {} rows, not a positive multiple of T={t}",
                d.nrows()
            )));
        }
        if d.ncols() < 1 {
            return Err(Error::InvalidArgument(
                "weight matrix needs at least one column".into(),
            ));
        }
        if d.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "weight matrix contains non-finite entries".into(),
            ));
        }
        Ok(WeightMatrix { d, t, strategy })
    }

    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn n(&self) -> usize {
        self.d.nrows() / self.t
    }

    /// Number of weight columns m.
    pub fn columns(&self) -> usize {
        self.d.ncols()
    }

    pub fn strategy(&self) -> &WeightStrategy {
        &self.strategy
    }

    /// Per-unit block view `D_i` (`T x m`); stacking the blocks reproduces D.
    pub fn block(&self, i: usize) -> nalgebra::DMatrixView<'_, f64> {
        self.d.rows(i * self.t, self.t)
    }

    /// Checks that this D matches a dataset's layout.
    pub fn check_shape(&self, data: &PanelDataset) -> Result<()> {
        if self.d.nrows() != data.nt() || self.t != data.t() {
            return Err(Error::DimensionMismatch(format!(
                "weight matrix is {} rows with T={}, data has {} rows with T={}",
                self.d.nrows(),
                self.t,
                data.nt(),
                data.t()
            )));
        }
        Ok(())
    }
}

/// OLS-equivalent weights `D = X (X'X)^{-1/2}`: with these, the minimum
/// distance estimator coincides with ordinary least squares, and `DD'` is the
/// orthogonal projection onto the column space of X.
pub fn d_ols_equivalent(data: &PanelDataset) -> Result<WeightMatrix> {
    let x = data.x();
    let xtx = x.transpose() * x;
    let (values, q) = sym_eigen(&xtx)?;
    let p = values.len();
    let lambda_max = values[p - 1];
    let floor = EIGEN_REL_FLOOR * lambda_max.max(0.0);
    let no_positive = lambda_max.is_nan() || lambda_max <= 0.0;
    if no_positive || values.iter().any(|&v| v < floor) {
        // Name the columns that participate in the deficient direction(s).
        let mut involved = std::collections::BTreeSet::new();
        for j in 0..p {
            if no_positive || values[j] < floor {
                let col = q.column(j);
                let peak = col.amax();
                for k in 0..p {
                    if col[k].abs() >= 0.3 * peak {
                        involved.insert(k + 1);
                    }
                }
            }
        }
        let names: Vec<String> = involved.iter().map(|k| format!("x{k}")).collect();
        return Err(Error::RankDeficient(format!(
            "X'X is singular to working precision; columns {{{}}} span a near-null direction",
            names.join(", ")
        )));
    }
    // A = (X'X)^{-1/2} from the eigendecomposition already at hand.
    let scaled = DMatrix::from_fn(p, p, |r, c| q[(r, c)] / values[c].sqrt());
    let a = &scaled * q.transpose();
    WeightMatrix::from_parts(x * a, data.t(), WeightStrategy::OlsEquivalent)
}

/// Whitening weights from covariance eigenpairs: column `j` is
/// `c_j^{-1/2} q_j` for a selected eigenpair `(c_j, q_j)` of Omega, embedded
/// in the rows of its block. For any selection of distinct positive
/// eigenpairs, `D' Omega D = I`.
///
/// `count` columns are taken following `selection`: the smallest eigenvalues
/// (ascending), the largest (descending), or explicit positions into the
/// ascending assembled order.
pub fn d_omega_eigen(
    omega: &CovarianceModel,
    count: usize,
    selection: EigenSelection,
) -> Result<WeightMatrix> {
    let nt = omega.dim();
    if count < 1 || count > nt {
        return Err(Error::InvalidArgument(format!(
            "requested {count} weight columns from a {nt}-dimensional covariance"
        )));
    }
    let eigen = omega.eigen_blocks()?;
    let assembled = CovarianceModel::assembled_eigenvalues(&eigen);
    let chosen: Vec<(f64, usize, usize)> = match &selection {
        EigenSelection::SmallestEigenvalues => assembled[..count].to_vec(),
        EigenSelection::LargestEigenvalues => {
            assembled[nt - count..].iter().rev().cloned().collect()
        }
        EigenSelection::Indices(positions) => {
            if positions.len() != count {
                return Err(Error::InvalidArgument(format!(
                    "selection lists {} positions but {count} columns were requested",
                    positions.len()
                )));
            }
            let mut seen = std::collections::BTreeSet::new();
            for &ix in positions {
                if ix >= nt {
                    return Err(Error::InvalidArgument(format!(
                        "eigenpair position {ix} out of range 0..{nt}"
                    )));
                }
                if !seen.insert(ix) {
                    return Err(Error::InvalidArgument(format!(
                        "eigenpair position {ix} selected twice"
                    )));
                }
            }
            positions.iter().map(|&ix| assembled[ix]).collect()
        }
    };
    let floor = positive_floor(&assembled)?;
    for &(value, block, _) in &chosen {
        if value <= floor {
            return Err(Error::SingularCovariance(format!(
                "selected eigenvalue {value:.6e} (block {block}) is not positive; \
                 whitening weight undefined"
            )));
        }
    }
    let d = embed_columns(&eigen, &chosen, omega.t(), nt);
    WeightMatrix::from_parts(d, omega.t(), WeightStrategy::OmegaEigen(selection))
}

/// Whitening weights from every eigenpair above the positive floor: the
/// full-rank choice with `D D' = Omega^+` (the Moore-Penrose inverse). For a
/// positive definite covariance this has `nT` columns and `D D' = Omega^{-1}`;
/// for the demeaned-noise covariance it has `n(T-1)` columns.
pub fn d_pseudo_whitening(omega: &CovarianceModel) -> Result<WeightMatrix> {
    let eigen = omega.eigen_blocks()?;
    let assembled = CovarianceModel::assembled_eigenvalues(&eigen);
    let floor = positive_floor(&assembled)?;
    let chosen: Vec<(f64, usize, usize)> = assembled
        .iter()
        .filter(|&&(v, _, _)| v > floor)
        .cloned()
        .collect();
    if chosen.is_empty() {
        return Err(Error::SingularCovariance(
            "covariance has no eigenvalues above the positive floor".into(),
        ));
    }
    let d = embed_columns(&eigen, &chosen, omega.t(), omega.dim());
    WeightMatrix::from_parts(d, omega.t(), WeightStrategy::PseudoWhitening)
}

fn positive_floor(assembled: &[(f64, usize, usize)]) -> Result<f64> {
    let lambda_max = assembled.last().map(|&(v, _, _)| v).unwrap_or(0.0);
    if lambda_max.is_nan() || lambda_max <= 0.0 {
        return Err(Error::SingularCovariance(
            "covariance has no positive eigenvalues".into(),
        ));
    }
    Ok(EIGEN_REL_FLOOR * lambda_max)
}

fn embed_columns(
    eigen: &[(DVector<f64>, DMatrix<f64>)],
    chosen: &[(f64, usize, usize)],
    t: usize,
    nt: usize,
) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(nt, chosen.len());
    for (j, &(value, block, local)) in chosen.iter().enumerate() {
        let q = eigen[block].1.column(local);
        let scale = 1.0 / value.sqrt();
        for r in 0..t {
            d[(block * t + r, j)] = scale * q[r];
        }
    }
    d
}

/// Diagnostics for a weight matrix against a dataset: the boundedness
/// statistic `n * max d^2` (overall and per (time, column) cell) and the
/// invertibility of the normal-equations matrix `X'DD'X`.
#[derive(Debug, Clone)]
pub struct AssumptionReport {
    /// `n * max_i d_itk^2` for each time index and weight column (`T x m`).
    pub a2_per_time_column: DMatrix<f64>,
    /// `n * max_{i,t,k} d_itk^2`.
    pub a2_overall: f64,
    /// True when `X'DD'X` has full numerical rank.
    pub a3_ok: bool,
    /// 2-norm condition number of `X'DD'X`.
    pub condition_number: f64,
}

/// Rank tolerance for the invertibility check, relative to the largest
/// singular value of `X'DD'X`.
pub const A3_RANK_REL_TOL: f64 = 1e-10;

/// Evaluates the boundedness and invertibility diagnostics of D on a dataset.
/// Failures are carried in the report, not raised; only a layout mismatch is
/// an error.
pub fn validate_d(d: &WeightMatrix, data: &PanelDataset) -> Result<AssumptionReport> {
    d.check_shape(data)?;
    let n = data.n();
    let t = data.t();
    let m = d.columns();

    let mut per = DMatrix::zeros(t, m);
    for tt in 0..t {
        for k in 0..m {
            let mut worst = 0.0_f64;
            for i in 0..n {
                let v = d.d()[(i * t + tt, k)];
                worst = worst.max(v * v);
            }
            per[(tt, k)] = n as f64 * worst;
        }
    }
    let a2_overall = per.iter().cloned().fold(0.0_f64, f64::max);

    let xt = d.d().transpose() * data.x();
    let normal = xt.transpose() * &xt;
    let (rank, condition_number) = rank_and_condition(&normal, A3_RANK_REL_TOL);
    Ok(AssumptionReport {
        a2_per_time_column: per,
        a2_overall,
        a3_ok: rank == data.p(),
        condition_number,
    })
}
