//! Balanced panel datasets in unit-major layout, the within transform, and
//! residual evaluation.
//!
//! Layout contract: observation (unit i, time t), both 1-based, lives in row
//! `(i-1)*T + (t-1)`. All T rows of a unit are contiguous and time-ordered.
//! Every module in this crate assumes this layout.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Row of observation (unit `i`, time `t`), both 1-based, in a panel with `t_len`
/// periods per unit: `(i-1)*t_len + (t-1)`.
pub fn row_index(i: usize, t: usize, t_len: usize) -> Result<usize> {
    if i < 1 {
        return Err(Error::InvalidArgument(format!(
            "unit index {i} out of range (units are 1-based)"
        )));
    }
    if t < 1 || t > t_len {
        return Err(Error::InvalidArgument(format!(
            "time index {t} out of range 1..={t_len}"
        )));
    }
    Ok((i - 1) * t_len + (t - 1))
}

/// A balanced panel: `n` units observed over the same `T` periods with `p`
/// regressors, stored unit-major.
#[derive(Debug, Clone)]
pub struct PanelDataset {
    n: usize,
    t: usize,
    x: DMatrix<f64>,
    y: DVector<f64>,
    unit_ids: Vec<i64>,
    time_ids: Vec<i64>,
}

impl PanelDataset {
    /// Builds a panel from an `nT x p` regressor matrix and an `nT` outcome
    /// vector, assigning default labels `1..=n` and `1..=T`.
    ///
    /// Rejects `T < 2` (the within transform would annihilate everything),
    /// shape mismatches, and non-finite values.
    pub fn new(n: usize, t: usize, x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        let unit_ids = (1..=n as i64).collect();
        let time_ids = (1..=t as i64).collect();
        Self::with_labels(n, t, x, y, unit_ids, time_ids)
    }

    /// Like [`PanelDataset::new`] but with caller-provided unit and time
    /// labels (one per unit / per period) for CSV round-tripping.
    pub fn with_labels(
        n: usize,
        t: usize,
        x: DMatrix<f64>,
        y: DVector<f64>,
        unit_ids: Vec<i64>,
        time_ids: Vec<i64>,
    ) -> Result<Self> {
        if n < 1 {
            return Err(Error::DegeneratePanel("need at least one unit".into()));
        }
        if t < 2 {
            return Err(Error::DegeneratePanel(format!(
                "need at least two time periods per unit, got {t}"
            )));
        }
        if x.ncols() < 1 {
            return Err(Error::DegeneratePanel("need at least one regressor".into()));
        }
        let nt = n * t;
        if x.nrows() != nt || y.len() != nt {
            return Err(Error::DimensionMismatch(format!(
                "expected {nt} rows for n={n}, T={t}; got X {}x{} and y of length {}",
                x.nrows(),
                x.ncols(),
                y.len()
            )));
        }
        if unit_ids.len() != n || time_ids.len() != t {
            return Err(Error::DimensionMismatch(format!(
                "expected {n} unit labels and {t} time labels, got {} and {}",
                unit_ids.len(),
                time_ids.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) || y.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "panel data contains non-finite values".into(),
            ));
        }
        Ok(PanelDataset {
            n,
            t,
            x,
            y,
            unit_ids,
            time_ids,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn nt(&self) -> usize {
        self.n * self.t
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn unit_ids(&self) -> &[i64] {
        &self.unit_ids
    }

    pub fn time_ids(&self) -> &[i64] {
        &self.time_ids
    }

    /// Row of (unit, time), both 1-based, with bounds checked against this
    /// panel's dimensions.
    pub fn row(&self, i: usize, t: usize) -> Result<usize> {
        if i > self.n {
            return Err(Error::InvalidArgument(format!(
                "unit index {i} out of range 1..={}",
                self.n
            )));
        }
        row_index(i, t, self.t)
    }

    /// Row range of unit `i` (0-based unit here, internal convention).
    pub fn unit_rows(&self, i: usize) -> std::ops::Range<usize> {
        i * self.t..(i + 1) * self.t
    }

    /// Per-unit time averages of the regressors, `n x p`.
    pub fn unit_means_x(&self) -> DMatrix<f64> {
        let mut means = DMatrix::zeros(self.n, self.p());
        for i in 0..self.n {
            for k in 0..self.p() {
                let mut acc = 0.0;
                for r in self.unit_rows(i) {
                    acc += self.x[(r, k)];
                }
                means[(i, k)] = acc / self.t as f64;
            }
        }
        means
    }

    /// Per-unit time averages of the outcome, length `n`.
    pub fn unit_means_y(&self) -> DVector<f64> {
        let mut means = DVector::zeros(self.n);
        for i in 0..self.n {
            let mut acc = 0.0;
            for r in self.unit_rows(i) {
                acc += self.y[r];
            }
            means[i] = acc / self.t as f64;
        }
        means
    }

    /// Subtracts `rho` times the unit mean from every column of X and from y.
    ///
    /// `rho = 1` is exactly the within transform, `rho = 0` returns the data
    /// unchanged (both cases share this arithmetic path, so the random-effects
    /// special cases reproduce OLS and the within estimator bit-for-bit).
    pub fn quasi_demean(&self, rho: f64) -> Result<PanelDataset> {
        if !rho.is_finite() || !(0.0..=1.0).contains(&rho) {
            return Err(Error::InvalidArgument(format!(
                "demeaning fraction rho must lie in [0, 1], got {rho}"
            )));
        }
        let mut x = self.x.clone();
        let mut y = self.y.clone();
        let means_x = self.unit_means_x();
        let means_y = self.unit_means_y();
        for i in 0..self.n {
            for k in 0..self.p() {
                let shift = rho * means_x[(i, k)];
                for r in self.unit_rows(i) {
                    x[(r, k)] -= shift;
                }
            }
            let shift = rho * means_y[i];
            for r in self.unit_rows(i) {
                y[r] -= shift;
            }
        }
        Ok(PanelDataset {
            n: self.n,
            t: self.t,
            x,
            y,
            unit_ids: self.unit_ids.clone(),
            time_ids: self.time_ids.clone(),
        })
    }

    /// The within transform: every unit's rows demeaned by that unit's time
    /// average, annihilating any time-invariant component (in particular the
    /// individual effect). `T >= 2` is guaranteed by construction.
    pub fn within_transform(&self) -> PanelDataset {
        self.quasi_demean(1.0)
            .expect("rho = 1 is always a valid demeaning fraction")
    }

    /// Residuals `y - Xb` at the coefficient vector `b`.
    pub fn residuals(&self, b: &DVector<f64>) -> Result<ResidualVector> {
        if b.len() != self.p() {
            return Err(Error::DimensionMismatch(format!(
                "coefficient vector has length {}, expected {}",
                b.len(),
                self.p()
            )));
        }
        Ok(ResidualVector {
            values: &self.y - &self.x * b,
            b: b.clone(),
        })
    }
}

/// Residuals `y - Xb` together with the `b` they were taken at.
#[derive(Debug, Clone)]
pub struct ResidualVector {
    pub values: DVector<f64>,
    pub b: DVector<f64>,
}
