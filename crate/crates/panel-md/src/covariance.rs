//! Block-diagonal error covariance models.
//!
//! The covariance of the stacked errors is block-diagonal with one `T x T`
//! block per unit. It is stored structurally, either as the two variance
//! components of the random-effects decomposition or as explicit blocks,
//! and materialized block by block on demand. The full `nT x nT` matrix is
//! never formed except by the test-scale helper [`CovarianceModel::to_dense`].

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{max_abs, sym_eigen};

#[derive(Debug, Clone)]
pub enum CovarianceKind {
    /// Two-component error: block `sigma_nu2 * I_T + sigma_gamma2 * J_T`.
    RandomEffects { sigma_gamma2: f64, sigma_nu2: f64 },
    /// Arbitrary symmetric positive semidefinite blocks, one per unit.
    ExplicitBlocks { blocks: Vec<DMatrix<f64>> },
}

/// Block-diagonal covariance of the stacked panel errors.
#[derive(Debug, Clone)]
pub struct CovarianceModel {
    n: usize,
    t: usize,
    kind: CovarianceKind,
}

/// Builds the random-effects covariance from its variance components.
/// Kept as a free function because most call sites read better this way.
pub fn build_omega(sigma_gamma2: f64, sigma_nu2: f64, n: usize, t: usize) -> Result<CovarianceModel> {
    CovarianceModel::random_effects(sigma_gamma2, sigma_nu2, n, t)
}

impl CovarianceModel {
    pub fn random_effects(
        sigma_gamma2: f64,
        sigma_nu2: f64,
        n: usize,
        t: usize,
    ) -> Result<Self> {
        if n < 1 || t < 1 {
            return Err(Error::InvalidArgument(format!(
                "covariance needs n >= 1 and T >= 1, got n={n}, T={t}"
            )));
        }
        if !sigma_nu2.is_finite() || sigma_nu2 <= 0.0 {
            return Err(Error::SingularCovariance(format!(
                "remainder variance must be positive, got {sigma_nu2}"
            )));
        }
        if !sigma_gamma2.is_finite() || sigma_gamma2 < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "individual-effect variance must be nonnegative, got {sigma_gamma2}"
            )));
        }
        Ok(CovarianceModel {
            n,
            t,
            kind: CovarianceKind::RandomEffects {
                sigma_gamma2,
                sigma_nu2,
            },
        })
    }

    /// Covariance from explicit per-unit blocks. Blocks must be square, of a
    /// common dimension, finite, and symmetric; positive semidefiniteness is
    /// checked where eigenpairs are actually consumed.
    pub fn explicit_blocks(blocks: Vec<DMatrix<f64>>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::InvalidArgument("no covariance blocks given".into()));
        }
        let t = blocks[0].nrows();
        if t < 1 {
            return Err(Error::InvalidArgument("empty covariance block".into()));
        }
        for (i, b) in blocks.iter().enumerate() {
            if b.nrows() != t || b.ncols() != t {
                return Err(Error::DimensionMismatch(format!(
                    "covariance block {i} is {}x{}, expected {t}x{t}",
                    b.nrows(),
                    b.ncols()
                )));
            }
            if b.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "covariance block {i} contains non-finite entries"
                )));
            }
            let asym = max_abs(&(b - b.transpose()));
            if asym > 1e-12 * (1.0 + max_abs(b)) {
                return Err(Error::InvalidArgument(format!(
                    "covariance block {i} is not symmetric (max asymmetry {asym:.3e})"
                )));
            }
        }
        let n = blocks.len();
        Ok(CovarianceModel {
            n,
            t,
            kind: CovarianceKind::ExplicitBlocks { blocks },
        })
    }

    /// Covariance of unit-demeaned white noise: every block is
    /// `sigma_nu2 * (I_T - J_T/T)`, symmetric positive semidefinite with rank
    /// `T - 1`. This is the error covariance after the within transform.
    pub fn within_noise(sigma_nu2: f64, n: usize, t: usize) -> Result<Self> {
        if !sigma_nu2.is_finite() || sigma_nu2 <= 0.0 {
            return Err(Error::SingularCovariance(format!(
                "remainder variance must be positive, got {sigma_nu2}"
            )));
        }
        if t < 2 {
            return Err(Error::InvalidArgument(
                "demeaned-noise covariance needs T >= 2".into(),
            ));
        }
        let block = DMatrix::from_fn(t, t, |r, c| {
            let kron = if r == c { 1.0 } else { 0.0 };
            sigma_nu2 * (kron - 1.0 / t as f64)
        });
        Self::explicit_blocks(vec![block; n])
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn dim(&self) -> usize {
        self.n * self.t
    }

    pub fn kind(&self) -> &CovarianceKind {
        &self.kind
    }

    /// Materializes block `i` (0-based).
    pub fn block(&self, i: usize) -> DMatrix<f64> {
        match &self.kind {
            CovarianceKind::RandomEffects {
                sigma_gamma2,
                sigma_nu2,
            } => DMatrix::from_fn(self.t, self.t, |r, c| {
                let kron = if r == c { *sigma_nu2 } else { 0.0 };
                kron + *sigma_gamma2
            }),
            CovarianceKind::ExplicitBlocks { blocks } => blocks[i].clone(),
        }
    }

    /// Per-block eigendecompositions, each in the canonical layout of
    /// [`sym_eigen`] (ascending eigenvalues, fixed signs).
    ///
    /// Random-effects blocks use their analytic eigenbasis: the constant
    /// vector `1/sqrt(T)` with eigenvalue `sigma_nu2 + T*sigma_gamma2`, and a
    /// fixed orthogonal (Helmert-style) basis of its complement with
    /// eigenvalue `sigma_nu2`. The degenerate eigenspace thus gets the same
    /// basis on every platform.
    pub fn eigen_blocks(&self) -> Result<Vec<(DVector<f64>, DMatrix<f64>)>> {
        match &self.kind {
            CovarianceKind::RandomEffects {
                sigma_gamma2,
                sigma_nu2,
            } => {
                let one = re_block_eigen(self.t, *sigma_gamma2, *sigma_nu2);
                Ok(vec![one; self.n])
            }
            CovarianceKind::ExplicitBlocks { blocks } => {
                blocks.iter().map(sym_eigen).collect()
            }
        }
    }

    /// All block eigenvalues with their (block, local) coordinates, sorted
    /// ascending with ties broken by block then local index. The ordering is
    /// total and deterministic, which downstream column selections rely on.
    pub fn assembled_eigenvalues(
        eigen: &[(DVector<f64>, DMatrix<f64>)],
    ) -> Vec<(f64, usize, usize)> {
        let mut out = Vec::new();
        for (b, (values, _)) in eigen.iter().enumerate() {
            for (l, &v) in values.iter().enumerate() {
                out.push((v, b, l));
            }
        }
        out.sort_by(|a, b| {
            a.0.partial_cmp(&b.0)
                .expect("finite eigenvalues compare")
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        });
        out
    }

    /// `A' * Omega * B` accumulated block by block; `A` and `B` have `nT`
    /// rows. Omega itself is never densified.
    pub fn quadratic(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let nt = self.dim();
        if a.nrows() != nt || b.nrows() != nt {
            return Err(Error::DimensionMismatch(format!(
                "quadratic form needs {nt} rows, got {} and {}",
                a.nrows(),
                b.nrows()
            )));
        }
        let mut acc = DMatrix::zeros(a.ncols(), b.ncols());
        for i in 0..self.n {
            let ai = a.rows(i * self.t, self.t);
            let bi = b.rows(i * self.t, self.t);
            acc += ai.transpose() * self.block(i) * bi;
        }
        Ok(acc)
    }

    /// Dense `nT x nT` materialization. O(n^2 T^2) memory; meant for tests
    /// and small verification runs only.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let nt = self.dim();
        let mut dense = DMatrix::zeros(nt, nt);
        for i in 0..self.n {
            dense
                .view_mut((i * self.t, i * self.t), (self.t, self.t))
                .copy_from(&self.block(i));
        }
        dense
    }
}

/// Analytic eigendecomposition of one random-effects block, in the canonical
/// layout. Eigenvalues ascend: `sigma_nu2` with multiplicity `T - 1` (Helmert
/// vectors, in Helmert order), then `sigma_nu2 + T*sigma_gamma2` (constant
/// vector). For `sigma_gamma2 = 0` all eigenvalues tie and the same order is
/// kept.
fn re_block_eigen(t: usize, sigma_gamma2: f64, sigma_nu2: f64) -> (DVector<f64>, DMatrix<f64>) {
    let mut values = DVector::zeros(t);
    let mut vectors = DMatrix::zeros(t, t);
    for k in 1..t {
        values[k - 1] = sigma_nu2;
        let norm = (k as f64 * (k + 1) as f64).sqrt();
        let mut col = DVector::zeros(t);
        if k == 1 {
            // Magnitude tie between the two entries: first entry positive.
            col[0] = 1.0 / norm;
            col[1] = -1.0 / norm;
        } else {
            // Largest-magnitude entry is the k-th; keep it positive.
            for r in 0..k {
                col[r] = -1.0 / norm;
            }
            col[k] = k as f64 / norm;
        }
        vectors.set_column(k - 1, &col);
    }
    values[t - 1] = sigma_nu2 + t as f64 * sigma_gamma2;
    vectors.set_column(t - 1, &DVector::from_element(t, 1.0 / (t as f64).sqrt()));
    (values, vectors)
}
