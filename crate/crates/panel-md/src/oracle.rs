//! Slow reference implementations of the distance criterion.
//!
//! The quadratic form `4 ||D'(y - Xb)||^2` has an integral representation:
//! for a residual `e`, the step difference `g_e(z) = 1(e <= z) - 1(-e < z)`
//! integrates to `-2e` (it is -1 on `(-e, e)` when `e > 0` and +1 on
//! `[e, -e]` when `e < 0`), so products of such integrals recover products of
//! residuals and the criterion expands into a pairwise double sum per weight
//! column. Evaluating that expansion term by term is quadratically slower
//! than the closed form, which is the point: it exercises none of the matrix
//! shortcuts and so makes an independent oracle for them.

use nalgebra::DVector;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::panel::PanelDataset;
use crate::weights::WeightMatrix;

/// Hard cap on grid evaluations, to turn runaway search boxes into an error
/// instead of an effectively infinite loop.
pub const MAX_GRID_POINTS: usize = 100_000_000;

/// Integral of `z -> 1(e <= z) - 1(-e < z)` over the real line, evaluated by
/// cases on the interval between the thresholds. Equals `-2e` exactly.
pub fn single_integral(e: f64) -> f64 {
    if e >= 0.0 {
        // The integrand is -1 on (-e, e) and 0 elsewhere.
        -(e - (-e))
    } else {
        // The integrand is +1 on [e, -e] and 0 elsewhere.
        -e - e
    }
}

/// The distance criterion through the integral expansion: for each weight
/// column the square of the weighted residual sum is written out as a double
/// sum over observation pairs, with each residual entering through
/// [`single_integral`]. `O(m (nT)^2)` flops against the closed form's
/// `O(m nT)`; intended for small cross-checking instances.
pub fn distance_oracle(
    data: &PanelDataset,
    d: &WeightMatrix,
    b: &DVector<f64>,
) -> Result<f64> {
    d.check_shape(data)?;
    let resid = data.residuals(b)?;
    let g: Vec<f64> = resid.values.iter().map(|&e| single_integral(e)).collect();
    let nt = data.nt();
    let mut total = 0.0;
    for j in 0..d.columns() {
        let col = d.d().column(j);
        for i in 0..nt {
            let left = col[i] * g[i];
            for i2 in 0..nt {
                total += left * col[i2] * g[i2];
            }
        }
    }
    Ok(total)
}

fn axis_point_count(lower: f64, upper: f64, step: f64) -> usize {
    // The +1e-9 absorbs roundoff so an upper bound that is an exact multiple
    // of the step away stays on the grid.
    ((upper - lower) / step + 1e-9).floor() as usize + 1
}

/// Exhaustive minimization of the distance criterion over an axis-aligned
/// grid: `lower[k] + j * step` along each coordinate, endpoints included.
/// Only `p <= 2` is supported; anything larger is what the closed form is
/// for. Returns the best grid point and its criterion value.
///
/// Ties resolve to the lexicographically earliest grid point (axis 0
/// slowest), so the result does not depend on evaluation order. If the
/// minimum lands on the boundary of the box the true minimizer is probably
/// outside it, and the search fails with a widen-the-box error rather than
/// return a misleading interior-looking answer.
pub fn grid_minimize(
    data: &PanelDataset,
    d: &WeightMatrix,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    step: f64,
) -> Result<(DVector<f64>, f64)> {
    let p = data.p();
    if p > 2 {
        return Err(Error::InvalidArgument(format!(
            "grid search supports at most two coefficients, got p = {p}"
        )));
    }
    if lower.len() != p || upper.len() != p {
        return Err(Error::DimensionMismatch(format!(
            "search box must have one bound per coefficient: p = {p}, \
             lower has {}, upper has {}",
            lower.len(),
            upper.len()
        )));
    }
    if !step.is_finite() || step <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "grid step must be positive and finite, got {step}"
        )));
    }
    for k in 0..p {
        if !lower[k].is_finite() || !upper[k].is_finite() || lower[k] > upper[k] {
            return Err(Error::InvalidArgument(format!(
                "search box for coordinate {} must satisfy lower <= upper, \
                 got [{}, {}]",
                k + 1,
                lower[k],
                upper[k]
            )));
        }
    }
    d.check_shape(data)?;

    let counts: Vec<usize> = (0..p)
        .map(|k| axis_point_count(lower[k], upper[k], step))
        .collect();
    let total: usize = counts.iter().product();
    if total > MAX_GRID_POINTS {
        return Err(Error::InvalidArgument(format!(
            "search grid has {total} points, more than the supported \
             {MAX_GRID_POINTS}"
        )));
    }

    // L(b) = 4 ||yt - xt b||^2 with xt = D'X, yt = D'y; factoring these out
    // makes each grid point O(m p) instead of O(m nT).
    let xt = d.d().transpose() * data.x();
    let yt = d.d().transpose() * data.y();

    let point_at = |idx: usize| -> DVector<f64> {
        let mut b = DVector::zeros(p);
        let mut rest = idx;
        for k in (0..p).rev() {
            let j = rest % counts[k];
            rest /= counts[k];
            b[k] = lower[k] + j as f64 * step;
        }
        b
    };
    let eval = |idx: usize| -> (f64, usize) {
        let r = &yt - &xt * point_at(idx);
        (4.0 * r.norm_squared(), idx)
    };
    // Smaller criterion wins; exact ties go to the smaller index. Both are
    // order-free, so the parallel reduction is reproducible.
    let better = |a: (f64, usize), b: (f64, usize)| -> (f64, usize) {
        if b.0 < a.0 || (b.0 == a.0 && b.1 < a.1) {
            b
        } else {
            a
        }
    };

    #[cfg(feature = "parallel")]
    let (best_l, best_idx) = (0..total)
        .into_par_iter()
        .map(eval)
        .reduce(|| (f64::INFINITY, usize::MAX), better);
    #[cfg(not(feature = "parallel"))]
    let (best_l, best_idx) = (0..total)
        .map(eval)
        .fold((f64::INFINITY, usize::MAX), better);

    let mut rest = best_idx;
    for k in (0..p).rev() {
        let j = rest % counts[k];
        rest /= counts[k];
        if j == 0 || j + 1 == counts[k] {
            return Err(Error::WidenBox(format!(
                "grid minimum sits on the boundary of coordinate {}; \
                 widen the search box",
                k + 1
            )));
        }
    }
    Ok((point_at(best_idx), best_l))
}
