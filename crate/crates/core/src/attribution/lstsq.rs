//! Weighted least squares through an SVD of the row-scaled design.

use nalgebra::DMatrix;

use super::{AttributionError, Result};

pub(crate) struct Solution {
    /// `columns x targets` coefficients (minimum-norm when rank deficient).
    pub coef: DMatrix<f64>,
    pub rank: usize,
}

/// Minimizes `sum_i w_i (y_i - X_i beta)^2` for every target column.
pub(crate) fn weighted_lstsq(design: &DMatrix<f64>, targets: &DMatrix<f64>, weights: &[f64]) -> Result<Solution> {
    let (rows, cols) = design.shape();
    if targets.nrows() != rows || weights.len() != rows {
        return Err(AttributionError::ShapeMismatch(format!(
            "design has {rows} rows, targets {} and weights {}",
            targets.nrows(),
            weights.len()
        )));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(AttributionError::InvalidParams(
            "regression weights must be finite and >= 0".into(),
        ));
    }
    let mut a = design.clone();
    let mut b = targets.clone();
    for (i, w) in weights.iter().enumerate() {
        let s = w.sqrt();
        a.row_mut(i).scale_mut(s);
        b.row_mut(i).scale_mut(s);
    }
    let svd = a.svd(true, true);
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let tol = smax * rows.max(cols) as f64 * f64::EPSILON;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    let coef = svd
        .solve(&b, tol)
        .map_err(|e| AttributionError::InvalidParams(format!("least squares: {e}")))?;
    Ok(Solution { coef, rank })
}
