//! Small dense least-squares helpers on top of nalgebra's SVD.

use nalgebra::{DMatrix, DVector};

use crate::curve_space::{inner_product_coords, ForwardCurve, WeightFunction};
use crate::error::{Error, Result};

/// Columns whose reciprocal condition number falls below this are rejected.
pub const MIN_RECIPROCAL_CONDITION: f64 = 1e-12;

/// Least-squares solution of `columns * c ≈ target`.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    pub coefficients: Vec<f64>,
    pub fitted: Vec<f64>,
    /// sigma_max / sigma_min of the design matrix.
    pub condition: f64,
}

pub fn least_squares(columns: &[Vec<f64>], target: &[f64]) -> Result<LeastSquares> {
    let k = columns.len();
    let m = target.len();
    if k == 0 {
        return Ok(LeastSquares {
            coefficients: vec![],
            fitted: vec![0.0; m],
            condition: 1.0,
        });
    }
    if columns.iter().any(|c| c.len() != m) {
        return Err(Error::Parameter("column length mismatch".into()));
    }
    let a = DMatrix::from_fn(m, k, |i, j| columns[j][i]);
    let b = DVector::from_column_slice(target);
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smax > 0.0) || smin < MIN_RECIPROCAL_CONDITION * smax {
        return Err(Error::Conditioning(format!(
            "singular values span [{smin:e}, {smax:e}]"
        )));
    }
    let c = svd
        .solve(&b, 0.0)
        .map_err(|e| Error::Conditioning(e.to_string()))?;
    let fitted = &a * &c;
    Ok(LeastSquares {
        coefficients: c.iter().copied().collect(),
        fitted: fitted.iter().copied().collect(),
        condition: smax / smin,
    })
}

/// Orthogonal projection of a curve onto the span of a basis under the
/// weighted curve inner product.
#[derive(Debug, Clone)]
pub struct SpanProjection {
    pub coefficients: Vec<f64>,
    /// `||v - proj v||_w`.
    pub residual_abs: f64,
    /// `||v - proj v||_w / max(||v||_w, floor)`.
    pub residual_rel: f64,
    pub norm: f64,
    pub condition: f64,
}

/// Norm below which a vector is treated as zero when forming relative residuals.
pub const RELATIVE_FLOOR: f64 = 1e-14;

pub fn project_onto_span(
    v: &ForwardCurve,
    basis: &[ForwardCurve],
    w: &WeightFunction,
) -> Result<SpanProjection> {
    let m = basis
        .iter()
        .map(|b| b.valid_len())
        .fold(v.valid_len(), usize::min);
    let target = inner_product_coords(v, w, m);
    let norm = target.iter().map(|x| x * x).sum::<f64>().sqrt();
    let columns: Vec<Vec<f64>> = basis
        .iter()
        .map(|b| inner_product_coords(b, w, m))
        .collect();
    let ls = least_squares(&columns, &target)?;
    let residual_abs = target
        .iter()
        .zip(&ls.fitted)
        .map(|(t, f)| (t - f) * (t - f))
        .sum::<f64>()
        .sqrt();
    Ok(SpanProjection {
        coefficients: ls.coefficients,
        residual_abs,
        residual_rel: (residual_abs / norm.max(RELATIVE_FLOOR)).min(1.0),
        norm,
        condition: ls.condition,
    })
}
