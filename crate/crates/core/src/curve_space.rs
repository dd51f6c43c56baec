//! Discretized forward-curve space.
//!
//! Curves are sampled on a uniform maturity grid `[0, x_max + pad]`. The pad
//! is the tail consumed by right-shifts `(S_t h)(x) = h(x + t)`: a curve that
//! has been shifted by a total of `t` carries `consumed = t` and is only
//! trustworthy on `[0, x_max + pad - consumed]`.
//!
//! Numerics:
//! * `deriv` uses fourth-order central differences in the interior and
//!   fourth-order one-sided stencils at the two ends of the grid;
//! * `integral` is the cumulative trapezoidal rule;
//! * point evaluation and `shift` use four-point (cubic) Lagrange
//!   interpolation, which is exact on cubic polynomials.

use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative slack when comparing positions against grid boundaries.
const POSITION_SLACK: f64 = 1e-9;

/// Uniform maturity grid on `[0, x_max + pad]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaturityGrid {
    x_max: f64,
    pad: f64,
    n_points: usize,
}

impl MaturityGrid {
    pub fn new(x_max: f64, pad: f64, n_points: usize) -> Result<Self> {
        if n_points < 3 {
            return Err(Error::Grid(format!(
                "need at least 3 nodes, got {n_points}"
            )));
        }
        if !(x_max.is_finite() && x_max > 0.0) {
            return Err(Error::Grid(format!("x_max must be positive, got {x_max}")));
        }
        if !(pad.is_finite() && pad >= 0.0) {
            return Err(Error::Grid(format!("pad must be non-negative, got {pad}")));
        }
        Ok(Self {
            x_max,
            pad,
            n_points,
        })
    }

    /// x_max = 10y, pad = 5y, 601 nodes (spacing 0.025y).
    pub fn standard() -> Self {
        Self {
            x_max: 10.0,
            pad: 5.0,
            n_points: 601,
        }
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn pad(&self) -> f64 {
        self.pad
    }

    pub fn len(&self) -> usize {
        self.n_points
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Total covered length `x_max + pad`.
    pub fn span(&self) -> f64 {
        self.x_max + self.pad
    }

    pub fn spacing(&self) -> f64 {
        self.span() / (self.n_points - 1) as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        i as f64 * self.spacing()
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        let dx = self.spacing();
        (0..self.n_points).map(move |i| i as f64 * dx)
    }

    /// Number of leading nodes with `x <= limit`.
    pub fn count_upto(&self, limit: f64) -> usize {
        let dx = self.spacing();
        let k = (limit / dx + POSITION_SLACK).floor();
        if k < 0.0 {
            0
        } else {
            ((k as usize) + 1).min(self.n_points)
        }
    }

    /// Number of nodes in the reported range `[0, x_max]`.
    pub fn reported_len(&self) -> usize {
        self.count_upto(self.x_max)
    }

    /// Trapezoid weights of the first `m` nodes.
    pub fn trapezoid_weights(&self, m: usize) -> Vec<f64> {
        let dx = self.spacing();
        let mut w = vec![dx; m];
        if m > 0 {
            w[0] = 0.5 * dx;
            w[m - 1] = 0.5 * dx;
        }
        if m == 1 {
            w[0] = 0.0;
        }
        w
    }
}

/// Cubic Lagrange interpolation of uniformly spaced samples at position `p`.
///
/// Positions past the last node return the last value; those before zero
/// return the first.
pub fn interpolate(values: &[f64], spacing: f64, p: f64) -> f64 {
    let n = values.len();
    let last = (n - 1) as f64 * spacing;
    if p <= 0.0 {
        return values[0];
    }
    if p >= last {
        return values[n - 1];
    }
    let u = p / spacing;
    if n < 4 {
        let i = (u.floor() as usize).min(n - 2);
        let s = u - i as f64;
        return values[i] * (1.0 - s) + values[i + 1] * s;
    }
    let i = u.floor() as usize;
    let j0 = i.saturating_sub(1).min(n - 4);
    let s = u - j0 as f64;
    let l0 = -(s - 1.0) * (s - 2.0) * (s - 3.0) / 6.0;
    let l1 = s * (s - 2.0) * (s - 3.0) / 2.0;
    let l2 = -s * (s - 1.0) * (s - 3.0) / 2.0;
    let l3 = s * (s - 1.0) * (s - 2.0) / 6.0;
    l0 * values[j0] + l1 * values[j0 + 1] + l2 * values[j0 + 2] + l3 * values[j0 + 3]
}

/// A forward curve `x -> h(x)` sampled on a maturity grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCurve {
    grid: MaturityGrid,
    values: Vec<f64>,
    consumed: f64,
}

impl ForwardCurve {
    pub fn from_values(grid: MaturityGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Grid(format!(
                "expected {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Grid(format!("non-finite value at node {i}")));
        }
        Ok(Self {
            grid,
            values,
            consumed: 0.0,
        })
    }

    pub fn from_fn(grid: MaturityGrid, f: impl Fn(f64) -> f64) -> Self {
        let values = grid.nodes().map(f).collect();
        Self {
            grid,
            values,
            consumed: 0.0,
        }
    }

    pub fn constant(grid: MaturityGrid, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.len()],
            consumed: 0.0,
        }
    }

    pub fn zeros(grid: MaturityGrid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn grid(&self) -> &MaturityGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Total shift already applied to this curve.
    pub fn consumed(&self) -> f64 {
        self.consumed
    }

    /// Same values, with the validity range of `other`.
    pub fn with_consumed_of(mut self, other: &Self) -> Self {
        self.consumed = other.consumed;
        self
    }

    pub fn remaining_pad(&self) -> f64 {
        (self.grid.pad - self.consumed).max(0.0)
    }

    /// Number of leading nodes that are still backed by data.
    pub fn valid_len(&self) -> usize {
        self.grid.count_upto(self.grid.span() - self.consumed)
    }

    /// Short rate `h(0)`.
    pub fn short_rate(&self) -> f64 {
        self.values[0]
    }

    pub fn at(&self, x: f64) -> f64 {
        interpolate(&self.values, self.grid.spacing(), x)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
            consumed: self.consumed,
        }
    }

    /// Pointwise map that also sees the node position.
    pub fn map_with_x(&self, f: impl Fn(f64, f64) -> f64) -> Self {
        let dx = self.grid.spacing();
        Self {
            grid: self.grid,
            values: self
                .values
                .iter()
                .enumerate()
                .map(|(i, &v)| f(i as f64 * dx, v))
                .collect(),
            consumed: self.consumed,
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.grid, other.grid, "curves live on different grids");
        Self {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            consumed: self.consumed.max(other.consumed),
        }
    }

    /// `self += a * other`.
    pub fn axpy(&mut self, a: f64, other: &Self) {
        assert_eq!(self.grid, other.grid, "curves live on different grids");
        for (s, o) in self.values.iter_mut().zip(&other.values) {
            *s += a * o;
        }
        self.consumed = self.consumed.max(other.consumed);
    }

    pub fn scaled(&self, a: f64) -> Self {
        self.map(|v| a * v)
    }

    /// Pointwise product.
    pub fn hadamard(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn sup_norm(&self) -> f64 {
        self.sup_norm_upto(self.valid_len())
    }

    /// Sup norm over the reported range `[0, x_max]`.
    pub fn sup_norm_reported(&self) -> f64 {
        self.sup_norm_upto(self.grid.reported_len())
    }

    fn sup_norm_upto(&self, m: usize) -> f64 {
        self.values[..m]
            .iter()
            .fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }

    /// Sup distance over the reported range.
    pub fn sup_distance(&self, other: &Self) -> f64 {
        let m = self.grid.reported_len();
        self.values[..m]
            .iter()
            .zip(&other.values[..m])
            .fold(0.0_f64, |acc, (a, b)| acc.max((a - b).abs()))
    }
}

impl Add for &ForwardCurve {
    type Output = ForwardCurve;
    fn add(self, rhs: &ForwardCurve) -> ForwardCurve {
        self.zip_map(rhs, |a, b| a + b)
    }
}

impl Sub for &ForwardCurve {
    type Output = ForwardCurve;
    fn sub(self, rhs: &ForwardCurve) -> ForwardCurve {
        self.zip_map(rhs, |a, b| a - b)
    }
}

impl Mul<&ForwardCurve> for f64 {
    type Output = ForwardCurve;
    fn mul(self, rhs: &ForwardCurve) -> ForwardCurve {
        rhs.scaled(self)
    }
}

impl Neg for &ForwardCurve {
    type Output = ForwardCurve;
    fn neg(self) -> ForwardCurve {
        self.scaled(-1.0)
    }
}

/// `A h = dh/dx`.
pub fn deriv(h: &ForwardCurve) -> ForwardCurve {
    let f = &h.values;
    let n = f.len();
    let dx = h.grid.spacing();
    let mut d = vec![0.0; n];
    if n < 5 {
        let inv = 1.0 / (2.0 * dx);
        for i in 1..n - 1 {
            d[i] = (f[i + 1] - f[i - 1]) * inv;
        }
        d[0] = (-3.0 * f[0] + 4.0 * f[1] - f[2]) * inv;
        d[n - 1] = (3.0 * f[n - 1] - 4.0 * f[n - 2] + f[n - 3]) * inv;
    } else {
        let inv = 1.0 / (12.0 * dx);
        for i in 2..n - 2 {
            d[i] = (f[i - 2] - 8.0 * f[i - 1] + 8.0 * f[i + 1] - f[i + 2]) * inv;
        }
        d[0] = (-25.0 * f[0] + 48.0 * f[1] - 36.0 * f[2] + 16.0 * f[3] - 3.0 * f[4]) * inv;
        d[1] = (-3.0 * f[0] - 10.0 * f[1] + 18.0 * f[2] - 6.0 * f[3] + f[4]) * inv;
        d[n - 1] = (25.0 * f[n - 1] - 48.0 * f[n - 2] + 36.0 * f[n - 3] - 16.0 * f[n - 4]
            + 3.0 * f[n - 5])
            * inv;
        d[n - 2] =
            (3.0 * f[n - 1] + 10.0 * f[n - 2] - 18.0 * f[n - 3] + 6.0 * f[n - 4] - f[n - 5]) * inv;
    }
    ForwardCurve {
        grid: h.grid,
        values: d,
        consumed: h.consumed,
    }
}

/// Cumulative integral `x -> \int_0^x h(y) dy` (trapezoidal rule).
pub fn integral(h: &ForwardCurve) -> ForwardCurve {
    let dx = h.grid.spacing();
    let mut acc = 0.0;
    let mut out = Vec::with_capacity(h.values.len());
    out.push(0.0);
    for w in h.values.windows(2) {
        acc += 0.5 * dx * (w[0] + w[1]);
        out.push(acc);
    }
    ForwardCurve {
        grid: h.grid,
        values: out,
        consumed: h.consumed,
    }
}

/// Right shift `(S_t h)(x) = h(x + t)`.
pub fn shift(h: &ForwardCurve, t: f64) -> Result<ForwardCurve> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::Parameter(format!(
            "shift time must be non-negative, got {t}"
        )));
    }
    let remaining = h.remaining_pad();
    if t > remaining + POSITION_SLACK * h.grid.spacing() {
        return Err(Error::PadExhausted {
            requested: t,
            remaining,
        });
    }
    let dx = h.grid.spacing();
    let values = (0..h.values.len())
        .map(|i| interpolate(&h.values, dx, i as f64 * dx + t))
        .collect();
    Ok(ForwardCurve {
        grid: h.grid,
        values,
        consumed: h.consumed + t,
    })
}

/// Weight `w` of the forward-curve norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightFunction {
    /// `w(x) = exp(alpha x)`, alpha > 0.
    Exponential { alpha: f64 },
    /// `w(x) = (1 + x)^alpha`, alpha > 3.
    Polynomial { alpha: f64 },
}

impl Default for WeightFunction {
    fn default() -> Self {
        WeightFunction::Exponential { alpha: 0.1 }
    }
}

impl WeightFunction {
    pub fn exponential(alpha: f64) -> Result<Self> {
        if alpha > 0.0 && alpha.is_finite() {
            Ok(Self::Exponential { alpha })
        } else {
            Err(Error::Parameter(format!(
                "exponential weight needs alpha > 0, got {alpha}"
            )))
        }
    }

    pub fn polynomial(alpha: f64) -> Result<Self> {
        if alpha > 3.0 && alpha.is_finite() {
            Ok(Self::Polynomial { alpha })
        } else {
            Err(Error::Parameter(format!(
                "polynomial weight needs alpha > 3, got {alpha}"
            )))
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            WeightFunction::Exponential { alpha } => (alpha * x).exp(),
            WeightFunction::Polynomial { alpha } => (1.0 + x).powf(alpha),
        }
    }
}

/// Coordinates of `h` in which the Euclidean dot product equals the
/// discrete inner product `g(0)h(0) + \int g' h' w`, restricted to the first
/// `m` nodes.
pub(crate) fn inner_product_coords(h: &ForwardCurve, w: &WeightFunction, m: usize) -> Vec<f64> {
    let d = deriv(h);
    let q = h.grid.trapezoid_weights(m);
    let dx = h.grid.spacing();
    let mut out = Vec::with_capacity(m + 1);
    out.push(h.values[0]);
    out.extend((0..m).map(|i| (q[i] * w.eval(i as f64 * dx)).sqrt() * d.values[i]));
    out
}

/// Weighted inner product `g(0)h(0) + \int g'h'w` on the common valid range.
pub fn inner_w(g: &ForwardCurve, h: &ForwardCurve, w: &WeightFunction) -> f64 {
    assert_eq!(g.grid, h.grid, "curves live on different grids");
    let m = g.valid_len().min(h.valid_len());
    let a = inner_product_coords(g, w, m);
    let b = inner_product_coords(h, w, m);
    a.iter().zip(&b).map(|(x, y)| x * y).sum()
}

/// `||h||_w = sqrt(|h(0)|^2 + \int |h'|^2 w)`.
pub fn norm_w(h: &ForwardCurve, w: &WeightFunction) -> f64 {
    inner_w(h, h, w).max(0.0).sqrt()
}

/// A closed-form curve with a known antiderivative, used to evaluate
/// functionals without discretization error.
pub trait AnalyticCurve {
    fn value(&self, x: f64) -> f64;
    /// `\int_0^x` of the curve.
    fn antiderivative(&self, x: f64) -> f64;
}

/// Continuous linear functional on forward curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LinearFunctional {
    /// `h(x)` (benchmark forward rate).
    PointEval { x: f64 },
    /// `(1/x) \int_0^x h` (benchmark yield); `h(0)` at `x = 0`.
    BenchmarkYield { x: f64 },
    /// `sum_k weights[k] * h(nodes[k])`.
    Combination { weights: Vec<f64>, nodes: Vec<f64> },
}

impl LinearFunctional {
    pub fn short_rate() -> Self {
        LinearFunctional::PointEval { x: 0.0 }
    }

    fn nodes(&self) -> Vec<f64> {
        match self {
            LinearFunctional::PointEval { x } | LinearFunctional::BenchmarkYield { x } => vec![*x],
            LinearFunctional::Combination { nodes, .. } => nodes.clone(),
        }
    }

    /// Checks that every node lies on `[0, x_max]`.
    pub fn validate(&self, grid: &MaturityGrid) -> Result<()> {
        if let LinearFunctional::Combination { weights, nodes } = self {
            if weights.len() != nodes.len() {
                return Err(Error::Parameter(format!(
                    "combination has {} weights for {} nodes",
                    weights.len(),
                    nodes.len()
                )));
            }
        }
        let x_max = grid.x_max();
        for node in self.nodes() {
            if !(node >= 0.0 && node <= x_max * (1.0 + POSITION_SLACK)) {
                return Err(Error::NodeOffGrid { node, x_max });
            }
        }
        Ok(())
    }

    pub fn apply(&self, h: &ForwardCurve) -> Result<f64> {
        self.validate(h.grid())?;
        Ok(match self {
            LinearFunctional::PointEval { x } => h.at(*x),
            LinearFunctional::BenchmarkYield { x } => {
                if *x == 0.0 {
                    h.short_rate()
                } else {
                    integral(h).at(*x) / x
                }
            }
            LinearFunctional::Combination { weights, nodes } => {
                weights.iter().zip(nodes).map(|(w, &x)| w * h.at(x)).sum()
            }
        })
    }

    /// Applies the functional to a closed-form curve.
    pub fn apply_analytic(&self, f: &dyn AnalyticCurve) -> f64 {
        match self {
            LinearFunctional::PointEval { x } => f.value(*x),
            LinearFunctional::BenchmarkYield { x } => {
                if *x == 0.0 {
                    f.value(0.0)
                } else {
                    f.antiderivative(*x) / x
                }
            }
            LinearFunctional::Combination { weights, nodes } => weights
                .iter()
                .zip(nodes)
                .map(|(w, &x)| w * f.value(x))
                .sum(),
        }
    }
}

/// `x -> (-kappa)^order exp(-kappa x)`, i.e. `A^order` applied to an
/// exponential probe.
#[derive(Debug, Clone, Copy)]
struct ExpProbe {
    kappa: f64,
    order: u32,
}

impl AnalyticCurve for ExpProbe {
    fn value(&self, x: f64) -> f64 {
        (-self.kappa).powi(self.order as i32) * (-self.kappa * x).exp()
    }

    fn antiderivative(&self, x: f64) -> f64 {
        (-self.kappa).powi(self.order as i32) * (-(-self.kappa * x).exp_m1()) / self.kappa
    }
}

/// Outcome of the interpolation-rank diagnostic for `(l, l∘A, ..., l∘A^q)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub functionals: usize,
    pub order: usize,
    pub target_rank: usize,
    pub rank: usize,
    pub full_rank: bool,
    pub threshold: f64,
    pub singular_values: Vec<f64>,
}

/// Default exponential probe rates.
pub fn default_probe_rates(probe_dim: usize) -> Vec<f64> {
    (0..probe_dim).map(|m| 0.25 * (m + 1) as f64).collect()
}

/// Numerical rank of the matrix `[l_j(A^k e_m)]` over exponential probes
/// `e_m(x) = exp(-kappa_m x)`.
pub fn rank_a3(functionals: &[LinearFunctional], q: usize, probe_dim: usize) -> Result<RankReport> {
    rank_a3_with_probes(functionals, q, &default_probe_rates(probe_dim))
}

pub fn rank_a3_with_probes(
    functionals: &[LinearFunctional],
    q: usize,
    kappas: &[f64],
) -> Result<RankReport> {
    let p = functionals.len();
    let rows = p * (q + 1);
    if p == 0 {
        return Err(Error::Parameter("need at least one functional".into()));
    }
    if kappas.len() < rows {
        return Err(Error::ProbeBasis(format!(
            "{} probes cannot resolve rank {rows}",
            kappas.len()
        )));
    }
    if let Some(k) = kappas.iter().find(|k| !(**k > 0.0 && k.is_finite())) {
        return Err(Error::ProbeBasis(format!("probe rate {k} is not positive")));
    }
    // The probes themselves must be independent, otherwise a low rank says
    // nothing about the functionals.
    let samples = 64;
    let probe_matrix = DMatrix::from_fn(samples, kappas.len(), |i, m| {
        (-kappas[m] * i as f64 * 0.25).exp()
    });
    let probe_rank = numerical_rank(&probe_matrix).0;
    if probe_rank < kappas.len() {
        return Err(Error::ProbeBasis(format!(
            "probe basis has rank {probe_rank} < {}",
            kappas.len()
        )));
    }

    let matrix = DMatrix::from_fn(rows, kappas.len(), |row, m| {
        let (k, j) = (row / p, row % p);
        functionals[j].apply_analytic(&ExpProbe {
            kappa: kappas[m],
            order: k as u32,
        })
    });
    let (rank, threshold, singular_values) = numerical_rank(&matrix);
    Ok(RankReport {
        functionals: p,
        order: q,
        target_rank: rows,
        rank,
        full_rank: rank == rows,
        threshold,
        singular_values,
    })
}

/// SVD rank with threshold `max_dim * eps * sigma_max`.
pub(crate) fn numerical_rank(m: &DMatrix<f64>) -> (usize, f64, Vec<f64>) {
    let max_dim = m.nrows().max(m.ncols()) as f64;
    let mut sv: Vec<f64> = m
        .clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    let smax = sv.first().copied().unwrap_or(0.0);
    let threshold = max_dim * f64::EPSILON * smax;
    let rank = sv.iter().filter(|&&s| s > threshold).count();
    (rank, threshold, sv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn grid() -> MaturityGrid {
        MaturityGrid::standard()
    }

    #[test]
    fn grid_invariants() {
        assert!(MaturityGrid::new(10.0, 5.0, 2).is_err());
        assert!(MaturityGrid::new(0.0, 5.0, 10).is_err());
        assert!(MaturityGrid::new(10.0, -1.0, 10).is_err());
        let g = grid();
        assert_abs_diff_eq!(g.spacing(), 0.025, epsilon = 1e-15);
        assert_eq!(g.reported_len(), 401);
    }

    #[test]
    fn deriv_of_constant_and_linear() {
        let c = ForwardCurve::constant(grid(), 0.04);
        assert!(deriv(&c).values().iter().all(|v| v.abs() < 1e-12));
        let lin = ForwardCurve::from_fn(grid(), |x| x);
        for v in deriv(&lin).values() {
            assert_abs_diff_eq!(*v, 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn deriv_of_exponential_is_second_order_or_better() {
        let g = grid();
        let h = ForwardCurve::from_fn(g, |x| (-0.5 * x).exp());
        let d = deriv(&h);
        let i = 40; // x = 1
        let exact = -0.5 * (-0.5_f64).exp();
        assert!((d.values()[i] - exact).abs() < g.spacing().powi(2));
    }

    #[test]
    fn integral_exactness() {
        let g = grid();
        let one = integral(&ForwardCurve::constant(g, 1.0));
        for (x, v) in g.nodes().zip(one.values()) {
            assert_abs_diff_eq!(*v, x, epsilon = 1e-12);
        }
        let lin = integral(&ForwardCurve::from_fn(g, |x| x));
        for (x, v) in g.nodes().zip(lin.values()) {
            assert_abs_diff_eq!(*v, 0.5 * x * x, epsilon = 1e-11);
        }
        let e = integral(&ForwardCurve::from_fn(g, |x| (-x).exp()));
        assert!((e.values()[80] - (1.0 - (-2.0_f64).exp())).abs() < g.spacing().powi(2));
    }

    #[test]
    fn shift_cases() {
        let g = grid();
        let flat = ForwardCurve::constant(g, 0.03);
        let s = shift(&flat, 1.3).unwrap();
        assert!(s.values().iter().all(|v| (v - 0.03).abs() < 1e-15));
        assert_abs_diff_eq!(s.consumed(), 1.3);

        let lin = ForwardCurve::from_fn(g, |x| x);
        let s = shift(&lin, 0.5).unwrap();
        for i in 0..s.valid_len() {
            assert_abs_diff_eq!(s.values()[i], g.node(i) + 0.5, epsilon = 1e-12);
        }

        match shift(&flat, 5.5) {
            Err(Error::PadExhausted { .. }) => {}
            other => panic!("expected pad exhaustion, got {other:?}"),
        }
        let s = shift(&flat, 4.0).unwrap();
        assert!(matches!(shift(&s, 1.5), Err(Error::PadExhausted { .. })));
    }

    #[test]
    fn norm_cases() {
        let w = WeightFunction::default();
        assert_abs_diff_eq!(
            norm_w(&ForwardCurve::constant(grid(), 1.0), &w),
            1.0,
            epsilon = 1e-14
        );
        assert_eq!(norm_w(&ForwardCurve::zeros(grid()), &w), 0.0);

        let g = MaturityGrid::new(8.0, 2.0, 401).unwrap();
        let h = ForwardCurve::from_fn(g, |x| x);
        let w = WeightFunction::exponential(0.1).unwrap();
        let exact = 10.0 * (std::f64::consts::E - 1.0);
        let got = norm_w(&h, &w).powi(2);
        assert!(
            (got - exact).abs() < 10.0 * g.spacing().powi(2),
            "{got} vs {exact}"
        );
    }

    #[test]
    fn weight_parameter_checks() {
        assert!(WeightFunction::exponential(0.0).is_err());
        assert!(WeightFunction::polynomial(3.0).is_err());
        let w = WeightFunction::polynomial(4.0).unwrap();
        assert!(w.eval(0.0) >= 1.0 && w.eval(2.0) > w.eval(1.0));
    }

    #[test]
    fn functional_cases() {
        let g = grid();
        let flat = ForwardCurve::constant(g, 0.035);
        let by5 = LinearFunctional::BenchmarkYield { x: 5.0 };
        assert_abs_diff_eq!(by5.apply(&flat).unwrap(), 0.035, epsilon = 1e-15);

        let h = ForwardCurve::from_fn(g, |x| 0.02 + 0.01 * (-x).exp());
        assert_eq!(
            LinearFunctional::short_rate().apply(&h).unwrap(),
            h.short_rate()
        );

        let lin = ForwardCurve::from_fn(g, |x| x);
        let by2 = LinearFunctional::BenchmarkYield { x: 2.0 };
        assert_abs_diff_eq!(by2.apply(&lin).unwrap(), 1.0, epsilon = 1e-12);

        let off = LinearFunctional::PointEval { x: 12.0 };
        assert!(matches!(off.apply(&flat), Err(Error::NodeOffGrid { .. })));
    }

    #[test]
    fn rank_short_rate_and_degenerate_triple() {
        let short = [LinearFunctional::short_rate()];
        let r = rank_a3(&short, 2, 8).unwrap();
        assert_eq!((r.rank, r.full_rank), (3, true));

        let triple = [
            LinearFunctional::PointEval { x: 0.0 },
            LinearFunctional::PointEval { x: 1.0 },
            LinearFunctional::BenchmarkYield { x: 1.0 },
        ];
        let r = rank_a3(&triple, 1, 8).unwrap();
        assert_eq!(r.rank, 5);
        assert!(!r.full_rank);

        let r = rank_a3(&triple, 0, 8).unwrap();
        assert_eq!((r.rank, r.full_rank), (3, true));
    }

    #[test]
    fn rank_rejects_degenerate_probes() {
        let short = [LinearFunctional::short_rate()];
        assert!(matches!(rank_a3(&short, 2, 2), Err(Error::ProbeBasis(_))));
        let dup = [0.5, 0.5, 1.0, 1.5];
        assert!(matches!(
            rank_a3_with_probes(&short, 2, &dup),
            Err(Error::ProbeBasis(_))
        ));
    }
}
