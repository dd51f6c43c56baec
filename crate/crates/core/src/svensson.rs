//! The Svensson family `z₁ + z₂e^{−z₅x} + z₃xe^{−z₅x} + z₄xe^{−z₆x}`, its
//! consistent four-factor dynamics and the bracket check for the
//! volatility `σ(h) = √(αℓ(h)) g₂`.

use nalgebra::{DMatrix, DVector, Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::curve_space::{
    deriv, norm_w, ForwardCurve, LinearFunctional, MaturityGrid, WeightFunction,
};
use crate::error::{Error, Result};
use crate::hjm::{CurveField, FrechetStep, MuField, VolField, VolatilityStructure};
use crate::lie::{lie_bracket, vasicek_baseline, OBSTRUCTION_FACTOR, THRESHOLD_FLOOR};
use crate::linalg::{least_squares, project_onto_span};

/// Fits with `|z₅ − z₆|` below this are flagged as non-identifiable.
pub const DEGENERACY_GAP: f64 = 1e-3;
pub const DEFAULT_TENORS: [f64; 4] = [1.0, 3.0, 5.0, 10.0];
const MAX_ITERATIONS: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvenssonPoint {
    pub z: [f64; 6],
}

impl SvenssonPoint {
    pub fn new(z: [f64; 6]) -> Result<Self> {
        if z.iter().any(|v| !v.is_finite()) || !(z[4] > 0.0) || !(z[5] > 0.0) {
            return Err(Error::Parameter(format!(
                "svensson point needs finite z and z5, z6 > 0, got {z:?}"
            )));
        }
        Ok(Self { z })
    }

    pub fn value(&self, x: f64) -> f64 {
        let [z1, z2, z3, z4, z5, z6] = self.z;
        let e5 = (-z5 * x).exp();
        z1 + (z2 + z3 * x) * e5 + z4 * x * (-z6 * x).exp()
    }

    /// Partial derivatives in `(z₁, …, z₄, ln z₅, ln z₆)`.
    fn log_gradient(&self, x: f64) -> [f64; 6] {
        let [_, z2, z3, z4, z5, z6] = self.z;
        let e5 = (-z5 * x).exp();
        let e6 = (-z6 * x).exp();
        [
            1.0,
            e5,
            x * e5,
            x * e6,
            -z5 * x * (z2 + z3 * x) * e5,
            -z6 * x * x * z4 * e6,
        ]
    }
}

pub fn svensson_eval(z: &SvenssonPoint, grid: MaturityGrid) -> ForwardCurve {
    ForwardCurve::from_fn(grid, |x| z.value(x))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SvenssonFit {
    pub point: SvenssonPoint,
    /// Max absolute misfit over the reported nodes.
    pub sup_misfit: f64,
    /// Root-mean-square misfit over the reported nodes.
    pub l2_misfit: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `|z₅ − z₆|` is too small to separate the `z₃` and `z₄` terms.
    pub degenerate: bool,
}

fn residuals(p: &SvenssonPoint, xs: &[f64], target: &[f64]) -> Vec<f64> {
    xs.iter()
        .zip(target)
        .map(|(&x, &t)| p.value(x) - t)
        .collect()
}

fn cost(r: &[f64]) -> f64 {
    0.5 * r.iter().map(|v| v * v).sum::<f64>()
}

fn from_log(q: &[f64; 6]) -> SvenssonPoint {
    SvenssonPoint {
        z: [q[0], q[1], q[2], q[3], q[4].exp(), q[5].exp()],
    }
}

/// Levenberg–Marquardt least squares over the reported nodes, with `z₅, z₆`
/// kept positive through a log parameterization. The linear coordinates
/// `z₁ … z₄` are first refit for the initial decay rates. Returns the best
/// point found; `converged` is false when the iteration budget ran out.
pub fn svensson_fit(curve: &ForwardCurve, init: &SvenssonPoint) -> Result<SvenssonFit> {
    SvenssonPoint::new(init.z)?;
    let m = curve.grid().reported_len();
    let xs: Vec<f64> = curve.grid().nodes().take(m).collect();
    let target = &curve.values()[..m];
    let mut z = init.z;
    let cols: Vec<Vec<f64>> = (0..4)
        .map(|j| xs.iter().map(|&x| init.log_gradient(x)[j]).collect())
        .collect();
    if let Ok(ls) = least_squares(&cols, target) {
        z[..4].copy_from_slice(&ls.coefficients);
    }
    let mut q = [z[0], z[1], z[2], z[3], z[4].ln(), z[5].ln()];
    let mut r = residuals(&from_log(&q), &xs, target);
    let mut c = cost(&r);
    // Misfit below this is round-off: the curve is reproduced exactly.
    let exact = 1e-14
        * target
            .iter()
            .fold(0.0_f64, |a, v| a.max(v.abs()))
            .max(1e-300);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let p = from_log(&q);
        let jac = DMatrix::from_fn(m, 6, |i, j| p.log_gradient(xs[i])[j]);
        let jtj = jac.transpose() * &jac;
        let g = jac.transpose() * DVector::from_column_slice(&r);
        let jmax = jac.amax();
        let rms = (2.0 * c / m as f64).sqrt();
        if rms <= exact || g.amax() <= 1e-12 * jmax * rms * (m as f64).sqrt() {
            converged = true;
            break;
        }
        let mut accepted = false;
        while lambda < 1e16 {
            let mut a = jtj.clone();
            for k in 0..6 {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-300);
            }
            let Some(step) = a.cholesky().map(|ch| ch.solve(&(-&g))) else {
                lambda *= 4.0;
                continue;
            };
            let mut trial = q;
            for k in 0..6 {
                trial[k] += step[k];
            }
            let tr = residuals(&from_log(&trial), &xs, target);
            let tc = cost(&tr);
            if tc.is_finite() && tc < c {
                let small = (0..6).all(|k| step[k].abs() <= 1e-13 * (1.0 + q[k].abs()));
                q = trial;
                r = tr;
                c = tc;
                lambda = (lambda / 3.0).max(1e-15);
                accepted = true;
                converged = small;
                break;
            }
            lambda *= 4.0;
        }
        if !accepted {
            // No descent direction left at working precision.
            converged =
                rms <= exact || g.amax() <= 1e-6 * jmax * rms.max(1e-300) * (m as f64).sqrt();
            break;
        }
        if converged {
            break;
        }
    }
    let point = from_log(&q);
    Ok(SvenssonFit {
        sup_misfit: r.iter().fold(0.0_f64, |a, v| a.max(v.abs())),
        l2_misfit: (2.0 * c / m as f64).sqrt(),
        degenerate: (point.z[4] - point.z[5]).abs() < DEGENERACY_GAP,
        point,
        iterations,
        converged,
    })
}

/// `g₁ = 1, g₂ = e^{−αx}, g₃ = xe^{−αx}, g₄ = xe^{−2αx}`.
pub fn basis_value(alpha: f64, j: usize, x: f64) -> f64 {
    match j {
        0 => 1.0,
        1 => (-alpha * x).exp(),
        2 => x * (-alpha * x).exp(),
        3 => x * (-2.0 * alpha * x).exp(),
        _ => panic!("svensson basis index {j} out of range"),
    }
}

pub fn basis(alpha: f64, grid: MaturityGrid) -> [ForwardCurve; 4] {
    std::array::from_fn(|j| ForwardCurve::from_fn(grid, |x| basis_value(alpha, j, x)))
}

/// The combination `ℓ = Σ w_k h(x_k)` with `ℓ(g_j) = δ_{j4}`.
pub fn build_ell(alpha: f64, tenors: [f64; 4], grid: &MaturityGrid) -> Result<LinearFunctional> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Parameter(format!(
            "alpha must be positive, got {alpha}"
        )));
    }
    for (i, &t) in tenors.iter().enumerate() {
        if !(t > 0.0 && t <= grid.x_max()) {
            return Err(Error::TenorChoice(format!(
                "tenor {t} outside (0, {}]",
                grid.x_max()
            )));
        }
        if tenors[..i].contains(&t) {
            return Err(Error::TenorChoice(format!("tenor {t} repeated")));
        }
    }
    let m = Matrix4::from_fn(|j, k| basis_value(alpha, j, tenors[k]));
    let sv = m.singular_values();
    if sv.min() < 1e-12 * sv.max() {
        return Err(Error::TenorChoice(format!(
            "tenor system has reciprocal condition {:e}",
            sv.min() / sv.max()
        )));
    }
    let w = m
        .lu()
        .solve(&Vector4::new(0.0, 0.0, 0.0, 1.0))
        .ok_or_else(|| Error::TenorChoice("tenor system is singular".into()))?;
    Ok(LinearFunctional::Combination {
        weights: w.iter().copied().collect(),
        nodes: tenors.to_vec(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistentSvenssonState {
    pub alpha: f64,
    /// Coordinates on `g₁ … g₄`; `z[3] ≥ 0`.
    pub z: [f64; 4],
}

impl ConsistentSvenssonState {
    pub fn new(alpha: f64, z: [f64; 4]) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) || z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter(
                "svensson state needs alpha > 0 and finite coordinates".into(),
            ));
        }
        if z[3] < 0.0 {
            return Err(Error::Domain(format!(
                "Z4 must be nonnegative, got {}",
                z[3]
            )));
        }
        Ok(Self { alpha, z })
    }

    /// The same curve as a Svensson point with `z₅ = α`, `z₆ = 2α`.
    pub fn point(&self) -> SvenssonPoint {
        let [z1, z2, z3, z4] = self.z;
        SvenssonPoint {
            z: [z1, z2, z3, z4, self.alpha, 2.0 * self.alpha],
        }
    }

    pub fn curve(&self, grid: MaturityGrid) -> ForwardCurve {
        svensson_eval(&self.point(), grid)
    }
}

/// One step: `Z¹` fixed, `Z³, Z⁴` decay exactly, `Z²` takes an Euler step.
pub fn consistent_dynamics_step(
    s: &ConsistentSvenssonState,
    dt: f64,
    dw: f64,
) -> ConsistentSvenssonState {
    let a = s.alpha;
    let [z1, z2, z3, z4] = s.z;
    let z2 = z2 + (z3 + z4 - a * z2) * dt + (a * z4).sqrt() * dw;
    ConsistentSvenssonState {
        alpha: a,
        z: [z1, z2, z3 * (-a * dt).exp(), z4 * (-2.0 * a * dt).exp()],
    }
}

/// Sup residual of the least-squares fit of `h` by `g₁ … g₄` over the
/// reported nodes.
pub fn basis_residual(alpha: f64, h: &ForwardCurve) -> Result<f64> {
    let m = h.grid().reported_len();
    let cols: Vec<Vec<f64>> = basis(alpha, *h.grid())
        .iter()
        .map(|g| g.values()[..m].to_vec())
        .collect();
    let target = &h.values()[..m];
    let ls = least_squares(&cols, target)?;
    Ok(ls
        .fitted
        .iter()
        .zip(target)
        .fold(0.0_f64, |a, (f, t)| a.max((f - t).abs())))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SvenssonBracket {
    pub name: String,
    pub ell_h: f64,
    /// `ℓ(σ(h))`, zero by construction of `ℓ`.
    pub ell_sigma: f64,
    /// Residual of `[μ, σ](h)` against `⟨g₂⟩`, relative to the larger of
    /// `‖[μ, σ](h)‖` and `scale · ‖g₂‖`.
    pub residual_rel: f64,
    pub threshold: f64,
    pub in_span: bool,
    pub coefficient: f64,
    /// `−α√(αℓ(h)) − αℓ(μ(h)) / (2√(αℓ(h)))`.
    pub expected_coefficient: f64,
    /// `α√(αℓ(h)) + α|ℓ(μ(h))| / (2√(αℓ(h)))`; the two terms of the
    /// expected coefficient cancel on the family itself.
    pub scale: f64,
    /// `|coefficient − expected| / scale`.
    pub coefficient_error: f64,
    /// Relative sup gap between `μ(h)` and `h' + ℓ(h)(g₂ − g₂²)`.
    pub mu_gap: f64,
}

/// Numerical `[μ, σ]` at each curve, projected on `⟨g₂⟩`. Residual
/// thresholds are calibrated on the Vasicek baseline over `baseline_curves`.
pub fn svensson_bracket_check(
    alpha: f64,
    ell: &LinearFunctional,
    curves: &[(String, ForwardCurve)],
    baseline_curves: &[(String, ForwardCurve)],
    step: &FrechetStep,
) -> Result<Vec<SvenssonBracket>> {
    let baseline = vasicek_baseline(baseline_curves, step)?;
    let threshold = (OBSTRUCTION_FACTOR * baseline).max(THRESHOLD_FLOOR);
    let sigma = VolatilityStructure::svensson(alpha, ell.clone());
    let mu = MuField {
        sigma: &sigma,
        epsilon: 0.0,
        step: *step,
    };
    let vol = VolField {
        sigma: &sigma,
        index: 0,
        epsilon: 0.0,
    };
    curves
        .iter()
        .map(|(name, h)| {
            let ell_h = ell.apply(h)?;
            if !(ell_h > 0.0) {
                return Err(Error::Domain(format!(
                    "{name}: ell(h) = {ell_h} is not positive"
                )));
            }
            let g = basis(alpha, *h.grid());
            let s = vol.eval(h)?;
            let m = mu.eval(h)?;
            let analytic_mu = {
                let mut a = deriv(h);
                a.axpy(ell_h, &(&g[1] - &g[1].hadamard(&g[1])));
                a
            };
            let bracket = lie_bracket(&mu, &vol, h, step)?;
            let w = WeightFunction::default();
            let proj = project_onto_span(&bracket, &[g[1].clone()], &w)?;
            let root = (alpha * ell_h).sqrt();
            let ell_mu = ell.apply(&m)?;
            let expected = -alpha * root - alpha * ell_mu / (2.0 * root);
            let scale = alpha * root + alpha * ell_mu.abs() / (2.0 * root);
            let residual_rel = proj.residual_abs / proj.norm.max(scale * norm_w(&g[1], &w));
            let coefficient = proj.coefficients[0];
            Ok(SvenssonBracket {
                name: name.clone(),
                ell_h,
                ell_sigma: ell.apply(&s)?,
                residual_rel,
                threshold,
                in_span: residual_rel <= threshold,
                coefficient,
                expected_coefficient: expected,
                scale,
                coefficient_error: (coefficient - expected).abs() / scale,
                mu_gap: m.sup_distance(&analytic_mu) / analytic_mu.sup_norm_reported().max(1e-300),
            })
        })
        .collect()
}

/// Five curves `Σ z_j g_j` with `z₄ > 0` and five small perturbations of
/// them off the family, all with `ℓ(h) > 0` for the default tenors.
pub fn family_test_curves(alpha: f64, grid: MaturityGrid) -> Vec<(String, ForwardCurve)> {
    let zs = [
        [0.04, -0.02, 0.01, 0.02],
        [0.03, 0.01, -0.005, 0.01],
        [0.05, -0.01, 0.02, 0.015],
        [0.02, 0.02, 0.0, 0.03],
        [0.06, -0.03, -0.01, 0.04],
    ];
    let mut out: Vec<(String, ForwardCurve)> = zs
        .iter()
        .enumerate()
        .map(|(i, z)| {
            (
                format!("family_{i}"),
                ConsistentSvenssonState { alpha, z: *z }.curve(grid),
            )
        })
        .collect();
    for (i, z) in zs.iter().enumerate() {
        let k = 0.2 + 0.1 * i as f64;
        let bump = ForwardCurve::from_fn(grid, |x| {
            0.002 * (-k * x).exp() + 0.001 * x * (-0.4 * x).exp()
        });
        let h = &ConsistentSvenssonState { alpha, z: *z }.curve(grid) + &bump;
        out.push((format!("off_family_{i}"), h));
    }
    out
}
