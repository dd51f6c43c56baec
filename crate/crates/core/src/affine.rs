//! Two-dimensional affine realizations of the Hull–White extended Vasicek
//! (HWV) and CIR (HWCIR) models, the singular set Σ and the Volterra
//! equation for the HWCIR deterministic short rate.
//!
//! Both realizations have the form `r_t = Ψ(t) + Λ'·Z_t` with a scalar
//! factor `Z`, `Z_0 = 0`:
//!
//! * HWV: `Ψ(t)(x) = r*(x+t) + (ρ²/2)(Λ(x+t)² − Λ(x)²)`, `dZ = −βZ dt + ρ dW`.
//! * HWCIR: `Ψ(t) = Fl_t^ν(r*)`, `dZ = −βZ dt + ρ√(c(t) + Z) dW`, `c(t) = Ψ(t)(0)`.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curve_space::{integral, norm_w, shift, ForwardCurve, WeightFunction};
use crate::error::{Error, Result};
use crate::hjm::{flow_field, nu_field, HjmConfig, NuField, VolatilityStructure};
use crate::linalg::project_onto_span;
use crate::riccati::{
    cir_lambda, cir_loading, closed_form_cir, closed_form_vasicek, vasicek_lambda, RiccatiKind,
    RiccatiSolution,
};
use crate::rng::NoiseSource;

/// Relative part of the Σ-membership tolerance `1e-6 (1 + ‖h‖_w)`.
pub const MEMBERSHIP_TOLERANCE: f64 = 1e-6;
/// Relative ν-span residual below which `ν(h) ∈ ⟨λ⟩` is accepted.
pub const NU_SPAN_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AffineKind {
    Hwv,
    Hwcir,
}

impl AffineKind {
    pub fn volatility(&self, beta: f64, rho: f64) -> VolatilityStructure {
        match self {
            AffineKind::Hwv => VolatilityStructure::vasicek(beta, rho),
            AffineKind::Hwcir => VolatilityStructure::cir(beta, rho),
        }
    }

    pub fn riccati(
        &self,
        beta: f64,
        rho: f64,
        grid: crate::curve_space::MaturityGrid,
    ) -> Result<RiccatiSolution> {
        match self {
            AffineKind::Hwv => closed_form_vasicek(beta, grid),
            AffineKind::Hwcir => closed_form_cir(beta, rho, grid),
        }
    }

    fn lambda(&self, beta: f64, rho: f64, x: f64) -> f64 {
        match self {
            AffineKind::Hwv => vasicek_lambda(beta, x),
            AffineKind::Hwcir => cir_lambda(beta, rho, x),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AffineRealization {
    pub kind: AffineKind,
    pub beta: f64,
    pub rho: f64,
    pub riccati: RiccatiSolution,
    pub r_star: ForwardCurve,
    /// Spacing of the time grid `t_k = k dt`.
    pub dt: f64,
    pub b_of_t: Vec<f64>,
    /// `Ψ(t)(0)`; the HWCIR `c(t)`.
    pub c_of_t: Vec<f64>,
    /// `Ψ(t_k)`.
    pub deterministic_path: Vec<ForwardCurve>,
    /// Time at which the HWCIR flow left `{h(0) > ε}`.
    pub domain_exit: Option<f64>,
}

impl AffineRealization {
    pub fn n_steps(&self) -> usize {
        self.deterministic_path.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        self.n_steps() as f64 * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.n_steps()).map(|k| k as f64 * self.dt).collect()
    }

    /// `B = Λ'`.
    pub fn loading(&self) -> &ForwardCurve {
        &self.riccati.loading
    }

    /// `Ψ(t_k) + Λ' z`.
    pub fn curve(&self, k: usize, z: f64) -> ForwardCurve {
        let mut c = self.deterministic_path[k].clone();
        c.axpy(z, &self.riccati.loading.clone().with_consumed_of(&c));
        c
    }

    /// `m(t) = ∫_0^t e^{−β(t−s)} b(s) ds` by the exponential trapezoid recursion.
    pub fn drift_integral(&self) -> Vec<f64> {
        exp_trapezoid(&self.b_of_t, self.beta, self.dt, 0.0)
    }

    /// `A_HWV(t_k, ·) = Ψ(t_k) − Λ'(e^{−βt} r*(0) + m(t))`; zero at `x = 0`.
    pub fn a_hwv(&self) -> Result<Vec<ForwardCurve>> {
        if self.kind != AffineKind::Hwv {
            return Err(Error::Parameter("A_HWV needs an hwv realization".into()));
        }
        let m = self.drift_integral();
        let r0 = self.r_star.short_rate();
        Ok(self
            .deterministic_path
            .iter()
            .enumerate()
            .map(|(k, psi)| {
                let t = k as f64 * self.dt;
                let shift_z = (-self.beta * t).exp() * r0 + m[k];
                let mut a = psi.clone();
                a.axpy(
                    -shift_z,
                    &self.riccati.loading.clone().with_consumed_of(psi),
                );
                a
            })
            .collect())
    }

    /// `A_HWV(t_k, 0)` for every `k`.
    pub fn a_hwv_at_zero(&self) -> Result<Vec<f64>> {
        Ok(self.a_hwv()?.iter().map(|a| a.short_rate()).collect())
    }
}

fn steps(horizon: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0 && horizon > 0.0 && dt <= horizon) {
        return Err(Error::Parameter(format!(
            "need 0 < dt <= horizon, got {dt}, {horizon}"
        )));
    }
    Ok(((horizon / dt) - 1e-9).ceil() as usize)
}

/// Second-order differences on a uniform time grid, one-sided at the ends.
pub fn time_derivative(v: &[f64], dt: f64) -> Vec<f64> {
    let n = v.len();
    match n {
        0 => vec![],
        1 => vec![0.0],
        2 => vec![(v[1] - v[0]) / dt; 2],
        _ => {
            let mut d = vec![0.0; n];
            d[0] = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * dt);
            for i in 1..n - 1 {
                d[i] = (v[i + 1] - v[i - 1]) / (2.0 * dt);
            }
            d[n - 1] = (3.0 * v[n - 1] - 4.0 * v[n - 2] + v[n - 3]) / (2.0 * dt);
            d
        }
    }
}

/// `y(t) = e^{−βt} y0 + ∫_0^t e^{−β(t−s)} f(s) ds` on the grid of `f`.
pub fn exp_trapezoid(f: &[f64], beta: f64, dt: f64, y0: f64) -> Vec<f64> {
    let decay = (-beta * dt).exp();
    let mut out = Vec::with_capacity(f.len());
    let mut y = y0;
    out.push(y);
    for w in f.windows(2) {
        y = decay * y + 0.5 * dt * (decay * w[0] + w[1]);
        out.push(y);
    }
    out
}

fn check_pad(r_star: &ForwardCurve, horizon: f64) -> Result<()> {
    if horizon > r_star.remaining_pad() + 1e-9 {
        return Err(Error::PadExhausted {
            requested: horizon,
            remaining: r_star.remaining_pad(),
        });
    }
    Ok(())
}

/// Hull–White extended Vasicek fitted to `r*` on `t_k = k dt`, `t ≤ horizon`.
pub fn hwv_fit(
    r_star: &ForwardCurve,
    beta: f64,
    rho: f64,
    horizon: f64,
    dt: f64,
) -> Result<AffineRealization> {
    if !(rho.is_finite() && rho >= 0.0) {
        return Err(Error::Parameter(format!("rho must be >= 0, got {rho}")));
    }
    let n = steps(horizon, dt)?;
    let dt = horizon / n as f64;
    check_pad(r_star, horizon)?;
    let riccati = closed_form_vasicek(beta, *r_star.grid())?;
    let grid = *r_star.grid();
    let half_rho2 = 0.5 * rho * rho;
    let mut path = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let t = k as f64 * dt;
        let shifted = shift(r_star, t)?;
        let corr = ForwardCurve::from_fn(grid, |x| {
            half_rho2 * (vasicek_lambda(beta, x + t).powi(2) - vasicek_lambda(beta, x).powi(2))
        });
        let mut psi = shifted;
        psi.axpy(1.0, &corr.with_consumed_of(&psi));
        path.push(psi);
    }
    let r_t: Vec<f64> = (0..=n).map(|k| r_star.at(k as f64 * dt)).collect();
    let dr = time_derivative(&r_t, dt);
    let b_of_t = (0..=n)
        .map(|k| {
            let t = k as f64 * dt;
            // (ρ²/(2β))(1 − e^{−2βt}), with limit ρ² t at β = 0.
            let g = if beta == 0.0 {
                rho * rho * t
            } else {
                -half_rho2 / beta * (-2.0 * beta * t).exp_m1()
            };
            dr[k] + beta * r_t[k] + g
        })
        .collect();
    let c_of_t = path.iter().map(|p| p.short_rate()).collect();
    Ok(AffineRealization {
        kind: AffineKind::Hwv,
        beta,
        rho,
        riccati,
        r_star: r_star.clone(),
        dt,
        b_of_t,
        c_of_t,
        deterministic_path: path,
        domain_exit: None,
    })
}

/// Hull–White extended CIR: `Ψ(t) = Fl_t^ν(r*)`, `b = βc + c'`.
pub fn hwcir_fit(
    r_star: &ForwardCurve,
    beta: f64,
    rho: f64,
    horizon: f64,
    dt: f64,
    epsilon: f64,
) -> Result<AffineRealization> {
    let n = steps(horizon, dt)?;
    let dt = horizon / n as f64;
    check_pad(r_star, horizon)?;
    if !(r_star.short_rate() > epsilon) {
        return Err(Error::Domain(format!(
            "r*(0) = {} must exceed the floor {epsilon}",
            r_star.short_rate()
        )));
    }
    let riccati = closed_form_cir(beta, rho, *r_star.grid())?;
    let sigma = VolatilityStructure::cir(beta, rho);
    let fl = flow_field(
        &NuField {
            sigma: &sigma,
            epsilon,
        },
        r_star,
        horizon,
        dt,
    )?;
    if let Some(t) = fl.domain_exit {
        return Err(Error::Domain(format!(
            "deterministic flow left the domain at t = {t}"
        )));
    }
    let c_of_t: Vec<f64> = fl.path.iter().map(|p| p.short_rate()).collect();
    let dc = time_derivative(&c_of_t, dt);
    let b_of_t = c_of_t.iter().zip(&dc).map(|(c, d)| beta * c + d).collect();
    Ok(AffineRealization {
        kind: AffineKind::Hwcir,
        beta,
        rho,
        riccati,
        r_star: r_star.clone(),
        dt,
        b_of_t,
        c_of_t,
        deterministic_path: fl.path,
        domain_exit: None,
    })
}

pub fn fit(
    kind: AffineKind,
    r_star: &ForwardCurve,
    beta: f64,
    rho: f64,
    horizon: f64,
    dt: f64,
    epsilon: f64,
) -> Result<AffineRealization> {
    match kind {
        AffineKind::Hwv => hwv_fit(r_star, beta, rho, horizon, dt),
        AffineKind::Hwcir => hwcir_fit(r_star, beta, rho, horizon, dt, epsilon),
    }
}

/// `K(u) = (ΛΛ')(u)` for the CIR Riccati solution.
fn cir_kernel(beta: f64, rho: f64, u: f64) -> f64 {
    cir_lambda(beta, rho, u) * cir_loading(beta, rho, u)
}

/// Solves `c(t) = r*(t) + ρ² ∫_0^t c(s) (ΛΛ')(t−s) ds` on `t_k = k dt` with
/// the trapezoidal rule. `K(0) = 0` makes every step explicit.
pub fn volterra_c(
    r_star: &ForwardCurve,
    beta: f64,
    rho: f64,
    horizon: f64,
    dt: f64,
) -> Result<Vec<f64>> {
    let n = steps(horizon, dt)?;
    let dt = horizon / n as f64;
    let kernel: Vec<f64> = (0..=n)
        .map(|k| cir_kernel(beta, rho, k as f64 * dt))
        .collect();
    let rho2 = rho * rho;
    let mut c = Vec::with_capacity(n + 1);
    c.push(r_star.short_rate());
    for k in 1..=n {
        // Weight dt/2 at s = 0, dt inside; the s = t_k term vanishes.
        let mut acc = 0.5 * c[0] * kernel[k];
        for j in 1..k {
            acc += c[j] * kernel[k - j];
        }
        c.push(r_star.at(k as f64 * dt) + rho2 * dt * acc);
    }
    Ok(c)
}

/// Composite Simpson on `n` uniform intervals, closed with a 3/8 panel for odd `n`.
fn simpson(f: &[f64], dt: f64) -> f64 {
    let n = f.len() - 1;
    match n {
        0 => 0.0,
        1 => 0.5 * dt * (f[0] + f[1]),
        2 => dt / 3.0 * (f[0] + 4.0 * f[1] + f[2]),
        _ => {
            let even = if n.is_multiple_of(2) { n } else { n - 3 };
            let mut s = 0.0;
            for i in (0..even).step_by(2) {
                s += dt / 3.0 * (f[i] + 4.0 * f[i + 1] + f[i + 2]);
            }
            if even < n {
                let i = even;
                s += 3.0 * dt / 8.0 * (f[i] + 3.0 * f[i + 1] + 3.0 * f[i + 2] + f[i + 3]);
            }
            s
        }
    }
}

/// Max over the time grid of `|c(t) − r*(t) − ρ² ∫ c(s)K(t−s) ds|` with the
/// integral taken by Simpson's rule.
pub fn volterra_residual(r_star: &ForwardCurve, beta: f64, rho: f64, dt: f64, c: &[f64]) -> f64 {
    let mut worst = 0.0_f64;
    let mut integrand = Vec::with_capacity(c.len());
    for k in 1..c.len() {
        integrand.clear();
        integrand.extend((0..=k).map(|j| c[j] * cir_kernel(beta, rho, (k - j) as f64 * dt)));
        let r = c[k] - r_star.at(k as f64 * dt) - rho * rho * simpson(&integrand, dt);
        worst = worst.max(r.abs());
    }
    worst.max((c[0] - r_star.short_rate()).abs())
}

/// Max gap between `c` and the solution of `c' = b − βc`, `c(0) = c_0`,
/// rebuilt from `b` by quadrature.
pub fn b_c_consistency(b: &[f64], c: &[f64], beta: f64, dt: f64) -> f64 {
    let rebuilt = exp_trapezoid(b, beta, dt, c[0]);
    rebuilt
        .iter()
        .zip(c)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Least-squares view of a curve against `Σ`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SingularDecomposition {
    /// `(a₁, a₂, a₃)` of `h ≈ a₁ + a₂Λ² + a₃Λ`.
    pub coefficients: [f64; 3],
    /// Sup-norm misfit of the free fit.
    pub residual: f64,
    /// Value of `a₂` required by the model.
    pub expected_a2: f64,
    pub constraint_check: f64,
    /// Sup-norm misfit of the fit with the constraint imposed.
    pub distance: f64,
    /// Relative residual of `ν(h)` against `⟨Λ'⟩`, when `h` is in the domain.
    pub nu_span_residual: Option<f64>,
    pub tolerance: f64,
    pub is_member: bool,
}

/// Precomputed pseudo-inverses for repeated Σ fits on one grid.
#[derive(Debug, Clone)]
pub struct SingularProjector {
    kind: RiccatiKind,
    half_rho2: f64,
    lambda: Vec<f64>,
    free_cols: DMatrix<f64>,
    free_pinv: DMatrix<f64>,
    con_cols: DMatrix<f64>,
    con_pinv: DMatrix<f64>,
}

fn pinv(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > crate::linalg::MIN_RECIPROCAL_CONDITION * smax) {
        return Err(Error::Conditioning(format!(
            "singular-set basis has singular values in [{smin:e}, {smax:e}]"
        )));
    }
    svd.pseudo_inverse(0.0)
        .map_err(|e| Error::Conditioning(e.to_string()))
}

impl SingularProjector {
    pub fn new(sol: &RiccatiSolution, rho: f64) -> Result<Self> {
        let m = sol.grid().reported_len();
        let lambda: Vec<f64> = sol.lambda.values()[..m].to_vec();
        let half_rho2 = 0.5 * rho * rho;
        let free_cols = DMatrix::from_fn(m, 3, |i, j| match j {
            0 => 1.0,
            1 => lambda[i] * lambda[i],
            _ => lambda[i],
        });
        let con_cols = match sol.kind {
            RiccatiKind::Vasicek | RiccatiKind::HoLee => {
                DMatrix::from_fn(m, 2, |i, j| if j == 0 { 1.0 } else { lambda[i] })
            }
            RiccatiKind::Cir => DMatrix::from_fn(m, 2, |i, j| {
                if j == 0 {
                    1.0 - half_rho2 * lambda[i] * lambda[i]
                } else {
                    lambda[i]
                }
            }),
        };
        Ok(Self {
            kind: sol.kind,
            half_rho2,
            free_pinv: pinv(&free_cols)?,
            con_pinv: pinv(&con_cols)?,
            free_cols,
            con_cols,
            lambda,
        })
    }

    fn sup_misfit(
        cols: &DMatrix<f64>,
        coef: &nalgebra::DVector<f64>,
        target: &nalgebra::DVector<f64>,
    ) -> f64 {
        (cols * coef - target).amax()
    }

    fn constrained_target(&self, h: &ForwardCurve) -> nalgebra::DVector<f64> {
        let m = self.lambda.len();
        match self.kind {
            RiccatiKind::Vasicek | RiccatiKind::HoLee => nalgebra::DVector::from_fn(m, |i, _| {
                h.values()[i] + self.half_rho2 * self.lambda[i] * self.lambda[i]
            }),
            RiccatiKind::Cir => nalgebra::DVector::from_column_slice(&h.values()[..m]),
        }
    }

    /// Sup-norm distance from `h` to `Σ` over the reported range.
    pub fn distance(&self, h: &ForwardCurve) -> f64 {
        let t = self.constrained_target(h);
        let coef = &self.con_pinv * &t;
        Self::sup_misfit(&self.con_cols, &coef, &t)
    }

    /// `(a₁, a₂, a₃)`, free-fit residual, expected `a₂`, constrained distance.
    pub fn fit(&self, h: &ForwardCurve) -> ([f64; 3], f64, f64, f64) {
        let m = self.lambda.len();
        let t = nalgebra::DVector::from_column_slice(&h.values()[..m]);
        let coef = &self.free_pinv * &t;
        let residual = Self::sup_misfit(&self.free_cols, &coef, &t);
        let a = [coef[0], coef[1], coef[2]];
        let expected = match self.kind {
            RiccatiKind::Vasicek | RiccatiKind::HoLee => -self.half_rho2,
            RiccatiKind::Cir => -self.half_rho2 * a[0],
        };
        (a, residual, expected, self.distance(h))
    }
}

/// Fits `h` on `span{1, Λ, Λ²}`, checks the model constraint on `a₂` and
/// whether `ν(h)` lies in `⟨Λ'⟩`.
pub fn singular_decompose(
    h: &ForwardCurve,
    sol: &RiccatiSolution,
    rho: f64,
) -> Result<SingularDecomposition> {
    let proj = SingularProjector::new(sol, rho)?;
    let (coefficients, residual, expected_a2, distance) = proj.fit(h);
    let w = WeightFunction::default();
    let tolerance = MEMBERSHIP_TOLERANCE * (1.0 + norm_w(h, &w));
    let beta = sol.params.b;
    let sigma = match sol.kind {
        RiccatiKind::Vasicek | RiccatiKind::HoLee => VolatilityStructure::vasicek(beta, rho),
        RiccatiKind::Cir => VolatilityStructure::cir(beta, rho),
    };
    let nu_span_residual = match nu_field(&sigma, h, 0.0) {
        Ok(nu) => {
            Some(project_onto_span(&nu, std::slice::from_ref(&sol.loading), &w)?.residual_rel)
        }
        Err(Error::Domain(_)) => None,
        Err(e) => return Err(e),
    };
    let constraint_check = (coefficients[1] - expected_a2).abs();
    Ok(SingularDecomposition {
        coefficients,
        residual,
        expected_a2,
        constraint_check,
        distance,
        nu_span_residual,
        tolerance,
        is_member: residual < tolerance && constraint_check < tolerance,
    })
}

/// How the factor `Z` is advanced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZScheme {
    /// Exact OU transition (HWV only; HWCIR falls back to Euler).
    Exact,
    Euler,
}

/// One factor path `Z_0..Z_n` driven by the given Brownian increments.
pub fn factor_path(
    model: &AffineRealization,
    dw: &[f64],
    scheme: ZScheme,
    epsilon: f64,
) -> (Vec<f64>, u64) {
    let dt = model.dt;
    let beta = model.beta;
    let rho = model.rho;
    let mut z = Vec::with_capacity(dw.len() + 1);
    let mut cur = 0.0_f64;
    let mut floors = 0;
    z.push(cur);
    let decay = (-beta * dt).exp();
    let ou_sd = if beta == 0.0 {
        dt.sqrt()
    } else {
        (-(-2.0 * beta * dt).exp_m1() / (2.0 * beta)).sqrt()
    };
    for (k, &w) in dw.iter().enumerate() {
        cur = match (model.kind, scheme) {
            (AffineKind::Hwv, ZScheme::Exact) => decay * cur + rho * ou_sd * w / dt.sqrt(),
            (AffineKind::Hwv, ZScheme::Euler) => cur - beta * cur * dt + rho * w,
            (AffineKind::Hwcir, _) => {
                let r = model.c_of_t[k] + cur;
                let r_plus = if r > epsilon {
                    r
                } else {
                    floors += 1;
                    epsilon
                };
                cur - beta * cur * dt + rho * r_plus.sqrt() * w
            }
        };
        z.push(cur);
    }
    (z, floors)
}

/// Ensemble statistics of a realization, per time step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Ensemble {
    pub times: Vec<f64>,
    pub short_rate_mean: Vec<f64>,
    pub short_rate_std: Vec<f64>,
    pub z_mean: Vec<f64>,
    pub z_var: Vec<f64>,
    /// Maturities `τ` of the bonds `P(t, t + τ)`.
    pub bond_tenors: Vec<f64>,
    /// Mean `P(t, t + τ)` indexed `[time][tenor]`.
    pub bond_mean: Vec<Vec<f64>>,
    pub floor_hits: u64,
    pub paths_with_floor: usize,
    /// `Z` paths indexed `[path][time]`.
    #[serde(skip)]
    pub z_paths: Vec<Vec<f64>>,
}

pub const DEFAULT_BOND_TENORS: [f64; 4] = [1.0, 2.0, 5.0, 10.0];

fn mean_var(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    let var = if n > 1.0 {
        xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var)
}

/// Simulates `n_paths` factor paths on the model time grid. Paths run in
/// parallel; reductions are sequential in path order.
pub fn simulate_realization(
    model: &AffineRealization,
    cfg: &HjmConfig,
    n_paths: usize,
    scheme: ZScheme,
) -> Result<Ensemble> {
    cfg.validate()?;
    if n_paths == 0 {
        return Err(Error::Parameter("need at least one path".into()));
    }
    if (cfg.effective_dt() - model.dt).abs() > 1e-12 * model.dt.max(1.0) {
        return Err(Error::Parameter(format!(
            "simulation step {} differs from the model time grid {}",
            cfg.effective_dt(),
            model.dt
        )));
    }
    let n = cfg.n_steps();
    if n > model.n_steps() {
        return Err(Error::Parameter(format!(
            "horizon {} exceeds the fitted horizon {}",
            cfg.horizon,
            model.horizon()
        )));
    }
    let noise = NoiseSource::new(cfg.seed);
    let paths: Vec<(Vec<f64>, u64)> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let dw: Vec<f64> = noise
                .increments(p as u64, n, 1, model.dt)
                .into_iter()
                .map(|v| v[0])
                .collect();
            factor_path(model, &dw, scheme, cfg.epsilon)
        })
        .collect();
    let tenors: Vec<f64> = DEFAULT_BOND_TENORS
        .iter()
        .copied()
        .filter(|&t| t <= model.r_star.grid().x_max() + 1e-12)
        .collect();
    let lambda_at: Vec<f64> = tenors
        .iter()
        .map(|&t| model.kind.lambda(model.beta, model.rho, t))
        .collect();
    let mut ens = Ensemble {
        times: (0..=n).map(|k| k as f64 * model.dt).collect(),
        short_rate_mean: vec![],
        short_rate_std: vec![],
        z_mean: vec![],
        z_var: vec![],
        bond_tenors: tenors.clone(),
        bond_mean: vec![],
        floor_hits: paths.iter().map(|p| p.1).sum(),
        paths_with_floor: paths.iter().filter(|p| p.1 > 0).count(),
        z_paths: vec![],
    };
    for k in 0..=n {
        let zk = paths.iter().map(|p| p.0[k]);
        let (zm, zv) = mean_var(zk.clone());
        let c = model.c_of_t[k];
        ens.z_mean.push(zm);
        ens.z_var.push(zv);
        ens.short_rate_mean.push(c + zm);
        ens.short_rate_std.push(zv.sqrt());
        let int_psi = integral(&model.deterministic_path[k]);
        let bonds = tenors
            .iter()
            .zip(&lambda_at)
            .map(|(&tau, &lam)| {
                let base = int_psi.at(tau);
                zk.clone().map(|z| (-(base + z * lam)).exp()).sum::<f64>() / n_paths as f64
            })
            .collect();
        ens.bond_mean.push(bonds);
    }
    ens.z_paths = paths.into_iter().map(|p| p.0).collect();
    Ok(ens)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curve_space::MaturityGrid;
    use crate::riccati::a_functions;
    use approx::assert_relative_eq;

    fn grid() -> MaturityGrid {
        MaturityGrid::standard()
    }

    fn hump(g: MaturityGrid) -> ForwardCurve {
        ForwardCurve::from_fn(g, |x| {
            0.03 + 0.01 * (-0.4 * x).exp() + 0.02 * x * (-0.6 * x).exp()
        })
    }

    #[test]
    fn hwv_b_at_zero_and_one_for_flat_curve() {
        let g = grid();
        let r = ForwardCurve::constant(g, 0.03);
        let m = hwv_fit(&r, 0.5, 0.02, 1.0, 1e-3).unwrap();
        assert_relative_eq!(m.b_of_t[0], 0.015, epsilon = 1e-14);
        let b1 = 0.5 * 0.03 + 0.0004 * (1.0 - (-1.0_f64).exp());
        assert_relative_eq!(*m.b_of_t.last().unwrap(), b1, epsilon = 1e-12);
    }

    #[test]
    fn hwv_zero_constraint_holds() {
        let g = grid();
        let m = hwv_fit(&hump(g), 0.5, 0.02, 1.0, 1e-3).unwrap();
        let a0 = m.a_hwv_at_zero().unwrap();
        let worst = a0.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        assert!(worst < 1e-8, "{worst:e}");
    }

    #[test]
    fn hwv_on_singular_set_is_time_homogeneous() {
        let g = grid();
        let (beta, rho) = (0.5, 0.02);
        let sol = closed_form_vasicek(beta, g).unwrap();
        let mut r = a_functions(&sol, 0.02, rho);
        r.axpy(0.01, &sol.loading);
        let m = hwv_fit(&r, beta, rho, 1.0, 1e-3).unwrap();
        let b0 = m.b_of_t[0];
        assert!(m.b_of_t.iter().all(|b| (b - b0).abs() < 1e-6));
        assert_relative_eq!(b0, 0.02, epsilon = 1e-7);
    }

    #[test]
    fn volterra_trivial_cases() {
        let g = grid();
        let r = hump(g);
        let c = volterra_c(&r, 0.2, 0.0, 1.0, 0.01).unwrap();
        for (k, v) in c.iter().enumerate() {
            assert_relative_eq!(*v, r.at(k as f64 * 0.01), epsilon = 1e-15);
        }
        let c = volterra_c(&r, 0.2, 0.1, 1.0, 0.01).unwrap();
        assert_eq!(c[0], r.short_rate());
    }

    #[test]
    fn volterra_self_consistency() {
        let g = grid();
        let r = ForwardCurve::constant(g, 0.04);
        let dt = 1e-3;
        let c = volterra_c(&r, 0.2, 0.1, 1.0, dt).unwrap();
        assert!(volterra_residual(&r, 0.2, 0.1, dt, &c) < 1e-6);
        assert!(c.last().unwrap() > &0.04);
    }

    #[test]
    fn hwcir_flow_matches_volterra() {
        let g = grid();
        let (beta, rho) = (0.5, 0.05);
        let r = hump(g);
        let dt = 1e-2;
        let m = hwcir_fit(&r, beta, rho, 1.0, dt, 1e-6).unwrap();
        let c = volterra_c(&r, beta, rho, 1.0, dt).unwrap();
        let gap = m
            .c_of_t
            .iter()
            .zip(&c)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(gap < 1e-5, "{gap:e}");
        assert!(b_c_consistency(&m.b_of_t, &m.c_of_t, beta, dt) < 1e-6);
    }

    #[test]
    fn hwcir_b_tends_to_hwv_b_as_rho_vanishes() {
        let g = grid();
        let r = hump(g);
        let cir = hwcir_fit(&r, 0.5, 1e-5, 1.0, 1e-2, 1e-6).unwrap();
        let hwv = hwv_fit(&r, 0.5, 0.0, 1.0, 1e-2).unwrap();
        for (a, b) in cir.b_of_t.iter().zip(&hwv.b_of_t) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn hwcir_on_singular_set_is_time_homogeneous() {
        let g = grid();
        let (beta, rho) = (0.5, 0.05);
        let sol = closed_form_cir(beta, rho, g).unwrap();
        let mut r = a_functions(&sol, 0.02, rho);
        r.axpy(0.03, &sol.loading);
        let m = hwcir_fit(&r, beta, rho, 1.0, 1e-3, 1e-6).unwrap();
        let b0 = m.b_of_t[0];
        let worst = m.b_of_t.iter().map(|b| (b - b0).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-6, "{worst:e}");
        assert_relative_eq!(b0, 0.02, epsilon = 1e-6);
        assert!(*m.c_of_t.last().unwrap() > 0.03);
    }

    #[test]
    fn singular_decompose_cases() {
        let g = grid();
        let (beta, rho) = (0.5, 0.02);
        let sol = closed_form_vasicek(beta, g).unwrap();
        let h = sol
            .lambda
            .map(|l| 0.03 - 0.5 * rho * rho * l * l + 0.01 * l);
        let d = singular_decompose(&h, &sol, rho).unwrap();
        assert!(d.is_member);
        assert_relative_eq!(d.coefficients[0], 0.03, epsilon = 1e-12);
        assert_relative_eq!(d.coefficients[1], -0.0002, epsilon = 1e-12);
        assert_relative_eq!(d.coefficients[2], 0.01, epsilon = 1e-12);
        assert!(d.nu_span_residual.unwrap() < 1e-6);

        let flat = ForwardCurve::constant(g, 0.03);
        let d = singular_decompose(&flat, &sol, rho).unwrap();
        assert!(!d.is_member);
        assert!(d.nu_span_residual.unwrap() > 0.1);

        let zero = ForwardCurve::zeros(g);
        let d = singular_decompose(&zero, &sol, 0.0).unwrap();
        assert!(d.is_member);
        assert!(d.coefficients.iter().all(|c| c.abs() < 1e-15));
    }

    #[test]
    fn cir_singular_set_uses_negative_quadratic_coefficient() {
        let g = grid();
        let (beta, rho) = (0.5, 0.05);
        let sol = closed_form_cir(beta, rho, g).unwrap();
        let mut h = a_functions(&sol, 0.02, rho);
        h.axpy(0.03, &sol.loading);
        let d = singular_decompose(&h, &sol, rho).unwrap();
        assert!(d.is_member, "{d:?}");
        assert_relative_eq!(d.coefficients[1], -0.5 * rho * rho * 0.03, epsilon = 1e-10);
        assert!(d.nu_span_residual.unwrap() < 1e-6);
    }

    #[test]
    fn deterministic_ensemble_without_noise() {
        let g = grid();
        let r = hump(g);
        let m = hwv_fit(&r, 0.5, 0.0, 1.0, 0.1).unwrap();
        let cfg = HjmConfig::new(0.1, 1.0, 0.0, 3).unwrap();
        let e = simulate_realization(&m, &cfg, 4, ZScheme::Exact).unwrap();
        assert!(e.z_var.iter().all(|v| *v == 0.0));
        let p0 = (-integral(&r).at(5.0)).exp();
        assert_relative_eq!(e.bond_mean[0][2], p0, max_relative = 1e-14);
    }

    #[test]
    fn ou_variance_matches() {
        let g = grid();
        let (beta, rho) = (0.5, 0.02);
        let m = hwv_fit(&hump(g), beta, rho, 1.0, 0.1).unwrap();
        let cfg = HjmConfig::new(0.1, 1.0, 0.0, 42).unwrap();
        let n = 10_000;
        let e = simulate_realization(&m, &cfg, n, ZScheme::Exact).unwrap();
        for (k, &t) in e.times.iter().enumerate().skip(1) {
            let var = rho * rho * (1.0 - (-2.0 * beta * t).exp()) / (2.0 * beta);
            let se = var * (2.0 / (n as f64 - 1.0)).sqrt();
            assert!((e.z_var[k] - var).abs() < 3.0 * se, "t = {t}");
        }
    }

    #[test]
    fn pad_is_checked() {
        let g = MaturityGrid::new(10.0, 0.5, 421).unwrap();
        let r = ForwardCurve::constant(g, 0.03);
        assert!(matches!(
            hwv_fit(&r, 0.5, 0.02, 1.0, 0.01),
            Err(Error::PadExhausted { .. })
        ));
    }
}
