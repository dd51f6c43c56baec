//! The Riccati equation `Λ' + (a/2)Λ² + bΛ = λ0`, `Λ(0) = 0`, its closed forms
//! for the Vasicek, Ho-Lee and CIR models, and the loading `B = Λ'`.

use serde::{Deserialize, Serialize};

use crate::curve_space::{deriv, ForwardCurve, MaturityGrid};
use crate::error::{Error, Result};

/// |Λ| above this is treated as a blow-up.
const BLOW_UP: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiccatiParams {
    /// Quadratic coefficient.
    pub a: f64,
    /// Linear coefficient.
    pub b: f64,
    /// Right-hand side `λ(0)`.
    pub lambda0: f64,
}

impl RiccatiParams {
    pub fn new(a: f64, b: f64, lambda0: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite() && lambda0.is_finite()) {
            return Err(Error::Parameter(
                "riccati coefficients must be finite".into(),
            ));
        }
        if lambda0 == 0.0 {
            return Err(Error::Parameter("lambda(0) must be non-zero".into()));
        }
        Ok(Self { a, b, lambda0 })
    }

    /// Normalized `λ(0) = 1`.
    pub fn normalized(a: f64, b: f64) -> Result<Self> {
        Self::new(a, b, 1.0)
    }

    pub fn kind(&self) -> RiccatiKind {
        match (self.a == 0.0, self.b == 0.0) {
            (true, true) => RiccatiKind::HoLee,
            (true, false) => RiccatiKind::Vasicek,
            _ => RiccatiKind::Cir,
        }
    }

    /// `λ0 − (a/2)Λ² − bΛ`.
    pub fn rhs(&self, lambda: f64) -> f64 {
        self.lambda0 - 0.5 * self.a * lambda * lambda - self.b * lambda
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiccatiKind {
    Vasicek,
    HoLee,
    Cir,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    pub params: RiccatiParams,
    pub kind: RiccatiKind,
    pub lambda: ForwardCurve,
    /// `B = Λ'`.
    pub loading: ForwardCurve,
}

impl RiccatiSolution {
    pub fn grid(&self) -> &MaturityGrid {
        self.lambda.grid()
    }

    /// Max-node residual of the equation using the stored `B`.
    pub fn residual(&self) -> f64 {
        residual_with(&self.params, &self.lambda, &self.loading)
    }

    /// Max-node residual with `Λ'` re-computed by finite differences.
    pub fn residual_fd(&self) -> f64 {
        residual_with(&self.params, &self.lambda, &deriv(&self.lambda))
    }
}

fn residual_with(p: &RiccatiParams, lambda: &ForwardCurve, dlambda: &ForwardCurve) -> f64 {
    let m = lambda.grid().reported_len();
    lambda.values()[..m]
        .iter()
        .zip(&dlambda.values()[..m])
        .map(|(&l, &d)| (d - p.rhs(l)).abs())
        .fold(0.0, f64::max)
}

/// RK4 with step equal to the grid spacing, over the whole padded grid.
pub fn solve_riccati(p: RiccatiParams, grid: MaturityGrid) -> Result<RiccatiSolution> {
    let h = grid.spacing();
    let mut lambda = Vec::with_capacity(grid.len());
    let mut l = 0.0_f64;
    lambda.push(l);
    for i in 1..grid.len() {
        let k1 = p.rhs(l);
        let k2 = p.rhs(l + 0.5 * h * k1);
        let k3 = p.rhs(l + 0.5 * h * k2);
        let k4 = p.rhs(l + h * k3);
        l += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if !l.is_finite() || l.abs() > BLOW_UP {
            return Err(Error::SingularSolution { x: grid.node(i) });
        }
        lambda.push(l);
    }
    let loading = lambda.iter().map(|&l| p.rhs(l)).collect();
    Ok(RiccatiSolution {
        params: p,
        kind: p.kind(),
        lambda: ForwardCurve::from_values(grid, lambda)?,
        loading: ForwardCurve::from_values(grid, loading)?,
    })
}

/// `Λ(x) = (1 − e^{−βx})/β`, or `x` for `β = 0`.
pub fn vasicek_lambda(beta: f64, x: f64) -> f64 {
    if beta == 0.0 {
        x
    } else {
        -(-beta * x).exp_m1() / beta
    }
}

/// `B(x) = e^{−βx}`.
pub fn vasicek_loading(beta: f64, x: f64) -> f64 {
    (-beta * x).exp()
}

fn cir_gamma(beta: f64, rho: f64) -> f64 {
    (beta * beta + 2.0 * rho * rho).sqrt()
}

/// `Λ(x) = 2(e^{γx} − 1) / ((γ+β)(e^{γx} − 1) + 2γ)`, `γ = √(β² + 2ρ²)`.
pub fn cir_lambda(beta: f64, rho: f64, x: f64) -> f64 {
    let g = cir_gamma(beta, rho);
    // Written in e^{−γx} to stay finite for large x.
    let e = (-g * x).exp();
    let one_minus = -(-g * x).exp_m1();
    2.0 * one_minus / ((g + beta) * one_minus + 2.0 * g * e)
}

/// `B(x) = Λ'(x) = 4γ² e^{γx} / ((γ+β)(e^{γx} − 1) + 2γ)²`.
pub fn cir_loading(beta: f64, rho: f64, x: f64) -> f64 {
    let g = cir_gamma(beta, rho);
    let e = (-g * x).exp();
    let one_minus = -(-g * x).exp_m1();
    let den = (g + beta) * one_minus + 2.0 * g * e;
    4.0 * g * g * e / (den * den)
}

/// `lim_{x→∞} Λ(x) = 2/(γ+β)`.
pub fn cir_lambda_limit(beta: f64, rho: f64) -> f64 {
    2.0 / (cir_gamma(beta, rho) + beta)
}

/// Coefficients `(a, b, c)` with `B_CIR(x) = b e^{ax} / (e^{ax} + c)²`.
pub fn cir_loading_exponential_form(beta: f64, rho: f64) -> (f64, f64, f64) {
    let g = cir_gamma(beta, rho);
    let c = (g - beta) / (g + beta);
    let b = 4.0 * g * g / ((g + beta) * (g + beta));
    (g, b, c)
}

pub fn closed_form_vasicek(beta: f64, grid: MaturityGrid) -> Result<RiccatiSolution> {
    if !beta.is_finite() || beta < 0.0 {
        return Err(Error::Parameter(format!(
            "vasicek beta must be positive, got {beta}"
        )));
    }
    if beta == 0.0 {
        return closed_form_ho_lee(grid);
    }
    Ok(RiccatiSolution {
        params: RiccatiParams::normalized(0.0, beta)?,
        kind: RiccatiKind::Vasicek,
        lambda: ForwardCurve::from_fn(grid, |x| vasicek_lambda(beta, x)),
        loading: ForwardCurve::from_fn(grid, |x| vasicek_loading(beta, x)),
    })
}

/// `Λ(x) = x`, `B ≡ 1`.
pub fn closed_form_ho_lee(grid: MaturityGrid) -> Result<RiccatiSolution> {
    Ok(RiccatiSolution {
        params: RiccatiParams::normalized(0.0, 0.0)?,
        kind: RiccatiKind::HoLee,
        lambda: ForwardCurve::from_fn(grid, |x| x),
        loading: ForwardCurve::constant(grid, 1.0),
    })
}

/// Closed form for `a = ρ²`, `b = β`.
pub fn closed_form_cir(beta: f64, rho: f64, grid: MaturityGrid) -> Result<RiccatiSolution> {
    if !(rho.is_finite() && rho > 0.0) {
        return Err(Error::Parameter(format!(
            "cir rho must be positive, got {rho}"
        )));
    }
    if !(beta.is_finite() && beta >= 0.0) {
        return Err(Error::Parameter(format!(
            "cir beta must be non-negative, got {beta}"
        )));
    }
    Ok(RiccatiSolution {
        params: RiccatiParams::normalized(rho * rho, beta)?,
        kind: RiccatiKind::Cir,
        lambda: ForwardCurve::from_fn(grid, |x| cir_lambda(beta, rho, x)),
        loading: ForwardCurve::from_fn(grid, |x| cir_loading(beta, rho, x)),
    })
}

/// Vasicek / Ho-Lee: `A = bΛ − (ρ²/2)Λ²`. CIR: `A = bΛ`.
pub fn a_functions(sol: &RiccatiSolution, b_param: f64, rho: f64) -> ForwardCurve {
    match sol.kind {
        RiccatiKind::Vasicek | RiccatiKind::HoLee => {
            sol.lambda.map(|l| b_param * l - 0.5 * rho * rho * l * l)
        }
        RiccatiKind::Cir => sol.lambda.scaled(b_param),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn ho_lee_is_identity() {
        let g = MaturityGrid::standard();
        let s = solve_riccati(RiccatiParams::normalized(0.0, 0.0).unwrap(), g).unwrap();
        assert_eq!(s.kind, RiccatiKind::HoLee);
        for (i, &l) in s.lambda.values().iter().enumerate() {
            assert_relative_eq!(l, g.node(i), epsilon = 1e-12);
        }
        assert_eq!(
            closed_form_vasicek(0.0, g).unwrap().kind,
            RiccatiKind::HoLee
        );
    }

    #[test]
    fn vasicek_rk4_value_at_two() {
        let g = MaturityGrid::standard();
        let s = solve_riccati(RiccatiParams::normalized(0.0, 0.5).unwrap(), g).unwrap();
        assert_relative_eq!(
            s.lambda.at(2.0),
            2.0 * (1.0 - (-1.0_f64).exp()),
            epsilon = 1e-9
        );
        assert!((s.lambda.at(2.0) - 1.26424).abs() < 1e-5);
    }

    #[test]
    fn closed_forms_start_at_zero_with_unit_loading() {
        let g = MaturityGrid::standard();
        for s in [
            closed_form_vasicek(0.5, g).unwrap(),
            closed_form_cir(0.2, 0.1, g).unwrap(),
        ] {
            assert_eq!(s.lambda.values()[0], 0.0);
            assert_relative_eq!(s.loading.values()[0], 1.0, epsilon = 1e-15);
            assert!(s.residual() < 1e-10);
            assert!(s.loading.values().iter().all(|&b| b > 0.0));
            assert!(s.loading.values().windows(2).all(|w| w[1] < w[0]));
        }
    }

    #[test]
    fn vasicek_limit() {
        let g = MaturityGrid::standard();
        let s = closed_form_vasicek(0.5, g).unwrap();
        let last = s.lambda.values()[g.reported_len() - 1];
        assert!((last - 2.0).abs() <= (-0.5 * g.x_max()).exp() / 0.5 + 1e-12);
    }

    #[test]
    fn cir_matches_rk4_and_limit() {
        let g = MaturityGrid::standard();
        let (beta, rho) = (0.2, 0.1);
        let cf = closed_form_cir(beta, rho, g).unwrap();
        let rk = solve_riccati(RiccatiParams::normalized(rho * rho, beta).unwrap(), g).unwrap();
        assert!(cf.lambda.sup_distance(&rk.lambda) < 1e-8);
        let far = cir_lambda(beta, rho, 500.0);
        assert_relative_eq!(far, cir_lambda_limit(beta, rho), max_relative = 1e-14);
    }

    #[test]
    fn cir_loading_matches_quadratic_identity_and_exponential_form() {
        let (beta, rho) = (0.3, 0.15);
        let (a, b, c) = cir_loading_exponential_form(beta, rho);
        for x in [0.0, 0.3, 2.0, 7.5, 14.0] {
            let l = cir_lambda(beta, rho, x);
            let bx = cir_loading(beta, rho, x);
            assert_relative_eq!(
                bx,
                1.0 - beta * l - 0.5 * rho * rho * l * l,
                max_relative = 1e-12
            );
            let e = (a * x).exp();
            assert_relative_eq!(bx, b * e / ((e + c) * (e + c)), max_relative = 1e-12);
        }
    }

    #[test]
    fn a_function_cases() {
        let g = MaturityGrid::standard();
        let v = closed_form_vasicek(0.5, g).unwrap();
        let a = a_functions(&v, 0.0, 0.02);
        assert_relative_eq!(
            a.at(3.0),
            -0.0002 * vasicek_lambda(0.5, 3.0).powi(2),
            max_relative = 1e-12
        );
        let c = closed_form_cir(0.5, 0.05, g).unwrap();
        let a = a_functions(&c, 0.015, 0.05);
        assert_eq!(a.values()[0], 0.0);
        for (ai, li) in a.values().iter().zip(c.lambda.values()).skip(1) {
            assert_relative_eq!(ai / li, 0.015, max_relative = 1e-14);
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        let g = MaturityGrid::standard();
        assert!(RiccatiParams::new(1.0, 1.0, 0.0).is_err());
        assert!(closed_form_vasicek(-1.0, g).is_err());
        assert!(closed_form_cir(0.5, 0.0, g).is_err());
        let blow = solve_riccati(RiccatiParams::normalized(-50.0, 0.0).unwrap(), g);
        assert!(matches!(blow, Err(Error::SingularSolution { .. })));
    }
}
