//! HJM vector fields on forward curves, Fréchet derivatives, the Euler scheme
//! for the mild solution and the deterministic flow integrator.
//!
//! The drift is forced by no-arbitrage to `α_HJM(h) = Σ σ_i(h) ∫σ_i(h)`. The
//! Itô and Stratonovich drift fields are
//! `ν(h) = Ah + α_HJM(h)` and `μ(h) = ν(h) − ½ Σ Dσ_i(h)·σ_i(h)` with `A = d/dx`.

use serde::{Deserialize, Serialize};

use crate::curve_space::{
    deriv, integral, norm_w, numerical_rank, shift, ForwardCurve, LinearFunctional, MaturityGrid,
    WeightFunction,
};
use crate::error::{Error, Result};
use crate::expr::{Expr, Var};
use crate::riccati::{cir_loading, vasicek_loading};

pub const DEFAULT_EPSILON: f64 = 1e-6;
pub const DEFAULT_FRECHET_STEP: f64 = 1e-5;
/// Times the Fréchet step is divided by 10 after a domain error.
const FRECHET_RETRIES: usize = 3;

/// Fixed curve `λ` of a constant-direction factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Direction {
    /// Closed-form curve in `x`.
    Expr { expr: Expr },
    /// `e^{−βx}`.
    Vasicek { beta: f64 },
    /// The CIR loading `Λ'` with `a = ρ²`, `b = β`.
    Cir { beta: f64, rho: f64 },
}

impl Direction {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Direction::Expr { expr } => expr.eval(x, &[]),
            Direction::Vasicek { beta } => vasicek_loading(*beta, x),
            Direction::Cir { beta, rho } => cir_loading(*beta, *rho, x),
        }
    }

    pub fn curve(&self, grid: MaturityGrid) -> ForwardCurve {
        ForwardCurve::from_fn(grid, |x| self.eval(x))
    }
}

/// `σ(h) = φ(ℓ_1(h), …, ℓ_p(h)) λ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionFactor {
    /// Expression in `y0..y{p-1}`.
    pub scale: Expr,
    #[serde(default)]
    pub functionals: Vec<LinearFunctional>,
    pub direction: Direction,
}

/// `σ(h)(x) = φ(x, ℓ_1(h), …, ℓ_p(h))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalFactor {
    /// Expression in `x` and `y0..y{p-1}`.
    pub field: Expr,
    #[serde(default)]
    pub functionals: Vec<LinearFunctional>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VolatilityStructure {
    ConstantDirection {
        factors: Vec<DirectionFactor>,
        /// Restrict to `{ℓ(h) > ε}` for the first functional of each factor.
        #[serde(default)]
        positive: bool,
    },
    Functional {
        factors: Vec<FunctionalFactor>,
        #[serde(default)]
        positive: bool,
    },
    /// One factor `σ(h)(x) = φ(x, h(x))`; `y` stands for `h(x)`.
    Local { phi: Expr },
}

/// Factor curves together with whether the domain floor was applied.
#[derive(Debug, Clone)]
pub struct FactorEval {
    pub factors: Vec<ForwardCurve>,
    pub floored: bool,
}

impl VolatilityStructure {
    /// Constant Vasicek volatility `ρ e^{−βx}`.
    pub fn vasicek(beta: f64, rho: f64) -> Self {
        VolatilityStructure::ConstantDirection {
            factors: vec![DirectionFactor {
                scale: Expr::constant(rho),
                functionals: vec![],
                direction: Direction::Vasicek { beta },
            }],
            positive: false,
        }
    }

    /// `ρ √(h(0)) B_CIR`.
    pub fn cir(beta: f64, rho: f64) -> Self {
        let scale = format!("{rho:?}*sqrt(y)")
            .parse()
            .expect("static expression");
        VolatilityStructure::ConstantDirection {
            factors: vec![DirectionFactor {
                scale,
                functionals: vec![LinearFunctional::short_rate()],
                direction: Direction::Cir { beta, rho },
            }],
            positive: true,
        }
    }

    /// `√(α ℓ(h)) e^{−αx}`.
    pub fn svensson(alpha: f64, ell: LinearFunctional) -> Self {
        let scale = format!("sqrt({alpha:?}*y)")
            .parse()
            .expect("static expression");
        let direction = format!("exp(-{alpha:?}*x)")
            .parse()
            .expect("static expression");
        VolatilityStructure::ConstantDirection {
            factors: vec![DirectionFactor {
                scale,
                functionals: vec![ell],
                direction: Direction::Expr { expr: direction },
            }],
            positive: true,
        }
    }

    pub fn local(phi: Expr) -> Self {
        VolatilityStructure::Local { phi }
    }

    /// `σ ≡ 0`.
    pub fn zero() -> Self {
        VolatilityStructure::ConstantDirection {
            factors: vec![],
            positive: false,
        }
    }

    pub fn factor_count(&self) -> usize {
        match self {
            VolatilityStructure::ConstantDirection { factors, .. } => factors.len(),
            VolatilityStructure::Functional { factors, .. } => factors.len(),
            VolatilityStructure::Local { .. } => 1,
        }
    }

    fn positive(&self) -> bool {
        match self {
            VolatilityStructure::ConstantDirection { positive, .. }
            | VolatilityStructure::Functional { positive, .. } => *positive,
            VolatilityStructure::Local { .. } => false,
        }
    }

    /// Structural checks against a grid, including numerical independence of
    /// constant directions.
    pub fn validate(&self, grid: &MaturityGrid) -> Result<()> {
        let check_args = |e: &Expr, fs: &[LinearFunctional], what: &str| -> Result<()> {
            if let Some(k) = e.max_y_index() {
                if k >= fs.len() {
                    return Err(Error::Spec(format!(
                        "{what} uses y{k} but only {} functionals are given",
                        fs.len()
                    )));
                }
            }
            for f in fs {
                f.validate(grid)?;
            }
            if self.positive() && fs.is_empty() {
                return Err(Error::Spec("positive domain needs a functional".into()));
            }
            Ok(())
        };
        match self {
            VolatilityStructure::ConstantDirection { factors, .. } => {
                for f in factors {
                    check_args(&f.scale, &f.functionals, "scale")?;
                    if f.scale.depends_on(Var::X) {
                        return Err(Error::Spec(
                            "constant-direction scale must not use x".into(),
                        ));
                    }
                    if let Direction::Expr { expr } = &f.direction {
                        if expr.max_y_index().is_some() {
                            return Err(Error::Spec("direction must depend on x only".into()));
                        }
                    }
                }
                if !factors.is_empty() {
                    let curves: Vec<ForwardCurve> =
                        factors.iter().map(|f| f.direction.curve(*grid)).collect();
                    let m = grid.reported_len();
                    let mat =
                        nalgebra::DMatrix::from_fn(m, curves.len(), |i, j| curves[j].values()[i]);
                    if mat.iter().any(|v| !v.is_finite()) {
                        return Err(Error::Spec("direction is not finite on the grid".into()));
                    }
                    let (rank, _, _) = numerical_rank(&mat);
                    if rank < factors.len() {
                        return Err(Error::Spec(format!(
                            "directions have numerical rank {rank} < {}",
                            factors.len()
                        )));
                    }
                }
                Ok(())
            }
            VolatilityStructure::Functional { factors, .. } => {
                for f in factors {
                    check_args(&f.field, &f.functionals, "field")?;
                }
                Ok(())
            }
            VolatilityStructure::Local { phi } => match phi.max_y_index() {
                Some(k) if k > 0 => {
                    Err(Error::Spec(format!("local phi uses y{k}; only y allowed")))
                }
                _ => Ok(()),
            },
        }
    }

    fn functional_values(
        fs: &[LinearFunctional],
        h: &ForwardCurve,
        floor: Option<f64>,
        truncate: bool,
        floored: &mut bool,
    ) -> Result<Vec<f64>> {
        let mut ys = fs.iter().map(|f| f.apply(h)).collect::<Result<Vec<_>>>()?;
        if let (Some(eps), Some(y0)) = (floor, ys.first_mut()) {
            if !(*y0 > eps) {
                if !truncate {
                    return Err(Error::Domain(format!(
                        "functional value {y0:e} <= floor {eps:e}"
                    )));
                }
                *y0 = eps;
                *floored = true;
            }
        }
        Ok(ys)
    }

    fn eval_factors(&self, h: &ForwardCurve, epsilon: f64, truncate: bool) -> Result<FactorEval> {
        let grid = *h.grid();
        let floor = self.positive().then_some(epsilon);
        let mut floored = false;
        let factors = match self {
            VolatilityStructure::ConstantDirection { factors, .. } => factors
                .iter()
                .map(|f| {
                    let ys =
                        Self::functional_values(&f.functionals, h, floor, truncate, &mut floored)?;
                    let s = f.scale.eval(0.0, &ys);
                    ForwardCurve::from_values(grid, f.direction.curve(grid).scaled(s).into_values())
                        .map_err(|_| Error::Domain(format!("scale evaluated to {s}")))
                })
                .collect::<Result<Vec<_>>>()?,
            VolatilityStructure::Functional { factors, .. } => factors
                .iter()
                .map(|f| {
                    let ys =
                        Self::functional_values(&f.functionals, h, floor, truncate, &mut floored)?;
                    let mut args = Vec::with_capacity(ys.len());
                    ForwardCurve::from_values(
                        grid,
                        grid.nodes()
                            .map(|x| {
                                args.clear();
                                args.extend_from_slice(&ys);
                                f.field.eval(x, &args)
                            })
                            .collect(),
                    )
                    .map_err(|e| Error::Domain(e.to_string()))
                })
                .collect::<Result<Vec<_>>>()?,
            VolatilityStructure::Local { phi } => {
                let c = h.map_with_x(|x, y| phi.eval(x, &[y]));
                if let Some(i) = c.values().iter().position(|v| !v.is_finite()) {
                    return Err(Error::Domain(format!(
                        "local volatility not finite at node {i} (h = {})",
                        h.values()[i]
                    )));
                }
                vec![c]
            }
        };
        let factors = factors.into_iter().map(|c| c.with_consumed_of(h)).collect();
        Ok(FactorEval { factors, floored })
    }

    /// Factor curves `σ_i(h)`; leaving the domain is an error.
    pub fn sigma(&self, h: &ForwardCurve, epsilon: f64) -> Result<Vec<ForwardCurve>> {
        Ok(self.eval_factors(h, epsilon, false)?.factors)
    }

    /// Factor curves with the first functional value floored at `ε`.
    pub fn sigma_truncated(&self, h: &ForwardCurve, epsilon: f64) -> Result<FactorEval> {
        self.eval_factors(h, epsilon, true)
    }

    pub fn in_domain(&self, h: &ForwardCurve, epsilon: f64) -> bool {
        self.sigma(h, epsilon).is_ok()
    }
}

/// `Σ σ_i ∫σ_i`.
pub fn alpha_from_factors(factors: &[ForwardCurve], grid: MaturityGrid) -> ForwardCurve {
    let mut out = ForwardCurve::zeros(grid);
    for s in factors {
        out.axpy(1.0, &s.hadamard(&integral(s)));
    }
    out
}

pub fn alpha_hjm(
    sigma: &VolatilityStructure,
    h: &ForwardCurve,
    epsilon: f64,
) -> Result<ForwardCurve> {
    Ok(alpha_from_factors(&sigma.sigma(h, epsilon)?, *h.grid()).with_consumed_of(h))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrechetStep {
    pub eps_fd: f64,
}

impl FrechetStep {
    pub fn new(eps_fd: f64) -> Result<Self> {
        if !(eps_fd > 0.0 && eps_fd < 1.0) {
            return Err(Error::Parameter(format!(
                "fréchet step must lie in (0, 1), got {eps_fd}"
            )));
        }
        Ok(Self { eps_fd })
    }
}

impl Default for FrechetStep {
    fn default() -> Self {
        Self {
            eps_fd: DEFAULT_FRECHET_STEP,
        }
    }
}

/// Central difference `(F(h + δv) − F(h − δv)) / 2δ` with
/// `δ = ε_fd max(1, ‖h‖_w) / max(1, ‖v‖_w)`.
pub fn frechet<F>(
    f: F,
    h: &ForwardCurve,
    v: &ForwardCurve,
    step: &FrechetStep,
) -> Result<ForwardCurve>
where
    F: Fn(&ForwardCurve) -> Result<ForwardCurve>,
{
    let w = WeightFunction::default();
    let mut delta = step.eps_fd * norm_w(h, &w).max(1.0) / norm_w(v, &w).max(1.0);
    let mut last = None;
    for _ in 0..=FRECHET_RETRIES {
        let mut hp = h.clone();
        hp.axpy(delta, v);
        let mut hm = h.clone();
        hm.axpy(-delta, v);
        match (f(&hp), f(&hm)) {
            (Ok(fp), Ok(fm)) => {
                return Ok(fp.zip_map(&fm, |a, b| (a - b) / (2.0 * delta)));
            }
            (Err(e @ Error::Domain(_)), _) | (_, Err(e @ Error::Domain(_))) => {
                last = Some(e);
                delta /= 10.0;
            }
            (Err(e), _) | (_, Err(e)) => return Err(e),
        }
    }
    Err(last.unwrap_or_else(|| Error::Domain("fréchet perturbation left the domain".into())))
}

/// A vector field `X(h) = [Ah] + R(h)` on curves, with the transport part
/// optional and kept separate so it can be differentiated exactly.
pub trait CurveField: Sync {
    /// The part of the field other than `Ah`.
    fn reaction(&self, h: &ForwardCurve) -> Result<ForwardCurve>;

    fn has_transport(&self) -> bool;

    fn eval(&self, h: &ForwardCurve) -> Result<ForwardCurve> {
        let r = self.reaction(h)?;
        if self.has_transport() {
            Ok(&deriv(h) + &r)
        } else {
            Ok(r)
        }
    }
}

/// `ν(h) = Ah + α_HJM(h)`.
#[derive(Debug, Clone, Copy)]
pub struct NuField<'a> {
    pub sigma: &'a VolatilityStructure,
    pub epsilon: f64,
}

impl CurveField for NuField<'_> {
    fn reaction(&self, h: &ForwardCurve) -> Result<ForwardCurve> {
        alpha_hjm(self.sigma, h, self.epsilon)
    }

    fn has_transport(&self) -> bool {
        true
    }
}

/// `μ(h) = ν(h) − ½ Σ Dσ_i(h)·σ_i(h)`.
#[derive(Debug, Clone, Copy)]
pub struct MuField<'a> {
    pub sigma: &'a VolatilityStructure,
    pub epsilon: f64,
    pub step: FrechetStep,
}

impl CurveField for MuField<'_> {
    fn reaction(&self, h: &ForwardCurve) -> Result<ForwardCurve> {
        let factors = self.sigma.sigma(h, self.epsilon)?;
        let mut r = alpha_from_factors(&factors, *h.grid()).with_consumed_of(h);
        for (i, s) in factors.iter().enumerate() {
            let ds = frechet(
                |g| vol_factor(self.sigma, g, i, self.epsilon),
                h,
                s,
                &self.step,
            )?;
            r.axpy(-0.5, &ds);
        }
        Ok(r)
    }

    fn has_transport(&self) -> bool {
        true
    }
}

/// The `index`-th volatility factor as a field.
#[derive(Debug, Clone, Copy)]
pub struct VolField<'a> {
    pub sigma: &'a VolatilityStructure,
    pub index: usize,
    pub epsilon: f64,
}

impl CurveField for VolField<'_> {
    fn reaction(&self, h: &ForwardCurve) -> Result<ForwardCurve> {
        vol_factor(self.sigma, h, self.index, self.epsilon)
    }

    fn has_transport(&self) -> bool {
        false
    }
}

/// A field from a closure.
pub struct ClosureField<F> {
    pub f: F,
    pub transport: bool,
}

impl<F> CurveField for ClosureField<F>
where
    F: Fn(&ForwardCurve) -> Result<ForwardCurve> + Sync,
{
    fn reaction(&self, h: &ForwardCurve) -> Result<ForwardCurve> {
        (self.f)(h)
    }

    fn has_transport(&self) -> bool {
        self.transport
    }
}

fn vol_factor(
    sigma: &VolatilityStructure,
    h: &ForwardCurve,
    index: usize,
    epsilon: f64,
) -> Result<ForwardCurve> {
    sigma
        .sigma(h, epsilon)?
        .into_iter()
        .nth(index)
        .ok_or_else(|| Error::Spec(format!("no volatility factor {index}")))
}

pub fn mu_field(
    sigma: &VolatilityStructure,
    h: &ForwardCurve,
    epsilon: f64,
    step: &FrechetStep,
) -> Result<ForwardCurve> {
    MuField {
        sigma,
        epsilon,
        step: *step,
    }
    .eval(h)
}

pub fn nu_field(
    sigma: &VolatilityStructure,
    h: &ForwardCurve,
    epsilon: f64,
) -> Result<ForwardCurve> {
    NuField { sigma, epsilon }.eval(h)
}

pub fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

/// JSON model file: a volatility structure with optional run settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub volatility: VolatilityStructure,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default)]
    pub horizon: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HjmConfig {
    /// Years.
    pub time_step: f64,
    /// Years.
    pub horizon: f64,
    /// Domain floor for the first functional value of positive specs.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub seed: u64,
}

impl HjmConfig {
    pub fn new(time_step: f64, horizon: f64, epsilon: f64, seed: u64) -> Result<Self> {
        let cfg = Self {
            time_step,
            horizon,
            epsilon,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.time_step > 0.0 && self.time_step <= self.horizon && self.horizon.is_finite()) {
            return Err(Error::Parameter(format!(
                "need 0 < time_step <= horizon, got {} and {}",
                self.time_step, self.horizon
            )));
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::Parameter(format!(
                "epsilon must be >= 0, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }

    /// Number of steps covering the horizon.
    pub fn n_steps(&self) -> usize {
        steps_for(self.horizon, self.time_step)
    }

    /// Step actually used so that `n_steps * dt = horizon`.
    pub fn effective_dt(&self) -> f64 {
        self.horizon / self.n_steps() as f64
    }
}

fn steps_for(t: f64, dt: f64) -> usize {
    ((t / dt) - 1e-9).ceil().max(1.0) as usize
}

#[derive(Debug, Clone)]
pub struct EulerStep {
    pub curve: ForwardCurve,
    /// The domain floor was applied in this step.
    pub floored: bool,
}

/// `S_Δt(h + α_HJM(h)Δt + Σ σ_i(h)ΔW_i)` with full truncation at the floor.
pub fn euler_mild_step(
    sigma: &VolatilityStructure,
    h: &ForwardCurve,
    dw: &[f64],
    dt: f64,
    epsilon: f64,
) -> Result<EulerStep> {
    let FactorEval { factors, floored } = sigma.sigma_truncated(h, epsilon)?;
    if dw.len() != factors.len() {
        return Err(Error::Parameter(format!(
            "{} brownian increments for {} factors",
            dw.len(),
            factors.len()
        )));
    }
    let mut u = h.clone();
    u.axpy(dt, &alpha_from_factors(&factors, *h.grid()));
    for (s, w) in factors.iter().zip(dw) {
        u.axpy(*w, s);
    }
    Ok(EulerStep {
        curve: shift(&u, dt)?,
        floored,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftField {
    Mu,
    Nu,
}

#[derive(Debug, Clone)]
pub struct FlowResult {
    /// Curves at `t_k = k dt`, starting with `r*`.
    pub path: Vec<ForwardCurve>,
    pub dt: f64,
    /// Time at which the flow left the domain, if it did.
    pub domain_exit: Option<f64>,
}

impl FlowResult {
    pub fn last(&self) -> &ForwardCurve {
        self.path.last().expect("path is never empty")
    }
}

fn rk4_reaction<F: CurveField + ?Sized>(
    field: &F,
    u: &ForwardCurve,
    tau: f64,
) -> Result<ForwardCurve> {
    let k1 = field.reaction(u)?;
    let mut u2 = u.clone();
    u2.axpy(0.5 * tau, &k1);
    let k2 = field.reaction(&u2)?;
    let mut u3 = u.clone();
    u3.axpy(0.5 * tau, &k2);
    let k3 = field.reaction(&u3)?;
    let mut u4 = u.clone();
    u4.axpy(tau, &k3);
    let k4 = field.reaction(&u4)?;
    let mut out = u.clone();
    out.axpy(tau / 6.0, &k1);
    out.axpy(tau / 3.0, &k2);
    out.axpy(tau / 3.0, &k3);
    out.axpy(tau / 6.0, &k4);
    Ok(out)
}

/// Strang splitting of `du/dt = X(u)` for a field with transport: half a
/// RK4 step of the reaction, an exact shift, another half step.
pub fn flow_field<F: CurveField + ?Sized>(
    field: &F,
    r_star: &ForwardCurve,
    t: f64,
    dt: f64,
) -> Result<FlowResult> {
    if !(t >= 0.0 && dt > 0.0) {
        return Err(Error::Parameter(format!(
            "flow needs t >= 0 and dt > 0, got {t}, {dt}"
        )));
    }
    if t == 0.0 {
        return Ok(FlowResult {
            path: vec![r_star.clone()],
            dt,
            domain_exit: None,
        });
    }
    let n = steps_for(t, dt);
    let dt = t / n as f64;
    if t > r_star.remaining_pad() + 1e-9 {
        return Err(Error::PadExhausted {
            requested: t,
            remaining: r_star.remaining_pad(),
        });
    }
    let mut path = Vec::with_capacity(n + 1);
    path.push(r_star.clone());
    let mut u = r_star.clone();
    for k in 0..n {
        let step = (|| -> Result<ForwardCurve> {
            let mut v = rk4_reaction(field, &u, 0.5 * dt)?;
            if field.has_transport() {
                v = shift(&v, dt)?;
            }
            rk4_reaction(field, &v, 0.5 * dt)
        })();
        match step {
            Ok(v) => u = v,
            Err(Error::Domain(_)) => {
                return Ok(FlowResult {
                    path,
                    dt,
                    domain_exit: Some(k as f64 * dt),
                });
            }
            Err(e) => return Err(e),
        }
        path.push(u.clone());
    }
    Ok(FlowResult {
        path,
        dt,
        domain_exit: None,
    })
}

/// `Fl_t^μ(r*)` or `Fl_t^ν(r*)`.
pub fn flow(
    field: DriftField,
    sigma: &VolatilityStructure,
    r_star: &ForwardCurve,
    t: f64,
    cfg: &HjmConfig,
    step: &FrechetStep,
) -> Result<FlowResult> {
    match field {
        DriftField::Nu => flow_field(
            &NuField {
                sigma,
                epsilon: cfg.epsilon,
            },
            r_star,
            t,
            cfg.time_step,
        ),
        DriftField::Mu => flow_field(
            &MuField {
                sigma,
                epsilon: cfg.epsilon,
                step: *step,
            },
            r_star,
            t,
            cfg.time_step,
        ),
    }
}
