//! Numerical Lie brackets of curve fields and span-membership residuals.
//!
//! `[X, Y](h) = DX(h)·Y(h) − DY(h)·X(h)`. The transport part `Ah` of a field
//! is linear, so its derivative `D(A·)·v = Av` is applied exactly; all other
//! parts are differentiated by central differences.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curve_space::{deriv, integral, ForwardCurve, MaturityGrid, WeightFunction};
use crate::error::{Error, Result};
use crate::expr::{Expr, Var};
use crate::hjm::{frechet, CurveField, FrechetStep, MuField, VolField, VolatilityStructure};
use crate::linalg::project_onto_span;
use crate::riccati::vasicek_lambda;

/// Span residuals below this count as membership when no calibrated
/// threshold is available.
pub const DEFAULT_SPAN_TOLERANCE: f64 = 1e-6;
/// Calibrated thresholds never drop below this.
pub const THRESHOLD_FLOOR: f64 = 1e-9;
/// Obstruction is declared when a residual exceeds this multiple of the
/// Vasicek baseline.
pub const OBSTRUCTION_FACTOR: f64 = 10.0;
/// Fréchet step for brackets. Differentiating `μ`, which holds its own
/// difference quotient, amplifies round-off like `ε_mach / δ²`.
pub const BRACKET_FRECHET_STEP: f64 = 1e-4;
/// Parameters of the reference Vasicek volatility used for baselines.
pub const BASELINE_BETA: f64 = 0.5;
pub const BASELINE_RHO: f64 = 0.02;

/// `DX(h)·v`.
pub fn directional<X: CurveField + ?Sized>(
    x: &X,
    h: &ForwardCurve,
    v: &ForwardCurve,
    step: &FrechetStep,
) -> Result<ForwardCurve> {
    let mut d = frechet(|g| x.reaction(g), h, v, step)?;
    if x.has_transport() {
        d.axpy(1.0, &deriv(v));
    }
    Ok(d)
}

pub fn lie_bracket<X, Y>(x: &X, y: &Y, h: &ForwardCurve, step: &FrechetStep) -> Result<ForwardCurve>
where
    X: CurveField + ?Sized,
    Y: CurveField + ?Sized,
{
    let xh = x.eval(h)?;
    let yh = y.eval(h)?;
    Ok(&directional(x, h, &yh, step)? - &directional(y, h, &xh, step)?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpanResidual {
    pub coefficients: Vec<f64>,
    /// `‖v − proj v‖_w / max(‖v‖_w, floor)`, in `[0, 1]`.
    pub residual_rel: f64,
    pub condition: f64,
}

pub fn span_residual(
    v: &ForwardCurve,
    basis: &[ForwardCurve],
    w: &WeightFunction,
) -> Result<SpanResidual> {
    let p = project_onto_span(v, basis, w)?;
    Ok(SpanResidual {
        coefficients: p.coefficients,
        residual_rel: p.residual_rel,
        condition: p.condition,
    })
}

#[derive(Debug, Clone)]
pub struct BracketReport {
    pub bracket_curve: ForwardCurve,
    pub span_basis: Vec<ForwardCurve>,
    pub coefficients: Vec<f64>,
    pub residual_rel: f64,
    pub condition: f64,
    pub tolerance: f64,
    pub in_span: bool,
    pub test_point: ForwardCurve,
}

/// Bracket `[X, Y](h)` and its residual against the span of `basis` at `h`.
pub fn bracket_report<X, Y>(
    x: &X,
    y: &Y,
    basis: &[&dyn CurveField],
    h: &ForwardCurve,
    step: &FrechetStep,
    tolerance: f64,
) -> Result<BracketReport>
where
    X: CurveField + ?Sized,
    Y: CurveField + ?Sized,
{
    let bracket = lie_bracket(x, y, h, step)?;
    let span_basis = basis
        .iter()
        .map(|f| f.eval(h))
        .collect::<Result<Vec<_>>>()?;
    let s = span_residual(&bracket, &span_basis, &WeightFunction::default())?;
    Ok(BracketReport {
        bracket_curve: bracket,
        span_basis,
        coefficients: s.coefficients,
        residual_rel: s.residual_rel,
        condition: s.condition,
        tolerance,
        in_span: s.residual_rel < tolerance,
        test_point: h.clone(),
    })
}

type Shape<'a> = (&'a str, Box<dyn Fn(f64) -> f64>);

/// The scan curves: three flats, four Nelson–Siegel shapes and five
/// perturbed Vasicek singular-set members (β = 0.5, ρ = 0.02).
pub fn test_curves(grid: MaturityGrid) -> Vec<(String, ForwardCurve)> {
    let lam = |x: f64| vasicek_lambda(BASELINE_BETA, x);
    let q = 0.5 * BASELINE_RHO * BASELINE_RHO;
    let sigma_member = move |a1: f64, a3: f64, x: f64| a1 - q * lam(x) * lam(x) + a3 * lam(x);
    let specs: Vec<Shape> = vec![
        ("flat_0.01", Box::new(|_| 0.01)),
        ("flat_0.03", Box::new(|_| 0.03)),
        ("flat_0.06", Box::new(|_| 0.06)),
        ("ns_upward", Box::new(|x| 0.04 - 0.02 * (-0.5 * x).exp())),
        ("ns_downward", Box::new(|x| 0.03 + 0.02 * (-0.7 * x).exp())),
        (
            "ns_hump",
            Box::new(|x| 0.03 - 0.01 * (-0.4 * x).exp() + 0.03 * x * (-0.6 * x).exp()),
        ),
        ("ns_dip", Box::new(|x| 0.05 - 0.02 * x * (-0.5 * x).exp())),
        (
            "sigma_bump",
            Box::new(move |x| sigma_member(0.02, 0.01, x) + 0.002 * x * (-x).exp()),
        ),
        (
            "sigma_short_end",
            Box::new(move |x| sigma_member(0.03, -0.005, x) + 0.001 * (-2.0 * x).exp()),
        ),
        (
            "sigma_wave",
            Box::new(move |x| {
                sigma_member(0.01, 0.02, x) + 0.001 * (0.5 * x).sin() * (-0.2 * x).exp()
            }),
        ),
        (
            "sigma_dip",
            Box::new(move |x| sigma_member(0.05, 0.0, x) - 0.002 * x * x * (-x).exp()),
        ),
        (
            "sigma_tilt",
            Box::new(move |x| {
                sigma_member(0.04, -0.01, x) + 0.003 * (-0.3 * x).exp() * (1.0 - (-x).exp())
            }),
        ),
    ];
    specs
        .into_iter()
        .map(|(n, f)| (n.to_string(), ForwardCurve::from_fn(grid, f)))
        .collect()
}

/// `(∂₁φ∘h) + (φ∘h)∫(φ'∘h)(φ∘h) − ½(φ''∘h)(φ∘h)²`, with `'` the derivative
/// in the second argument; equals `[μ, σ](h)` for `σ(h)(x) = φ(x, h(x))`.
pub fn analytic_local_bracket(phi: &Expr, h: &ForwardCurve) -> Result<ForwardCurve> {
    let d1 = phi.diff(Var::X);
    let dy = phi.diff(Var::Y(0));
    let dyy = dy.diff(Var::Y(0));
    let f = h.map_with_x(|x, y| phi.eval(x, &[y]));
    let fx = h.map_with_x(|x, y| d1.eval(x, &[y]));
    let fy = h.map_with_x(|x, y| dy.eval(x, &[y]));
    let fyy = h.map_with_x(|x, y| dyy.eval(x, &[y]));
    for c in [&f, &fx, &fy, &fyy] {
        if c.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain(
                "local volatility derivative not finite".into(),
            ));
        }
    }
    let inner = integral(&fy.hadamard(&f));
    let mut out = fx;
    out.axpy(1.0, &f.hadamard(&inner));
    out.axpy(-0.5, &fyy.hadamard(&f).hadamard(&f));
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurveScan {
    pub name: String,
    /// Residual of the numeric `[μ, σ](h)` against `⟨σ(h), μ(h)⟩`.
    pub residual_rel: f64,
    /// Same residual for the analytic bracket.
    pub analytic_residual_rel: f64,
    /// Relative sup gap between numeric and analytic brackets.
    pub analytic_gap: f64,
    pub condition: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObstructionReport {
    pub phi: String,
    pub curves: Vec<CurveScan>,
    /// Max residual of the reference Vasicek volatility on the same curves.
    pub baseline: f64,
    pub threshold: f64,
    pub max_residual: f64,
    pub min_residual: f64,
    pub max_analytic_gap: f64,
    /// Some bracket leaves `⟨σ, μ⟩` by more than the threshold.
    pub obstruction: bool,
}

fn rel_sup_gap(a: &ForwardCurve, b: &ForwardCurve) -> f64 {
    let scale = b.sup_norm_reported().max(1e-300);
    a.sup_distance(b) / scale
}

fn scan_one(phi: &Expr, name: &str, h: &ForwardCurve, step: &FrechetStep) -> Result<CurveScan> {
    let sigma = VolatilityStructure::local(phi.clone());
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
    let rep = bracket_report(&mu, &vol, &[&vol, &mu], h, step, DEFAULT_SPAN_TOLERANCE)?;
    let analytic = analytic_local_bracket(phi, h)?;
    let a_res = span_residual(&analytic, &rep.span_basis, &WeightFunction::default())?;
    Ok(CurveScan {
        name: name.to_string(),
        residual_rel: rep.residual_rel,
        analytic_residual_rel: a_res.residual_rel,
        analytic_gap: rel_sup_gap(&rep.bracket_curve, &analytic),
        condition: rep.condition,
    })
}

fn scan_all(
    phi: &Expr,
    curves: &[(String, ForwardCurve)],
    step: &FrechetStep,
) -> Result<Vec<CurveScan>> {
    curves
        .par_iter()
        .map(|(n, h)| scan_one(phi, n, h, step))
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}

/// Max `[μ, σ]` residual of the reference Vasicek volatility over `curves`.
pub fn vasicek_baseline(curves: &[(String, ForwardCurve)], step: &FrechetStep) -> Result<f64> {
    let phi: Expr = format!("{BASELINE_RHO:?}*exp(-{BASELINE_BETA:?}*x)").parse()?;
    Ok(scan_all(&phi, curves, step)?
        .iter()
        .map(|c| c.residual_rel)
        .fold(0.0, f64::max))
}

/// Checks `[μ, σ](h) ∈ ⟨σ(h), μ(h)⟩` for a local volatility `φ(x, h(x))`
/// on every curve. The threshold is calibrated against the Vasicek case.
pub fn local_vol_obstruction_scan(
    phi: &Expr,
    curves: &[(String, ForwardCurve)],
    step: &FrechetStep,
) -> Result<ObstructionReport> {
    if let Some(k) = phi.max_y_index() {
        if k > 0 {
            return Err(Error::Spec(format!("local phi may only use y, found y{k}")));
        }
    }
    if curves.is_empty() {
        return Err(Error::Parameter("no test curves".into()));
    }
    let scans = scan_all(phi, curves, step)?;
    let baseline = vasicek_baseline(curves, step)?;
    let threshold = (OBSTRUCTION_FACTOR * baseline).max(THRESHOLD_FLOOR);
    let max_residual = scans.iter().map(|c| c.residual_rel).fold(0.0, f64::max);
    let min_residual = scans
        .iter()
        .map(|c| c.residual_rel)
        .fold(f64::INFINITY, f64::min);
    Ok(ObstructionReport {
        phi: phi.to_string(),
        max_analytic_gap: scans.iter().map(|c| c.analytic_gap).fold(0.0, f64::max),
        curves: scans,
        baseline,
        threshold,
        max_residual,
        min_residual,
        obstruction: max_residual > threshold,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairResidual {
    /// Field names, `mu` or `sigma{i}`.
    pub pair: (String, String),
    pub residual_rel: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurveInvolutivity {
    pub name: String,
    pub pairs: Vec<PairResidual>,
    pub max_residual: f64,
    pub condition: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InvolutivityReport {
    pub curves: Vec<CurveInvolutivity>,
    pub baseline: f64,
    pub threshold: f64,
    pub max_residual: f64,
    pub involutive: bool,
}

/// All first brackets among `μ, σ_1, …, σ_d` against `⟨σ_1, …, σ_d, μ⟩`.
pub fn involutivity_scan(
    sigma: &VolatilityStructure,
    curves: &[(String, ForwardCurve)],
    epsilon: f64,
    step: &FrechetStep,
) -> Result<InvolutivityReport> {
    let d = sigma.factor_count();
    let mu = MuField {
        sigma,
        epsilon,
        step: *step,
    };
    let vols: Vec<VolField> = (0..d)
        .map(|index| VolField {
            sigma,
            index,
            epsilon,
        })
        .collect();
    let mut fields: Vec<(String, &dyn CurveField)> = vec![("mu".to_string(), &mu)];
    for (i, v) in vols.iter().enumerate() {
        fields.push((format!("sigma{i}"), v));
    }
    let basis: Vec<&dyn CurveField> = fields
        .iter()
        .skip(1)
        .chain(fields.iter().take(1))
        .map(|f| f.1)
        .collect();
    let per_curve = curves
        .par_iter()
        .map(|(name, h)| -> Result<CurveInvolutivity> {
            let span: Vec<ForwardCurve> = basis.iter().map(|f| f.eval(h)).collect::<Result<_>>()?;
            let w = WeightFunction::default();
            let mut pairs = Vec::new();
            let mut condition = 1.0_f64;
            for i in 0..fields.len() {
                for j in i + 1..fields.len() {
                    let b = lie_bracket(fields[i].1, fields[j].1, h, step)?;
                    let s = span_residual(&b, &span, &w)?;
                    condition = condition.max(s.condition);
                    pairs.push(PairResidual {
                        pair: (fields[i].0.clone(), fields[j].0.clone()),
                        residual_rel: s.residual_rel,
                    });
                }
            }
            let max_residual = pairs.iter().map(|p| p.residual_rel).fold(0.0, f64::max);
            Ok(CurveInvolutivity {
                name: name.clone(),
                pairs,
                max_residual,
                condition,
            })
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let baseline = vasicek_baseline(curves, step)?;
    let threshold = (OBSTRUCTION_FACTOR * baseline).max(THRESHOLD_FLOOR);
    let max_residual = per_curve.iter().map(|c| c.max_residual).fold(0.0, f64::max);
    Ok(InvolutivityReport {
        curves: per_curve,
        baseline,
        threshold,
        max_residual,
        involutive: max_residual <= threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hjm::ClosureField;

    fn grid() -> MaturityGrid {
        MaturityGrid::standard()
    }

    fn bstep() -> FrechetStep {
        FrechetStep::new(BRACKET_FRECHET_STEP).unwrap()
    }

    #[test]
    fn bracket_of_field_with_itself_vanishes() {
        let g = grid();
        let s = VolatilityStructure::cir(0.5, 0.05);
        let mu = MuField {
            sigma: &s,
            epsilon: 1e-6,
            step: bstep(),
        };
        let h = &test_curves(g)[5].1;
        let b = lie_bracket(&mu, &mu, h, &bstep()).unwrap();
        assert!(b.sup_norm() < 1e-14);
    }

    #[test]
    fn constant_fields_commute() {
        let g = grid();
        let a = ForwardCurve::from_fn(g, |x| (-x).exp());
        let b = ForwardCurve::from_fn(g, |x| x * (-x).exp());
        let fa = ClosureField {
            f: |_: &ForwardCurve| Ok(a.clone()),
            transport: false,
        };
        let fb = ClosureField {
            f: |_: &ForwardCurve| Ok(b.clone()),
            transport: false,
        };
        let h = ForwardCurve::constant(g, 0.03);
        assert_eq!(lie_bracket(&fa, &fb, &h, &bstep()).unwrap().sup_norm(), 0.0);
    }

    #[test]
    fn vasicek_bracket_identity() {
        let g = grid();
        let (beta, rho) = (0.5, 0.02);
        let s = VolatilityStructure::vasicek(beta, rho);
        let mu = MuField {
            sigma: &s,
            epsilon: 0.0,
            step: bstep(),
        };
        let vol = VolField {
            sigma: &s,
            index: 0,
            epsilon: 0.0,
        };
        let expected = ForwardCurve::from_fn(g, |x| -beta * rho * (-beta * x).exp());
        for (name, h) in test_curves(g) {
            let b = lie_bracket(&mu, &vol, &h, &bstep()).unwrap();
            assert!(rel_sup_gap(&b, &expected) < 1e-4, "{name}");
            let r = span_residual(
                &b,
                &[vol.eval(&h).unwrap(), mu.eval(&h).unwrap()],
                &WeightFunction::default(),
            )
            .unwrap();
            assert!(r.residual_rel < 1e-6, "{name}: {}", r.residual_rel);
        }
    }

    #[test]
    fn span_residual_extremes() {
        let g = grid();
        let a = ForwardCurve::from_fn(g, |x| (-0.5 * x).exp());
        let r = span_residual(
            &a.scaled(3.0),
            std::slice::from_ref(&a),
            &WeightFunction::default(),
        )
        .unwrap();
        assert!(r.residual_rel < 1e-14);
        // h(0) = 0 and h' ⟂ a' in the weighted product.
        let one = ForwardCurve::constant(g, 1.0);
        let v = ForwardCurve::from_fn(g, |x| x);
        let r = span_residual(&v, &[one], &WeightFunction::default()).unwrap();
        assert!((r.residual_rel - 1.0).abs() < 1e-14);
    }

    #[test]
    fn analytic_local_bracket_matches_numeric() {
        let g = grid();
        let phi: Expr = "0.02 + 0.01*x - 0.3*y^2 + 0.5*x*y".parse().unwrap();
        let s = VolatilityStructure::local(phi.clone());
        let mu = MuField {
            sigma: &s,
            epsilon: 0.0,
            step: bstep(),
        };
        let vol = VolField {
            sigma: &s,
            index: 0,
            epsilon: 0.0,
        };
        for (name, h) in test_curves(g).into_iter().step_by(3) {
            let num = lie_bracket(&mu, &vol, &h, &bstep()).unwrap();
            let ana = analytic_local_bracket(&phi, &h).unwrap();
            assert!(
                rel_sup_gap(&num, &ana) < 1e-4,
                "{name}: {}",
                rel_sup_gap(&num, &ana)
            );
        }
    }

    #[test]
    fn analytic_bracket_of_vasicek_and_constants() {
        let g = grid();
        let h = ForwardCurve::constant(g, 0.03);
        let c: Expr = "0.02".parse().unwrap();
        assert_eq!(analytic_local_bracket(&c, &h).unwrap().sup_norm(), 0.0);
        let v: Expr = "0.02*exp(-0.5*x)".parse().unwrap();
        let b = analytic_local_bracket(&v, &h).unwrap();
        let expected = ForwardCurve::from_fn(g, |x| -0.01 * (-0.5 * x).exp());
        assert!(b.sup_distance(&expected) < 1e-16);
    }
}
