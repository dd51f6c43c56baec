//! Experiment drivers: pathwise equivalence of the full HJM Euler scheme
//! and the affine realizations, and invariance of the singular set.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::affine::{factor_path, fit, AffineKind, SingularProjector, ZScheme};
use crate::curve_space::{ForwardCurve, MaturityGrid};
use crate::error::{Error, Result};
use crate::hjm::{alpha_hjm, euler_mild_step, VolatilityStructure};
use crate::riccati::a_functions;
use crate::rng::{aggregate, NoiseSource};

/// Order window and finest-step gap that make an equivalence run pass.
pub const ORDER_RANGE: (f64, f64) = (0.8, 1.2);
pub const GAP_TOLERANCE: f64 = 1e-2;
/// Multiplier of `(Δt + spacing²) · scale` in the invariance threshold.
pub const INVARIANCE_FACTOR: f64 = 5.0;
/// Lower bound on the invariance curve scale.
pub const SCALE_FLOOR: f64 = 1e-12;
pub const HOMOGENEITY_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EquivalenceConfig {
    pub kind: AffineKind,
    pub beta: f64,
    pub rho: f64,
    /// Strictly decreasing; every step is an integer multiple of the last.
    pub dts: Vec<f64>,
    pub horizon: f64,
    pub n_paths: usize,
    pub seed: u64,
    #[serde(default = "crate::hjm::default_epsilon")]
    pub epsilon: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepGap {
    pub dt: f64,
    /// Mean over paths of the sup over time and reported nodes.
    pub mean_gap: f64,
    pub max_gap: f64,
    /// Paths on which either scheme hit the domain floor.
    pub paths_with_floor: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub config: EquivalenceConfig,
    pub gaps: Vec<StepGap>,
    /// Slope of `ln mean_gap` against `ln Δt`; absent when a gap is zero.
    pub order: Option<f64>,
    /// 95% interval from the spread of per-path slopes.
    pub order_ci: Option<(f64, f64)>,
    pub floor_free_fraction: f64,
    pub order_ok: bool,
    pub gap_ok: bool,
    pub pass: bool,
}

fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

fn refinement_factors(dts: &[f64], horizon: f64) -> Result<Vec<usize>> {
    if dts.len() < 2 {
        return Err(Error::Parameter("need at least two time steps".into()));
    }
    if dts.windows(2).any(|w| !(w[1] < w[0])) || dts.iter().any(|&d| !(d > 0.0)) {
        return Err(Error::Parameter(
            "time steps must be positive and strictly decreasing".into(),
        ));
    }
    let fine = *dts.last().expect("non-empty");
    let n = horizon / fine;
    if !(horizon > 0.0) || (n - n.round()).abs() > 1e-9 * n.max(1.0) {
        return Err(Error::Parameter(format!(
            "finest step {fine} does not divide horizon {horizon}"
        )));
    }
    dts.iter()
        .map(|&d| {
            let r = d / fine;
            if (r - r.round()).abs() > 1e-9 * r {
                Err(Error::Parameter(format!(
                    "step {d} is not a multiple of {fine}"
                )))
            } else {
                Ok(r.round() as usize)
            }
        })
        .collect()
}

/// Sup gap over time and nodes between the HJM Euler path and the
/// realization driven by the same increments, and whether a floor was hit.
fn path_gap(
    sigma: &VolatilityStructure,
    model: &crate::affine::AffineRealization,
    dw: &[f64],
    epsilon: f64,
) -> Result<(f64, bool)> {
    let (z, floors) = factor_path(model, dw, ZScheme::Euler, epsilon);
    let mut h = model.r_star.clone();
    let mut gap = 0.0_f64;
    let mut floored = floors > 0;
    for (k, &w) in dw.iter().enumerate() {
        let step = euler_mild_step(sigma, &h, &[w], model.dt, epsilon)?;
        floored |= step.floored;
        h = step.curve;
        gap = gap.max(h.sup_distance(&model.curve(k + 1, z[k + 1])));
    }
    Ok((gap, floored))
}

/// Runs both schemes on shared Brownian increments at every step size.
/// Coarse increments are sums of the finest ones.
pub fn run_equivalence(
    r_star: &ForwardCurve,
    cfg: &EquivalenceConfig,
) -> Result<EquivalenceReport> {
    if cfg.n_paths == 0 {
        return Err(Error::Parameter("need at least one path".into()));
    }
    let factors = refinement_factors(&cfg.dts, cfg.horizon)?;
    let fine_dt = *cfg.dts.last().expect("checked");
    let n_fine = (cfg.horizon / fine_dt).round() as usize;
    let sigma = cfg.kind.volatility(cfg.beta, cfg.rho);
    let models = cfg
        .dts
        .iter()
        .map(|&dt| {
            fit(
                cfg.kind,
                r_star,
                cfg.beta,
                cfg.rho,
                cfg.horizon,
                dt,
                cfg.epsilon,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let noise = NoiseSource::new(cfg.seed);
    // [path][dt] -> (gap, floored)
    let per_path = (0..cfg.n_paths)
        .into_par_iter()
        .map(|p| -> Result<Vec<(f64, bool)>> {
            let fine = noise.increments(p as u64, n_fine, 1, fine_dt);
            factors
                .iter()
                .zip(&models)
                .map(|(&f, model)| {
                    let dw: Vec<f64> = aggregate(&fine, f).into_iter().map(|v| v[0]).collect();
                    path_gap(&sigma, model, &dw, cfg.epsilon)
                })
                .collect()
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let n = cfg.n_paths as f64;
    let gaps: Vec<StepGap> = cfg
        .dts
        .iter()
        .enumerate()
        .map(|(j, &dt)| StepGap {
            dt,
            mean_gap: per_path.iter().map(|p| p[j].0).sum::<f64>() / n,
            max_gap: per_path.iter().map(|p| p[j].0).fold(0.0, f64::max),
            paths_with_floor: per_path.iter().filter(|p| p[j].1).count(),
        })
        .collect();
    let log_dt: Vec<f64> = cfg.dts.iter().map(|d| d.ln()).collect();
    let order = gaps.iter().all(|g| g.mean_gap > 0.0).then(|| {
        slope(
            &log_dt,
            &gaps.iter().map(|g| g.mean_gap.ln()).collect::<Vec<_>>(),
        )
    });
    let slopes: Vec<f64> = per_path
        .iter()
        .filter(|p| p.iter().all(|g| g.0 > 0.0))
        .map(|p| slope(&log_dt, &p.iter().map(|g| g.0.ln()).collect::<Vec<_>>()))
        .collect();
    let order_ci = (slopes.len() > 1).then(|| {
        let m = slopes.len() as f64;
        let mean = slopes.iter().sum::<f64>() / m;
        let sd = (slopes.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (m - 1.0)).sqrt();
        let half = 1.96 * sd / m.sqrt();
        (mean - half, mean + half)
    });
    let floor_free = per_path.iter().filter(|p| p.iter().all(|g| !g.1)).count();
    let order_ok = order.is_some_and(|o| (ORDER_RANGE.0..=ORDER_RANGE.1).contains(&o));
    let gap_ok = gaps.last().expect("non-empty").mean_gap < GAP_TOLERANCE;
    Ok(EquivalenceReport {
        config: cfg.clone(),
        gaps,
        order,
        order_ci,
        floor_free_fraction: floor_free as f64 / n,
        order_ok,
        gap_ok,
        pass: order_ok && gap_ok,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InvarianceConfig {
    pub kind: AffineKind,
    pub beta: f64,
    pub rho: f64,
    /// The start curve is `A(b) + c·Λ'`, a member of Σ.
    pub b: f64,
    pub c: f64,
    pub dt: f64,
    pub horizon: f64,
    pub n_paths: usize,
    pub seed: u64,
    #[serde(default = "crate::hjm::default_epsilon")]
    pub epsilon: f64,
    /// Level of a flat off-Σ start run as a negative control.
    #[serde(default)]
    pub control_level: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ControlRun {
    pub level: f64,
    pub start_distance: f64,
    pub max_residual: f64,
    pub exceeds_threshold: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InvarianceReport {
    pub config: InvarianceConfig,
    pub start_distance: f64,
    /// `sup |α_HJM(h₀)|`, floored.
    pub scale: f64,
    pub threshold: f64,
    /// Max over paths of the Σ-distance after each step.
    pub residual_by_step: Vec<f64>,
    pub max_residual: f64,
    /// `max_t |b(t) − b(0)|` of the realization fitted to the start curve.
    pub time_homogeneity: f64,
    pub floor_hits: usize,
    pub control: Option<ControlRun>,
    pub pass: bool,
}

fn residual_paths(
    sigma: &VolatilityStructure,
    proj: &SingularProjector,
    h0: &ForwardCurve,
    cfg: &InvarianceConfig,
    n_steps: usize,
    dt: f64,
) -> Result<(Vec<f64>, usize)> {
    let noise = NoiseSource::new(cfg.seed);
    let runs = (0..cfg.n_paths)
        .into_par_iter()
        .map(|p| -> Result<(Vec<f64>, usize)> {
            let dw = noise.increments(p as u64, n_steps, 1, dt);
            let mut h = h0.clone();
            let mut res = Vec::with_capacity(n_steps);
            let mut floors = 0;
            for w in &dw {
                let s = euler_mild_step(sigma, &h, w, dt, cfg.epsilon)?;
                floors += usize::from(s.floored);
                h = s.curve;
                res.push(proj.distance(&h));
            }
            Ok((res, floors))
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let by_step = (0..n_steps)
        .map(|k| runs.iter().map(|r| r.0[k]).fold(0.0, f64::max))
        .collect();
    Ok((by_step, runs.iter().map(|r| r.1).sum()))
}

/// The Σ member `A(b) + c·Λ'` for the kind's Riccati solution.
pub fn singular_start(
    kind: AffineKind,
    beta: f64,
    rho: f64,
    b: f64,
    c: f64,
    grid: MaturityGrid,
) -> Result<ForwardCurve> {
    let sol = kind.riccati(beta, rho, grid)?;
    let mut h = a_functions(&sol, b, rho);
    h.axpy(c, &sol.loading);
    Ok(h)
}

/// Simulates the full HJM Euler scheme from a Σ member and tracks the
/// distance to Σ along every path.
pub fn run_invariance(grid: MaturityGrid, cfg: &InvarianceConfig) -> Result<InvarianceReport> {
    if cfg.n_paths == 0 {
        return Err(Error::Parameter("need at least one path".into()));
    }
    let hcfg = crate::hjm::HjmConfig::new(cfg.dt, cfg.horizon, cfg.epsilon, cfg.seed)?;
    let n_steps = hcfg.n_steps();
    let dt = hcfg.effective_dt();
    let sol = cfg.kind.riccati(cfg.beta, cfg.rho, grid)?;
    let proj = SingularProjector::new(&sol, cfg.rho)?;
    let sigma = cfg.kind.volatility(cfg.beta, cfg.rho);
    let h0 = singular_start(cfg.kind, cfg.beta, cfg.rho, cfg.b, cfg.c, grid)?;
    let scale = alpha_hjm(&sigma, &h0, cfg.epsilon)?
        .sup_norm_reported()
        .max(SCALE_FLOOR);
    let spacing = grid.spacing();
    let threshold = INVARIANCE_FACTOR * (dt + spacing * spacing) * scale;
    let (residual_by_step, floor_hits) = residual_paths(&sigma, &proj, &h0, cfg, n_steps, dt)?;
    let max_residual = residual_by_step.iter().copied().fold(0.0, f64::max);
    let model = fit(
        cfg.kind,
        &h0,
        cfg.beta,
        cfg.rho,
        cfg.horizon,
        dt,
        cfg.epsilon,
    )?;
    let b0 = model.b_of_t[0];
    let time_homogeneity = model
        .b_of_t
        .iter()
        .map(|b| (b - b0).abs())
        .fold(0.0, f64::max);
    let control = cfg
        .control_level
        .map(|level| -> Result<ControlRun> {
            let flat = ForwardCurve::constant(grid, level);
            let (res, _) = residual_paths(&sigma, &proj, &flat, cfg, n_steps, dt)?;
            let max_residual = res.iter().copied().fold(0.0, f64::max);
            Ok(ControlRun {
                level,
                start_distance: proj.distance(&flat),
                max_residual,
                exceeds_threshold: max_residual > threshold,
            })
        })
        .transpose()?;
    let pass = max_residual < threshold
        && time_homogeneity < HOMOGENEITY_TOLERANCE
        && control.as_ref().is_none_or(|c| c.exceeds_threshold);
    Ok(InvarianceReport {
        config: cfg.clone(),
        start_distance: proj.distance(&h0),
        scale,
        threshold,
        residual_by_step,
        max_residual,
        time_homogeneity,
        floor_hits,
        control,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eq_cfg(kind: AffineKind, rho: f64, n_paths: usize) -> EquivalenceConfig {
        EquivalenceConfig {
            kind,
            beta: 0.5,
            rho,
            dts: vec![0.02, 0.01, 0.005],
            horizon: 0.2,
            n_paths,
            seed: 3,
            epsilon: 1e-6,
        }
    }

    #[test]
    fn refinement_checks() {
        assert_eq!(
            refinement_factors(&[4e-3, 2e-3, 1e-3], 1.0).unwrap(),
            vec![4, 2, 1]
        );
        assert!(refinement_factors(&[1e-3, 2e-3], 1.0).is_err());
        assert!(refinement_factors(&[3e-3, 2e-3], 1.0).is_err());
        assert!(refinement_factors(&[2e-3, 1e-3], 1.0005).is_err());
    }

    #[test]
    fn zero_volatility_gap_is_interpolation_only() {
        let g = MaturityGrid::standard();
        let r = ForwardCurve::from_fn(g, |x| 0.03 + 0.01 * (-0.4 * x).exp());
        let rep = run_equivalence(&r, &eq_cfg(AffineKind::Hwv, 0.0, 2)).unwrap();
        for s in &rep.gaps {
            assert!(s.max_gap < 1e-6, "{s:?}");
        }
    }

    #[test]
    fn hwv_gap_shrinks_with_step() {
        let g = MaturityGrid::standard();
        let r = ForwardCurve::constant(g, 0.03);
        let rep = run_equivalence(&r, &eq_cfg(AffineKind::Hwv, 0.02, 16)).unwrap();
        let m: Vec<f64> = rep.gaps.iter().map(|s| s.mean_gap).collect();
        assert!(m[0] > m[1] && m[1] > m[2], "{m:?}");
        assert!(rep.order.unwrap() > 0.7, "{rep:?}");
    }

    #[test]
    fn vasicek_invariance_and_control() {
        let g = MaturityGrid::standard();
        let cfg = InvarianceConfig {
            kind: AffineKind::Hwv,
            beta: 0.5,
            rho: 0.02,
            b: 0.02,
            c: 0.01,
            dt: 1e-2,
            horizon: 0.5,
            n_paths: 4,
            seed: 1,
            epsilon: 1e-6,
            control_level: Some(0.03),
        };
        let rep = run_invariance(g, &cfg).unwrap();
        assert!(rep.start_distance < 1e-14);
        assert!(
            rep.max_residual < rep.threshold,
            "{} vs {}",
            rep.max_residual,
            rep.threshold
        );
        assert!(rep.control.as_ref().unwrap().exceeds_threshold);
        assert!(rep.pass);
    }

    #[test]
    fn zero_volatility_stays_on_sigma_to_round_off() {
        let g = MaturityGrid::standard();
        let cfg = InvarianceConfig {
            kind: AffineKind::Hwv,
            beta: 0.5,
            rho: 0.0,
            b: 0.02,
            c: 0.01,
            dt: 1e-2,
            horizon: 0.2,
            n_paths: 1,
            seed: 1,
            epsilon: 1e-6,
            control_level: None,
        };
        let rep = run_invariance(g, &cfg).unwrap();
        assert!(rep.max_residual < 1e-9, "{}", rep.max_residual);
    }
}
