use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use fdr_core::affine::{
    self, b_c_consistency, simulate_realization, singular_decompose, volterra_c,
};
use fdr_core::curve_space::{rank_a3, MaturityGrid};
use fdr_core::experiments::{run_equivalence, run_invariance, EquivalenceConfig, InvarianceConfig};
use fdr_core::hjm::{default_epsilon, HjmConfig, ModelSpec};
use fdr_core::io::{read_curve, write_columns};
use fdr_core::lie::{
    involutivity_scan, local_vol_obstruction_scan, test_curves, BRACKET_FRECHET_STEP,
};
use fdr_core::riccati::{closed_form_cir, closed_form_vasicek, solve_riccati, RiccatiKind};
use fdr_core::svensson::{basis_residual, consistent_dynamics_step, svensson_fit};
use fdr_core::{
    AffineKind, ConsistentSvenssonState, Error, ForwardCurve, FrechetStep, LinearFunctional,
    NoiseSource, RiccatiParams, SvenssonPoint, VolatilityStructure, ZScheme,
};

use crate::cli::*;

/// Result of a command: the JSON report, the verdict and the files written.
pub struct Outcome {
    pub report: Value,
    pub pass: bool,
    pub outputs: Vec<PathBuf>,
}

/// `usage` errors exit with 2, the rest with 1.
#[derive(Debug)]
pub struct Failure {
    pub usage: bool,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn usage(e: impl Into<anyhow::Error>) -> Self {
        Failure {
            usage: true,
            error: e.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let usage = matches!(
            e,
            Error::Grid(_)
                | Error::Parameter(_)
                | Error::NodeOffGrid { .. }
                | Error::ProbeBasis(_)
                | Error::TenorChoice(_)
                | Error::Spec(_)
                | Error::Expr { .. }
                | Error::Parse { .. }
                | Error::Io(_)
        );
        Failure {
            usage,
            error: e.into(),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::usage(e)
    }
}

type Run = std::result::Result<Outcome, Failure>;

fn required<T>(v: Option<T>, name: &str) -> std::result::Result<T, Failure> {
    v.ok_or_else(|| Failure::usage(anyhow::anyhow!("missing --{name} (flag or config entry)")))
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("reports serialize")
}

fn grid_of(g: &GridArgs) -> std::result::Result<MaturityGrid, Failure> {
    let s = MaturityGrid::standard();
    Ok(MaturityGrid::new(
        g.x_max.unwrap_or(s.x_max()),
        g.pad.unwrap_or(s.pad()),
        g.n_points.unwrap_or(s.len()),
    )?)
}

fn out_path(out_dir: &Path, name: impl AsRef<Path>) -> PathBuf {
    let p = name.as_ref();
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        out_dir.join(p)
    }
}

fn default_pad() -> f64 {
    MaturityGrid::standard().pad()
}

pub fn riccati_solve(args: RiccatiArgs, out_dir: &Path) -> Run {
    let args = args.merge_config()?;
    let grid = grid_of(&args.grid)?;
    let params = RiccatiParams::new(
        required(args.a, "a")?,
        required(args.b, "b")?,
        args.lambda0.unwrap_or(1.0),
    )?;
    let tol = args.tol.unwrap_or(1e-8);
    let sol = solve_riccati(params, grid)?;
    let closed = if params.lambda0 == 1.0 {
        match params.kind() {
            RiccatiKind::Vasicek | RiccatiKind::HoLee => Some(closed_form_vasicek(params.b, grid)?),
            RiccatiKind::Cir if params.a > 0.0 && params.b >= 0.0 => {
                Some(closed_form_cir(params.b, params.a.sqrt(), grid)?)
            }
            RiccatiKind::Cir => None,
        }
    } else {
        None
    };
    let closed_form_error = closed.as_ref().map(|c| sol.lambda.sup_distance(&c.lambda));
    let closed_form_residual = closed.as_ref().map(|c| c.residual());
    let residual_fd = sol.residual_fd();
    let pass = match closed_form_error {
        Some(e) => e < tol,
        None => residual_fd < tol.max(1e-6),
    };
    let csv = out_dir.join("riccati.csv");
    let xs: Vec<f64> = grid.nodes().collect();
    write_columns(
        &csv,
        &["x", "Lambda", "B"],
        &[&xs, sol.lambda.values(), sol.loading.values()],
    )?;
    Ok(Outcome {
        report: json!({
            "params": params,
            "kind": sol.kind,
            "residual": sol.residual(),
            "residual_fd": residual_fd,
            "closed_form_error": closed_form_error,
            "closed_form_residual": closed_form_residual,
            "tolerance": tol,
        }),
        pass,
        outputs: vec![csv],
    })
}

/// Everything `simulate` needs to rebuild a calibrated realization.
#[derive(Debug, Serialize, serde::Deserialize)]
struct Artifact {
    kind: AffineKind,
    beta: f64,
    rho: f64,
    epsilon: f64,
    dt: f64,
    horizon: f64,
    grid: MaturityGrid,
    r_star: Vec<f64>,
    times: Vec<f64>,
    b_of_t: Vec<f64>,
    c_of_t: Vec<f64>,
    singular: affine::SingularDecomposition,
    checks: Value,
    pass: bool,
}

pub fn calibrate(args: CalibrateArgs, out_dir: &Path) -> Run {
    let args = args.merge_config()?;
    let kind: AffineKind = required(args.model, "model")?.into();
    let curve = read_curve(
        &required(args.curve, "curve")?,
        args.pad.unwrap_or(default_pad()),
    )?;
    let beta = required(args.beta, "beta")?;
    let rho = required(args.rho, "rho")?;
    let horizon = args.horizon.unwrap_or(1.0);
    let dt = args.dt.unwrap_or(1e-3);
    let epsilon = args.epsilon.unwrap_or(default_epsilon());
    let model = affine::fit(kind, &curve, beta, rho, horizon, dt, epsilon)?;
    let singular = singular_decompose(&curve, &model.riccati, rho)?;
    let (checks, pass) = match kind {
        AffineKind::Hwv => {
            let a0 = model
                .a_hwv_at_zero()?
                .iter()
                .fold(0.0_f64, |a, v| a.max(v.abs()));
            (
                json!({ "a_hwv_at_zero_max": a0, "tolerance": 1e-8 }),
                a0 < 1e-8,
            )
        }
        AffineKind::Hwcir => {
            let c = volterra_c(&curve, beta, rho, horizon, model.dt)?;
            let gap = c
                .iter()
                .zip(&model.c_of_t)
                .fold(0.0_f64, |a, (x, y)| a.max((x - y).abs()));
            let bc = b_c_consistency(&model.b_of_t, &model.c_of_t, beta, model.dt);
            (
                json!({ "volterra_gap": gap, "volterra_tolerance": 1e-5, "b_c_consistency": bc, "b_c_tolerance": 1e-6 }),
                gap < 1e-5 && bc < 1e-6,
            )
        }
    };
    let artifact = Artifact {
        kind,
        beta,
        rho,
        epsilon,
        dt: model.dt,
        horizon: model.horizon(),
        grid: *curve.grid(),
        r_star: curve.values().to_vec(),
        times: model.times(),
        b_of_t: model.b_of_t.clone(),
        c_of_t: model.c_of_t.clone(),
        singular,
        checks,
        pass,
    };
    let path = out_path(
        out_dir,
        args.out
            .unwrap_or_else(|| PathBuf::from("calibration.json")),
    );
    std::fs::write(
        &path,
        serde_json::to_string_pretty(&artifact).expect("artifact serializes"),
    )
    .map_err(|e| Failure::usage(anyhow::anyhow!("{}: {e}", path.display())))?;
    let csv = out_dir.join("calibration.csv");
    write_columns(
        &csv,
        &["t", "b", "c"],
        &[&artifact.times, &artifact.b_of_t, &artifact.c_of_t],
    )?;
    Ok(Outcome {
        report: json!({
            "kind": kind,
            "dt": artifact.dt,
            "horizon": artifact.horizon,
            "singular": artifact.singular,
            "checks": artifact.checks,
        }),
        pass,
        outputs: vec![path, csv],
    })
}

pub fn simulate(args: SimulateArgs, out_dir: &Path) -> Run {
    let args = args.merge_config()?;
    let art: Artifact = load_config(&required(args.model, "model")?)?;
    let grid = MaturityGrid::new(art.grid.x_max(), art.grid.pad(), art.grid.len())?;
    let r_star = ForwardCurve::from_values(grid, art.r_star.clone())?;
    let dt = args.dt.unwrap_or(art.dt);
    let horizon = args.horizon.unwrap_or(art.horizon);
    let n_paths = args.paths.unwrap_or(1000);
    let cfg = HjmConfig::new(dt, horizon, art.epsilon, args.seed.unwrap_or(0))?;
    let model = affine::fit(
        art.kind,
        &r_star,
        art.beta,
        art.rho,
        horizon,
        cfg.effective_dt(),
        art.epsilon,
    )?;
    let scheme = match args.scheme.unwrap_or(Scheme::Exact) {
        Scheme::Exact => ZScheme::Exact,
        Scheme::Euler => ZScheme::Euler,
    };
    let ens = simulate_realization(&model, &cfg, n_paths, scheme)?;
    let mut header = vec![
        "t".to_string(),
        "short_rate_mean".into(),
        "short_rate_std".into(),
        "z_mean".into(),
        "z_var".into(),
    ];
    header.extend(ens.bond_tenors.iter().map(|t| format!("bond_{t}")));
    let bond_cols: Vec<Vec<f64>> = (0..ens.bond_tenors.len())
        .map(|j| ens.bond_mean.iter().map(|row| row[j]).collect())
        .collect();
    let mut cols: Vec<&[f64]> = vec![
        &ens.times,
        &ens.short_rate_mean,
        &ens.short_rate_std,
        &ens.z_mean,
        &ens.z_var,
    ];
    cols.extend(bond_cols.iter().map(|c| c.as_slice()));
    let summary = out_dir.join("ensemble.csv");
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    write_columns(&summary, &header_refs, &cols)?;
    let mut outputs = vec![summary];
    if args.dump_paths.unwrap_or(false) {
        let names: Vec<String> = std::iter::once("t".to_string())
            .chain((0..n_paths).map(|p| format!("path_{p}")))
            .collect();
        let mut cols: Vec<&[f64]> = vec![&ens.times];
        cols.extend(ens.z_paths.iter().map(|p| p.as_slice()));
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let dump = out_dir.join("paths.csv");
        write_columns(&dump, &refs, &cols)?;
        outputs.push(dump);
    }
    let last = ens.times.len() - 1;
    Ok(Outcome {
        report: json!({
            "kind": art.kind,
            "n_paths": n_paths,
            "dt": cfg.effective_dt(),
            "horizon": horizon,
            "seed": cfg.seed,
            "scheme": scheme,
            "floor_hits": ens.floor_hits,
            "paths_with_floor": ens.paths_with_floor,
            "final_short_rate_mean": ens.short_rate_mean[last],
            "final_short_rate_std": ens.short_rate_std[last],
        }),
        pass: true,
        outputs,
    })
}

pub fn check_singular(args: CheckSingularArgs) -> Run {
    let args = args.merge_config()?;
    let kind: AffineKind = required(args.model, "model")?.into();
    let curve = read_curve(
        &required(args.curve, "curve")?,
        args.pad.unwrap_or(default_pad()),
    )?;
    let rho = required(args.rho, "rho")?;
    let sol = kind.riccati(required(args.beta, "beta")?, rho, *curve.grid())?;
    let d = singular_decompose(&curve, &sol, rho)?;
    Ok(Outcome {
        pass: d.is_member,
        report: to_value(&d),
        outputs: vec![],
    })
}

fn read_curve_dir(
    dir: &Path,
    pad: f64,
) -> std::result::Result<Vec<(String, ForwardCurve)>, Failure> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Failure::usage(anyhow::anyhow!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Failure::usage(anyhow::anyhow!(
            "no .csv curves in {}",
            dir.display()
        )));
    }
    files
        .iter()
        .map(|p| {
            let name = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            read_curve(p, pad)
                .map(|c| (name, c))
                .map_err(|e| Failure::usage(anyhow::anyhow!("{}: {e}", p.display())))
        })
        .collect()
}

pub fn lie_check(args: LieCheckArgs, out_dir: &Path) -> Run {
    let args = args.merge_config()?;
    let vol_path = required(args.vol, "vol")?;
    let text = std::fs::read_to_string(&vol_path)
        .map_err(|e| Failure::usage(anyhow::anyhow!("{}: {e}", vol_path.display())))?;
    let spec: ModelSpec = serde_json::from_str(&text)
        .map_err(|e| Failure::usage(anyhow::anyhow!("{}: {e}", vol_path.display())))?;
    let curves = match &args.curves {
        Some(dir) => read_curve_dir(dir, args.pad.unwrap_or(default_pad()))?,
        None => test_curves(MaturityGrid::standard()),
    };
    for (_, c) in &curves {
        spec.volatility.validate(c.grid())?;
    }
    let step = FrechetStep::new(args.eps_fd.unwrap_or(BRACKET_FRECHET_STEP))?;
    let (report, pass) = match &spec.volatility {
        VolatilityStructure::Local { phi } => {
            let r = local_vol_obstruction_scan(phi, &curves, &step)?;
            let pass = !r.obstruction;
            (to_value(&r), pass)
        }
        other => {
            let r = involutivity_scan(other, &curves, spec.epsilon, &step)?;
            let pass = r.involutive;
            (to_value(&r), pass)
        }
    };
    let path = args
        .report
        .unwrap_or_else(|| out_dir.join("lie-check.json"));
    Ok(Outcome {
        report,
        pass,
        outputs: vec![path],
    })
}

pub fn svensson_fit_cmd(args: SvenssonFitArgs) -> Run {
    let args = args.merge_config()?;
    let curve = read_curve(
        &required(args.curve, "curve")?,
        args.pad.unwrap_or(default_pad()),
    )?;
    let init = match args.init {
        Some(v) => {
            let z: [f64; 6] = v.try_into().map_err(|v: Vec<f64>| {
                Failure::usage(anyhow::anyhow!("--init needs 6 values, got {}", v.len()))
            })?;
            SvenssonPoint::new(z)?
        }
        None => {
            let long = curve.at(curve.grid().x_max());
            SvenssonPoint::new([long, curve.short_rate() - long, 0.0, 0.0, 0.5, 0.2])?
        }
    };
    let fit = svensson_fit(&curve, &init)?;
    Ok(Outcome {
        pass: fit.converged,
        report: to_value(&fit),
        outputs: vec![],
    })
}

pub fn svensson_sim(args: SvenssonSimArgs, out_dir: &Path) -> Run {
    let args = args.merge_config()?;
    let grid = grid_of(&args.grid)?;
    let alpha = required(args.alpha, "alpha")?;
    let z0: [f64; 4] = required(args.z0, "z0")?.try_into().map_err(|v: Vec<f64>| {
        Failure::usage(anyhow::anyhow!("--z0 needs 4 values, got {}", v.len()))
    })?;
    let cfg = HjmConfig::new(
        required(args.dt, "dt")?,
        required(args.horizon, "horizon")?,
        0.0,
        args.seed.unwrap_or(0),
    )?;
    let n = cfg.n_steps();
    let dt = cfg.effective_dt();
    let n_paths = args.paths.unwrap_or(1).max(1);
    let every = args.snapshot_every.unwrap_or(n.div_ceil(4)).max(1);
    let start = ConsistentSvenssonState::new(alpha, z0)?;
    let noise = NoiseSource::new(cfg.seed);
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); 6];
    let mut snapshots: Vec<(f64, ForwardCurve)> = Vec::new();
    let mut worst = 0.0_f64;
    for p in 0..n_paths {
        let dw = noise.increments(p as u64, n, 1, dt);
        let mut s = start;
        for k in 0..=n {
            if k > 0 {
                s = consistent_dynamics_step(&s, dt, dw[k - 1][0]);
            }
            let row = [p as f64, k as f64 * dt, s.z[0], s.z[1], s.z[2], s.z[3]];
            for (c, v) in cols.iter_mut().zip(row) {
                c.push(v);
            }
            if k % every == 0 || k == n {
                let curve = s.curve(grid);
                worst = worst.max(basis_residual(alpha, &curve)?);
                if p == 0 {
                    snapshots.push((k as f64 * dt, curve));
                }
            }
        }
    }
    let factors = out_dir.join("svensson_factors.csv");
    let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
    write_columns(&factors, &["path", "t", "Z1", "Z2", "Z3", "Z4"], &refs)?;
    let curves = out_dir.join("svensson_curves.csv");
    let xs: Vec<f64> = grid.nodes().collect();
    let names: Vec<String> = std::iter::once("x".to_string())
        .chain(snapshots.iter().map(|(t, _)| format!("t={t}")))
        .collect();
    let mut ccols: Vec<&[f64]> = vec![&xs];
    ccols.extend(snapshots.iter().map(|(_, c)| c.values()));
    let nrefs: Vec<&str> = names.iter().map(String::as_str).collect();
    write_columns(&curves, &nrefs, &ccols)?;
    Ok(Outcome {
        report: json!({
            "alpha": alpha,
            "z0": z0,
            "dt": dt,
            "horizon": cfg.horizon,
            "paths": n_paths,
            "seed": cfg.seed,
            "max_span_residual": worst,
            "tolerance": 1e-10,
        }),
        pass: worst < 1e-10,
        outputs: vec![factors, curves],
    })
}

pub fn equivalence(args: EquivalenceArgs) -> Run {
    let args = args.merge_config()?;
    let r_star = match &args.curve {
        Some(p) => read_curve(p, args.pad.unwrap_or(default_pad()))?,
        None => ForwardCurve::constant(MaturityGrid::standard(), 0.03),
    };
    let cfg = EquivalenceConfig {
        kind: required(args.model, "model")?.into(),
        beta: required(args.beta, "beta")?,
        rho: required(args.rho, "rho")?,
        dts: args.dts.unwrap_or_else(|| vec![4e-3, 2e-3, 1e-3]),
        horizon: args.horizon.unwrap_or(1.0),
        n_paths: args.paths.unwrap_or(100),
        seed: args.seed.unwrap_or(0),
        epsilon: args.epsilon.unwrap_or(default_epsilon()),
    };
    let r = run_equivalence(&r_star, &cfg)?;
    Ok(Outcome {
        pass: r.pass,
        report: to_value(&r),
        outputs: vec![],
    })
}

pub fn invariance(args: InvarianceArgs) -> Run {
    let args = args.merge_config()?;
    let grid = grid_of(&args.grid)?;
    let cfg = InvarianceConfig {
        kind: required(args.model, "model")?.into(),
        beta: required(args.beta, "beta")?,
        rho: required(args.rho, "rho")?,
        b: required(args.b, "b")?,
        c: required(args.c, "c")?,
        dt: args.dt.unwrap_or(1e-3),
        horizon: args.horizon.unwrap_or(1.0),
        n_paths: args.paths.unwrap_or(100),
        seed: args.seed.unwrap_or(0),
        epsilon: args.epsilon.unwrap_or(default_epsilon()),
        control_level: args.control_level,
    };
    let r = run_invariance(grid, &cfg)?;
    Ok(Outcome {
        pass: r.pass,
        report: to_value(&r),
        outputs: vec![],
    })
}

fn parse_functional(s: &str) -> std::result::Result<LinearFunctional, Failure> {
    let bad = || {
        Failure::usage(anyhow::anyhow!(
            "functional '{s}' is not point:x or yield:x"
        ))
    };
    let (kind, x) = s.trim().split_once(':').ok_or_else(bad)?;
    let x: f64 = x.trim().parse().map_err(|_| bad())?;
    match kind.trim() {
        "point" => Ok(LinearFunctional::PointEval { x }),
        "yield" => Ok(LinearFunctional::BenchmarkYield { x }),
        _ => Err(bad()),
    }
}

pub fn rank(args: RankArgs) -> Run {
    let args = args.merge_config()?;
    let fs = required(args.ell, "ell")?
        .iter()
        .map(|s| parse_functional(s))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let q = required(args.q, "q")?;
    let probe_dim = args.probe_dim.unwrap_or(fs.len() * (q + 1) + 2);
    let r = rank_a3(&fs, q, probe_dim)?;
    let pass = match args.expect_rank {
        Some(k) => r.rank == k,
        None => r.full_rank,
    };
    Ok(Outcome {
        pass,
        report: to_value(&r),
        outputs: vec![],
    })
}
