use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use fdr_core::hjm::{euler_mild_step, MuField, VolField};
use fdr_core::lie::{lie_bracket, BRACKET_FRECHET_STEP};
use fdr_core::riccati::solve_riccati;
use fdr_core::{
    shift, ForwardCurve, FrechetStep, MaturityGrid, RiccatiParams, VolatilityStructure,
};

fn curve(grid: MaturityGrid) -> ForwardCurve {
    ForwardCurve::from_fn(grid, |x| {
        0.04 - 0.01 * (-0.5 * x).exp() + 0.01 * x * (-0.5 * x).exp()
    })
}

fn riccati(c: &mut Criterion) {
    let grid = MaturityGrid::standard();
    let p = RiccatiParams::new(0.01, 0.5, 1.0).unwrap();
    c.bench_function("riccati_cir_601", |b| {
        b.iter(|| solve_riccati(black_box(p), grid).unwrap())
    });
}

fn curve_ops(c: &mut Criterion) {
    let h = curve(MaturityGrid::standard());
    c.bench_function("shift_cubic", |b| {
        b.iter(|| shift(black_box(&h), 0.0137).unwrap())
    });
}

fn euler(c: &mut Criterion) {
    let h = curve(MaturityGrid::standard());
    let vas = VolatilityStructure::vasicek(0.5, 0.02);
    let cir = VolatilityStructure::cir(0.5, 0.1);
    c.bench_function("euler_step_vasicek", |b| {
        b.iter(|| euler_mild_step(&vas, black_box(&h), &[0.01], 1e-3, 1e-6).unwrap())
    });
    c.bench_function("euler_step_cir", |b| {
        b.iter(|| euler_mild_step(&cir, black_box(&h), &[0.01], 1e-3, 1e-6).unwrap())
    });
}

fn bracket(c: &mut Criterion) {
    let h = curve(MaturityGrid::standard());
    let step = FrechetStep::new(BRACKET_FRECHET_STEP).unwrap();
    let phi = VolatilityStructure::Local {
        phi: "0.1*sqrt(y)".parse().unwrap(),
    };
    let mu = MuField {
        sigma: &phi,
        epsilon: 1e-6,
        step,
    };
    let s = VolField {
        sigma: &phi,
        index: 0,
        epsilon: 1e-6,
    };
    c.bench_function("lie_bracket_mu_sigma_local", |b| {
        b.iter(|| lie_bracket(&mu, &s, black_box(&h), &step).unwrap())
    });
}

criterion_group!(benches, riccati, curve_ops, euler, bracket);
criterion_main!(benches);
