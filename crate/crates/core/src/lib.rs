//! Finite-dimensional realizations of HJM forward-rate models on a
//! discretized forward-curve space.
//!
//! Curves live on a uniform [`MaturityGrid`] with a right pad that the
//! shift semigroup consumes. On top of that sit the HJM vector fields
//! ([`hjm`]), Riccati loadings ([`riccati`]), the Hull–White extended
//! Vasicek and CIR realizations with their singular sets ([`affine`]),
//! numerical Lie brackets ([`lie`]) and the Svensson family ([`svensson`]).

// `!(x > 0.0)` guards are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod affine;
pub mod curve_space;
pub mod error;
pub mod experiments;
pub mod expr;
pub mod hjm;
pub mod io;
pub mod lie;
pub mod linalg;
pub mod riccati;
pub mod rng;
pub mod svensson;

pub use affine::{AffineKind, AffineRealization, Ensemble, SingularDecomposition, ZScheme};
pub use curve_space::{
    deriv, integral, norm_w, shift, ForwardCurve, LinearFunctional, MaturityGrid, RankReport,
    WeightFunction,
};
pub use error::{Error, Result};
pub use expr::Expr;
pub use hjm::{CurveField, FrechetStep, HjmConfig, VolatilityStructure};
pub use lie::{BracketReport, ObstructionReport};
pub use riccati::{RiccatiParams, RiccatiSolution};
pub use rng::NoiseSource;
pub use svensson::{ConsistentSvenssonState, SvenssonPoint};
