//! Multi-head, time-dependent self-attention dynamics of tokens on the unit
//! sphere, coupled to stochastic head weights.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`); the
//! `*64` / `*32` aliases below fix the precision.

// `!(x > 0)` guards also reject NaN; index loops mirror the formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod assignment;
pub mod attention;
pub mod diagnostics;
pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod io;
pub mod jko;
pub mod linalg;
pub mod scalar;
pub mod sphere;
pub mod weights;

pub use attention::{FieldEval, FieldEvaluator, FieldRequest, HeadEnsemble, TokenCloud};
pub use diagnostics::{
    interaction_energy, strong_upper_gradient_sq, w2_squared, DissipationSign, EnergyLedger, GradientStats,
    LedgerConfig, LedgerDissipation,
};
pub use dynamics::{simulate, step_tokens, SimulationConfig, Simulator, StepView, Trajectory, UpdateOrder};
pub use error::{Error, Result};
pub use experiments::{fit_power_law, mc_sweep, FitResult, Scenario, SweepReport};
pub use jko::{jko_step, jko_trajectory, Coupling, JkoConfig, MobilityMode};
pub use linalg::SymMatrix;
pub use scalar::Scalar;
pub use sphere::{TangentVector, UnitVector};
pub use weights::{HeadLaw, RngStream, StreamRole, WeightProcessSpec};

pub type TokenCloud64 = TokenCloud<f64>;
pub type TokenCloud32 = TokenCloud<f32>;
pub type HeadEnsemble64 = HeadEnsemble<f64>;
pub type HeadEnsemble32 = HeadEnsemble<f32>;
pub type SymMatrix64 = SymMatrix<f64>;
pub type SymMatrix32 = SymMatrix<f32>;
pub type Trajectory64 = Trajectory<f64>;
pub type Trajectory32 = Trajectory<f32>;
