//! Randomized Douglas-Rachford splitting for federated composite
//! optimization: the synchronous FedDR method, its asynchronous variant on a
//! seeded discrete-event simulator, FedAvg/FedProx baselines, and runtime
//! certificates for the Lyapunov descent inequalities behind their analysis.
//!
//! The solvers are generic over [`Scalar`] (`f32` or `f64`); traces and
//! certificates are always `f64`.

// NaN-rejecting guards are written as `!(x > 0)` on purpose
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod asyncsim;
pub mod baselines;
pub mod certify;
pub mod error;
pub mod feddr;
pub mod harness;
pub mod linalg;
pub mod numerics;
pub mod rng;
pub mod scalar;
pub mod trace;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use trace::{Trace, TraceRecord};

pub type LossModel64 = numerics::LossModel<f64>;
pub type LossModel32 = numerics::LossModel<f32>;
pub type Problem64 = numerics::Problem<f64>;
pub type Problem32 = numerics::Problem<f32>;
pub type Hyper64 = feddr::Hyper<f64>;
pub type Hyper32 = feddr::Hyper<f32>;
pub type UserState64 = feddr::UserState<f64>;
pub type ServerState64 = feddr::ServerState<f64>;
pub type Regularizer64 = numerics::Regularizer<f64>;
