//! Loss models, proximal oracles, the regularizer prox and the gradient
//! mapping.

pub mod loss;
pub mod problem;
pub mod prox;
pub mod regularizer;
pub mod sgd;

pub use loss::{lipschitz_bound, LossKind, LossKindTag, LossModel, Samples};
pub use problem::{grad_mapping, Problem};
pub use prox::{prox_f_certified, prox_f_heuristic, CertifiedProx, ProxResult, StopRule};
pub use regularizer::{prox_g, soft_threshold, Regularizer};
pub use sgd::{local_sgd, Anchor, SgdOptions};
