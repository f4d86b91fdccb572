//! Synchronous randomized FedDR: sampled users take a relaxed
//! Douglas-Rachford step with an (inexact) local prox and the server
//! aggregates the reflected iterates before applying the regularizer's prox.

mod run;
mod sampling;
mod schedule;
mod state;

pub(crate) use run::{base_meta, evaluate, snapshot};
pub use run::{check_sync_config, run_feddr, RunOptions};
pub use sampling::{sample_users, SamplingScheme};
pub use schedule::{
    accuracy_for_round, check_stepsizes, stepsize_report, validate_stepsizes, AccuracySchedule,
    AccuracyTarget, StepsizeReport,
};
pub(crate) use state::local_seed;
pub use state::{
    aggregate_residual, init_feddr, local_prox, local_update, reflection_residual,
    server_aggregate, yx_residual, Hyper, ProxMode, ServerState, UserState,
};
