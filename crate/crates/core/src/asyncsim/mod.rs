//! Asynchronous FedDR on a seeded discrete-event simulator: one user
//! completes per server event, reading a model at most `tau` versions old.

mod bounds;
mod run;
mod sim;
mod stats;
mod versions;

pub use bounds::{async_constants, stepsize_bounds_async, AsyncBounds};
pub use run::{
    async_local_update, async_server_update, check_async_config, run_async, run_async_logged,
    Activation, ScriptedEvent,
};
pub use sim::{schedule_user, Completion, ComputeTime, DelayModel, DelaySim, EventQueue, Pending};
pub use stats::{measure_delay_stats, DelayStats};
pub use versions::{VersionLog, VersionedModel};
