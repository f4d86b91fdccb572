//! Problem generators, experiment configuration and the driver behind the
//! command-line tool.

pub mod config;
pub mod data;
pub mod experiment;

pub use config::{
    Algorithm, AsyncConfig, BaselineOptions, CertifyOptions, ExperimentConfig, HyperConfig,
    ProblemConfig, TraceOptions,
};
pub use data::{
    gen_quadratic, gen_synthetic, ModelSpec, QuadraticInstance, QuadraticSpec, SyntheticData,
    SyntheticSpec, UserData,
};
pub use experiment::{
    build_problem, certify_file, certify_trace, parse_param, resolve_hyper, run_config,
    run_experiment, run_seed, set_path, sweep, BuiltProblem, CertifyReport, ExperimentOutcome,
    RunFlags,
};
