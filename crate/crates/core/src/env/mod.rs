//! Ground-truth FN-MDP simulator: change functions and schedules, structural
//! equations, and labelled trajectory collection.

mod change;
mod sim;
mod spec;

pub use change::{ChangeFn, Schedule};
pub use sim::{
    collect_trajectories, read_jsonl, write_jsonl, Env, EnvState, Policy, StepOutcome, StepRecord, Trajectory,
    UniformPolicy,
};
pub use spec::{
    make_tracking_env, random_bench_env, BenchConfig, BenchTheta, Dynamics, EnvSpec, MaskedNet, Reward,
    ThetaProcess, TrackingConfig,
};
