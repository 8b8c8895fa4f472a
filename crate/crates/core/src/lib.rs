//! Storm-water detention pond control: a hybrid Markov decision process
//! model of the pond, synthesis of a maximally permissive overflow-safe
//! strategy, shielded Q-learning of a cost-optimal strategy within it, and
//! Monte Carlo evaluation.

pub mod config;
pub mod control;
pub mod env;
pub mod error;
pub mod experiment;
pub mod hmdp;
pub mod learning;
pub mod plot;
pub mod rain;
pub mod synthesis;
pub mod units;

pub use config::ExperimentConfig;
pub use control::{
    default_valve_table, Coarsening, DeterministicStrategy, LearnKey, ModeSet, ShieldedPolicy, StaticStrategy,
    StrategyFile, TieBreak, ValveTable,
};
pub use env::PondParams;
pub use experiment::{replicate, Experiment, Summary, SummaryRow};
pub use learning::{evaluate, q_learn, EvalResult, LearnOutcome, LearnParams, Observer, QTable};
pub use error::{PondError, Result};
pub use hmdp::{
    derive_seed, simulate, simulate_recorded, simulate_trace, Configuration, ContinuousState, ControlModeId,
    DecisionPoint, EnvMode, Model, Phase, Plant, Policy, Trajectory,
};

pub use rain::{sample_trace, worst_case_envelope, EnvStart, RainInterval, RainProgram, RainTrace, SamplingLaw};
pub use synthesis::{
    check_feasible, synthesize_safe, Adversary, DecisionGrid, FeasibilityReport, GridSpec, PermissiveStrategy,
};
