//! Model-free primal-dual soft-max LSVI-UCB for episodic constrained MDPs
//! with linear function approximation.
//!
//! The crate is split into:
//! - [`linalg`]: feature vectors, Sherman-Morrison Gram inverses, ridge solves;
//! - [`env`]: tabular CMDPs, the job-scheduling benchmark, the simulator;
//! - [`agent`]: the learning algorithm;
//! - [`oracle`]: exact dynamic programming and the occupancy-measure LP;
//! - [`harness`]: seeded multi-trial experiments with regret/violation CSVs.

pub mod agent;
pub mod env;
pub mod harness;
pub mod linalg;
pub mod oracle;

pub use agent::{Agent, AgentConfig, AgentError, EpisodeTrace, PolicyDistribution, RunStreams, Schedule};
pub use env::{make_job_scheduler, EnvError, Environment, EpisodeStep, TabularCmdp, TabularEnv};
pub use linalg::{FeatureVector, GramInverse, Objective, RidgeAccumulator};
pub use oracle::{policy_eval_dp, slater_margin, solve_occupancy_lp, OccupancyMeasure, StepPolicy};
