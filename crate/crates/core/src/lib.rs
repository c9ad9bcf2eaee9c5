//! Uplink NOMA multi-BS edge computing: scenario generation, the SIC delay
//! model, the offloading/grouping game, MM power control, alternating
//! optimization, baseline schemes and the experiment harness.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ao;
pub mod baselines;
pub mod error;
pub mod game;
pub mod harness;
pub mod model;
pub mod power;
pub mod scenario;

pub use ao::{alternating_optimize, AoConfig, Solution};
pub use baselines::{run_baseline, BaselineKind};
pub use error::{AoError, GameError, HarnessError, ModelError, PowerError, ScenarioError};
pub use game::{epg_jdm, epg_jdm_from, is_nash_equilibrium, GameConfig, GameTrace};
pub use harness::{aggregate, run_experiment, Algorithm, ExperimentConfig, MetricsTable, RunOptions};
pub use model::{Assignment, DelayReport, PowerAllocation, Strategy, Violation};
pub use scenario::{generate_scenario, GenerationParams, Scenario};
