//! Alternating optimization: the offloading game with powers held fixed,
//! then power allocation with the assignment held fixed, until neither the
//! assignment nor the system delay moves.

use serde::{Deserialize, Serialize};

use crate::error::{AoError, GameError};
use crate::game::{epg_jdm_from, initial_assignment, total_interference, GameConfig};
use crate::model::{system_total_delay, Assignment, DelayReport, PowerAllocation};
use crate::power::{allocate_power, p_init, MmConfig, PowerOutcome};
use crate::scenario::Scenario;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AoConfig {
    pub game: GameConfig,
    pub power: MmConfig,
    /// Largest change in system delay (s) still counted as stable.
    pub tol_delay: f64,
    pub t_max: usize,
}

impl Default for AoConfig {
    fn default() -> Self {
        Self { game: GameConfig::default(), power: MmConfig::default(), tol_delay: 1e-6, t_max: 20 }
    }
}

/// Which rate floors the final power step had to weaken.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FloorAdjustments {
    /// `(device, fraction of the deadline rate kept)`.
    pub relaxed_deadline: Vec<(usize, f64)>,
    pub dropped_deadline: Vec<usize>,
    pub dropped_energy: Vec<usize>,
}

impl From<&PowerOutcome> for FloorAdjustments {
    fn from(out: &PowerOutcome) -> Self {
        Self {
            relaxed_deadline: out.relaxed_deadline.clone(),
            dropped_deadline: out.dropped_deadline.clone(),
            dropped_energy: out.dropped_energy.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub assignment: Assignment,
    pub powers: PowerAllocation,
    pub delay_report: DelayReport,
    pub outer_iterations: usize,
    pub converged: bool,
    /// System delay (s) after each outer iteration.
    pub objective_trace: Vec<f64>,
    /// Summed interference score after each outer iteration.
    pub interference_trace: Vec<f64>,
    pub floors: FloorAdjustments,
}

impl Solution {
    /// Wrap a single assignment-then-power pass.
    pub fn single_pass(scenario: &Scenario, assignment: Assignment, outcome: &PowerOutcome, lambda: f64) -> Self {
        let delay_report = DelayReport::build(&assignment, &outcome.powers, scenario);
        let nu = total_interference(&assignment, &outcome.powers, scenario, lambda);
        Self {
            objective_trace: vec![delay_report.total_delay_sum],
            interference_trace: vec![nu],
            floors: outcome.into(),
            assignment,
            powers: outcome.powers.clone(),
            delay_report,
            outer_iterations: 1,
            converged: true,
        }
    }

    pub fn total_delay(&self) -> f64 {
        self.delay_report.total_delay_sum
    }
}

fn same_delay(a: f64, b: f64, tol: f64) -> bool {
    a == b || (a - b).abs() <= tol
}

pub fn alternating_optimize(scenario: &Scenario, config: &AoConfig) -> Result<Solution, AoError> {
    if config.t_max == 0 {
        return Err(AoError::Config("t_max must be at least 1".into()));
    }
    let mut assignment = initial_assignment(scenario, &mut scenario.init_rng());
    let mut powers = p_init(scenario, &assignment, config.power.energy_margin).powers;
    let mut delay = system_total_delay(&assignment, &powers, scenario);
    let mut objective_trace = Vec::new();
    let mut interference_trace = Vec::new();
    let mut floors = FloorAdjustments::default();
    let mut converged = false;

    for t in 1..=config.t_max {
        let next = match epg_jdm_from(scenario, &powers, &assignment, &config.game) {
            Ok((a, _)) => a,
            Err(GameError::NotConverged { assignment, .. }) => {
                log::warn!("ao: game hit its round limit at outer iteration {t}");
                assignment
            }
            Err(e) => return Err(e.into()),
        };
        let outcome = allocate_power(scenario, &next, &config.power)?;
        let next_delay = system_total_delay(&next, &outcome.powers, scenario);
        objective_trace.push(next_delay);
        interference_trace.push(total_interference(&next, &outcome.powers, scenario, config.game.lambda));
        let stable = next == assignment && same_delay(next_delay, delay, config.tol_delay);
        log::debug!("ao: iteration {t} delay {next_delay:.6} stable {stable}");
        assignment = next;
        floors = (&outcome).into();
        powers = outcome.powers;
        delay = next_delay;
        if stable {
            converged = true;
            break;
        }
    }

    Ok(Solution {
        delay_report: DelayReport::build(&assignment, &powers, scenario),
        outer_iterations: objective_trace.len(),
        assignment,
        powers,
        converged,
        objective_trace,
        interference_trace,
        floors,
    })
}
