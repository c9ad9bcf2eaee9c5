//! Joint offloading and grouping game.
//!
//! Each device that cannot meet its deadline locally picks a (BS, subchannel)
//! pair to minimize its interference score: received co-group interference
//! from devices decoded after it, plus the task load other devices place on
//! the same MEC server. Best-response dynamics run in two phases per round
//! (BS choice, then subchannel choice) followed by an exhaustive joint check,
//! so a converged output is always a pure Nash equilibrium.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::GameError;
use crate::model::{decoded_before, Assignment, PowerAllocation, Strategy};
use crate::scenario::Scenario;

/// Interference is scored in milliwatts.
pub const POWER_UNIT_PER_WATT: f64 = 1e3;
/// Load is scored in megabits.
pub const LOAD_UNIT_PER_BIT: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GameConfig {
    /// Weight of the load term (Mbit) against the interference term (mW).
    pub lambda: f64,
    /// Sweeps per phase in each outer round.
    pub inner_rounds: usize,
    pub max_outer: usize,
    /// A move must lower the mover's score by more than this.
    pub improvement_tol: f64,
}

impl Default for GameConfig {
    fn default() -> Self {
        Self { lambda: 1.0, inner_rounds: 1, max_outer: 200, improvement_tol: 1e-12 }
    }
}

impl GameConfig {
    fn validate(&self) -> Result<(), GameError> {
        if self.inner_rounds == 0 {
            return Err(GameError::Config("inner_rounds must be at least 1".into()));
        }
        if self.max_outer == 0 {
            return Err(GameError::Config("max_outer must be at least 1".into()));
        }
        if !(self.lambda >= 0.0) || !(self.improvement_tol >= 0.0) {
            return Err(GameError::Config("lambda and improvement_tol must be non-negative".into()));
        }
        Ok(())
    }
}

/// The two components of a device's interference score.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NuParts {
    /// Received power of weaker co-group devices, mW.
    pub interference: f64,
    /// Task bits other devices offload to the same BS, Mbit.
    pub load: f64,
}

impl NuParts {
    pub fn value(&self, lambda: f64) -> f64 {
        self.interference + lambda * self.load
    }

    /// `self - other`, combining the parts separately so that equal loads
    /// cancel exactly.
    pub fn delta(&self, other: &NuParts, lambda: f64) -> f64 {
        lambda * (self.load - other.load) + (self.interference - other.interference)
    }
}

/// Score parts of device `n` if it played `candidate` against the others'
/// strategies in `assignment`.
pub fn nu_parts(n: usize, candidate: Strategy, assignment: &Assignment, powers: &PowerAllocation, scenario: &Scenario) -> NuParts {
    let Strategy::Offload { bs, subchannel } = candidate else {
        return NuParts::default();
    };
    let mut parts = NuParts::default();
    for k in 0..assignment.len() {
        if k == n {
            continue;
        }
        if let Strategy::Offload { bs: mk, subchannel: gk } = assignment.get(k) {
            if mk != bs {
                continue;
            }
            parts.load += scenario.devices[k].task_bits;
            if gk == subchannel && decoded_before(scenario, n, k, bs, subchannel) {
                parts.interference += powers.get(k) * scenario.gain(k, bs, subchannel);
            }
        }
    }
    parts.interference *= POWER_UNIT_PER_WATT;
    parts.load *= LOAD_UNIT_PER_BIT;
    parts
}

/// `nu_n` at the device's current strategy; zero for local devices.
pub fn interference(n: usize, assignment: &Assignment, powers: &PowerAllocation, scenario: &Scenario, lambda: f64) -> f64 {
    nu_parts(n, assignment.get(n), assignment, powers, scenario).value(lambda)
}

pub fn total_interference(assignment: &Assignment, powers: &PowerAllocation, scenario: &Scenario, lambda: f64) -> f64 {
    (0..assignment.len()).map(|n| interference(n, assignment, powers, scenario, lambda)).sum()
}

/// Player-specific potential of device `n` playing `candidate`.
///
/// `lambda / (2 W_n) * sum_u sum_{i != u} [same BS] W_i W_u`
/// `+ sum over groups of sum_u sum_{i decoded after u} p_i h_i`
/// `- p_n h_n * #{co-group devices decoded before n}`
///
/// For any unilateral move of `n`, the change of this value equals the
/// change of `nu_n`.
pub fn potential(
    n: usize,
    candidate: Strategy,
    assignment: &Assignment,
    powers: &PowerAllocation,
    scenario: &Scenario,
    lambda: f64,
) -> f64 {
    let (load, radio) = potential_parts(n, candidate, assignment, powers, scenario, lambda);
    load + radio
}

/// The load and interference parts of [`potential`], kept apart so that a
/// difference of potentials can be taken part by part.
fn potential_parts(
    n: usize,
    candidate: Strategy,
    assignment: &Assignment,
    powers: &PowerAllocation,
    scenario: &Scenario,
    lambda: f64,
) -> (f64, f64) {
    let mut profile = assignment.clone();
    profile.set(n, candidate);
    let w = |i: usize| scenario.devices[i].task_bits * LOAD_UNIT_PER_BIT;
    let offloaders = profile.offloaders();

    let mut load_pairs = 0.0;
    for &u in &offloaders {
        for &i in &offloaders {
            if i != u && profile.get(i).bs() == profile.get(u).bs() {
                load_pairs += w(i) * w(u);
            }
        }
    }
    let load_term = lambda * load_pairs / (2.0 * w(n));

    let mut group_term = 0.0;
    for &u in &offloaders {
        let Strategy::Offload { bs, subchannel } = profile.get(u) else { unreachable!() };
        for &i in &offloaders {
            if i != u && profile.get(i) == profile.get(u) && decoded_before(scenario, u, i, bs, subchannel) {
                group_term += powers.get(i) * scenario.gain(i, bs, subchannel);
            }
        }
    }

    let own_term = match candidate {
        Strategy::Local => 0.0,
        Strategy::Offload { bs, subchannel } => {
            let stronger = offloaders
                .iter()
                .filter(|&&i| i != n && profile.get(i) == candidate && decoded_before(scenario, i, n, bs, subchannel))
                .count();
            powers.get(n) * scenario.gain(n, bs, subchannel) * stronger as f64
        }
    };
    (load_term, POWER_UNIT_PER_WATT * (group_term - own_term))
}

/// One unilateral strategy change with its score and potential changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationReport {
    pub device: usize,
    pub from: Strategy,
    pub to: Strategy,
    pub delta_nu: f64,
    pub delta_phi: f64,
}

impl DeviationReport {
    pub fn evaluate(n: usize, to: Strategy, assignment: &Assignment, powers: &PowerAllocation, scenario: &Scenario, lambda: f64) -> Self {
        let from = assignment.get(n);
        let before = nu_parts(n, from, assignment, powers, scenario);
        let after = nu_parts(n, to, assignment, powers, scenario);
        // The load part is large and unchanged by a subchannel move, so
        // differencing the sum would swallow the interference change.
        let (load_to, radio_to) = potential_parts(n, to, assignment, powers, scenario, lambda);
        let (load_from, radio_from) = potential_parts(n, from, assignment, powers, scenario, lambda);
        let delta_phi = (load_to - load_from) + (radio_to - radio_from);
        Self { device: n, from, to, delta_nu: after.delta(&before, lambda), delta_phi }
    }
}

/// One accepted best-response move.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoveRecord {
    pub sweep: usize,
    pub device: usize,
    pub old_strategy: Strategy,
    pub new_strategy: Strategy,
    pub nu_before: f64,
    pub nu_after: f64,
    pub delta_phi: f64,
    /// Running potential after the move.
    pub potential: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepKind {
    /// BS choice at the current subchannel index.
    Bs,
    /// Subchannel choice at the current BS.
    Subchannel,
    /// Exhaustive joint check.
    Joint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub sweep: usize,
    pub kind: SweepKind,
    pub total_nu: f64,
    pub potential: f64,
    pub moves: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GameTrace {
    pub initial_potential: f64,
    pub moves: Vec<MoveRecord>,
    pub sweeps: Vec<SweepRecord>,
    pub outer_rounds: usize,
    /// Candidate evaluations made by the phase sweeps.
    pub candidate_evaluations: usize,
    /// Candidate evaluations made by the joint equilibrium check.
    pub verification_evaluations: usize,
    pub converged: bool,
}

#[derive(Serialize)]
struct MoveRow {
    sweep: usize,
    device: usize,
    old_strategy: String,
    new_strategy: String,
    nu_before: f64,
    nu_after: f64,
    potential: f64,
}

impl GameTrace {
    /// CSV with header `sweep,device,old_strategy,new_strategy,nu_before,nu_after,potential`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        if self.moves.is_empty() {
            w.write_record(["sweep", "device", "old_strategy", "new_strategy", "nu_before", "nu_after", "potential"])?;
        }
        for m in &self.moves {
            w.serialize(MoveRow {
                sweep: m.sweep,
                device: m.device,
                old_strategy: m.old_strategy.to_string(),
                new_strategy: m.new_strategy.to_string(),
                nu_before: m.nu_before,
                nu_after: m.nu_after,
                potential: m.potential,
            })?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn final_potential(&self) -> f64 {
        self.moves.last().map_or(self.initial_potential, |m| m.potential)
    }
}

/// Devices that must offload because local execution misses the deadline.
pub fn strategic_devices(scenario: &Scenario) -> Vec<usize> {
    (0..scenario.n_devices()).filter(|&n| !scenario.local_feasible(n)).collect()
}

/// Nearest-BS attachment with a uniformly random subchannel for every device
/// that cannot finish locally.
pub fn initial_assignment<R: Rng + ?Sized>(scenario: &Scenario, rng: &mut R) -> Assignment {
    let mut a = Assignment::all_local(scenario.n_devices());
    for n in 0..scenario.n_devices() {
        // Draw for every device so the stream position does not depend on gating.
        let g = rng.random_range(0..scenario.n_subchannels());
        if !scenario.local_feasible(n) {
            a.set(n, Strategy::offload(scenario.nearest_bs(n), g));
        }
    }
    a
}

/// Mutable game state with per-BS loads and group member lists kept in sync.
#[derive(Debug, Clone)]
pub struct GameState<'a> {
    scenario: &'a Scenario,
    powers: &'a PowerAllocation,
    assignment: Assignment,
    /// Offloaded bits per BS.
    load_bits: Vec<f64>,
    groups: Vec<Vec<usize>>,
    lambda: f64,
    pub candidate_evaluations: usize,
}

impl<'a> GameState<'a> {
    pub fn new(scenario: &'a Scenario, powers: &'a PowerAllocation, assignment: Assignment, lambda: f64) -> Self {
        let n_ch = scenario.n_subchannels();
        let mut state = Self {
            scenario,
            powers,
            assignment,
            load_bits: vec![0.0; scenario.n_bs()],
            groups: vec![Vec::new(); scenario.n_bs() * n_ch],
            lambda,
            candidate_evaluations: 0,
        };
        state.rebuild();
        state
    }

    fn rebuild(&mut self) {
        let n_ch = self.scenario.n_subchannels();
        self.load_bits.iter_mut().for_each(|l| *l = 0.0);
        self.groups.iter_mut().for_each(Vec::clear);
        for n in 0..self.assignment.len() {
            if let Strategy::Offload { bs, subchannel } = self.assignment.get(n) {
                self.load_bits[bs] += self.scenario.devices[n].task_bits;
                self.groups[bs * n_ch + subchannel].push(n);
            }
        }
    }

    pub fn assignment(&self) -> &Assignment {
        &self.assignment
    }

    pub fn into_assignment(self) -> Assignment {
        self.assignment
    }

    /// Score parts of `n` at `candidate` using the cached loads and groups.
    pub fn parts(&mut self, n: usize, candidate: Strategy) -> NuParts {
        self.candidate_evaluations += 1;
        self.parts_uncounted(n, candidate)
    }

    fn parts_uncounted(&self, n: usize, candidate: Strategy) -> NuParts {
        let Strategy::Offload { bs, subchannel } = candidate else {
            return NuParts::default();
        };
        let own = self.assignment.get(n);
        let mut load = self.load_bits[bs];
        if own.bs() == Some(bs) {
            load -= self.scenario.devices[n].task_bits;
        }
        let group = &self.groups[bs * self.scenario.n_subchannels() + subchannel];
        let interference: f64 = group
            .iter()
            .filter(|&&k| k != n && decoded_before(self.scenario, n, k, bs, subchannel))
            .map(|&k| self.powers.get(k) * self.scenario.gain(k, bs, subchannel))
            .sum();
        NuParts { interference: interference * POWER_UNIT_PER_WATT, load: load * LOAD_UNIT_PER_BIT }
    }

    pub fn nu(&self, n: usize) -> f64 {
        self.parts_uncounted(n, self.assignment.get(n)).value(self.lambda)
    }

    pub fn total_nu(&self) -> f64 {
        (0..self.assignment.len()).map(|n| self.nu(n)).sum()
    }

    pub fn apply(&mut self, n: usize, to: Strategy) {
        let n_ch = self.scenario.n_subchannels();
        if let Strategy::Offload { bs, subchannel } = self.assignment.get(n) {
            self.load_bits[bs] -= self.scenario.devices[n].task_bits;
            self.groups[bs * n_ch + subchannel].retain(|&k| k != n);
        }
        if let Strategy::Offload { bs, subchannel } = to {
            self.load_bits[bs] += self.scenario.devices[n].task_bits;
            self.groups[bs * n_ch + subchannel].push(n);
        }
        self.assignment.set(n, to);
        // Re-summing avoids drift in the cached loads over long runs.
        if let Some(bs) = to.bs() {
            self.load_bits[bs] = self.assignment.attached(bs).iter().map(|&i| self.scenario.devices[i].task_bits).sum();
        }
    }
}

struct Dynamics<'a, 'b> {
    state: GameState<'a>,
    trace: &'b mut GameTrace,
    lambda: f64,
    tol: f64,
    running_potential: f64,
}

impl Dynamics<'_, '_> {
    /// Move `n` to `to` and log it; the potential change is evaluated from
    /// the potential itself, not from the score change.
    fn accept(&mut self, sweep: usize, n: usize, to: Strategy, nu_before: f64, nu_after: f64) {
        let report = DeviationReport::evaluate(n, to, self.state.assignment(), self.state.powers, self.state.scenario, self.lambda);
        debug_assert!(report.delta_phi < 0.0, "accepted move raised the potential: {report:?}");
        self.running_potential += report.delta_phi;
        self.trace.moves.push(MoveRecord {
            sweep,
            device: n,
            old_strategy: report.from,
            new_strategy: to,
            nu_before,
            nu_after,
            delta_phi: report.delta_phi,
            potential: self.running_potential,
        });
        self.state.apply(n, to);
    }

    fn sweep(&mut self, sweep: usize, players: &[usize], phase: SweepKind) -> usize {
        let scenario = self.state.scenario;
        let mut moves = 0;
        for &n in players {
            let current = self.state.assignment().get(n);
            let Strategy::Offload { bs, subchannel } = current else { continue };
            let cur_parts = self.state.parts(n, current);
            let candidates: Vec<Strategy> = match phase {
                SweepKind::Bs => (0..scenario.n_bs()).map(|m| Strategy::offload(m, subchannel)).collect(),
                SweepKind::Subchannel => (0..scenario.n_subchannels()).map(|g| Strategy::offload(bs, g)).collect(),
                SweepKind::Joint => unreachable!("joint candidates are handled by verify"),
            };
            let mut best: Option<(f64, Strategy, NuParts)> = None;
            for cand in candidates {
                let parts = if cand == current { cur_parts } else { self.state.parts(n, cand) };
                let delta = parts.delta(&cur_parts, self.lambda);
                if best.as_ref().is_none_or(|(d, _, _)| delta < *d) {
                    best = Some((delta, cand, parts));
                }
            }
            let (delta, to, parts) = best.expect("at least one candidate");
            if delta < -self.tol {
                self.accept(sweep, n, to, cur_parts.value(self.lambda), parts.value(self.lambda));
                moves += 1;
            }
        }
        moves
    }

    /// Joint check over every (BS, subchannel); applies the best improving
    /// deviation of each device that has one.
    fn verify(&mut self, sweep: usize, players: &[usize]) -> usize {
        let scenario = self.state.scenario;
        let mut moves = 0;
        for &n in players {
            let current = self.state.assignment().get(n);
            if current.is_local() {
                continue;
            }
            let cur_parts = self.state.parts_uncounted(n, current);
            let mut best: Option<(f64, Strategy, NuParts)> = None;
            for m in 0..scenario.n_bs() {
                for g in 0..scenario.n_subchannels() {
                    let cand = Strategy::offload(m, g);
                    self.trace.verification_evaluations += 1;
                    let parts = self.state.parts_uncounted(n, cand);
                    let delta = parts.delta(&cur_parts, self.lambda);
                    if best.as_ref().is_none_or(|(d, _, _)| delta < *d) {
                        best = Some((delta, cand, parts));
                    }
                }
            }
            let (delta, to, parts) = best.expect("at least one candidate");
            if delta < -self.tol {
                self.accept(sweep, n, to, cur_parts.value(self.lambda), parts.value(self.lambda));
                moves += 1;
            }
        }
        moves
    }
}

/// Best-response dynamics from a nearest-BS, random-subchannel start drawn
/// from the scenario's optimizer stream.
pub fn epg_jdm(scenario: &Scenario, powers: &PowerAllocation, config: &GameConfig) -> Result<(Assignment, GameTrace), GameError> {
    let init = initial_assignment(scenario, &mut scenario.init_rng());
    epg_jdm_from(scenario, powers, &init, config)
}

/// Best-response dynamics from `initial`. Locally feasible devices are
/// pinned to local execution; every other device is placed on its nearest BS
/// if `initial` leaves it local.
pub fn epg_jdm_from(
    scenario: &Scenario,
    powers: &PowerAllocation,
    initial: &Assignment,
    config: &GameConfig,
) -> Result<(Assignment, GameTrace), GameError> {
    config.validate()?;
    if initial.len() != scenario.n_devices() || powers.watts.len() != scenario.n_devices() {
        return Err(GameError::Config("assignment and power vector must cover every device".into()));
    }
    let players = strategic_devices(scenario);
    let mut start = Assignment::all_local(scenario.n_devices());
    for &n in &players {
        let s = match initial.get(n) {
            Strategy::Offload { bs, subchannel } if bs < scenario.n_bs() && subchannel < scenario.n_subchannels() => {
                Strategy::offload(bs, subchannel)
            }
            _ => Strategy::offload(scenario.nearest_bs(n), 0),
        };
        start.set(n, s);
    }

    let mut trace = GameTrace::default();
    let state = GameState::new(scenario, powers, start, config.lambda);
    trace.initial_potential = state.total_nu();
    let mut dyn_ = Dynamics {
        running_potential: trace.initial_potential,
        state,
        trace: &mut trace,
        lambda: config.lambda,
        tol: config.improvement_tol,
    };

    let mut sweep = 0;
    let mut converged = false;
    let mut rounds = 0;
    while rounds < config.max_outer {
        rounds += 1;
        let mut changed = 0;
        for kind in [SweepKind::Bs, SweepKind::Subchannel] {
            for _ in 0..config.inner_rounds {
                sweep += 1;
                let moves = dyn_.sweep(sweep, &players, kind);
                changed += moves;
                let total_nu = dyn_.state.total_nu();
                dyn_.trace.sweeps.push(SweepRecord { sweep, kind, total_nu, potential: dyn_.running_potential, moves });
                if moves == 0 {
                    break;
                }
            }
        }
        if changed == 0 {
            sweep += 1;
            let moves = dyn_.verify(sweep, &players);
            let total_nu = dyn_.state.total_nu();
            dyn_.trace.sweeps.push(SweepRecord { sweep, kind: SweepKind::Joint, total_nu, potential: dyn_.running_potential, moves });
            if moves == 0 {
                converged = true;
                break;
            }
        }
    }
    let candidate_evaluations = dyn_.state.candidate_evaluations;
    let assignment = dyn_.state.into_assignment();
    trace.candidate_evaluations = candidate_evaluations;
    trace.outer_rounds = rounds;
    trace.converged = converged;
    log::debug!("game: {} rounds, {} moves, converged={}", rounds, trace.moves.len(), converged);
    if converged {
        Ok((assignment, trace))
    } else {
        Err(GameError::NotConverged { max_outer: config.max_outer, assignment, trace: Box::new(trace) })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NashCheck {
    pub is_equilibrium: bool,
    pub deviations: Vec<DeviationReport>,
}

/// Exhaustive unilateral-deviation check over every offloading device and
/// every alternative (BS, subchannel).
pub fn is_nash_equilibrium(assignment: &Assignment, powers: &PowerAllocation, scenario: &Scenario, config: &GameConfig) -> NashCheck {
    let mut deviations = Vec::new();
    for n in 0..assignment.len() {
        let current = assignment.get(n);
        if current.is_local() {
            continue;
        }
        let cur = nu_parts(n, current, assignment, powers, scenario);
        for m in 0..scenario.n_bs() {
            for g in 0..scenario.n_subchannels() {
                let alt = Strategy::offload(m, g);
                if alt == current {
                    continue;
                }
                let delta = nu_parts(n, alt, assignment, powers, scenario).delta(&cur, config.lambda);
                if delta < -config.improvement_tol {
                    deviations.push(DeviationReport::evaluate(n, alt, assignment, powers, scenario, config.lambda));
                }
            }
        }
    }
    NashCheck { is_equilibrium: deviations.is_empty(), deviations }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BruteForceResult {
    /// Equilibrium with the smallest aggregate score.
    pub assignment: Assignment,
    pub total_nu: f64,
    pub profiles: u128,
    pub equilibria: usize,
    /// Smallest aggregate score over all profiles, equilibrium or not.
    pub global_min_total_nu: f64,
}

/// Enumerate every gated profile. Returns the pure equilibrium minimizing
/// the aggregate score, since the score has no global exact potential.
pub fn brute_force_min_potential(
    scenario: &Scenario,
    powers: &PowerAllocation,
    config: &GameConfig,
    cap: u128,
) -> Result<BruteForceResult, GameError> {
    config.validate()?;
    let players = strategic_devices(scenario);
    let choices = (scenario.n_bs() * scenario.n_subchannels()) as u128;
    let profiles = choices
        .checked_pow(players.len() as u32)
        .filter(|&p| p <= cap)
        .ok_or(GameError::SearchTooLarge { profiles: choices.saturating_pow(players.len() as u32), cap })?;

    let n_ch = scenario.n_subchannels();
    let mut best: Option<(f64, Assignment)> = None;
    let mut global_min = f64::INFINITY;
    let mut equilibria = 0;
    let mut a = Assignment::all_local(scenario.n_devices());
    for code in 0..profiles {
        let mut c = code;
        for &n in &players {
            let k = (c % choices) as usize;
            c /= choices;
            a.set(n, Strategy::offload(k / n_ch, k % n_ch));
        }
        let total = total_interference(&a, powers, scenario, config.lambda);
        global_min = global_min.min(total);
        if is_nash_equilibrium(&a, powers, scenario, config).is_equilibrium {
            equilibria += 1;
            if best.as_ref().is_none_or(|(b, _)| total < *b) {
                best = Some((total, a.clone()));
            }
        }
    }
    let (total_nu, assignment) = best.ok_or(GameError::NoEquilibrium)?;
    Ok(BruteForceResult { assignment, total_nu, profiles, equilibria, global_min_total_nu: global_min })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::*;
    use crate::scenario::{generate_scenario, GenerationParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_params(n: usize, m: usize, g: usize) -> GenerationParams {
        GenerationParams { n_devices: n, n_bs: m, n_subchannels: g, ..Default::default() }
    }

    fn random_powers(rng: &mut ChaCha8Rng, s: &Scenario) -> PowerAllocation {
        PowerAllocation::from_watts((0..s.n_devices()).map(|_| rng.random_range(0.0..=s.max_power_w())).collect())
    }

    fn random_assignment(rng: &mut ChaCha8Rng, s: &Scenario) -> Assignment {
        Assignment::from_strategies(
            (0..s.n_devices())
                .map(|_| {
                    if rng.random_bool(0.1) {
                        Strategy::Local
                    } else {
                        Strategy::offload(rng.random_range(0..s.n_bs()), rng.random_range(0..s.n_subchannels()))
                    }
                })
                .collect(),
        )
    }

    #[test]
    fn lone_device_scores_zero() {
        let s = scenario_with(vec![device(0, 1e6, 1.0)], &[1e9, 1e9], 2, unit_noise_radio(), |_, _, _| 1.0);
        let a = Assignment::from_strategies(vec![Strategy::offload(1, 1)]);
        assert_eq!(interference(0, &a, &PowerAllocation::uniform(1, 1.0), &s, 1.0), 0.0);
    }

    #[test]
    fn strict_weaker_set_only() {
        let devs = vec![device(0, 2e6, 1.0), device(1, 3e6, 1.0)];
        let s = scenario_with(devs, &[1e9], 1, unit_noise_radio(), |n, _, _| if n == 0 { 4.0 } else { 1.0 });
        let a = Assignment::from_strategies(vec![Strategy::offload(0, 0); 2]);
        let p = PowerAllocation::from_watts(vec![0.5, 0.25]);
        // strong device 0 sees 0.25 W * 1.0 = 250 mW plus 3 Mbit of load
        let strong = nu_parts(0, a.get(0), &a, &p, &s);
        assert!((strong.interference - 250.0).abs() < 1e-12);
        assert!((strong.load - 3.0).abs() < 1e-12);
        let weak = nu_parts(1, a.get(1), &a, &p, &s);
        assert_eq!(weak.interference, 0.0);
        assert!((weak.load - 2.0).abs() < 1e-12);
    }

    #[test]
    fn three_device_hand_evaluation() {
        // Devices 0,1 share (0,0); device 2 sits on (0,1). Gains 2, 1, 5.
        let devs = vec![device(0, 1e6, 1.0), device(1, 2e6, 1.0), device(2, 4e6, 1.0)];
        let gains = [2.0, 1.0, 5.0];
        let s = scenario_with(devs, &[1e9], 2, unit_noise_radio(), move |n, _, _| gains[n]);
        let a = Assignment::from_strategies(vec![Strategy::offload(0, 0), Strategy::offload(0, 0), Strategy::offload(0, 1)]);
        let p = PowerAllocation::from_watts(vec![0.1, 0.2, 0.3]);
        // nu_0 = 1e3 * 0.2 * 1 + (2 + 4)
        assert!((interference(0, &a, &p, &s, 1.0) - 206.0).abs() < 1e-9);
        // nu_1 = 0 + (1 + 4)
        assert!((interference(1, &a, &p, &s, 1.0) - 5.0).abs() < 1e-12);
        // nu_2 = 0 + (1 + 2), halved weight
        assert!((interference(2, &a, &p, &s, 0.5) - 1.5).abs() < 1e-12);
        assert_eq!(interference(2, &a.clone(), &p, &s, 0.0), 0.0);
    }

    #[test]
    fn potential_difference_matches_score_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for seed in 0..300 {
            let n = rng.random_range(2..=10);
            let s = generate_scenario(&small_params(n, 2, 3), seed).unwrap();
            let p = random_powers(&mut rng, &s);
            let a = random_assignment(&mut rng, &s);
            let dev = rng.random_range(0..n);
            if a.get(dev).is_local() {
                continue;
            }
            let to = Strategy::offload(rng.random_range(0..2), rng.random_range(0..3));
            let r = DeviationReport::evaluate(dev, to, &a, &p, &s, 1.0);
            assert!((r.delta_phi - r.delta_nu).abs() <= 1e-9 * (1.0 + r.delta_nu.abs()), "{r:?}");
        }
    }

    #[test]
    fn tiny_subchannel_gain_survives_a_large_load() {
        // Sixty 10 Mbit tasks on one BS put the load part near 2e4 while the
        // move only sheds 1e-12 mW of interference.
        let devs = (0..60).map(|i| device(i, 1e7, 1.0)).collect();
        let s = scenario_with(devs, &[1e9], 3, unit_noise_radio(), |n, _, _| if n == 0 { 1e-10 } else { 1e-12 });
        let mut a = Assignment::from_strategies(vec![Strategy::offload(0, 2); 60]);
        a.set(0, Strategy::offload(0, 0));
        a.set(1, Strategy::offload(0, 0));
        let p = PowerAllocation::uniform(60, 1e-3);
        let r = DeviationReport::evaluate(0, Strategy::offload(0, 1), &a, &p, &s, 1.0);
        assert!((r.delta_nu + 1e-12).abs() < 1e-24, "{r:?}");
        assert!((r.delta_phi - r.delta_nu).abs() < 1e-24, "{r:?}");
    }

    #[test]
    fn constant_shift_cancels() {
        // Scaling the load weight by zero leaves only interference; adding
        // far-away devices on another BS changes the potential level but not
        // the difference between two candidates on BS 0.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = generate_scenario(&small_params(6, 2, 2), 1).unwrap();
        let p = random_powers(&mut rng, &s);
        let mut a = Assignment::from_strategies(vec![Strategy::offload(0, 0); 6]);
        a.set(5, Strategy::offload(1, 0));
        let d1 = potential(0, Strategy::offload(0, 1), &a, &p, &s, 1.0) - potential(0, Strategy::offload(0, 0), &a, &p, &s, 1.0);
        a.set(5, Strategy::offload(1, 1));
        let d2 = potential(0, Strategy::offload(0, 1), &a, &p, &s, 1.0) - potential(0, Strategy::offload(0, 0), &a, &p, &s, 1.0);
        assert!((d1 - d2).abs() < 1e-9);
    }

    #[test]
    fn all_local_feasible_converges_immediately() {
        let devs = (0..4).map(|i| device(i, 1e6, 1e7)).collect();
        let s = scenario_with(devs, &[1e9, 1e9], 2, unit_noise_radio(), |_, _, _| 1.0);
        let (a, trace) = epg_jdm(&s, &PowerAllocation::uniform(4, 0.5), &GameConfig::default()).unwrap();
        assert!(a.strategies().iter().all(Strategy::is_local));
        assert_eq!(trace.outer_rounds, 1);
        assert!(trace.moves.is_empty());
        let check = is_nash_equilibrium(&a, &PowerAllocation::uniform(4, 0.5), &s, &GameConfig::default());
        assert!(check.is_equilibrium);
    }

    #[test]
    fn single_device_picks_the_best_candidate() {
        // Other devices are local-feasible but the scored load only counts
        // offloaders, so device 0 sees empty BSs; the winner must match the
        // exhaustive argmin score.
        let s = generate_scenario(&small_params(1, 2, 3), 4).unwrap();
        let p = PowerAllocation::uniform(1, s.max_power_w());
        let (a, _) = epg_jdm(&s, &p, &GameConfig::default()).unwrap();
        let oracle = brute_force_min_potential(&s, &p, &GameConfig::default(), 1000).unwrap();
        assert_eq!(interference(0, &a, &p, &s, 1.0), oracle.total_nu);
    }

    #[test]
    fn outputs_are_equilibria_and_counters_match() {
        let cfg = GameConfig::default();
        for seed in 0..60 {
            let s = generate_scenario(&small_params(4 + (seed as usize % 9), 2, 2), seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
            let p = random_powers(&mut rng, &s);
            let (a, trace) = epg_jdm(&s, &p, &cfg).unwrap();
            assert!(is_nash_equilibrium(&a, &p, &s, &cfg).is_equilibrium, "seed {seed}");
            let players = strategic_devices(&s).len();
            let expected: usize = trace
                .sweeps
                .iter()
                .map(|r| match r.kind {
                    SweepKind::Bs => players * s.n_bs(),
                    SweepKind::Subchannel => players * s.n_subchannels(),
                    SweepKind::Joint => 0,
                })
                .sum();
            assert_eq!(trace.candidate_evaluations, expected);
            let joint = trace.sweeps.iter().filter(|r| r.kind == SweepKind::Joint).count();
            assert_eq!(trace.verification_evaluations, joint * players * s.n_bs() * s.n_subchannels());
            for m in &trace.moves {
                assert!(m.delta_phi < 0.0);
                assert!(m.nu_after < m.nu_before);
            }
            for w in trace.moves.windows(2) {
                assert!(w[1].potential < w[0].potential);
            }
        }
    }

    #[test]
    fn one_sweep_costs_m_plus_g_per_player() {
        let s = generate_scenario(&small_params(30, 4, 5), 9).unwrap();
        let p = PowerAllocation::uniform(30, s.max_power_w());
        let players = strategic_devices(&s).len();
        let init = initial_assignment(&s, &mut s.init_rng());
        let cfg = GameConfig { max_outer: 1, ..Default::default() };
        let trace = match epg_jdm_from(&s, &p, &init, &cfg) {
            Ok((_, t)) => t,
            Err(GameError::NotConverged { trace, .. }) => *trace,
            Err(e) => panic!("{e}"),
        };
        assert_eq!(trace.candidate_evaluations, players * (4 + 5));
    }

    #[test]
    fn perturbed_equilibrium_is_detected() {
        let cfg = GameConfig::default();
        let s = generate_scenario(&small_params(8, 2, 2), 21).unwrap();
        let p = PowerAllocation::uniform(8, s.max_power_w());
        let (mut a, _) = epg_jdm(&s, &p, &cfg).unwrap();
        // Stack every strategic device on BS 0: the load term makes at least
        // one of them want to leave.
        for n in strategic_devices(&s) {
            a.set(n, Strategy::offload(0, 0));
        }
        let check = is_nash_equilibrium(&a, &p, &s, &cfg);
        assert!(!check.is_equilibrium);
        assert!(check.deviations.iter().all(|d| d.delta_nu < 0.0));
    }

    #[test]
    fn oracle_bounds_dynamics() {
        let cfg = GameConfig::default();
        for seed in 0..40 {
            let s = generate_scenario(&small_params(4, 2, 2), 500 + seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_powers(&mut rng, &s);
            let (a, _) = epg_jdm(&s, &p, &cfg).unwrap();
            let oracle = brute_force_min_potential(&s, &p, &cfg, 1 << 16).unwrap();
            assert!(is_nash_equilibrium(&oracle.assignment, &p, &s, &cfg).is_equilibrium);
            assert!(total_interference(&a, &p, &s, 1.0) >= oracle.total_nu - 1e-9);
            assert!(oracle.total_nu >= oracle.global_min_total_nu);
        }
    }

    #[test]
    fn oversized_search_is_refused() {
        let s = generate_scenario(&small_params(20, 4, 5), 0).unwrap();
        let p = PowerAllocation::uniform(20, 0.1);
        assert!(matches!(brute_force_min_potential(&s, &p, &GameConfig::default(), 1_000_000), Err(GameError::SearchTooLarge { .. })));
    }

    #[test]
    fn trace_csv_header() {
        let s = generate_scenario(&small_params(10, 2, 2), 2).unwrap();
        let p = PowerAllocation::uniform(10, s.max_power_w());
        let (_, trace) = epg_jdm(&s, &p, &GameConfig::default()).unwrap();
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("sweep,device,old_strategy,new_strategy,nu_before,nu_after,potential\n"));
        assert_eq!(text.lines().count(), trace.moves.len() + 1);
    }

    #[test]
    fn rejects_bad_config() {
        let s = generate_scenario(&small_params(2, 1, 1), 0).unwrap();
        let p = PowerAllocation::uniform(2, 0.1);
        let cfg = GameConfig { inner_rounds: 0, ..Default::default() };
        assert!(matches!(epg_jdm(&s, &p, &cfg), Err(GameError::Config(_))));
    }
}
