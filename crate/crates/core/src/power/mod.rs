//! Power allocation for a fixed assignment by majorization-minimization.
//!
//! Groups `(m, g)` do not interact, so every group is an independent block.
//! Inside a group the members are indexed in SIC order (strongest first) and
//! the variables are normalized powers `x = p / p_max`. With
//! `rho_i = p_max h_i / sigma^2`, `T_j = sum_{i >= j} rho_i x_i` and
//! `S_j = sum_{i > j} rho_i x_i`, member `j` gets
//! `R_j / B = log2(1 + T_j) - log2(1 + S_j)`.
//! The surrogate keeps the first log and replaces the second by its tangent
//! at the anchor, giving a concave lower bound that touches at the anchor.

pub mod barrier;

use std::f64::consts::LN_2;
use std::io::Write;

use serde::{Deserialize, Serialize};

use barrier::{find_feasible, maximize, ConcaveProgram, PhaseOneOutcome};
pub use barrier::{BarrierOptions, SolverReport, SolverStatus};

use crate::error::{ModelError, PowerError};
use crate::model::{computing_delay, sic_order, Assignment, PowerAllocation, Strategy};
use crate::scenario::Scenario;

/// One NOMA group with members in SIC decoding order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Group {
    pub bs: usize,
    pub subchannel: usize,
    pub members: Vec<usize>,
}

/// Non-empty groups ordered by `(bs, subchannel)`.
pub fn groups(assignment: &Assignment, scenario: &Scenario) -> Vec<Group> {
    let n_ch = scenario.n_subchannels();
    let mut buckets = vec![Vec::new(); scenario.n_bs() * n_ch];
    for n in 0..assignment.len() {
        if let Strategy::Offload { bs, subchannel } = assignment.get(n) {
            buckets[bs * n_ch + subchannel].push(n);
        }
    }
    buckets
        .into_iter()
        .enumerate()
        .filter(|(_, m)| !m.is_empty())
        .map(|(k, members)| {
            let (bs, subchannel) = (k / n_ch, k % n_ch);
            Group { bs, subchannel, members: sic_order(&members, bs, subchannel, scenario) }
        })
        .collect()
}

/// Rate of device `n` written as a difference of two logs:
/// `B [log2(sigma^2 + sum_{i decoded at or after n} p_i h_i) - log2(sigma^2 + sum_{i decoded after n} p_i h_i)]`,
/// evaluated with both sums normalized by `sigma^2`.
pub fn rate_difference_of_logs(
    n: usize,
    assignment: &Assignment,
    powers: &PowerAllocation,
    scenario: &Scenario,
) -> Result<f64, ModelError> {
    let Strategy::Offload { bs, subchannel } = assignment.get(n) else {
        return Err(ModelError::NotOffloading { device: n, what: "rate" });
    };
    let order = sic_order(&assignment.members(bs, subchannel), bs, subchannel, scenario);
    let pos = order.iter().position(|&k| k == n).expect("device is in its own group");
    let rx = |k: usize| powers.get(k) * scenario.gain(k, bs, subchannel) / scenario.noise_power_w;
    let after: f64 = order[pos + 1..].iter().map(|&k| rx(k)).sum();
    let with_self = after + rx(n);
    Ok(scenario.bandwidth_hz() * (with_self.ln_1p() - after.ln_1p()) / LN_2)
}

/// Sum over offloading devices of the difference-of-logs rate, bits/s.
pub fn true_sum_rate(assignment: &Assignment, powers: &PowerAllocation, scenario: &Scenario) -> f64 {
    assignment.offloaders().into_iter().map(|n| rate_difference_of_logs(n, assignment, powers, scenario).expect("offloader")).sum()
}

/// Sum of surrogate rates at `p` linearized around `p_prev`, bits/s.
pub fn surrogate_sum_rate(assignment: &Assignment, p: &PowerAllocation, p_prev: &PowerAllocation, scenario: &Scenario) -> f64 {
    let p_max = scenario.max_power_w();
    groups(assignment, scenario)
        .iter()
        .map(|g| {
            let block = GroupSurrogate::new(g, scenario, p_prev, &[]);
            let x: Vec<f64> = g.members.iter().map(|&n| p.get(n) / p_max).collect();
            block.objective(&x, None)
        })
        .sum::<f64>()
        * scenario.bandwidth_hz()
}

/// Rate floor and energy budget of one offloading device.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceConstraints {
    /// `W_n / (D_n - T_comp)`, bits/s; `None` once dropped.
    pub deadline_rate_bps: Option<f64>,
    /// Energy budget, J; `None` once dropped.
    pub energy_budget_j: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintFloors {
    /// `None` for local devices.
    pub devices: Vec<Option<DeviceConstraints>>,
    /// Offloaders whose computing delay alone already reaches the deadline.
    pub deadline_infeasible: Vec<usize>,
}

pub fn constraint_floors(assignment: &Assignment, scenario: &Scenario) -> ConstraintFloors {
    let mut deadline_infeasible = Vec::new();
    let devices = (0..assignment.len())
        .map(|n| {
            if assignment.get(n).is_local() {
                return None;
            }
            let d = &scenario.devices[n];
            let t_comp = computing_delay(n, assignment, scenario).expect("offloader");
            let deadline_rate_bps = if t_comp < d.deadline_s {
                Some(d.task_bits / (d.deadline_s - t_comp))
            } else {
                deadline_infeasible.push(n);
                None
            };
            Some(DeviceConstraints { deadline_rate_bps, energy_budget_j: Some(d.energy_budget_j) })
        })
        .collect();
    ConstraintFloors { devices, deadline_infeasible }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Floor {
    /// `R~_j >= r`, r in bits/s/Hz.
    Rate(f64),
    /// `R~_j >= e x_j`, e in bits/s/Hz per unit normalized power.
    Energy(f64),
}

/// The concave surrogate of one group around an anchor.
#[derive(Debug, Clone)]
struct GroupSurrogate {
    members: Vec<usize>,
    rho: Vec<f64>,
    /// `S_j` at the anchor.
    s0: Vec<f64>,
    x0: Vec<f64>,
    floors: Vec<(usize, Floor)>,
}

impl GroupSurrogate {
    fn new(group: &Group, scenario: &Scenario, anchor: &PowerAllocation, constraints: &[Option<DeviceConstraints>]) -> Self {
        let p_max = scenario.max_power_w();
        let b = scenario.bandwidth_hz();
        let members = group.members.clone();
        let rho: Vec<f64> =
            members.iter().map(|&n| p_max * scenario.gain(n, group.bs, group.subchannel) / scenario.noise_power_w).collect();
        let x0: Vec<f64> = members.iter().map(|&n| (anchor.get(n) / p_max).clamp(0.0, 1.0)).collect();
        let k = members.len();
        let mut s0 = vec![0.0; k];
        for j in (0..k.saturating_sub(1)).rev() {
            s0[j] = s0[j + 1] + rho[j + 1] * x0[j + 1];
        }
        let mut floors = Vec::new();
        for (j, &n) in members.iter().enumerate() {
            let Some(Some(c)) = constraints.get(n) else { continue };
            if let Some(r) = c.deadline_rate_bps {
                floors.push((j, Floor::Rate(r / b)));
            }
            if let Some(e) = c.energy_budget_j {
                floors.push((j, Floor::Energy(p_max * scenario.devices[n].task_bits / (e * b))));
            }
        }
        Self { members, rho, s0, x0, floors }
    }

    /// `T_j` for all members.
    fn t(&self, x: &[f64]) -> Vec<f64> {
        let k = x.len();
        let mut t = vec![0.0; k];
        let mut acc = 0.0;
        for j in (0..k).rev() {
            acc += self.rho[j] * x[j];
            t[j] = acc;
        }
        t
    }

    fn member_rate(&self, j: usize, t: &[f64]) -> f64 {
        let s = if j + 1 < t.len() { t[j + 1] } else { 0.0 };
        (t[j].ln_1p() - self.s0[j].ln_1p() - (s - self.s0[j]) / (1.0 + self.s0[j])) / LN_2
    }

    fn member_rate_grad(&self, j: usize, t: &[f64], g: &mut [f64]) {
        for (i, gi) in g.iter_mut().enumerate() {
            *gi = if i < j {
                0.0
            } else if i == j {
                self.rho[i] / ((1.0 + t[j]) * LN_2)
            } else {
                self.rho[i] * (1.0 / (1.0 + t[j]) - 1.0 / (1.0 + self.s0[j])) / LN_2
            };
        }
    }

    /// Add `weight` times the Hessian of member `j`'s surrogate rate; only
    /// the exact log of `T_j` is curved.
    fn add_member_rate_hessian(&self, j: usize, t: &[f64], weight: f64, h: &mut [f64], stride: usize) {
        let c = weight / ((1.0 + t[j]).powi(2) * LN_2);
        for a in j..t.len() {
            for b in j..t.len() {
                h[a * stride + b] -= c * self.rho[a] * self.rho[b];
            }
        }
    }

    /// True normalized rates at `x`.
    fn true_rates(&self, x: &[f64]) -> Vec<f64> {
        let t = self.t(x);
        (0..x.len())
            .map(|j| {
                let s = if j + 1 < t.len() { t[j + 1] } else { 0.0 };
                (t[j].ln_1p() - s.ln_1p()) / LN_2
            })
            .collect()
    }
}

impl ConcaveProgram for GroupSurrogate {
    fn dim(&self) -> usize {
        self.members.len()
    }

    fn lower(&self, _: usize) -> f64 {
        0.0
    }

    fn upper(&self, _: usize) -> f64 {
        1.0
    }

    fn objective(&self, x: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let t = self.t(x);
        if let Some(g) = grad {
            let mut direct = 0.0;
            let mut tangent = 0.0;
            for i in 0..x.len() {
                direct += 1.0 / (1.0 + t[i]);
                if i > 0 {
                    tangent += 1.0 / (1.0 + self.s0[i - 1]);
                }
                g[i] = self.rho[i] * (direct - tangent) / LN_2;
            }
        }
        (0..x.len()).map(|j| self.member_rate(j, &t)).sum()
    }

    fn n_constraints(&self) -> usize {
        self.floors.len()
    }

    fn constraint(&self, k: usize, x: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let (j, floor) = self.floors[k];
        let t = self.t(x);
        let rate = self.member_rate(j, &t);
        if let Some(g) = grad {
            self.member_rate_grad(j, &t, g);
            if let Floor::Energy(e) = floor {
                g[j] -= e;
            }
        }
        match floor {
            Floor::Rate(r) => rate - r,
            Floor::Energy(e) => rate - e * x[j],
        }
    }

    fn add_hessian(&self, which: Option<usize>, x: &[f64], weight: f64, h: &mut [f64]) {
        let t = self.t(x);
        match which {
            None => (0..x.len()).for_each(|j| self.add_member_rate_hessian(j, &t, weight, h, x.len())),
            Some(k) => self.add_member_rate_hessian(self.floors[k].0, &t, weight, h, x.len()),
        }
    }
}

/// Largest common fraction `t` of a group's rate floors that the surrogate
/// can meet with energy budgets still enforced: maximize `t` subject to
/// `R~_j >= t r_j` and `R~_j >= e_j x_j`.
struct FloorScaling<'a> {
    block: &'a GroupSurrogate,
}

impl ConcaveProgram for FloorScaling<'_> {
    fn dim(&self) -> usize {
        self.block.dim() + 1
    }

    fn lower(&self, _: usize) -> f64 {
        0.0
    }

    fn upper(&self, i: usize) -> f64 {
        if i == self.block.dim() {
            // Past 1 the original floors already hold.
            2.0
        } else {
            1.0
        }
    }

    fn objective(&self, z: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let k = self.block.dim();
        if let Some(g) = grad {
            g.iter_mut().for_each(|v| *v = 0.0);
            g[k] = 1.0;
        }
        z[k]
    }

    fn n_constraints(&self) -> usize {
        self.block.n_constraints()
    }

    fn constraint(&self, c: usize, z: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let k = self.block.dim();
        let (j, floor) = self.block.floors[c];
        let t = self.block.t(&z[..k]);
        let rate = self.block.member_rate(j, &t);
        if let Some(g) = grad {
            self.block.member_rate_grad(j, &t, &mut g[..k]);
            g[k] = 0.0;
            match floor {
                Floor::Rate(r) => g[k] = -r,
                Floor::Energy(e) => g[j] -= e,
            }
        }
        match floor {
            Floor::Rate(r) => rate - z[k] * r,
            Floor::Energy(e) => rate - e * z[j],
        }
    }

    fn add_hessian(&self, which: Option<usize>, z: &[f64], weight: f64, h: &mut [f64]) {
        let Some(c) = which else { return };
        let k = self.block.dim();
        let t = self.block.t(&z[..k]);
        self.block.add_member_rate_hessian(self.block.floors[c].0, &t, weight, h, k + 1);
    }
}

fn attainable_floor_fraction(block: &GroupSurrogate, opts: &BarrierOptions) -> f64 {
    let x0 = &block.x0;
    let t = block.t(x0);
    let mut start = f64::INFINITY;
    for &(j, floor) in &block.floors {
        let rate = block.member_rate(j, &t);
        match floor {
            Floor::Rate(r) => start = start.min(rate / r),
            Floor::Energy(e) if rate - e * x0[j] <= 0.0 => return 0.0,
            Floor::Energy(_) => {}
        }
    }
    if !(start > 0.0) || !start.is_finite() {
        return 0.0;
    }
    let program = FloorScaling { block };
    let mut z = x0.clone();
    z.push(0.5 * start.min(1.0));
    let (z, _) = maximize(&program, &z, opts);
    z[block.dim()]
}

/// The convex subproblem of one MM iteration.
#[derive(Debug, Clone)]
pub struct SurrogateProblem {
    n_devices: usize,
    p_max: f64,
    bandwidth_hz: f64,
    blocks: Vec<GroupSurrogate>,
}

impl SurrogateProblem {
    pub fn new(scenario: &Scenario, assignment: &Assignment, anchor: &PowerAllocation, floors: &ConstraintFloors) -> Self {
        let blocks = groups(assignment, scenario).iter().map(|g| GroupSurrogate::new(g, scenario, anchor, &floors.devices)).collect();
        Self { n_devices: assignment.len(), p_max: scenario.max_power_w(), bandwidth_hz: scenario.bandwidth_hz(), blocks }
    }

    fn to_x(&self, block: &GroupSurrogate, p: &PowerAllocation) -> Vec<f64> {
        block.members.iter().map(|&n| p.get(n) / self.p_max).collect()
    }

    /// Surrogate sum rate at `p`, bits/s.
    pub fn value(&self, p: &PowerAllocation) -> f64 {
        self.blocks.iter().map(|b| b.objective(&self.to_x(b, p), None)).sum::<f64>() * self.bandwidth_hz
    }

    /// Gradient of the surrogate sum rate with respect to watts.
    pub fn gradient(&self, p: &PowerAllocation) -> Vec<f64> {
        let mut out = vec![0.0; self.n_devices];
        for b in &self.blocks {
            let x = self.to_x(b, p);
            let mut g = vec![0.0; x.len()];
            b.objective(&x, Some(&mut g));
            for (&n, gi) in b.members.iter().zip(g) {
                out[n] = gi * self.bandwidth_hz / self.p_max;
            }
        }
        out
    }

    /// Largest violation of the surrogate constraints at `p`, bits/s/Hz.
    pub fn surrogate_violation(&self, p: &PowerAllocation) -> f64 {
        let mut worst: f64 = 0.0;
        for b in &self.blocks {
            let x = self.to_x(b, p);
            for k in 0..b.n_constraints() {
                worst = worst.max(-b.constraint(k, &x, None));
            }
        }
        worst
    }

    /// Largest relative violation of the true (not surrogate) constraints at `p`.
    pub fn true_violation(&self, p: &PowerAllocation) -> f64 {
        let mut worst: f64 = 0.0;
        for b in &self.blocks {
            let x = self.to_x(b, p);
            let rates = b.true_rates(&x);
            for &(j, floor) in &b.floors {
                let v = match floor {
                    Floor::Rate(r) => (r - rates[j]) / r,
                    Floor::Energy(e) if x[j] > 0.0 => (e * x[j] - rates[j]) / (e * x[j]),
                    Floor::Energy(_) => 0.0,
                };
                worst = worst.max(v);
            }
        }
        worst
    }
}

fn worse(a: SolverStatus, b: SolverStatus) -> SolverStatus {
    use SolverStatus::*;
    match (a, b) {
        (Infeasible, _) | (_, Infeasible) => Infeasible,
        (MaxIter, _) | (_, MaxIter) => MaxIter,
        _ => Converged,
    }
}

/// Maximize the surrogate. When the anchor is strictly feasible the result
/// never scores below it. Errors list devices whose floors cannot be met.
pub fn solve_surrogate(problem: &SurrogateProblem, opts: &BarrierOptions) -> Result<(PowerAllocation, SolverReport), PowerError> {
    let mut p = PowerAllocation::uniform(problem.n_devices, 0.0);
    let mut report = SolverReport { iterations: 0, objective: 0.0, max_violation: 0.0, kkt_residual: 0.0, status: SolverStatus::Converged };
    let mut infeasible = Vec::new();
    for block in &problem.blocks {
        let anchor_feasible = (0..block.n_constraints()).all(|k| block.constraint(k, &block.x0, None) > 0.0);
        let start = if anchor_feasible {
            block.x0.clone()
        } else {
            match find_feasible(block, &block.x0, opts) {
                PhaseOneOutcome::Feasible(x) => x,
                PhaseOneOutcome::Infeasible { binding, .. } => {
                    infeasible.extend(binding.iter().map(|&k| block.members[block.floors[k].0]));
                    continue;
                }
            }
        };
        let (mut x, r) = maximize(block, &start, opts);
        let mut objective = r.objective;
        if anchor_feasible {
            let anchor_value = block.objective(&block.x0, None);
            if objective < anchor_value {
                x = block.x0.clone();
                objective = anchor_value;
            }
        }
        for (&n, xi) in block.members.iter().zip(&x) {
            p.watts[n] = xi * problem.p_max;
        }
        report.iterations += r.iterations;
        report.objective += objective * problem.bandwidth_hz;
        report.max_violation = report.max_violation.max(r.max_violation);
        report.kkt_residual = report.kkt_residual.max(r.kkt_residual);
        report.status = worse(report.status, r.status);
    }
    if !infeasible.is_empty() {
        infeasible.sort_unstable();
        infeasible.dedup();
        return Err(PowerError::Infeasible { iteration: 0, devices: infeasible });
    }
    Ok((p, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MmConfig {
    /// Stop tolerance as a fraction of the subchannel bandwidth (bits/s).
    pub eps_rel_bandwidth: f64,
    pub t_max: usize,
    /// Relative headroom kept below each energy budget by the initial powers.
    pub energy_margin: f64,
    /// Share of the largest attainable fraction used when a group's rate
    /// floors must be scaled down.
    pub floor_backoff: f64,
    pub barrier: BarrierOptions,
}

impl Default for MmConfig {
    fn default() -> Self {
        Self { eps_rel_bandwidth: 1e-4, t_max: 50, energy_margin: 1e-3, floor_backoff: 0.99, barrier: BarrierOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MmIteration {
    pub iteration: usize,
    /// bits/s
    pub surrogate_obj: f64,
    /// bits/s
    pub true_obj: f64,
    pub max_violation: f64,
    pub step_count: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MmTrace {
    pub iterations: Vec<MmIteration>,
    pub converged: bool,
}

impl MmTrace {
    /// CSV with header `iteration,surrogate_obj,true_obj,max_violation,step_count`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        if self.iterations.is_empty() {
            w.write_record(["iteration", "surrogate_obj", "true_obj", "max_violation", "step_count"])?;
        }
        for it in &self.iterations {
            w.serialize(it)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn check_inputs(scenario: &Scenario, assignment: &Assignment, powers: &PowerAllocation) -> Result<(), PowerError> {
    if assignment.len() != scenario.n_devices() || powers.watts.len() != scenario.n_devices() {
        return Err(PowerError::Input("assignment and power vector must cover every device".into()));
    }
    let p_max = scenario.max_power_w();
    if powers.watts.iter().any(|p| !(0.0..=p_max).contains(p)) {
        return Err(PowerError::Input("initial powers must lie in [0, p_max]".into()));
    }
    Ok(())
}

/// Iterate surrogate solves until the summed surrogate moves by at most
/// `eps` or `t_max` iterations pass.
pub fn mm_power_allocation(
    scenario: &Scenario,
    assignment: &Assignment,
    p_init: &PowerAllocation,
    floors: &ConstraintFloors,
    config: &MmConfig,
) -> Result<(PowerAllocation, MmTrace), PowerError> {
    check_inputs(scenario, assignment, p_init)?;
    let eps = config.eps_rel_bandwidth * scenario.bandwidth_hz();
    let mut anchor = p_init.clone();
    for (n, s) in assignment.strategies().iter().enumerate() {
        if s.is_local() {
            anchor.watts[n] = 0.0;
        }
    }
    let mut trace = MmTrace::default();
    let first = SurrogateProblem::new(scenario, assignment, &anchor, floors);
    let mut previous = (first.true_violation(&anchor) <= 0.0).then(|| true_sum_rate(assignment, &anchor, scenario));

    for t in 1..=config.t_max {
        let problem = SurrogateProblem::new(scenario, assignment, &anchor, floors);
        let (p, report) = solve_surrogate(&problem, &config.barrier).map_err(|e| match e {
            PowerError::Infeasible { devices, .. } => PowerError::Infeasible { iteration: t, devices },
            other => other,
        })?;
        let surrogate = problem.value(&p);
        trace.iterations.push(MmIteration {
            iteration: t,
            surrogate_obj: surrogate,
            true_obj: true_sum_rate(assignment, &p, scenario),
            max_violation: problem.true_violation(&p).max(0.0),
            step_count: report.iterations,
        });
        anchor = p;
        if previous.is_some_and(|prev| (surrogate - prev).abs() <= eps) {
            trace.converged = true;
            break;
        }
        previous = Some(surrogate);
    }
    log::trace!("mm: {} iterations, converged={}", trace.iterations.len(), trace.converged);
    Ok((anchor, trace))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PInit {
    pub powers: PowerAllocation,
    /// Devices that exceed their energy budget at every power even after
    /// weaker co-group powers were reduced; they keep `p_max`.
    pub energy_infeasible: Vec<usize>,
}

fn energy_at(p: f64, gain: f64, interference: f64, task_bits: f64, scenario: &Scenario) -> f64 {
    let sinr = p * gain / (interference + scenario.noise_power_w);
    p * task_bits * LN_2 / (scenario.bandwidth_hz() * sinr.ln_1p())
}

/// Initial powers: `p_max`, lowered by bisection where the energy budget
/// (less `margin`) fails. Members are processed weakest first, since a
/// device's rate depends only on the devices decoded after it.
pub fn p_init(scenario: &Scenario, assignment: &Assignment, margin: f64) -> PInit {
    let p_max = scenario.max_power_w();
    let mut p = PowerAllocation::uniform(assignment.len(), 0.0);
    let mut flagged = Vec::new();
    for group in groups(assignment, scenario) {
        let (bs, ch) = (group.bs, group.subchannel);
        let gain = |n: usize| scenario.gain(n, bs, ch);
        for (pos, &n) in group.members.iter().enumerate().rev() {
            let weaker = &group.members[pos + 1..];
            let dev = &scenario.devices[n];
            let target = dev.energy_budget_j * (1.0 - margin);
            let interference = |p: &PowerAllocation| weaker.iter().map(|&k| p.get(k) * gain(k)).sum::<f64>();
            let floor_at_zero = |i: f64| dev.task_bits * LN_2 * (i + scenario.noise_power_w) / (scenario.bandwidth_hz() * gain(n));

            if gain(n) <= 0.0 {
                flagged.push(n);
                p.watts[n] = p_max;
                continue;
            }
            let mut i_now = interference(&p);
            if energy_at(p_max, gain(n), i_now, dev.task_bits, scenario) <= target {
                p.watts[n] = p_max;
                continue;
            }
            if floor_at_zero(i_now) >= target {
                // Try to make room by scaling the weaker members down.
                let room = target * scenario.bandwidth_hz() * gain(n) / (dev.task_bits * LN_2) - scenario.noise_power_w;
                let mut scaled = false;
                if room > 0.0 && i_now > 0.0 {
                    let mut trial = p.clone();
                    let c = 0.5 * room / i_now;
                    for &k in weaker {
                        trial.watts[k] *= c;
                    }
                    let still_ok = weaker.iter().enumerate().all(|(wi, &k)| {
                        let i_k: f64 = weaker[wi + 1..].iter().map(|&q| trial.get(q) * gain(q)).sum();
                        energy_at(trial.get(k), gain(k), i_k, scenario.devices[k].task_bits, scenario)
                            <= scenario.devices[k].energy_budget_j * (1.0 - margin)
                    });
                    if still_ok {
                        p = trial;
                        i_now = interference(&p);
                        scaled = true;
                    }
                }
                if !scaled {
                    flagged.push(n);
                    p.watts[n] = p_max;
                    continue;
                }
            }
            let (mut lo, mut hi) = (0.0, p_max);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if energy_at(mid, gain(n), i_now, dev.task_bits, scenario) <= target {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            p.watts[n] = lo;
        }
    }
    flagged.sort_unstable();
    PInit { powers: p, energy_infeasible: flagged }
}

/// Result of [`allocate_power`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerOutcome {
    pub powers: PowerAllocation,
    pub trace: MmTrace,
    /// Devices whose rate floor was scaled down, with the fraction kept.
    pub relaxed_deadline: Vec<(usize, f64)>,
    /// Devices whose rate floor was dropped.
    pub dropped_deadline: Vec<usize>,
    /// Devices whose energy budget was dropped as unreachable.
    pub dropped_energy: Vec<usize>,
}

/// Full power step for a fixed assignment.
///
/// Rate floors that the group cannot meet jointly are scaled by the largest
/// common attainable fraction (times `floor_backoff`) rather than removed,
/// so no member is driven to zero power by the sum-rate objective.
pub fn allocate_power(scenario: &Scenario, assignment: &Assignment, config: &MmConfig) -> Result<PowerOutcome, PowerError> {
    let mut floors = constraint_floors(assignment, scenario);
    let init = p_init(scenario, assignment, config.energy_margin);
    let mut dropped_deadline = floors.deadline_infeasible.clone();
    let mut dropped_energy = Vec::new();
    let mut relaxed_deadline = Vec::new();
    for &n in &init.energy_infeasible {
        if let Some(Some(c)) = floors.devices.get_mut(n) {
            c.energy_budget_j = None;
            dropped_energy.push(n);
        }
    }
    for group in groups(assignment, scenario) {
        let block = GroupSurrogate::new(&group, scenario, &init.powers, &floors.devices);
        if (0..block.n_constraints()).all(|k| block.constraint(k, &block.x0, None) > 0.0) {
            continue;
        }
        let t = attainable_floor_fraction(&block, &config.barrier);
        if t >= 1.0 {
            continue;
        }
        let keep = config.floor_backoff * t;
        for &n in &group.members {
            if let Some(c) = floors.devices[n].as_mut() {
                if let Some(r) = c.deadline_rate_bps.as_mut() {
                    if keep > 0.0 {
                        *r *= keep;
                        relaxed_deadline.push((n, keep));
                    } else {
                        c.deadline_rate_bps = None;
                        dropped_deadline.push(n);
                    }
                }
            }
        }
    }

    loop {
        match mm_power_allocation(scenario, assignment, &init.powers, &floors, config) {
            Ok((powers, trace)) => {
                dropped_deadline.sort_unstable();
                dropped_energy.sort_unstable();
                relaxed_deadline.retain(|(n, _)| !dropped_deadline.contains(n));
                return Ok(PowerOutcome { powers, trace, relaxed_deadline, dropped_deadline, dropped_energy });
            }
            Err(PowerError::Infeasible { iteration, devices }) => {
                log::debug!("power: floors of {devices:?} unreachable at iteration {iteration}, dropping");
                let with_deadline: Vec<usize> =
                    devices.iter().copied().filter(|&n| floors.devices[n].is_some_and(|c| c.deadline_rate_bps.is_some())).collect();
                if !with_deadline.is_empty() {
                    for n in with_deadline {
                        floors.devices[n].as_mut().unwrap().deadline_rate_bps = None;
                        dropped_deadline.push(n);
                    }
                    continue;
                }
                let with_energy: Vec<usize> =
                    devices.iter().copied().filter(|&n| floors.devices[n].is_some_and(|c| c.energy_budget_j.is_some())).collect();
                if with_energy.is_empty() {
                    return Err(PowerError::Infeasible { iteration, devices });
                }
                for n in with_energy {
                    floors.devices[n].as_mut().unwrap().energy_budget_j = None;
                    dropped_energy.push(n);
                }
            }
            Err(e) => return Err(e),
        }
    }
}
