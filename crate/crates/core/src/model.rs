//! SIC throughput, delay and energy model, plus feasibility checks.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::scenario::{Device, Scenario};

/// Per-device decision: compute locally, or offload to BS `bs` over
/// subchannel `subchannel` (both zero-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Strategy {
    Local,
    Offload { bs: usize, subchannel: usize },
}

impl Strategy {
    pub fn offload(bs: usize, subchannel: usize) -> Self {
        Strategy::Offload { bs, subchannel }
    }

    pub fn bs(&self) -> Option<usize> {
        match self {
            Strategy::Local => None,
            Strategy::Offload { bs, .. } => Some(*bs),
        }
    }

    pub fn is_local(&self) -> bool {
        matches!(self, Strategy::Local)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Local => write!(f, "local"),
            Strategy::Offload { bs, subchannel } => write!(f, "bs{bs}/ch{subchannel}"),
        }
    }
}

/// One strategy per device. The group sets `U_{m,g}` partition the
/// offloading devices by construction.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Assignment {
    strategies: Vec<Strategy>,
}

impl Assignment {
    pub fn all_local(n: usize) -> Self {
        Self { strategies: vec![Strategy::Local; n] }
    }

    pub fn from_strategies(strategies: Vec<Strategy>) -> Self {
        Self { strategies }
    }

    pub fn len(&self) -> usize {
        self.strategies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.strategies.is_empty()
    }

    #[inline]
    pub fn get(&self, device: usize) -> Strategy {
        self.strategies[device]
    }

    pub fn set(&mut self, device: usize, strategy: Strategy) {
        self.strategies[device] = strategy;
    }

    pub fn strategies(&self) -> &[Strategy] {
        &self.strategies
    }

    /// Members of group `(bs, subchannel)` in ascending device id.
    pub fn members(&self, bs: usize, subchannel: usize) -> Vec<usize> {
        let target = Strategy::offload(bs, subchannel);
        (0..self.len()).filter(|&i| self.strategies[i] == target).collect()
    }

    /// Devices offloading to `bs` across all subchannels.
    pub fn attached(&self, bs: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.strategies[i].bs() == Some(bs)).collect()
    }

    pub fn offloaders(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.strategies[i].is_local()).collect()
    }

    /// Derived offloading indicator `a[n][m]`.
    pub fn offload_matrix(&self, n_bs: usize) -> Vec<Vec<u8>> {
        self.strategies
            .iter()
            .map(|s| {
                let mut row = vec![0u8; n_bs];
                if let Some(m) = s.bs() {
                    if m < n_bs {
                        row[m] = 1;
                    }
                }
                row
            })
            .collect()
    }

    /// Derived grouping indicator `b[g][n]`.
    pub fn group_matrix(&self, n_subchannels: usize) -> Vec<Vec<u8>> {
        let mut b = vec![vec![0u8; self.len()]; n_subchannels];
        for (n, s) in self.strategies.iter().enumerate() {
            if let Strategy::Offload { subchannel, .. } = *s {
                if subchannel < n_subchannels {
                    b[subchannel][n] = 1;
                }
            }
        }
        b
    }
}

/// Transmit power per device in watts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerAllocation {
    pub watts: Vec<f64>,
}

impl PowerAllocation {
    pub fn uniform(n: usize, watts: f64) -> Self {
        Self { watts: vec![watts; n] }
    }

    pub fn from_watts(watts: Vec<f64>) -> Self {
        Self { watts }
    }

    #[inline]
    pub fn get(&self, device: usize) -> f64 {
        self.watts[device]
    }

    pub fn total(&self) -> f64 {
        self.watts.iter().sum()
    }
}

/// `true` when device `i` is decoded before device `j` on `(bs, ch)`:
/// strictly larger gain, or equal gain and smaller id.
#[inline]
pub fn decoded_before(scenario: &Scenario, i: usize, j: usize, bs: usize, ch: usize) -> bool {
    let gi = scenario.gain(i, bs, ch);
    let gj = scenario.gain(j, bs, ch);
    gi > gj || (gi == gj && i < j)
}

/// SIC decoding order of `group` on `(bs, ch)`: descending gain, ties by id.
pub fn sic_order(group: &[usize], bs: usize, ch: usize, scenario: &Scenario) -> Vec<usize> {
    let mut order = group.to_vec();
    order.sort_by(|&a, &b| scenario.gain(b, bs, ch).total_cmp(&scenario.gain(a, bs, ch)).then(a.cmp(&b)));
    order
}

fn offload_target(n: usize, assignment: &Assignment, what: &'static str) -> Result<(usize, usize), ModelError> {
    if n >= assignment.len() {
        return Err(ModelError::UnknownDevice(n));
    }
    match assignment.get(n) {
        Strategy::Offload { bs, subchannel } => Ok((bs, subchannel)),
        Strategy::Local => Err(ModelError::NotOffloading { device: n, what }),
    }
}

/// Received power from co-group devices decoded after `n` (watts).
pub fn residual_interference(
    n: usize,
    bs: usize,
    ch: usize,
    assignment: &Assignment,
    powers: &PowerAllocation,
    scenario: &Scenario,
) -> f64 {
    let me = Strategy::offload(bs, ch);
    (0..assignment.len())
        .filter(|&k| k != n && assignment.get(k) == me && decoded_before(scenario, n, k, bs, ch))
        .map(|k| powers.get(k) * scenario.gain(k, bs, ch))
        .sum()
}

/// Uplink SIC throughput in bits/s:
/// `B log2(1 + p_n h_n / (sum_{weaker k} p_k h_k + sigma^2))`.
pub fn throughput(n: usize, assignment: &Assignment, powers: &PowerAllocation, scenario: &Scenario) -> Result<f64, ModelError> {
    let (bs, ch) = offload_target(n, assignment, "throughput")?;
    let interference = residual_interference(n, bs, ch, assignment, powers, scenario);
    let sinr = powers.get(n) * scenario.gain(n, bs, ch) / (interference + scenario.noise_power_w);
    Ok(scenario.bandwidth_hz() * sinr.ln_1p() / std::f64::consts::LN_2)
}

pub fn local_delay(device: &Device) -> f64 {
    device.task_bits / device.local_rate_bps
}

/// `(W_n + sum_{i != n, i at m} W_i) / f_m`: the BS serves its whole offloaded load.
pub fn computing_delay(n: usize, assignment: &Assignment, scenario: &Scenario) -> Result<f64, ModelError> {
    let (bs, _) = offload_target(n, assignment, "computing delay")?;
    let load: f64 = assignment.attached(bs).into_iter().map(|i| scenario.devices[i].task_bits).sum();
    Ok(load / scenario.base_stations[bs].compute_rate_bps)
}

fn transmission_delay(n: usize, assignment: &Assignment, powers: &PowerAllocation, scenario: &Scenario) -> Result<f64, ModelError> {
    let rate = throughput(n, assignment, powers, scenario)?;
    Ok(if rate > 0.0 { scenario.devices[n].task_bits / rate } else { f64::INFINITY })
}

/// End-to-end delay of device `n`; `+inf` for an offloader with zero rate.
pub fn total_delay(n: usize, assignment: &Assignment, powers: &PowerAllocation, scenario: &Scenario) -> f64 {
    match assignment.get(n) {
        Strategy::Local => local_delay(&scenario.devices[n]),
        Strategy::Offload { .. } => {
            let trans = transmission_delay(n, assignment, powers, scenario).expect("offloading device");
            let comp = computing_delay(n, assignment, scenario).expect("offloading device");
            trans + comp
        }
    }
}

/// Uplink transmission energy `p_n W_n / R_n`; zero for local devices.
pub fn transmission_energy(n: usize, assignment: &Assignment, powers: &PowerAllocation, scenario: &Scenario) -> f64 {
    match assignment.get(n) {
        Strategy::Local => 0.0,
        Strategy::Offload { .. } => {
            let p = powers.get(n);
            if p == 0.0 {
                return 0.0;
            }
            p * transmission_delay(n, assignment, powers, scenario).expect("offloading device")
        }
    }
}

pub fn system_total_delay(assignment: &Assignment, powers: &PowerAllocation, scenario: &Scenario) -> f64 {
    (0..assignment.len()).map(|n| total_delay(n, assignment, powers, scenario)).sum()
}

/// A violated constraint of the joint problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Violation {
    /// `0 <= p_n <= p_max`
    PowerBound { device: usize, power_w: f64 },
    /// `T_n <= D_n`
    Deadline { device: usize, delay_s: f64, deadline_s: f64 },
    /// Device attached to more than one BS.
    MultiBs { device: usize },
    /// Device attached to more than one subchannel.
    MultiSubchannel { device: usize },
    /// Device present in two groups.
    GroupOverlap { device: usize },
    /// `E_n <= E_th`
    Energy { device: usize, energy_j: f64, budget_j: f64 },
    /// Assignment references a BS or subchannel that does not exist.
    UnknownTarget { device: usize },
}

impl Violation {
    pub fn device(&self) -> usize {
        match *self {
            Violation::PowerBound { device, .. }
            | Violation::Deadline { device, .. }
            | Violation::MultiBs { device }
            | Violation::MultiSubchannel { device }
            | Violation::GroupOverlap { device }
            | Violation::Energy { device, .. }
            | Violation::UnknownTarget { device } => device,
        }
    }

    pub fn is_deadline(&self) -> bool {
        matches!(self, Violation::Deadline { .. })
    }
}

/// Check every constraint and list each violation with its device.
pub fn validate(assignment: &Assignment, powers: &PowerAllocation, scenario: &Scenario) -> Vec<Violation> {
    let n_dev = scenario.n_devices();
    let (n_bs, n_ch) = (scenario.n_bs(), scenario.n_subchannels());
    let mut out = Vec::new();
    if assignment.len() != n_dev || powers.watts.len() != n_dev {
        // Shape mismatch is reported against every device that is missing.
        for d in assignment.len().min(powers.watts.len())..n_dev {
            out.push(Violation::UnknownTarget { device: d });
        }
        return out;
    }
    for n in 0..n_dev {
        if let Strategy::Offload { bs, subchannel } = assignment.get(n) {
            if bs >= n_bs || subchannel >= n_ch {
                out.push(Violation::UnknownTarget { device: n });
            }
        }
    }
    if !out.is_empty() {
        return out;
    }

    let p_max = scenario.max_power_w();
    let a = assignment.offload_matrix(n_bs);
    let b = assignment.group_matrix(n_ch);
    for n in 0..n_dev {
        let p = powers.get(n);
        if !(0.0..=p_max * (1.0 + 1e-12)).contains(&p) {
            out.push(Violation::PowerBound { device: n, power_w: p });
        }
        if a[n].iter().map(|&x| x as u32).sum::<u32>() > 1 {
            out.push(Violation::MultiBs { device: n });
        }
        if (0..n_ch).map(|g| b[g][n] as u32).sum::<u32>() > 1 {
            out.push(Violation::MultiSubchannel { device: n });
        }
        let memberships = (0..n_bs).flat_map(|m| (0..n_ch).map(move |g| (m, g))).filter(|&(m, g)| a[n][m] == 1 && b[g][n] == 1).count();
        if memberships > 1 {
            out.push(Violation::GroupOverlap { device: n });
        }
        let delay = total_delay(n, assignment, powers, scenario);
        let deadline = scenario.devices[n].deadline_s;
        if !(delay <= deadline) {
            out.push(Violation::Deadline { device: n, delay_s: delay, deadline_s: deadline });
        }
        let energy = transmission_energy(n, assignment, powers, scenario);
        let budget = scenario.devices[n].energy_budget_j;
        if energy > budget * (1.0 + 1e-9) {
            out.push(Violation::Energy { device: n, energy_j: energy, budget_j: budget });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceDelay {
    pub device_id: usize,
    pub strategy: String,
    pub t_trans: f64,
    pub t_comp: f64,
    pub t_total: f64,
    pub energy: f64,
    pub deadline_met: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayReport {
    pub devices: Vec<DeviceDelay>,
    pub total_delay_sum: f64,
}

impl DelayReport {
    pub fn build(assignment: &Assignment, powers: &PowerAllocation, scenario: &Scenario) -> Self {
        let devices: Vec<DeviceDelay> = (0..assignment.len())
            .map(|n| {
                let strategy = assignment.get(n);
                let (t_trans, t_comp) = match strategy {
                    Strategy::Local => (0.0, local_delay(&scenario.devices[n])),
                    Strategy::Offload { .. } => (
                        transmission_delay(n, assignment, powers, scenario).expect("offloading device"),
                        computing_delay(n, assignment, scenario).expect("offloading device"),
                    ),
                };
                let t_total = total_delay(n, assignment, powers, scenario);
                DeviceDelay {
                    device_id: n,
                    strategy: strategy.to_string(),
                    t_trans,
                    t_comp,
                    t_total,
                    energy: transmission_energy(n, assignment, powers, scenario),
                    deadline_met: t_total <= scenario.devices[n].deadline_s,
                }
            })
            .collect();
        let total_delay_sum = devices.iter().map(|d| d.t_total).sum();
        Self { devices, total_delay_sum }
    }

    pub fn deadline_violations(&self) -> usize {
        self.devices.iter().filter(|d| !d.deadline_met).count()
    }

    /// CSV with header `device_id,strategy,t_trans,t_comp,t_total,energy,deadline_met`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        for row in &self.devices {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}
