//! Comparison schemes. Two decide only the grouping on the nearest BS
//! (deferred acceptance and max-min gain spread); two decide only the BS
//! (nearest, or largest compute rate under a cap) and then fill the
//! least-interfered subchannel. All of them keep locally feasible devices
//! local and hand the assignment to the same power allocation.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ao::Solution;
use crate::error::PowerError;
use crate::model::{Assignment, Strategy};
use crate::power::{allocate_power, p_init, MmConfig};
use crate::scenario::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    GaleShapley,
    MaxMin,
    Nearby,
    Computing,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 4] = [Self::GaleShapley, Self::MaxMin, Self::Nearby, Self::Computing];

    pub fn name(self) -> &'static str {
        match self {
            Self::GaleShapley => "gale-shapley",
            Self::MaxMin => "max-min",
            Self::Nearby => "nearby",
            Self::Computing => "computing",
        }
    }

    pub fn assignment(self, scenario: &Scenario, margin: f64) -> Assignment {
        match self {
            Self::GaleShapley => gale_shapley_grouping(scenario, &offload_targets(scenario)),
            Self::MaxMin => max_min_grouping(scenario, &offload_targets(scenario)),
            Self::Nearby => nearby_offloading(scenario, margin),
            Self::Computing => computing_capacity_offloading(scenario, margin),
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaselineKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| format!("unknown baseline `{s}`"))
    }
}

/// Nearest BS for every device that cannot finish locally, `None` otherwise.
pub fn offload_targets(scenario: &Scenario) -> Vec<Option<usize>> {
    (0..scenario.n_devices()).map(|n| (!scenario.local_feasible(n)).then(|| scenario.nearest_bs(n))).collect()
}

fn quota(count: usize, n_subchannels: usize) -> usize {
    count.div_ceil(n_subchannels)
}

fn devices_by_bs(scenario: &Scenario, targets: &[Option<usize>]) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); scenario.n_bs()];
    for (n, t) in targets.iter().enumerate() {
        if let Some(m) = *t {
            out[m].push(n);
        }
    }
    out
}

/// Higher gain first; equal gains keep the lower id first.
fn by_gain_desc(scenario: &Scenario, bs: usize, ch: usize) -> impl Fn(&usize, &usize) -> std::cmp::Ordering + '_ {
    move |&a, &b| scenario.gain(b, bs, ch).total_cmp(&scenario.gain(a, bs, ch)).then(a.cmp(&b))
}

/// Device-proposing deferred acceptance between the devices of each BS and
/// its subchannels, both sides ranking by channel gain, with every group
/// holding at most `ceil(N_m / G)` devices.
pub fn gale_shapley_grouping(scenario: &Scenario, targets: &[Option<usize>]) -> Assignment {
    let n_ch = scenario.n_subchannels();
    let mut a = Assignment::all_local(scenario.n_devices());
    for (bs, devices) in devices_by_bs(scenario, targets).into_iter().enumerate() {
        if devices.is_empty() {
            continue;
        }
        let q = quota(devices.len(), n_ch);
        let prefs: Vec<Vec<usize>> = devices
            .iter()
            .map(|&n| {
                let mut chs: Vec<usize> = (0..n_ch).collect();
                chs.sort_by(|&x, &y| scenario.gain(n, bs, y).total_cmp(&scenario.gain(n, bs, x)).then(x.cmp(&y)));
                chs
            })
            .collect();
        let mut next = vec![0usize; devices.len()];
        let mut held: Vec<Vec<usize>> = vec![Vec::new(); n_ch];
        let mut free: Vec<usize> = (0..devices.len()).rev().collect();
        while let Some(i) = free.pop() {
            let ch = prefs[i][next[i]];
            next[i] += 1;
            held[ch].push(i);
            if held[ch].len() > q {
                let order = by_gain_desc(scenario, bs, ch);
                held[ch].sort_by(|&x, &y| order(&devices[x], &devices[y]));
                // Capacity G * q covers every device, so a rejected device
                // always has a group left to propose to.
                free.push(held[ch].pop().expect("over quota"));
            }
        }
        for (ch, members) in held.iter().enumerate() {
            for &i in members {
                a.set(devices[i], Strategy::offload(bs, ch));
            }
        }
    }
    a
}

/// Devices sorted by their mean gain to their BS (strongest first) each join
/// the group whose members differ most from them in gain: the score of a
/// group is the smallest absolute gain gap to a current member, and empty
/// groups score infinity. Full groups are skipped and ties go to the lower
/// subchannel.
pub fn max_min_grouping(scenario: &Scenario, targets: &[Option<usize>]) -> Assignment {
    let n_ch = scenario.n_subchannels();
    let mut a = Assignment::all_local(scenario.n_devices());
    for (bs, mut devices) in devices_by_bs(scenario, targets).into_iter().enumerate() {
        if devices.is_empty() {
            continue;
        }
        let q = quota(devices.len(), n_ch);
        let mean = |n: usize| scenario.gains.mean_over_subchannels(n, bs);
        devices.sort_by(|&x, &y| mean(y).total_cmp(&mean(x)).then(x.cmp(&y)));
        let mut groups: Vec<Vec<usize>> = vec![Vec::new(); n_ch];
        for n in devices {
            let mut best: Option<(usize, f64)> = None;
            for (ch, members) in groups.iter().enumerate() {
                if members.len() >= q {
                    continue;
                }
                let g = scenario.gain(n, bs, ch);
                let score = members.iter().map(|&k| (scenario.gain(k, bs, ch) - g).abs()).fold(f64::INFINITY, f64::min);
                if best.is_none_or(|(_, s)| score > s) {
                    best = Some((ch, score));
                }
            }
            let (ch, _) = best.expect("quota leaves room");
            groups[ch].push(n);
            a.set(n, Strategy::offload(bs, ch));
        }
    }
    a
}

/// Subchannel of `bs` with the smallest received power from the devices
/// already placed there, using initial powers of the partial assignment.
fn least_interfered_subchannel(scenario: &Scenario, partial: &Assignment, bs: usize, margin: f64) -> usize {
    let powers = p_init(scenario, partial, margin).powers;
    (0..scenario.n_subchannels())
        .map(|ch| {
            let load: f64 = partial.members(bs, ch).iter().map(|&k| powers.get(k) * scenario.gain(k, bs, ch)).sum();
            (ch, load)
        })
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
        .0
}

/// Nearest BS, then the least-interfered subchannel in ascending device id.
pub fn nearby_offloading(scenario: &Scenario, margin: f64) -> Assignment {
    let mut a = Assignment::all_local(scenario.n_devices());
    for (n, target) in offload_targets(scenario).into_iter().enumerate() {
        if let Some(bs) = target {
            let ch = least_interfered_subchannel(scenario, &a, bs, margin);
            a.set(n, Strategy::offload(bs, ch));
        }
    }
    a
}

/// In ascending device id, the BS with the largest compute rate that still
/// has fewer than `ceil(N / M)` devices attached, then the least-interfered
/// subchannel. Equal rates go to the lower BS index.
pub fn computing_capacity_offloading(scenario: &Scenario, margin: f64) -> Assignment {
    let cap = scenario.n_devices().div_ceil(scenario.n_bs());
    let mut a = Assignment::all_local(scenario.n_devices());
    let mut attached = vec![0usize; scenario.n_bs()];
    for n in 0..scenario.n_devices() {
        if scenario.local_feasible(n) {
            continue;
        }
        let bs = (0..scenario.n_bs())
            .filter(|&m| attached[m] < cap)
            .fold(None, |best: Option<usize>, m| match best {
                Some(b) if scenario.base_stations[b].compute_rate_bps >= scenario.base_stations[m].compute_rate_bps => Some(b),
                _ => Some(m),
            })
            .expect("cap * M covers every device");
        attached[bs] += 1;
        let ch = least_interfered_subchannel(scenario, &a, bs, margin);
        a.set(n, Strategy::offload(bs, ch));
    }
    a
}

/// Build the baseline assignment and allocate powers for it.
pub fn run_baseline(scenario: &Scenario, kind: BaselineKind, config: &MmConfig, lambda: f64) -> Result<Solution, PowerError> {
    let assignment = kind.assignment(scenario, config.energy_margin);
    let outcome = allocate_power(scenario, &assignment, config)?;
    Ok(Solution::single_pass(scenario, assignment, &outcome, lambda))
}
