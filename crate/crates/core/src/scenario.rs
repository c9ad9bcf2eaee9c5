//! Random scenario generation: device and base-station placement, task demands
//! and block-fading channel gains.
//!
//! All quantities are stored in SI units (bits, bits/s, seconds, watts, Hz,
//! meters). Randomness comes from ChaCha8 seeded with the scenario seed; each
//! component draws from its own stream so that, for instance, device
//! placement does not change when the number of base stations is swept.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::ScenarioError;

/// Large-scale fading intercept at 1 km.
pub const PATHLOSS_INTERCEPT_DB: f64 = 128.1;
/// Large-scale fading slope per decade of distance.
pub const PATHLOSS_SLOPE_DB: f64 = 37.6;
/// Minimum link distance; devices spawned on top of a BS are pushed to this.
pub const MIN_DISTANCE_M: f64 = 1.0;

const STREAM_DEVICES: u64 = 1;
const STREAM_BASE_STATIONS: u64 = 2;
const STREAM_FADING: u64 = 3;
/// Stream reserved for the optimizer's random initialization.
pub const STREAM_INIT: u64 = 4;

/// Convert dBm to watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// `128.1 + 37.6 log10(d)` with `d` in kilometers.
pub fn path_loss_db(distance_km: f64) -> Result<f64, ScenarioError> {
    path_loss_db_with(distance_km, PATHLOSS_INTERCEPT_DB, PATHLOSS_SLOPE_DB)
}

pub fn path_loss_db_with(distance_km: f64, intercept_db: f64, slope_db: f64) -> Result<f64, ScenarioError> {
    if !(distance_km > 0.0) || !distance_km.is_finite() {
        return Err(ScenarioError::Domain(distance_km));
    }
    Ok(intercept_db + slope_db * distance_km.log10())
}

/// Thermal noise power `B * N0` in watts.
pub fn noise_power(bandwidth_hz: f64, noise_density_dbm_hz: f64) -> f64 {
    bandwidth_hz * dbm_to_watts(noise_density_dbm_hz)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadioConfig {
    /// Bandwidth of one subchannel.
    pub bandwidth_hz: f64,
    pub noise_density_dbm_hz: f64,
    pub pathloss_intercept_db: f64,
    pub pathloss_slope_db_per_decade: f64,
    pub max_power_dbm: f64,
}

impl Default for RadioConfig {
    fn default() -> Self {
        Self {
            bandwidth_hz: 410e3,
            noise_density_dbm_hz: -174.0,
            pathloss_intercept_db: PATHLOSS_INTERCEPT_DB,
            pathloss_slope_db_per_decade: PATHLOSS_SLOPE_DB,
            max_power_dbm: 27.8,
        }
    }
}

impl RadioConfig {
    pub fn noise_power_w(&self) -> f64 {
        noise_power(self.bandwidth_hz, self.noise_density_dbm_hz)
    }

    pub fn max_power_w(&self) -> f64 {
        dbm_to_watts(self.max_power_dbm)
    }

    /// Path loss of a link of `distance_m` meters, clamped at [`MIN_DISTANCE_M`].
    pub fn link_path_loss_db(&self, distance_m: f64) -> Result<f64, ScenarioError> {
        let d = distance_m.max(MIN_DISTANCE_M);
        path_loss_db_with(d / 1000.0, self.pathloss_intercept_db, self.pathloss_slope_db_per_decade)
    }

    fn validate(&self) -> Result<(), ScenarioError> {
        if !(self.bandwidth_hz > 0.0) {
            return Err(ScenarioError::Config("bandwidth_hz must be positive".into()));
        }
        if !(self.noise_power_w() > 0.0) {
            return Err(ScenarioError::Config("noise power must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Device {
    pub id: usize,
    pub position: Point,
    pub task_bits: f64,
    pub deadline_s: f64,
    pub local_rate_bps: f64,
    pub energy_budget_j: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseStation {
    pub id: usize,
    pub position: Point,
    pub compute_rate_bps: f64,
    pub subchannels: usize,
}

/// Linear power gains `|h_n^{mg}|^2`, laid out device-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelGains {
    n_devices: usize,
    n_bs: usize,
    n_subchannels: usize,
    data: Vec<f64>,
}

impl ChannelGains {
    pub fn new(n_devices: usize, n_bs: usize, n_subchannels: usize, data: Vec<f64>) -> Result<Self, ScenarioError> {
        if data.len() != n_devices * n_bs * n_subchannels {
            return Err(ScenarioError::Config(format!(
                "gain table has {} entries, expected {}x{}x{}",
                data.len(),
                n_devices,
                n_bs,
                n_subchannels
            )));
        }
        if data.iter().any(|g| !g.is_finite() || *g < 0.0) {
            return Err(ScenarioError::Config("gains must be finite and non-negative".into()));
        }
        Ok(Self { n_devices, n_bs, n_subchannels, data })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.n_devices, self.n_bs, self.n_subchannels)
    }

    #[inline]
    pub fn get(&self, device: usize, bs: usize, subchannel: usize) -> f64 {
        self.data[(device * self.n_bs + bs) * self.n_subchannels + subchannel]
    }

    /// Mean gain of `device` over the subchannels of `bs`.
    pub fn mean_over_subchannels(&self, device: usize, bs: usize) -> f64 {
        let start = (device * self.n_bs + bs) * self.n_subchannels;
        let row = &self.data[start..start + self.n_subchannels];
        row.iter().sum::<f64>() / row.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub devices: Vec<Device>,
    pub base_stations: Vec<BaseStation>,
    pub gains: ChannelGains,
    pub radio: RadioConfig,
    pub noise_power_w: f64,
    pub seed: u64,
}

impl Scenario {
    /// Assemble a scenario from explicit parts (used by tests and tools that
    /// load fixed instances).
    pub fn from_parts(
        devices: Vec<Device>,
        base_stations: Vec<BaseStation>,
        gains: ChannelGains,
        radio: RadioConfig,
        seed: u64,
    ) -> Result<Self, ScenarioError> {
        radio.validate()?;
        let g = base_stations.first().map_or(0, |b| b.subchannels);
        if base_stations.iter().any(|b| b.subchannels != g) {
            return Err(ScenarioError::Config("all BSs must expose the same subchannel count".into()));
        }
        if gains.shape() != (devices.len(), base_stations.len(), g) {
            return Err(ScenarioError::Config(format!(
                "gain shape {:?} does not match ({}, {}, {})",
                gains.shape(),
                devices.len(),
                base_stations.len(),
                g
            )));
        }
        for d in &devices {
            if !(d.task_bits > 0.0 && d.deadline_s > 0.0 && d.local_rate_bps > 0.0 && d.energy_budget_j > 0.0) {
                return Err(ScenarioError::Config(format!("device {} has a non-positive parameter", d.id)));
            }
        }
        for b in &base_stations {
            if !(b.compute_rate_bps > 0.0) || b.subchannels == 0 {
                return Err(ScenarioError::Config(format!("BS {} has invalid compute rate or subchannels", b.id)));
            }
        }
        let noise_power_w = radio.noise_power_w();
        Ok(Self { devices, base_stations, gains, radio, noise_power_w, seed })
    }

    pub fn n_devices(&self) -> usize {
        self.devices.len()
    }

    pub fn n_bs(&self) -> usize {
        self.base_stations.len()
    }

    pub fn n_subchannels(&self) -> usize {
        self.gains.n_subchannels
    }

    pub fn bandwidth_hz(&self) -> f64 {
        self.radio.bandwidth_hz
    }

    pub fn max_power_w(&self) -> f64 {
        self.radio.max_power_w()
    }

    #[inline]
    pub fn gain(&self, device: usize, bs: usize, subchannel: usize) -> f64 {
        self.gains.get(device, bs, subchannel)
    }

    /// Euclidean-nearest BS; equidistant ties go to the lower index.
    pub fn nearest_bs(&self, device: usize) -> usize {
        let p = self.devices[device].position;
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (m, bs) in self.base_stations.iter().enumerate() {
            let d = p.distance(&bs.position);
            if d < best_d {
                best_d = d;
                best = m;
            }
        }
        best
    }

    /// Whether the device meets its deadline by computing locally.
    pub fn local_feasible(&self, device: usize) -> bool {
        let d = &self.devices[device];
        d.task_bits / d.local_rate_bps <= d.deadline_s
    }

    /// Fresh RNG on the optimizer stream, for one-seed reproducible pipelines.
    pub fn init_rng(&self) -> ChaCha8Rng {
        stream_rng(self.seed, STREAM_INIT)
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Parameters of the random world. Ranges are inclusive `[lo, hi]` in SI units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationParams {
    pub n_devices: usize,
    pub n_bs: usize,
    pub n_subchannels: usize,
    pub bandwidth_hz: f64,
    pub noise_density_dbm_hz: f64,
    pub task_bits_range: [f64; 2],
    pub deadline_range_s: [f64; 2],
    pub local_rate_range: [f64; 2],
    pub mec_rate_range: [f64; 2],
    /// Multiplier applied to every drawn MEC rate.
    pub mec_rate_scale: f64,
    pub max_power_dbm: f64,
    pub energy_budget_range_j: [f64; 2],
    pub area_m: f64,
    pub pathloss_intercept_db: f64,
    pub pathloss_slope_db_per_decade: f64,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            n_devices: 80,
            n_bs: 4,
            n_subchannels: 5,
            bandwidth_hz: 410e3,
            noise_density_dbm_hz: -174.0,
            task_bits_range: [5e6, 15e6],
            deadline_range_s: [0.2, 1.2],
            local_rate_range: [3e6, 8e6],
            mec_rate_range: [7e9, 10e9],
            mec_rate_scale: 1.0,
            max_power_dbm: 27.8,
            energy_budget_range_j: [0.152, 0.910],
            area_m: 1000.0,
            pathloss_intercept_db: PATHLOSS_INTERCEPT_DB,
            pathloss_slope_db_per_decade: PATHLOSS_SLOPE_DB,
        }
    }
}

impl GenerationParams {
    pub fn radio(&self) -> RadioConfig {
        RadioConfig {
            bandwidth_hz: self.bandwidth_hz,
            noise_density_dbm_hz: self.noise_density_dbm_hz,
            pathloss_intercept_db: self.pathloss_intercept_db,
            pathloss_slope_db_per_decade: self.pathloss_slope_db_per_decade,
            max_power_dbm: self.max_power_dbm,
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.n_devices == 0 || self.n_bs == 0 || self.n_subchannels == 0 {
            return Err(ScenarioError::Config("n_devices, n_bs and n_subchannels must all be at least 1".into()));
        }
        let ranges = [
            ("task_bits_range", self.task_bits_range),
            ("deadline_range_s", self.deadline_range_s),
            ("local_rate_range", self.local_rate_range),
            ("mec_rate_range", self.mec_rate_range),
            ("energy_budget_range_j", self.energy_budget_range_j),
        ];
        for (name, [lo, hi]) in ranges {
            if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
                return Err(ScenarioError::Config(format!("{name} must satisfy 0 < lo <= hi")));
            }
        }
        if !(self.mec_rate_scale > 0.0) {
            return Err(ScenarioError::Config("mec_rate_scale must be positive".into()));
        }
        if !(self.area_m > 0.0) {
            return Err(ScenarioError::Config("area_m must be positive".into()));
        }
        self.radio().validate()
    }
}

fn uniform(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

/// BS sites for `n_bs` stations in a square of side `area_m`.
///
/// The default four-station layout sits at the centers of the 2x2 grid. For
/// other counts the smallest k x k grid with `k*k >= n_bs` is used; when not
/// every cell is occupied, cells are chosen greedily to minimize the mean
/// distance from the area to its nearest station.
pub fn base_station_layout(n_bs: usize, area_m: f64) -> Vec<Point> {
    let k = (1..).find(|k| k * k >= n_bs).unwrap_or(1);
    let cell = area_m / k as f64;
    // Column-major, top to bottom: for k = 2 this is
    // (250,750), (250,250), (750,750), (750,250).
    let cells: Vec<Point> =
        (0..k).flat_map(|ix| (0..k).rev().map(move |iy| Point::new((ix as f64 + 0.5) * cell, (iy as f64 + 0.5) * cell))).collect();
    if n_bs == cells.len() {
        return cells;
    }

    const LATTICE: usize = 50;
    let step = area_m / LATTICE as f64;
    let samples: Vec<Point> =
        (0..LATTICE).flat_map(|i| (0..LATTICE).map(move |j| Point::new((i as f64 + 0.5) * step, (j as f64 + 0.5) * step))).collect();
    let mut nearest = vec![f64::INFINITY; samples.len()];
    let mut chosen = Vec::with_capacity(n_bs);
    let mut used = vec![false; cells.len()];
    for _ in 0..n_bs {
        let mut best: Option<(f64, usize)> = None;
        for (c, site) in cells.iter().enumerate() {
            if used[c] {
                continue;
            }
            let cost: f64 = samples.iter().zip(&nearest).map(|(s, d)| d.min(s.distance(site))).sum();
            if best.is_none_or(|(b, _)| cost < b - 1e-9) {
                best = Some((cost, c));
            }
        }
        let (_, c) = best.expect("grid has enough cells");
        used[c] = true;
        for (s, d) in samples.iter().zip(nearest.iter_mut()) {
            *d = d.min(s.distance(&cells[c]));
        }
        chosen.push(cells[c]);
    }
    chosen
}

/// Draw a scenario. A pure function of `(params, seed)`.
pub fn generate_scenario(params: &GenerationParams, seed: u64) -> Result<Scenario, ScenarioError> {
    params.validate()?;
    let radio = params.radio();

    let mut rng = stream_rng(seed, STREAM_DEVICES);
    let devices: Vec<Device> = (0..params.n_devices)
        .map(|id| {
            let x = rng.random_range(0.0..params.area_m);
            let y = rng.random_range(0.0..params.area_m);
            Device {
                id,
                position: Point::new(x, y),
                task_bits: uniform(&mut rng, params.task_bits_range),
                deadline_s: uniform(&mut rng, params.deadline_range_s),
                local_rate_bps: uniform(&mut rng, params.local_rate_range),
                energy_budget_j: uniform(&mut rng, params.energy_budget_range_j),
            }
        })
        .collect();

    let mut rng = stream_rng(seed, STREAM_BASE_STATIONS);
    let base_stations: Vec<BaseStation> = base_station_layout(params.n_bs, params.area_m)
        .into_iter()
        .enumerate()
        .map(|(id, position)| BaseStation {
            id,
            position,
            compute_rate_bps: uniform(&mut rng, params.mec_rate_range) * params.mec_rate_scale,
            subchannels: params.n_subchannels,
        })
        .collect();

    let mut rng = stream_rng(seed, STREAM_FADING);
    let (n, m_count, g_count) = (params.n_devices, params.n_bs, params.n_subchannels);
    let mut data = Vec::with_capacity(n * m_count * g_count);
    for dev in &devices {
        for bs in &base_stations {
            let pl_db = radio.link_path_loss_db(dev.position.distance(&bs.position))?;
            let large_scale = 10f64.powf(-pl_db / 10.0);
            for _ in 0..g_count {
                data.push(large_scale * rayleigh_power(&mut rng));
            }
        }
    }
    let gains = ChannelGains::new(n, m_count, g_count, data)?;
    Scenario::from_parts(devices, base_stations, gains, radio, seed)
}

/// `|z|^2` for `z ~ CN(0, 1)`: unit-mean exponential power.
pub fn rayleigh_power<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    0.5 * (re * re + im * im)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    #[allow(clippy::approx_constant)]
    fn path_loss_reference_points() {
        assert!((path_loss_db(1.0).unwrap() - 128.1).abs() < 1e-12);
        assert!((path_loss_db(0.1).unwrap() - 90.5).abs() < 1e-12);
        // 128.1 + 37.6 * log10(0.5), evaluated independently: 116.781_...
        let expected = 128.1 - 37.6 * 0.301_029_995_663_981_2;
        assert!((path_loss_db(0.5).unwrap() - expected).abs() < 1e-12);
        assert!((path_loss_db(0.5).unwrap() - 116.782).abs() < 1e-3);
    }

    #[test]
    fn path_loss_rejects_non_positive_distance() {
        assert!(matches!(path_loss_db(0.0), Err(ScenarioError::Domain(_))));
        assert!(matches!(path_loss_db(-1.0), Err(ScenarioError::Domain(_))));
        assert!(path_loss_db(f64::NAN).is_err());
    }

    #[test]
    fn colocated_device_is_clamped_to_one_meter() {
        let radio = RadioConfig::default();
        let pl = radio.link_path_loss_db(0.0).unwrap();
        assert!((pl - 15.3).abs() < 1e-9, "{pl}");
    }

    #[test]
    fn noise_power_examples() {
        assert!((noise_power(1.0, -30.0) - 1e-6).abs() < 1e-18);
        assert!((noise_power(2.0, -30.0) - 2e-6).abs() < 1e-18);
        // -174 dBm/Hz over 410 kHz: -117.872 dBm
        let dbm = -174.0 + 10.0 * 410e3f64.log10();
        assert!((dbm + 117.872).abs() < 1e-3);
        let w = noise_power(410e3, -174.0);
        assert!((w - dbm_to_watts(dbm)).abs() / w < 1e-12);
        assert!((w - 1.633e-15).abs() / 1.633e-15 < 1e-3);
    }

    #[test]
    fn default_layout_matches_reference_sites() {
        let sites = base_station_layout(4, 1000.0);
        let expected = [(250.0, 750.0), (250.0, 250.0), (750.0, 750.0), (750.0, 250.0)];
        for (s, (x, y)) in sites.iter().zip(expected) {
            assert_eq!((s.x, s.y), (x, y));
        }
    }

    #[test]
    fn larger_layouts_use_distinct_grid_cells() {
        for m in 5..=9 {
            let sites = base_station_layout(m, 1000.0);
            assert_eq!(sites.len(), m);
            for (i, a) in sites.iter().enumerate() {
                for b in &sites[i + 1..] {
                    assert!(a.distance(b) > 1.0);
                }
            }
        }
    }

    #[test]
    fn defaults_have_expected_shape() {
        let s = generate_scenario(&GenerationParams::default(), 1).unwrap();
        assert_eq!(s.gains.shape(), (80, 4, 5));
        assert_eq!(s.n_devices(), 80);
        assert!((s.noise_power_w - noise_power(410e3, -174.0)).abs() < 1e-30);
    }

    #[test]
    fn generation_is_deterministic() {
        let p = GenerationParams::default();
        assert_eq!(generate_scenario(&p, 7).unwrap(), generate_scenario(&p, 7).unwrap());
        assert_ne!(generate_scenario(&p, 7).unwrap(), generate_scenario(&p, 8).unwrap());
    }

    #[test]
    fn drawn_values_respect_ranges() {
        let p = GenerationParams::default();
        let s = generate_scenario(&p, 3).unwrap();
        for d in &s.devices {
            assert!((5e6..=15e6).contains(&d.task_bits));
            assert!((0.2..=1.2).contains(&d.deadline_s));
            assert!((3e6..=8e6).contains(&d.local_rate_bps));
            assert!((0.152..=0.910).contains(&d.energy_budget_j));
            assert!((0.0..1000.0).contains(&d.position.x));
        }
        for b in &s.base_stations {
            assert!((7e9..=10e9).contains(&b.compute_rate_bps));
        }
    }

    #[test]
    fn mec_scale_only_rescales_compute() {
        let p = GenerationParams::default();
        let q = GenerationParams { mec_rate_scale: 2.0, ..p.clone() };
        let a = generate_scenario(&p, 11).unwrap();
        let b = generate_scenario(&q, 11).unwrap();
        assert_eq!(a.devices, b.devices);
        assert_eq!(a.gains, b.gains);
        for (x, y) in a.base_stations.iter().zip(&b.base_stations) {
            assert!((y.compute_rate_bps - 2.0 * x.compute_rate_bps).abs() < 1e-3);
        }
    }

    #[test]
    fn zero_counts_are_config_errors() {
        for p in [
            GenerationParams { n_devices: 0, ..Default::default() },
            GenerationParams { n_bs: 0, ..Default::default() },
            GenerationParams { n_subchannels: 0, ..Default::default() },
        ] {
            assert!(matches!(generate_scenario(&p, 0), Err(ScenarioError::Config(_))));
        }
    }

    #[test]
    fn fading_power_has_unit_mean() {
        let mut rng = stream_rng(99, 0);
        let n = 200_000;
        let mean = (0..n).map(|_| rayleigh_power(&mut rng)).sum::<f64>() / n as f64;
        assert!((0.98..=1.02).contains(&mean), "{mean}");
    }

    #[test]
    fn nearest_bs_breaks_ties_low() {
        let mut s = generate_scenario(&GenerationParams { n_devices: 1, ..Default::default() }, 0).unwrap();
        s.devices[0].position = Point::new(250.0, 500.0);
        assert_eq!(s.nearest_bs(0), 0);
    }

    proptest::proptest! {
        #[test]
        fn path_loss_is_monotone(a in 1e-3f64..10.0, b in 1e-3f64..10.0) {
            proptest::prop_assume!(a < b);
            proptest::prop_assert!(path_loss_db(a).unwrap() < path_loss_db(b).unwrap());
        }
    }
}
