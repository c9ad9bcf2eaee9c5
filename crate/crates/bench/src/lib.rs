//! Shared fixtures for the benchmarks.

use nomamec_core::{generate_scenario, GenerationParams, Scenario};

/// Default-parameter scenario with `n` devices.
pub fn scenario(n: usize, seed: u64) -> Scenario {
    let params = GenerationParams { n_devices: n, ..GenerationParams::default() };
    generate_scenario(&params, seed).expect("default parameters are valid")
}
