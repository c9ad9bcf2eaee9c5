use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ao::AoConfig;
use crate::baselines::BaselineKind;
use crate::error::HarnessError;
use crate::scenario::GenerationParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Proposed,
    GaleShapley,
    MaxMin,
    Nearby,
    Computing,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [Self::Proposed, Self::GaleShapley, Self::MaxMin, Self::Nearby, Self::Computing];

    pub fn name(self) -> &'static str {
        match self.baseline() {
            None => "proposed",
            Some(k) => k.name(),
        }
    }

    pub fn baseline(self) -> Option<BaselineKind> {
        match self {
            Self::Proposed => None,
            Self::GaleShapley => Some(BaselineKind::GaleShapley),
            Self::MaxMin => Some(BaselineKind::MaxMin),
            Self::Nearby => Some(BaselineKind::Nearby),
            Self::Computing => Some(BaselineKind::Computing),
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| format!("unknown algorithm `{s}` (expected one of proposed, gale-shapley, max-min, nearby, computing)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    NDevices,
    NSubchannels,
    NBs,
    MecRateScale,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            Self::NDevices => "n_devices",
            Self::NSubchannels => "n_subchannels",
            Self::NBs => "n_bs",
            Self::MecRateScale => "mec_rate_scale",
        }
    }

    /// Current value of this parameter in `params`.
    pub fn read(self, params: &GenerationParams) -> f64 {
        match self {
            Self::NDevices => params.n_devices as f64,
            Self::NSubchannels => params.n_subchannels as f64,
            Self::NBs => params.n_bs as f64,
            Self::MecRateScale => params.mec_rate_scale,
        }
    }

    pub fn apply(self, params: &mut GenerationParams, value: f64) -> Result<(), HarnessError> {
        let count = || {
            if value >= 1.0 && value.fract() == 0.0 && value <= u32::MAX as f64 {
                Ok(value as usize)
            } else {
                Err(HarnessError::Config(format!("{} must be a positive integer, got {value}", self.name())))
            }
        };
        match self {
            Self::NDevices => params.n_devices = count()?,
            Self::NSubchannels => params.n_subchannels = count()?,
            Self::NBs => params.n_bs = count()?,
            Self::MecRateScale => params.mec_rate_scale = value,
        }
        Ok(())
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepParam {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [Self::NDevices, Self::NSubchannels, Self::NBs, Self::MecRateScale]
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| format!("unknown sweep parameter `{s}` (expected n_devices, n_subchannels, n_bs or mec_rate_scale)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub parameter: SweepParam,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Seeds {
    List(Vec<u64>),
    Range { count: usize, base_seed: u64 },
}

impl Default for Seeds {
    fn default() -> Self {
        Self::Range { count: 20, base_seed: 0 }
    }
}

impl Seeds {
    pub fn expand(&self) -> Vec<u64> {
        match self {
            Self::List(v) => v.clone(),
            Self::Range { count, base_seed } => (0..*count as u64).map(|k| base_seed + k).collect(),
        }
    }
}

fn default_algorithms() -> Vec<Algorithm> {
    Algorithm::ALL.to_vec()
}

/// One experiment: a base scenario, the algorithms to compare, an optional
/// one-parameter sweep and the Monte Carlo seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub scenario: GenerationParams,
    #[serde(default = "default_algorithms")]
    pub algorithms: Vec<Algorithm>,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub ao: AoConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: GenerationParams::default(),
            algorithms: default_algorithms(),
            sweep: None,
            seeds: Seeds::default(),
            output_dir: None,
            ao: AoConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// The swept parameter (number of devices when there is no sweep) and
    /// its values.
    pub fn sweep_points(&self) -> (SweepParam, Vec<f64>) {
        match &self.sweep {
            Some(s) => (s.parameter, s.values.clone()),
            None => (SweepParam::NDevices, vec![SweepParam::NDevices.read(&self.scenario)]),
        }
    }

    /// Generation parameters for one sweep value.
    pub fn params_at(&self, value: f64) -> Result<GenerationParams, HarnessError> {
        let mut p = self.scenario.clone();
        self.sweep_points().0.apply(&mut p, value)?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.algorithms.is_empty() {
            return Err(HarnessError::Config("algorithms must not be empty".into()));
        }
        if self.algorithms.iter().collect::<BTreeSet<_>>().len() != self.algorithms.len() {
            return Err(HarnessError::Config("algorithms must be distinct".into()));
        }
        let (_, values) = self.sweep_points();
        if values.is_empty() {
            return Err(HarnessError::Config("sweep values must not be empty".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(HarnessError::Config("sweep values must be finite".into()));
        }
        let seeds = self.seeds.expand();
        if seeds.is_empty() {
            return Err(HarnessError::Config("at least one seed is required".into()));
        }
        if seeds.iter().collect::<BTreeSet<_>>().len() != seeds.len() {
            return Err(HarnessError::Config("seeds must be distinct".into()));
        }
        for &v in &values {
            self.params_at(v)?.validate()?;
        }
        if self.ao.t_max == 0 {
            return Err(HarnessError::Config("ao.t_max must be at least 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.seeds.expand(), (0..20).collect::<Vec<u64>>());
        assert_eq!(cfg.sweep_points(), (SweepParam::NDevices, vec![80.0]));
    }

    #[test]
    fn parses_a_full_config() {
        let text = r#"
            algorithms = ["proposed", "nearby"]
            seeds = [3, 5]

            [scenario]
            n_devices = 40
            mec_rate_range = [7e9, 10e9]

            [sweep]
            parameter = "n_subchannels"
            values = [3, 4, 5]

            [ao]
            t_max = 10

            [ao.game]
            lambda = 2.0
        "#;
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        assert_eq!(cfg.algorithms, vec![Algorithm::Proposed, Algorithm::Nearby]);
        assert_eq!(cfg.seeds.expand(), vec![3, 5]);
        assert_eq!(cfg.scenario.n_devices, 40);
        assert_eq!(cfg.ao.t_max, 10);
        assert_eq!(cfg.ao.game.lambda, 2.0);
        assert_eq!(cfg.params_at(4.0).unwrap().n_subchannels, 4);
    }

    #[test]
    fn seed_range_form() {
        let cfg = ExperimentConfig::from_toml("seeds = { count = 3, base_seed = 100 }").unwrap();
        assert_eq!(cfg.seeds.expand(), vec![100, 101, 102]);
    }

    #[test]
    fn rejects_bad_configs() {
        for text in [
            "algorithms = []",
            "algorithms = [\"proposed\", \"proposed\"]",
            "algorithms = [\"best\"]",
            "seeds = [1, 1]",
            "seeds = []",
            "unknown_key = 1",
            "[sweep]\nparameter = \"n_devices\"\nvalues = []",
            "[sweep]\nparameter = \"n_devices\"\nvalues = [2.5]",
            "[sweep]\nparameter = \"mec_rate_scale\"\nvalues = [-1.0]",
            "[scenario]\nn_bs = 0",
        ] {
            assert!(ExperimentConfig::from_toml(text).is_err(), "accepted: {text}");
        }
    }

    #[test]
    fn names_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(a.name().parse::<Algorithm>().unwrap(), a);
        }
        for p in [SweepParam::NDevices, SweepParam::NSubchannels, SweepParam::NBs, SweepParam::MecRateScale] {
            assert_eq!(p.name().parse::<SweepParam>().unwrap(), p);
        }
    }
}
