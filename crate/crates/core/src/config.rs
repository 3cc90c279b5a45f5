//! Experiment configuration: a TOML file whose fields mirror the scenario,
//! radio, and learning parameters, every one with a default. A run is fully
//! determined by a config plus its seed.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::agent::AgentHyperParams;
use crate::channel::TopologyConfig;
use crate::env::SystemParams;
use crate::error::{Result, SrnError};
use crate::oracle::DEFAULT_ENUMERATION_CAP;

/// Association policies a run can execute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Centralized,
    Distributed,
    Optimal,
    Random,
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            PolicyKind::Centralized => "centralized",
            PolicyKind::Distributed => "distributed",
            PolicyKind::Optimal => "optimal",
            PolicyKind::Random => "random",
        };
        f.write_str(name)
    }
}

impl FromStr for PolicyKind {
    type Err = SrnError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "centralized" => Ok(PolicyKind::Centralized),
            "distributed" => Ok(PolicyKind::Distributed),
            "optimal" => Ok(PolicyKind::Optimal),
            "random" => Ok(PolicyKind::Random),
            other => Err(SrnError::InvalidConfig(format!("unknown policy '{other}'"))),
        }
    }
}

/// Mid-run change of the device count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NChange {
    /// First frame at which the new device count is in effect.
    pub frame: u64,
    pub new_n: usize,
}

/// Node placement and propagation parameters (the user and device counts
/// come from the top-level `m` and `n`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologySection {
    pub region_side_m: f64,
    /// Base-station position; region center when omitted.
    pub bs_position_m: Option<[f64; 2]>,
    pub min_dist_m: f64,
    pub max_dist_m: f64,
    pub carrier_freq_mhz: f64,
    pub tx_gain_db: f64,
    pub rx_gain_db: f64,
}

impl Default for TopologySection {
    fn default() -> Self {
        let t = TopologyConfig::default();
        Self {
            region_side_m: t.region_side_m,
            bs_position_m: None,
            min_dist_m: t.min_dist_m,
            max_dist_m: t.max_dist_m,
            carrier_freq_mhz: t.carrier_freq_mhz,
            tx_gain_db: t.tx_gain_db,
            rx_gain_db: t.rx_gain_db,
        }
    }
}

/// Radio constants, in the units the literature quotes them in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemSection {
    pub tx_power_dbm: f64,
    pub noise_dbm: f64,
    /// Reflection-coefficient magnitude shared by every device.
    pub reflection_coeff: f64,
    pub spreading_factor: u32,
}

impl Default for SystemSection {
    fn default() -> Self {
        Self {
            tx_power_dbm: 40.0,
            noise_dbm: -114.0,
            reflection_coeff: 0.8,
            spreading_factor: 50,
        }
    }
}

/// Full scenario record; serializable, replayable from its seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: String,
    /// Cellular users M.
    pub m: usize,
    /// IoT devices N at the start of the run.
    pub n: usize,
    /// Frame-to-frame channel correlation.
    pub rho: f64,
    /// Total frames to simulate.
    pub frames: u64,
    pub policies: Vec<PolicyKind>,
    pub seed: u64,
    pub output_dir: String,
    pub n_change: Option<NChange>,
    /// Fraction of the run used for convergence summaries.
    pub tail_fraction: f64,
    /// Ceiling on exhaustive association enumeration.
    pub enumeration_cap: u64,
    /// Write agent snapshots every this many frames.
    pub snapshot_every_frames: Option<u64>,
    pub topology: TopologySection,
    pub system: SystemSection,
    pub agent: AgentHyperParams,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: "default".into(),
            m: 3,
            n: 3,
            rho: 0.99,
            frames: 10_000,
            policies: vec![
                PolicyKind::Centralized,
                PolicyKind::Distributed,
                PolicyKind::Optimal,
                PolicyKind::Random,
            ],
            seed: 1,
            output_dir: "out".into(),
            n_change: None,
            tail_fraction: 0.2,
            enumeration_cap: DEFAULT_ENUMERATION_CAP,
            snapshot_every_frames: None,
            topology: TopologySection::default(),
            system: SystemSection::default(),
            agent: AgentHyperParams::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| SrnError::ConfigParse(e.to_string()))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| SrnError::ConfigParse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// Largest device count the run can reach.
    pub fn max_devices(&self) -> usize {
        self.n.max(self.n_change.map_or(0, |c| c.new_n))
    }

    /// Concrete topology for `device_count` devices.
    pub fn topology_config(&self, device_count: usize) -> TopologyConfig {
        let t = &self.topology;
        TopologyConfig {
            num_users: self.m,
            num_devices: device_count,
            region_side_m: t.region_side_m,
            bs_position_m: t
                .bs_position_m
                .unwrap_or([t.region_side_m / 2.0, t.region_side_m / 2.0]),
            min_dist_m: t.min_dist_m,
            max_dist_m: t.max_dist_m,
            carrier_freq_mhz: t.carrier_freq_mhz,
            tx_gain_db: t.tx_gain_db,
            rx_gain_db: t.rx_gain_db,
        }
    }

    /// Concrete radio constants in watts for `device_count` devices.
    pub fn system_params(&self, device_count: usize) -> SystemParams {
        SystemParams::uniform(
            crate::channel::dbm_to_watts(self.system.tx_power_dbm),
            crate::channel::dbm_to_watts(self.system.noise_dbm),
            self.system.reflection_coeff,
            self.system.spreading_factor,
            device_count,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 {
            return Err(SrnError::InvalidConfig("m and n must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(SrnError::InvalidConfig("rho must lie in [0, 1]".into()));
        }
        if self.policies.is_empty() {
            return Err(SrnError::InvalidConfig("at least one policy is required".into()));
        }
        let mut seen = Vec::new();
        for p in &self.policies {
            if seen.contains(p) {
                return Err(SrnError::InvalidConfig(format!("policy '{p}' listed twice")));
            }
            seen.push(*p);
        }
        if !(self.tail_fraction > 0.0 && self.tail_fraction <= 1.0) {
            return Err(SrnError::InvalidConfig("tail_fraction must lie in (0, 1]".into()));
        }
        if self.enumeration_cap == 0 {
            return Err(SrnError::InvalidConfig("enumeration_cap must be positive".into()));
        }
        if let Some(change) = self.n_change {
            if change.new_n == 0 {
                return Err(SrnError::InvalidConfig("n_change.new_n must be at least 1".into()));
            }
            if change.frame == 0 || change.frame > self.frames {
                return Err(SrnError::InvalidConfig(
                    "n_change.frame must fall inside the run".into(),
                ));
            }
            if change.new_n != self.n && self.policies.contains(&PolicyKind::Centralized) {
                return Err(SrnError::NotScalable);
            }
        }
        if self.snapshot_every_frames == Some(0) {
            return Err(SrnError::InvalidConfig(
                "snapshot_every_frames must be positive when set".into(),
            ));
        }
        self.topology_config(self.max_devices()).validate()?;
        self.system_params(self.max_devices()).validate()?;
        self.agent.validate()?;
        Ok(())
    }
}
