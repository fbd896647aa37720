use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::chirp::DetectionCurveConfig;
use crate::mac::{MacConfig, ModePolicy};
use crate::medium::ChannelParams;
use crate::phy::PhyParams;
use crate::{Error, Result};

/// Complete description of a scenario and of the sweeps built on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    /// Simulated seconds per run.
    pub duration: f64,
    /// Number of sensors; the sink is extra.
    pub node_count: usize,
    pub topology: TopologyParams,
    pub traffic: TrafficParams,
    pub phy: PhyParams,
    pub mac: MacParams,
    pub channel: ChannelParams,
    pub sweeps: SweepParams,
    pub detection_curve: DetectionCurveConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            duration: 2000.0,
            node_count: 5,
            topology: TopologyParams::default(),
            traffic: TrafficParams::default(),
            phy: PhyParams::default(),
            mac: MacParams::default(),
            channel: ChannelParams::default(),
            sweeps: SweepParams::default(),
            detection_curve: DetectionCurveConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologyParams {
    /// Side of the square region in meters; the sink sits at its center.
    pub side: f64,
    /// Multiplier on every geometric propagation delay.
    pub delay_scale: f64,
    /// Fixed sensor positions `[x, y]`; random placement when empty.
    pub positions: Vec<[f64; 2]>,
}

impl Default for TopologyParams {
    fn default() -> Self {
        Self {
            side: 1000.0,
            delay_scale: 1.0,
            positions: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrafficParams {
    /// Aggregate Poisson arrival rate over all sensors, packets/s.
    pub offered_load: f64,
    pub payload_bytes: u32,
}

impl Default for TrafficParams {
    fn default() -> Self {
        Self {
            offered_load: 0.05,
            payload_bytes: 400,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SlotKeyword {
    #[serde(rename = "max-delay")]
    MaxDelay,
}

/// Backoff slot: seconds, or `"max-delay"` for the largest sensor-sink delay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SlotSetting {
    Seconds(f64),
    Keyword(SlotKeyword),
}

impl Default for SlotSetting {
    fn default() -> Self {
        SlotSetting::Keyword(SlotKeyword::MaxDelay)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MacParams {
    pub policy: ModePolicy,
    pub cross_layer: bool,
    pub cw_min: u32,
    pub cw_max: u32,
    pub slot: SlotSetting,
    pub max_retries: u32,
    pub t_ack: f64,
    pub t_nack: f64,
    pub t_control: f64,
    pub t_other: f64,
    pub timeout_margin: f64,
    /// Seconds to stay silent at mode 0; ten mode-1 packets when unset.
    pub pause_duration: Option<f64>,
    pub initial_mode: u8,
    /// Network-wide deliveries excluded from the measured window.
    pub warmup_deliveries: u64,
}

impl Default for MacParams {
    fn default() -> Self {
        Self {
            policy: ModePolicy::Fixed(1),
            cross_layer: true,
            cw_min: 4,
            cw_max: 64,
            slot: SlotSetting::default(),
            max_retries: 3,
            t_ack: 0.5,
            t_nack: 0.5,
            t_control: 0.5,
            t_other: 0.1,
            timeout_margin: crate::mac::DEFAULT_TIMEOUT_MARGIN,
            pause_duration: None,
            initial_mode: 1,
            warmup_deliveries: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepParams {
    pub replications: usize,
    pub node_counts: Vec<usize>,
    /// Aggregate loads for the load sweep, packets/s.
    pub loads: Vec<f64>,
    /// Aggregate load used wherever a saturated network is wanted.
    pub saturation_load: f64,
    pub delay_scales: Vec<f64>,
    pub pers: Vec<f64>,
    pub modes: Vec<u8>,
    pub esnrs: Vec<f64>,
    /// Sensors in the adaptive-versus-fixed comparison.
    pub adaptive_node_count: usize,
    pub adaptive_warmup: u64,
}

impl Default for SweepParams {
    fn default() -> Self {
        Self {
            replications: 10,
            node_counts: vec![2, 5, 10],
            loads: vec![0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0],
            saturation_load: 1.0,
            delay_scales: vec![0.25, 0.5, 1.0, 2.0, 4.0],
            pers: vec![0.0, 0.01, 0.05, 0.1],
            modes: (1..=6).collect(),
            esnrs: (-2..=15).map(f64::from).collect(),
            adaptive_node_count: 1,
            adaptive_warmup: 10,
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse {
            path: "<string>".into(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse {
            path: "<effective config>".into(),
            message: e.to_string(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0) || !self.duration.is_finite() {
            return Err(Error::config("duration", "must be finite and > 0"));
        }
        if self.node_count == 0 {
            return Err(Error::config("node_count", "must be >= 1"));
        }
        let t = &self.topology;
        if !(t.side > 0.0) {
            return Err(Error::config("topology.side", "must be > 0"));
        }
        if !(t.delay_scale >= 0.0) || !t.delay_scale.is_finite() {
            return Err(Error::config("topology.delay_scale", "must be finite and >= 0"));
        }
        if !t.positions.is_empty() && t.positions.len() != self.node_count {
            return Err(Error::config(
                "topology.positions",
                format!("has {} entries but node_count is {}", t.positions.len(), self.node_count),
            ));
        }
        if !(self.traffic.offered_load >= 0.0) || !self.traffic.offered_load.is_finite() {
            return Err(Error::config("traffic.offered_load", "must be finite and >= 0"));
        }
        if self.traffic.payload_bytes == 0 {
            return Err(Error::config("traffic.payload_bytes", "must be > 0"));
        }
        self.phy.validate()?;
        self.channel.validate()?;
        let m = &self.mac;
        if let SlotSetting::Seconds(s) = m.slot {
            if !(s >= 0.0) || !s.is_finite() {
                return Err(Error::config("mac.slot", "must be \"max-delay\" or seconds >= 0"));
            }
        }
        if m.t_nack > m.t_ack + m.timeout_margin {
            return Err(Error::config("mac.t_nack", "must not exceed t_ack + timeout_margin"));
        }
        if let Some(p) = m.pause_duration {
            if !(p >= 0.0) || !p.is_finite() {
                return Err(Error::config("mac.pause_duration", "must be finite and >= 0"));
            }
        }
        self.mac_config(0.0)?.validate()?;
        let s = &self.sweeps;
        if s.replications == 0 {
            return Err(Error::config("sweeps.replications", "must be >= 1"));
        }
        if s.node_counts.contains(&0) {
            return Err(Error::config("sweeps.node_counts", "entries must be >= 1"));
        }
        if s.loads.iter().chain([&s.saturation_load]).any(|l| !(*l >= 0.0)) {
            return Err(Error::config("sweeps.loads", "loads must be >= 0"));
        }
        if s.delay_scales.iter().any(|d| !(*d >= 0.0)) {
            return Err(Error::config("sweeps.delay_scales", "must be >= 0"));
        }
        if s.pers.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::config("sweeps.pers", "must lie in [0, 1]"));
        }
        if s.modes.iter().any(|m| !(1..=6).contains(m)) {
            return Err(Error::config("sweeps.modes", "must lie in 1..=6"));
        }
        if s.esnrs.iter().any(|e| !e.is_finite()) {
            return Err(Error::config("sweeps.esnrs", "must be finite"));
        }
        if s.adaptive_node_count == 0 {
            return Err(Error::config("sweeps.adaptive_node_count", "must be >= 1"));
        }
        Ok(())
    }

    /// Data airtime of every mode for the configured payload.
    pub fn data_durations(&self) -> Result<[f64; 7]> {
        let mut d = [0.0; 7];
        for (m, slot) in d.iter_mut().enumerate().skip(1) {
            *slot = self.phy.packet_duration(m as u8, self.traffic.payload_bytes)?;
        }
        Ok(d)
    }

    /// Resolve MAC parameters for a network whose largest sensor-sink
    /// delay is `max_delay`.
    pub fn mac_config(&self, max_delay: f64) -> Result<MacConfig> {
        let m = &self.mac;
        let data_durations = self.data_durations()?;
        Ok(MacConfig {
            cw_min: m.cw_min,
            cw_max: m.cw_max,
            slot: match m.slot {
                SlotSetting::Seconds(s) => s,
                SlotSetting::Keyword(SlotKeyword::MaxDelay) => max_delay,
            },
            max_retries: m.max_retries,
            policy: m.policy,
            cross_layer: m.cross_layer,
            thresholds: self.phy.thresholds,
            data_durations,
            t_control: m.t_control,
            t_ack: m.t_ack,
            t_other: m.t_other,
            max_delay,
            timeout_margin: m.timeout_margin,
            pause_duration: m.pause_duration.unwrap_or(10.0 * data_durations[1]),
            initial_mode: m.initial_mode,
        })
    }
}

/// Read, parse and validate a scenario file.
pub fn load_config(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path)?;
    ScenarioConfig::from_toml(&text).map_err(|e| match e {
        Error::Parse { message, .. } => Error::Parse {
            path: path.display().to_string(),
            message,
        },
        other => other,
    })
}
