//! OFDM transmission modes, packet timing, ESNR estimation, ESNR-driven
//! mode selection and the parametric packet-error-rate model.

use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Mode index 0 means "do not transmit".
pub type ModeIndex = u8;

pub const MODE_COUNT: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Modulation {
    #[serde(rename = "BPSK")]
    Bpsk,
    #[serde(rename = "QPSK")]
    Qpsk,
    #[serde(rename = "8PSK")]
    Psk8,
}

impl Modulation {
    pub fn bits_per_symbol(self) -> u32 {
        match self {
            Modulation::Bpsk => 1,
            Modulation::Qpsk => 2,
            Modulation::Psk8 => 3,
        }
    }
}

/// Convolutional code rate `num/den`, written as `"1/2"` in config files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct CodingRate {
    pub num: u32,
    pub den: u32,
}

impl CodingRate {
    pub const fn new(num: u32, den: u32) -> Self {
        Self { num, den }
    }

    pub fn value(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl fmt::Display for CodingRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

impl TryFrom<String> for CodingRate {
    type Error = String;

    fn try_from(s: String) -> std::result::Result<Self, String> {
        let (n, d) = s
            .split_once('/')
            .ok_or_else(|| format!("coding rate `{s}` is not of the form n/d"))?;
        let num: u32 = n.trim().parse().map_err(|e| format!("{e}"))?;
        let den: u32 = d.trim().parse().map_err(|e| format!("{e}"))?;
        if num == 0 || den == 0 || num > den {
            return Err(format!("coding rate `{s}` must satisfy 0 < n <= d"));
        }
        Ok(Self { num, den })
    }
}

impl From<CodingRate> for String {
    fn from(r: CodingRate) -> String {
        r.to_string()
    }
}

/// One (modulation, diversity order, coding rate) combination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransmissionMode {
    pub index: ModeIndex,
    pub modulation: Modulation,
    pub diversity_order: u32,
    pub coding_rate: CodingRate,
    /// Nominal data rate in bits per second.
    pub data_rate: f64,
}

impl TransmissionMode {
    pub fn bits_per_symbol(&self) -> u32 {
        self.modulation.bits_per_symbol()
    }

    /// Information bits carried by one OFDM block.
    pub fn bits_per_block(&self, timing: &OfdmTiming) -> f64 {
        timing.data_carriers as f64 * self.bits_per_symbol() as f64 * self.coding_rate.value()
            / self.diversity_order as f64
    }

    pub fn bits_per_frame(&self, timing: &OfdmTiming) -> f64 {
        self.bits_per_block(timing) * timing.blocks_per_frame as f64
    }
}

/// The six-mode catalog, ordered by index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModeCatalog(Vec<TransmissionMode>);

impl Default for ModeCatalog {
    fn default() -> Self {
        use Modulation::*;
        let row = |index, modulation, diversity_order, num, den, data_rate| TransmissionMode {
            index,
            modulation,
            diversity_order,
            coding_rate: CodingRate::new(num, den),
            data_rate,
        };
        Self(vec![
            row(1, Bpsk, 3, 1, 2, 658.0),
            row(2, Qpsk, 3, 1, 2, 1317.0),
            row(3, Qpsk, 1, 1, 4, 1984.0),
            row(4, Qpsk, 1, 1, 3, 2645.0),
            row(5, Qpsk, 1, 1, 2, 3967.0),
            row(6, Psk8, 1, 1, 2, 5950.0),
        ])
    }
}

impl ModeCatalog {
    pub fn new(modes: Vec<TransmissionMode>) -> Result<Self> {
        let c = Self(modes);
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.0.len() != MODE_COUNT {
            return Err(Error::config(
                "phy.modes",
                format!("expected {MODE_COUNT} modes, got {}", self.0.len()),
            ));
        }
        for (i, m) in self.0.iter().enumerate() {
            if m.index as usize != i + 1 {
                return Err(Error::config(
                    format!("phy.modes[{i}].index"),
                    format!("expected {}, got {}", i + 1, m.index),
                ));
            }
            if m.diversity_order == 0 {
                return Err(Error::config(
                    format!("phy.modes[{i}].diversity_order"),
                    "must be >= 1",
                ));
            }
            if !(m.data_rate > 0.0) {
                return Err(Error::config(format!("phy.modes[{i}].data_rate"), "must be > 0"));
            }
        }
        if self.0.windows(2).any(|w| w[1].data_rate <= w[0].data_rate) {
            return Err(Error::config(
                "phy.modes",
                "data_rate must strictly increase with mode index",
            ));
        }
        Ok(())
    }

    /// Mode by 1-based index.
    pub fn get(&self, index: ModeIndex) -> Option<&TransmissionMode> {
        (index as usize).checked_sub(1).and_then(|i| self.0.get(i))
    }

    pub fn mode(&self, index: ModeIndex) -> Result<&TransmissionMode> {
        self.get(index)
            .ok_or_else(|| Error::domain("mode index", index as f64, "must be in 1..=6"))
    }

    pub fn iter(&self) -> impl Iterator<Item = &TransmissionMode> {
        self.0.iter()
    }
}

/// OFDM numerology and the calibrated packet overheads.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OfdmTiming {
    pub symbol_duration: f64,
    pub cp_duration: f64,
    pub blocks_per_frame: u32,
    pub data_carriers: u32,
    pub pilot_carriers: u32,
    pub subcarriers: u32,
    pub preamble_duration: f64,
    /// DSSS header airtime. Calibrated with `frame_overhead` so that mode 1
    /// carrying 400 bytes lasts 5.36 s.
    pub header_duration: f64,
    /// Per-frame sync chirp plus guard interval.
    pub frame_overhead: f64,
}

impl Default for OfdmTiming {
    fn default() -> Self {
        Self {
            symbol_duration: 0.1707,
            cp_duration: 0.020,
            blocks_per_frame: 5,
            data_carriers: 768,
            pilot_carriers: 257,
            subcarriers: 1025,
            preamble_duration: 0.040,
            header_duration: 0.48,
            frame_overhead: 0.0145,
        }
    }
}

impl OfdmTiming {
    pub fn block_duration(&self) -> f64 {
        self.symbol_duration + self.cp_duration
    }

    pub fn frame_duration(&self) -> f64 {
        self.frame_overhead + self.blocks_per_frame as f64 * self.block_duration()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("phy.timing.symbol_duration", self.symbol_duration),
            ("phy.timing.preamble_duration", self.preamble_duration),
        ];
        for (field, v) in positive {
            if !(v > 0.0) {
                return Err(Error::config(field, "must be > 0"));
            }
        }
        let non_negative = [
            ("phy.timing.cp_duration", self.cp_duration),
            ("phy.timing.header_duration", self.header_duration),
            ("phy.timing.frame_overhead", self.frame_overhead),
        ];
        for (field, v) in non_negative {
            if !(v >= 0.0) {
                return Err(Error::config(field, "must be >= 0"));
            }
        }
        if self.blocks_per_frame == 0 || self.data_carriers == 0 {
            return Err(Error::config(
                "phy.timing",
                "blocks_per_frame and data_carriers must be >= 1",
            ));
        }
        Ok(())
    }
}

/// Raw OFDM block rate of a mode, before frame and packet overhead.
pub fn raw_rate(mode: &TransmissionMode, timing: &OfdmTiming) -> f64 {
    mode.bits_per_block(timing) / timing.block_duration()
}

/// Number of OFDM frames needed for `payload_bytes`.
pub fn frame_count(mode: &TransmissionMode, payload_bytes: u32, timing: &OfdmTiming) -> u32 {
    let bits = payload_bytes as f64 * 8.0;
    // bits_per_frame is integral for the catalog modes; guard rounding anyway.
    (bits / mode.bits_per_frame(timing) - 1e-9).ceil().max(1.0) as u32
}

/// Airtime of a DATA packet: preamble + header + whole OFDM frames.
pub fn packet_duration(mode: &TransmissionMode, payload_bytes: u32, timing: &OfdmTiming) -> Result<f64> {
    if payload_bytes == 0 {
        return Err(Error::domain("payload size", 0.0, "must be > 0 bytes"));
    }
    let frames = frame_count(mode, payload_bytes, timing) as f64;
    Ok(timing.preamble_duration + timing.header_duration + frames * timing.frame_duration())
}

/// Right-closed ESNR intervals mapping to modes 0..=6.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModeThresholds {
    pub boundaries: [f64; MODE_COUNT],
}

impl Default for ModeThresholds {
    fn default() -> Self {
        Self {
            boundaries: [-1.0, 1.8, 4.8, 6.8, 9.0, 13.0],
        }
    }
}

impl ModeThresholds {
    pub fn validate(&self) -> Result<()> {
        if self.boundaries.iter().any(|b| !b.is_finite())
            || self.boundaries.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(Error::config(
                "phy.thresholds",
                "boundaries must be finite and strictly increasing",
            ));
        }
        Ok(())
    }

    /// Mode whose interval `(lo, hi]` contains `esnr`; 0 below the first
    /// boundary. A value equal to a boundary selects the lower mode.
    pub fn select_mode(&self, esnr_db: f64) -> ModeIndex {
        self.boundaries.iter().filter(|b| **b < esnr_db).count() as ModeIndex
    }

    /// Lower edge of `mode`'s interval (the ESNR it needs).
    pub fn lower_edge(&self, mode: ModeIndex) -> Result<f64> {
        match mode {
            1..=6 => Ok(self.boundaries[mode as usize - 1]),
            _ => Err(Error::domain("mode index", mode as f64, "must be in 1..=6")),
        }
    }
}

/// Default ESNR reported when the residual is exactly zero.
pub const ESNR_CAP_DB: f64 = 60.0;

/// Effective SNR over the data subcarriers:
/// `10·log10(mean|ĥ·s|² / mean|z − ĥ·s|²)`, capped at `cap_db` when the
/// residual vanishes.
pub fn compute_esnr(h_hat: &[Complex64], z: &[Complex64], s: &[Complex64], cap_db: f64) -> Result<f64> {
    if h_hat.is_empty() || h_hat.len() != z.len() || z.len() != s.len() {
        return Err(Error::domain(
            "subcarrier count",
            h_hat.len() as f64,
            "h_hat, z and s must have equal nonzero length",
        ));
    }
    let mut signal = 0.0;
    let mut residual = 0.0;
    for ((h, z), s) in h_hat.iter().zip(z).zip(s) {
        let hs = h * s;
        signal += hs.norm_sqr();
        residual += (z - hs).norm_sqr();
    }
    if residual <= 0.0 {
        return Ok(cap_db);
    }
    // Means share the same divisor, so the ratio of sums is the ratio of means.
    Ok((10.0 * (signal / residual).log10()).min(cap_db))
}

/// Exponential-in-dB waterfall anchored at PER = 10⁻² on each mode's
/// lower ESNR edge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerModel {
    /// Waterfall steepness in decades of PER per dB.
    pub slope: f64,
    /// PER at the anchor.
    pub anchor_per: f64,
}

impl Default for PerModel {
    fn default() -> Self {
        Self {
            slope: 2.0,
            anchor_per: 1e-2,
        }
    }
}

impl PerModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.slope > 0.0) {
            return Err(Error::config("phy.per.slope", "must be > 0"));
        }
        if !(self.anchor_per > 0.0 && self.anchor_per <= 1.0) {
            return Err(Error::config("phy.per.anchor_per", "must be in (0, 1]"));
        }
        Ok(())
    }

    pub fn per(&self, mode: ModeIndex, esnr_db: f64, thresholds: &ModeThresholds) -> Result<f64> {
        let anchor = thresholds.lower_edge(mode)?;
        let exponent = self.anchor_per.log10() - self.slope * (esnr_db - anchor);
        Ok(10f64.powf(exponent).min(1.0))
    }
}

/// Everything the PHY layer needs, as it appears in a scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct PhyParams {
    pub timing: OfdmTiming,
    pub modes: ModeCatalog,
    pub thresholds: ModeThresholds,
    pub per: PerModel,
    pub esnr_cap: EsnrCap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EsnrCap(pub f64);

impl Default for EsnrCap {
    fn default() -> Self {
        Self(ESNR_CAP_DB)
    }
}

impl PhyParams {
    pub fn validate(&self) -> Result<()> {
        self.timing.validate()?;
        self.modes.validate()?;
        self.thresholds.validate()?;
        self.per.validate()
    }

    pub fn packet_duration(&self, mode: ModeIndex, payload_bytes: u32) -> Result<f64> {
        packet_duration(self.modes.mode(mode)?, payload_bytes, &self.timing)
    }

    pub fn select_mode(&self, esnr_db: f64) -> ModeIndex {
        self.thresholds.select_mode(esnr_db)
    }

    pub fn per(&self, mode: ModeIndex, esnr_db: f64) -> Result<f64> {
        self.per.per(mode, esnr_db, &self.thresholds)
    }
}
