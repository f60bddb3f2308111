//! Scenario configuration (JSON, `"schema_version": 1`).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{ChannelError, ChannelParams};
use crate::fec_framing::{FecScheme, Interleaver, FRAME_OVERHEAD, MAX_PAYLOAD};
use crate::phy::{PhyError, PhyParams};
use crate::transport::{MAX_PAYLOAD_SIZE, MIN_PAYLOAD_SIZE};

pub const SCHEMA_VERSION: u32 = 1;
/// Length of the padding-count field at the start of every frame payload.
pub const PAD_FIELD_LEN: usize = 2;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed config: {0}")]
    Parse(String),
    #[error("unsupported schema_version {0} (expected {SCHEMA_VERSION})")]
    SchemaVersion(u32),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Phy(#[from] PhyError),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FecConfig {
    pub scheme: FecScheme,
    #[serde(default)]
    pub interleaver: Interleaver,
}

impl Default for FecConfig {
    fn default() -> Self {
        Self { scheme: FecScheme::Hamming74, interleaver: Interleaver::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SourceKind {
    /// Directory of binary PGM frames.
    Pgm { path: PathBuf },
    /// Any file, sent as an uninterpreted byte stream.
    Opaque { path: PathBuf },
    /// Built-in moving test pattern.
    Synthetic { width: usize, height: usize, frames: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceConfig {
    #[serde(flatten)]
    pub kind: SourceKind,
    pub fps: f64,
    pub payload_size: usize,
}

/// Live-tunable parameters. Absent fields keep their current value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamUpdate {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cn2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wind_speed: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attenuation_db_per_km: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pointing_jitter_sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_sigma: Option<f64>,
}

impl ParamUpdate {
    /// Applies every field or none of them.
    pub fn apply(&self, channel: &ChannelParams, phy: &PhyParams) -> Result<(ChannelParams, PhyParams), ConfigError> {
        let mut channel = channel.clone();
        let mut phy = phy.clone();
        if let Some(v) = self.cn2 {
            channel.cn2 = v;
        }
        if let Some(v) = self.wind_speed {
            channel.wind_speed = v;
        }
        if let Some(v) = self.attenuation_db_per_km {
            channel.attenuation_db_per_km = v;
        }
        if let Some(v) = self.pointing_jitter_sigma {
            channel.pointing_jitter_sigma = v;
        }
        if let Some(v) = self.noise_sigma {
            phy.noise_sigma = v;
        }
        channel.validate()?;
        phy.validate()?;
        Ok((channel, phy))
    }
}

/// Values of the live-tunable parameters during a report interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamsInEffect {
    pub cn2: f64,
    pub wind_speed: f64,
    pub attenuation_db_per_km: f64,
    pub pointing_jitter_sigma: f64,
    pub noise_sigma: f64,
}

impl ParamsInEffect {
    pub fn of(channel: &ChannelParams, phy: &PhyParams) -> Self {
        Self {
            cn2: channel.cn2,
            wind_speed: channel.wind_speed,
            attenuation_db_per_km: channel.attenuation_db_per_km,
            pointing_jitter_sigma: channel.pointing_jitter_sigma,
            noise_sigma: phy.noise_sigma,
        }
    }
}

/// Update replayed in batch mode at the first tick boundary at or after
/// `at` seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduledUpdate {
    pub at: f64,
    pub set: ParamUpdate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub channel: ChannelParams,
    pub phy: PhyParams,
    #[serde(default)]
    pub fec: FecConfig,
    pub source: SourceConfig,
    /// Simulated seconds.
    pub duration: f64,
    pub seed: u64,
    pub report_interval: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub updates: Vec<ScheduledUpdate>,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let raw: serde_json::Value = serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        match raw.get("schema_version").and_then(|v| v.as_u64()) {
            Some(v) if v == SCHEMA_VERSION as u64 => {}
            Some(v) => return Err(ConfigError::SchemaVersion(v as u32)),
            None => return Err(ConfigError::Parse("missing schema_version".into())),
        }
        let config: Self = serde_json::from_value(raw).map_err(|e| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads a config; relative source paths resolve against the config
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        let mut config = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        match &mut config.source.kind {
            SourceKind::Pgm { path } | SourceKind::Opaque { path } if path.is_relative() => {
                *path = base.join(&*path);
            }
            _ => {}
        }
        Ok(config)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |msg: String| Err(ConfigError::Invalid(msg));
        if self.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::SchemaVersion(self.schema_version));
        }
        self.channel.validate()?;
        self.phy.validate()?;
        self.fec.scheme.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.fec.interleaver.rows == 0 || self.fec.interleaver.cols == 0 {
            return invalid("interleaver rows and cols must be positive".into());
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return invalid(format!("duration must be > 0, got {}", self.duration));
        }
        if !(self.report_interval > 0.0 && self.report_interval <= self.duration) {
            return invalid(format!(
                "report_interval must lie in (0, duration], got {}",
                self.report_interval
            ));
        }
        if self.report_interval < self.channel.tick_interval {
            return invalid("report_interval is shorter than one tick".into());
        }
        if !(self.source.fps > 0.0 && self.source.fps.is_finite()) {
            return invalid(format!("fps must be > 0, got {}", self.source.fps));
        }
        if !(MIN_PAYLOAD_SIZE..=MAX_PAYLOAD_SIZE).contains(&self.source.payload_size) {
            return invalid(format!(
                "payload_size must lie in [{MIN_PAYLOAD_SIZE}, {MAX_PAYLOAD_SIZE}], got {}",
                self.source.payload_size
            ));
        }
        if let SourceKind::Synthetic { width, height, frames } = self.source.kind {
            if width == 0 || height == 0 || frames == 0 {
                return invalid("synthetic source needs nonzero width, height and frames".into());
            }
        }
        let plan = LinkPlan::new(self);
        if plan.frame_payload_len > MAX_PAYLOAD {
            return invalid(format!(
                "payload_size {} plus padding needs a {}-byte frame payload (max {MAX_PAYLOAD})",
                self.source.payload_size, plan.frame_payload_len
            ));
        }
        let mut state = (self.channel.clone(), self.phy.clone());
        let mut last = 0.0;
        for u in &self.updates {
            if !(u.at >= last && u.at.is_finite()) {
                return invalid("scheduled updates must have nondecreasing, finite `at`".into());
            }
            last = u.at;
            state = u.set.apply(&state.0, &state.1)?;
        }
        Ok(())
    }

    pub fn total_ticks(&self) -> u64 {
        (self.duration / self.channel.tick_interval).round() as u64
    }

    pub fn ticks_per_report(&self) -> u64 {
        ((self.report_interval / self.channel.tick_interval).round() as u64).max(1)
    }

    /// Canonical "low turbulence with 1 m/s wind" scenario on the desk-scale
    /// synthetic source (10 s of 192x108 frames at 60 fps).
    pub fn canonical_low() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            channel: ChannelParams::low_turbulence(),
            phy: PhyParams::default(),
            fec: FecConfig::default(),
            source: SourceConfig {
                kind: SourceKind::Synthetic { width: 192, height: 108, frames: 600 },
                fps: 60.0,
                payload_size: 1024,
            },
            duration: CANONICAL_DURATION,
            seed: 42,
            report_interval: 1.0,
            updates: Vec::new(),
        }
    }

    /// Canonical "high turbulence with 6 m/s wind" scenario.
    pub fn canonical_high() -> Self {
        Self { channel: ChannelParams::high_turbulence(), ..Self::canonical_low() }
    }
}

/// Simulated seconds needed to drain the canonical source at 248 kb/s with
/// Hamming(7,4), rounded up.
pub const CANONICAL_DURATION: f64 = 730.0;

/// Sizes derived from a config that both link ends agree on.
///
/// Every frame carries a fixed-length payload `[pad: u16 BE][data][zeros]`
/// so that bursts have one constant on-air length; `pad` counts the zero
/// bytes. The zero fill also aligns the coded burst to whole interleaver
/// blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinkPlan {
    pub payload_size: usize,
    pub frame_payload_len: usize,
    pub frame_len: usize,
    pub burst_bits: usize,
}

impl LinkPlan {
    pub fn new(config: &ScenarioConfig) -> Self {
        let (k, n) = config.fec.scheme.block();
        let block = config.fec.interleaver.block_len().max(1);
        let payload_size = config.source.payload_size;
        let coded = |frame_len: usize| frame_len * 8 / k * n;
        let mut frame_payload_len = PAD_FIELD_LEN + payload_size;
        while coded(FRAME_OVERHEAD + frame_payload_len) % block != 0 {
            frame_payload_len += 1;
        }
        let frame_len = FRAME_OVERHEAD + frame_payload_len;
        Self { payload_size, frame_payload_len, frame_len, burst_bits: coded(frame_len) }
    }

    /// Wraps a data chunk into the fixed-length frame payload.
    pub fn pad_payload(&self, chunk: &[u8]) -> Vec<u8> {
        let pad = self.frame_payload_len - PAD_FIELD_LEN - chunk.len();
        let mut out = Vec::with_capacity(self.frame_payload_len);
        out.extend_from_slice(&(pad as u16).to_be_bytes());
        out.extend_from_slice(chunk);
        out.resize(self.frame_payload_len, 0);
        out
    }

    /// Inverse of [`pad_payload`](Self::pad_payload); `None` if the pad
    /// field is inconsistent with the payload length.
    pub fn unpad_payload<'a>(&self, payload: &'a [u8]) -> Option<&'a [u8]> {
        if payload.len() < PAD_FIELD_LEN {
            return None;
        }
        let pad = u16::from_be_bytes([payload[0], payload[1]]) as usize;
        let end = payload.len().checked_sub(pad)?;
        (end >= PAD_FIELD_LEN).then(|| &payload[PAD_FIELD_LEN..end])
    }
}
