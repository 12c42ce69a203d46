//! Downlink resource grid and the CQI rate map.
//!
//! The rate map is linear, 12 bytes per PRB per CQI step, and channel quality
//! is static per UE for a whole run.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const BYTES_PER_CQI_STEP: u32 = 12;
pub const MIN_CQI: u8 = 1;
pub const MAX_CQI: u8 = 15;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RadioError {
    #[error("CQI {0} outside 1..=15")]
    InvalidCqi(u8),
    #[error("invalid TTI configuration: {0}")]
    InvalidTti(&'static str),
}

fn default_tti_us() -> u64 {
    1_000
}

fn default_n_prb() -> u32 {
    100
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TtiConfig {
    #[serde(default = "default_tti_us")]
    pub tti_us: u64,
    #[serde(default = "default_n_prb")]
    pub n_prb: u32,
}

impl Default for TtiConfig {
    fn default() -> Self {
        Self {
            tti_us: default_tti_us(),
            n_prb: default_n_prb(),
        }
    }
}

impl TtiConfig {
    pub fn validate(&self) -> Result<(), RadioError> {
        if self.tti_us == 0 {
            return Err(RadioError::InvalidTti("tti_us must be > 0"));
        }
        if self.n_prb == 0 {
            return Err(RadioError::InvalidTti("n_prb must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkState {
    pub ue_id: String,
    pub cqi: u8,
}

impl LinkState {
    pub fn new(ue_id: impl Into<String>, cqi: u8) -> Result<Self, RadioError> {
        bytes_per_prb(cqi)?;
        Ok(Self {
            ue_id: ue_id.into(),
            cqi,
        })
    }

    pub fn bytes_per_prb(&self) -> u32 {
        self.cqi as u32 * BYTES_PER_CQI_STEP
    }
}

pub fn bytes_per_prb(cqi: u8) -> Result<u32, RadioError> {
    if !(MIN_CQI..=MAX_CQI).contains(&cqi) {
        return Err(RadioError::InvalidCqi(cqi));
    }
    Ok(cqi as u32 * BYTES_PER_CQI_STEP)
}

pub fn tti_capacity(n_prb: u32, cqi: u8) -> Result<u64, RadioError> {
    Ok(n_prb as u64 * bytes_per_prb(cqi)? as u64)
}

/// TTIs needed to drain `payload_bytes` with a fixed grant of `n_prb` PRBs.
pub fn drain_ttis(payload_bytes: u64, n_prb: u32, cqi: u8) -> Result<u64, RadioError> {
    let cap = tti_capacity(n_prb, cqi)?;
    if cap == 0 {
        return Err(RadioError::InvalidTti("n_prb must be >= 1"));
    }
    Ok(payload_bytes.div_ceil(cap))
}
