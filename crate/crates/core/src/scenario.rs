//! Scenario documents: one strict JSON object per experiment.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mac::{ModeKind, SchedulerMode, BACKGROUND_SLICE, DEFAULT_T_DISC_MS};
use crate::radio::{LinkState, TtiConfig};
use crate::ric::{DEFAULT_ALPHA, DEFAULT_EPOCH_MS};
use crate::slicectl::{
    load_permissions, PermissionDb, PermissionRecord, SliceDescriptor, SliceError, SliceRegistry,
    DEFAULT_CONTROL_DELAY_MS,
};
use crate::workload::{ArrivalProcess, BackgroundFlow, ServiceProfile};

pub const DEFAULT_UPLINK_DELAY_MS: f64 = 10.0;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("missing key `{0}`")]
    MissingKey(String),
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("{context} references unknown {kind} `{id}`")]
    CrossRef {
        kind: &'static str,
        id: String,
        context: String,
    },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("permissions: {0}")]
    Permissions(#[from] SliceError),
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UeConfig {
    pub ue_id: String,
    pub cqi: u8,
    pub services: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrivalConfig {
    pub ue_id: String,
    pub service_id: String,
    pub rate_per_s: f64,
    #[serde(default = "one")]
    pub burst_multiplier: f64,
    #[serde(default = "default_burst_on")]
    pub burst_on_ms: f64,
    #[serde(default = "default_burst_off")]
    pub burst_off_ms: f64,
}

impl ArrivalConfig {
    pub fn process(&self) -> ArrivalProcess {
        ArrivalProcess {
            rate_per_s: self.rate_per_s,
            burst_multiplier: self.burst_multiplier,
            burst_on_ms: self.burst_on_ms,
            burst_off_ms: self.burst_off_ms,
        }
    }
}

fn one() -> f64 {
    1.0
}
fn default_burst_on() -> f64 {
    ArrivalProcess::poisson(0.0).burst_on_ms
}
fn default_burst_off() -> f64 {
    ArrivalProcess::poisson(0.0).burst_off_ms
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeConfig {
    pub kind: ModeKind,
    /// Defaults per kind when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub work_conserving: Option<bool>,
}

impl ModeConfig {
    pub fn scheduler_mode(&self) -> SchedulerMode {
        let mut m = SchedulerMode::new(self.kind);
        if let Some(wc) = self.work_conserving {
            m.work_conserving = wc;
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RicConfig {
    #[serde(default = "default_epoch")]
    pub epoch_ms: u64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

fn default_epoch() -> u64 {
    DEFAULT_EPOCH_MS
}
fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

impl Default for RicConfig {
    fn default() -> Self {
        Self {
            epoch_ms: DEFAULT_EPOCH_MS,
            alpha: DEFAULT_ALPHA,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeoutConfig {
    #[serde(default = "default_t_disc")]
    pub t_disc_ms: u64,
}

fn default_t_disc() -> u64 {
    DEFAULT_T_DISC_MS
}

impl Default for TimeoutConfig {
    fn default() -> Self {
        Self {
            t_disc_ms: DEFAULT_T_DISC_MS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelayConfig {
    /// Per control-plane hop.
    #[serde(default = "default_control_delay")]
    pub control_delay_ms: f64,
    #[serde(default = "default_uplink_delay")]
    pub uplink_delay_ms: f64,
}

fn default_control_delay() -> f64 {
    DEFAULT_CONTROL_DELAY_MS
}
fn default_uplink_delay() -> f64 {
    DEFAULT_UPLINK_DELAY_MS
}

impl Default for DelayConfig {
    fn default() -> Self {
        Self {
            control_delay_ms: DEFAULT_CONTROL_DELAY_MS,
            uplink_delay_ms: DEFAULT_UPLINK_DELAY_MS,
        }
    }
}

fn default_seeds() -> Vec<u64> {
    vec![1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub horizon_ms: u64,
    #[serde(default)]
    pub tti: TtiConfig,
    pub ues: Vec<UeConfig>,
    pub services: Vec<ServiceProfile>,
    pub slices: Vec<SliceDescriptor>,
    pub arrivals: Vec<ArrivalConfig>,
    #[serde(default)]
    pub background: Vec<BackgroundFlow>,
    pub mode: ModeConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ric: Option<RicConfig>,
    #[serde(default)]
    pub timeouts: TimeoutConfig,
    #[serde(default)]
    pub delays: DelayConfig,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Permissions CSV, relative to the scenario file. Without it every UE is
    /// allowed the services it lists.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub permissions: Option<String>,
    #[serde(skip)]
    permission_db: Option<PermissionDb>,
}

fn backtick_name(msg: &str) -> Option<String> {
    let start = msg.find('`')? + 1;
    let len = msg[start..].find('`')?;
    Some(msg[start..start + len].to_string())
}

fn map_json_error(e: serde_json::Error) -> ConfigError {
    let msg = e.to_string();
    if msg.starts_with("missing field") {
        if let Some(k) = backtick_name(&msg) {
            return ConfigError::MissingKey(k);
        }
    }
    if msg.starts_with("unknown field") {
        if let Some(k) = backtick_name(&msg) {
            return ConfigError::UnknownKey(k);
        }
    }
    // serde_json appends " at line L column C"
    let message = match msg.rfind(" at line ") {
        Some(i) => msg[..i].to_string(),
        None => msg,
    };
    ConfigError::Parse {
        line: e.line(),
        column: e.column(),
        message,
    }
}

fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

fn check_id(kind: &str, id: &str) -> Result<(), ConfigError> {
    if valid_id(id) {
        Ok(())
    } else {
        Err(ConfigError::Invalid(format!(
            "{kind} id {id:?} must be non-empty and use only [A-Za-z0-9_.-]"
        )))
    }
}

fn cross_ref(kind: &'static str, id: &str, context: String) -> ConfigError {
    ConfigError::CrossRef {
        kind,
        id: id.to_string(),
        context,
    }
}

/// Parses and fully validates a scenario document.
pub fn parse_scenario(text: &str) -> Result<Scenario, ConfigError> {
    let scenario: Scenario = serde_json::from_str(text).map_err(map_json_error)?;
    scenario.validate()?;
    Ok(scenario)
}

/// Reads a scenario file and resolves its permissions file, if any.
pub fn load_scenario(path: &Path) -> Result<Scenario, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut scenario = parse_scenario(&text)?;
    if let Some(rel) = &scenario.permissions {
        let base = path.parent().unwrap_or(Path::new("."));
        let csv_path = base.join(rel);
        let csv = std::fs::read_to_string(&csv_path).map_err(|source| ConfigError::Io {
            path: csv_path.clone(),
            source,
        })?;
        scenario.permission_db = Some(load_permissions(&csv)?);
    }
    Ok(scenario)
}

impl Scenario {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.name.trim().is_empty() {
            return invalid("name must be non-empty".into());
        }
        self.tti
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;

        let mut services = BTreeSet::new();
        for s in &self.services {
            check_id("service", &s.service_id)?;
            if !services.insert(s.service_id.as_str()) {
                return invalid(format!("duplicate service `{}`", s.service_id));
            }
            s.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }

        let mut ues: BTreeMap<&str, &UeConfig> = BTreeMap::new();
        for ue in &self.ues {
            check_id("ue", &ue.ue_id)?;
            if ues.insert(ue.ue_id.as_str(), ue).is_some() {
                return invalid(format!("duplicate ue `{}`", ue.ue_id));
            }
            LinkState::new(ue.ue_id.clone(), ue.cqi)
                .map_err(|e| ConfigError::Invalid(format!("ue `{}`: {e}", ue.ue_id)))?;
            for svc in &ue.services {
                if !services.contains(svc.as_str()) {
                    return Err(cross_ref("service", svc, format!("ue `{}`", ue.ue_id)));
                }
            }
        }

        let mut registry = SliceRegistry::new();
        let mut slice_of_service: BTreeMap<&str, &str> = BTreeMap::new();
        for d in &self.slices {
            check_id("slice", &d.slice_id)?;
            if d.slice_id == crate::mac::SHARED_POOL {
                return invalid(format!("slice id `{}` is reserved", d.slice_id));
            }
            match (&d.service_id, d.slice_id == BACKGROUND_SLICE) {
                (None, false) => {
                    return invalid(format!("slice `{}` needs a service_id", d.slice_id));
                }
                (Some(_), true) => {
                    return invalid(format!("slice `{BACKGROUND_SLICE}` must not name a service"));
                }
                (Some(svc), false) => {
                    if !services.contains(svc.as_str()) {
                        return Err(cross_ref("service", svc, format!("slice `{}`", d.slice_id)));
                    }
                    if slice_of_service.insert(svc, &d.slice_id).is_some() {
                        return invalid(format!("service `{svc}` has more than one slice"));
                    }
                }
                (None, true) => {}
            }
            registry.register_slice(d.clone()).map_err(|e| match e {
                SliceError::DuplicateSlice(id) => ConfigError::Invalid(format!("duplicate slice `{id}`")),
                other => ConfigError::Invalid(other.to_string()),
            })?;
        }

        let mut pairs = BTreeSet::new();
        for (i, a) in self.arrivals.iter().enumerate() {
            let ctx = || format!("arrivals[{i}]");
            let ue = ues
                .get(a.ue_id.as_str())
                .ok_or_else(|| cross_ref("ue", &a.ue_id, ctx()))?;
            if !services.contains(a.service_id.as_str()) {
                return Err(cross_ref("service", &a.service_id, ctx()));
            }
            if !ue.services.contains(&a.service_id) {
                return Err(cross_ref("service", &a.service_id, format!("{} (not listed by ue `{}`)", ctx(), a.ue_id)));
            }
            if !slice_of_service.contains_key(a.service_id.as_str()) {
                return Err(cross_ref("slice", &a.service_id, format!("{} (no slice serves this service)", ctx())));
            }
            if !pairs.insert((a.ue_id.as_str(), a.service_id.as_str())) {
                return invalid(format!("duplicate arrivals for ({}, {})", a.ue_id, a.service_id));
            }
            a.process()
                .validate()
                .map_err(|e| ConfigError::Invalid(format!("{}: {e}", ctx())))?;
        }

        let mut bg_ues = BTreeSet::new();
        for (i, b) in self.background.iter().enumerate() {
            if !ues.contains_key(b.ue_id.as_str()) {
                return Err(cross_ref("ue", &b.ue_id, format!("background[{i}]")));
            }
            if !bg_ues.insert(b.ue_id.as_str()) {
                return invalid(format!("ue `{}` has more than one background flow", b.ue_id));
            }
            if b.packet_bytes == 0 {
                return invalid(format!("background[{i}]: packet_bytes must be >= 1"));
            }
        }
        if !self.background.is_empty() && registry.by_id(BACKGROUND_SLICE).is_none() {
            return Err(cross_ref("slice", BACKGROUND_SLICE, "background flows".into()));
        }

        if let Some(ric) = &self.ric {
            if ric.epoch_ms == 0 || (ric.epoch_ms * 1_000) % self.tti.tti_us != 0 {
                return invalid(format!(
                    "ric.epoch_ms ({}) must be a positive multiple of the TTI ({} us)",
                    ric.epoch_ms, self.tti.tti_us
                ));
            }
            if !(ric.alpha > 0.0 && ric.alpha <= 1.0) {
                return invalid(format!("ric.alpha must be in (0, 1], got {}", ric.alpha));
            }
        }
        self.check_mode(self.mode.kind)?;

        if self.timeouts.t_disc_ms == 0 {
            return invalid("timeouts.t_disc_ms must be > 0".into());
        }
        for (k, v) in [
            ("delays.control_delay_ms", self.delays.control_delay_ms),
            ("delays.uplink_delay_ms", self.delays.uplink_delay_ms),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return invalid(format!("{k} must be finite and >= 0"));
            }
        }
        if self.seeds.is_empty() {
            return invalid("seeds must not be empty".into());
        }
        if let Some(p) = &self.permissions {
            if p.trim().is_empty() {
                return invalid("permissions path must be non-empty".into());
            }
        }
        Ok(())
    }

    fn check_mode(&self, kind: ModeKind) -> Result<(), ConfigError> {
        if kind == ModeKind::Dynamic && self.ric.is_none() {
            return Err(ConfigError::Invalid("mode dynamic requires a `ric` section".into()));
        }
        Ok(())
    }

    /// Scheduler mode after an optional override. An override to a different
    /// kind takes that kind's work-conservation default.
    pub fn resolve_mode(&self, kind: Option<ModeKind>) -> Result<SchedulerMode, ConfigError> {
        match kind {
            None => Ok(self.mode.scheduler_mode()),
            Some(k) if k == self.mode.kind => Ok(self.mode.scheduler_mode()),
            Some(k) => {
                self.check_mode(k)?;
                Ok(SchedulerMode::new(k))
            }
        }
    }

    /// A copy of the scenario running in `kind`.
    pub fn with_mode(&self, kind: ModeKind) -> Result<Scenario, ConfigError> {
        let mode = self.resolve_mode(Some(kind))?;
        let mut s = self.clone();
        s.mode = ModeConfig {
            kind: mode.kind,
            work_conserving: Some(mode.work_conserving),
        };
        Ok(s)
    }

    pub fn attach_permissions(&mut self, db: PermissionDb) {
        self.permission_db = Some(db);
    }

    /// The permissions in force: the attached database, or allow-all over each
    /// UE's listed services when the scenario names no permissions file.
    pub fn permission_db(&self) -> Result<PermissionDb, ConfigError> {
        if let Some(db) = &self.permission_db {
            return Ok(db.clone());
        }
        if let Some(p) = &self.permissions {
            return Err(ConfigError::Invalid(format!(
                "permissions file `{p}` was not loaded; use load_scenario"
            )));
        }
        let records = self.ues.iter().flat_map(|ue| {
            ue.services.iter().map(move |svc| PermissionRecord {
                ue_id: ue.ue_id.clone(),
                service_id: svc.clone(),
                allowed: true,
                tier: "standard".into(),
            })
        });
        Ok(PermissionDb::from_records(records)?)
    }

    pub fn link_states(&self) -> Vec<LinkState> {
        self.ues
            .iter()
            .map(|u| LinkState::new(u.ue_id.clone(), u.cqi).expect("validated cqi"))
            .collect()
    }

    pub fn service(&self, service_id: &str) -> Option<&ServiceProfile> {
        self.services.iter().find(|s| s.service_id == service_id)
    }

    pub fn slice_for_service(&self, service_id: &str) -> Option<&SliceDescriptor> {
        self.slices
            .iter()
            .find(|d| d.service_id.as_deref() == Some(service_id))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }
}
