//! Slice lifecycle and the core-network permission check.
//!
//! A UE asks the gNB for an LLM service; the gNB registers the session on the
//! service's slice, queries the core network's permission database and only
//! activates the slice for that UE on an affirmative reply.
//!
//! ```text
//! Requested --Register--> Registered --PermissionQuery--> Checking
//! Checking --PermissionReply(ok)--> Active --Release--> Released
//! Checking --PermissionReply(deny)--> Rejected
//! ```

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::SimTime;

pub const DEFAULT_CONTROL_DELAY_MS: f64 = 5.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SliceError {
    #[error("invalid transition: {state:?} cannot accept {msg:?}")]
    InvalidTransition { state: SliceState, msg: MessageKind },
    #[error("slice {0} is already registered")]
    DuplicateSlice(String),
    #[error("admitting slice {slice_id} would raise the min-share total to {total}")]
    AdmissionRejected { slice_id: String, total: f64 },
    #[error("slice {slice_id}: {reason}")]
    InvalidDescriptor { slice_id: String, reason: String },
    #[error("permissions line {line}: {reason}")]
    ParseError { line: usize, reason: String },
    #[error("duplicate permission record for ({ue_id}, {service_id})")]
    DuplicateRecord { ue_id: String, service_id: String },
}

fn is_zero(v: &i32) -> bool {
    *v == 0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SliceDescriptor {
    pub slice_id: String,
    /// Absent only for the background slice.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub service_id: Option<String>,
    pub min_share: f64,
    pub max_share: f64,
    /// Display ordering only.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub priority: i32,
}

impl SliceDescriptor {
    pub fn new(slice_id: impl Into<String>, service_id: Option<&str>, min_share: f64, max_share: f64) -> Self {
        Self {
            slice_id: slice_id.into(),
            service_id: service_id.map(str::to_string),
            min_share,
            max_share,
            priority: 0,
        }
    }

    pub fn validate(&self) -> Result<(), SliceError> {
        let ok = self.min_share.is_finite()
            && self.max_share.is_finite()
            && 0.0 <= self.min_share
            && self.min_share <= self.max_share
            && self.max_share <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(SliceError::InvalidDescriptor {
                slice_id: self.slice_id.clone(),
                reason: format!(
                    "need 0 <= min_share <= max_share <= 1, got [{}, {}]",
                    self.min_share, self.max_share
                ),
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SliceState {
    Requested,
    Registered,
    Checking,
    Active,
    Rejected,
    Released,
}

impl SliceState {
    pub const ALL: [SliceState; 6] = [
        SliceState::Requested,
        SliceState::Registered,
        SliceState::Checking,
        SliceState::Active,
        SliceState::Rejected,
        SliceState::Released,
    ];

    pub fn is_terminal(self) -> bool {
        matches!(self, SliceState::Rejected | SliceState::Released)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Verdict {
    Ok,
    Deny,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MessageKind {
    SliceRequest,
    Register,
    PermissionQuery,
    PermissionReply(Verdict),
    Activate,
    Reject,
    Release,
}

impl MessageKind {
    pub const ALL: [MessageKind; 8] = [
        MessageKind::SliceRequest,
        MessageKind::Register,
        MessageKind::PermissionQuery,
        MessageKind::PermissionReply(Verdict::Ok),
        MessageKind::PermissionReply(Verdict::Deny),
        MessageKind::Activate,
        MessageKind::Reject,
        MessageKind::Release,
    ];

    pub fn label(self) -> &'static str {
        match self {
            MessageKind::SliceRequest => "SliceRequest",
            MessageKind::Register => "Register",
            MessageKind::PermissionQuery => "PermissionQuery",
            MessageKind::PermissionReply(Verdict::Ok) => "PermissionReply(ok)",
            MessageKind::PermissionReply(Verdict::Deny) => "PermissionReply(deny)",
            MessageKind::Activate => "Activate",
            MessageKind::Reject => "Reject",
            MessageKind::Release => "Release",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlMessage {
    pub kind: MessageKind,
    pub slice_id: String,
    pub ue_id: String,
    pub t_sent: SimTime,
}

/// The complete transition table; every pair not matched here is invalid.
pub fn fsm_step(state: SliceState, msg: MessageKind) -> Result<SliceState, SliceError> {
    use MessageKind as M;
    use SliceState as S;
    match (state, msg) {
        (S::Requested, M::Register) => Ok(S::Registered),
        (S::Registered, M::PermissionQuery) => Ok(S::Checking),
        (S::Checking, M::PermissionReply(Verdict::Ok)) => Ok(S::Active),
        (S::Checking, M::PermissionReply(Verdict::Deny)) => Ok(S::Rejected),
        (S::Active, M::Release) => Ok(S::Released),
        _ => Err(SliceError::InvalidTransition { state, msg }),
    }
}

/// How [`SliceSession::apply`] treats invalid transitions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FsmPolicy {
    Strict,
    Lenient,
}

/// One UE's attachment to one slice.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceSession {
    pub slice_id: String,
    pub ue_id: String,
    pub state: SliceState,
    pub invalid_transitions: u64,
}

impl SliceSession {
    pub fn new(slice_id: impl Into<String>, ue_id: impl Into<String>) -> Self {
        Self {
            slice_id: slice_id.into(),
            ue_id: ue_id.into(),
            state: SliceState::Requested,
            invalid_transitions: 0,
        }
    }

    /// Strict mode surfaces the error; lenient mode counts it and keeps the
    /// current state.
    pub fn apply(&mut self, msg: MessageKind, policy: FsmPolicy) -> Result<SliceState, SliceError> {
        match fsm_step(self.state, msg) {
            Ok(next) => {
                self.state = next;
                Ok(next)
            }
            Err(e) => match policy {
                FsmPolicy::Strict => Err(e),
                FsmPolicy::Lenient => {
                    self.invalid_transitions += 1;
                    Ok(self.state)
                }
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermissionRecord {
    pub ue_id: String,
    pub service_id: String,
    pub allowed: bool,
    pub tier: String,
}

/// Immutable `(ue_id, service_id)` permission table.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PermissionDb {
    records: BTreeMap<(String, String), PermissionRecord>,
}

impl PermissionDb {
    pub fn from_records(records: impl IntoIterator<Item = PermissionRecord>) -> Result<Self, SliceError> {
        let mut db = PermissionDb::default();
        for r in records {
            let key = (r.ue_id.clone(), r.service_id.clone());
            if db.records.contains_key(&key) {
                return Err(SliceError::DuplicateRecord {
                    ue_id: key.0,
                    service_id: key.1,
                });
            }
            db.records.insert(key, r);
        }
        Ok(db)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, ue_id: &str, service_id: &str) -> Option<&PermissionRecord> {
        self.records.get(&(ue_id.to_string(), service_id.to_string()))
    }
}

/// Default-deny: only an explicit `allowed = true` record grants access.
pub fn authorize(db: &PermissionDb, ue_id: &str, service_id: &str) -> Verdict {
    match db.get(ue_id, service_id) {
        Some(r) if r.allowed => Verdict::Ok,
        _ => Verdict::Deny,
    }
}

const PERMISSIONS_HEADER: [&str; 4] = ["ue_id", "service_id", "allowed", "tier"];

/// Parses the permissions CSV (`ue_id,service_id,allowed,tier`). Lines
/// starting with `#` and blank lines are skipped; line numbers are 1-based.
pub fn load_permissions(text: &str) -> Result<PermissionDb, SliceError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let err = |line: u64, reason: String| SliceError::ParseError {
        line: line as usize,
        reason,
    };
    let headers = reader
        .headers()
        .map_err(|e| err(1, e.to_string()))?
        .clone();
    if headers.is_empty() {
        return Err(err(1, "missing header".into()));
    }
    if headers.iter().collect::<Vec<_>>() != PERMISSIONS_HEADER {
        return Err(err(
            headers.position().map_or(1, |p| p.line()),
            format!("expected header {:?}", PERMISSIONS_HEADER.join(",")),
        ));
    }
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| err(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != 4 {
            return Err(err(line, format!("expected 4 fields, found {}", row.len())));
        }
        if row[0].is_empty() || row[1].is_empty() {
            return Err(err(line, "ue_id and service_id must be non-empty".into()));
        }
        let allowed = match &row[2] {
            "true" => true,
            "false" => false,
            other => return Err(err(line, format!("allowed must be true or false, found {other:?}"))),
        };
        records.push(PermissionRecord {
            ue_id: row[0].to_string(),
            service_id: row[1].to_string(),
            allowed,
            tier: row[3].to_string(),
        });
    }
    PermissionDb::from_records(records)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SliceHandle(pub usize);

/// Admitted slices. The sum of admitted `min_share` never exceeds one.
#[derive(Debug, Clone, Default)]
pub struct SliceRegistry {
    slices: Vec<SliceDescriptor>,
}

impl SliceRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register_slice(&mut self, desc: SliceDescriptor) -> Result<SliceHandle, SliceError> {
        desc.validate()?;
        if self.slices.iter().any(|s| s.slice_id == desc.slice_id) {
            return Err(SliceError::DuplicateSlice(desc.slice_id));
        }
        let total = self.min_share_total() + desc.min_share;
        if total > 1.0 + 1e-9 {
            return Err(SliceError::AdmissionRejected {
                slice_id: desc.slice_id,
                total,
            });
        }
        self.slices.push(desc);
        Ok(SliceHandle(self.slices.len() - 1))
    }

    pub fn min_share_total(&self) -> f64 {
        self.slices.iter().map(|s| s.min_share).sum()
    }

    pub fn get(&self, handle: SliceHandle) -> Option<&SliceDescriptor> {
        self.slices.get(handle.0)
    }

    pub fn by_id(&self, slice_id: &str) -> Option<&SliceDescriptor> {
        self.slices.iter().find(|s| s.slice_id == slice_id)
    }

    pub fn descriptors(&self) -> &[SliceDescriptor] {
        &self.slices
    }
}
