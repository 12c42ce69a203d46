//! gNB downlink MAC with per-slice PRB partitions.
//!
//! Every TTI the PRB pool is split between slices by largest-remainder
//! rounding of the current quota vector, each slice hands out its PRBs
//! round-robin over its backlogged queues, and (when work-conserving) leftover
//! PRBs are re-offered to any queue that still has unmet backlog. Queues are
//! keyed by `(ue_id, slice_id)`; in shared mode they all live in one pool.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::SimTime;
use crate::metrics::DeliveryRecord;
use crate::radio::LinkState;

/// Group name of the single scheduling pool used in shared mode.
pub const SHARED_POOL: &str = "shared";
/// Slice that carries background flows in static and dynamic modes.
pub const BACKGROUND_SLICE: &str = "background";
pub const DEFAULT_T_DISC_MS: u64 = 2_000;
pub const TIMEOUT_CHECK_PERIOD_MS: u64 = 100;

const SHARE_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MacError {
    #[error("invalid quota vector: {0}")]
    InvalidQuota(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeKind {
    Shared,
    Static,
    Dynamic,
}

impl ModeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModeKind::Shared => "shared",
            ModeKind::Static => "static",
            ModeKind::Dynamic => "dynamic",
        }
    }

    /// Work conservation is off for the static baseline and on for dynamic.
    pub fn default_work_conserving(self) -> bool {
        matches!(self, ModeKind::Dynamic)
    }
}

impl std::fmt::Display for ModeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ModeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "shared" => Ok(ModeKind::Shared),
            "static" => Ok(ModeKind::Static),
            "dynamic" => Ok(ModeKind::Dynamic),
            other => Err(format!("unknown scheduler mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchedulerMode {
    pub kind: ModeKind,
    pub work_conserving: bool,
}

impl SchedulerMode {
    pub fn new(kind: ModeKind) -> Self {
        Self {
            kind,
            work_conserving: kind.default_work_conserving(),
        }
    }
}

/// Fraction of the PRB pool assigned to each slice.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QuotaVector(BTreeMap<String, f64>);

impl QuotaVector {
    pub fn new(entries: BTreeMap<String, f64>) -> Self {
        Self(entries)
    }

    pub fn single(slice_id: impl Into<String>, share: f64) -> Self {
        Self(BTreeMap::from([(slice_id.into(), share)]))
    }

    pub fn get(&self, slice_id: &str) -> Option<f64> {
        self.0.get(slice_id).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &f64)> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.0.values().sum()
    }

    pub fn validate(&self) -> Result<(), MacError> {
        for (id, share) in &self.0 {
            if !(share.is_finite() && (0.0..=1.0).contains(share)) {
                return Err(MacError::InvalidQuota(format!(
                    "share of {id} is {share}, expected a value in [0, 1]"
                )));
            }
        }
        let total = self.total();
        if total > 1.0 + SHARE_EPS {
            return Err(MacError::InvalidQuota(format!("shares sum to {total} > 1")));
        }
        Ok(())
    }
}

impl FromIterator<(String, f64)> for QuotaVector {
    fn from_iter<I: IntoIterator<Item = (String, f64)>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

/// Largest-remainder rounding of `share * n_prb`; remainder ties go to the
/// lower slice id.
pub fn partition_prbs(quota: &QuotaVector, n_prb: u32) -> Result<BTreeMap<String, u32>, MacError> {
    quota.validate()?;
    let exact: Vec<(&String, f64)> = quota.iter().map(|(id, s)| (id, s * n_prb as f64)).collect();
    let mut counts: BTreeMap<String, u32> = exact
        .iter()
        .map(|(id, x)| ((*id).clone(), (x + SHARE_EPS).floor() as u32))
        .collect();
    let seats = ((exact.iter().map(|(_, x)| x).sum::<f64>() + SHARE_EPS).floor() as u32).min(n_prb);
    let assigned: u32 = counts.values().sum();
    let mut leftover = seats.saturating_sub(assigned);

    let mut order: Vec<(&String, f64)> = exact
        .iter()
        .map(|(id, x)| (*id, x - (x + SHARE_EPS).floor()))
        .collect();
    // BTreeMap iteration already gives ascending ids; a stable sort keeps them
    // as the tie-break among equal remainders.
    order.sort_by(|a, b| {
        if (a.1 - b.1).abs() <= SHARE_EPS {
            std::cmp::Ordering::Equal
        } else {
            b.1.total_cmp(&a.1)
        }
    });
    for (id, _) in order {
        if leftover == 0 {
            break;
        }
        *counts.get_mut(id).expect("id from quota") += 1;
        leftover -= 1;
    }
    Ok(counts)
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct QueueKey {
    pub ue_id: String,
    pub slice_id: String,
}

impl QueueKey {
    pub fn new(ue_id: impl Into<String>, slice_id: impl Into<String>) -> Self {
        Self {
            ue_id: ue_id.into(),
            slice_id: slice_id.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    /// `None` for background packets.
    pub request_id: Option<u64>,
    pub bytes: u64,
    pub t_enqueued: SimTime,
}

#[derive(Debug, Clone)]
pub struct UeQueue {
    pub key: QueueKey,
    pub group: String,
    segments: VecDeque<Segment>,
    backlog: u64,
}

impl UeQueue {
    fn new(key: QueueKey, group: String) -> Self {
        Self {
            key,
            group,
            segments: VecDeque::new(),
            backlog: 0,
        }
    }

    pub fn backlog(&self) -> u64 {
        self.backlog
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn segments(&self) -> impl Iterator<Item = &Segment> {
        self.segments.iter()
    }

    pub fn hol_wait_start(&self) -> Option<SimTime> {
        self.segments.front().map(|s| s.t_enqueued)
    }

    pub fn push(&mut self, segment: Segment) {
        debug_assert!(segment.bytes > 0);
        self.backlog += segment.bytes;
        self.segments.push_back(segment);
    }

    /// Drains up to `budget` bytes in FIFO order, returning per-segment pieces.
    fn drain(&mut self, mut budget: u64) -> Vec<(Option<u64>, u64)> {
        let mut out: Vec<(Option<u64>, u64)> = Vec::new();
        while budget > 0 {
            let Some(head) = self.segments.front_mut() else {
                break;
            };
            let take = head.bytes.min(budget);
            head.bytes -= take;
            budget -= take;
            self.backlog -= take;
            match out.last_mut() {
                Some((id, b)) if *id == head.request_id => *b += take,
                _ => out.push((head.request_id, take)),
            }
            if head.bytes == 0 {
                self.segments.pop_front();
            }
        }
        out
    }

    /// Removes every segment of `request_id`, returning the purged bytes.
    fn purge_request(&mut self, request_id: u64) -> u64 {
        let mut purged = 0;
        self.segments.retain(|s| {
            if s.request_id == Some(request_id) {
                purged += s.bytes;
                false
            } else {
                true
            }
        });
        self.backlog -= purged;
        purged
    }

    fn pop_head(&mut self) -> Option<Segment> {
        let seg = self.segments.pop_front()?;
        self.backlog -= seg.bytes;
        Some(seg)
    }
}

/// All downlink queues plus the scheduling groups and their round-robin
/// cursors.
#[derive(Debug, Clone, Default)]
pub struct QueueSet {
    queues: BTreeMap<QueueKey, UeQueue>,
    groups: BTreeMap<String, Vec<QueueKey>>,
    cursors: BTreeMap<String, usize>,
}

impl QueueSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a queue in a scheduling group. Members stay sorted by key.
    pub fn add_queue(&mut self, key: QueueKey, group: impl Into<String>) {
        let group = group.into();
        if self.queues.contains_key(&key) {
            return;
        }
        let members = self.groups.entry(group.clone()).or_default();
        let pos = members.binary_search(&key).unwrap_or_else(|p| p);
        members.insert(pos, key.clone());
        self.cursors.entry(group.clone()).or_insert(0);
        self.queues.insert(key.clone(), UeQueue::new(key, group));
    }

    pub fn get(&self, key: &QueueKey) -> Option<&UeQueue> {
        self.queues.get(key)
    }

    pub fn get_mut(&mut self, key: &QueueKey) -> Option<&mut UeQueue> {
        self.queues.get_mut(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = &UeQueue> {
        self.queues.values()
    }

    pub fn groups(&self) -> impl Iterator<Item = (&String, &Vec<QueueKey>)> {
        self.groups.iter()
    }

    pub fn cursor(&self, group: &str) -> usize {
        self.cursors.get(group).copied().unwrap_or(0)
    }

    pub fn total_backlog(&self) -> u64 {
        self.queues.values().map(|q| q.backlog).sum()
    }
}

/// Per-UE bytes-per-PRB lookup.
#[derive(Debug, Clone, Default)]
pub struct LinkTable(BTreeMap<String, u32>);

impl LinkTable {
    pub fn new(links: &[LinkState]) -> Self {
        Self(
            links
                .iter()
                .map(|l| (l.ue_id.clone(), l.bytes_per_prb()))
                .collect(),
        )
    }

    pub fn bytes_per_prb(&self, ue_id: &str) -> u32 {
        self.0
            .get(ue_id)
            .copied()
            .unwrap_or_else(|| panic!("no link state for UE {ue_id}"))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TtiAllocation {
    pub tti_index: u64,
    pub grants: BTreeMap<QueueKey, u32>,
    /// Keyed by the queue's slice id (not the scheduling group).
    pub per_slice_used: BTreeMap<String, u32>,
    /// Payload-carrying PRBs per granted queue.
    pub per_queue_used: BTreeMap<QueueKey, u32>,
}

impl TtiAllocation {
    pub fn total_granted(&self) -> u32 {
        self.grants.values().sum()
    }

    pub fn total_used(&self) -> u32 {
        self.per_slice_used.values().sum()
    }

    pub fn granted_to_slice(&self, slice_id: &str) -> u32 {
        self.grants
            .iter()
            .filter(|(k, _)| k.slice_id == slice_id)
            .map(|(_, g)| g)
            .sum()
    }
}

fn unmet(queue: &UeQueue, granted: u32, bpp: u32) -> bool {
    queue.backlog > granted as u64 * bpp as u64
}

/// Round-robin PRB grants within each scheduling group.
///
/// PRBs go out one at a time starting at the group's cursor; a queue is
/// skipped once its backlog fits the PRBs it already holds. The cursor moves
/// to the member after the last one served.
pub fn schedule_tti(
    queues: &mut QueueSet,
    partition: &BTreeMap<String, u32>,
    links: &LinkTable,
    tti_index: u64,
) -> TtiAllocation {
    let mut alloc = TtiAllocation {
        tti_index,
        ..Default::default()
    };
    for (group, members) in &queues.groups {
        let budget = partition.get(group).copied().unwrap_or(0);
        if budget == 0 || members.is_empty() {
            continue;
        }
        let n = members.len();
        let mut grants = vec![0u32; n];
        let bpp: Vec<u32> = members
            .iter()
            .map(|k| links.bytes_per_prb(&k.ue_id))
            .collect();
        let mut idx = queues.cursors.get(group).copied().unwrap_or(0) % n;
        let mut last = None;
        let mut remaining = budget;
        'outer: while remaining > 0 {
            let mut probed = 0;
            while !unmet(&queues.queues[&members[idx]], grants[idx], bpp[idx]) {
                idx = (idx + 1) % n;
                probed += 1;
                if probed == n {
                    break 'outer;
                }
            }
            grants[idx] += 1;
            remaining -= 1;
            last = Some(idx);
            idx = (idx + 1) % n;
        }
        if let Some(l) = last {
            queues.cursors.insert(group.clone(), (l + 1) % n);
        }
        for (k, g) in members.iter().zip(grants) {
            if g > 0 {
                alloc.grants.insert(k.clone(), g);
            }
        }
    }
    alloc
}

/// Re-offers PRBs left idle after [`schedule_tti`] to queues with unmet
/// backlog, one PRB at a time in ascending `(slice_id, ue_id)` order. The
/// starting candidate rotates with the TTI index. No-op unless
/// `work_conserving`.
pub fn reclaim_unused(
    mut alloc: TtiAllocation,
    n_prb: u32,
    queues: &QueueSet,
    links: &LinkTable,
    work_conserving: bool,
) -> TtiAllocation {
    if !work_conserving {
        return alloc;
    }
    let mut spare = n_prb.saturating_sub(alloc.total_granted());
    if spare == 0 {
        return alloc;
    }
    let mut candidates: Vec<(&QueueKey, u32, u32)> = queues
        .queues
        .values()
        .filter_map(|q| {
            let bpp = links.bytes_per_prb(&q.key.ue_id);
            let g = alloc.grants.get(&q.key).copied().unwrap_or(0);
            unmet(q, g, bpp).then_some((&q.key, g, bpp))
        })
        .collect();
    if candidates.is_empty() {
        return alloc;
    }
    candidates.sort_by(|a, b| (&a.0.slice_id, &a.0.ue_id).cmp(&(&b.0.slice_id, &b.0.ue_id)));

    let n = candidates.len();
    let mut idx = (alloc.tti_index % n as u64) as usize;
    'outer: while spare > 0 {
        let mut probed = 0;
        loop {
            let (key, g, bpp) = candidates[idx];
            if unmet(&queues.queues[key], g, bpp) {
                break;
            }
            idx = (idx + 1) % n;
            probed += 1;
            if probed == n {
                break 'outer;
            }
        }
        candidates[idx].1 += 1;
        spare -= 1;
        idx = (idx + 1) % n;
    }
    for (key, g, _) in candidates {
        if g > 0 {
            alloc.grants.insert(key.clone(), g);
        }
    }
    alloc
}

/// Bytes moved from one queue in one TTI for one request (or background).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DrainedBytes {
    pub key: QueueKey,
    pub request_id: Option<u64>,
    pub bytes: u64,
}

/// Drains each granted queue by `min(backlog, prbs * bytes_per_prb)` and
/// records payload-carrying PRBs (ceiling of drained bytes over bytes per PRB)
/// in `per_slice_used`.
pub fn deliver(
    queues: &mut QueueSet,
    alloc: &mut TtiAllocation,
    links: &LinkTable,
) -> Vec<DrainedBytes> {
    let mut out = Vec::new();
    alloc.per_slice_used.clear();
    alloc.per_queue_used.clear();
    for (key, &prbs) in &alloc.grants {
        let bpp = links.bytes_per_prb(&key.ue_id) as u64;
        let queue = queues.queues.get_mut(key).expect("granted queue exists");
        let pieces = queue.drain(prbs as u64 * bpp);
        let drained: u64 = pieces.iter().map(|(_, b)| b).sum();
        if drained > 0 {
            let used = drained.div_ceil(bpp) as u32;
            *alloc.per_slice_used.entry(key.slice_id.clone()).or_insert(0) += used;
            alloc.per_queue_used.insert(key.clone(), used);
        }
        out.extend(pieces.into_iter().map(|(request_id, bytes)| DrainedBytes {
            key: key.clone(),
            request_id,
            bytes,
        }));
    }
    out
}

/// A head-of-line expiry found by [`check_timeouts`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Expiry {
    pub key: QueueKey,
    /// `None` when a background packet expired.
    pub request_id: Option<u64>,
    pub bytes_purged: u64,
}

/// Purges every queue head that has waited strictly longer than `t_disc_us`.
/// A request at the head loses all of its queued segments at once; the scan
/// repeats on the new head.
pub fn check_timeouts(queues: &mut QueueSet, now: SimTime, t_disc_us: u64) -> Vec<Expiry> {
    let mut out = Vec::new();
    for queue in queues.queues.values_mut() {
        while let Some(head) = queue.segments.front() {
            if now.since(head.t_enqueued) <= t_disc_us {
                break;
            }
            match head.request_id {
                Some(rid) => {
                    let purged = queue.purge_request(rid);
                    out.push(Expiry {
                        key: queue.key.clone(),
                        request_id: Some(rid),
                        bytes_purged: purged,
                    });
                }
                None => {
                    let seg = queue.pop_head().expect("head exists");
                    out.push(Expiry {
                        key: queue.key.clone(),
                        request_id: None,
                        bytes_purged: seg.bytes,
                    });
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Disconnection {
    pub request_id: u64,
    pub ue_id: String,
    pub slice_id: String,
    pub t_abort: SimTime,
    pub bytes_undelivered: u64,
    pub bytes_wasted: u64,
}

#[derive(Debug, Clone)]
pub struct StreamState {
    pub request_id: u64,
    pub key: QueueKey,
    pub t_arrival: SimTime,
    pub total_bytes: u64,
    pub enqueued_bytes: u64,
    pub delivered_bytes: u64,
    pub t_first_byte: Option<SimTime>,
    pub t_complete: Option<SimTime>,
    pub t_abort: Option<SimTime>,
}

impl StreamState {
    pub fn is_open(&self) -> bool {
        self.t_complete.is_none() && self.t_abort.is_none()
    }
}

/// Per-slice counters accumulated between two RIC epochs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SliceWindow {
    pub arrived_bytes: u64,
    pub delivered_bytes: u64,
    pub purged_bytes: u64,
    pub backlog_start_bytes: u64,
    pub disconnects: u64,
    pub completed_responses: u64,
    pub completed_response_bytes: u64,
}

/// Result of one TTI.
#[derive(Debug, Clone, Default)]
pub struct TtiOutcome {
    pub allocation: TtiAllocation,
    pub first_bytes: Vec<u64>,
    pub completions: Vec<u64>,
}

/// The stateful scheduler used by the run loop.
#[derive(Debug, Clone)]
pub struct Mac {
    pub mode: SchedulerMode,
    pub n_prb: u32,
    pub tti_us: u64,
    pub t_disc_us: u64,
    queues: QueueSet,
    links: LinkTable,
    streams: BTreeMap<u64, StreamState>,
    open_streams: BTreeSet<u64>,
    windows: BTreeMap<String, SliceWindow>,
}

impl Mac {
    pub fn new(
        mode: SchedulerMode,
        n_prb: u32,
        tti_us: u64,
        t_disc_us: u64,
        links: &[LinkState],
    ) -> Self {
        Self {
            mode,
            n_prb,
            tti_us,
            t_disc_us,
            queues: QueueSet::new(),
            links: LinkTable::new(links),
            streams: BTreeMap::new(),
            open_streams: BTreeSet::new(),
            windows: BTreeMap::new(),
        }
    }

    /// Scheduling group for a queue of `slice_id` under the current mode.
    pub fn group_for(&self, slice_id: &str) -> String {
        match self.mode.kind {
            ModeKind::Shared => SHARED_POOL.to_string(),
            _ => slice_id.to_string(),
        }
    }

    pub fn add_queue(&mut self, key: QueueKey) {
        let group = self.group_for(&key.slice_id);
        self.windows.entry(key.slice_id.clone()).or_default();
        self.queues.add_queue(key, group);
    }

    pub fn queues(&self) -> &QueueSet {
        &self.queues
    }

    pub fn links(&self) -> &LinkTable {
        &self.links
    }

    pub fn stream(&self, request_id: u64) -> Option<&StreamState> {
        self.streams.get(&request_id)
    }

    pub fn streams(&self) -> impl Iterator<Item = &StreamState> {
        self.streams.values()
    }

    pub fn open_stream(&mut self, request_id: u64, key: QueueKey, t_arrival: SimTime, total_bytes: u64) {
        self.streams.insert(
            request_id,
            StreamState {
                request_id,
                key,
                t_arrival,
                total_bytes,
                enqueued_bytes: 0,
                delivered_bytes: 0,
                t_first_byte: None,
                t_complete: None,
                t_abort: None,
            },
        );
        self.open_streams.insert(request_id);
    }

    /// Queues a token payload. Returns false if the stream was already aborted.
    pub fn enqueue_token(&mut self, request_id: u64, bytes: u64, now: SimTime) -> bool {
        let Some(stream) = self.streams.get_mut(&request_id) else {
            return false;
        };
        if stream.t_abort.is_some() || bytes == 0 {
            return false;
        }
        stream.enqueued_bytes += bytes;
        let key = stream.key.clone();
        self.windows.entry(key.slice_id.clone()).or_default().arrived_bytes += bytes;
        self.queues
            .get_mut(&key)
            .expect("stream queue registered")
            .push(Segment {
                request_id: Some(request_id),
                bytes,
                t_enqueued: now,
            });
        true
    }

    pub fn enqueue_background(&mut self, key: &QueueKey, bytes: u64, now: SimTime) {
        if bytes == 0 {
            return;
        }
        self.windows.entry(key.slice_id.clone()).or_default().arrived_bytes += bytes;
        self.queues
            .get_mut(key)
            .expect("background queue registered")
            .push(Segment {
                request_id: None,
                bytes,
                t_enqueued: now,
            });
    }

    /// Schedules, reclaims and delivers one TTI starting at `now`. Bytes are
    /// stamped as received at the end of the TTI.
    pub fn run_tti(&mut self, tti_index: u64, now: SimTime, partition: &BTreeMap<String, u32>) -> TtiOutcome {
        let alloc = schedule_tti(&mut self.queues, partition, &self.links, tti_index);
        let mut alloc = reclaim_unused(
            alloc,
            self.n_prb,
            &self.queues,
            &self.links,
            self.mode.work_conserving,
        );
        let drained = deliver(&mut self.queues, &mut alloc, &self.links);
        let received_at = now + self.tti_us;
        let mut outcome = TtiOutcome::default();
        for piece in drained {
            self.windows
                .entry(piece.key.slice_id.clone())
                .or_default()
                .delivered_bytes += piece.bytes;
            let Some(rid) = piece.request_id else { continue };
            let stream = self.streams.get_mut(&rid).expect("delivered stream exists");
            stream.delivered_bytes += piece.bytes;
            if stream.t_first_byte.is_none() {
                stream.t_first_byte = Some(received_at);
                outcome.first_bytes.push(rid);
            }
            if stream.delivered_bytes == stream.total_bytes {
                stream.t_complete = Some(received_at);
                self.open_streams.remove(&rid);
                let w = self.windows.entry(stream.key.slice_id.clone()).or_default();
                w.completed_responses += 1;
                w.completed_response_bytes += stream.total_bytes;
                outcome.completions.push(rid);
            }
        }
        outcome.allocation = alloc;
        outcome
    }

    /// Aborts streams whose head segment waited longer than `t_disc_us`.
    /// Expired background packets are dropped without a disconnection.
    pub fn check_timeouts(&mut self, now: SimTime) -> Vec<Disconnection> {
        let mut out = Vec::new();
        for expiry in check_timeouts(&mut self.queues, now, self.t_disc_us) {
            let w = self.windows.entry(expiry.key.slice_id.clone()).or_default();
            w.purged_bytes += expiry.bytes_purged;
            let Some(rid) = expiry.request_id else { continue };
            w.disconnects += 1;
            let stream = self.streams.get_mut(&rid).expect("expired stream exists");
            debug_assert!(stream.t_abort.is_none());
            stream.t_abort = Some(now);
            self.open_streams.remove(&rid);
            out.push(Disconnection {
                request_id: rid,
                ue_id: stream.key.ue_id.clone(),
                slice_id: stream.key.slice_id.clone(),
                t_abort: now,
                bytes_undelivered: stream.total_bytes - stream.delivered_bytes,
                bytes_wasted: stream.delivered_bytes,
            });
        }
        out
    }

    pub fn window(&self, slice_id: &str) -> SliceWindow {
        self.windows.get(slice_id).cloned().unwrap_or_default()
    }

    /// Starts a new KPI window for every slice.
    pub fn roll_windows(&mut self) {
        let backlogs = self.backlog_by_slice();
        for (slice, w) in self.windows.iter_mut() {
            *w = SliceWindow {
                backlog_start_bytes: backlogs.get(slice).copied().unwrap_or(0),
                ..Default::default()
            };
        }
    }

    pub fn backlog_by_slice(&self) -> BTreeMap<String, u64> {
        let mut out: BTreeMap<String, u64> = BTreeMap::new();
        for q in self.queues.iter() {
            *out.entry(q.key.slice_id.clone()).or_insert(0) += q.backlog();
        }
        out
    }

    pub fn slice_backlog(&self, slice_id: &str) -> u64 {
        self.queues
            .iter()
            .filter(|q| q.key.slice_id == slice_id)
            .map(|q| q.backlog())
            .sum()
    }

    /// Mean head-of-line wait over the slice's backlogged queues, in ms.
    pub fn mean_hol_delay_ms(&self, slice_id: &str, now: SimTime) -> f64 {
        let waits: Vec<u64> = self
            .queues
            .iter()
            .filter(|q| q.key.slice_id == slice_id)
            .filter_map(|q| q.hol_wait_start().map(|t| now.since(t)))
            .collect();
        if waits.is_empty() {
            0.0
        } else {
            waits.iter().sum::<u64>() as f64 / waits.len() as f64 / 1_000.0
        }
    }

    pub fn active_streams(&self, slice_id: &str) -> u64 {
        self.open_streams
            .iter()
            .filter(|id| self.streams[id].key.slice_id == slice_id)
            .count() as u64
    }

    /// One record per opened stream, ordered by request id.
    pub fn delivery_records(&self) -> Vec<DeliveryRecord> {
        self.streams
            .values()
            .map(|s| DeliveryRecord {
                request_id: s.request_id,
                slice_id: s.key.slice_id.clone(),
                t_arrival: s.t_arrival,
                t_first_byte: s.t_first_byte,
                t_complete: s.t_complete,
                total_bytes: s.total_bytes,
                aborted: s.t_abort.is_some(),
            })
            .collect()
    }
}
