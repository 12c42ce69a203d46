//! The run loop: wires workload, control plane, MAC and RIC onto one event
//! queue.

use std::collections::BTreeMap;
use std::fmt;

use sha2::{Digest, Sha256};
use thiserror::Error;

use super::queue::{EventQueue, QueueError};
use super::rng::RngStream;
use super::time::{ms_to_us, SimTime};
use crate::mac::{
    partition_prbs, Disconnection, Mac, MacError, ModeKind, QueueKey, SchedulerMode, TtiAllocation,
    BACKGROUND_SLICE, SHARED_POOL, TIMEOUT_CHECK_PERIOD_MS,
};
use crate::metrics::{summarize, AllocationLog, DeliveryRecord, MetricsError, OfferedLoad, RunSummary};
use crate::ric::{apply_decision, build_report, zero_demand_quotas, DemandController, QuotaController, QuotaDecision, QuotaSchedule, RicError};
use crate::scenario::{ConfigError, Scenario};
use crate::slicectl::{authorize, FsmPolicy, MessageKind, PermissionDb, SliceError, SliceSession, SliceState};
use crate::workload::{
    sample_request_arrivals, sample_token_stream, token_enqueue_schedule, BackgroundSource, LlmRequest,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EventKind {
    RequestArrival,
    TokenReady,
    TtiTick,
    RicTick,
    ControlMessage,
    TimeoutCheck,
    HorizonEnd,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::RequestArrival => "RequestArrival",
            EventKind::TokenReady => "TokenReady",
            EventKind::TtiTick => "TtiTick",
            EventKind::RicTick => "RicTick",
            EventKind::ControlMessage => "ControlMessage",
            EventKind::TimeoutCheck => "TimeoutCheck",
            EventKind::HorizonEnd => "HorizonEnd",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Node {
    Ue,
    Gnb,
    Core,
}

impl Node {
    fn as_str(self) -> &'static str {
        match self {
            Node::Ue => "ue",
            Node::Gnb => "gnb",
            Node::Core => "core",
        }
    }
}

#[derive(Debug, Clone)]
enum SimEvent {
    HorizonEnd,
    RequestArrival { idx: usize },
    Control { session: usize, kind: MessageKind, from: Node, to: Node },
    TokenReady { idx: usize, token: u32 },
    TtiTick { index: u64 },
    RicTick { epoch: u64 },
    TimeoutCheck,
}

impl SimEvent {
    fn kind(&self) -> EventKind {
        match self {
            SimEvent::HorizonEnd => EventKind::HorizonEnd,
            SimEvent::RequestArrival { .. } => EventKind::RequestArrival,
            SimEvent::Control { .. } => EventKind::ControlMessage,
            SimEvent::TokenReady { .. } => EventKind::TokenReady,
            SimEvent::TtiTick { .. } => EventKind::TtiTick,
            SimEvent::RicTick { .. } => EventKind::RicTick,
            SimEvent::TimeoutCheck => EventKind::TimeoutCheck,
        }
    }
}

#[derive(Debug, Error)]
pub enum SimErrorKind {
    #[error(transparent)]
    Queue(#[from] QueueError),
    #[error(transparent)]
    Mac(#[from] MacError),
    #[error(transparent)]
    Ric(#[from] RicError),
    #[error(transparent)]
    Slice(#[from] SliceError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

#[derive(Debug, Error)]
#[error("{event} at {at}: {source}")]
pub struct SimError {
    pub at: SimTime,
    /// The event being handled, or `setup`.
    pub event: String,
    #[source]
    pub source: SimErrorKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    /// Keep every trace record in memory (the digest is always computed).
    pub record_trace: bool,
    pub fsm_policy: FsmPolicy,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            record_trace: false,
            fsm_policy: FsmPolicy::Strict,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRecord {
    pub time: SimTime,
    pub kind: &'static str,
    pub fields: Vec<(&'static str, String)>,
}

impl fmt::Display for TraceRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.time.as_us(), self.kind)?;
        for (k, v) in &self.fields {
            write!(f, " {k}={v}")?;
        }
        Ok(())
    }
}

/// Every record emitted by a run, summarized by a SHA-256 digest over the
/// line-delimited log.
#[derive(Debug, Clone, Default)]
pub struct RunTrace {
    pub records: Vec<TraceRecord>,
    pub counts: BTreeMap<&'static str, u64>,
    pub digest: String,
}

impl RunTrace {
    pub fn count(&self, kind: &str) -> u64 {
        self.counts.get(kind).copied().unwrap_or(0)
    }

    /// The line-delimited log; empty unless records were kept.
    pub fn to_log(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&r.to_string());
            out.push('\n');
        }
        out
    }
}

struct TraceSink {
    keep: bool,
    hasher: Sha256,
    trace: RunTrace,
}

impl TraceSink {
    fn new(keep: bool) -> Self {
        Self {
            keep,
            hasher: Sha256::new(),
            trace: RunTrace::default(),
        }
    }

    fn emit(&mut self, time: SimTime, kind: &'static str, fields: Vec<(&'static str, String)>) {
        let rec = TraceRecord { time, kind, fields };
        self.hasher.update(rec.to_string().as_bytes());
        self.hasher.update(b"\n");
        *self.trace.counts.entry(kind).or_insert(0) += 1;
        if self.keep {
            self.trace.records.push(rec);
        }
    }

    fn finish(mut self) -> RunTrace {
        let digest = self.hasher.finalize();
        self.trace.digest = digest.iter().map(|b| format!("{b:02x}")).collect();
        self.trace
    }
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub scenario: String,
    pub seed: u64,
    pub mode: SchedulerMode,
    pub horizon: SimTime,
    pub trace: RunTrace,
    pub deliveries: Vec<DeliveryRecord>,
    pub disconnections: Vec<Disconnection>,
    pub decisions: Vec<(SimTime, QuotaDecision)>,
    pub allocation_log: AllocationLog,
    pub offered: OfferedLoad,
    pub invalid_transitions: u64,
}

impl RunOutput {
    pub fn summary(&self, allow_empty: bool) -> Result<RunSummary, MetricsError> {
        summarize(
            &self.deliveries,
            &self.allocation_log,
            self.horizon,
            self.mode.kind,
            self.offered,
            allow_empty,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum UeView {
    Idle,
    Pending(Vec<usize>),
    Active,
    Rejected,
}

struct Session {
    fsm: SliceSession,
    service_id: String,
    ue_view: UeView,
}

struct Request {
    req: LlmRequest,
    key: QueueKey,
    session: usize,
    schedule: Vec<(SimTime, u32)>,
    total_bytes: u64,
    n_tokens: u32,
}

struct Sim<'a> {
    scenario: &'a Scenario,
    options: RunOptions,
    horizon: SimTime,
    tti_us: u64,
    control_delay_us: u64,
    uplink_delay_us: u64,
    queue: EventQueue<SimEvent>,
    trace: TraceSink,
    mac: Mac,
    permissions: PermissionDb,
    requests: Vec<Request>,
    sessions: Vec<Session>,
    background: Vec<(QueueKey, BackgroundSource)>,
    partition: BTreeMap<String, u32>,
    quotas: Option<QuotaSchedule>,
    controller: DemandController,
    window_start: SimTime,
    alloc_log: AllocationLog,
    offered: OfferedLoad,
    disconnections: Vec<Disconnection>,
    decisions: Vec<(SimTime, QuotaDecision)>,
}

fn setup_error(source: impl Into<SimErrorKind>) -> SimError {
    SimError {
        at: SimTime::ZERO,
        event: "setup".into(),
        source: source.into(),
    }
}

/// Runs `scenario` (in its configured mode) with `master_seed`.
pub fn run(scenario: &Scenario, master_seed: u64, options: &RunOptions) -> Result<RunOutput, SimError> {
    let mut sim = Sim::new(scenario, master_seed, *options).map_err(setup_error)?;
    sim.run_loop()?;
    Ok(sim.finish(master_seed))
}

impl<'a> Sim<'a> {
    fn new(scenario: &'a Scenario, seed: u64, options: RunOptions) -> Result<Self, SimErrorKind> {
        let mode = scenario.mode.scheduler_mode();
        let horizon = SimTime::from_ms(scenario.horizon_ms);
        let tti_us = scenario.tti.tti_us;
        let mut mac = Mac::new(
            mode,
            scenario.tti.n_prb,
            tti_us,
            scenario.timeouts.t_disc_ms * 1_000,
            &scenario.link_states(),
        );

        // Queues of one UE per slice it may use, then background queues.
        let mut sessions = Vec::new();
        let mut session_index: BTreeMap<(String, String), usize> = BTreeMap::new();
        for a in &scenario.arrivals {
            let slice = scenario
                .slice_for_service(&a.service_id)
                .expect("validated service slice");
            let key = QueueKey::new(a.ue_id.clone(), slice.slice_id.clone());
            mac.add_queue(key);
            session_index.insert((a.ue_id.clone(), a.service_id.clone()), sessions.len());
            sessions.push(Session {
                fsm: SliceSession::new(slice.slice_id.clone(), a.ue_id.clone()),
                service_id: a.service_id.clone(),
                ue_view: UeView::Idle,
            });
        }
        let mut background = Vec::new();
        for b in &scenario.background {
            let key = QueueKey::new(b.ue_id.clone(), BACKGROUND_SLICE);
            mac.add_queue(key.clone());
            background.push((key, BackgroundSource::new(b)));
        }

        // Arrivals: one stream per UE-service pair, merged in time order.
        let mut arrivals: Vec<(SimTime, &str, &str)> = Vec::new();
        for a in &scenario.arrivals {
            let mut rng = RngStream::new(seed, format!("arrivals/{}/{}", a.ue_id, a.service_id));
            for t in sample_request_arrivals(&a.process(), horizon, &mut rng) {
                arrivals.push((t, &a.ue_id, &a.service_id));
            }
        }
        arrivals.sort();
        let mut response_rngs: BTreeMap<&str, RngStream> = BTreeMap::new();
        let mut requests = Vec::with_capacity(arrivals.len());
        for (i, (t, ue, svc)) in arrivals.into_iter().enumerate() {
            let profile = scenario.service(svc).expect("validated service");
            let rng = response_rngs
                .entry(svc)
                .or_insert_with(|| RngStream::new(seed, format!("responses/{svc}")));
            let stream = sample_token_stream(profile, i as u64, rng);
            let session = session_index[&(ue.to_string(), svc.to_string())];
            requests.push(Request {
                req: LlmRequest {
                    request_id: i as u64,
                    ue_id: ue.to_string(),
                    service_id: svc.to_string(),
                    t_arrival: t,
                    prompt_bytes: profile.prompt_bytes,
                },
                key: QueueKey::new(ue, sessions[session].fsm.slice_id.clone()),
                session,
                schedule: token_enqueue_schedule(&stream, SimTime::ZERO),
                total_bytes: stream.total_bytes(),
                n_tokens: stream.n_tokens,
            });
        }

        let (partition, quotas) = match mode.kind {
            ModeKind::Shared => (BTreeMap::from([(SHARED_POOL.to_string(), scenario.tti.n_prb)]), None),
            ModeKind::Static | ModeKind::Dynamic => {
                let q = zero_demand_quotas(&scenario.slices)?;
                let p = partition_prbs(&q, scenario.tti.n_prb)?;
                let sched = (mode.kind == ModeKind::Dynamic).then(|| QuotaSchedule::new(q));
                (p, sched)
            }
        };
        let ric = scenario.ric.unwrap_or_default();

        Ok(Self {
            scenario,
            options,
            horizon,
            tti_us,
            control_delay_us: ms_to_us(scenario.delays.control_delay_ms),
            uplink_delay_us: ms_to_us(scenario.delays.uplink_delay_ms),
            queue: EventQueue::new(),
            trace: TraceSink::new(options.record_trace),
            mac,
            permissions: scenario.permission_db()?,
            requests,
            sessions,
            background,
            partition,
            quotas,
            controller: DemandController::new(ric.alpha),
            window_start: SimTime::ZERO,
            alloc_log: AllocationLog::new(scenario.tti.n_prb, tti_us),
            offered: OfferedLoad::default(),
            disconnections: Vec::new(),
            decisions: Vec::new(),
        })
    }

    /// Schedules `ev` if it falls before the horizon.
    fn at(&mut self, time: SimTime, ev: SimEvent) -> Result<(), QueueError> {
        if time < self.horizon {
            self.queue.schedule(time, ev)?;
        }
        Ok(())
    }

    fn run_loop(&mut self) -> Result<(), SimError> {
        let setup = |e: QueueError| setup_error(e);
        self.queue.schedule(self.horizon, SimEvent::HorizonEnd).map_err(setup)?;
        let arrivals: Vec<(SimTime, usize)> = self
            .requests
            .iter()
            .enumerate()
            .map(|(i, r)| (r.req.t_arrival, i))
            .collect();
        for (t, idx) in arrivals {
            self.at(t, SimEvent::RequestArrival { idx }).map_err(setup)?;
        }
        self.at(SimTime::ZERO, SimEvent::TtiTick { index: 0 }).map_err(setup)?;
        self.at(SimTime::from_ms(TIMEOUT_CHECK_PERIOD_MS), SimEvent::TimeoutCheck)
            .map_err(setup)?;
        if self.quotas.is_some() {
            let epoch_ms = self.scenario.ric.unwrap_or_default().epoch_ms;
            self.at(SimTime::from_ms(epoch_ms), SimEvent::RicTick { epoch: 1 })
                .map_err(setup)?;
        }

        while let Some(ev) = self.queue.pop_next() {
            let now = ev.time;
            let kind = ev.payload.kind();
            let done = matches!(ev.payload, SimEvent::HorizonEnd);
            self.dispatch(now, ev.payload).map_err(|source| SimError {
                at: now,
                event: kind.to_string(),
                source,
            })?;
            if done {
                break;
            }
        }
        Ok(())
    }

    fn dispatch(&mut self, now: SimTime, ev: SimEvent) -> Result<(), SimErrorKind> {
        match ev {
            SimEvent::HorizonEnd => self.on_horizon(now)?,
            SimEvent::RequestArrival { idx } => self.on_request(now, idx)?,
            SimEvent::Control {
                session,
                kind,
                from,
                to,
            } => self.on_control(now, session, kind, from, to)?,
            SimEvent::TokenReady { idx, token } => self.on_token(now, idx, token)?,
            SimEvent::TtiTick { index } => self.on_tti(now, index)?,
            SimEvent::RicTick { epoch } => self.on_ric(now, epoch)?,
            SimEvent::TimeoutCheck => self.on_timeout_check(now)?,
        }
        Ok(())
    }

    fn send(&mut self, now: SimTime, session: usize, kind: MessageKind, from: Node, to: Node) -> Result<(), SimErrorKind> {
        let s = &self.sessions[session];
        self.trace.emit(
            now,
            "ControlSend",
            vec![
                ("msg", kind.label().to_string()),
                ("from", from.as_str().into()),
                ("to", to.as_str().into()),
                ("slice", s.fsm.slice_id.clone()),
                ("ue", s.fsm.ue_id.clone()),
            ],
        );
        self.at(
            now + self.control_delay_us,
            SimEvent::Control {
                session,
                kind,
                from,
                to,
            },
        )?;
        Ok(())
    }

    fn fsm(&mut self, now: SimTime, session: usize, msg: MessageKind) -> Result<SliceState, SimErrorKind> {
        let policy = self.options.fsm_policy;
        let s = &mut self.sessions[session];
        let state = s.fsm.apply(msg, policy)?;
        let fields = vec![
            ("msg", msg.label().to_string()),
            ("slice", s.fsm.slice_id.clone()),
            ("ue", s.fsm.ue_id.clone()),
            ("state", format!("{state:?}")),
        ];
        self.trace.emit(now, "SliceState", fields);
        Ok(state)
    }

    fn on_request(&mut self, now: SimTime, idx: usize) -> Result<(), SimErrorKind> {
        self.offered.requests += 1;
        let r = &self.requests[idx];
        let session = r.session;
        self.trace.emit(
            now,
            "RequestArrival",
            vec![
                ("request", r.req.request_id.to_string()),
                ("ue", r.req.ue_id.clone()),
                ("service", r.req.service_id.clone()),
                ("prompt_bytes", r.req.prompt_bytes.to_string()),
            ],
        );
        match &mut self.sessions[session].ue_view {
            UeView::Idle => {
                self.sessions[session].ue_view = UeView::Pending(vec![idx]);
                self.send(now, session, MessageKind::SliceRequest, Node::Ue, Node::Gnb)?;
            }
            UeView::Pending(waiting) => waiting.push(idx),
            UeView::Active => self.forward(now, idx)?,
            UeView::Rejected => self.reject(now, idx),
        }
        Ok(())
    }

    fn reject(&mut self, now: SimTime, idx: usize) {
        self.offered.rejected += 1;
        let rid = self.requests[idx].req.request_id;
        self.trace.emit(now, "RequestRejected", vec![("request", rid.to_string())]);
    }

    /// The request leaves the UE; generation starts after the uplink delay.
    fn forward(&mut self, now: SimTime, idx: usize) -> Result<(), SimErrorKind> {
        let t_start = now + self.uplink_delay_us;
        let first = self.requests[idx].schedule[0].0;
        self.at(t_start + first.as_us(), SimEvent::TokenReady { idx, token: 0 })?;
        Ok(())
    }

    fn on_control(&mut self, now: SimTime, session: usize, kind: MessageKind, from: Node, to: Node) -> Result<(), SimErrorKind> {
        {
            let s = &self.sessions[session];
            self.trace.emit(
                now,
                "ControlMessage",
                vec![
                    ("msg", kind.label().to_string()),
                    ("from", from.as_str().into()),
                    ("to", to.as_str().into()),
                    ("slice", s.fsm.slice_id.clone()),
                    ("ue", s.fsm.ue_id.clone()),
                ],
            );
        }
        match (to, kind) {
            (Node::Gnb, MessageKind::SliceRequest) => {
                self.send(now, session, MessageKind::Register, Node::Gnb, Node::Core)?;
            }
            (Node::Core, MessageKind::Register) => {
                self.fsm(now, session, MessageKind::Register)?;
                self.fsm(now, session, MessageKind::PermissionQuery)?;
                let s = &self.sessions[session];
                let verdict = authorize(&self.permissions, &s.fsm.ue_id, &s.service_id);
                let state = self.fsm(now, session, MessageKind::PermissionReply(verdict))?;
                let reply = if state == SliceState::Active {
                    MessageKind::Activate
                } else {
                    MessageKind::Reject
                };
                self.send(now, session, reply, Node::Core, Node::Gnb)?;
            }
            (Node::Gnb, MessageKind::Activate | MessageKind::Reject) => {
                self.send(now, session, kind, Node::Gnb, Node::Ue)?;
            }
            (Node::Ue, MessageKind::Activate | MessageKind::Reject) => {
                let active = kind == MessageKind::Activate;
                let view = if active { UeView::Active } else { UeView::Rejected };
                let waiting = match std::mem::replace(&mut self.sessions[session].ue_view, view) {
                    UeView::Pending(w) => w,
                    _ => Vec::new(),
                };
                for idx in waiting {
                    if active {
                        self.forward(now, idx)?;
                    } else {
                        self.reject(now, idx);
                    }
                }
            }
            _ => unreachable!("control flow never routes {kind:?} to {to:?}"),
        }
        Ok(())
    }

    fn on_token(&mut self, now: SimTime, idx: usize, token: u32) -> Result<(), SimErrorKind> {
        let r = &self.requests[idx];
        let rid = r.req.request_id;
        if token == 0 {
            self.mac.open_stream(rid, r.key.clone(), r.req.t_arrival, r.total_bytes);
        }
        // tokens sharing this timestamp are coalesced into one segment
        let offset = r.schedule[token as usize].0;
        let mut end = token as usize;
        let mut bytes = 0u64;
        while end < r.schedule.len() && r.schedule[end].0 == offset {
            bytes += r.schedule[end].1 as u64;
            end += 1;
        }
        let n_tokens = r.n_tokens;
        let next = r.schedule.get(end).map(|(t, _)| *t);
        let accepted = self.mac.enqueue_token(rid, bytes, now);
        self.trace.emit(
            now,
            "TokenReady",
            vec![
                ("request", rid.to_string()),
                ("tokens", format!("{}..{}/{}", token, end, n_tokens)),
                ("bytes", bytes.to_string()),
                ("accepted", accepted.to_string()),
            ],
        );
        if let (true, Some(t_next)) = (accepted, next) {
            self.at(now + (t_next - offset), SimEvent::TokenReady { idx, token: end as u32 })?;
        }
        Ok(())
    }

    fn on_tti(&mut self, now: SimTime, index: u64) -> Result<(), SimErrorKind> {
        if let Some(q) = &mut self.quotas {
            if q.advance_to(index) {
                self.partition = partition_prbs(q.current(), self.scenario.tti.n_prb)?;
                let fields = self
                    .partition
                    .iter()
                    .map(|(s, n)| ("prbs", format!("{s}:{n}")))
                    .chain(std::iter::once(("tti", index.to_string())))
                    .collect();
                self.trace.emit(now, "PartitionChange", fields);
            }
        }
        for (key, src) in &mut self.background {
            let n = src.packets_for_tti(self.tti_us);
            for _ in 0..n {
                self.mac.enqueue_background(key, src.packet_bytes(), now);
            }
        }
        let outcome = self.mac.run_tti(index, now, &self.partition);
        self.record_allocation(now, &outcome.allocation);
        let received = (now + self.tti_us).as_us().to_string();
        for rid in outcome.first_bytes {
            self.trace.emit(now, "FirstByte", vec![("request", rid.to_string()), ("received_us", received.clone())]);
        }
        for rid in outcome.completions {
            self.trace.emit(now, "Delivery", vec![("request", rid.to_string()), ("received_us", received.clone())]);
        }
        self.at(now + self.tti_us, SimEvent::TtiTick { index: index + 1 })?;
        Ok(())
    }

    fn record_allocation(&mut self, now: SimTime, alloc: &TtiAllocation) {
        self.alloc_log.record(alloc);
        for (key, prbs) in &alloc.grants {
            let used = alloc.per_queue_used.get(key).copied().unwrap_or(0);
            self.trace.emit(
                now,
                "Allocation",
                vec![
                    ("tti", alloc.tti_index.to_string()),
                    ("slice", key.slice_id.clone()),
                    ("ue", key.ue_id.clone()),
                    ("prbs", prbs.to_string()),
                    ("used", used.to_string()),
                ],
            );
        }
    }

    fn on_timeout_check(&mut self, now: SimTime) -> Result<(), SimErrorKind> {
        for d in self.mac.check_timeouts(now) {
            self.trace.emit(
                now,
                "Disconnection",
                vec![
                    ("request", d.request_id.to_string()),
                    ("ue", d.ue_id.clone()),
                    ("slice", d.slice_id.clone()),
                    ("undelivered", d.bytes_undelivered.to_string()),
                    ("wasted", d.bytes_wasted.to_string()),
                ],
            );
            self.disconnections.push(d);
        }
        self.at(now + TIMEOUT_CHECK_PERIOD_MS * 1_000, SimEvent::TimeoutCheck)?;
        Ok(())
    }

    fn on_ric(&mut self, now: SimTime, epoch: u64) -> Result<(), SimErrorKind> {
        let descriptors = &self.scenario.slices;
        let reports: Vec<_> = descriptors
            .iter()
            .map(|d| build_report(&self.mac, &d.slice_id, self.window_start, now))
            .collect();
        for r in &reports {
            self.trace.emit(
                now,
                "KpiReport",
                vec![
                    ("epoch", epoch.to_string()),
                    ("slice", r.slice_id.clone()),
                    ("arrived", r.arrived_bytes.to_string()),
                    ("delivered", r.delivered_bytes.to_string()),
                    ("backlog", r.backlog_bytes.to_string()),
                    ("hol_ms", format!("{:.3}", r.mean_hol_delay_ms)),
                    ("active", r.active_streams.to_string()),
                    ("disconnects", r.disconnects.to_string()),
                    ("mean_response_bytes", format!("{:.1}", r.mean_response_bytes)),
                ],
            );
        }
        let decision = self.controller.decide(epoch, &reports, descriptors)?;
        let schedule = self.quotas.as_mut().expect("ric runs in dynamic mode");
        let effective = apply_decision(
            schedule,
            self.mac.mode.kind,
            &decision,
            now,
            self.control_delay_us,
            self.tti_us,
        )?;
        for (slice, q) in decision.quotas.iter() {
            self.trace.emit(
                now,
                "QuotaDecision",
                vec![
                    ("epoch", epoch.to_string()),
                    ("slice", slice.clone()),
                    ("demand", format!("{:.1}", decision.rationale.get(slice).copied().unwrap_or(0.0))),
                    ("quota", format!("{q:.6}")),
                    ("effective_tti", effective.to_string()),
                ],
            );
        }
        self.decisions.push((now, decision));
        self.mac.roll_windows();
        self.window_start = now;
        let epoch_us = self.scenario.ric.unwrap_or_default().epoch_ms * 1_000;
        self.at(now + epoch_us, SimEvent::RicTick { epoch: epoch + 1 })?;
        Ok(())
    }

    fn on_horizon(&mut self, now: SimTime) -> Result<(), SimErrorKind> {
        for i in 0..self.sessions.len() {
            if self.sessions[i].fsm.state == SliceState::Active {
                self.fsm(now, i, MessageKind::Release)?;
            }
        }
        let open = self.mac.streams().filter(|s| s.is_open()).count();
        self.trace.emit(now, "HorizonEnd", vec![("open_streams", open.to_string())]);
        Ok(())
    }

    fn finish(self, seed: u64) -> RunOutput {
        let invalid_transitions = self.sessions.iter().map(|s| s.fsm.invalid_transitions).sum();
        RunOutput {
            scenario: self.scenario.name.clone(),
            seed,
            mode: self.mac.mode,
            horizon: self.horizon,
            deliveries: self.mac.delivery_records(),
            trace: self.trace.finish(),
            disconnections: self.disconnections,
            decisions: self.decisions,
            allocation_log: self.alloc_log,
            offered: self.offered,
            invalid_transitions,
        }
    }
}
