//! RAN intelligent controller.
//!
//! Once per epoch the RIC reads one KPI report per slice, smooths each slice's
//! arrived bytes with an EWMA and scores demand as
//! `backlog_bytes + ewma(arrived_bytes)`. Shares are proportional to demand,
//! clamped into each slice's `[min_share, max_share]`, with the clamped
//! residual redistributed over the remaining slices until nothing moves.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::SimTime;
use crate::mac::{Mac, ModeKind, QuotaVector};
use crate::slicectl::SliceDescriptor;

pub const DEFAULT_EPOCH_MS: u64 = 100;
pub const DEFAULT_ALPHA: f64 = 0.2;

const EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RicError {
    #[error("infeasible bounds: min shares sum to {0} > 1")]
    InfeasibleBounds(f64),
    #[error("quota decisions apply only in dynamic mode, scheduler is {0}")]
    ModeMismatch(ModeKind),
}

/// E2-style per-slice report for one epoch window, extended with the mean
/// size of the LLM responses completed in the window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KpiReport {
    pub slice_id: String,
    pub window_start: SimTime,
    pub window_end: SimTime,
    pub arrived_bytes: u64,
    pub delivered_bytes: u64,
    pub purged_bytes: u64,
    pub backlog_start_bytes: u64,
    pub backlog_bytes: u64,
    pub mean_hol_delay_ms: f64,
    pub active_streams: u64,
    pub disconnects: u64,
    pub completed_responses: u64,
    pub mean_response_bytes: f64,
}

pub fn build_report(mac: &Mac, slice_id: &str, window_start: SimTime, window_end: SimTime) -> KpiReport {
    let w = mac.window(slice_id);
    let mean_response_bytes = if w.completed_responses > 0 {
        w.completed_response_bytes as f64 / w.completed_responses as f64
    } else {
        0.0
    };
    KpiReport {
        slice_id: slice_id.to_string(),
        window_start,
        window_end,
        arrived_bytes: w.arrived_bytes,
        delivered_bytes: w.delivered_bytes,
        purged_bytes: w.purged_bytes,
        backlog_start_bytes: w.backlog_start_bytes,
        backlog_bytes: mac.slice_backlog(slice_id),
        mean_hol_delay_ms: mac.mean_hol_delay_ms(slice_id, window_end),
        active_streams: mac.active_streams(slice_id),
        disconnects: w.disconnects,
        completed_responses: w.completed_responses,
        mean_response_bytes,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EwmaEstimator {
    pub alpha: f64,
    pub value: f64,
    pub initialized: bool,
}

impl EwmaEstimator {
    pub fn new(alpha: f64) -> Self {
        Self {
            alpha,
            value: 0.0,
            initialized: false,
        }
    }

    pub fn update(&mut self, x: f64) {
        *self = ewma_update(*self, x);
    }
}

/// First observation seeds the estimate; later ones blend in with weight `alpha`.
pub fn ewma_update(est: EwmaEstimator, x: f64) -> EwmaEstimator {
    let value = if est.initialized {
        est.alpha * x + (1.0 - est.alpha) * est.value
    } else {
        x
    };
    EwmaEstimator {
        value,
        initialized: true,
        ..est
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuotaDecision {
    pub epoch: u64,
    pub quotas: QuotaVector,
    /// Demand score per slice, in bytes.
    pub rationale: BTreeMap<String, f64>,
}

/// Splits the unit share across slices in proportion to `weights`, subject to
/// per-slice `(min, max)` bounds.
///
/// Each round computes the proportional split of what is left over the free
/// slices, then permanently fixes either every slice above its max or every
/// slice below its min, whichever side carries the larger violation. When the
/// free slices have zero total weight the remainder is split equally. At most
/// `weights.len()` rounds run.
pub fn allocate_shares(weights: &[f64], bounds: &[(f64, f64)]) -> Result<Vec<f64>, RicError> {
    assert_eq!(weights.len(), bounds.len());
    let min_total: f64 = bounds.iter().map(|b| b.0).sum();
    if min_total > 1.0 + 1e-9 {
        return Err(RicError::InfeasibleBounds(min_total));
    }
    let n = weights.len();
    let mut fixed: Vec<Option<f64>> = vec![None; n];
    let mut tentative = vec![0.0; n];
    loop {
        let free: Vec<usize> = (0..n).filter(|&i| fixed[i].is_none()).collect();
        if free.is_empty() {
            break;
        }
        let taken: f64 = fixed.iter().flatten().sum();
        let avail = (1.0 - taken).max(0.0);
        let weight: f64 = free.iter().map(|&i| weights[i].max(0.0)).sum();
        for &i in &free {
            tentative[i] = if weight > 0.0 {
                avail * weights[i].max(0.0) / weight
            } else {
                avail / free.len() as f64
            };
        }
        let excess: f64 = free
            .iter()
            .map(|&i| (tentative[i] - bounds[i].1).max(0.0))
            .sum();
        let deficit: f64 = free
            .iter()
            .map(|&i| (bounds[i].0 - tentative[i]).max(0.0))
            .sum();
        if excess <= EPS && deficit <= EPS {
            for &i in &free {
                fixed[i] = Some(tentative[i].clamp(bounds[i].0, bounds[i].1));
            }
            break;
        }
        if excess >= deficit {
            for &i in &free {
                if tentative[i] > bounds[i].1 {
                    fixed[i] = Some(bounds[i].1);
                }
            }
        } else {
            for &i in &free {
                if tentative[i] < bounds[i].0 {
                    fixed[i] = Some(bounds[i].0);
                }
            }
        }
    }
    Ok(fixed.into_iter().map(|v| v.expect("all fixed")).collect())
}

/// Quotas used before any demand is known (and for the static baseline): the
/// equal split subject to bounds.
pub fn zero_demand_quotas(descriptors: &[SliceDescriptor]) -> Result<QuotaVector, RicError> {
    let bounds: Vec<(f64, f64)> = descriptors.iter().map(|d| (d.min_share, d.max_share)).collect();
    let shares = allocate_shares(&vec![0.0; descriptors.len()], &bounds)?;
    Ok(descriptors
        .iter()
        .zip(shares)
        .map(|(d, s)| (d.slice_id.clone(), s))
        .collect())
}

/// One controller round: feed each slice's arrived bytes into its estimator,
/// score demand and split shares. Slices without a report score their
/// estimate alone.
pub fn compute_quotas(
    epoch: u64,
    reports: &[KpiReport],
    estimators: &mut BTreeMap<String, EwmaEstimator>,
    descriptors: &[SliceDescriptor],
    alpha: f64,
) -> Result<QuotaDecision, RicError> {
    let mut rationale = BTreeMap::new();
    let mut demands = Vec::with_capacity(descriptors.len());
    for d in descriptors {
        let est = estimators
            .entry(d.slice_id.clone())
            .or_insert_with(|| EwmaEstimator::new(alpha));
        let backlog = match reports.iter().find(|r| r.slice_id == d.slice_id) {
            Some(r) => {
                est.update(r.arrived_bytes as f64);
                r.backlog_bytes as f64
            }
            None => 0.0,
        };
        let demand = backlog + est.value;
        rationale.insert(d.slice_id.clone(), demand);
        demands.push(demand);
    }
    let bounds: Vec<(f64, f64)> = descriptors.iter().map(|d| (d.min_share, d.max_share)).collect();
    let shares = allocate_shares(&demands, &bounds)?;
    Ok(QuotaDecision {
        epoch,
        quotas: descriptors
            .iter()
            .zip(shares)
            .map(|(d, s)| (d.slice_id.clone(), s))
            .collect(),
        rationale,
    })
}

/// Pluggable quota policy driven once per RIC epoch.
pub trait QuotaController {
    fn decide(
        &mut self,
        epoch: u64,
        reports: &[KpiReport],
        descriptors: &[SliceDescriptor],
    ) -> Result<QuotaDecision, RicError>;
}

/// Clamped proportional-demand controller (backlog plus smoothed arrivals).
#[derive(Debug, Clone)]
pub struct DemandController {
    pub alpha: f64,
    estimators: BTreeMap<String, EwmaEstimator>,
}

impl DemandController {
    pub fn new(alpha: f64) -> Self {
        Self {
            alpha,
            estimators: BTreeMap::new(),
        }
    }

    pub fn estimator(&self, slice_id: &str) -> Option<&EwmaEstimator> {
        self.estimators.get(slice_id)
    }
}

impl QuotaController for DemandController {
    fn decide(
        &mut self,
        epoch: u64,
        reports: &[KpiReport],
        descriptors: &[SliceDescriptor],
    ) -> Result<QuotaDecision, RicError> {
        compute_quotas(epoch, reports, &mut self.estimators, descriptors, self.alpha)
    }
}

/// The quota vector in force plus decisions waiting for their first TTI.
#[derive(Debug, Clone)]
pub struct QuotaSchedule {
    current: QuotaVector,
    pending: VecDeque<(u64, QuotaVector)>,
}

impl QuotaSchedule {
    pub fn new(initial: QuotaVector) -> Self {
        Self {
            current: initial,
            pending: VecDeque::new(),
        }
    }

    pub fn current(&self) -> &QuotaVector {
        &self.current
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    /// Promotes every pending vector whose effective TTI has been reached.
    /// Returns whether the vector in force changed.
    pub fn advance_to(&mut self, tti_index: u64) -> bool {
        let mut changed = false;
        while let Some((eff, _)) = self.pending.front() {
            if *eff > tti_index {
                break;
            }
            let (_, q) = self.pending.pop_front().expect("front exists");
            if q != self.current {
                changed = true;
            }
            self.current = q;
        }
        changed
    }
}

/// Queues `decision` to take effect at the first TTI boundary at or after
/// `decided_at + control_delay_us`. Returns that TTI index.
pub fn apply_decision(
    schedule: &mut QuotaSchedule,
    mode: ModeKind,
    decision: &QuotaDecision,
    decided_at: SimTime,
    control_delay_us: u64,
    tti_us: u64,
) -> Result<u64, RicError> {
    if mode != ModeKind::Dynamic {
        return Err(RicError::ModeMismatch(mode));
    }
    let effective = (decided_at.as_us() + control_delay_us).div_ceil(tti_us);
    if let Some((last, _)) = schedule.pending.back() {
        debug_assert!(*last <= effective);
    }
    schedule.pending.push_back((effective, decision.quotas.clone()));
    Ok(effective)
}
