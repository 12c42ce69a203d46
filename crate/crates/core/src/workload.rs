//! LLM request and response traffic.
//!
//! Requests arrive from a two-state Markov-modulated Poisson process, so a UE
//! alternates between a quiet phase and a burst phase with
//! `burst_multiplier` times the base rate. Each response has a
//! truncated-lognormal token count and is streamed into the downlink queue one
//! token payload at a time. Background flows add constant-bit-rate contention.

use rand_distr::{Distribution, Exp, Exp1, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{RngStream, SimTime};

pub const DEFAULT_TOKENS_MU: f64 = 5.3;
pub const DEFAULT_TOKENS_SIGMA: f64 = 0.8;
pub const DEFAULT_TOKENS_MIN: u32 = 16;
pub const DEFAULT_TOKENS_MAX: u32 = 4096;
pub const DEFAULT_BYTES_PER_TOKEN: u32 = 4;
pub const DEFAULT_TOKEN_INTERVAL_MS: f64 = 20.0;
pub const DEFAULT_FIRST_TOKEN_DELAY_MS: f64 = 200.0;
pub const DEFAULT_PROMPT_BYTES: u32 = 256;

#[derive(Debug, Error, PartialEq)]
pub enum WorkloadError {
    #[error("service {service}: {reason}")]
    InvalidProfile { service: String, reason: String },
    #[error("invalid arrival process: {0}")]
    InvalidArrivals(String),
}

fn default_mu() -> f64 {
    DEFAULT_TOKENS_MU
}
fn default_sigma() -> f64 {
    DEFAULT_TOKENS_SIGMA
}
fn default_min() -> u32 {
    DEFAULT_TOKENS_MIN
}
fn default_max() -> u32 {
    DEFAULT_TOKENS_MAX
}
fn default_bpt() -> u32 {
    DEFAULT_BYTES_PER_TOKEN
}
fn default_interval() -> f64 {
    DEFAULT_TOKEN_INTERVAL_MS
}
fn default_first_delay() -> f64 {
    DEFAULT_FIRST_TOKEN_DELAY_MS
}
fn default_prompt() -> u32 {
    DEFAULT_PROMPT_BYTES
}

/// Response-generation characteristics of one LLM service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceProfile {
    pub service_id: String,
    #[serde(default = "default_mu")]
    pub tokens_mu: f64,
    #[serde(default = "default_sigma")]
    pub tokens_sigma: f64,
    #[serde(default = "default_min")]
    pub tokens_min: u32,
    #[serde(default = "default_max")]
    pub tokens_max: u32,
    #[serde(default = "default_bpt")]
    pub bytes_per_token: u32,
    #[serde(default = "default_interval")]
    pub token_interval_ms: f64,
    #[serde(default = "default_first_delay")]
    pub first_token_delay_ms: f64,
    /// Uplink prompt size; recorded only.
    #[serde(default = "default_prompt")]
    pub prompt_bytes: u32,
}

impl ServiceProfile {
    pub fn with_defaults(service_id: impl Into<String>) -> Self {
        Self {
            service_id: service_id.into(),
            tokens_mu: DEFAULT_TOKENS_MU,
            tokens_sigma: DEFAULT_TOKENS_SIGMA,
            tokens_min: DEFAULT_TOKENS_MIN,
            tokens_max: DEFAULT_TOKENS_MAX,
            bytes_per_token: DEFAULT_BYTES_PER_TOKEN,
            token_interval_ms: DEFAULT_TOKEN_INTERVAL_MS,
            first_token_delay_ms: DEFAULT_FIRST_TOKEN_DELAY_MS,
            prompt_bytes: DEFAULT_PROMPT_BYTES,
        }
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        let fail = |reason: &str| {
            Err(WorkloadError::InvalidProfile {
                service: self.service_id.clone(),
                reason: reason.to_string(),
            })
        };
        if self.tokens_min < 1 {
            return fail("tokens_min must be >= 1");
        }
        if self.tokens_min > self.tokens_max {
            return fail("tokens_min must not exceed tokens_max");
        }
        if self.bytes_per_token < 1 {
            return fail("bytes_per_token must be >= 1");
        }
        if !self.tokens_mu.is_finite() {
            return fail("tokens_mu must be finite");
        }
        if !(self.tokens_sigma.is_finite() && self.tokens_sigma >= 0.0) {
            return fail("tokens_sigma must be finite and >= 0");
        }
        if !(self.token_interval_ms.is_finite() && self.token_interval_ms >= 0.0) {
            return fail("token_interval_ms must be finite and >= 0");
        }
        if !(self.first_token_delay_ms.is_finite() && self.first_token_delay_ms >= 0.0) {
            return fail("first_token_delay_ms must be finite and >= 0");
        }
        Ok(())
    }
}

fn default_burst_multiplier() -> f64 {
    1.0
}
fn default_burst_on() -> f64 {
    1_000.0
}
fn default_burst_off() -> f64 {
    4_000.0
}

/// Request process of one UE for one service. `rate_per_s` is the quiet-phase
/// rate; burst phases run at `rate_per_s * burst_multiplier`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrivalProcess {
    pub rate_per_s: f64,
    #[serde(default = "default_burst_multiplier")]
    pub burst_multiplier: f64,
    #[serde(default = "default_burst_on")]
    pub burst_on_ms: f64,
    #[serde(default = "default_burst_off")]
    pub burst_off_ms: f64,
}

impl ArrivalProcess {
    pub fn poisson(rate_per_s: f64) -> Self {
        Self {
            rate_per_s,
            burst_multiplier: 1.0,
            burst_on_ms: default_burst_on(),
            burst_off_ms: default_burst_off(),
        }
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        let fail = |m: &str| Err(WorkloadError::InvalidArrivals(m.to_string()));
        if !(self.rate_per_s.is_finite() && self.rate_per_s >= 0.0) {
            return fail("rate_per_s must be finite and >= 0");
        }
        if !(self.burst_multiplier.is_finite() && self.burst_multiplier >= 1.0) {
            return fail("burst_multiplier must be >= 1");
        }
        if !(self.burst_on_ms.is_finite() && self.burst_on_ms > 0.0) {
            return fail("burst_on_ms must be > 0");
        }
        if !(self.burst_off_ms.is_finite() && self.burst_off_ms > 0.0) {
            return fail("burst_off_ms must be > 0");
        }
        Ok(())
    }

    fn is_modulated(&self) -> bool {
        self.burst_multiplier > 1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmRequest {
    pub request_id: u64,
    pub ue_id: String,
    pub service_id: String,
    pub t_arrival: SimTime,
    pub prompt_bytes: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenStream {
    pub request_id: u64,
    pub n_tokens: u32,
    pub first_token_delay_ms: f64,
    pub token_interval_ms: f64,
    pub bytes_per_token: u32,
}

impl TokenStream {
    pub fn total_bytes(&self) -> u64 {
        self.n_tokens as u64 * self.bytes_per_token as u64
    }
}

/// Constant-bit-rate downlink flow to one UE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackgroundFlow {
    pub ue_id: String,
    pub rate_bytes_per_s: u64,
    #[serde(default = "default_packet_bytes")]
    pub packet_bytes: u32,
}

fn default_packet_bytes() -> u32 {
    1_500
}

/// Converts a background flow's rate into whole packets per TTI, carrying the
/// fractional remainder forward exactly.
#[derive(Debug, Clone)]
pub struct BackgroundSource {
    rate_bytes_per_s: u64,
    packet_bytes: u64,
    // byte-microseconds owed but not yet emitted
    credit: u128,
}

impl BackgroundSource {
    pub fn new(flow: &BackgroundFlow) -> Self {
        Self {
            rate_bytes_per_s: flow.rate_bytes_per_s,
            packet_bytes: flow.packet_bytes.max(1) as u64,
            credit: 0,
        }
    }

    /// Number of packets produced during the next `tti_us` microseconds.
    pub fn packets_for_tti(&mut self, tti_us: u64) -> u64 {
        self.credit += self.rate_bytes_per_s as u128 * tti_us as u128;
        let per_packet = self.packet_bytes as u128 * 1_000_000;
        let n = self.credit / per_packet;
        self.credit -= n * per_packet;
        n as u64
    }

    pub fn packet_bytes(&self) -> u64 {
        self.packet_bytes
    }
}

/// Homogeneous Poisson arrivals at `rate_per_s` on `[0, horizon)`.
///
/// Gaps are unit exponentials scaled by `1 / rate`, the same draws the
/// modulated sampler consumes.
pub fn sample_poisson_arrivals(
    rate_per_s: f64,
    horizon: SimTime,
    rng: &mut RngStream,
) -> Vec<SimTime> {
    let mut out = Vec::new();
    if rate_per_s <= 0.0 {
        return out;
    }
    let horizon_s = horizon.as_us() as f64 / 1e6;
    let mut t = 0.0f64;
    loop {
        let gap: f64 = Exp1.sample(rng);
        t += gap / rate_per_s;
        if t >= horizon_s {
            break;
        }
        push_strictly_increasing(&mut out, t);
    }
    out
}

fn push_strictly_increasing(out: &mut Vec<SimTime>, t_s: f64) {
    let mut us = (t_s * 1e6).floor() as u64;
    if let Some(last) = out.last() {
        if us <= last.as_us() {
            us = last.as_us() + 1;
        }
    }
    out.push(SimTime::from_us(us));
}

/// Arrival times for one UE-service pair on `[0, horizon)`.
///
/// The burst modulator starts in the quiet phase and draws its exponential
/// dwell times from a child stream `"<rng>/burst"`. Arrivals are produced by
/// time rescaling: unit-exponential increments of the cumulative intensity are
/// mapped back through the piecewise-linear intensity function. With
/// `burst_multiplier == 1` the modulator is skipped and the output equals
/// [`sample_poisson_arrivals`] on the same stream.
pub fn sample_request_arrivals(
    proc: &ArrivalProcess,
    horizon: SimTime,
    rng: &mut RngStream,
) -> Vec<SimTime> {
    if proc.rate_per_s <= 0.0 || horizon == SimTime::ZERO {
        return Vec::new();
    }
    if !proc.is_modulated() {
        return sample_poisson_arrivals(proc.rate_per_s, horizon, rng);
    }

    let horizon_s = horizon.as_us() as f64 / 1e6;
    let mut modulator = rng.fork("burst");
    let on_dwell = Exp::new(1e3 / proc.burst_on_ms).expect("validated burst_on_ms");
    let off_dwell = Exp::new(1e3 / proc.burst_off_ms).expect("validated burst_off_ms");

    let mut bursting = false;
    let mut phase_start = 0.0f64;
    let mut phase_end = off_dwell.sample(&mut modulator);
    // integrated intensity at phase_start
    let mut lambda_start = 0.0f64;
    let mut target = 0.0f64;
    let mut out = Vec::new();

    loop {
        let step: f64 = Exp1.sample(rng);
        target += step;
        let t = loop {
            let rate = if bursting {
                proc.rate_per_s * proc.burst_multiplier
            } else {
                proc.rate_per_s
            };
            let lambda_end = lambda_start + rate * (phase_end - phase_start);
            if target <= lambda_end || phase_start >= horizon_s {
                break phase_start + (target - lambda_start) / rate;
            }
            lambda_start = lambda_end;
            phase_start = phase_end;
            bursting = !bursting;
            let dwell = if bursting {
                on_dwell.sample(&mut modulator)
            } else {
                off_dwell.sample(&mut modulator)
            };
            phase_end = phase_start + dwell;
        };
        if t >= horizon_s {
            break;
        }
        push_strictly_increasing(&mut out, t);
    }
    out
}

/// Draws a response: `round(exp(N(mu, sigma)))` clamped to the profile bounds.
pub fn sample_token_stream(
    profile: &ServiceProfile,
    request_id: u64,
    rng: &mut RngStream,
) -> TokenStream {
    let normal = Normal::new(profile.tokens_mu, profile.tokens_sigma).expect("validated profile");
    let raw = normal.sample(rng).exp().round();
    let n_tokens = if raw.is_nan() {
        profile.tokens_min
    } else {
        raw.clamp(profile.tokens_min as f64, profile.tokens_max as f64) as u32
    };
    TokenStream {
        request_id,
        n_tokens,
        first_token_delay_ms: profile.first_token_delay_ms,
        token_interval_ms: profile.token_interval_ms,
        bytes_per_token: profile.bytes_per_token,
    }
}

/// Times and sizes at which a response's tokens enter the downlink queue.
/// Token `k` is ready at `t_start + first_token_delay + k * token_interval`.
pub fn token_enqueue_schedule(stream: &TokenStream, t_start: SimTime) -> Vec<(SimTime, u32)> {
    let first = t_start + SimTime::from_ms_f64(stream.first_token_delay_ms).as_us();
    let interval_us = SimTime::from_ms_f64(stream.token_interval_ms).as_us();
    (0..stream.n_tokens as u64)
        .map(|k| (first + k * interval_us, stream.bytes_per_token))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile(mu: f64, sigma: f64, min: u32, max: u32) -> ServiceProfile {
        ServiceProfile {
            tokens_mu: mu,
            tokens_sigma: sigma,
            tokens_min: min,
            tokens_max: max,
            ..ServiceProfile::with_defaults("llama")
        }
    }

    #[test]
    fn zero_rate_yields_no_arrivals() {
        let mut rng = RngStream::new(1, "arrivals");
        let proc = ArrivalProcess {
            burst_multiplier: 3.0,
            ..ArrivalProcess::poisson(0.0)
        };
        assert!(sample_request_arrivals(&proc, SimTime::from_ms(10_000), &mut rng).is_empty());
    }

    #[test]
    fn unit_multiplier_matches_plain_poisson() {
        let proc = ArrivalProcess::poisson(3.0);
        let a = sample_request_arrivals(
            &proc,
            SimTime::from_ms(50_000),
            &mut RngStream::new(9, "arrivals"),
        );
        let b = sample_poisson_arrivals(
            3.0,
            SimTime::from_ms(50_000),
            &mut RngStream::new(9, "arrivals"),
        );
        assert!(!a.is_empty());
        assert_eq!(a, b);
    }

    #[test]
    fn bursts_raise_the_arrival_count() {
        let horizon = SimTime::from_ms(200_000);
        let plain = sample_request_arrivals(
            &ArrivalProcess::poisson(1.0),
            horizon,
            &mut RngStream::new(4, "a"),
        );
        let bursty = ArrivalProcess {
            rate_per_s: 1.0,
            burst_multiplier: 10.0,
            burst_on_ms: 1_000.0,
            burst_off_ms: 1_000.0,
        };
        let burst = sample_request_arrivals(&bursty, horizon, &mut RngStream::new(4, "a"));
        // stationary mean rate is 5.5/s against 1/s
        assert!(burst.len() > 3 * plain.len(), "{} vs {}", burst.len(), plain.len());
    }

    #[test]
    fn arrivals_strictly_increase_and_stay_in_horizon() {
        let proc = ArrivalProcess {
            rate_per_s: 50.0,
            burst_multiplier: 20.0,
            burst_on_ms: 200.0,
            burst_off_ms: 300.0,
        };
        let horizon = SimTime::from_ms(20_000);
        let times = sample_request_arrivals(&proc, horizon, &mut RngStream::new(2, "x"));
        assert!(times.windows(2).all(|w| w[0] < w[1]));
        assert!(times.iter().all(|t| *t < horizon));
    }

    #[test]
    fn degenerate_lognormal_is_constant() {
        let p = profile(100f64.ln(), 0.0, 16, 4096);
        let mut rng = RngStream::new(1, "responses");
        for id in 0..50 {
            assert_eq!(sample_token_stream(&p, id, &mut rng).n_tokens, 100);
        }
    }

    #[test]
    fn token_stream_copies_profile() {
        let p = profile(5.3, 0.8, 16, 4096);
        let s = sample_token_stream(&p, 42, &mut RngStream::new(1, "r"));
        assert_eq!(s.request_id, 42);
        assert_eq!(s.bytes_per_token, p.bytes_per_token);
        assert_eq!(s.first_token_delay_ms, p.first_token_delay_ms);
        assert_eq!(s.token_interval_ms, p.token_interval_ms);
    }

    #[test]
    fn single_token_schedule() {
        let s = TokenStream {
            request_id: 0,
            n_tokens: 1,
            first_token_delay_ms: 200.0,
            token_interval_ms: 20.0,
            bytes_per_token: 4,
        };
        assert_eq!(
            token_enqueue_schedule(&s, SimTime::from_ms(7)),
            vec![(SimTime::from_ms(207), 4)]
        );
    }

    #[test]
    fn three_token_schedule() {
        let s = TokenStream {
            request_id: 0,
            n_tokens: 3,
            first_token_delay_ms: 50.0,
            token_interval_ms: 20.0,
            bytes_per_token: 4,
        };
        let times: Vec<u64> = token_enqueue_schedule(&s, SimTime::ZERO)
            .iter()
            .map(|(t, _)| t.as_us() / 1_000)
            .collect();
        assert_eq!(times, vec![50, 70, 90]);
    }

    #[test]
    fn background_source_carries_remainder() {
        let mut src = BackgroundSource::new(&BackgroundFlow {
            ue_id: "bg".into(),
            rate_bytes_per_s: 1_000_000,
            packet_bytes: 1_500,
        });
        // 1000 B per 1 ms TTI against 1500 B packets
        let counts: Vec<u64> = (0..6).map(|_| src.packets_for_tti(1_000)).collect();
        assert_eq!(counts, vec![0, 1, 1, 0, 1, 1]);
    }

    #[test]
    fn profile_validation() {
        assert!(profile(5.0, 0.5, 1, 1).validate().is_ok());
        assert!(profile(5.0, 0.5, 0, 10).validate().is_err());
        assert!(profile(5.0, 0.5, 20, 10).validate().is_err());
        assert!(profile(5.0, -0.1, 1, 10).validate().is_err());
        let mut p = profile(5.0, 0.5, 1, 10);
        p.bytes_per_token = 0;
        assert!(p.validate().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn token_count_respects_bounds(
                mu in -2.0f64..10.0,
                sigma in 0.0f64..3.0,
                min in 1u32..200,
                span in 0u32..5_000,
                seed in any::<u64>(),
            ) {
                let p = profile(mu, sigma, min, min + span);
                let mut rng = RngStream::new(seed, "responses");
                for id in 0..20 {
                    let s = sample_token_stream(&p, id, &mut rng);
                    prop_assert!(s.n_tokens >= p.tokens_min && s.n_tokens <= p.tokens_max);
                    let sched = token_enqueue_schedule(&s, SimTime::ZERO);
                    prop_assert_eq!(sched.len() as u32, s.n_tokens);
                    let bytes: u64 = sched.iter().map(|(_, b)| *b as u64).sum();
                    prop_assert_eq!(bytes, s.total_bytes());
                }
            }
        }
    }
}
