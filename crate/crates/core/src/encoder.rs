//! Event-pair-set encoding and anomaly scoring of assembled traces.

use alloc::collections::VecDeque;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::model::{EndpointKey, LogBody, LogLevel, Span, SpanStatus, Trace};
use crate::templater::{EventKind, EventManager, TemplateStore};

pub type EventPair = (u32, u32);

fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A deduplicated set of ordered event pairs with an order-independent digest.
///
/// Pairs are stored sorted, so equal sets have equal storage and set
/// operations run as linear merges. Storage is shared between clones.
#[derive(Clone, Debug)]
pub struct EventPairSet {
    pairs: Arc<[EventPair]>,
    hash64: u64,
}

impl EventPairSet {
    pub fn from_pairs(pairs: impl IntoIterator<Item = EventPair>) -> Self {
        let mut pairs: Vec<EventPair> = pairs.into_iter().collect();
        pairs.sort_unstable();
        pairs.dedup();
        let hash64 = pairs
            .iter()
            .fold(mix64(pairs.len() as u64), |acc, &(a, b)| {
                acc.wrapping_add(mix64(((a as u64) << 32) | b as u64))
            });
        Self {
            pairs: pairs.into(),
            hash64,
        }
    }

    pub fn pairs(&self) -> &[EventPair] {
        &self.pairs
    }

    pub fn hash64(&self) -> u64 {
        self.hash64
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn contains(&self, pair: &EventPair) -> bool {
        self.pairs.binary_search(pair).is_ok()
    }

    pub fn shares_storage(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.pairs, &other.pairs)
    }

    /// Size of the intersection with `other`.
    pub fn intersection_len(&self, other: &Self) -> usize {
        let (a, b) = (&self.pairs[..], &other.pairs[..]);
        let (mut i, mut j, mut n) = (0, 0, 0);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                core::cmp::Ordering::Less => i += 1,
                core::cmp::Ordering::Greater => j += 1,
                core::cmp::Ordering::Equal => {
                    n += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        n
    }
}

impl PartialEq for EventPairSet {
    fn eq(&self, other: &Self) -> bool {
        self.hash64 == other.hash64 && (self.shares_storage(other) || self.pairs == other.pairs)
    }
}

impl Eq for EventPairSet {}

impl core::hash::Hash for EventPairSet {
    fn hash<H: core::hash::Hasher>(&self, state: &mut H) {
        state.write_u64(self.hash64);
    }
}

/// Weights of the anomaly score and the latency-degradation rule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnomalyConfig {
    pub w_err: f64,
    pub w_lw: f64,
    pub w_le: f64,
    /// A trace is degraded when its end-to-end duration exceeds this multiple
    /// of its group's p90.
    pub perf_factor: f64,
    pub perf_score: f64,
    /// Score at or above which a trace counts as anomalous in evaluation.
    pub anomaly_threshold: f64,
    /// Observations a group needs before the latency term can fire.
    pub warmup: usize,
    /// Duration window per group.
    pub window_capacity: usize,
}

impl Default for AnomalyConfig {
    fn default() -> Self {
        Self {
            w_err: 5.0,
            w_lw: 1.0,
            w_le: 2.0,
            perf_factor: 1.2,
            perf_score: 3.0,
            anomaly_threshold: 1.0,
            warmup: 20,
            window_capacity: 1000,
        }
    }
}

impl AnomalyConfig {
    pub fn validate(&self) -> Result<(), crate::ConfigError> {
        let weights = [self.w_err, self.w_lw, self.w_le, self.perf_score];
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(crate::ConfigError::new(
                "anomaly weights must be finite and >= 0",
            ));
        }
        if !(self.perf_factor > 1.0) {
            return Err(crate::ConfigError::new("perf_factor must be > 1"));
        }
        if self.window_capacity == 0 {
            return Err(crate::ConfigError::new("window_capacity must be >= 1"));
        }
        Ok(())
    }
}

/// Recent end-to-end durations of one endpoint group with a cached p90.
#[derive(Clone, Debug)]
pub struct GroupStats {
    pub endpoint: EndpointKey,
    window: VecDeque<u64>,
    capacity: usize,
    p90: Option<u64>,
}

/// Nearest-rank p90: element `ceil(0.9 n) - 1` of the sorted values.
pub fn nearest_rank_p90(values: &mut [u64]) -> Option<u64> {
    if values.is_empty() {
        return None;
    }
    let rank = (values.len() * 9).div_ceil(10);
    let (_, v, _) = values.select_nth_unstable(rank - 1);
    Some(*v)
}

impl GroupStats {
    pub fn new(endpoint: EndpointKey, capacity: usize) -> Self {
        assert!(capacity > 0, "duration window capacity must be positive");
        Self {
            endpoint,
            window: VecDeque::with_capacity(capacity.min(1024)),
            capacity,
            p90: None,
        }
    }

    pub fn update(&mut self, duration: u64) {
        self.push(duration);
        self.recompute();
    }

    /// Appends several observations, recomputing the quantile once.
    pub fn extend(&mut self, durations: impl IntoIterator<Item = u64>) {
        let mut changed = false;
        for d in durations {
            self.push(d);
            changed = true;
        }
        if changed {
            self.recompute();
        }
    }

    fn push(&mut self, duration: u64) {
        if self.window.len() == self.capacity {
            self.window.pop_front();
        }
        self.window.push_back(duration);
    }

    fn recompute(&mut self) {
        let mut sorted: Vec<u64> = self.window.iter().copied().collect();
        self.p90 = nearest_rank_p90(&mut sorted);
    }

    pub fn p90(&self) -> Option<u64> {
        self.p90
    }

    pub fn len(&self) -> usize {
        self.window.len()
    }

    pub fn is_empty(&self) -> bool {
        self.window.is_empty()
    }

    pub fn window(&self) -> impl Iterator<Item = u64> + '_ {
        self.window.iter().copied()
    }
}

/// Compact encoding of a completed trace.
#[derive(Clone, Debug)]
pub struct EncodedTrace {
    pub trace_id: String,
    pub endpoint: EndpointKey,
    pub eps: EventPairSet,
    pub anomaly: f64,
    pub degraded: bool,
    pub end_to_end_duration: u64,
    /// Completion time of the trace; the buffer orders and windows by it.
    pub arrival: u64,
}

/// Whether the root's duration exceeds `perf_factor * p90` of a warm group.
pub fn is_degraded(trace: &Trace, stats: &GroupStats, cfg: &AnomalyConfig) -> bool {
    if stats.len() < cfg.warmup {
        return false;
    }
    match stats.p90() {
        Some(p90) => trace.root().duration as f64 > cfg.perf_factor * p90 as f64,
        None => false,
    }
}

fn span_score(span: &Span, cfg: &AnomalyConfig) -> f64 {
    let (mut warns, mut errors) = (0u32, 0u32);
    for log in &span.logs {
        match log.level {
            LogLevel::Warn => warns += 1,
            LogLevel::Error => errors += 1,
            LogLevel::Debug | LogLevel::Info => {}
        }
    }
    let status = if span.status == SpanStatus::Error {
        cfg.w_err
    } else {
        0.0
    };
    status + cfg.w_lw * f64::from(warns) + cfg.w_le * f64::from(errors)
}

/// Weighted count of error statuses, WARN and ERROR logs, plus the latency
/// term for degraded traces.
pub fn anomaly_score(trace: &Trace, stats: &GroupStats, cfg: &AnomalyConfig) -> f64 {
    let spans: f64 = trace.spans.iter().map(|s| span_score(s, cfg)).sum();
    let perf = if is_degraded(trace, stats, cfg) {
        cfg.perf_score
    } else {
        0.0
    };
    spans + perf
}

fn template_id(body: &LogBody, templates: &mut TemplateStore) -> u32 {
    match body {
        LogBody::Template(t) => *t,
        LogBody::Message(m) => templates.template_of(m),
    }
}

/// Ordered event ids of one span: start, logs by (timestamp, template id),
/// status error, degradation, end.
pub fn canonical_event_sequence(
    span: &Span,
    events: &mut EventManager,
    templates: &mut TemplateStore,
    degraded: bool,
) -> Vec<u32> {
    let (svc, op) = (span.service.as_str(), span.operation.as_str());
    let mut logs: Vec<(u64, u32)> = span
        .logs
        .iter()
        .map(|l| (l.timestamp, template_id(&l.body, templates)))
        .collect();
    logs.sort_unstable();

    let mut seq = Vec::with_capacity(logs.len() + 4);
    seq.push(events.span_event(EventKind::SpanStart, svc, op));
    seq.extend(logs.into_iter().map(|(_, t)| events.log_event(t)));
    if span.status == SpanStatus::Error {
        seq.push(events.span_event(EventKind::StatusError, svc, op));
    }
    if degraded {
        seq.push(events.span_event(EventKind::PerfDeg, svc, op));
    }
    seq.push(events.span_event(EventKind::SpanEnd, svc, op));
    seq
}

/// Encodes a trace into its event-pair set and anomaly score.
///
/// `stats` must be the root endpoint's group statistics; it is only read.
pub fn encode(
    trace: &Trace,
    events: &mut EventManager,
    templates: &mut TemplateStore,
    stats: &GroupStats,
    cfg: &AnomalyConfig,
) -> EncodedTrace {
    let degraded = is_degraded(trace, stats, cfg);
    let mut starts = Vec::with_capacity(trace.spans.len());
    let mut ends = Vec::with_capacity(trace.spans.len());
    let mut pairs = Vec::new();
    for (i, span) in trace.spans.iter().enumerate() {
        let seq =
            canonical_event_sequence(span, events, templates, degraded && i == trace.root_index);
        pairs.extend(seq.windows(2).map(|w| (w[0], w[1])));
        starts.push(seq[0]);
        ends.push(seq[seq.len() - 1]);
    }
    pairs.extend(
        trace
            .parent_child_pairs()
            .map(|(p, c)| (ends[p], starts[c])),
    );

    let spans: f64 = trace.spans.iter().map(|s| span_score(s, cfg)).sum();
    EncodedTrace {
        trace_id: trace.trace_id.clone(),
        endpoint: trace.root().endpoint(),
        eps: EventPairSet::from_pairs(pairs),
        anomaly: spans + if degraded { cfg.perf_score } else { 0.0 },
        degraded,
        end_to_end_duration: trace.root().duration,
        arrival: trace.completion(),
    }
}

/// Owns the vocabulary (templates and event ids) used to encode a stream.
#[derive(Debug, Default)]
pub struct TraceEncoder {
    pub templates: TemplateStore,
    pub events: EventManager,
    pub config: AnomalyConfig,
}

impl TraceEncoder {
    pub fn new(config: AnomalyConfig) -> Self {
        Self {
            templates: TemplateStore::default(),
            events: EventManager::new(),
            config,
        }
    }

    pub fn encode(&mut self, trace: &Trace, stats: &GroupStats) -> EncodedTrace {
        encode(
            trace,
            &mut self.events,
            &mut self.templates,
            stats,
            &self.config,
        )
    }
}
