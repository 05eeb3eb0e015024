//! Windowed ingest, encode, allocate and select.
//!
//! Traces are encoded as they arrive and buffered into fixed windows keyed by
//! arrival time (`arrival / window_ns`), so replaying a file gives the same
//! windows as the live stream did. When a trace for a later window shows up,
//! the open window is sealed: its budget is allocated, each `(period, group)`
//! runs greedy selection, and only then are the group latency windows and the
//! QPM history updated with the sealed window's observations.

use alloc::collections::{BTreeMap, VecDeque};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dpp::{greedy_select, SelectorConfig, SimilarityCache};
use crate::encoder::{AnomalyConfig, EncodedTrace, GroupStats, TraceEncoder};
use crate::model::{EndpointKey, Trace};
use crate::quota::{
    allocate, split_periods, AlarmFeed, AllocatorConfig, BufferWindow, Period, QuotaPlan,
};
use crate::ConfigError;

pub const DEFAULT_WINDOW_NS: u64 = 60_000_000_000;

/// Source of monotonic timestamps for stage timing.
pub trait Clock {
    fn now_ns(&mut self) -> u64;
}

/// A clock that never advances; timing fields stay zero.
#[derive(Clone, Copy, Debug, Default)]
pub struct NullClock;

impl Clock for NullClock {
    fn now_ns(&mut self) -> u64 {
        0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub anomaly: AnomalyConfig,
    pub allocator: AllocatorConfig,
    pub selector: SelectorConfig,
    pub window_ns: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            anomaly: AnomalyConfig::default(),
            allocator: AllocatorConfig::default(),
            selector: SelectorConfig::default(),
            window_ns: DEFAULT_WINDOW_NS,
        }
    }
}

impl SamplerConfig {
    pub fn with_rate(rate: f64) -> Self {
        Self {
            allocator: AllocatorConfig::with_rate(rate),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.anomaly.validate()?;
        self.allocator.validate()?;
        self.selector.validate()?;
        if self.window_ns == 0 {
            return Err(ConfigError::new("window length must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampledTrace {
    pub trace_id: String,
    pub endpoint: EndpointKey,
    pub anomaly: f64,
    pub period: Period,
}

/// One greedy or fill step, for selection debugging.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub period: Period,
    pub endpoint: EndpointKey,
    pub trace_id: String,
    pub marginal_gain: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub encode_ns: u64,
    pub allocate_ns: u64,
    pub select_ns: u64,
    pub per_trace_encode_ns: Vec<u64>,
}

/// The outcome of one sealed window.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    pub window: u64,
    pub window_start: u64,
    pub window_end: u64,
    pub trace_count: usize,
    pub selected: Vec<SampledTrace>,
    pub unspent: u64,
    pub plan: QuotaPlan,
    pub steps: Vec<StepRecord>,
    pub timing: StageTiming,
}

#[derive(Clone, Debug)]
pub struct WindowResult {
    pub sample: SampleSet,
    /// Full original traces of the selected ids, in selection order.
    pub retained: Vec<Trace>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuntimeStats {
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p99_ms: f64,
}

fn nearest_rank(sorted: &[u64], p: f64) -> u64 {
    let rank = libm::ceil(p * sorted.len() as f64).max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

/// Per-trace cost of a window: total stage time over trace count for the
/// mean; encode latencies for the quantiles. `None` for empty windows.
pub fn measure_per_trace_runtime(sample: &SampleSet) -> Option<RuntimeStats> {
    runtime_over(core::slice::from_ref(sample))
}

/// [`measure_per_trace_runtime`] pooled over several windows.
pub fn runtime_over(samples: &[SampleSet]) -> Option<RuntimeStats> {
    let n: usize = samples.iter().map(|s| s.trace_count).sum();
    if n == 0 {
        return None;
    }
    let total: u64 = samples
        .iter()
        .map(|s| s.timing.encode_ns + s.timing.allocate_ns + s.timing.select_ns)
        .sum();
    let mut lat: Vec<u64> = samples
        .iter()
        .flat_map(|s| s.timing.per_trace_encode_ns.iter().copied())
        .collect();
    lat.sort_unstable();
    let (p50, p99) = if lat.is_empty() {
        (0, 0)
    } else {
        (nearest_rank(&lat, 0.5), nearest_rank(&lat, 0.99))
    };
    Some(RuntimeStats {
        mean_ms: total as f64 / n as f64 / 1e6,
        p50_ms: p50 as f64 / 1e6,
        p99_ms: p99 as f64 / 1e6,
    })
}

/// State carried across windows.
#[derive(Debug)]
pub struct SamplerState {
    pub encoder: TraceEncoder,
    pub group_stats: BTreeMap<EndpointKey, GroupStats>,
    pub cache: SimilarityCache,
    pub qpm_history: VecDeque<f64>,
    pub config: SamplerConfig,
}

impl SamplerState {
    pub fn new(config: SamplerConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        Ok(Self {
            encoder: TraceEncoder::new(config.anomaly),
            group_stats: BTreeMap::new(),
            cache: SimilarityCache::from_config(&config.selector),
            qpm_history: VecDeque::new(),
            config,
        })
    }

    /// Appends a sealed window's end-to-end durations to the group baselines.
    fn absorb(&mut self, traces: &[EncodedTrace]) {
        absorb_durations(
            &mut self.group_stats,
            traces.iter().map(|t| (&t.endpoint, t.end_to_end_duration)),
            self.config.anomaly.window_capacity,
        );
    }
}

#[derive(Debug)]
struct OpenWindow {
    index: u64,
    traces: Vec<Trace>,
    encoded: Vec<EncodedTrace>,
    encode_ns: Vec<u64>,
    last_arrival: u64,
}

/// Streaming sampler: push traces in arrival order, collect sealed windows.
#[derive(Debug)]
pub struct Sampler {
    pub state: SamplerState,
    open: Option<OpenWindow>,
}

impl Sampler {
    pub fn new(config: SamplerConfig) -> Result<Self, ConfigError> {
        Ok(Self {
            state: SamplerState::new(config)?,
            open: None,
        })
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.state.config
    }

    /// Ingests one completed trace. Returns the previous window's result when
    /// this trace opens a later window. A trace arriving after its window was
    /// sealed joins the open window.
    pub fn push(
        &mut self,
        trace: Trace,
        alarms: &AlarmFeed,
        clock: &mut impl Clock,
    ) -> Option<WindowResult> {
        let window_ns = self.state.config.window_ns;
        let arrival = trace.completion();
        let index = arrival / window_ns;
        let sealed = match &self.open {
            Some(w) if index > w.index => self.seal(alarms, clock, false),
            _ => None,
        };
        let open = self.open.get_or_insert_with(|| OpenWindow {
            index,
            traces: Vec::new(),
            encoded: Vec::new(),
            encode_ns: Vec::new(),
            last_arrival: 0,
        });

        let t0 = clock.now_ns();
        let capacity = self.state.config.anomaly.window_capacity;
        let endpoint = trace.root().endpoint();
        let stats = self
            .state
            .group_stats
            .entry(endpoint.clone())
            .or_insert_with(|| GroupStats::new(endpoint, capacity));
        let mut encoded = self.state.encoder.encode(&trace, stats);
        encoded.eps = self.state.cache.intern(encoded.eps);
        let t1 = clock.now_ns();

        open.encode_ns.push(t1.saturating_sub(t0));
        open.last_arrival = open.last_arrival.max(arrival);
        open.encoded.push(encoded);
        open.traces.push(trace);
        sealed
    }

    /// Seals the open window, if any. Call once the source is exhausted.
    pub fn finish(&mut self, alarms: &AlarmFeed, clock: &mut impl Clock) -> Option<WindowResult> {
        self.seal(alarms, clock, true)
    }

    fn seal(
        &mut self,
        alarms: &AlarmFeed,
        clock: &mut impl Clock,
        last: bool,
    ) -> Option<WindowResult> {
        let open = self.open.take()?;
        let window_ns = self.state.config.window_ns;
        let window_start = open.index * window_ns;
        let nominal_end = window_start + window_ns;
        // a trailing partial window is measured over the time it actually covered
        let window_end = if last {
            nominal_end.min(open.last_arrival.max(window_start) + 1)
        } else {
            nominal_end
        };

        let OpenWindow {
            index,
            traces,
            encoded,
            encode_ns,
            ..
        } = open;
        let buffer = BufferWindow {
            traces: encoded,
            window_start,
            window_end,
            qpm_history: self.state.qpm_history.iter().copied().collect(),
        };

        let t0 = clock.now_ns();
        let plan = allocate(&buffer, alarms, &self.state.config.allocator);
        let t1 = clock.now_ns();

        let (normal, abnormal) = split_periods(&buffer, alarms);
        let mut members: BTreeMap<(Period, &EndpointKey), Vec<usize>> = BTreeMap::new();
        for (period, idx) in [(Period::Normal, &normal), (Period::Abnormal, &abnormal)] {
            for &i in idx {
                members
                    .entry((period, &buffer.traces[i].endpoint))
                    .or_default()
                    .push(i);
            }
        }

        let selector = self.state.config.selector;
        let mut selected = Vec::new();
        let mut steps = Vec::new();
        let mut picked = Vec::new();
        for entry in plan.entries.iter().filter(|e| e.quota > 0) {
            let group = &members[&(entry.period, &entry.endpoint)];
            let candidates: Vec<&EncodedTrace> = group.iter().map(|&i| &buffer.traces[i]).collect();
            let choice = greedy_select(
                &candidates,
                entry.quota as usize,
                &selector,
                &mut self.state.cache,
            );
            for step in choice.steps {
                let i = group[step.index];
                let t = &buffer.traces[i];
                steps.push(StepRecord {
                    step: steps.len(),
                    period: entry.period,
                    endpoint: entry.endpoint.clone(),
                    trace_id: t.trace_id.clone(),
                    marginal_gain: step.marginal_gain,
                });
                selected.push(SampledTrace {
                    trace_id: t.trace_id.clone(),
                    endpoint: t.endpoint.clone(),
                    anomaly: t.anomaly,
                    period: entry.period,
                });
                picked.push(i);
            }
        }
        let t2 = clock.now_ns();

        // the window's observations only now enter the baselines
        self.state.absorb(&buffer.traces);
        self.state.qpm_history.push_back(buffer.qpm());
        while self.state.qpm_history.len() > self.state.config.allocator.qpm_history_depth {
            self.state.qpm_history.pop_front();
        }

        let mut traces: Vec<Option<Trace>> = traces.into_iter().map(Some).collect();
        let retained = picked.iter().filter_map(|&i| traces[i].take()).collect();
        let encode_total = encode_ns.iter().sum();
        Some(WindowResult {
            sample: SampleSet {
                window: index,
                window_start,
                window_end,
                trace_count: buffer.traces.len(),
                unspent: plan.unspent,
                selected,
                plan,
                steps,
                timing: StageTiming {
                    encode_ns: encode_total,
                    allocate_ns: t1.saturating_sub(t0),
                    select_ns: t2.saturating_sub(t1),
                    per_trace_encode_ns: encode_ns,
                },
            },
            retained,
        })
    }
}

/// Drives a sampler over a whole trace source, handing each sealed window to
/// `sink`. A sink error aborts the run; windows already sealed stay applied.
pub fn run_stream<E>(
    traces: impl IntoIterator<Item = Trace>,
    alarms: &AlarmFeed,
    sampler: &mut Sampler,
    clock: &mut impl Clock,
    mut sink: impl FnMut(WindowResult) -> Result<(), E>,
) -> Result<(), E> {
    for trace in traces {
        if let Some(done) = sampler.push(trace, alarms, clock) {
            sink(done)?;
        }
    }
    if let Some(done) = sampler.finish(alarms, clock) {
        sink(done)?;
    }
    Ok(())
}

fn absorb_durations<'a>(
    stats: &mut BTreeMap<EndpointKey, GroupStats>,
    durations: impl Iterator<Item = (&'a EndpointKey, u64)>,
    capacity: usize,
) {
    let mut per_group: BTreeMap<&EndpointKey, Vec<u64>> = BTreeMap::new();
    for (ep, d) in durations {
        per_group.entry(ep).or_default().push(d);
    }
    for (ep, ds) in per_group {
        stats
            .entry(ep.clone())
            .or_insert_with(|| GroupStats::new(ep.clone(), capacity))
            .extend(ds);
    }
}

/// Encodes a corpus with the same windowed baseline updates the sampler
/// applies, without selecting anything.
pub fn encode_corpus(
    traces: &[Trace],
    anomaly: &AnomalyConfig,
    window_ns: u64,
) -> Vec<EncodedTrace> {
    let mut encoder = TraceEncoder::new(*anomaly);
    let mut stats: BTreeMap<EndpointKey, GroupStats> = BTreeMap::new();
    let mut pending: Vec<(EndpointKey, u64)> = Vec::new();
    let mut current: Option<u64> = None;
    let mut out = Vec::with_capacity(traces.len());
    for trace in traces {
        let index = trace.completion() / window_ns;
        if current.is_some_and(|c| index > c) {
            absorb_durations(
                &mut stats,
                pending.iter().map(|(ep, d)| (ep, *d)),
                anomaly.window_capacity,
            );
            pending.clear();
        }
        if current.is_none_or(|c| index > c) {
            current = Some(index);
        }
        let ep = trace.root().endpoint();
        let group = stats
            .entry(ep.clone())
            .or_insert_with(|| GroupStats::new(ep.clone(), anomaly.window_capacity));
        let e = encoder.encode(trace, group);
        pending.push((ep, e.end_to_end_duration));
        out.push(e);
    }
    out
}
