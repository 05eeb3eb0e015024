//! Whole-corpus runs of the sampler and evaluation index construction.

use std::collections::HashMap;
use std::time::Instant;

use epsample_core::dpp::CacheStats;
use epsample_core::eval::{CorpusEntry, CorpusIndex, EvalError};
use epsample_core::model::Trace;
use epsample_core::pipeline::{
    encode_corpus, run_stream, Clock, SampleSet, Sampler, SamplerConfig,
};
use epsample_core::quota::AlarmFeed;
use epsample_core::{AnomalyConfig, ConfigError, EncodedTrace};

/// Monotonic clock for stage timing.
#[derive(Clone, Copy, Debug)]
pub struct MonotonicClock(Instant);

impl Default for MonotonicClock {
    fn default() -> Self {
        Self(Instant::now())
    }
}

impl Clock for MonotonicClock {
    fn now_ns(&mut self) -> u64 {
        self.0.elapsed().as_nanos() as u64
    }
}

#[derive(Debug)]
pub struct SampleRun {
    pub windows: Vec<SampleSet>,
    /// Full traces of the selected ids, when requested.
    pub retained: Vec<Trace>,
    pub cache: CacheStats,
    pub templates: Vec<(u32, String)>,
}

impl SampleRun {
    pub fn selected_ids(&self) -> Vec<String> {
        self.windows
            .iter()
            .flat_map(|w| w.selected.iter().map(|s| s.trace_id.clone()))
            .collect()
    }

    pub fn trace_count(&self) -> usize {
        self.windows.iter().map(|w| w.trace_count).sum()
    }
}

/// Runs the windowed sampler over `traces` in order.
pub fn run_sampler(
    traces: &[Trace],
    alarms: &AlarmFeed,
    config: SamplerConfig,
    keep_traces: bool,
) -> Result<SampleRun, ConfigError> {
    let mut sampler = Sampler::new(config)?;
    let mut clock = MonotonicClock::default();
    let mut windows = Vec::new();
    let mut retained = Vec::new();
    let sink = |done: epsample_core::pipeline::WindowResult| -> Result<(), ConfigError> {
        windows.push(done.sample);
        if keep_traces {
            retained.extend(done.retained);
        }
        Ok(())
    };
    run_stream(
        traces.iter().cloned(),
        alarms,
        &mut sampler,
        &mut clock,
        sink,
    )?;
    Ok(SampleRun {
        windows,
        retained,
        cache: sampler.state.cache.stats(),
        templates: sampler.state.encoder.templates.templates().collect(),
    })
}

/// Encodes the corpus the way the sampler does and indexes it for metrics.
/// `labels` maps trace ids to ground-truth anomaly flags.
pub fn build_index(
    traces: &[Trace],
    anomaly: &AnomalyConfig,
    window_ns: u64,
    labels: Option<&HashMap<String, bool>>,
    rare_max: Option<u64>,
) -> Result<(CorpusIndex, Vec<EncodedTrace>), EvalError> {
    let encoded = encode_corpus(traces, anomaly, window_ns);
    let entries: Vec<CorpusEntry> = traces
        .iter()
        .zip(&encoded)
        .map(|(t, e)| {
            let mut entry = CorpusEntry::new(t, e, anomaly.anomaly_threshold);
            entry.label = labels.and_then(|l| l.get(&t.trace_id).copied());
            entry
        })
        .collect();
    Ok((CorpusIndex::build(&entries, rare_max)?, encoded))
}
