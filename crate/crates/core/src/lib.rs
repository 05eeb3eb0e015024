//! Tail-based trace sampling over event-pair-set encodings.
//!
//! Completed traces are encoded as sets of event pairs (span lifecycle
//! markers, log templates, error and degradation indicators) together with
//! an anomaly score. Traces are buffered in fixed time windows, grouped by
//! their root endpoint, and each window's budget is divided across normal and
//! alarmed periods and across groups. Within a group, a greedy
//! determinantal-point-process selector picks a diverse, anomaly-weighted
//! subset using Jaccard similarity between event-pair sets.
//!
//! The crate is `no_std` (it needs `alloc`); file formats, timing and the
//! command-line tool live in the `epsample` crate.

#![no_std]
#![warn(rust_2018_idioms)]
// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod dpp;
pub mod encoder;
pub mod eval;
pub mod model;
pub mod pipeline;
pub mod quota;
pub mod templater;
pub mod workload;

use alloc::string::String;

pub use dpp::{greedy_select, jaccard, SelectorConfig, SimilarityCache};
pub use encoder::{
    anomaly_score, encode, AnomalyConfig, EncodedTrace, EventPairSet, GroupStats, TraceEncoder,
};
pub use model::{assemble_trace, root_endpoint, EndpointKey, LogEvent, Span, Trace};
pub use pipeline::{SampleSet, Sampler, SamplerConfig};
pub use quota::{allocate, AlarmFeed, AllocatorConfig, Period, QuotaPlan};

/// An invalid configuration value.
#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("invalid configuration: {0}")]
pub struct ConfigError(pub String);

impl ConfigError {
    pub fn new(msg: impl Into<String>) -> Self {
        Self(msg.into())
    }
}
