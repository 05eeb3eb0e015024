//! Trace, span and log records, and assembly of raw spans into traces.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

/// Severity of a log line attached to a span.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum LogLevel {
    Debug,
    Info,
    Warn,
    Error,
}

impl LogLevel {
    pub fn as_str(self) -> &'static str {
        match self {
            LogLevel::Debug => "DEBUG",
            LogLevel::Info => "INFO",
            LogLevel::Warn => "WARN",
            LogLevel::Error => "ERROR",
        }
    }
}

/// Log payload: either a raw message still to be templated, or a template id
/// assigned upstream during collection.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum LogBody {
    Message(String),
    Template(u32),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LogEvent {
    pub timestamp: u64,
    pub level: LogLevel,
    pub body: LogBody,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SpanStatus {
    Ok,
    Error,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Span {
    pub trace_id: String,
    pub span_id: String,
    pub parent_span_id: Option<String>,
    pub service: String,
    pub operation: String,
    /// Start time in nanoseconds since the epoch.
    pub start: u64,
    pub duration: u64,
    pub status: SpanStatus,
    pub logs: Vec<LogEvent>,
}

impl Span {
    pub fn end(&self) -> u64 {
        self.start.saturating_add(self.duration)
    }

    pub fn endpoint(&self) -> EndpointKey {
        EndpointKey::new(self.service.clone(), self.operation.clone())
    }
}

/// Identity of an API entry point: the root span's service and operation.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EndpointKey {
    pub service: String,
    pub operation: String,
}

impl EndpointKey {
    pub fn new(service: impl Into<String>, operation: impl Into<String>) -> Self {
        Self {
            service: service.into(),
            operation: operation.into(),
        }
    }
}

impl fmt::Display for EndpointKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.service, self.operation)
    }
}

/// A complete trace with its parent index resolved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trace {
    pub trace_id: String,
    pub spans: Vec<Span>,
    pub root_index: usize,
    /// Spans whose `parent_span_id` is set but does not resolve inside the trace.
    pub orphan_indices: Vec<usize>,
    /// Resolved parent index per span (`None` for parentless spans and orphans).
    pub parents: Vec<Option<usize>>,
}

impl Trace {
    pub fn root(&self) -> &Span {
        &self.spans[self.root_index]
    }

    /// Completion time of the trace: the latest span end.
    pub fn completion(&self) -> u64 {
        self.spans.iter().map(Span::end).max().unwrap_or(0)
    }

    /// Children of every span, in span order.
    pub fn children(&self) -> Vec<Vec<usize>> {
        let mut children = alloc::vec![Vec::new(); self.spans.len()];
        for (child, parent) in self.parents.iter().enumerate() {
            if let Some(p) = parent {
                children[*p].push(child);
            }
        }
        children
    }

    /// Iterator over `(parent, child)` index pairs with a resolvable parent link.
    pub fn parent_child_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.parents
            .iter()
            .enumerate()
            .filter_map(|(child, parent)| parent.map(|p| (p, child)))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum AssemblyError {
    #[error("cannot assemble an empty span list")]
    Empty,
    #[error("trace {trace_id}: duplicate span id {span_id}")]
    DuplicateSpanId { trace_id: String, span_id: String },
    #[error("span list mixes trace ids {first} and {other}")]
    MixedTraceIds { first: String, other: String },
}

/// Builds a [`Trace`] from the spans of one trace.
///
/// The root is the parentless span with the earliest start (ties broken by the
/// smallest span id). A trace with no parentless span is rooted at its earliest
/// orphan; a pure parent cycle falls back to the earliest span overall. Logs of
/// every span are sorted by timestamp (stable).
pub fn assemble_trace(mut spans: Vec<Span>) -> Result<Trace, AssemblyError> {
    let first = spans.first().ok_or(AssemblyError::Empty)?;
    let trace_id = first.trace_id.clone();
    if let Some(other) = spans.iter().find(|s| s.trace_id != trace_id) {
        return Err(AssemblyError::MixedTraceIds {
            first: trace_id,
            other: other.trace_id.clone(),
        });
    }

    let mut by_id: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, span) in spans.iter().enumerate() {
        if by_id.insert(span.span_id.as_str(), i).is_some() {
            return Err(AssemblyError::DuplicateSpanId {
                trace_id,
                span_id: span.span_id.clone(),
            });
        }
    }

    let mut parents = Vec::with_capacity(spans.len());
    let mut orphan_indices = Vec::new();
    let mut parentless = Vec::new();
    for (i, span) in spans.iter().enumerate() {
        match span.parent_span_id.as_deref() {
            None => {
                parents.push(None);
                parentless.push(i);
            }
            Some(pid) => match by_id.get(pid) {
                Some(&p) if p != i => parents.push(Some(p)),
                _ => {
                    parents.push(None);
                    orphan_indices.push(i);
                }
            },
        }
    }

    let earliest = |candidates: &[usize]| {
        candidates.iter().copied().min_by(|&a, &b| {
            (spans[a].start, spans[a].span_id.as_str())
                .cmp(&(spans[b].start, spans[b].span_id.as_str()))
        })
    };
    let all: Vec<usize> = (0..spans.len()).collect();
    let root_index = earliest(&parentless)
        .or_else(|| earliest(&orphan_indices))
        .or_else(|| earliest(&all))
        .expect("non-empty span list");

    for span in &mut spans {
        span.logs.sort_by_key(|l| l.timestamp);
    }

    Ok(Trace {
        trace_id,
        spans,
        root_index,
        orphan_indices,
        parents,
    })
}

/// Groups spans by trace id (in first-encounter order) and assembles each group.
///
/// Groups that fail assembly are dropped and their errors returned alongside.
pub fn group_into_traces(spans: Vec<Span>) -> (Vec<Trace>, Vec<AssemblyError>) {
    let mut order: Vec<Vec<Span>> = Vec::new();
    let mut slot: BTreeMap<String, usize> = BTreeMap::new();
    for span in spans {
        let idx = *slot.entry(span.trace_id.clone()).or_insert_with(|| {
            order.push(Vec::new());
            order.len() - 1
        });
        order[idx].push(span);
    }
    let mut traces = Vec::with_capacity(order.len());
    let mut errors = Vec::new();
    for group in order {
        match assemble_trace(group) {
            Ok(t) => traces.push(t),
            Err(e) => errors.push(e),
        }
    }
    (traces, errors)
}

/// Endpoint of the trace's root span.
pub fn root_endpoint(trace: &Trace) -> EndpointKey {
    trace.root().endpoint()
}
