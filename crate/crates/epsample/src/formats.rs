//! JSONL record formats: spans, alarms, ground truth, samples and debug dumps.

use std::collections::HashMap;
use std::fmt;
use std::io::{self, BufRead, Write};

use epsample_core::model::{
    assemble_trace, AssemblyError, EndpointKey, LogBody, LogEvent, LogLevel, Span, SpanStatus,
    Trace,
};
use epsample_core::pipeline::{SampleSet, StepRecord};
use epsample_core::quota::{Alarm, AlarmFeed, Period};
use epsample_core::EncodedTrace;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogRecord {
    pub ts_ns: u64,
    pub level: LogLevel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_id: Option<u32>,
}

/// One line of the span format.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanRecord {
    pub trace_id: String,
    pub span_id: String,
    #[serde(default)]
    pub parent_span_id: Option<String>,
    pub service: String,
    pub operation: String,
    pub start_ns: u64,
    pub duration_ns: u64,
    pub status: SpanStatus,
    #[serde(default)]
    pub logs: Vec<LogRecord>,
}

impl From<&Span> for SpanRecord {
    fn from(s: &Span) -> Self {
        Self {
            trace_id: s.trace_id.clone(),
            span_id: s.span_id.clone(),
            parent_span_id: s.parent_span_id.clone(),
            service: s.service.clone(),
            operation: s.operation.clone(),
            start_ns: s.start,
            duration_ns: s.duration,
            status: s.status,
            logs: s
                .logs
                .iter()
                .map(|l| {
                    let (message, template_id) = match &l.body {
                        LogBody::Message(m) => (Some(m.clone()), None),
                        LogBody::Template(t) => (None, Some(*t)),
                    };
                    LogRecord {
                        ts_ns: l.timestamp,
                        level: l.level,
                        message,
                        template_id,
                    }
                })
                .collect(),
        }
    }
}

impl TryFrom<SpanRecord> for Span {
    type Error = String;

    fn try_from(r: SpanRecord) -> Result<Self, String> {
        if r.service.is_empty() || r.operation.is_empty() {
            return Err("service and operation must be non-empty".into());
        }
        let logs = r
            .logs
            .into_iter()
            .enumerate()
            .map(|(i, l)| {
                let body = match (l.message, l.template_id) {
                    (Some(m), None) => LogBody::Message(m),
                    (None, Some(t)) => LogBody::Template(t),
                    _ => {
                        return Err(format!(
                            "logs[{i}]: exactly one of message / template_id is required"
                        ))
                    }
                };
                Ok(LogEvent {
                    timestamp: l.ts_ns,
                    level: l.level,
                    body,
                })
            })
            .collect::<Result<_, String>>()?;
        Ok(Span {
            trace_id: r.trace_id,
            span_id: r.span_id,
            parent_span_id: r.parent_span_id,
            service: r.service,
            operation: r.operation,
            start: r.start_ns,
            duration: r.duration_ns,
            status: r.status,
            logs,
        })
    }
}

/// A problem found while reading a span stream. Neither kind stops parsing.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Diagnostic {
    /// 1-based line number.
    MalformedRecord {
        line: usize,
        message: String,
    },
    InvalidTrace(AssemblyError),
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diagnostic::MalformedRecord { line, message } => {
                write!(f, "line {line}: malformed record: {message}")
            }
            Diagnostic::InvalidTrace(e) => write!(f, "rejected trace: {e}"),
        }
    }
}

#[derive(Debug, Default)]
pub struct ParsedStream {
    /// Traces in order of their first span's appearance.
    pub traces: Vec<Trace>,
    pub diagnostics: Vec<Diagnostic>,
}

/// Reads span JSONL, groups spans by trace id in encounter order and
/// assembles each group. Blank lines are skipped.
pub fn parse_trace_stream(reader: impl BufRead) -> io::Result<ParsedStream> {
    let mut order: HashMap<String, usize> = HashMap::new();
    let mut groups: Vec<Vec<Span>> = Vec::new();
    let mut diagnostics = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let span = serde_json::from_str::<SpanRecord>(&line)
            .map_err(|e| e.to_string())
            .and_then(Span::try_from);
        match span {
            Ok(span) => {
                let slot = *order.entry(span.trace_id.clone()).or_insert_with(|| {
                    groups.push(Vec::new());
                    groups.len() - 1
                });
                groups[slot].push(span);
            }
            Err(message) => diagnostics.push(Diagnostic::MalformedRecord {
                line: i + 1,
                message,
            }),
        }
    }
    let mut traces = Vec::with_capacity(groups.len());
    for spans in groups {
        match assemble_trace(spans) {
            Ok(t) => traces.push(t),
            Err(e) => diagnostics.push(Diagnostic::InvalidTrace(e)),
        }
    }
    Ok(ParsedStream {
        traces,
        diagnostics,
    })
}

/// Writes one JSON document per line.
pub fn write_jsonl<T: Serialize>(
    mut out: impl Write,
    records: impl IntoIterator<Item = T>,
) -> io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, &r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Error of a strictly parsed JSONL file.
#[derive(Debug, thiserror::Error)]
pub enum ReadError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
}

/// Reads a JSONL file in which every non-blank line must parse.
pub fn read_jsonl<T: DeserializeOwned>(reader: impl BufRead) -> Result<Vec<T>, ReadError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(&line).map_err(|e| ReadError::Malformed {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(v);
    }
    Ok(out)
}

pub fn write_spans<'a>(
    out: impl Write,
    spans: impl IntoIterator<Item = &'a Span>,
) -> io::Result<()> {
    write_jsonl(out, spans.into_iter().map(SpanRecord::from))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlarmRecord {
    pub window_start_ns: u64,
    pub window_end_ns: u64,
    pub endpoints: Vec<EndpointKey>,
}

impl From<&Alarm> for AlarmRecord {
    fn from(a: &Alarm) -> Self {
        Self {
            window_start_ns: a.window_start,
            window_end_ns: a.window_end,
            endpoints: a.endpoints.clone(),
        }
    }
}

pub fn write_alarms<'a>(
    out: impl Write,
    alarms: impl IntoIterator<Item = &'a Alarm>,
) -> io::Result<()> {
    write_jsonl(out, alarms.into_iter().map(AlarmRecord::from))
}

pub fn read_alarms(reader: impl BufRead) -> Result<AlarmFeed, ReadError> {
    let records: Vec<AlarmRecord> = read_jsonl(reader)?;
    let alarms = records
        .into_iter()
        .map(|r| Alarm {
            window_start: r.window_start_ns,
            window_end: r.window_end_ns,
            endpoints: r.endpoints,
        })
        .collect();
    AlarmFeed::new(alarms).map_err(|e| ReadError::Malformed {
        line: 0,
        message: e.to_string(),
    })
}

/// One selected trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub trace_id: String,
    pub window: u64,
    pub endpoint: EndpointKey,
    pub period: Period,
    pub anomaly: f64,
}

pub fn sample_records(sample: &SampleSet) -> impl Iterator<Item = SampleRecord> + '_ {
    sample.selected.iter().map(move |s| SampleRecord {
        trace_id: s.trace_id.clone(),
        window: sample.window,
        endpoint: s.endpoint.clone(),
        period: s.period,
        anomaly: s.anomaly,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateRecord {
    pub template_id: u32,
    pub template: String,
}

/// Encoded-trace dump line; pairs are sorted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodedRecord {
    pub trace_id: String,
    pub endpoint: String,
    pub anomaly: f64,
    pub pairs: Vec<(u32, u32)>,
}

impl From<&EncodedTrace> for EncodedRecord {
    fn from(e: &EncodedTrace) -> Self {
        Self {
            trace_id: e.trace_id.clone(),
            endpoint: e.endpoint.to_string(),
            anomaly: e.anomaly,
            pairs: e.eps.pairs().to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuotaRecord {
    pub window: u64,
    pub period: Period,
    pub endpoint: EndpointKey,
    pub quota: u64,
    pub candidates: u64,
    pub alarmed: bool,
    pub scale: f64,
}

pub fn quota_records(sample: &SampleSet) -> impl Iterator<Item = QuotaRecord> + '_ {
    sample.plan.entries.iter().map(move |e| QuotaRecord {
        window: sample.window,
        period: e.period,
        endpoint: e.endpoint.clone(),
        quota: e.quota,
        candidates: e.candidates,
        alarmed: e.alarmed,
        scale: sample.plan.scale,
    })
}

/// Selection-trace line: one greedy or fill step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub window: u64,
    pub step: usize,
    pub period: Period,
    pub endpoint: EndpointKey,
    pub chosen_trace_id: String,
    pub marginal_gain: Option<f64>,
}

pub fn selection_records(sample: &SampleSet) -> impl Iterator<Item = SelectionRecord> + '_ {
    sample
        .steps
        .iter()
        .map(move |s: &StepRecord| SelectionRecord {
            window: sample.window,
            step: s.step,
            period: s.period,
            endpoint: s.endpoint.clone(),
            chosen_trace_id: s.trace_id.clone(),
            marginal_gain: s.marginal_gain,
        })
}
