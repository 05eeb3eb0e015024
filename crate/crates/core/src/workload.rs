//! Synthetic microservice trace corpora with long-tail path skew, correlated
//! logs, fault windows, alarms and ground-truth labels.
//!
//! Generation is a pure function of [`ScenarioConfig`]: topologies, traffic,
//! fault selection and background blind spots each draw from their own
//! ChaCha stream, so e.g. adding a fault does not reshuffle the variant pool.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{EndpointKey, LogBody, LogEvent, LogLevel, Span, SpanStatus};
use crate::quota::Alarm;
use crate::ConfigError;

/// Start of every generated corpus: 2023-11-14T22:13:00Z, minute-aligned.
pub const BASE_TIMESTAMP_NS: u64 = 1_699_999_980 * NS_PER_SEC;

const NS_PER_SEC: u64 = 1_000_000_000;
const NS_PER_MINUTE: u64 = 60 * NS_PER_SEC;

const MIN_SPANS: usize = 3;
const MAX_SPANS: usize = 30;
const MAX_DEPTH: usize = 5;
const FAN_OUT_PROBABILITY: f64 = 0.15;
const JITTER: f64 = 0.10;

const SERVICES: [&str; 24] = [
    "ts-basic-service",
    "ts-route-service",
    "ts-price-service",
    "ts-station-service",
    "ts-train-service",
    "ts-config-service",
    "ts-order-service",
    "ts-travel-service",
    "ts-seat-service",
    "ts-user-service",
    "ts-auth-service",
    "ts-contacts-service",
    "ts-food-service",
    "ts-payment-service",
    "ts-preserve-service",
    "ts-security-service",
    "ts-ticketinfo-service",
    "ts-notification-service",
    "ts-inside-payment-service",
    "ts-consign-service",
    "ts-assurance-service",
    "ts-cancel-service",
    "ts-rebook-service",
    "ts-verification-code-service",
];

const OPERATIONS: [&str; 16] = [
    "queryForTravel",
    "getRouteById",
    "queryPriceConfig",
    "queryStationId",
    "retrieveTrain",
    "findConfig",
    "createOrder",
    "getTripDetail",
    "getLeftTicket",
    "getUserById",
    "verifyToken",
    "findContacts",
    "getAllFood",
    "pay",
    "preserve",
    "check",
];

/// Healthy INFO phrases. Every `{}` is replaced by a number, so mined
/// templates see real variables; first tokens are distinct so the templater
/// never has to merge two phrases.
const INFO_PHRASES: [&str; 12] = [
    "cache lookup for key {} returned {} entries",
    "connected to db pool {} in {} ms",
    "loaded {} routes from config version {}",
    "user session {} refreshed with ttl {}",
    "processed batch of {} records in {} ms",
    "scheduler queued {} tasks with priority {}",
    "http response sent with status 200 and {} bytes",
    "validated {} seats for train {}",
    "computed price {} across {} stations",
    "token verified for account {} expiring in {} s",
    "fetched {} orders from page {}",
    "rpc client reused connection {} after {} ms",
];

const BLIND_SPOT_ERRORS: [&str; 2] = [
    "failed to parse config property {} at line {}",
    "configuration reload aborted after {} retries",
];
const BLIND_SPOT_WARN: &str = "falling back to default timeout of {} ms";
const STATUS_ERROR_PHRASE: &str = "downstream call failed with status 500 after {} ms";

/// Observable symptom class of an injected fault.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FaultKind {
    /// Flips a span's status to ERROR and adds an ERROR log.
    StatusError,
    /// Adds ERROR and WARN logs to the root span; statuses and latency stay
    /// normal (the semantic blind spot).
    ErrorLogOnly,
    /// Multiplies the root duration by at least 2.
    LatencyInflation,
    /// Thins the target's traffic by `intensity`.
    TrafficDrop,
}

impl FaultKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FaultKind::StatusError => "STATUS_ERROR",
            FaultKind::ErrorLogOnly => "ERROR_LOG_ONLY",
            FaultKind::LatencyInflation => "LATENCY_INFLATION",
            FaultKind::TrafficDrop => "TRAFFIC_DROP",
        }
    }
}

impl fmt::Display for FaultKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSpec {
    pub kind: FaultKind,
    /// Endpoint index; `None` targets every endpoint.
    #[serde(default)]
    pub target: Option<usize>,
    /// Window bounds in minutes from the start of the scenario.
    pub window_start: f64,
    pub window_end: f64,
    /// Fraction of target traffic affected (or dropped, for `TRAFFIC_DROP`).
    pub intensity: f64,
    #[serde(default)]
    pub emits_alarm: bool,
}

impl FaultSpec {
    fn covers(&self, minute_offset: f64, endpoint: usize) -> bool {
        self.window_start <= minute_offset
            && minute_offset < self.window_end
            && self.target.is_none_or(|t| t == endpoint)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub seed: u64,
    /// Length of the corpus in minutes.
    pub duration: u32,
    /// Baseline traces per minute.
    pub qpm: u32,
    pub endpoints: usize,
    pub zipf_s: f64,
    pub pattern_variants: usize,
    pub faults: Vec<FaultSpec>,
    /// Fraction of otherwise healthy traces given ERROR_LOG_ONLY symptoms.
    pub blind_spot_fraction: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            name: "custom".into(),
            seed: 0,
            duration: 10,
            qpm: 1000,
            endpoints: 20,
            zipf_s: 1.2,
            pattern_variants: 16,
            faults: Vec::new(),
            blind_spot_fraction: 0.0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.endpoints == 0 {
            return Err(ConfigError::new("endpoints: must be at least 1"));
        }
        if !(self.zipf_s > 0.0 && self.zipf_s.is_finite()) {
            return Err(ConfigError::new("zipf_s: must be a positive number"));
        }
        if self.duration == 0 {
            return Err(ConfigError::new("duration: must be at least 1 minute"));
        }
        if self.qpm == 0 {
            return Err(ConfigError::new("qpm: must be at least 1"));
        }
        if self.pattern_variants == 0 {
            return Err(ConfigError::new("pattern_variants: must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.blind_spot_fraction) {
            return Err(ConfigError::new("blind_spot_fraction: must lie in [0, 1]"));
        }
        for (i, f) in self.faults.iter().enumerate() {
            if !(f.window_start >= 0.0 && f.window_start < f.window_end) {
                return Err(ConfigError::new(format!(
                    "faults[{i}]: window_start must be >= 0 and precede window_end"
                )));
            }
            if f.window_end > self.duration as f64 {
                return Err(ConfigError::new(format!(
                    "faults[{i}]: window_end {} exceeds duration {}",
                    f.window_end, self.duration
                )));
            }
            if !(f.intensity > 0.0 && f.intensity <= 1.0) {
                return Err(ConfigError::new(format!(
                    "faults[{i}]: intensity must lie in (0, 1]"
                )));
            }
            if let Some(t) = f.target {
                if t >= self.endpoints {
                    return Err(ConfigError::new(format!(
                        "faults[{i}]: target {t} out of range for {} endpoints",
                        self.endpoints
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Per-trace label.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub trace_id: String,
    pub anomalous: bool,
    pub fault: Option<FaultKind>,
    /// Generator-side pattern: topology variant plus injected symptom.
    pub pattern_id: u32,
    /// Topology variant, unique across endpoints.
    pub path_id: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GeneratedTrace {
    pub endpoint: usize,
    pub spans: Vec<Span>,
    pub truth: GroundTruth,
}

impl GeneratedTrace {
    /// Latest span end.
    pub fn completion(&self) -> u64 {
        self.spans.iter().map(Span::end).max().unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Scenario {
    /// Traces in completion order.
    pub traces: Vec<GeneratedTrace>,
    pub alarms: Vec<Alarm>,
    pub endpoints: Vec<EndpointKey>,
    pub start_ns: u64,
    pub end_ns: u64,
}

impl Scenario {
    pub fn spans(&self) -> impl Iterator<Item = &Span> + '_ {
        self.traces.iter().flat_map(|t| t.spans.iter())
    }

    pub fn ground_truth(&self) -> impl Iterator<Item = &GroundTruth> + '_ {
        self.traces.iter().map(|t| &t.truth)
    }

    /// Number of traces whose root starts in `[start, end)`.
    pub fn count_between(&self, start: u64, end: u64) -> usize {
        self.traces
            .iter()
            .filter(|t| (start..end).contains(&t.spans[0].start))
            .count()
    }
}

/// Endpoint `i` of every scenario; endpoint 0 is the blind-spot motif's entry
/// point.
pub fn endpoint_key(i: usize) -> EndpointKey {
    let service = SERVICES[i % SERVICES.len()];
    let op = OPERATIONS[(i / SERVICES.len()) % OPERATIONS.len()];
    let round = i / (SERVICES.len() * OPERATIONS.len());
    if round == 0 {
        EndpointKey::new(service, op)
    } else {
        EndpointKey::new(service, format!("{op}V{round}"))
    }
}

#[derive(Clone, Debug)]
struct VariantNode {
    parent: Option<usize>,
    service: &'static str,
    operation: &'static str,
    /// Start offset and duration as fractions of the parent's duration.
    offset: f64,
    share: f64,
    phrases: Vec<usize>,
}

#[derive(Clone, Debug)]
struct Variant {
    nodes: Vec<VariantNode>,
}

fn zipf_cdf(n: usize, s: f64) -> Vec<f64> {
    let mut acc = 0.0;
    let mut cdf: Vec<f64> = (1..=n)
        .map(|k| {
            acc += libm::pow(k as f64, -s);
            acc
        })
        .collect();
    for c in &mut cdf {
        *c /= acc;
    }
    cdf
}

fn draw(cdf: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.gen();
    cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
}

fn variant_shape(nodes: &[VariantNode]) -> String {
    fn walk(nodes: &[VariantNode], kids: &[Vec<usize>], i: usize) -> String {
        let mut parts: Vec<String> = kids[i].iter().map(|&c| walk(nodes, kids, c)).collect();
        parts.sort();
        parts.dedup();
        format!(
            "{}/{}({})",
            nodes[i].service,
            nodes[i].operation,
            parts.join(",")
        )
    }
    let mut kids = vec![Vec::new(); nodes.len()];
    for (i, n) in nodes.iter().enumerate() {
        if let Some(p) = n.parent {
            kids[p].push(i);
        }
    }
    walk(nodes, &kids, 0)
}

fn build_variant(rng: &mut ChaCha8Rng) -> Variant {
    // Small trees dominate; u² biases toward MIN_SPANS.
    let u: f64 = rng.gen();
    let size = MIN_SPANS + libm::floor(u * u * (MAX_SPANS - MIN_SPANS + 1) as f64) as usize;
    let size = size.min(MAX_SPANS);
    let mut nodes = vec![VariantNode {
        parent: None,
        service: "",
        operation: "",
        offset: 0.0,
        share: 1.0,
        phrases: Vec::new(),
    }];
    let mut depth = vec![0usize];
    while nodes.len() < size {
        let candidates: Vec<usize> = (0..nodes.len()).filter(|&i| depth[i] < MAX_DEPTH).collect();
        let parent = candidates[rng.gen_range(0..candidates.len())];
        let (service, operation) = (
            SERVICES[rng.gen_range(0..SERVICES.len())],
            OPERATIONS[rng.gen_range(0..OPERATIONS.len())],
        );
        let copies = if nodes.len() + 1 < size && rng.gen_bool(FAN_OUT_PROBABILITY) {
            2
        } else {
            1
        };
        for _ in 0..copies {
            nodes.push(VariantNode {
                parent: Some(parent),
                service,
                operation,
                offset: 0.0,
                share: 0.0,
                phrases: Vec::new(),
            });
            depth.push(depth[parent] + 1);
        }
    }

    // Lay children out sequentially inside their parent; parallel copies
    // (same label, adjacent) share a slot.
    let mut kids = vec![Vec::new(); nodes.len()];
    for (i, n) in nodes.iter().enumerate() {
        if let Some(p) = n.parent {
            kids[p].push(i);
        }
    }
    for list in &kids {
        let mut slots: Vec<Vec<usize>> = Vec::new();
        for &c in list {
            match slots.last_mut() {
                Some(last)
                    if nodes[last[0]].service == nodes[c].service
                        && nodes[last[0]].operation == nodes[c].operation =>
                {
                    last.push(c)
                }
                _ => slots.push(vec![c]),
            }
        }
        let k = slots.len() as f64;
        for (i, slot) in slots.iter().enumerate() {
            for &c in slot {
                nodes[c].offset = 0.05 + 0.9 * i as f64 / k;
                nodes[c].share = 0.85 / k;
            }
        }
    }

    for n in &mut nodes {
        let count = rng.gen_range(0..=2);
        n.phrases = (0..count)
            .map(|_| rng.gen_range(0..INFO_PHRASES.len()))
            .collect();
    }
    Variant { nodes }
}

fn build_variants(cfg: &ScenarioConfig, endpoints: &[EndpointKey]) -> Vec<Vec<Variant>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    endpoints
        .iter()
        .map(|_| {
            let mut pool: Vec<Variant> = Vec::with_capacity(cfg.pattern_variants);
            let mut shapes = BTreeMap::new();
            let mut attempts = 0;
            while pool.len() < cfg.pattern_variants {
                let v = build_variant(&mut rng);
                attempts += 1;
                // Distinct topologies per endpoint; after many collisions
                // (tiny trees) a repeated topology still differs in its logs.
                if shapes.insert(variant_shape(&v.nodes), ()).is_none()
                    || attempts > 64 * cfg.pattern_variants
                {
                    pool.push(v);
                }
            }
            pool
        })
        .collect()
}

fn fill(phrase: &str, rng: &mut ChaCha8Rng) -> String {
    let mut out = String::with_capacity(phrase.len() + 8);
    let mut parts = phrase.split("{}");
    if let Some(first) = parts.next() {
        out.push_str(first);
    }
    for part in parts {
        out.push_str(&rng.gen_range(1u32..10_000).to_string());
        out.push_str(part);
    }
    out
}

fn jitter(rng: &mut ChaCha8Rng) -> f64 {
    1.0 - JITTER + 2.0 * JITTER * rng.gen::<f64>()
}

/// Bijective 64-bit mixer, so distinct counters give distinct ids.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn instantiate(
    variant: &Variant,
    endpoint: &EndpointKey,
    trace_id: &str,
    trace_seq: u64,
    start: u64,
    root_duration: u64,
    rng: &mut ChaCha8Rng,
) -> Vec<Span> {
    let mut spans: Vec<Span> = Vec::with_capacity(variant.nodes.len());
    for (i, node) in variant.nodes.iter().enumerate() {
        let (s, d) = match node.parent {
            None => (start, root_duration),
            Some(p) => {
                let parent = &spans[p];
                let pd = parent.duration as f64;
                let s = parent.start + libm::floor(node.offset * pd) as u64;
                let d = libm::floor(node.share * pd * (1.0 - JITTER * rng.gen::<f64>())) as u64;
                (s, d.max(1))
            }
        };
        let n = node.phrases.len() as f64;
        let logs = node
            .phrases
            .iter()
            .enumerate()
            .map(|(li, &ph)| LogEvent {
                timestamp: s + libm::floor(d as f64 * (li as f64 + 1.0) / (n + 1.0)) as u64,
                level: LogLevel::Info,
                body: LogBody::Message(fill(INFO_PHRASES[ph], rng)),
            })
            .collect();
        spans.push(Span {
            trace_id: trace_id.into(),
            span_id: format!("{:016x}", mix64((trace_seq << 6) | i as u64)),
            parent_span_id: node.parent.map(|p| spans[p].span_id.clone()),
            service: if i == 0 {
                endpoint.service.clone()
            } else {
                node.service.into()
            },
            operation: if i == 0 {
                endpoint.operation.clone()
            } else {
                node.operation.into()
            },
            start: s,
            duration: d,
            status: SpanStatus::Ok,
            logs,
        });
    }
    spans
}

fn push_log(span: &mut Span, fraction: f64, level: LogLevel, message: String) {
    let ts = span.start + libm::floor(span.duration as f64 * fraction) as u64;
    span.logs.push(LogEvent {
        timestamp: ts,
        level,
        body: LogBody::Message(message),
    });
    span.logs.sort_by_key(|l| l.timestamp);
}

/// Root-span ERROR, ERROR, WARN triple of the blind-spot motif; statuses and
/// timing are untouched.
fn inject_blind_spot(spans: &mut [Span], rng: &mut ChaCha8Rng) {
    let root = &mut spans[0];
    push_log(root, 0.02, LogLevel::Error, fill(BLIND_SPOT_ERRORS[0], rng));
    push_log(root, 0.03, LogLevel::Error, fill(BLIND_SPOT_ERRORS[1], rng));
    push_log(root, 0.04, LogLevel::Warn, fill(BLIND_SPOT_WARN, rng));
}

/// Returns the mutated span index as the symptom tag.
fn inject_status_error(spans: &mut [Span], rng: &mut ChaCha8Rng) -> u32 {
    let j = rng.gen_range(0..spans.len());
    let span = &mut spans[j];
    span.status = SpanStatus::Error;
    push_log(span, 0.9, LogLevel::Error, fill(STATUS_ERROR_PHRASE, rng));
    j as u32
}

fn inject_latency(spans: &mut [Span], rng: &mut ChaCha8Rng) {
    let factor = 2.0 + rng.gen::<f64>();
    spans[0].duration = libm::floor(spans[0].duration as f64 * factor) as u64;
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Symptom {
    None,
    BlindSpot,
    StatusError(u32),
    Latency,
}

/// Generates the corpus described by `cfg`.
pub fn generate(cfg: &ScenarioConfig) -> Result<Scenario, ConfigError> {
    cfg.validate()?;
    let endpoints: Vec<EndpointKey> = (0..cfg.endpoints).map(endpoint_key).collect();
    let variants = build_variants(cfg, &endpoints);

    let mut topo = ChaCha8Rng::seed_from_u64(cfg.seed);
    topo.set_stream(4);
    let base_duration: Vec<u64> = (0..cfg.endpoints)
        .map(|_| libm::floor(libm::exp(topo.gen_range(libm::log(5e6)..libm::log(2e8)))) as u64)
        .collect();

    let mut traffic = ChaCha8Rng::seed_from_u64(cfg.seed);
    traffic.set_stream(2);
    let mut faults = ChaCha8Rng::seed_from_u64(cfg.seed);
    faults.set_stream(3);
    let endpoint_cdf = zipf_cdf(cfg.endpoints, cfg.zipf_s);
    let variant_cdf = zipf_cdf(cfg.pattern_variants, cfg.zipf_s);
    let trace_prefix = mix64(cfg.seed ^ 0x5eed);

    let mut traces: Vec<GeneratedTrace> = Vec::new();
    let mut symptoms: Vec<Symptom> = Vec::new();
    let mut seq = 0u64;
    for minute in 0..cfg.duration as u64 {
        let mut offsets: Vec<u64> = (0..cfg.qpm)
            .map(|_| traffic.gen_range(0..NS_PER_MINUTE))
            .collect();
        offsets.sort_unstable();
        for off in offsets {
            let endpoint = draw(&endpoint_cdf, &mut traffic);
            let v = draw(&variant_cdf, &mut traffic);
            let start = BASE_TIMESTAMP_NS + minute * NS_PER_MINUTE + off;
            let at = (minute * NS_PER_MINUTE + off) as f64 / NS_PER_MINUTE as f64;
            let dropped = cfg
                .faults
                .iter()
                .filter(|f| f.kind == FaultKind::TrafficDrop && f.covers(at, endpoint))
                .any(|f| traffic.gen::<f64>() < f.intensity);
            if dropped {
                continue;
            }
            let trace_id = format!("{trace_prefix:016x}{:016x}", mix64(seq));
            let root_duration =
                libm::floor(base_duration[endpoint] as f64 * jitter(&mut traffic)) as u64;
            let mut spans = instantiate(
                &variants[endpoint][v],
                &endpoints[endpoint],
                &trace_id,
                seq,
                start,
                root_duration,
                &mut traffic,
            );
            seq += 1;

            let mut fault = None;
            let mut symptom = Symptom::None;
            for f in cfg
                .faults
                .iter()
                .filter(|f| f.kind != FaultKind::TrafficDrop && f.covers(at, endpoint))
            {
                if fault.is_some() || faults.gen::<f64>() >= f.intensity {
                    continue;
                }
                fault = Some(f.kind);
                symptom = match f.kind {
                    FaultKind::StatusError => {
                        Symptom::StatusError(inject_status_error(&mut spans, &mut faults))
                    }
                    FaultKind::ErrorLogOnly => {
                        inject_blind_spot(&mut spans, &mut faults);
                        Symptom::BlindSpot
                    }
                    FaultKind::LatencyInflation => {
                        inject_latency(&mut spans, &mut faults);
                        Symptom::Latency
                    }
                    FaultKind::TrafficDrop => unreachable!("filtered above"),
                };
            }
            let path_id = (endpoint * cfg.pattern_variants + v) as u32;
            traces.push(GeneratedTrace {
                endpoint,
                spans,
                truth: GroundTruth {
                    trace_id,
                    anomalous: fault.is_some(),
                    fault,
                    pattern_id: 0,
                    path_id,
                },
            });
            symptoms.push(symptom);
        }
    }

    // Background blind spots: exactly round(fraction * eligible) of the
    // traces no fault touched.
    let eligible: Vec<usize> = (0..traces.len())
        .filter(|&i| traces[i].truth.fault.is_none())
        .collect();
    let k = libm::floor(cfg.blind_spot_fraction * eligible.len() as f64 + 0.5) as usize;
    if k > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(5);
        let mut chosen = rand::seq::index::sample(&mut rng, eligible.len(), k).into_vec();
        chosen.sort_unstable();
        for c in chosen {
            let t = &mut traces[eligible[c]];
            inject_blind_spot(&mut t.spans, &mut rng);
            t.truth.anomalous = true;
            t.truth.fault = Some(FaultKind::ErrorLogOnly);
            symptoms[eligible[c]] = Symptom::BlindSpot;
        }
    }

    let mut pattern_ids: BTreeMap<(u32, Symptom), u32> = BTreeMap::new();
    for (t, s) in traces.iter_mut().zip(&symptoms) {
        let next = pattern_ids.len() as u32;
        t.truth.pattern_id = *pattern_ids.entry((t.truth.path_id, *s)).or_insert(next);
    }
    // emitted in completion order, the order a tail-based collector sees them
    traces.sort_by_cached_key(|t| (t.completion(), t.truth.trace_id.clone()));

    let alarms = cfg
        .faults
        .iter()
        .filter(|f| f.emits_alarm)
        .map(|f| Alarm {
            window_start: BASE_TIMESTAMP_NS
                + libm::floor(f.window_start * NS_PER_MINUTE as f64) as u64,
            window_end: BASE_TIMESTAMP_NS + libm::floor(f.window_end * NS_PER_MINUTE as f64) as u64,
            endpoints: match f.target {
                Some(t) => vec![endpoints[t].clone()],
                None => endpoints.clone(),
            },
        })
        .collect();

    Ok(Scenario {
        traces,
        alarms,
        endpoints,
        start_ns: BASE_TIMESTAMP_NS,
        end_ns: BASE_TIMESTAMP_NS + cfg.duration as u64 * NS_PER_MINUTE,
    })
}

/// The shipped scenarios: `steady`, `blindspot`, `outage` and `latency`.
pub fn preset_scenarios() -> Vec<ScenarioConfig> {
    let base = ScenarioConfig::default();
    vec![
        ScenarioConfig {
            name: "steady".into(),
            seed: 1,
            ..base.clone()
        },
        ScenarioConfig {
            name: "blindspot".into(),
            seed: 2,
            blind_spot_fraction: 0.008,
            faults: vec![FaultSpec {
                kind: FaultKind::ErrorLogOnly,
                target: Some(3),
                window_start: 3.0,
                window_end: 7.0,
                intensity: 0.5,
                emits_alarm: true,
            }],
            ..base.clone()
        },
        ScenarioConfig {
            name: "outage".into(),
            seed: 3,
            faults: vec![
                FaultSpec {
                    kind: FaultKind::StatusError,
                    target: Some(0),
                    window_start: 4.0,
                    window_end: 8.0,
                    intensity: 0.3,
                    emits_alarm: true,
                },
                FaultSpec {
                    kind: FaultKind::TrafficDrop,
                    target: None,
                    window_start: 4.0,
                    window_end: 8.0,
                    intensity: 0.6,
                    emits_alarm: false,
                },
            ],
            ..base.clone()
        },
        ScenarioConfig {
            name: "latency".into(),
            seed: 4,
            faults: vec![FaultSpec {
                kind: FaultKind::LatencyInflation,
                target: Some(1),
                window_start: 5.0,
                window_end: 8.0,
                intensity: 0.5,
                emits_alarm: true,
            }],
            ..base
        },
    ]
}

pub fn preset(name: &str) -> Option<ScenarioConfig> {
    preset_scenarios().into_iter().find(|s| s.name == name)
}

/// The five-span blind-spot motif: a healthy `queryForTravel` call whose
/// root span carries ERROR template 156, ERROR template 203 and WARN
/// template 78, calling the route and price services.
pub fn blind_spot_motif(trace_id: &str, start: u64) -> Vec<Span> {
    let ms = 1_000_000;
    let span =
        |id: &str, parent: Option<&str>, service: &str, operation: &str, s: u64, d: u64| Span {
            trace_id: trace_id.into(),
            span_id: id.into(),
            parent_span_id: parent.map(Into::into),
            service: service.into(),
            operation: operation.into(),
            start: start + s * ms,
            duration: d * ms,
            status: SpanStatus::Ok,
            logs: Vec::new(),
        };
    let log = |at: u64, level, template| LogEvent {
        timestamp: start + at * ms,
        level,
        body: LogBody::Template(template),
    };
    let mut basic = span("basic", None, "ts-basic-service", "queryForTravel", 0, 120);
    basic.logs = vec![
        log(2, LogLevel::Error, 156),
        log(3, LogLevel::Error, 203),
        log(4, LogLevel::Warn, 78),
    ];
    vec![
        basic,
        span(
            "route",
            Some("basic"),
            "ts-route-service",
            "getRouteById",
            10,
            30,
        ),
        span(
            "station",
            Some("route"),
            "ts-station-service",
            "queryStationId",
            15,
            10,
        ),
        span(
            "price",
            Some("basic"),
            "ts-price-service",
            "queryPriceConfig",
            50,
            40,
        ),
        span(
            "train",
            Some("price"),
            "ts-train-service",
            "retrieveTrain",
            60,
            15,
        ),
    ]
}
