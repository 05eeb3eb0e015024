//! Log template mining and the integer event-id space.
//!
//! [`TemplateStore`] is a fixed-depth prefix tree in the style of Drain: a
//! message is tokenized on whitespace, variable-looking tokens are masked to
//! `<*>`, and the message is routed by token count and then by its leading
//! tokens to a leaf holding candidate clusters. The most similar cluster
//! absorbs the message when the fraction of matching positions reaches the
//! similarity threshold; positions that disagree become wildcards.
//!
//! ```text
//!              [6 tokens]
//!                  |
//!              "Failed"
//!                  |
//!                "to"
//!                  |
//!   [Failed to parse config key <*>]
//! ```
//!
//! [`EventManager`] assigns dense ids (starting at 1) to every span lifecycle
//! marker and log template that occurs in encoded traces.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::hash::{BuildHasherDefault, Hash};

use hashbrown::{Equivalent, HashMap};
use rustc_hash::FxHasher;
use serde::{Deserialize, Serialize};

type FxMap<K, V> = HashMap<K, V, BuildHasherDefault<FxHasher>>;

pub const WILDCARD: &str = "<*>";
/// Template id reserved for messages that are empty after trimming.
pub const EMPTY_TEMPLATE_ID: u32 = 0;
pub const EMPTY_TEMPLATE: &str = "<EMPTY>";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrainConfig {
    /// Total tree depth including the length layer and the leaf layer.
    pub depth: usize,
    pub similarity_threshold: f64,
    pub max_children: usize,
}

impl Default for DrainConfig {
    fn default() -> Self {
        Self {
            depth: 4,
            similarity_threshold: 0.5,
            max_children: 100,
        }
    }
}

#[derive(Debug, Default)]
struct Node {
    children: BTreeMap<String, Node>,
    clusters: Vec<u32>,
}

#[derive(Debug)]
struct Cluster {
    tokens: Vec<String>,
}

/// Online template miner. Ids are append-only and never reassigned.
#[derive(Debug)]
pub struct TemplateStore {
    config: DrainConfig,
    by_length: BTreeMap<usize, Node>,
    // index = template_id - 1
    clusters: Vec<Cluster>,
    // exact-message fast path; identical messages skip the tree walk
    seen: FxMap<String, u32>,
}

impl Default for TemplateStore {
    fn default() -> Self {
        Self::new(DrainConfig::default())
    }
}

fn is_numeric(token: &str) -> bool {
    let body = token.strip_prefix(['-', '+']).unwrap_or(token);
    let mut parts = body.splitn(2, '.');
    let int = parts.next().unwrap_or("");
    let frac = parts.next();
    !int.is_empty()
        && int.bytes().all(|b| b.is_ascii_digit())
        && frac.is_none_or(|f| !f.is_empty() && f.bytes().all(|b| b.is_ascii_digit()))
}

fn is_hex_id(token: &str) -> bool {
    let body = token
        .strip_prefix("0x")
        .or_else(|| token.strip_prefix("0X"))
        .unwrap_or(token);
    body.len() >= 8 && body.bytes().all(|b| b.is_ascii_hexdigit())
}

fn is_uuid(token: &str) -> bool {
    let groups: Vec<&str> = token.split('-').collect();
    groups.len() == 5
        && groups
            .iter()
            .zip([8usize, 4, 4, 4, 12])
            .all(|(g, n)| g.len() == n && g.bytes().all(|b| b.is_ascii_hexdigit()))
}

/// Replaces variable-looking tokens (numbers, long hex ids, UUIDs) with `<*>`.
pub fn mask_token(token: &str) -> &str {
    if is_numeric(token) || is_hex_id(token) || is_uuid(token) {
        WILDCARD
    } else {
        token
    }
}

fn has_digit(token: &str) -> bool {
    token.bytes().any(|b| b.is_ascii_digit())
}

/// Fraction of positions where the template holds the same literal token,
/// plus the number of wildcard positions (used as tie-break).
fn similarity(template: &[String], tokens: &[&str]) -> (f64, usize) {
    let mut same = 0usize;
    let mut params = 0usize;
    for (t, m) in template.iter().zip(tokens) {
        if t == WILDCARD {
            params += 1;
        } else if t == m {
            same += 1;
        }
    }
    (same as f64 / template.len() as f64, params)
}

impl TemplateStore {
    pub fn new(config: DrainConfig) -> Self {
        Self {
            config,
            by_length: BTreeMap::new(),
            clusters: Vec::new(),
            seen: FxMap::default(),
        }
    }

    /// Maps a raw message to its template id, creating or generalizing a
    /// template as needed.
    pub fn template_of(&mut self, message: &str) -> u32 {
        let trimmed = message.trim();
        if trimmed.is_empty() {
            return EMPTY_TEMPLATE_ID;
        }
        if let Some(&id) = self.seen.get(trimmed) {
            // identical messages keep their first id even if a later
            // cluster in the same leaf would now score higher
            return id;
        }
        let tokens: Vec<&str> = trimmed.split_whitespace().map(mask_token).collect();
        let id = self.insert(&tokens);
        self.seen.insert(trimmed.to_string(), id);
        id
    }

    fn insert(&mut self, tokens: &[&str]) -> u32 {
        let prefix_layers = self.config.depth.saturating_sub(2);
        let max_children = self.config.max_children;
        let mut node = self.by_length.entry(tokens.len()).or_default();
        for token in tokens.iter().take(prefix_layers) {
            let key = if has_digit(token) {
                WILDCARD
            } else if node.children.contains_key(*token) || node.children.len() < max_children {
                token
            } else {
                WILDCARD
            };
            node = node.children.entry(key.to_string()).or_default();
        }

        let threshold = self.config.similarity_threshold;
        let best = node
            .clusters
            .iter()
            .map(|&id| {
                let (sim, params) = similarity(&self.clusters[id as usize - 1].tokens, tokens);
                (id, sim, params)
            })
            .fold(None::<(u32, f64, usize)>, |best, cand| match best {
                Some(b) if (b.1, b.2) >= (cand.1, cand.2) => Some(b),
                _ => Some(cand),
            });

        match best {
            Some((id, sim, _)) if sim >= threshold => {
                let cluster = &mut self.clusters[id as usize - 1];
                for (t, m) in cluster.tokens.iter_mut().zip(tokens) {
                    if t != m {
                        *t = WILDCARD.to_string();
                    }
                }
                id
            }
            _ => {
                self.clusters.push(Cluster {
                    tokens: tokens.iter().map(|t| t.to_string()).collect(),
                });
                let id = self.clusters.len() as u32;
                node.clusters.push(id);
                id
            }
        }
    }

    /// Current template text for an id.
    pub fn template(&self, id: u32) -> Option<String> {
        if id == EMPTY_TEMPLATE_ID {
            return Some(EMPTY_TEMPLATE.to_string());
        }
        let cluster = self.clusters.get((id as usize).checked_sub(1)?)?;
        Some(cluster.tokens.join(" "))
    }

    /// All mined templates in id order (the reserved empty template excluded).
    pub fn templates(&self) -> impl Iterator<Item = (u32, String)> + '_ {
        self.clusters
            .iter()
            .enumerate()
            .map(|(i, c)| (i as u32 + 1, c.tokens.join(" ")))
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }
}

/// Kind of an encoded event.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EventKind {
    SpanStart,
    SpanEnd,
    StatusError,
    PerfDeg,
    Log,
}

fn span_slot(kind: EventKind) -> usize {
    match kind {
        EventKind::SpanStart => 0,
        EventKind::SpanEnd => 1,
        EventKind::StatusError => 2,
        EventKind::PerfDeg => 3,
        EventKind::Log => unreachable!("log events are keyed by template"),
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventKey {
    /// `service` and `operation` of the span the event belongs to.
    Operation {
        service: String,
        operation: String,
    },
    Template(u32),
}

#[derive(Hash, PartialEq, Eq)]
struct OpKey {
    service: String,
    operation: String,
}

#[derive(Hash)]
struct OpRef<'a> {
    service: &'a str,
    operation: &'a str,
}

impl Equivalent<OpKey> for OpRef<'_> {
    fn equivalent(&self, key: &OpKey) -> bool {
        self.service == key.service && self.operation == key.operation
    }
}

/// Dense, first-encounter-order ids for `(kind, key)` pairs. Id 0 is reserved.
#[derive(Debug, Default)]
pub struct EventManager {
    // per operation: ids for [start, end, status_error, perf_deg], 0 = unassigned
    ops: FxMap<OpKey, [u32; 4]>,
    logs: FxMap<u32, u32>,
    labels: Vec<(EventKind, EventKey)>,
}

impl core::fmt::Debug for OpKey {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "{}/{}", self.service, self.operation)
    }
}

impl EventManager {
    pub fn new() -> Self {
        Self::default()
    }

    fn next_id(&mut self, kind: EventKind, key: EventKey) -> u32 {
        self.labels.push((kind, key));
        self.labels.len() as u32
    }

    pub fn event_id(&mut self, kind: EventKind, key: &EventKey) -> u32 {
        match (kind, key) {
            (EventKind::Log, EventKey::Template(t)) => self.log_event(*t),
            (_, EventKey::Operation { service, operation }) if kind != EventKind::Log => {
                self.span_event(kind, service, operation)
            }
            _ => panic!("event key {key:?} is not well-formed for kind {kind:?}"),
        }
    }

    /// Id of a span lifecycle or indicator event of `service`/`operation`.
    pub fn span_event(&mut self, kind: EventKind, service: &str, operation: &str) -> u32 {
        let slot = span_slot(kind);
        let probe = OpRef { service, operation };
        if let Some(ids) = self.ops.get(&probe) {
            if ids[slot] != 0 {
                return ids[slot];
            }
        }
        let id = self.next_id(
            kind,
            EventKey::Operation {
                service: service.to_string(),
                operation: operation.to_string(),
            },
        );
        let ids = self
            .ops
            .entry(OpKey {
                service: service.to_string(),
                operation: operation.to_string(),
            })
            .or_insert([0; 4]);
        ids[slot] = id;
        id
    }

    pub fn log_event(&mut self, template_id: u32) -> u32 {
        if let Some(&id) = self.logs.get(&template_id) {
            return id;
        }
        let id = self.next_id(EventKind::Log, EventKey::Template(template_id));
        self.logs.insert(template_id, id);
        id
    }

    /// Looks up an id without assigning one.
    pub fn lookup(&self, kind: EventKind, key: &EventKey) -> Option<u32> {
        match key {
            EventKey::Template(t) if kind == EventKind::Log => self.logs.get(t).copied(),
            EventKey::Operation { service, operation } if kind != EventKind::Log => {
                let ids = self.ops.get(&OpRef { service, operation })?;
                Some(ids[span_slot(kind)]).filter(|&id| id != 0)
            }
            _ => None,
        }
    }

    pub fn label(&self, id: u32) -> Option<&(EventKind, EventKey)> {
        self.labels.get((id as usize).checked_sub(1)?)
    }

    /// Human-readable name of an event id, e.g. `start(svc/op)` or `log(156)`.
    pub fn describe(&self, id: u32) -> String {
        let Some((kind, key)) = self.label(id) else {
            return alloc::format!("unknown({id})");
        };
        let tag = match kind {
            EventKind::SpanStart => "start",
            EventKind::SpanEnd => "end",
            EventKind::StatusError => "status_error",
            EventKind::PerfDeg => "perf_deg",
            EventKind::Log => "log",
        };
        match key {
            EventKey::Operation { service, operation } => {
                alloc::format!("{tag}({service}/{operation})")
            }
            EventKey::Template(t) => alloc::format!("{tag}({t})"),
        }
    }

    /// Number of assigned ids; also the largest id.
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}
