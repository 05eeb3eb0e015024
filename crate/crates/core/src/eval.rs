//! Sampling-quality metrics and the uniform random baseline.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::hash::BuildHasherDefault;

use hashbrown::HashMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustc_hash::FxHasher;
use serde::{Deserialize, Serialize};

use crate::encoder::{EncodedTrace, EventPairSet};
use crate::model::{EndpointKey, Trace};
use crate::pipeline::RuntimeStats;

type FxMap<K, V> = HashMap<K, V, BuildHasherDefault<FxHasher>>;

/// Call-tree encoding with children sorted and identical siblings collapsed,
/// e.g. `A(B,C)` for a root `A` calling `B`, `B` and `C`.
///
/// Labels are `service/operation`. A broken trace contributes one tree per
/// parentless span or orphan; the root's tree comes first and the others
/// follow sorted and deduplicated, separated by `;`.
pub fn canonical_path(trace: &Trace) -> String {
    let children = trace.children();
    let mut visited = alloc::vec![false; trace.spans.len()];

    fn encode(trace: &Trace, children: &[Vec<usize>], visited: &mut [bool], node: usize) -> String {
        visited[node] = true;
        let span = &trace.spans[node];
        let mut label = alloc::format!("{}/{}", span.service, span.operation);
        let mut kids: Vec<String> = children[node]
            .iter()
            .filter(|&&c| !visited[c])
            .copied()
            .collect::<Vec<_>>()
            .into_iter()
            .map(|c| encode(trace, children, visited, c))
            .collect();
        kids.sort();
        kids.dedup();
        if !kids.is_empty() {
            label.push('(');
            label.push_str(&kids.join(","));
            label.push(')');
        }
        label
    }

    let root = encode(trace, &children, &mut visited, trace.root_index);
    let mut others: Vec<String> = Vec::new();
    for i in 0..trace.spans.len() {
        if !visited[i] && trace.parents[i].is_none() {
            others.push(encode(trace, &children, &mut visited, i));
        }
    }
    // spans only reachable through a parent cycle
    for i in 0..trace.spans.len() {
        if !visited[i] {
            others.push(encode(trace, &children, &mut visited, i));
        }
    }
    others.sort();
    others.dedup();
    let mut out = root;
    for o in others {
        out.push(';');
        out.push_str(&o);
    }
    out
}

/// Per-trace facts the metrics need.
#[derive(Clone, Debug)]
pub struct CorpusEntry {
    pub trace_id: String,
    pub endpoint: EndpointKey,
    pub path: String,
    pub pattern: EventPairSet,
    /// Anomaly score at or above the threshold.
    pub anomalous: bool,
    /// Ground-truth label, when known.
    pub label: Option<bool>,
}

impl CorpusEntry {
    pub fn new(trace: &Trace, encoded: &EncodedTrace, anomaly_threshold: f64) -> Self {
        Self {
            trace_id: trace.trace_id.clone(),
            endpoint: encoded.endpoint.clone(),
            path: canonical_path(trace),
            pattern: encoded.eps.clone(),
            anomalous: encoded.anomaly >= anomaly_threshold,
            label: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("sampled trace id {0} is not in the corpus")]
    UnknownTraceId(String),
    #[error("trace id {0} appears twice")]
    DuplicateTraceId(String),
}

/// Corpus-wide pattern, path and endpoint tables.
#[derive(Clone, Debug)]
pub struct CorpusIndex {
    by_id: BTreeMap<String, usize>,
    endpoint: Vec<u32>,
    path: Vec<u32>,
    pattern: Vec<u32>,
    anomalous: Vec<bool>,
    label: Vec<Option<bool>>,
    pattern_counts: Vec<u64>,
    endpoints: usize,
    paths: usize,
    rare_max: u64,
}

/// Default rarity cut-off: `max(1, floor(0.001 N))`.
pub fn default_rare_max(corpus_size: usize) -> u64 {
    (corpus_size as u64 / 1000).max(1)
}

fn intern<K: core::hash::Hash + Eq>(table: &mut FxMap<K, u32>, key: K) -> u32 {
    let next = table.len() as u32;
    *table.entry(key).or_insert(next)
}

impl CorpusIndex {
    /// Builds the index; `rare_max` defaults to [`default_rare_max`].
    pub fn build(entries: &[CorpusEntry], rare_max: Option<u64>) -> Result<Self, EvalError> {
        let mut by_id = BTreeMap::new();
        let mut endpoints: FxMap<&EndpointKey, u32> = FxMap::default();
        let mut paths: FxMap<&str, u32> = FxMap::default();
        let mut patterns: FxMap<&EventPairSet, u32> = FxMap::default();
        let mut index = Self {
            by_id: BTreeMap::new(),
            endpoint: Vec::with_capacity(entries.len()),
            path: Vec::with_capacity(entries.len()),
            pattern: Vec::with_capacity(entries.len()),
            anomalous: Vec::with_capacity(entries.len()),
            label: Vec::with_capacity(entries.len()),
            pattern_counts: Vec::new(),
            endpoints: 0,
            paths: 0,
            rare_max: rare_max.unwrap_or_else(|| default_rare_max(entries.len())),
        };
        for (i, e) in entries.iter().enumerate() {
            if by_id.insert(e.trace_id.clone(), i).is_some() {
                return Err(EvalError::DuplicateTraceId(e.trace_id.clone()));
            }
            index.endpoint.push(intern(&mut endpoints, &e.endpoint));
            index.path.push(intern(&mut paths, e.path.as_str()));
            let p = intern(&mut patterns, &e.pattern);
            if p as usize == index.pattern_counts.len() {
                index.pattern_counts.push(0);
            }
            index.pattern_counts[p as usize] += 1;
            index.pattern.push(p);
            index.anomalous.push(e.anomalous);
            index.label.push(e.label);
        }
        index.by_id = by_id;
        index.endpoints = endpoints.len();
        index.paths = paths.len();
        Ok(index)
    }

    pub fn len(&self) -> usize {
        self.pattern.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pattern.is_empty()
    }

    pub fn pattern_count(&self) -> usize {
        self.pattern_counts.len()
    }

    pub fn path_count(&self) -> usize {
        self.paths
    }

    pub fn endpoint_count(&self) -> usize {
        self.endpoints
    }

    pub fn rare_max(&self) -> u64 {
        self.rare_max
    }

    pub fn position(&self, trace_id: &str) -> Option<usize> {
        self.by_id.get(trace_id).copied()
    }

    /// Pattern id of the trace at `position`.
    pub fn pattern_of(&self, position: usize) -> u32 {
        self.pattern[position]
    }

    pub fn is_rare(&self, position: usize) -> bool {
        self.pattern_counts[self.pattern[position] as usize] <= self.rare_max
    }

    pub fn trace_ids(&self) -> impl Iterator<Item = &str> + '_ {
        let mut ids: Vec<(&usize, &String)> = self.by_id.iter().map(|(k, v)| (v, k)).collect();
        ids.sort();
        ids.into_iter().map(|(_, k)| k.as_str())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub api_coverage: f64,
    pub path_coverage: f64,
    pub pattern_coverage: f64,
    pub shannon_entropy_bits: f64,
    pub proportion_anomaly: f64,
    /// Proportion anomalous according to ground-truth labels, when available.
    pub proportion_anomaly_labels: Option<f64>,
    pub proportion_rare: f64,
    pub bcr: f64,
    pub actual_rate: f64,
    pub sample_size: usize,
    pub corpus_size: usize,
    pub runtime_stats: Option<RuntimeStats>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Entropy in bits of a distribution given by counts. Terms are summed in
/// ascending count order, so the result does not depend on input order.
pub fn entropy_bits(counts: impl IntoIterator<Item = u64>) -> f64 {
    let mut counts: Vec<u64> = counts.into_iter().filter(|&c| c > 0).collect();
    counts.sort_unstable();
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let h: f64 = counts
        .iter()
        .map(|&c| {
            let p = c as f64 / total as f64;
            -p * libm::log2(p)
        })
        .sum();
    h.max(0.0)
}

/// Metrics of a sample (trace ids) against the corpus.
pub fn compute_metrics<S: AsRef<str>>(
    index: &CorpusIndex,
    sample: &[S],
) -> Result<MetricsReport, EvalError> {
    let mut seen = BTreeSet::new();
    let mut positions = Vec::with_capacity(sample.len());
    for id in sample {
        let id = id.as_ref();
        let pos = index
            .position(id)
            .ok_or_else(|| EvalError::UnknownTraceId(id.into()))?;
        if !seen.insert(pos) {
            return Err(EvalError::DuplicateTraceId(id.into()));
        }
        positions.push(pos);
    }

    let endpoints: BTreeSet<u32> = positions.iter().map(|&p| index.endpoint[p]).collect();
    let paths: BTreeSet<u32> = positions.iter().map(|&p| index.path[p]).collect();
    let mut pattern_hist: BTreeMap<u32, u64> = BTreeMap::new();
    for &p in &positions {
        *pattern_hist.entry(index.pattern[p]).or_default() += 1;
    }
    let n = positions.len();
    let anomalous = positions.iter().filter(|&&p| index.anomalous[p]).count();
    let rare = positions.iter().filter(|&&p| index.is_rare(p)).count();
    let labels = if n > 0 && positions.iter().all(|&p| index.label[p].is_some()) {
        Some(ratio(
            positions
                .iter()
                .filter(|&&p| index.label[p] == Some(true))
                .count(),
            n,
        ))
    } else {
        None
    };

    Ok(MetricsReport {
        api_coverage: ratio(endpoints.len(), index.endpoint_count()),
        path_coverage: ratio(paths.len(), index.path_count()),
        pattern_coverage: ratio(pattern_hist.len(), index.pattern_count()),
        shannon_entropy_bits: entropy_bits(pattern_hist.values().copied()),
        proportion_anomaly: ratio(anomalous, n),
        proportion_anomaly_labels: labels,
        proportion_rare: ratio(rare, n),
        bcr: ratio(pattern_hist.len(), n),
        actual_rate: ratio(n, index.len()),
        sample_size: n,
        corpus_size: index.len(),
        runtime_stats: None,
    })
}

/// Exactly `round(rate * N)` distinct indices drawn uniformly with a seeded
/// generator, returned in ascending order.
pub fn random_sample(corpus_size: usize, rate: f64, seed: u64) -> Vec<usize> {
    let k = libm::floor(rate.clamp(0.0, 1.0) * corpus_size as f64 + 0.5) as usize;
    let k = k.min(corpus_size);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, corpus_size, k).into_vec();
    picked.sort_unstable();
    picked
}
