//! Diverse, anomaly-weighted subset selection.
//!
//! The kernel factors as `L_ij = q_i * J(E_i, E_j) * q_j`, where `J` is the
//! Jaccard similarity of two event-pair sets and `q_i = 1 + A_i / (1 + max A)`
//! is a bounded quality that grows with the anomaly score. Jaccard similarity
//! is positive semidefinite, so `L` is a valid DPP kernel whose diagonal
//! `q_i^2` orders candidates by anomaly.
//!
//! Selection is the incremental-Cholesky greedy MAP search: each step adds the
//! candidate with the largest conditional variance `d_i^2`, which equals
//! `det(L_{S+i}) / det(L_S)`. The search stops early once the best `d_i^2`
//! falls below `epsilon` (every remaining candidate is nearly a duplicate of
//! the selection); the remaining slots are then filled by anomaly score.

use alloc::vec::Vec;
use core::borrow::Borrow;
use core::cmp::Ordering;
use core::hash::BuildHasherDefault;

use hashbrown::HashMap;
use rustc_hash::FxHasher;
use serde::{Deserialize, Serialize};

use crate::encoder::{EncodedTrace, EventPairSet};

type FxMap<K, V> = HashMap<K, V, BuildHasherDefault<FxHasher>>;

/// Conditional variances at or below this are numerically zero: the
/// candidate is spanned by the selection and only the fill phase takes it.
pub const GAIN_FLOOR: f64 = 1e-12;
/// Relative tolerance under which two gains count as tied.
pub const TIE_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectorConfig {
    pub epsilon: f64,
    pub cache_capacity: usize,
    pub use_cache: bool,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-3,
            cache_capacity: 1 << 20,
            use_cache: true,
        }
    }
}

impl SelectorConfig {
    pub fn validate(&self) -> Result<(), crate::ConfigError> {
        if !(self.epsilon >= 0.0) {
            return Err(crate::ConfigError::new("epsilon must be >= 0"));
        }
        Ok(())
    }
}

/// Exact Jaccard similarity; two empty sets are identical (1.0).
pub fn jaccard_exact(a: &EventPairSet, b: &EventPairSet) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let inter = a.intersection_len(b);
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

const NIL: usize = usize::MAX;

#[derive(Clone, Debug)]
struct Slot {
    key: (u64, u64),
    value: f64,
    prev: usize,
    next: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    pub hit_rate: f64,
}

/// Jaccard memo keyed by the unordered pair of set digests, with strict LRU
/// eviction.
///
/// Digests are verified against a registry of the sets seen under each
/// digest; a set whose digest collides with a different set bypasses the
/// cache, so a cached value always equals the fresh computation.
#[derive(Debug)]
pub struct SimilarityCache {
    capacity: usize,
    index: FxMap<(u64, u64), usize>,
    slots: Vec<Slot>,
    head: usize, // most recent
    tail: usize, // least recent
    registry: FxMap<u64, EventPairSet>,
    hits: u64,
    misses: u64,
}

/// Lower bound on how many distinct patterns the registry keeps.
const MIN_REGISTRY: usize = 4096;

impl Default for SimilarityCache {
    fn default() -> Self {
        Self::new(SelectorConfig::default().cache_capacity)
    }
}

impl SimilarityCache {
    /// A cache holding at most `capacity` pairs; capacity 0 disables caching.
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            index: FxMap::default(),
            slots: Vec::new(),
            head: NIL,
            tail: NIL,
            registry: FxMap::default(),
            hits: 0,
            misses: 0,
        }
    }

    pub fn disabled() -> Self {
        Self::new(0)
    }

    pub fn from_config(cfg: &SelectorConfig) -> Self {
        Self::new(if cfg.use_cache { cfg.cache_capacity } else { 0 })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn stats(&self) -> CacheStats {
        let lookups = self.hits + self.misses;
        CacheStats {
            hits: self.hits,
            misses: self.misses,
            hit_rate: if lookups == 0 {
                0.0
            } else {
                self.hits as f64 / lookups as f64
            },
        }
    }

    /// Returns the registered set equal to `eps` so equal patterns share
    /// storage; sets whose digest collides with another set are returned as is.
    pub fn intern(&mut self, eps: EventPairSet) -> EventPairSet {
        if self.capacity == 0 {
            return eps;
        }
        match self.registry.get(&eps.hash64()) {
            Some(known) if *known == eps => known.clone(),
            Some(_) => eps,
            None => {
                if self.registry.len() >= self.registry_limit() {
                    self.reset();
                }
                self.registry.insert(eps.hash64(), eps.clone());
                eps
            }
        }
    }

    // Patterns are far fewer than pairs, but a tiny pair capacity should not
    // force a registry reset on every new pattern.
    fn registry_limit(&self) -> usize {
        self.capacity.max(MIN_REGISTRY)
    }

    // Forgetting registered sets also forgets every value keyed by their
    // digests; otherwise a later colliding set could read a stale entry.
    fn reset(&mut self) {
        self.registry.clear();
        self.index.clear();
        self.slots.clear();
        self.head = NIL;
        self.tail = NIL;
    }

    fn verified(&mut self, eps: &EventPairSet) -> bool {
        match self.registry.get(&eps.hash64()) {
            Some(known) => known == eps,
            None => {
                if self.registry.len() >= self.registry_limit() {
                    self.reset();
                }
                self.registry.insert(eps.hash64(), eps.clone());
                true
            }
        }
    }

    fn unlink(&mut self, i: usize) {
        let (prev, next) = (self.slots[i].prev, self.slots[i].next);
        if prev == NIL {
            self.head = next;
        } else {
            self.slots[prev].next = next;
        }
        if next == NIL {
            self.tail = prev;
        } else {
            self.slots[next].prev = prev;
        }
    }

    fn push_front(&mut self, i: usize) {
        self.slots[i].prev = NIL;
        self.slots[i].next = self.head;
        if self.head != NIL {
            self.slots[self.head].prev = i;
        }
        self.head = i;
        if self.tail == NIL {
            self.tail = i;
        }
    }

    fn get(&mut self, key: (u64, u64)) -> Option<f64> {
        let i = *self.index.get(&key)?;
        if self.head != i {
            self.unlink(i);
            self.push_front(i);
        }
        Some(self.slots[i].value)
    }

    fn put(&mut self, key: (u64, u64), value: f64) {
        let slot = if self.index.len() < self.capacity {
            self.slots.push(Slot {
                key,
                value,
                prev: NIL,
                next: NIL,
            });
            self.slots.len() - 1
        } else {
            let victim = self.tail;
            self.unlink(victim);
            self.index.remove(&self.slots[victim].key);
            self.slots[victim].key = key;
            self.slots[victim].value = value;
            victim
        };
        self.index.insert(key, slot);
        self.push_front(slot);
    }

    /// Jaccard similarity through the cache.
    pub fn jaccard(&mut self, a: &EventPairSet, b: &EventPairSet) -> f64 {
        if self.capacity == 0 {
            self.misses += 1;
            return jaccard_exact(a, b);
        }
        let (ha, hb) = (a.hash64(), b.hash64());
        // `a` is checked again in case registering `b` reset the registry
        let trusted =
            self.verified(a) && self.verified(b) && self.verified(a) && (ha != hb || a == b);
        if !trusted {
            self.misses += 1;
            return jaccard_exact(a, b);
        }
        let key = if ha <= hb { (ha, hb) } else { (hb, ha) };
        if let Some(v) = self.get(key) {
            self.hits += 1;
            return v;
        }
        self.misses += 1;
        let v = jaccard_exact(a, b);
        self.put(key, v);
        v
    }

    #[cfg(test)]
    fn lru_keys(&self) -> Vec<(u64, u64)> {
        let mut out = Vec::new();
        let mut i = self.head;
        while i != NIL {
            out.push(self.slots[i].key);
            i = self.slots[i].next;
        }
        out
    }
}

/// Cached Jaccard similarity.
pub fn jaccard(a: &EventPairSet, b: &EventPairSet, cache: &mut SimilarityCache) -> f64 {
    cache.jaccard(a, b)
}

pub fn cache_stats(cache: &SimilarityCache) -> CacheStats {
    cache.stats()
}

/// Quality of each candidate: `1 + A_i / (1 + max_j A_j)`, in `[1, 2)`.
pub fn quality<C: Borrow<EncodedTrace>>(candidates: &[C]) -> Vec<f64> {
    let max = candidates
        .iter()
        .map(|c| c.borrow().anomaly)
        .fold(0.0f64, f64::max);
    candidates
        .iter()
        .map(|c| 1.0 + c.borrow().anomaly / (1.0 + max))
        .collect()
}

/// Fallback order: anomaly descending, arrival ascending, trace id ascending.
pub fn fill_order<C: Borrow<EncodedTrace>>(candidates: &[C]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        let (x, y) = (candidates[a].borrow(), candidates[b].borrow());
        y.anomaly
            .partial_cmp(&x.anomaly)
            .unwrap_or(Ordering::Equal)
            .then_with(|| x.arrival.cmp(&y.arrival))
            .then_with(|| x.trace_id.cmp(&y.trace_id))
    });
    order
}

/// Whether gain `a` at fill rank `rank_a` beats gain `b` at `rank_b`.
pub fn beats(a: f64, rank_a: usize, b: f64, rank_b: usize) -> bool {
    let tol = TIE_TOLERANCE * b.abs().max(1.0);
    if a > b + tol {
        true
    } else if a < b - tol {
        false
    } else {
        rank_a < rank_b
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionStep {
    pub index: usize,
    /// Log-determinant increase for greedy picks; `None` for fill picks.
    pub marginal_gain: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Selection {
    pub steps: Vec<SelectionStep>,
    /// Whether the greedy phase stopped on the epsilon threshold.
    pub stopped_early: bool,
}

impl Selection {
    pub fn indices(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.index).collect()
    }
}

/// Greedy MAP selection of exactly `min(k, n)` candidates.
pub fn greedy_select<C: Borrow<EncodedTrace>>(
    candidates: &[C],
    k: usize,
    cfg: &SelectorConfig,
    cache: &mut SimilarityCache,
) -> Selection {
    let n = candidates.len();
    let k = k.min(n);
    let mut selection = Selection::default();
    if k == 0 {
        return selection;
    }
    let q = quality(candidates);
    let order = fill_order(candidates);
    let mut rank = alloc::vec![0usize; n];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }

    // rows[i] holds the Cholesky coefficients of candidate i against the
    // selection so far; d2[i] its conditional variance
    let mut rows: Vec<Vec<f64>> = alloc::vec![Vec::with_capacity(k); n];
    let mut d2: Vec<f64> = q.iter().map(|x| x * x).collect();
    let mut picked = alloc::vec![false; n];

    while selection.steps.len() < k {
        let mut best: Option<usize> = None;
        for i in 0..n {
            // variances at the floor are rounding noise of exact duplicates
            if picked[i] || !(d2[i] > GAIN_FLOOR) {
                continue;
            }
            best = match best {
                Some(b) if !beats(d2[i], rank[i], d2[b], rank[b]) => Some(b),
                _ => Some(i),
            };
        }
        let Some(j) = best.filter(|&j| d2[j] >= cfg.epsilon) else {
            selection.stopped_early = true;
            break;
        };
        picked[j] = true;
        selection.steps.push(SelectionStep {
            index: j,
            marginal_gain: Some(libm::log(d2[j])),
        });
        if selection.steps.len() == k {
            break;
        }
        let dj = libm::sqrt(d2[j]);
        let ej = candidates[j].borrow();
        let row_j = core::mem::take(&mut rows[j]);
        for i in 0..n {
            if picked[i] {
                continue;
            }
            let ei = candidates[i].borrow();
            let l_ji = q[j] * cache.jaccard(&ej.eps, &ei.eps) * q[i];
            let dot: f64 = row_j.iter().zip(&rows[i]).map(|(a, b)| a * b).sum();
            let e = (l_ji - dot) / dj;
            rows[i].push(e);
            d2[i] -= e * e;
        }
        rows[j] = row_j;
    }

    for &i in &order {
        if selection.steps.len() == k {
            break;
        }
        if !picked[i] {
            picked[i] = true;
            selection.steps.push(SelectionStep {
                index: i,
                marginal_gain: None,
            });
        }
    }
    selection
}

/// Log-determinant of a symmetric positive definite matrix via Cholesky;
/// `None` when the matrix is not numerically positive definite.
pub fn log_det(matrix: &[Vec<f64>]) -> Option<f64> {
    let n = matrix.len();
    let mut l = alloc::vec![alloc::vec![0.0f64; n]; n];
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|p| l[i][p] * l[j][p]).sum();
            if i == j {
                let v = matrix[i][i] - s;
                if !(v > 0.0) {
                    return None;
                }
                l[i][i] = libm::sqrt(v);
                acc += libm::log(v);
            } else {
                l[i][j] = (matrix[i][j] - s) / l[j][j];
            }
        }
    }
    Some(acc)
}

/// Dense kernel restricted to `subset` (no cache).
pub fn kernel_minor<C: Borrow<EncodedTrace>>(candidates: &[C], subset: &[usize]) -> Vec<Vec<f64>> {
    let q = quality(candidates);
    subset
        .iter()
        .map(|&i| {
            subset
                .iter()
                .map(|&j| {
                    let sim = if i == j {
                        1.0
                    } else {
                        jaccard_exact(&candidates[i].borrow().eps, &candidates[j].borrow().eps)
                    };
                    q[i] * sim * q[j]
                })
                .collect()
        })
        .collect()
}
