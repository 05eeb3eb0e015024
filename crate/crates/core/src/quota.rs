//! Alarm-driven budget allocation over root-endpoint groups.
//!
//! Allocation has two layers. The first sets the window's total budget from
//! the target rate, scaling it up when traffic volume falls well below its
//! recent average. The second splits the total between the normal and the
//! abnormal (alarmed) period in proportion to their volume, then across
//! endpoint groups: evenly in the normal period, and with a capped boost for
//! alarmed endpoints in the abnormal period. All rounding is largest
//! remainder with ties going to larger groups, then to the
//! lexicographically smaller endpoint.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::encoder::EncodedTrace;
use crate::model::EndpointKey;
use crate::ConfigError;

const NS_PER_MINUTE: f64 = 60e9;

fn round_half_up(x: f64) -> u64 {
    if x <= 0.0 {
        0
    } else {
        libm::floor(x + 0.5) as u64
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alarm {
    pub window_start: u64,
    pub window_end: u64,
    pub endpoints: Vec<EndpointKey>,
}

impl Alarm {
    pub fn covers(&self, t: u64) -> bool {
        self.window_start <= t && t < self.window_end
    }

    pub fn overlaps(&self, start: u64, end: u64) -> bool {
        self.window_start < end && start < self.window_end
    }
}

/// Alarms raised by an external monitoring system.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlarmFeed {
    pub alarms: Vec<Alarm>,
}

impl AlarmFeed {
    pub fn new(alarms: Vec<Alarm>) -> Result<Self, ConfigError> {
        for a in &alarms {
            if a.window_start >= a.window_end {
                return Err(ConfigError::new(
                    "alarm window_start must precede window_end",
                ));
            }
            if a.endpoints.is_empty() {
                return Err(ConfigError::new("alarm must name at least one endpoint"));
            }
        }
        Ok(Self { alarms })
    }

    pub fn is_empty(&self) -> bool {
        self.alarms.is_empty()
    }

    pub fn overlapping(&self, start: u64, end: u64) -> impl Iterator<Item = &Alarm> + '_ {
        self.alarms.iter().filter(move |a| a.overlaps(start, end))
    }
}

/// A sealed time window of encoded traces awaiting allocation.
#[derive(Clone, Debug, Default)]
pub struct BufferWindow {
    pub traces: Vec<EncodedTrace>,
    pub window_start: u64,
    pub window_end: u64,
    /// Traces per minute of previous windows, oldest first.
    pub qpm_history: Vec<f64>,
}

impl BufferWindow {
    pub fn minutes(&self) -> f64 {
        self.window_end.saturating_sub(self.window_start) as f64 / NS_PER_MINUTE
    }

    pub fn qpm(&self) -> f64 {
        let minutes = self.minutes();
        if minutes > 0.0 {
            self.traces.len() as f64 / minutes
        } else {
            0.0
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Period {
    Normal,
    Abnormal,
}

impl Period {
    pub fn as_str(self) -> &'static str {
        match self {
            Period::Normal => "NORMAL",
            Period::Abnormal => "ABNORMAL",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuotaEntry {
    pub period: Period,
    pub endpoint: EndpointKey,
    pub quota: u64,
    pub candidates: u64,
    pub alarmed: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct QuotaPlan {
    pub entries: Vec<QuotaEntry>,
    pub total: u64,
    /// Budget left over because every eligible group saturated.
    pub unspent: u64,
    pub scale: f64,
}

impl QuotaPlan {
    pub fn allocated(&self) -> u64 {
        self.entries.iter().map(|e| e.quota).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AllocatorConfig {
    /// Target sampling rate.
    pub base_budget_fraction: f64,
    /// Boost for an alarmed group, as a multiple of the period's average share.
    pub boost_max: f64,
    /// Maximum fraction of the abnormal share that alarmed groups may take.
    pub boost_cap_fraction: f64,
    /// Scaling kicks in when current QPM falls below this fraction of history.
    pub drop_threshold: f64,
    pub scale_max: f64,
    pub traffic_scaling: bool,
    /// Number of past windows kept for the QPM baseline.
    pub qpm_history_depth: usize,
}

impl Default for AllocatorConfig {
    fn default() -> Self {
        Self {
            base_budget_fraction: 0.05,
            boost_max: 3.0,
            boost_cap_fraction: 0.5,
            drop_threshold: 0.7,
            scale_max: 2.0,
            traffic_scaling: true,
            qpm_history_depth: 10,
        }
    }
}

impl AllocatorConfig {
    pub fn with_rate(rate: f64) -> Self {
        Self {
            base_budget_fraction: rate,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.base_budget_fraction > 0.0 && self.base_budget_fraction <= 1.0) {
            return Err(ConfigError::new("sampling rate must lie in (0, 1]"));
        }
        if !(self.boost_cap_fraction > 0.0 && self.boost_cap_fraction <= 1.0) {
            return Err(ConfigError::new("boost_cap_fraction must lie in (0, 1]"));
        }
        if !(self.boost_max >= 1.0) {
            return Err(ConfigError::new("boost_max must be >= 1"));
        }
        if !(self.scale_max >= 1.0) {
            return Err(ConfigError::new("scale_max must be >= 1"));
        }
        if !(self.drop_threshold > 0.0 && self.drop_threshold <= 1.0) {
            return Err(ConfigError::new("drop_threshold must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Partitions trace indices by root endpoint, keeping arrival order within groups.
pub fn group_by_root(traces: &[EncodedTrace]) -> BTreeMap<EndpointKey, Vec<usize>> {
    let mut groups: BTreeMap<EndpointKey, Vec<usize>> = BTreeMap::new();
    for (i, t) in traces.iter().enumerate() {
        match groups.get_mut(&t.endpoint) {
            Some(v) => v.push(i),
            None => {
                groups.insert(t.endpoint.clone(), alloc::vec![i]);
            }
        }
    }
    groups
}

/// Splits the buffer into `(normal, abnormal)` trace indices. A trace is
/// abnormal when its arrival falls inside any alarm window.
pub fn split_periods(buffer: &BufferWindow, alarms: &AlarmFeed) -> (Vec<usize>, Vec<usize>) {
    let active: Vec<&Alarm> = alarms
        .overlapping(buffer.window_start, buffer.window_end)
        .collect();
    buffer
        .traces
        .iter()
        .enumerate()
        .map(|(i, t)| (i, active.iter().any(|a| a.covers(t.arrival))))
        .fold((Vec::new(), Vec::new()), |(mut n, mut a), (i, abnormal)| {
            if abnormal {
                a.push(i);
            } else {
                n.push(i);
            }
            (n, a)
        })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Budget {
    pub base: u64,
    pub total: u64,
    pub scale: f64,
}

/// Window budget: the target rate times the window size, scaled up (at most
/// `scale_max`) when QPM drops below `drop_threshold` of the recent average.
pub fn global_budget(buffer: &BufferWindow, cfg: &AllocatorConfig) -> Budget {
    let n = buffer.traces.len() as u64;
    let base = round_half_up(cfg.base_budget_fraction * n as f64);
    let mut scale = 1.0;
    if cfg.traffic_scaling && !buffer.qpm_history.is_empty() {
        let hist = buffer.qpm_history.iter().sum::<f64>() / buffer.qpm_history.len() as f64;
        let current = buffer.qpm();
        if hist > 0.0 && current > 0.0 && current < cfg.drop_threshold * hist {
            scale = (hist / current).min(cfg.scale_max);
        }
    }
    let total = round_half_up(scale * base as f64).min(n);
    Budget { base, total, scale }
}

/// Water-filling even split of `share` across groups with capacities `caps`.
///
/// `rank` lists group indices in priority order (largest first); leftover
/// units after an even division go to the highest-ranked unsaturated groups.
/// Returns per-group quotas and the amount that could not be placed.
fn even_fill(share: u64, caps: &[u64], rank: &[usize]) -> (Vec<u64>, u64) {
    let mut quotas = alloc::vec![0u64; caps.len()];
    let mut remaining = share;
    loop {
        let active: Vec<usize> = rank
            .iter()
            .copied()
            .filter(|&i| quotas[i] < caps[i])
            .collect();
        if active.is_empty() || remaining == 0 {
            break;
        }
        let per = remaining / active.len() as u64;
        if per == 0 {
            // Every active group received the same amount so far, so single
            // leftover units keep them within one of each other.
            for &i in active.iter().take(remaining as usize) {
                quotas[i] += 1;
            }
            remaining = 0;
            break;
        }
        for &i in &active {
            let give = per.min(caps[i] - quotas[i]);
            quotas[i] += give;
            remaining -= give;
        }
    }
    (quotas, remaining)
}

/// A group competing for one period's share.
#[derive(Clone, Debug)]
pub struct GroupDemand {
    pub endpoint: EndpointKey,
    pub candidates: u64,
    pub alarmed: bool,
}

fn priority(groups: &[GroupDemand], members: &[usize]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..members.len()).collect();
    order.sort_by(|&a, &b| {
        let (ga, gb) = (&groups[members[a]], &groups[members[b]]);
        gb.candidates
            .cmp(&ga.candidates)
            .then_with(|| ga.endpoint.cmp(&gb.endpoint))
    });
    order
}

fn fill_members(share: u64, groups: &[GroupDemand], members: &[usize], out: &mut [u64]) -> u64 {
    let caps: Vec<u64> = members.iter().map(|&i| groups[i].candidates).collect();
    let (q, left) = even_fill(share, &caps, &priority(groups, members));
    for (slot, &i) in members.iter().enumerate() {
        out[i] = q[slot];
    }
    left
}

/// Divides one period's share across its groups. Returns quotas in the order
/// of `groups` and the unspent remainder.
///
/// Without alarmed groups the share is split evenly. Otherwise the alarmed
/// groups draw a pool of `boost_max` times the average share each, limited to
/// `boost_cap_fraction` of the period's share (and, when the share allows,
/// leaving one unit per non-alarmed group); the pool is split evenly among
/// them and whatever they cannot absorb joins the non-alarmed remainder.
pub fn allocate_period(
    share: u64,
    groups: &[GroupDemand],
    cfg: &AllocatorConfig,
) -> (Vec<u64>, u64) {
    let mut quotas = alloc::vec![0u64; groups.len()];
    if groups.is_empty() {
        return (quotas, share);
    }
    let alarmed: Vec<usize> = (0..groups.len()).filter(|&i| groups[i].alarmed).collect();
    let others: Vec<usize> = (0..groups.len()).filter(|&i| !groups[i].alarmed).collect();
    if alarmed.is_empty() {
        let left = fill_members(share, groups, &others, &mut quotas);
        return (quotas, left);
    }

    let g = groups.len() as u64;
    let m = alarmed.len() as u64;
    let avg = share as f64 / g as f64;
    let mut pool = round_half_up(cfg.boost_max * avg * m as f64)
        .min(round_half_up(cfg.boost_cap_fraction * share as f64))
        .min(share);
    if share >= g {
        pool = pool.min(share - (g - m));
    }
    let pool_left = fill_members(pool, groups, &alarmed, &mut quotas);
    let rest = share - (pool - pool_left);
    let unspent = if others.is_empty() {
        rest
    } else {
        fill_members(rest, groups, &others, &mut quotas)
    };
    (quotas, unspent)
}

/// Builds the window's quota plan.
pub fn allocate(buffer: &BufferWindow, alarms: &AlarmFeed, cfg: &AllocatorConfig) -> QuotaPlan {
    let budget = global_budget(buffer, cfg);
    allocate_with_budget(buffer, alarms, cfg, budget)
}

pub fn allocate_with_budget(
    buffer: &BufferWindow,
    alarms: &AlarmFeed,
    cfg: &AllocatorConfig,
    budget: Budget,
) -> QuotaPlan {
    let total = budget.total;
    if total == 0 {
        return QuotaPlan {
            scale: budget.scale,
            ..QuotaPlan::default()
        };
    }
    let (normal, abnormal) = split_periods(buffer, alarms);
    let n = buffer.traces.len() as u64;
    let abnormal_share = (total * abnormal.len() as u64).div_ceil(n);
    let normal_share = total - abnormal_share;

    let alarmed: BTreeSet<&EndpointKey> = alarms
        .overlapping(buffer.window_start, buffer.window_end)
        .flat_map(|a| a.endpoints.iter())
        .collect();

    let mut plan = QuotaPlan {
        total,
        scale: budget.scale,
        ..QuotaPlan::default()
    };
    for (period, members, share) in [
        (Period::Normal, &normal, normal_share),
        (Period::Abnormal, &abnormal, abnormal_share),
    ] {
        let mut counts: BTreeMap<&EndpointKey, u64> = BTreeMap::new();
        for &i in members.iter() {
            *counts.entry(&buffer.traces[i].endpoint).or_default() += 1;
        }
        let groups: Vec<GroupDemand> = counts
            .into_iter()
            .map(|(endpoint, candidates)| GroupDemand {
                endpoint: endpoint.clone(),
                candidates,
                // boosts only apply inside the incident period
                alarmed: period == Period::Abnormal && alarmed.contains(endpoint),
            })
            .collect();
        let (quotas, unspent) = allocate_period(share, &groups, cfg);
        plan.unspent += unspent;
        plan.entries
            .extend(groups.into_iter().zip(quotas).map(|(g, quota)| QuotaEntry {
                period,
                endpoint: g.endpoint,
                quota,
                candidates: g.candidates,
                alarmed: g.alarmed,
            }));
    }
    plan
}
