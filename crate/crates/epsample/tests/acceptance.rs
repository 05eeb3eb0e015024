//! Acceptance checks. Each criterion prints one `PASS` or `FAIL` line with
//! the measured numbers; the process exits non-zero if any check fails.
//!
//! Set `EPSAMPLE_BLESS=1` to rewrite the golden encoding file.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use epsample::formats::{parse_trace_stream, sample_records, write_jsonl, write_spans};
use epsample::manifest::{sha256_hex, RunManifest};
use epsample::runner::{build_index, run_sampler, SampleRun};
use epsample_core::dpp::{beats, greedy_select, kernel_minor, log_det, GAIN_FLOOR};
use epsample_core::encoder::{
    anomaly_score, canonical_event_sequence, EventPairSet, GroupStats, TraceEncoder,
};
use epsample_core::eval::{compute_metrics, default_rare_max, random_sample, MetricsReport};
use epsample_core::model::{assemble_trace, LogBody, LogEvent, LogLevel, SpanStatus};
use epsample_core::pipeline::SamplerConfig;
use epsample_core::quota::AlarmFeed;
use epsample_core::templater::{EventKey, EventKind};
use epsample_core::workload::{
    blind_spot_motif, generate, preset, preset_scenarios, FaultSpec, ScenarioConfig,
    BASE_TIMESTAMP_NS,
};
use epsample_core::{
    AnomalyConfig, EncodedTrace, EndpointKey, SelectorConfig, SimilarityCache, Span, Trace,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

struct Corpus {
    traces: Vec<Trace>,
    alarms: AlarmFeed,
    labels: HashMap<String, bool>,
    start_ns: u64,
}

fn corpus(cfg: &ScenarioConfig) -> Corpus {
    let sc = generate(cfg).expect("valid scenario");
    let traces = sc
        .traces
        .iter()
        .map(|g| assemble_trace(g.spans.clone()).expect("generated traces assemble"))
        .collect();
    Corpus {
        traces,
        alarms: AlarmFeed::new(sc.alarms.clone()).expect("generated alarms are valid"),
        labels: sc
            .ground_truth()
            .map(|g| (g.trace_id.clone(), g.anomalous))
            .collect(),
        start_ns: sc.start_ns,
    }
}

fn seeded(name: &str, seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        seed,
        ..preset(name).expect("preset exists")
    }
}

fn sample_digest(run: &SampleRun) -> String {
    let mut buf = Vec::new();
    for w in &run.windows {
        write_jsonl(&mut buf, sample_records(w)).expect("in-memory write");
    }
    sha256_hex(&buf)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

// ---------------------------------------------------------------------------
// 1. Blind-spot motif golden encoding

const GOLDEN: &str = concat!(
    env!("CARGO_MANIFEST_DIR"),
    "/tests/golden/blind_spot_encoding.txt"
);
const BASIC: &str = "ts-basic-service/queryForTravel";

fn render_motif(trace: &Trace) -> String {
    let mut enc = TraceEncoder::new(AnomalyConfig::default());
    let cold = GroupStats::new(trace.root().endpoint(), 1000);
    let encoded = enc.encode(trace, &cold);
    let root = trace.root();
    let seq = canonical_event_sequence(root, &mut enc.events, &mut enc.templates, false);
    let name = |id: u32| enc.events.describe(id);
    let pair = |(a, b): (u32, u32)| format!("({}, {})", name(a), name(b));

    let mut out = String::new();
    out.push_str(&format!(
        "trace {} root {}/{}\n",
        trace.trace_id, root.service, root.operation
    ));
    out.push_str("\n# event sequence of the root span\n");
    for &id in &seq {
        out.push_str(&format!("{}\n", name(id)));
    }
    out.push_str("\n# intra-span pairs of the root span\n");
    for w in seq.windows(2) {
        out.push_str(&format!("{}\n", pair((w[0], w[1]))));
    }
    out.push_str("\n# inter-span pairs leaving the root span\n");
    let end_root = *seq.last().expect("non-empty sequence");
    let mut inter: Vec<String> = trace.children()[trace.root_index]
        .iter()
        .map(|&c| {
            let child = &trace.spans[c];
            let key = EventKey::Operation {
                service: child.service.clone(),
                operation: child.operation.clone(),
            };
            let start = enc
                .events
                .lookup(EventKind::SpanStart, &key)
                .expect("child start was encoded");
            assert!(encoded.eps.contains(&(end_root, start)));
            pair((end_root, start))
        })
        .collect();
    inter.sort();
    for p in inter {
        out.push_str(&format!("{p}\n"));
    }
    let mut all: Vec<String> = encoded.eps.pairs().iter().map(|&p| pair(p)).collect();
    all.sort();
    out.push_str(&format!("\n# full event-pair set ({} pairs)\n", all.len()));
    for p in all {
        out.push_str(&format!("{p}\n"));
    }
    out.push_str(&format!("\nanomaly {}\n", encoded.anomaly));
    out
}

fn motif_golden() -> Check {
    let spans = blind_spot_motif("t1", BASE_TIMESTAMP_NS);
    let direct = render_motif(&assemble_trace(spans.clone()).map_err(|e| e.to_string())?);

    // the same trace through the JSONL ingestion path
    let mut buf = Vec::new();
    write_spans(&mut buf, &spans).map_err(|e| e.to_string())?;
    let parsed = parse_trace_stream(buf.as_slice()).map_err(|e| e.to_string())?;
    ensure(
        parsed.diagnostics.is_empty() && parsed.traces.len() == 1,
        || "motif did not round-trip".into(),
    )?;
    ensure(render_motif(&parsed.traces[0]) == direct, || {
        "JSONL round trip changed the encoding".into()
    })?;

    let expected = [
        format!("(start({BASIC}), log(156))"),
        "(log(156), log(203))".to_string(),
        "(log(203), log(78))".to_string(),
        format!("(log(78), end({BASIC}))"),
        format!("(end({BASIC}), start(ts-route-service/getRouteById))"),
    ];
    for p in &expected {
        ensure(direct.lines().any(|l| l == p), || {
            format!("pair {p} missing")
        })?;
    }
    let intra: Vec<&str> = direct
        .split("# intra-span pairs of the root span\n")
        .nth(1)
        .and_then(|s| s.split("\n\n").next())
        .map(|s| s.lines().collect())
        .unwrap_or_default();
    ensure(
        intra == expected[..4].iter().map(String::as_str).collect::<Vec<_>>(),
        || format!("root intra-span pairs are {intra:?}"),
    )?;

    if std::env::var_os("EPSAMPLE_BLESS").is_some() {
        fs::write(GOLDEN, &direct).map_err(|e| e.to_string())?;
    }
    let golden = fs::read_to_string(GOLDEN).map_err(|e| format!("{GOLDEN}: {e}"))?;
    ensure(golden == direct, || {
        format!("encoding differs from {GOLDEN}:\n{direct}")
    })?;
    Ok(format!(
        "4 intra + root->route inter pairs present; byte-exact vs golden ({} bytes)",
        golden.len()
    ))
}

// ---------------------------------------------------------------------------
// 2. Anomaly score oracle

const SERVICES: [&str; 6] = ["gateway", "order", "payment", "stock", "user", "notify"];
const OPS: [&str; 4] = ["get", "put", "list", "check"];

fn random_trace(rng: &mut impl Rng, id: usize, spans: usize, start: u64, messages: bool) -> Trace {
    let trace_id = format!("r{id:06}");
    let levels = [
        LogLevel::Debug,
        LogLevel::Info,
        LogLevel::Warn,
        LogLevel::Error,
    ];
    let out: Vec<Span> = (0..spans)
        .map(|i| {
            let s = start + rng.gen_range(0..1_000_000u64);
            let duration = rng.gen_range(1_000..5_000_000u64);
            let logs = (0..rng.gen_range(0..=4))
                .map(|_| {
                    let level = levels[rng.gen_range(0..4)];
                    let body = if messages {
                        let n: u32 = rng.gen_range(0..100_000);
                        match rng.gen_range(0..4) {
                            0 => LogBody::Message(format!(
                                "request {n} accepted by worker {}",
                                n % 7
                            )),
                            1 => LogBody::Message(format!("cache miss for key user-{n}")),
                            2 => LogBody::Message(format!("retrying upstream call after {n} ms")),
                            _ => LogBody::Message(format!("order {n} state changed to PAID")),
                        }
                    } else {
                        LogBody::Template(rng.gen_range(0..30))
                    };
                    LogEvent {
                        timestamp: s + rng.gen_range(0..duration),
                        level,
                        body,
                    }
                })
                .collect();
            Span {
                trace_id: trace_id.clone(),
                span_id: format!("s{i}"),
                parent_span_id: (i > 0).then(|| format!("s{}", rng.gen_range(0..i))),
                service: SERVICES[rng.gen_range(0..SERVICES.len())].into(),
                operation: OPS[rng.gen_range(0..OPS.len())].into(),
                start: s,
                duration,
                status: if rng.gen_bool(0.2) {
                    SpanStatus::Error
                } else {
                    SpanStatus::Ok
                },
                logs,
            }
        })
        .collect();
    assemble_trace(out).expect("random tree assembles")
}

/// The anomaly score with the default weights (5, 1, 2, perf 3 above 1.2 x p90 once 20
/// durations are known), recounted from the raw spans.
fn naive_score(trace: &Trace, window: &[u64]) -> f64 {
    let (mut errors, mut warns, mut errlogs) = (0u64, 0u64, 0u64);
    for span in &trace.spans {
        if span.status == SpanStatus::Error {
            errors += 1;
        }
        for log in &span.logs {
            match log.level {
                LogLevel::Warn => warns += 1,
                LogLevel::Error => errlogs += 1,
                _ => {}
            }
        }
    }
    let mut perf = 0u64;
    if window.len() >= 20 {
        let mut sorted = window.to_vec();
        sorted.sort();
        let p90 = sorted[(9 * sorted.len()).div_ceil(10) - 1];
        if trace.root().duration as f64 > 1.2 * p90 as f64 {
            perf = 1;
        }
    }
    (5 * errors + warns + 2 * errlogs + 3 * perf) as f64
}

fn anomaly_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0xE01);
    let cfg = AnomalyConfig::default();
    let mut enc = TraceEncoder::new(cfg);
    let (mut degraded, mut scored) = (0, 0);
    for id in 0..1000 {
        let n = rng.gen_range(1..=20);
        let trace = random_trace(&mut rng, id, n, BASE_TIMESTAMP_NS, false);
        let root = trace.root().duration;
        let capacity = rng.gen_range(1..80);
        // half the groups run slower than this trace, half faster
        let spread = if rng.gen_bool(0.5) { 1.3 } else { 0.9 };
        let observed: Vec<u64> = (0..rng.gen_range(0..60))
            .map(|_| (root as f64 * rng.gen_range(0.3..spread)) as u64)
            .collect();
        let mut stats = GroupStats::new(trace.root().endpoint(), capacity);
        for &d in &observed {
            stats.update(d);
        }
        let window = &observed[observed.len().saturating_sub(capacity)..];
        let want = naive_score(&trace, window);
        let got = anomaly_score(&trace, &stats, &cfg);
        let encoded = enc.encode(&trace, &stats);
        ensure(got == want && encoded.anomaly == want, || {
            format!(
                "trace {id}: anomaly_score {got}, encode {}, naive {want}",
                encoded.anomaly
            )
        })?;
        degraded += encoded.degraded as usize;
        scored += (want > 0.0) as usize;
    }
    Ok(format!(
        "1000/1000 exact ({scored} non-zero, {degraded} with the latency term)"
    ))
}

// ---------------------------------------------------------------------------
// 3. Greedy DPP oracle

fn random_candidates(
    rng: &mut impl Rng,
    n: usize,
    universe: u32,
    size: std::ops::RangeInclusive<usize>,
) -> Vec<EncodedTrace> {
    (0..n)
        .map(|i| {
            let len = rng.gen_range(size.clone());
            let pairs: Vec<(u32, u32)> =
                (0..len).map(|_| (rng.gen_range(1..=universe), 0)).collect();
            let anomaly = match rng.gen_range(0..4) {
                0 => 0.0,
                1 => rng.gen_range(0..4) as f64,
                _ => rng.gen_range(0.0..12.0),
            };
            EncodedTrace {
                trace_id: format!("c{i:02}"),
                endpoint: EndpointKey::new("svc", "op"),
                eps: EventPairSet::from_pairs(pairs),
                anomaly,
                degraded: false,
                end_to_end_duration: 0,
                arrival: rng.gen_range(0..4),
            }
        })
        .collect()
}

fn naive_det(mut m: Vec<Vec<f64>>) -> f64 {
    let n = m.len();
    let mut det = 1.0;
    for c in 0..n {
        let p = (c..n)
            .max_by(|&a, &b| m[a][c].abs().total_cmp(&m[b][c].abs()))
            .expect("non-empty");
        if m[p][c] == 0.0 {
            return 0.0;
        }
        if p != c {
            m.swap(p, c);
            det = -det;
        }
        det *= m[c][c];
        let (top, rest) = m.split_at_mut(c + 1);
        let pivot = &top[c];
        for row in rest {
            let f = row[c] / pivot[c];
            for (x, p) in row[c..].iter_mut().zip(&pivot[c..]) {
                *x -= f * p;
            }
        }
    }
    det
}

/// Greedy MAP by recomputing `det(L_{S+i}) / det(L_S)` from scratch for every
/// candidate at every step, with the kernel built directly from sets.
fn naive_greedy(cands: &[EncodedTrace], k: usize) -> Vec<usize> {
    let n = cands.len();
    let max_a = cands.iter().map(|c| c.anomaly).fold(0.0, f64::max);
    let q: Vec<f64> = cands
        .iter()
        .map(|c| 1.0 + c.anomaly / (1.0 + max_a))
        .collect();
    let sets: Vec<BTreeSet<(u32, u32)>> = cands
        .iter()
        .map(|c| c.eps.pairs().iter().copied().collect())
        .collect();
    let sim = |i: usize, j: usize| {
        if i == j {
            return 1.0;
        }
        let inter = sets[i].intersection(&sets[j]).count();
        let union = sets[i].union(&sets[j]).count();
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    };
    let minor = |s: &[usize]| -> Vec<Vec<f64>> {
        s.iter()
            .map(|&i| s.iter().map(|&j| q[i] * sim(i, j) * q[j]).collect())
            .collect()
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        cands[b]
            .anomaly
            .total_cmp(&cands[a].anomaly)
            .then(cands[a].arrival.cmp(&cands[b].arrival))
            .then(cands[a].trace_id.cmp(&cands[b].trace_id))
    });
    let mut rank = vec![0; n];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }

    let mut chosen: Vec<usize> = Vec::new();
    while chosen.len() < k {
        let base = if chosen.is_empty() {
            1.0
        } else {
            naive_det(minor(&chosen))
        };
        let mut best: Option<(usize, f64)> = None;
        for i in (0..n).filter(|i| !chosen.contains(i)) {
            let mut s = chosen.clone();
            s.push(i);
            let d2 = naive_det(minor(&s)) / base;
            if d2.partial_cmp(&GAIN_FLOOR) != Some(std::cmp::Ordering::Greater) {
                continue;
            }
            best = match best {
                Some((b, db)) if !beats(d2, rank[i], db, rank[b]) => Some((b, db)),
                _ => Some((i, d2)),
            };
        }
        match best {
            Some((i, _)) => chosen.push(i),
            None => break,
        }
    }
    for &i in &order {
        if chosen.len() == k {
            break;
        }
        if !chosen.contains(&i) {
            chosen.push(i);
        }
    }
    chosen
}

fn dpp_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0xD99);
    let cfg = SelectorConfig {
        epsilon: 0.0,
        ..SelectorConfig::default()
    };
    let mut early = 0;
    for trial in 0..200 {
        let n = rng.gen_range(1..=8);
        let k = rng.gen_range(1..=n);
        let cands = random_candidates(&mut rng, n, 8, 0..=5);
        let want = naive_greedy(&cands, k);
        for cache in [SimilarityCache::new(64), SimilarityCache::disabled()] {
            let mut cache = cache;
            let got = greedy_select(&cands, k, &cfg, &mut cache);
            early += got.stopped_early as usize;
            ensure(got.indices() == want, || {
                format!(
                    "kernel {trial} (n={n}, k={k}): greedy {:?}, naive {want:?}",
                    got.indices()
                )
            })?;
        }
    }

    let mut wins = 0;
    for _ in 0..100 {
        let cands = random_candidates(&mut rng, 30, 40, 3..=10);
        let greedy = greedy_select(&cands, 5, &cfg, &mut SimilarityCache::new(1024)).indices();
        let mut all: Vec<usize> = (0..30).collect();
        all.shuffle(&mut rng);
        let random = &all[..5];
        let g = log_det(&kernel_minor(&cands, &greedy)).unwrap_or(f64::NEG_INFINITY);
        let r = log_det(&kernel_minor(&cands, random)).unwrap_or(f64::NEG_INFINITY);
        wins += (g >= r - 1e-9) as usize;
    }
    ensure(wins >= 95, || {
        format!("greedy log-det >= random in only {wins}/100 trials")
    })?;
    Ok(format!(
        "200/200 kernels match index-for-index with cache on and off ({early} runs exhausted early); log-det >= random in {wins}/100"
    ))
}

// ---------------------------------------------------------------------------
// 4. Metric oracle

fn naive_path(trace: &Trace, span: usize) -> String {
    let s = &trace.spans[span];
    let mut kids: Vec<String> = (0..trace.spans.len())
        .filter(|&c| trace.spans[c].parent_span_id.as_deref() == Some(s.span_id.as_str()))
        .map(|c| naive_path(trace, c))
        .collect();
    kids.sort();
    kids.dedup();
    let label = format!("{}/{}", s.service, s.operation);
    if kids.is_empty() {
        label
    } else {
        format!("{label}({})", kids.join(","))
    }
}

fn naive_metrics(
    traces: &[Trace],
    encoded: &[EncodedTrace],
    labels: &HashMap<String, bool>,
    rare_max: u64,
    sample: &[usize],
) -> MetricsReport {
    let endpoint = |i: usize| {
        (
            traces[i].root().service.clone(),
            traces[i].root().operation.clone(),
        )
    };
    let pattern = |i: usize| encoded[i].eps.pairs().to_vec();
    let all: Vec<usize> = (0..traces.len()).collect();
    let set_of = |ids: &[usize], f: &dyn Fn(usize) -> String| {
        ids.iter().map(|&i| f(i)).collect::<BTreeSet<_>>().len()
    };
    let ep_str = |i: usize| format!("{:?}", endpoint(i));
    let path_str = |i: usize| naive_path(&traces[i], traces[i].root_index);
    let pat_str = |i: usize| format!("{:?}", pattern(i));

    let mut corpus_counts: BTreeMap<Vec<(u32, u32)>, u64> = BTreeMap::new();
    for &i in &all {
        *corpus_counts.entry(pattern(i)).or_default() += 1;
    }
    let mut sample_counts: BTreeMap<Vec<(u32, u32)>, u64> = BTreeMap::new();
    for &i in sample {
        *sample_counts.entry(pattern(i)).or_default() += 1;
    }
    let n = sample.len();
    let frac = |k: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
    let mut counts: Vec<u64> = sample_counts.values().copied().collect();
    counts.sort();
    let entropy = counts
        .iter()
        .map(|&c| {
            let p = c as f64 / n as f64;
            -p * libm::log2(p)
        })
        .sum::<f64>()
        .max(0.0);
    MetricsReport {
        api_coverage: set_of(sample, &ep_str) as f64 / set_of(&all, &ep_str) as f64,
        path_coverage: set_of(sample, &path_str) as f64 / set_of(&all, &path_str) as f64,
        pattern_coverage: set_of(sample, &pat_str) as f64 / set_of(&all, &pat_str) as f64,
        shannon_entropy_bits: entropy,
        proportion_anomaly: frac(
            sample
                .iter()
                .filter(|&&i| encoded[i].anomaly >= 1.0)
                .count(),
        ),
        proportion_anomaly_labels: (n > 0).then(|| {
            frac(
                sample
                    .iter()
                    .filter(|&&i| labels[&traces[i].trace_id])
                    .count(),
            )
        }),
        proportion_rare: frac(
            sample
                .iter()
                .filter(|&&i| corpus_counts[&pattern(i)] <= rare_max)
                .count(),
        ),
        bcr: frac(sample_counts.len()),
        actual_rate: n as f64 / traces.len() as f64,
        sample_size: n,
        corpus_size: traces.len(),
        runtime_stats: None,
    }
}

fn metric_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x4E7);
    let presets = preset_scenarios();
    let cfg = SamplerConfig::with_rate(0.05);
    let mut checked = 0;
    let mut sizes = Vec::new();
    for c in 0..50u64 {
        let base = &presets[(c % presets.len() as u64) as usize];
        let duration = rng.gen_range(1..=3);
        // presets span 10 minutes; squeeze their fault windows accordingly
        let shrink = duration as f64 / base.duration as f64;
        let faults = base
            .faults
            .iter()
            .map(|f| FaultSpec {
                window_start: f.window_start * shrink,
                window_end: f.window_end * shrink,
                ..f.clone()
            })
            .collect();
        let scenario = ScenarioConfig {
            seed: 100 + c,
            duration,
            faults,
            qpm: rng.gen_range(50..=330),
            endpoints: rng.gen_range(4..=20),
            ..base.clone()
        };
        let mut data = corpus(&scenario);
        data.traces.truncate(1000);
        let rare_max = if rng.gen_bool(0.5) {
            None
        } else {
            Some(rng.gen_range(1..=4))
        };
        let (index, encoded) = build_index(
            &data.traces,
            &cfg.anomaly,
            cfg.window_ns,
            Some(&data.labels),
            rare_max,
        )
        .map_err(|e| e.to_string())?;
        let n = data.traces.len();
        sizes.push(n);
        let rare = rare_max.unwrap_or_else(|| default_rare_max(n));

        let run = run_sampler(&data.traces, &data.alarms, cfg, false).map_err(|e| e.to_string())?;
        let pos: HashMap<&str, usize> = data
            .traces
            .iter()
            .enumerate()
            .map(|(i, t)| (t.trace_id.as_str(), i))
            .collect();
        let mut samples: Vec<Vec<usize>> = vec![
            (0..n).collect(),
            run.selected_ids()
                .iter()
                .map(|id| pos[id.as_str()])
                .collect(),
            random_sample(n, rng.gen_range(0.001..0.5), c),
        ];
        let mut shuffled: Vec<usize> = (0..n).collect();
        shuffled.shuffle(&mut rng);
        samples.push(shuffled[..rng.gen_range(1..=n)].to_vec());

        for sample in samples {
            let ids: Vec<&str> = sample
                .iter()
                .map(|&i| data.traces[i].trace_id.as_str())
                .collect();
            let got = compute_metrics(&index, &ids).map_err(|e| e.to_string())?;
            let want = naive_metrics(&data.traces, &encoded, &data.labels, rare, &sample);
            ensure(got == want, || {
                format!("corpus {c}: metrics {got:?}\n  brute force {want:?}")
            })?;
            checked += 1;
        }
    }
    Ok(format!(
        "{checked} samples over 50 corpora ({}..={} traces) equal brute-force recounts exactly",
        sizes.iter().min().unwrap_or(&0),
        sizes.iter().max().unwrap_or(&0)
    ))
}

// ---------------------------------------------------------------------------
// 5. Budget exactness

fn budget_exactness() -> Check {
    let mut runs = 0;
    let mut windows = 0;
    let mut worst: f64 = 0.0;
    let mut summary = Vec::new();
    for scenario in preset_scenarios() {
        let data = corpus(&scenario);
        for rate in [0.01, 0.05, 0.10] {
            for scaling in [false, true] {
                let mut cfg = SamplerConfig::with_rate(rate);
                cfg.allocator.traffic_scaling = scaling;
                let run = run_sampler(&data.traces, &data.alarms, cfg, false)
                    .map_err(|e| e.to_string())?;
                for w in &run.windows {
                    let tag = || {
                        format!(
                            "{} @{rate} scaling={scaling} window {}",
                            scenario.name, w.window
                        )
                    };
                    ensure(w.selected.len() as u64 == w.plan.total, || {
                        format!(
                            "{}: selected {} of budget {}",
                            tag(),
                            w.selected.len(),
                            w.plan.total
                        )
                    })?;
                    ensure(w.unspent == 0, || {
                        format!("{}: {} unspent", tag(), w.unspent)
                    })?;
                    if w.plan.scale == 1.0 {
                        let off = (w.selected.len() as f64 - rate * w.trace_count as f64).abs();
                        worst = worst.max(off);
                        ensure(off <= 1.0, || {
                            format!(
                                "{}: {} selected for target {}",
                                tag(),
                                w.selected.len(),
                                rate * w.trace_count as f64
                            )
                        })?;
                    }
                    windows += 1;
                }
                if !scaling {
                    let n = run.trace_count();
                    let selected = run.selected_ids().len();
                    summary.push(format!(
                        "{}@{}%={}/{}",
                        scenario.name,
                        rate * 100.0,
                        selected,
                        n
                    ));
                }
                runs += 1;
            }
        }
    }
    Ok(format!(
        "{runs} runs, {windows} windows: selected = budget, unspent 0, max |selected - rate*n| = {worst:.2} in unscaled windows; {}",
        summary.join(" ")
    ))
}

// ---------------------------------------------------------------------------
// 6. Coverage dominance and 7. anomaly capture

struct Comparison {
    sampled: Vec<MetricsReport>,
    random: Vec<MetricsReport>,
    patterns: Vec<usize>,
    sizes: Vec<usize>,
}

fn compare(name: &str, rate: f64) -> Result<Comparison, String> {
    let mut out = Comparison {
        sampled: Vec::new(),
        random: Vec::new(),
        patterns: Vec::new(),
        sizes: Vec::new(),
    };
    for seed in 1..=10 {
        let data = corpus(&seeded(name, seed));
        let cfg = SamplerConfig::with_rate(rate);
        let run = run_sampler(&data.traces, &data.alarms, cfg, false).map_err(|e| e.to_string())?;
        let (index, _) = build_index(
            &data.traces,
            &cfg.anomaly,
            cfg.window_ns,
            Some(&data.labels),
            None,
        )
        .map_err(|e| e.to_string())?;
        let ids: Vec<&str> = index.trace_ids().collect();
        let random: Vec<&str> = random_sample(ids.len(), rate, seed)
            .into_iter()
            .map(|i| ids[i])
            .collect();
        out.sampled
            .push(compute_metrics(&index, &run.selected_ids()).map_err(|e| e.to_string())?);
        out.random
            .push(compute_metrics(&index, &random).map_err(|e| e.to_string())?);
        out.patterns.push(index.pattern_count());
        out.sizes.push(index.len());
    }
    Ok(out)
}

fn coverage_dominance() -> Check {
    let c = compare("steady", 0.05)?;
    let min_patterns = *c.patterns.iter().min().expect("ten seeds");
    ensure(min_patterns >= 200, || {
        format!("only {min_patterns} distinct patterns")
    })?;
    ensure(c.sizes.iter().all(|&n| n == 10_000), || {
        format!("corpus sizes {:?}", c.sizes)
    })?;
    let g = mean(
        &c.sampled
            .iter()
            .map(|m| m.pattern_coverage)
            .collect::<Vec<_>>(),
    );
    let r = mean(
        &c.random
            .iter()
            .map(|m| m.pattern_coverage)
            .collect::<Vec<_>>(),
    );
    let gain = g / r - 1.0;
    ensure(gain >= 0.20, || {
        format!(
            "pattern coverage {g:.4} vs random {r:.4} (+{:.1}%)",
            gain * 100.0
        )
    })?;
    Ok(format!(
        "steady @5%, 10 seeds, >= {min_patterns} patterns: pattern coverage {g:.4} vs random {r:.4} (+{:.1}%)",
        gain * 100.0
    ))
}

fn anomaly_capture() -> Check {
    let started = Instant::now();
    let c = compare("blindspot", 0.01)?;
    let elapsed = started.elapsed().as_secs_f64();
    let g = mean(
        &c.sampled
            .iter()
            .map(|m| m.proportion_anomaly)
            .collect::<Vec<_>>(),
    );
    let r = mean(
        &c.random
            .iter()
            .map(|m| m.proportion_anomaly)
            .collect::<Vec<_>>(),
    );
    let gl = mean(
        &c.sampled
            .iter()
            .filter_map(|m| m.proportion_anomaly_labels)
            .collect::<Vec<_>>(),
    );
    let rl = mean(
        &c.random
            .iter()
            .filter_map(|m| m.proportion_anomaly_labels)
            .collect::<Vec<_>>(),
    );
    ensure(g >= 3.0 * r, || {
        format!("proportion anomaly {g:.4} vs random {r:.4}")
    })?;
    ensure(elapsed < 120.0, || {
        format!("experiment took {elapsed:.1} s")
    })?;
    Ok(format!(
        "blindspot @1%, 10 seeds: proportion anomaly {g:.4} vs random {r:.4} ({:.1}x); by labels {gl:.4} vs {rl:.4}; {elapsed:.1} s",
        g / r.max(f64::MIN_POSITIVE)
    ))
}

// ---------------------------------------------------------------------------
// 8. Traffic-drop compensation

fn traffic_compensation() -> Check {
    let scenario = preset("outage").expect("outage preset");
    let drop = scenario
        .faults
        .iter()
        .find(|f| f.kind.as_str() == "TRAFFIC_DROP")
        .ok_or("outage has no traffic drop")?;
    let data = corpus(&scenario);
    let minute = 60_000_000_000u64;
    let (from, to) = (
        data.start_ns + (drop.window_start * minute as f64) as u64,
        data.start_ns + (drop.window_end * minute as f64) as u64,
    );
    let mut counts = Vec::new();
    for scaling in [true, false] {
        let mut cfg = SamplerConfig::with_rate(0.05);
        cfg.allocator.traffic_scaling = scaling;
        let run = run_sampler(&data.traces, &data.alarms, cfg, false).map_err(|e| e.to_string())?;
        let in_window = run
            .windows
            .iter()
            .filter(|w| w.window_start >= from && w.window_end <= to)
            .map(|w| w.selected.len())
            .sum::<usize>();
        counts.push(in_window);
    }
    ensure(counts[0] > counts[1], || {
        format!("scaling on {} vs off {}", counts[0], counts[1])
    })?;
    Ok(format!(
        "outage @5%, drop window minutes {}-{}: {} sampled with scaling vs {} without",
        drop.window_start, drop.window_end, counts[0], counts[1]
    ))
}

// ---------------------------------------------------------------------------
// 9. Cache effectiveness

fn cache_effectiveness() -> Check {
    let scenario = ScenarioConfig {
        name: "repetitive".into(),
        seed: 9,
        duration: 100,
        qpm: 60,
        endpoints: 2,
        pattern_variants: 5,
        ..ScenarioConfig::default()
    };
    let data = corpus(&scenario);
    let mut cfg = SamplerConfig::with_rate(0.1);
    let on = run_sampler(&data.traces, &data.alarms, cfg, false).map_err(|e| e.to_string())?;
    cfg.selector.use_cache = false;
    let off = run_sampler(&data.traces, &data.alarms, cfg, false).map_err(|e| e.to_string())?;
    let (index, _) = build_index(&data.traces, &cfg.anomaly, cfg.window_ns, None, None)
        .map_err(|e| e.to_string())?;
    ensure(on.windows.len() == 100, || {
        format!("{} windows", on.windows.len())
    })?;
    ensure(on.cache.hit_rate >= 0.8, || {
        format!("hit rate {:.4}", on.cache.hit_rate)
    })?;
    let (a, b) = (sample_digest(&on), sample_digest(&off));
    ensure(a == b, || format!("sample digests differ: {a} vs {b}"))?;
    Ok(format!(
        "{} traces, 100 windows, {} patterns: hit rate {:.4} ({} hits, {} misses); digests equal ({}...)",
        index.len(),
        index.pattern_count(),
        on.cache.hit_rate,
        on.cache.hits,
        on.cache.misses,
        &a[..16]
    ))
}

// ---------------------------------------------------------------------------
// 10. Throughput

fn throughput() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x7A);
    let minute = 60_000_000_000u64;
    let mut traces: Vec<Trace> = (0..10_000)
        .map(|i| {
            let start = BASE_TIMESTAMP_NS + (i as u64 * 10 * minute) / 10_000;
            random_trace(&mut rng, i, 20, start, true)
        })
        .collect();
    traces.sort_by_key(|t| (t.completion(), t.trace_id.clone()));
    let cfg = SamplerConfig::with_rate(0.05);
    let started = Instant::now();
    let run = run_sampler(&traces, &AlarmFeed::default(), cfg, false).map_err(|e| e.to_string())?;
    let wall_ms = started.elapsed().as_secs_f64() * 1e3 / traces.len() as f64;
    let stages = epsample_core::pipeline::runtime_over(&run.windows).ok_or("no windows")?;
    ensure(wall_ms < 5.0 && stages.mean_ms < 5.0, || {
        format!(
            "mean per-trace {wall_ms:.4} ms wall clock, {:.4} ms in stages",
            stages.mean_ms
        )
    })?;
    Ok(format!(
        "10000 traces x 20 spans: {wall_ms:.4} ms/trace wall clock; stage mean {:.4} ms, encode p50 {:.4} ms, p99 {:.4} ms",
        stages.mean_ms, stages.p50_ms, stages.p99_ms
    ))
}

// ---------------------------------------------------------------------------
// 11. Determinism of every subcommand

fn cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_epsample"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!(
            "epsample {}: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn digests_of(root: &Path) -> Result<Vec<(String, String)>, String> {
    let p = |s: &str| root.join(s).to_string_lossy().into_owned();
    cli(&[
        "generate",
        "--scenario",
        "outage",
        "--qpm",
        "100",
        "--out",
        &p("gen"),
    ])?;
    cli(&[
        "sample",
        "--traces",
        &p("gen/spans.jsonl"),
        "--alarms",
        &p("gen/alarms.jsonl"),
        "--rate",
        "0.05",
        "--debug",
        "--passthrough",
        "--out",
        &p("sample"),
    ])?;
    cli(&[
        "evaluate",
        "--traces",
        &p("gen/spans.jsonl"),
        "--sample",
        &p("sample/sample.jsonl"),
        "--ground-truth",
        &p("gen/ground_truth.jsonl"),
        "--baseline-random",
        "seed=3",
        "--out",
        &p("eval"),
    ])?;
    cli(&[
        "bench",
        "--traces",
        &p("gen/spans.jsonl"),
        "--alarms",
        &p("gen/alarms.jsonl"),
        "--rate",
        "0.05",
        "--repeat",
        "2",
        "--out",
        &p("bench"),
    ])?;
    ["gen", "sample", "eval", "bench"]
        .iter()
        .map(|d| {
            let m = RunManifest::read(&root.join(d)).map_err(|e| format!("{d}: {e}"))?;
            Ok((m.subcommand, m.digest))
        })
        .collect()
}

fn determinism() -> Check {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let first = digests_of(a.path())?;
    let second = digests_of(b.path())?;
    for ((cmd, x), (_, y)) in first.iter().zip(&second) {
        ensure(x == y, || format!("{cmd}: manifest digest {x} vs {y}"))?;
    }
    // sanity: the digest does react to the seed
    let c = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = c.path().join("gen").to_string_lossy().into_owned();
    cli(&[
        "generate",
        "--scenario",
        "outage",
        "--qpm",
        "100",
        "--seed",
        "99",
        "--out",
        &out,
    ])?;
    let other = RunManifest::read(&c.path().join("gen")).map_err(|e| e.to_string())?;
    ensure(other.digest != first[0].1, || {
        "generate digest ignores the seed".into()
    })?;
    Ok(first
        .iter()
        .map(|(cmd, d)| format!("{cmd}={}", &d[..12]))
        .collect::<Vec<_>>()
        .join(" ")
        + " (equal across two runs)")
}

// ---------------------------------------------------------------------------

fn main() -> ExitCode {
    let checks: [Criterion; 11] = [
        ("blind-spot golden encoding", motif_golden),
        ("anomaly score oracle", anomaly_oracle),
        ("greedy DPP oracle", dpp_oracle),
        ("metric oracle", metric_oracle),
        ("budget exactness", budget_exactness),
        ("coverage dominance", coverage_dominance),
        ("anomaly capture", anomaly_capture),
        ("traffic-drop compensation", traffic_compensation),
        ("cache effectiveness", cache_effectiveness),
        ("throughput", throughput),
        ("determinism", determinism),
    ];
    let filter: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let n = i + 1;
        if !filter.is_empty() && !filter.contains(&n) {
            continue;
        }
        let started = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {n:>2} {name} [{secs:.1}s]: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {n:>2} {name} [{secs:.1}s]: {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    }
}
