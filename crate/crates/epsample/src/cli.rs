//! Command-line interface: `generate`, `sample`, `evaluate` and `bench`.
//!
//! Exit codes: 0 success, 1 data error, 2 usage or configuration error.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use epsample_core::eval::{compute_metrics, random_sample, MetricsReport};
use epsample_core::model::Trace;
use epsample_core::pipeline::{runtime_over, SamplerConfig};
use epsample_core::quota::AlarmFeed;
use epsample_core::workload::{generate, preset, preset_scenarios, GroundTruth, ScenarioConfig};
use epsample_core::ConfigError;
use serde::{Deserialize, Serialize};

use crate::config::FileConfig;
use crate::formats::{
    parse_trace_stream, quota_records, read_alarms, read_jsonl, sample_records, selection_records,
    write_alarms, write_jsonl, write_spans, EncodedRecord, ReadError, TemplateRecord,
};
use crate::manifest::{sha256_hex, ManifestBuilder, RunManifest};
use crate::runner::{build_index, run_sampler, SampleRun};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Data(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl CliError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Data(_) | CliError::Io { .. } => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "epsample",
    version,
    about = "Tail-based trace sampling over event-pair-set encodings"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus: spans, alarms and ground truth.
    Generate(GenerateArgs),
    /// Run the windowed sampler over a span file.
    Sample(SampleArgs),
    /// Compute quality metrics of one or more samples against a corpus.
    Evaluate(EvaluateArgs),
    /// Time the full pipeline and report per-trace cost and cache hit rate.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Preset scenario: steady, blindspot, outage or latency.
    #[arg(long)]
    pub scenario: Option<String>,
    /// JSON config file; its `scenario` section is used when no preset is named.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Length in minutes.
    #[arg(long)]
    pub duration: Option<u32>,
    /// Baseline traces per minute.
    #[arg(long)]
    pub qpm: Option<u32>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Sampler settings shared by `sample` and `bench`.
#[derive(Debug, Args)]
pub struct SamplerArgs {
    /// Span JSONL file.
    #[arg(long)]
    pub traces: PathBuf,
    /// Alarm JSONL file.
    #[arg(long)]
    pub alarms: Option<PathBuf>,
    /// Target sampling rate in (0, 1]; required unless a config file sets it.
    #[arg(long)]
    pub rate: Option<f64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Buffer window length in seconds.
    #[arg(long)]
    pub window_secs: Option<u64>,
    /// Early-stop threshold on the conditional variance.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Disable the similarity cache.
    #[arg(long)]
    pub no_cache: bool,
    /// Disable budget scaling on traffic drops.
    #[arg(long)]
    pub no_traffic_scaling: bool,
    /// Drop malformed span lines instead of failing.
    #[arg(long)]
    pub skip_malformed: bool,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[command(flatten)]
    pub sampler: SamplerArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write quota, selection, template and encoding dumps.
    #[arg(long)]
    pub debug: bool,
    /// Also write the full spans of every selected trace.
    #[arg(long)]
    pub passthrough: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Corpus span JSONL file.
    #[arg(long)]
    pub traces: PathBuf,
    /// Sample JSONL files (any records with a `trace_id`).
    #[arg(long = "sample")]
    pub samples: Vec<PathBuf>,
    /// Ground-truth JSONL; adds label-based proportion anomaly.
    #[arg(long)]
    pub ground_truth: Option<PathBuf>,
    /// Random baseline, e.g. `seed=7` or `seed=7,rate=0.05`; repeatable.
    #[arg(long = "baseline-random")]
    pub baseline_random: Vec<String>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub rare_max: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub sampler: SamplerArgs,
    /// Number of full pipeline runs to pool timings over.
    #[arg(long, default_value_t = 1)]
    pub repeat: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Sample(a) => cmd_sample(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Bench(a) => cmd_bench(a),
    }
}

fn create(dir: &Path, name: &str) -> Result<(PathBuf, BufWriter<File>), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let path = dir.join(name);
    let file = File::create(&path).map_err(|e| CliError::io(&path, e))?;
    Ok((path, BufWriter::new(file)))
}

/// Writes `name` in `dir` with `body` and records it in the manifest.
fn emit(
    dir: &Path,
    name: &str,
    manifest: &mut ManifestBuilder,
    body: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>,
) -> Result<PathBuf, CliError> {
    let (path, mut w) = create(dir, name)?;
    body(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| CliError::io(&path, e))?;
    drop(w);
    manifest.output(&path).map_err(|e| CliError::io(&path, e))?;
    Ok(path)
}

fn emit_timing(
    dir: &Path,
    name: &str,
    manifest: &mut ManifestBuilder,
    value: &impl Serialize,
) -> Result<(), CliError> {
    let (path, mut w) = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value)
        .map_err(io::Error::from)
        .and_then(|_| w.write_all(b"\n"))
        .and_then(|_| w.flush())
        .map_err(|e| CliError::io(&path, e))?;
    manifest.timing_output(&path);
    Ok(())
}

fn write_json(w: &mut impl Write, value: &impl Serialize) -> io::Result<()> {
    serde_json::to_writer_pretty(&mut *w, value)?;
    w.write_all(b"\n")
}

fn finish_manifest(dir: &Path, manifest: ManifestBuilder) -> Result<RunManifest, CliError> {
    let m = manifest.finish();
    m.write(dir).map_err(|e| CliError::io(dir, e))?;
    Ok(m)
}

fn to_value(v: &impl Serialize) -> serde_json::Value {
    serde_json::to_value(v).expect("config serializes")
}

fn cmd_generate(a: GenerateArgs) -> Result<(), CliError> {
    let file = FileConfig::load(a.config.as_deref())?;
    let mut cfg: ScenarioConfig = match (&a.scenario, file.scenario) {
        (Some(name), _) => preset(name).ok_or_else(|| {
            let names: Vec<String> = preset_scenarios().into_iter().map(|s| s.name).collect();
            CliError::Usage(format!(
                "unknown scenario {name:?}; expected one of {}",
                names.join(", ")
            ))
        })?,
        (None, Some(s)) => s,
        (None, None) => {
            return Err(CliError::Usage(
                "give --scenario or a --config with a scenario section".into(),
            ))
        }
    };
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(d) = a.duration {
        cfg.duration = d;
    }
    if let Some(q) = a.qpm {
        cfg.qpm = q;
    }
    let scenario = generate(&cfg)?;

    let mut manifest = ManifestBuilder::new("generate", Some(cfg.seed), to_value(&cfg));
    if let Some(c) = &a.config {
        manifest.input(c).map_err(|e| CliError::io(c, e))?;
    }
    emit(&a.out, "spans.jsonl", &mut manifest, |w| {
        write_spans(w, scenario.spans())
    })?;
    emit(&a.out, "alarms.jsonl", &mut manifest, |w| {
        write_alarms(w, &scenario.alarms)
    })?;
    emit(&a.out, "ground_truth.jsonl", &mut manifest, |w| {
        write_jsonl(w, scenario.ground_truth())
    })?;
    let m = finish_manifest(&a.out, manifest)?;
    let anomalous = scenario.ground_truth().filter(|g| g.anomalous).count();
    println!(
        "generated {} traces ({} anomalous), {} alarms -> {} [digest {}]",
        scenario.traces.len(),
        anomalous,
        scenario.alarms.len(),
        a.out.display(),
        &m.digest[..16]
    );
    Ok(())
}

fn load_traces(path: &Path, skip_malformed: bool) -> Result<Vec<Trace>, CliError> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let parsed = parse_trace_stream(BufReader::new(file)).map_err(|e| CliError::io(path, e))?;
    if let Some(first) = parsed.diagnostics.first() {
        if !skip_malformed {
            return Err(CliError::Data(format!(
                "{}: {first} ({} problem(s) in total)",
                path.display(),
                parsed.diagnostics.len()
            )));
        }
        for d in &parsed.diagnostics {
            eprintln!("warning: {}: {d}", path.display());
        }
    }
    Ok(parsed.traces)
}

fn read_error(path: &Path, e: ReadError) -> CliError {
    match e {
        ReadError::Io(e) => CliError::io(path, e),
        ReadError::Malformed { .. } => CliError::Data(format!("{}: {e}", path.display())),
    }
}

fn load_alarms(path: Option<&Path>) -> Result<AlarmFeed, CliError> {
    let Some(path) = path else {
        return Ok(AlarmFeed::default());
    };
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    read_alarms(BufReader::new(file)).map_err(|e| read_error(path, e))
}

/// Resolves the sampler config: defaults, then the config file, then flags.
fn sampler_config(a: &SamplerArgs, file: &FileConfig) -> Result<SamplerConfig, CliError> {
    let mut cfg = file.sampler;
    match (a.rate, &a.config) {
        (Some(r), _) => cfg.allocator.base_budget_fraction = r,
        (None, Some(_)) => {}
        (None, None) => {
            return Err(CliError::Usage(
                "--rate is required without a config file".into(),
            ))
        }
    }
    if let Some(s) = a.window_secs {
        cfg.window_ns = s.saturating_mul(1_000_000_000);
    }
    if let Some(e) = a.epsilon {
        cfg.selector.epsilon = e;
    }
    if a.no_cache {
        cfg.selector.use_cache = false;
    }
    if a.no_traffic_scaling {
        cfg.allocator.traffic_scaling = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn record_inputs(manifest: &mut ManifestBuilder, paths: &[Option<&Path>]) -> Result<(), CliError> {
    for p in paths.iter().flatten() {
        manifest.input(p).map_err(|e| CliError::io(p, e))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct WindowSummary {
    window: u64,
    window_start_ns: u64,
    window_end_ns: u64,
    traces: usize,
    budget: u64,
    scale: f64,
    selected: usize,
    unspent: u64,
}

#[derive(Serialize)]
struct CacheSummary {
    enabled: bool,
    hits: u64,
    misses: u64,
    hit_rate: f64,
}

#[derive(Serialize)]
struct SampleSummary {
    traces: usize,
    selected: usize,
    unspent: u64,
    actual_rate: f64,
    cache: CacheSummary,
    windows: Vec<WindowSummary>,
}

fn summarize(run: &SampleRun, cache_enabled: bool) -> SampleSummary {
    let traces = run.trace_count();
    let selected = run.windows.iter().map(|w| w.selected.len()).sum();
    SampleSummary {
        traces,
        selected,
        unspent: run.windows.iter().map(|w| w.unspent).sum(),
        actual_rate: if traces == 0 {
            0.0
        } else {
            selected as f64 / traces as f64
        },
        cache: CacheSummary {
            enabled: cache_enabled,
            hits: run.cache.hits,
            misses: run.cache.misses,
            hit_rate: run.cache.hit_rate,
        },
        windows: run
            .windows
            .iter()
            .map(|w| WindowSummary {
                window: w.window,
                window_start_ns: w.window_start,
                window_end_ns: w.window_end,
                traces: w.trace_count,
                budget: w.plan.total,
                scale: w.plan.scale,
                selected: w.selected.len(),
                unspent: w.unspent,
            })
            .collect(),
    }
}

#[derive(Serialize)]
struct WindowTiming {
    window: u64,
    encode_ns: u64,
    allocate_ns: u64,
    select_ns: u64,
}

#[derive(Serialize)]
struct TimingReport {
    runs: usize,
    runtime_per_trace: Option<epsample_core::pipeline::RuntimeStats>,
    windows: Vec<WindowTiming>,
}

fn timing_report(runs: &[SampleRun]) -> TimingReport {
    let all: Vec<_> = runs
        .iter()
        .flat_map(|r| r.windows.iter().cloned())
        .collect();
    TimingReport {
        runs: runs.len(),
        runtime_per_trace: runtime_over(&all),
        windows: runs
            .last()
            .map(|r| {
                r.windows
                    .iter()
                    .map(|w| WindowTiming {
                        window: w.window,
                        encode_ns: w.timing.encode_ns,
                        allocate_ns: w.timing.allocate_ns,
                        select_ns: w.timing.select_ns,
                    })
                    .collect()
            })
            .unwrap_or_default(),
    }
}

fn sample_bytes(run: &SampleRun) -> Vec<u8> {
    let mut buf = Vec::new();
    for w in &run.windows {
        write_jsonl(&mut buf, sample_records(w)).expect("writing to memory");
    }
    buf
}

fn cmd_sample(a: SampleArgs) -> Result<(), CliError> {
    let file = FileConfig::load(a.sampler.config.as_deref())?;
    let cfg = sampler_config(&a.sampler, &file)?;
    let traces = load_traces(&a.sampler.traces, a.sampler.skip_malformed)?;
    let alarms = load_alarms(a.sampler.alarms.as_deref())?;

    let mut manifest = ManifestBuilder::new("sample", None, to_value(&cfg));
    record_inputs(
        &mut manifest,
        &[
            Some(&a.sampler.traces),
            a.sampler.alarms.as_deref(),
            a.sampler.config.as_deref(),
        ],
    )?;
    let run = run_sampler(&traces, &alarms, cfg, a.passthrough)?;

    let bytes = sample_bytes(&run);
    emit(&a.out, "sample.jsonl", &mut manifest, |w| {
        w.write_all(&bytes)
    })?;
    let summary = summarize(&run, cfg.selector.use_cache);
    emit(&a.out, "summary.json", &mut manifest, |w| {
        write_json(w, &summary)
    })?;
    if a.passthrough {
        emit(&a.out, "sampled_spans.jsonl", &mut manifest, |w| {
            write_spans(w, run.retained.iter().flat_map(|t| t.spans.iter()))
        })?;
    }
    if a.debug {
        emit(&a.out, "quota.jsonl", &mut manifest, |w| {
            write_jsonl(w, run.windows.iter().flat_map(quota_records))
        })?;
        emit(&a.out, "selection.jsonl", &mut manifest, |w| {
            write_jsonl(w, run.windows.iter().flat_map(selection_records))
        })?;
        emit(&a.out, "templates.jsonl", &mut manifest, |w| {
            write_jsonl(
                w,
                run.templates.iter().map(|(id, t)| TemplateRecord {
                    template_id: *id,
                    template: t.clone(),
                }),
            )
        })?;
        let encoded = epsample_core::pipeline::encode_corpus(&traces, &cfg.anomaly, cfg.window_ns);
        emit(&a.out, "encoded.jsonl", &mut manifest, |w| {
            write_jsonl(w, encoded.iter().map(EncodedRecord::from))
        })?;
    }
    let timing = timing_report(std::slice::from_ref(&run));
    emit_timing(&a.out, "timing.json", &mut manifest, &timing)?;
    let m = finish_manifest(&a.out, manifest)?;
    println!(
        "sampled {} of {} traces over {} windows (rate {:.4}, unspent {}) -> {} [digest {}]",
        summary.selected,
        summary.traces,
        run.windows.len(),
        summary.actual_rate,
        summary.unspent,
        a.out.display(),
        &m.digest[..16]
    );
    Ok(())
}

#[derive(Deserialize)]
struct SampledId {
    trace_id: String,
}

#[derive(Serialize)]
struct NamedReport {
    name: String,
    sampler: String,
    rate: f64,
    seed: Option<u64>,
    report: MetricsReport,
}

#[derive(Serialize)]
struct EvaluationOutput<'a> {
    config: &'a serde_json::Value,
    corpus_size: usize,
    corpus_patterns: usize,
    corpus_paths: usize,
    corpus_endpoints: usize,
    rare_max: u64,
    reports: &'a [NamedReport],
}

fn parse_baseline(spec: &str) -> Result<(u64, Option<f64>), CliError> {
    let mut seed = None;
    let mut rate = None;
    for part in spec.split(',') {
        let bad = || {
            CliError::Usage(format!(
                "bad --baseline-random {spec:?}; expected seed=N[,rate=R]"
            ))
        };
        match part.split_once('=') {
            Some(("seed", v)) => seed = Some(v.parse().map_err(|_| bad())?),
            Some(("rate", v)) => rate = Some(v.parse().map_err(|_| bad())?),
            _ => return Err(bad()),
        }
    }
    let seed =
        seed.ok_or_else(|| CliError::Usage(format!("--baseline-random {spec:?} needs a seed")))?;
    Ok((seed, rate))
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn metrics_csv(reports: &[NamedReport]) -> String {
    let mut out = String::from(
        "name,sampler,rate,seed,api_coverage,path_coverage,pattern_coverage,shannon_entropy_bits,\
         proportion_anomaly,proportion_anomaly_labels,proportion_rare,bcr,actual_rate,sample_size,corpus_size\n",
    );
    for r in reports {
        let m = &r.report;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            csv_field(&r.name),
            r.sampler,
            r.rate,
            r.seed.map(|s| s.to_string()).unwrap_or_default(),
            m.api_coverage,
            m.path_coverage,
            m.pattern_coverage,
            m.shannon_entropy_bits,
            m.proportion_anomaly,
            opt(m.proportion_anomaly_labels),
            m.proportion_rare,
            m.bcr,
            m.actual_rate,
            m.sample_size,
            m.corpus_size
        );
    }
    out
}

fn metrics_table(reports: &[NamedReport]) -> String {
    let header = [
        "name", "n", "api", "path", "pattern", "entropy", "anomaly", "labels", "rare", "bcr",
        "rate",
    ];
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            let m = &r.report;
            vec![
                r.name.clone(),
                m.sample_size.to_string(),
                format!("{:.4}", m.api_coverage),
                format!("{:.4}", m.path_coverage),
                format!("{:.4}", m.pattern_coverage),
                format!("{:.4}", m.shannon_entropy_bits),
                format!("{:.4}", m.proportion_anomaly),
                m.proportion_anomaly_labels
                    .map(|x| format!("{x:.4}"))
                    .unwrap_or_else(|| "-".into()),
                format!("{:.4}", m.proportion_rare),
                format!("{:.4}", m.bcr),
                format!("{:.4}", m.actual_rate),
            ]
        })
        .collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|c| {
            rows.iter()
                .map(|r| r[c].len())
                .chain([header[c].len()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    let line = |cells: Vec<&str>, out: &mut String| {
        let parts: Vec<String> = cells
            .iter()
            .enumerate()
            .map(|(c, s)| {
                if c == 0 {
                    format!("{s:<w$}", w = widths[c])
                } else {
                    format!("{s:>w$}", w = widths[c])
                }
            })
            .collect();
        out.push_str(parts.join("  ").trim_end());
        out.push('\n');
    };
    line(header.to_vec(), &mut out);
    for r in &rows {
        line(r.iter().map(String::as_str).collect(), &mut out);
    }
    out
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<(), CliError> {
    if a.samples.is_empty() && a.baseline_random.is_empty() {
        return Err(CliError::Usage(
            "give at least one --sample or --baseline-random".into(),
        ));
    }
    let baselines = a
        .baseline_random
        .iter()
        .map(|s| parse_baseline(s))
        .collect::<Result<Vec<_>, _>>()?;
    let file = FileConfig::load(a.config.as_deref())?;
    let sampler_cfg = file.sampler;
    sampler_cfg.validate()?;
    let rare_max = a.rare_max.or(file.evaluation.rare_max);

    let traces = load_traces(&a.traces, false)?;
    let labels: Option<HashMap<String, bool>> = match &a.ground_truth {
        Some(p) => {
            let f = File::open(p).map_err(|e| CliError::io(p, e))?;
            let truth: Vec<GroundTruth> =
                read_jsonl(BufReader::new(f)).map_err(|e| read_error(p, e))?;
            Some(
                truth
                    .into_iter()
                    .map(|g| (g.trace_id, g.anomalous))
                    .collect(),
            )
        }
        None => None,
    };
    let (index, _) = build_index(
        &traces,
        &sampler_cfg.anomaly,
        sampler_cfg.window_ns,
        labels.as_ref(),
        rare_max,
    )
    .map_err(|e| CliError::Data(format!("{}: {e}", a.traces.display())))?;

    let config = serde_json::json!({
        "anomaly": sampler_cfg.anomaly,
        "window_ns": sampler_cfg.window_ns,
        "rare_max": rare_max,
        "baselines": a.baseline_random,
    });
    let mut manifest =
        ManifestBuilder::new("evaluate", baselines.first().map(|b| b.0), config.clone());
    let mut inputs: Vec<Option<&Path>> = vec![
        Some(&a.traces),
        a.ground_truth.as_deref(),
        a.config.as_deref(),
    ];
    inputs.extend(a.samples.iter().map(|p| Some(p.as_path())));
    record_inputs(&mut manifest, &inputs)?;

    let mut reports = Vec::new();
    for path in &a.samples {
        let f = File::open(path).map_err(|e| CliError::io(path, e))?;
        let ids: Vec<SampledId> = read_jsonl(BufReader::new(f)).map_err(|e| read_error(path, e))?;
        let ids: Vec<String> = ids.into_iter().map(|s| s.trace_id).collect();
        let report = compute_metrics(&index, &ids)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let parent = path
            .parent()
            .and_then(|p| p.file_name())
            .map(|s| format!("{}/", s.to_string_lossy()))
            .unwrap_or_default();
        reports.push(NamedReport {
            name: format!("{parent}{name}"),
            sampler: "file".into(),
            rate: report.actual_rate,
            seed: None,
            report,
        });
    }
    let ids: Vec<&str> = index.trace_ids().collect();
    for (seed, rate) in baselines {
        let rate = rate
            .or_else(|| reports.first().map(|r| r.report.actual_rate))
            .ok_or_else(|| {
                CliError::Usage("--baseline-random needs rate=R when no --sample is given".into())
            })?;
        if !(rate > 0.0 && rate <= 1.0) {
            return Err(CliError::Usage(format!(
                "baseline rate {rate} must lie in (0, 1]"
            )));
        }
        let picked: Vec<&str> = random_sample(ids.len(), rate, seed)
            .into_iter()
            .map(|i| ids[i])
            .collect();
        let report = compute_metrics(&index, &picked).map_err(|e| CliError::Data(e.to_string()))?;
        reports.push(NamedReport {
            name: format!("random(seed={seed})"),
            sampler: "random".into(),
            rate,
            seed: Some(seed),
            report,
        });
    }

    let output = EvaluationOutput {
        config: &config,
        corpus_size: index.len(),
        corpus_patterns: index.pattern_count(),
        corpus_paths: index.path_count(),
        corpus_endpoints: index.endpoint_count(),
        rare_max: index.rare_max(),
        reports: &reports,
    };
    emit(&a.out, "metrics.json", &mut manifest, |w| {
        write_json(w, &output)
    })?;
    let csv = metrics_csv(&reports);
    emit(&a.out, "metrics.csv", &mut manifest, |w| {
        w.write_all(csv.as_bytes())
    })?;
    let table = metrics_table(&reports);
    emit(&a.out, "metrics.txt", &mut manifest, |w| {
        w.write_all(table.as_bytes())
    })?;
    finish_manifest(&a.out, manifest)?;
    print!("{table}");
    Ok(())
}

#[derive(Serialize)]
struct BenchOutput {
    traces: usize,
    selected: usize,
    sample_sha256: String,
    cache: CacheSummary,
}

fn cmd_bench(a: BenchArgs) -> Result<(), CliError> {
    if a.repeat == 0 {
        return Err(CliError::Usage("--repeat must be at least 1".into()));
    }
    let file = FileConfig::load(a.sampler.config.as_deref())?;
    let cfg = sampler_config(&a.sampler, &file)?;
    let traces = load_traces(&a.sampler.traces, a.sampler.skip_malformed)?;
    let alarms = load_alarms(a.sampler.alarms.as_deref())?;
    let mut runs = Vec::with_capacity(a.repeat);
    for _ in 0..a.repeat {
        runs.push(run_sampler(&traces, &alarms, cfg, false)?);
    }
    let last = runs.last().expect("at least one run");
    let summary = summarize(last, cfg.selector.use_cache);
    let bench = BenchOutput {
        traces: summary.traces,
        selected: summary.selected,
        sample_sha256: sha256_hex(&sample_bytes(last)),
        cache: summary.cache,
    };
    let timing = timing_report(&runs);
    if let Some(rt) = timing.runtime_per_trace {
        println!(
            "per-trace runtime over {} run(s): mean {:.4} ms, p50 {:.4} ms, p99 {:.4} ms",
            a.repeat, rt.mean_ms, rt.p50_ms, rt.p99_ms
        );
    }
    println!(
        "cache {}: hit rate {:.4} ({} hits, {} misses)",
        if bench.cache.enabled { "on" } else { "off" },
        bench.cache.hit_rate,
        bench.cache.hits,
        bench.cache.misses
    );
    println!(
        "sample digest {} ({} of {} traces)",
        bench.sample_sha256, bench.selected, bench.traces
    );
    if let Some(out) = &a.out {
        let mut manifest = ManifestBuilder::new("bench", None, to_value(&cfg));
        record_inputs(
            &mut manifest,
            &[
                Some(&a.sampler.traces),
                a.sampler.alarms.as_deref(),
                a.sampler.config.as_deref(),
            ],
        )?;
        emit(out, "bench.json", &mut manifest, |w| write_json(w, &bench))?;
        emit_timing(out, "timing.json", &mut manifest, &timing)?;
        finish_manifest(out, manifest)?;
    }
    Ok(())
}
