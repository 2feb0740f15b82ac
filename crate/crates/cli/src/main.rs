//! `acoustic`: batch driver for histogram compression, detection, simulation
//! and evaluation.
//!
//! Every flag can also be set through an environment variable named
//! `ACOUSTIC_` plus the flag name in upper case, e.g. `ACOUSTIC_PCA_K=3`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use acoustic_core::detect::{PeriodLabel, RainParams};
use acoustic_core::eval::{self, AblationRow};
use acoustic_core::hcluster::Linkage;
use acoustic_core::histo::windowize;
use acoustic_core::io;
use acoustic_core::par::Exec;
use acoustic_core::pipeline::{self, BetaMode, DetectConfig, Variant};
use acoustic_core::synth::{self, SynthConfig};
use anyhow::{anyhow, bail, Context};
use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

#[derive(Parser, Debug)]
#[command(name = "acoustic", version, about = "Ambient sound histogram analytics")]
struct Cli {
    /// Worker threads; 0 uses one per core.
    #[arg(long, global = true, env = "ACOUSTIC_WORKERS", default_value_t = 0)]
    workers: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Bin raw 10 Hz samples (CSV `ts,node_id,value`) into 5-minute window records.
    Compress {
        #[arg(long, env = "ACOUSTIC_INPUT")]
        input: PathBuf,
        #[arg(long, env = "ACOUSTIC_OUTPUT")]
        output: PathBuf,
    },
    /// Label periods, score windows and estimate rain.
    Detect {
        #[arg(long, env = "ACOUSTIC_INPUT")]
        input: PathBuf,
        /// Receives results.jsonl, rain.csv, qq.csv and meta.json.
        #[arg(long, env = "ACOUSTIC_OUTPUT_DIR")]
        output_dir: PathBuf,
        /// Reject the whole input on the first malformed line.
        #[arg(long, env = "ACOUSTIC_STRICT")]
        strict: bool,
        /// Droplet-sensor CSV (`ts,node_id,value`) to list next to the estimated rain.
        #[arg(long, env = "ACOUSTIC_RAIN_REFERENCE")]
        rain_reference: Option<PathBuf>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Write a seeded synthetic deployment with ground truth.
    Simulate {
        /// Receives windows.jsonl, truth.csv and meta.json.
        #[arg(long, env = "ACOUSTIC_OUTPUT_DIR")]
        output_dir: PathBuf,
        #[arg(long, env = "ACOUSTIC_SEED", default_value_t = synth::BENCHMARK_SEED)]
        seed: u64,
        #[arg(long, env = "ACOUSTIC_NODES", default_value_t = 7)]
        nodes: usize,
        #[arg(long, env = "ACOUSTIC_DAYS", default_value_t = 14)]
        days: usize,
        #[arg(long, env = "ACOUSTIC_START_DATE", default_value = "2016-07-01")]
        start_date: NaiveDate,
        /// Also write the raw samples of one node-day (`node:day`, 1-based node id, 0-based day) as raw.csv.
        #[arg(long, env = "ACOUSTIC_RAW_NODE_DAY")]
        raw_node_day: Option<String>,
    },
    /// Compare detections with ground truth at the point-of-interest level.
    Evaluate {
        #[arg(long, env = "ACOUSTIC_TRUTH")]
        truth: PathBuf,
        /// Existing detection output, as `variant=results.jsonl`; repeatable.
        #[arg(long = "results", value_name = "TAG=PATH")]
        results: Vec<String>,
        /// Window records to run the listed variants on.
        #[arg(long, env = "ACOUSTIC_WINDOWS", conflicts_with = "results")]
        windows: Option<PathBuf>,
        #[arg(long, env = "ACOUSTIC_VARIANTS", value_delimiter = ',', default_value = "raw,raw+WT,raw+PCA,raw+PCA+WT")]
        variants: Vec<Variant>,
        /// Confusion CSV.
        #[arg(long, env = "ACOUSTIC_OUTPUT")]
        output: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum BetaModeArg {
    Quantile,
    Fixed,
}

#[derive(Args, Debug, Clone)]
struct RunArgs {
    #[arg(long, env = "ACOUSTIC_VARIANT", default_value = "raw+PCA+WT")]
    variant: Variant,
    #[arg(long, env = "ACOUSTIC_K_CLUSTERS", default_value_t = 3)]
    k_clusters: usize,
    #[arg(long, env = "ACOUSTIC_PCA_K", default_value_t = 4)]
    pca_k: usize,
    #[arg(long, env = "ACOUSTIC_BETA_MODE", value_enum, default_value_t = BetaModeArg::Quantile)]
    beta_mode: BetaModeArg,
    /// Probability for the quantile mode.
    #[arg(long, env = "ACOUSTIC_BETA_QUANTILE", default_value_t = 0.975)]
    beta_quantile: f64,
    /// Threshold for the fixed mode.
    #[arg(long, env = "ACOUSTIC_BETA_FIXED", required_if_eq("beta_mode", "fixed"))]
    beta_fixed: Option<f64>,
    #[arg(long, env = "ACOUSTIC_RAIN_QUORUM", default_value_t = 0.8)]
    rain_quorum: f64,
    #[arg(long, env = "ACOUSTIC_RAIN_MIN_DURATION", default_value_t = 15)]
    rain_min_duration: i64,
    /// Intensity proxy a window needs before it can count as rain.
    #[arg(long, env = "ACOUSTIC_RAIN_MIN_PROXY", default_value_t = 50.0)]
    rain_min_proxy: f64,
    #[arg(long, env = "ACOUSTIC_LINKAGES", value_delimiter = ',', default_value = "single,complete,average,ward")]
    linkages: Vec<Linkage>,
    #[arg(long, env = "ACOUSTIC_MIN_PERIOD_WINDOWS", default_value_t = 12)]
    min_period_windows: usize,
}

impl RunArgs {
    fn config(&self) -> anyhow::Result<DetectConfig> {
        let beta = match self.beta_mode {
            BetaModeArg::Quantile => BetaMode::Quantile(self.beta_quantile),
            BetaModeArg::Fixed => BetaMode::Fixed(self.beta_fixed.ok_or_else(|| anyhow!("--beta-fixed is required"))?),
        };
        let cfg = DetectConfig {
            variant: self.variant,
            k_clusters: self.k_clusters,
            pca_k: self.pca_k,
            beta,
            rain: RainParams {
                quorum: self.rain_quorum,
                min_duration_minutes: self.rain_min_duration,
                min_proxy: self.rain_min_proxy,
            },
            linkages: self.linkages.clone(),
            min_period_windows: self.min_period_windows,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Write through a temporary file in the target directory, then rename.
fn write_atomic(path: &Path, f: impl FnOnce(&mut dyn Write) -> anyhow::Result<()>) -> anyhow::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut builder = tempfile::Builder::new();
    builder.prefix(".acoustic");
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        builder.permissions(std::fs::Permissions::from_mode(0o644));
    }
    let tmp = builder
        .tempfile_in(dir)
        .with_context(|| format!("temp file in {}", dir.display()))?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        f(&mut w)?;
        w.flush()?;
    }
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n")?;
        Ok(())
    })
}

fn open(path: &Path) -> anyhow::Result<File> {
    File::open(path).with_context(|| format!("opening {}", path.display()))
}

/// Problems that do not stop a run but make it unsuccessful.
#[derive(Default)]
struct Report {
    errors: Vec<serde_json::Value>,
}

impl Report {
    fn push(&mut self, kind: &str, message: String) {
        self.errors.push(json!({ "kind": kind, "message": message }));
    }
}

fn compress(input: &Path, output: &Path) -> anyhow::Result<Report> {
    let nodes = io::read_raw_samples(open(input)?).with_context(|| format!("reading {}", input.display()))?;
    let mut windows = Vec::new();
    for (node, samples) in &nodes {
        windows.extend(windowize(samples, node).with_context(|| format!("node {node}"))?);
    }
    write_atomic(output, |w| Ok(io::write_windows(w, &windows)?))?;
    eprintln!("{} windows from {} nodes", windows.len(), nodes.len());
    Ok(Report::default())
}

fn read_windows(path: &Path, strict: bool, report: &mut Report) -> anyhow::Result<Vec<acoustic_core::SensorWindow>> {
    let read = io::read_windows(BufReader::new(open(path)?), strict).with_context(|| format!("reading {}", path.display()))?;
    for e in read.errors {
        report.push(error_kind(&e), format!("{}: {e}", path.display()));
    }
    Ok(read.windows)
}

fn detect(
    input: &Path,
    out_dir: &Path,
    strict: bool,
    rain_reference: Option<&Path>,
    run: &RunArgs,
) -> anyhow::Result<Report> {
    let cfg = run.config()?;
    let mut report = Report::default();
    let windows = read_windows(input, strict, &mut report)?;
    if windows.is_empty() {
        bail!("{} holds no window records", input.display());
    }
    let out = pipeline::detect(&windows, &cfg, Exec::Parallel)?;
    for e in &out.failures {
        report.push(error_kind(e), e.to_string());
    }

    let records = out.records();
    let rain = out.rain_intervals();
    write_atomic(&out_dir.join("results.jsonl"), |w| Ok(io::write_results(w, &records)?))?;
    write_atomic(&out_dir.join("rain.csv"), |w| Ok(io::write_rain_csv(w, &rain)?))?;
    write_atomic(&out_dir.join("qq.csv"), |w| Ok(io::write_qq_csv(w, &out.days)?))?;
    if let Some(path) = rain_reference {
        let readings = io::read_raw_samples(open(path)?).with_context(|| format!("reading {}", path.display()))?;
        write_atomic(&out_dir.join("rain_reference.csv"), |w| {
            Ok(io::write_rain_reference_csv(w, &readings, &rain)?)
        })?;
    }

    let per_period = |p: PeriodLabel| records.iter().filter(|r| r.period == p).count();
    let days: Vec<_> = out
        .days
        .iter()
        .map(|d| {
            json!({
                "node_id": d.node_id,
                "date": d.date,
                "linkage": d.linkage,
                "ccc": d.ccc,
                "beta": d.beta,
                "dof": d.dof,
                "windows": d.window_starts.len(),
                "active": d.activity.iter().filter(|a| a.active).count(),
            })
        })
        .collect();
    let meta = json!({
        "command": "detect",
        "input": input,
        "config": cfg,
        "strict": strict,
        "counts": {
            "windows": records.len(),
            "active": records.iter().filter(|r| r.active == 1).count(),
            "suppressed_by_rain": records.iter().filter(|r| r.suppressed_by_rain).count(),
            "rain_intervals": rain.len(),
            "periods": {
                "NP": per_period(PeriodLabel::Np),
                "AP": per_period(PeriodLabel::Ap),
                "RP": per_period(PeriodLabel::Rp),
            },
        },
        "node_days": days,
        "rain_skipped": out.rain_skipped,
        "errors": report.errors,
    });
    write_json(&out_dir.join("meta.json"), &meta)?;
    eprintln!(
        "{} windows, {} active, {} rain intervals",
        records.len(),
        records.iter().filter(|r| r.active == 1).count(),
        rain.len()
    );
    Ok(report)
}

fn parse_node_day(s: &str, cfg: &SynthConfig) -> anyhow::Result<(usize, usize)> {
    let (node, day) = s
        .split_once(':')
        .ok_or_else(|| anyhow!("--raw-node-day expects node:day, got '{s}'"))?;
    let node: usize = node.trim().parse().context("node id")?;
    let day: usize = day.trim().parse().context("day index")?;
    if node == 0 || node > cfg.node_count || day >= cfg.days {
        bail!("--raw-node-day {s} outside {} nodes x {} days", cfg.node_count, cfg.days);
    }
    Ok((node - 1, day))
}

fn simulate(
    out_dir: &Path,
    seed: u64,
    nodes: usize,
    days: usize,
    start_date: NaiveDate,
    raw_node_day: Option<&str>,
) -> anyhow::Result<Report> {
    let cfg = SynthConfig {
        node_count: nodes,
        days,
        seed,
        start_date,
        ..SynthConfig::default()
    };
    let raw = raw_node_day.map(|s| parse_node_day(s, &cfg)).transpose()?;
    let ds = synth::generate_synthetic_with(&cfg, Exec::Parallel)?;
    write_atomic(&out_dir.join("windows.jsonl"), |w| Ok(io::write_windows(w, &ds.windows)?))?;
    write_atomic(&out_dir.join("truth.csv"), |w| Ok(io::write_truth_csv(w, &ds.truth)?))?;
    if let Some((node, day)) = raw {
        let samples = synth::node_day_stream_samples(&cfg, &ds.schedule, node, day);
        write_atomic(&out_dir.join("raw.csv"), |w| {
            Ok(io::write_raw_samples(w, &cfg.node_id(node), &samples)?)
        })?;
    }
    let rain: Vec<_> = ds
        .rain_truth()
        .iter()
        .map(|(start, end)| json!({ "start": io::format_ts(*start), "end": io::format_ts(*end) }))
        .collect();
    let meta = json!({
        "command": "simulate",
        "config": cfg,
        "counts": {
            "windows": ds.windows.len(),
            "bursts": ds.schedule.bursts.len(),
            "rain_segments": ds.schedule.rain.len(),
        },
        "rain": rain,
    });
    write_json(&out_dir.join("meta.json"), &meta)?;
    eprintln!("{} windows, {} bursts, {} rain segments", ds.windows.len(), ds.schedule.bursts.len(), ds.schedule.rain.len());
    Ok(Report::default())
}

fn evaluate(
    truth_path: &Path,
    results: &[String],
    windows: Option<&Path>,
    variants: &[Variant],
    output: &Path,
    run: &RunArgs,
) -> anyhow::Result<Report> {
    let truth = io::read_truth_csv(open(truth_path)?).with_context(|| format!("reading {}", truth_path.display()))?;
    let mut report = Report::default();
    let rows: Vec<AblationRow> = match windows {
        Some(path) => {
            let base = run.config()?;
            let windows = read_windows(path, true, &mut report)?;
            eval::run_ablation(&windows, &truth, variants, &base, Exec::Parallel)
        }
        None => {
            if results.is_empty() {
                bail!("evaluate needs --windows or at least one --results TAG=PATH");
            }
            results
                .iter()
                .map(|spec| {
                    let (tag, path) = spec
                        .split_once('=')
                        .ok_or_else(|| anyhow!("--results expects TAG=PATH, got '{spec}'"))?;
                    let variant: Variant = tag.parse()?;
                    let records = io::read_results(BufReader::new(open(Path::new(path))?))
                        .with_context(|| format!("reading {path}"))?;
                    Ok(AblationRow {
                        variant,
                        stats: eval::evaluate_records(&records, &truth),
                    })
                })
                .collect::<anyhow::Result<_>>()?
        }
    };
    for r in &rows {
        match &r.stats {
            Ok(s) => eprintln!(
                "{:<11} {:>5.1} {:>5.1} {:>5.1}",
                r.variant.tag(),
                s.true_detected_pct,
                s.false_positive_pct,
                s.false_negative_pct
            ),
            Err(e) => report.push(error_kind(e), format!("variant {}: {e}", r.variant)),
        }
    }
    write_atomic(output, |w| Ok(io::write_confusion_csv(w, &io::ablation_rows(&rows))?))?;
    Ok(report)
}

fn error_kind(e: &acoustic_core::Error) -> &'static str {
    use acoustic_core::Error as E;
    match e {
        E::IntensityOutOfRange(_) | E::Domain(_) | E::Shape { .. } | E::NonFinite => "domain",
        E::EmptyWindow | E::InsufficientData { .. } | E::InsufficientSensors(_) => "insufficient_data",
        E::Unordered { .. } | E::Misaligned(_) => "ordering",
        E::DegenerateComponent(_) | E::UndefinedCcc(_) => "degenerate",
        E::Config(_) => "config",
        E::Schema { .. } => "schema",
        E::Parse { .. } | E::Csv(_) | E::Json(_) => "parse",
        E::NodeDay { source, .. } => error_kind(source),
        E::Io { .. } => "io",
    }
}

fn anyhow_kind(e: &anyhow::Error) -> &'static str {
    e.chain()
        .find_map(|c| c.downcast_ref::<acoustic_core::Error>().map(error_kind))
        .or_else(|| e.chain().find_map(|c| c.downcast_ref::<std::io::Error>().map(|_| "io")))
        .unwrap_or("usage")
}

fn run(cli: Cli) -> anyhow::Result<Report> {
    match cli.command {
        Command::Compress { input, output } => compress(&input, &output),
        Command::Detect {
            input,
            output_dir,
            strict,
            rain_reference,
            run,
        } => detect(&input, &output_dir, strict, rain_reference.as_deref(), &run),
        Command::Simulate {
            output_dir,
            seed,
            nodes,
            days,
            start_date,
            raw_node_day,
        } => simulate(&output_dir, seed, nodes, days, start_date, raw_node_day.as_deref()),
        Command::Evaluate {
            truth,
            results,
            windows,
            variants,
            output,
            run,
        } => evaluate(&truth, &results, windows.as_deref(), &variants, &output, &run),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cli.workers).build();
    let outcome = match pool {
        Ok(pool) => pool.install(|| run(cli)),
        Err(e) => Err(anyhow!(e).context("starting worker pool")),
    };
    let summary = match outcome {
        Ok(report) if report.errors.is_empty() => return ExitCode::SUCCESS,
        Ok(report) => json!({ "status": "error", "errors": report.errors }),
        Err(e) => json!({
            "status": "error",
            "errors": [{ "kind": anyhow_kind(&e), "message": format!("{e:#}") }],
        }),
    };
    eprintln!("{summary}");
    ExitCode::FAILURE
}
