//! Command-line surface: validate, run, detect and report.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::detection::{analyze, DetectionReport};
use crate::dv::DvTable;
use crate::engine::Simulator;
use crate::error::{Error, Result};
use crate::metrics::{run_metrics, RunMetrics};
use crate::scenario::{validate_scenario, Scenario, ScenarioFile};
use crate::trace::Trace;

pub const TRACE_FILE: &str = "trace.jsonl";
pub const METRICS_FILE: &str = "metrics.json";
pub const DETECTION_FILE: &str = "detection.json";
pub const SCENARIO_FILE: &str = "scenario.json";
pub const TABLES_FILE: &str = "dv_tables.json";

#[derive(Debug, Parser)]
#[command(name = "wormsim", version, about = "Wormhole attack simulator for ad hoc routing")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a scenario file and list every problem found.
    Validate { input: PathBuf },
    /// Simulate a scenario and write trace, metrics and detection report.
    Run {
        input: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-run detection over a finished run directory.
    Detect {
        run_dir: PathBuf,
        /// Exit with status 2 when any alarm fires.
        #[arg(long)]
        strict: bool,
    },
    /// Compare metrics across run directories.
    Report { run_dirs: Vec<PathBuf> },
}

/// Everything one run produces.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub trace: Trace,
    pub metrics: RunMetrics,
    pub detection: DetectionReport,
    pub dv_tables: Option<Vec<DvTable>>,
}

/// Simulates `scenario` and derives metrics and detection from its trace.
pub fn simulate(scenario: &Scenario, seed: u64) -> RunArtifacts {
    let out = Simulator::new(scenario, seed).run();
    let metrics = metrics_for(scenario, &out.trace);
    let detection = analyze(&out.trace, &scenario.detection, scenario.graph.radio_range());
    let dv_tables = matches!(scenario.protocol, crate::scenario::ProtocolConfig::Dv(_)).then_some(out.dv_tables);
    RunArtifacts { trace: out.trace, metrics, detection, dv_tables }
}

pub fn metrics_for(scenario: &Scenario, trace: &Trace) -> RunMetrics {
    let pairs: Vec<_> = scenario.demands.iter().map(|d| (d.source, d.destination)).collect();
    run_metrics(trace, &scenario.malicious_nodes(), &pairs)
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

/// Writes a run directory. The stored scenario carries the effective seed.
pub fn write_run(dir: &Path, file: &ScenarioFile, artifacts: &RunArtifacts) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(SCENARIO_FILE), to_json(file)?)?;
    let mut trace = Vec::new();
    artifacts.trace.write_jsonl(&mut trace)?;
    fs::write(dir.join(TRACE_FILE), trace)?;
    fs::write(dir.join(METRICS_FILE), to_json(&artifacts.metrics)?)?;
    fs::write(dir.join(DETECTION_FILE), to_json(&artifacts.detection)?)?;
    if let Some(tables) = &artifacts.dv_tables {
        fs::write(dir.join(TABLES_FILE), to_json(tables)?)?;
    }
    Ok(())
}

fn issues_error(issues: &[crate::scenario::Issue]) -> Error {
    Error::Invalid(issues.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))
}

fn load_file(path: &Path) -> Result<(ScenarioFile, Scenario)> {
    let text = fs::read_to_string(path)?;
    let issues = validate_scenario(&text);
    if !issues.is_empty() {
        return Err(issues_error(&issues));
    }
    let file: ScenarioFile = serde_json::from_str(&text)?;
    let scenario = Scenario::from_file(&file).map_err(|i| issues_error(&i))?;
    Ok((file, scenario))
}

/// Reads a run directory back: stored scenario and trace.
pub fn load_run(dir: &Path) -> Result<(Scenario, Trace)> {
    let (_, scenario) = load_file(&dir.join(SCENARIO_FILE))?;
    let file = fs::File::open(dir.join(TRACE_FILE))?;
    let trace = Trace::read_jsonl(std::io::BufReader::new(file))?;
    Ok((scenario, trace))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ReportColumn {
    run: String,
    scenario: String,
    seed: u64,
    metrics: RunMetrics,
    alarms: usize,
    routes: Vec<String>,
}

fn column(dir: &Path) -> Result<ReportColumn> {
    let (scenario, trace) = load_run(dir)?;
    let metrics = metrics_for(&scenario, &trace);
    let detection = analyze(&trace, &scenario.detection, scenario.graph.radio_range());
    let g = &scenario.graph;
    let routes = metrics
        .demands
        .iter()
        .map(|d| {
            let hops = match (d.apparent_hops, d.actual_hops) {
                (Some(a), Some(b)) => format!("{a}/{b}"),
                _ => "-".into(),
            };
            format!("{}->{} {}", g.label(d.source), g.label(d.destination), hops)
        })
        .collect();
    Ok(ReportColumn {
        run: dir.display().to_string(),
        scenario: scenario.name.clone(),
        seed: scenario.seed,
        metrics,
        alarms: detection.alarms.len(),
        routes,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.3}"))
}

/// Renders the comparison table; unreadable directories are listed after it.
pub fn report(dirs: &[PathBuf]) -> String {
    let mut cols = Vec::new();
    let mut failed = Vec::new();
    for d in dirs {
        match column(d) {
            Ok(c) => cols.push(c),
            Err(e) => failed.push(format!("{}: {e}", d.display())),
        }
    }
    let mut rows: Vec<(String, Vec<String>)> = vec![
        ("run".into(), cols.iter().map(|c| c.run.clone()).collect()),
        ("scenario".into(), cols.iter().map(|c| c.scenario.clone()).collect()),
        ("seed".into(), cols.iter().map(|c| c.seed.to_string()).collect()),
        ("routes selected".into(), cols.iter().map(|c| c.metrics.routes_selected.to_string()).collect()),
        ("sinkhole fraction".into(), cols.iter().map(|c| fmt_opt(c.metrics.sinkhole_fraction)).collect()),
        ("mean hop distortion".into(), cols.iter().map(|c| fmt_opt(c.metrics.mean_hop_distortion)).collect()),
        ("delivery ratio".into(), cols.iter().map(|c| fmt_opt(c.metrics.delivery_ratio)).collect()),
        ("oscillations".into(), cols.iter().map(|c| c.metrics.oscillation_count.to_string()).collect()),
        ("rerr bursts".into(), cols.iter().map(|c| c.metrics.rerr_bursts.to_string()).collect()),
        ("alarms".into(), cols.iter().map(|c| c.alarms.to_string()).collect()),
    ];
    let demand_rows = cols.iter().map(|c| c.routes.len()).max().unwrap_or(0);
    for i in 0..demand_rows {
        rows.push((
            format!("demand {i} apparent/actual"),
            cols.iter().map(|c| c.routes.get(i).cloned().unwrap_or_default()).collect(),
        ));
    }
    let label_w = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0);
    let widths: Vec<usize> =
        (0..cols.len()).map(|j| rows.iter().map(|(_, v)| v[j].len()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for (label, values) in &rows {
        out.push_str(&format!("{label:<label_w$}"));
        for (v, w) in values.iter().zip(&widths) {
            out.push_str(&format!(" | {v:<w$}"));
        }
        out.push('\n');
    }
    for f in failed {
        out.push_str(&format!("unreadable: {f}\n"));
    }
    out
}

fn default_out(file: &ScenarioFile) -> PathBuf {
    PathBuf::from("runs").join(format!("{}-{}", file.name, file.seed))
}

/// Executes one command, writing human-readable output to `out`. Returns
/// the process exit code.
pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<i32> {
    match cli.command {
        Command::Validate { input } => {
            let text = fs::read_to_string(&input)?;
            let issues = validate_scenario(&text);
            if issues.is_empty() {
                writeln!(out, "ok")?;
                Ok(0)
            } else {
                for i in &issues {
                    writeln!(out, "{i}")?;
                }
                Ok(1)
            }
        }
        Command::Run { input, seed, out: dir } => {
            let (mut file, _) = load_file(&input)?;
            if let Some(s) = seed {
                file.seed = s;
            }
            let scenario = Scenario::from_file(&file).map_err(|i| issues_error(&i))?;
            let artifacts = simulate(&scenario, file.seed);
            let dir = dir.unwrap_or_else(|| default_out(&file));
            write_run(&dir, &file, &artifacts)?;
            writeln!(
                out,
                "{}: {} trace records, {} routes, {} alarms -> {}",
                file.name,
                artifacts.trace.len(),
                artifacts.metrics.routes_selected,
                artifacts.detection.alarms.len(),
                dir.display()
            )?;
            Ok(0)
        }
        Command::Detect { run_dir, strict } => {
            let (scenario, trace) = load_run(&run_dir)?;
            let report = analyze(&trace, &scenario.detection, scenario.graph.radio_range());
            fs::write(run_dir.join(DETECTION_FILE), to_json(&report)?)?;
            let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
            for a in &report.alarms {
                *counts.entry(a.rule.as_str()).or_default() += 1;
            }
            if counts.is_empty() {
                writeln!(out, "no alarms")?;
            }
            for (rule, n) in counts {
                writeln!(out, "{rule}: {n}")?;
            }
            Ok(if strict && !report.alarms.is_empty() { 2 } else { 0 })
        }
        Command::Report { run_dirs } => {
            if run_dirs.is_empty() {
                return Err(Error::Invalid("report needs at least one run directory".into()));
            }
            write!(out, "{}", report(&run_dirs))?;
            Ok(0)
        }
    }
}
