//! Command surface: run, compare, inspect-partition, plot and sweep.
//!
//! Each subcommand is a plain function returning [`Result`]; the binary only parses and dispatches.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{ConfigError, Error, Result};
use crate::orchestrator::{
    build_partition, load_datasets, run_with_reference, summary_csv, sweep_configs, Datasets, ExperimentConfig,
    ExperimentResult, ExperimentSummary, RoundLog,
};

pub const OUT_DIR_ENV: &str = "UAVFL_OUT_DIR";
pub const MANIFEST_SCHEMA: &str = "uavfl-manifest/v1";
pub const SERIES_SCHEMA: &str = "uavfl-series/v1";
pub const PARTITION_SCHEMA: &str = "uavfl-partition/v1";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const ROUNDS_FILE: &str = "rounds.jsonl";
pub const SUMMARY_FILE: &str = "summary.csv";

#[derive(Debug, Parser)]
#[command(name = "uavfl", version, about = "Reliable participant selection for UAV federated learning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one experiment (plus its no-attack twin when attackers are present).
    Run(ConfigArgs),
    /// Tabulate finished runs of the same scenario.
    Compare {
        /// Run directories or manifest files.
        #[arg(required = true, num_args = 1..)]
        runs: Vec<PathBuf>,
        /// Write the table here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump per-client class histograms of the configured partition.
    InspectPartition {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw one metric per round for several runs as SVG plus a CSV series.
    Plot {
        #[arg(required = true, num_args = 1..)]
        runs: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = PlotMetric::Accuracy)]
        metric: PlotMetric,
        /// SVG path; the CSV companion is written next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the base config once per value of one key.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// Dotted config key, e.g. `selection.rho`.
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
        values: Vec<String>,
    },
}

#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// TOML config or a previous run's manifest.json.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `section.key=value`, applied in order.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, env = OUT_DIR_ENV)]
    pub out_dir: Option<PathBuf>,
}

impl ConfigArgs {
    /// Config file, then overrides, then `--seed`.
    pub fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            None => ExperimentConfig::default(),
            Some(p) if p.extension().is_some_and(|e| e == "json") => RunManifest::read(p)?.config,
            Some(p) => ExperimentConfig::from_file(p)?,
        };
        cfg.apply_overrides(&self.set)?;
        if let Some(seed) = self.seed {
            cfg.run.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn out_dir(&self, cfg: &ExperimentConfig) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| PathBuf::from(&cfg.run.out_dir))
    }

    /// Everything that changed the config relative to the file, for the manifest.
    fn recorded_overrides(&self) -> Vec<String> {
        let mut v = self.set.clone();
        if let Some(s) = self.seed {
            v.push(format!("run.seed={s}"));
        }
        v
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum PlotMetric {
    Accuracy,
    AsrTargeted,
    AsrUntargeted,
    RoundTime,
}

impl PlotMetric {
    pub fn name(self) -> &'static str {
        match self {
            Self::Accuracy => "accuracy",
            Self::AsrTargeted => "asr_targeted",
            Self::AsrUntargeted => "asr_untargeted",
            Self::RoundTime => "round_time",
        }
    }

    fn value(self, log: &RoundLog) -> Option<f64> {
        match self {
            Self::RoundTime => (!log.canceled).then_some(log.round_time_s),
            Self::Accuracy => log.metrics.as_ref().map(|m| m.global_accuracy),
            Self::AsrTargeted => log.metrics.as_ref().map(|m| m.asr_targeted),
            Self::AsrUntargeted => log.metrics.as_ref().and_then(|m| m.asr_untargeted),
        }
    }
}

impl FromStr for PlotMetric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        <Self as ValueEnum>::from_str(s, false).map_err(|_| {
            Error::Other(format!("unknown metric `{s}` (expected accuracy, asr_targeted, asr_untargeted or round_time)"))
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestFiles {
    pub rounds: String,
    pub summary: String,
}

/// Self-description of a finished run; its `config` re-executes the run exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: String,
    pub tool_version: String,
    pub label: String,
    pub seed: u64,
    pub config_path: Option<String>,
    pub overrides: Vec<String>,
    pub config: ExperimentConfig,
    pub files: ManifestFiles,
    pub duration_s: f64,
    pub paired_with: Option<String>,
    pub malicious: Vec<crate::ClientId>,
    pub summary: ExperimentSummary,
}

impl RunManifest {
    /// Accepts either the manifest file or the run directory holding it.
    pub fn read(path: &Path) -> Result<Self> {
        let file = manifest_path(path);
        let text = read_text(&file)?;
        let m: Self = serde_json::from_str(&text).map_err(|e| Error::Other(format!("{}: {e}", file.display())))?;
        if m.schema != MANIFEST_SCHEMA {
            return Err(Error::Other(format!("{}: unsupported manifest schema `{}`", file.display(), m.schema)));
        }
        Ok(m)
    }
}

fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.to_path_buf(), source })?;
    }
    std::fs::write(path, text).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

/// Directory name for a run label.
pub fn run_dir_name(label: &str) -> String {
    let s: String = label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.@=".contains(c) { c } else { '_' })
        .collect();
    if s.is_empty() {
        "run".into()
    } else {
        s
    }
}

/// Writes dir/{manifest.json, rounds.jsonl, summary.csv}.
pub fn write_run(
    dir: &Path,
    config: &ExperimentConfig,
    result: &ExperimentResult,
    config_path: Option<&Path>,
    overrides: &[String],
    duration_s: f64,
) -> Result<RunManifest> {
    let manifest = RunManifest {
        schema: MANIFEST_SCHEMA.into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        label: result.label.clone(),
        seed: config.run.seed,
        config_path: config_path.map(|p| p.display().to_string()),
        overrides: overrides.to_vec(),
        config: config.clone(),
        files: ManifestFiles { rounds: ROUNDS_FILE.into(), summary: SUMMARY_FILE.into() },
        duration_s,
        paired_with: result.paired_with.clone(),
        malicious: result.malicious.clone(),
        summary: result.summary.clone(),
    };
    write_text(&dir.join(ROUNDS_FILE), &result.rounds_jsonl())?;
    write_text(&dir.join(SUMMARY_FILE), &summary_csv(std::slice::from_ref(&result.summary))?)?;
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Other(format!("manifest: {e}")))?;
    write_text(&dir.join(MANIFEST_FILE), &(json + "\n"))?;
    Ok(manifest)
}

fn audit_all(result: &ExperimentResult, fleet_size: usize) -> Result<()> {
    for log in &result.rounds {
        log.audit(fleet_size).map_err(|e| Error::Other(format!("{}: invariant violated: {e}", result.label)))?;
    }
    Ok(())
}

/// Runs one config on loaded data and writes the run (and its twin) under `out_dir`.
pub fn execute(
    config: &ExperimentConfig,
    data: &Datasets,
    out_dir: &Path,
    config_path: Option<&Path>,
    overrides: &[String],
) -> Result<Vec<(PathBuf, RunManifest)>> {
    let started = Instant::now();
    let (main, twin) = run_with_reference(config, data)?;
    let duration = started.elapsed().as_secs_f64();
    audit_all(&main, config.fleet.clients)?;
    let mut written = Vec::new();
    let dir = out_dir.join(run_dir_name(&main.label));
    written.push((dir.clone(), write_run(&dir, config, &main, config_path, overrides, duration)?));
    if let Some(twin) = twin {
        audit_all(&twin, config.fleet.clients)?;
        let mut twin_cfg = config.without_attack();
        twin_cfg.run.label = twin.label.clone();
        let dir = out_dir.join(run_dir_name(&twin.label));
        written.push((dir.clone(), write_run(&dir, &twin_cfg, &twin, config_path, overrides, duration)?));
    }
    Ok(written)
}

pub fn cmd_run(args: &ConfigArgs) -> Result<Vec<(PathBuf, RunManifest)>> {
    let config = args.load()?;
    let data = load_datasets(&config)?;
    execute(&config, &data, &args.out_dir(&config), args.config.as_deref(), &args.recorded_overrides())
}

/// One summary row per run; refuses runs of different scenarios.
pub fn cmd_compare(runs: &[PathBuf]) -> Result<String> {
    if runs.len() < 2 {
        return Err(Error::Other("compare needs at least two runs".into()));
    }
    let manifests = runs.iter().map(|p| RunManifest::read(p)).collect::<Result<Vec<_>>>()?;
    let first = &manifests[0];
    for (m, path) in manifests.iter().zip(runs).skip(1) {
        if m.config.data != first.config.data || m.config.fleet != first.config.fleet {
            return Err(Error::Other(format!(
                "{} was run on a different scenario than {} (data or fleet settings differ)",
                path.display(),
                runs[0].display()
            )));
        }
    }
    summary_csv(&manifests.iter().map(|m| m.summary.clone()).collect::<Vec<_>>())
}

/// Per-client sizes and class histograms as CSV.
pub fn partition_csv(config: &ExperimentConfig, train: &LabeledDataset) -> Result<String> {
    let partition = build_partition(config, train)?;
    let classes = train.num_classes();
    let mut w = csv_writer();
    let mut header = vec![PARTITION_SCHEMA.to_string(), "client".into(), "size".into()];
    header.extend((0..classes).map(|c| format!("class_{c}")));
    w.write_record(&header).map_err(csv_err)?;
    for (id, shard) in partition.client_shards.iter().enumerate() {
        let mut counts = vec![0usize; classes];
        for &i in shard {
            counts[train.labels()[i]] += 1;
        }
        let mut row = vec!["client".to_string(), id.to_string(), shard.len().to_string()];
        row.extend(counts.iter().map(usize::to_string));
        w.write_record(&row).map_err(csv_err)?;
    }
    finish_csv(w)
}

pub fn cmd_inspect_partition(args: &ConfigArgs) -> Result<String> {
    let config = args.load()?;
    let data = load_datasets(&config)?;
    partition_csv(&config, &data.train)
}

pub fn read_rounds(run: &Path) -> Result<(RunManifest, Vec<RoundLog>)> {
    let manifest = RunManifest::read(run)?;
    let dir = manifest_path(run).parent().map(Path::to_path_buf).unwrap_or_default();
    let file = crate::orchestrator::resolve(&dir, &manifest.files.rounds);
    let logs = read_text(&file)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::Other(format!("{}: {e}", file.display()))))
        .collect::<Result<Vec<RoundLog>>>()?;
    Ok((manifest, logs))
}

/// A named per-round series.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub strategy: String,
    pub label: String,
    pub points: Vec<(u32, f64)>,
}

pub fn series_of(manifest: &RunManifest, logs: &[RoundLog], metric: PlotMetric) -> Series {
    Series {
        strategy: manifest.summary.strategy.clone(),
        label: manifest.label.clone(),
        points: logs.iter().filter_map(|l| metric.value(l).map(|v| (l.round, v))).collect(),
    }
}

pub fn series_csv(series: &[Series], metric: PlotMetric) -> Result<String> {
    let mut w = csv_writer();
    w.write_record([SERIES_SCHEMA, "strategy", "label", "round", metric.name()]).map_err(csv_err)?;
    for s in series {
        for (r, v) in &s.points {
            w.write_record(["series", &s.strategy, &s.label, &r.to_string(), &v.to_string()]).map_err(csv_err)?;
        }
    }
    finish_csv(w)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

/// Standalone SVG line chart, one polyline per series.
pub fn render_svg(series: &[Series], metric: PlotMetric) -> String {
    let (w, h, left, right, top, bottom) = (720.0, 420.0, 60.0, 170.0, 20.0, 40.0);
    let pts = series.iter().flat_map(|s| s.points.iter());
    let x_max = pts.clone().map(|p| p.0).max().unwrap_or(1).max(2) as f64;
    let x_min = pts.clone().map(|p| p.0).min().unwrap_or(1).min(x_max as u32 - 1) as f64;
    let y_max = pts.clone().map(|p| p.1).fold(0.0_f64, f64::max).max(1e-9);
    let y_min = pts.map(|p| p.1).fold(0.0_f64, f64::min);
    let sx = |x: f64| left + (x - x_min) / (x_max - x_min) * (w - left - right);
    let sy = |y: f64| h - bottom - (y - y_min) / (y_max - y_min) * (h - top - bottom);

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<g stroke="black" fill="none"><line x1="{left}" y1="{0}" x2="{1}" y2="{0}"/><line x1="{left}" y1="{top}" x2="{left}" y2="{0}"/></g>"#,
        h - bottom,
        w - right
    );
    for k in 0..=4 {
        let y = y_min + (y_max - y_min) * k as f64 / 4.0;
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{:.1}" font-size="11" text-anchor="end">{y:.3}</text>"#,
            left - 6.0,
            sy(y) + 4.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{}" font-size="12" text-anchor="middle">round</text>"#,
        (left + w - right) / 2.0,
        h - 8.0
    );
    let _ = writeln!(svg, r#"<text x="{left}" y="{:.1}" font-size="11">{x_min}</text>"#, h - bottom + 14.0);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{:.1}" font-size="11" text-anchor="end">{x_max}</text>"#,
        w - right,
        h - bottom + 14.0
    );
    let _ = writeln!(svg, r#"<text x="{left}" y="14" font-size="12">{}</text>"#, metric.name());
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> =
            s.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x as f64), sy(y))).collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            coords.join(" ")
        );
        let ly = top + 16.0 * i as f64 + 10.0;
        let lx = w - right + 12.0;
        let _ = writeln!(
            svg,
            r#"<g class="legend"><line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}" font-size="11">{}</text></g>"#,
            lx + 18.0,
            lx + 24.0,
            ly + 4.0,
            xml_escape(&s.strategy)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Writes the SVG at `out` and its series CSV alongside; returns both paths.
pub fn cmd_plot(runs: &[PathBuf], metric: PlotMetric, out: &Path) -> Result<(PathBuf, PathBuf)> {
    let mut series = Vec::new();
    for run in runs {
        let (manifest, logs) = read_rounds(run)?;
        if logs.is_empty() {
            return Err(Error::Other(format!("{}: empty round log", run.display())));
        }
        let s = series_of(&manifest, &logs, metric);
        if s.points.is_empty() {
            return Err(Error::Other(format!("{}: no `{}` values to plot", run.display(), metric.name())));
        }
        series.push(s);
    }
    let csv_path = out.with_extension("csv");
    let csv = series_csv(&series, metric)?;
    write_text(out, &render_svg(&series, metric))?;
    write_text(&csv_path, &csv)?;
    Ok((out.to_path_buf(), csv_path))
}

/// Runs every point of the sweep and writes `sweep.csv` with one row per value.
pub fn cmd_sweep(args: &ConfigArgs, axis: &str, values: &[String]) -> Result<(PathBuf, Vec<PathBuf>)> {
    let base = args.load()?;
    let data = load_datasets(&base)?;
    let out_dir = args.out_dir(&base);
    let mut dirs = Vec::new();
    let mut rows = Vec::new();
    for (value, cfg) in sweep_configs(&base, axis, values)? {
        let mut overrides = args.recorded_overrides();
        overrides.push(format!("{axis}={value}"));
        let written = execute(&cfg, &data, &out_dir, args.config.as_deref(), &overrides)?;
        rows.push(written[0].1.summary.clone());
        dirs.extend(written.into_iter().map(|(d, _)| d));
    }
    let table = out_dir.join(format!("sweep-{}.csv", run_dir_name(axis)));
    write_text(&table, &summary_csv(&rows)?)?;
    Ok((table, dirs))
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Other(format!("csv: {e}"))
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Other(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_text(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Executes a parsed command line, printing a short report.
pub fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) => {
            for (dir, m) in cmd_run(&args)? {
                println!("{}: A_g={:?} -> {}", m.label, m.summary.final_accuracy, dir.display());
            }
        }
        Command::Compare { runs, out } => emit(out.as_deref(), &cmd_compare(&runs)?)?,
        Command::InspectPartition { config, out } => emit(out.as_deref(), &cmd_inspect_partition(&config)?)?,
        Command::Plot { runs, metric, out } => {
            let (svg, csv) = cmd_plot(&runs, metric, &out)?;
            println!("{} {}", svg.display(), csv.display());
        }
        Command::Sweep { config, axis, values } => {
            let (table, _) = cmd_sweep(&config, &axis, &values)?;
            println!("{}", table.display());
        }
    }
    Ok(())
}

/// Process entry point; returns the exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(ConfigError::Invalid { .. } | ConfigError::UnknownKey(_) | ConfigError::BadOverride(_)) => 3,
                _ => 1,
            }
        }
    }
}

/// Rows of a summary CSV keyed by label, for quick inspection.
pub fn parse_summary_csv(text: &str) -> Result<BTreeMap<String, Vec<String>>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().map_err(csv_err)?.clone();
    if header.get(0) != Some(crate::orchestrator::SUMMARY_SCHEMA) {
        return Err(Error::Other("not a summary table".into()));
    }
    let label_col = header.iter().position(|h| h == "label").ok_or_else(|| Error::Other("no label column".into()))?;
    let mut out = BTreeMap::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        out.insert(rec[label_col].to_string(), rec.iter().map(str::to_string).collect());
    }
    Ok(out)
}
