//! `smartbuilding`: run the simulation or the gateway, and inspect a store.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use chrono::{DateTime, Utc};
use clap::{Args, Parser, Subcommand};
use sb_core::model::{format_ts, parse_ts, Metric};
use sb_core::runtime::{self, ReportError, RoomReport, RunOptions};
use sb_core::scenario::{Scenario, ScenarioError};
use sb_core::tstore::{format_row, QueryRange, Store, StoreError, SyncMode};

/// Like `println!`, but a closed stdout (e.g. piped into `head`) is not an error.
macro_rules! outln {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

const EXIT_FAULT: u8 = 1;
const EXIT_INVALID: u8 = 2;
const EXIT_NO_DATA: u8 = 3;
const DEFAULT_BIND: &str = "127.0.0.1:8080";

#[derive(Parser)]
#[command(name = "smartbuilding", version, about = "Smart-building sensor platform")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct ScenarioArg {
    /// Scenario file; the bundled two-dorms-and-a-lab day when omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct Window {
    #[arg(long, value_parser = ts_arg)]
    from: Option<DateTime<Utc>>,
    #[arg(long, value_parser = ts_arg)]
    to: Option<DateTime<Utc>>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario end to end on a stepped clock.
    Simulate {
        #[command(flatten)]
        scenario: ScenarioArg,
        #[arg(long)]
        store: Option<PathBuf>,
        /// Hold every simulated instant until its wall deadline.
        #[arg(long)]
        paced: bool,
        /// Also serve the HTTP API while simulating.
        #[arg(long)]
        bind: Option<SocketAddr>,
        /// Skip fsync after each append.
        #[arg(long)]
        no_sync: bool,
    },
    /// Serve the API against live devices on a free-running clock.
    Gateway {
        #[command(flatten)]
        scenario: ScenarioArg,
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long)]
        bind: Option<SocketAddr>,
        /// Start the scenario's simulated devices in-process.
        #[arg(long)]
        with_devices: bool,
    },
    /// List the devices a scenario declares.
    Devices {
        #[command(flatten)]
        scenario: ScenarioArg,
    },
    /// Print stored rows as CSV.
    Query {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        device: Option<String>,
        #[arg(long, value_parser = metric_arg)]
        metric: Option<Metric>,
        #[command(flatten)]
        window: Window,
    },
    /// Comfort, light and occupancy for a room.
    Report {
        #[command(flatten)]
        scenario: ScenarioArg,
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        room: String,
        #[command(flatten)]
        window: Window,
        #[arg(long)]
        json: bool,
    },
    /// Bucketed means as "bucket_start,mean" CSV.
    Export {
        #[arg(long)]
        store: PathBuf,
        #[arg(long, value_parser = metric_arg)]
        metric: Metric,
        #[arg(long)]
        device: Option<String>,
        #[arg(long)]
        room: Option<String>,
        #[command(flatten)]
        window: Window,
        /// Bucket width in minutes.
        #[arg(long, default_value_t = 60)]
        bucket: u64,
    },
    /// Re-run analytics over everything in a store.
    Replay {
        #[command(flatten)]
        scenario: ScenarioArg,
        #[arg(long)]
        store: PathBuf,
    },
}

fn ts_arg(s: &str) -> Result<DateTime<Utc>, String> {
    parse_ts(s).ok_or_else(|| format!("expected YYYY-MM-DDTHH:MM:SSZ, got {s}"))
}

fn metric_arg(s: &str) -> Result<Metric, String> {
    s.parse::<Metric>().map_err(|e| e.to_string())
}

struct Failure(u8, String);

impl From<StoreError> for Failure {
    fn from(e: StoreError) -> Self {
        Failure(EXIT_FAULT, e.to_string())
    }
}

impl From<ReportError> for Failure {
    fn from(e: ReportError) -> Self {
        match e {
            ReportError::NoData(_) => Failure(EXIT_NO_DATA, e.to_string()),
            ReportError::Store(s) => s.into(),
        }
    }
}

fn load_scenario(arg: &ScenarioArg) -> Result<Scenario, Failure> {
    let Some(path) = &arg.scenario else {
        return Ok(Scenario::bundled());
    };
    Scenario::load(path).map_err(|e| match e {
        ScenarioError::Invalid(diags) => {
            let shown = path.display();
            let lines: Vec<String> = diags.iter().map(|d| format!("{shown}:{d}")).collect();
            Failure(EXIT_INVALID, lines.join("\n"))
        }
        other @ ScenarioError::Io { .. } => Failure(EXIT_INVALID, other.to_string()),
    })
}

fn store_root(flag: Option<PathBuf>, sc: &Scenario) -> PathBuf {
    flag.or_else(|| sc.store_root.clone()).unwrap_or_else(|| PathBuf::from("store"))
}

/// Opens an existing store without creating one.
fn open_existing(root: &Path) -> Result<Store, Failure> {
    if !root.is_dir() {
        return Err(Failure(EXIT_NO_DATA, format!("NO_DATA: no store at {}", root.display())));
    }
    Ok(Store::open_with(root, SyncMode::Never)?.0)
}

fn range(w: &Window) -> Result<QueryRange, Failure> {
    let from = w.from.unwrap_or(DateTime::<Utc>::MIN_UTC);
    let to = w.to.unwrap_or(DateTime::<Utc>::MAX_UTC);
    QueryRange::new(from, to).map_err(|e| Failure(EXIT_INVALID, e.to_string()))
}

async fn ctrl_c() {
    if tokio::signal::ctrl_c().await.is_err() {
        std::future::pending::<()>().await;
    }
}

async fn simulate(sc: Scenario, opts: RunOptions) -> Result<(), Failure> {
    let root = opts.store_root.clone();
    let s = runtime::run(&sc, opts, ctrl_c())
        .await
        .map_err(|e| Failure(EXIT_FAULT, e.to_string()))?;
    outln!(
        "{} readings stored in {} over {} .. {} ({:.1} s wall{})",
        s.stats.stored,
        root.display(),
        format_ts(&s.start),
        format_ts(&s.end),
        s.wall_secs,
        if s.interrupted { ", interrupted" } else { "" }
    );
    for (stream, n) in &s.stats.per_stream {
        outln!("  {stream:<32} {n}");
    }
    outln!("  relay commands: {}, poll faults: {}", s.commands.len(), s.stats.poll_faults);
    Ok(())
}

/// The snake_case name serde gives a unit variant.
fn label<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string(v).unwrap_or_default().trim_matches('"').to_string()
}

fn print_report(r: &RoomReport) {
    outln!("room {} ({} rows)", r.room, r.rows);
    for (metric, m) in &r.comfort.metrics {
        match m {
            sb_core::analytics::MetricComfort::Scored { mean_value, score, flag, samples } => {
                outln!("  {:<12} mean {mean_value:>8.2}  score {score:.2}  {} ({samples} samples)", metric.to_string(), label(flag))
            }
            sb_core::analytics::MetricComfort::NoData => outln!("  {:<12} no data", metric.to_string()),
        }
    }
    match r.comfort.overall {
        Some(o) => outln!("  overall comfort {o:.2}"),
        None => outln!("  overall comfort n/a"),
    }
    match (r.light, r.mean_lux) {
        (Some(class), Some(lux)) => outln!("  light        {} (mean {lux:.1} lux)", label(&class)),
        _ => outln!("  light        no data"),
    }
    let o = &r.occupancy;
    outln!(
        "  occupancy    current {} peak {} changes {} door events {}",
        o.current, o.peak, o.changes, o.door_events
    );
}

fn json_out<T: serde::Serialize>(v: &T) -> Result<(), Failure> {
    let s = serde_json::to_string_pretty(v).map_err(|e| Failure(EXIT_FAULT, e.to_string()))?;
    outln!("{s}");
    Ok(())
}

async fn dispatch(cmd: Cmd) -> Result<(), Failure> {
    match cmd {
        Cmd::Simulate { scenario, store, paced, bind, no_sync } => {
            let sc = load_scenario(&scenario)?;
            let mut opts = RunOptions::simulate(store_root(store, &sc));
            opts.paced = paced;
            opts.bind = bind;
            if no_sync {
                opts.sync = SyncMode::Never;
            }
            simulate(sc, opts).await
        }
        Cmd::Gateway { scenario, store, bind, with_devices } => {
            let sc = load_scenario(&scenario)?;
            let bind = bind.or(sc.api_bind).unwrap_or_else(|| DEFAULT_BIND.parse().expect("valid address"));
            let opts = RunOptions {
                store_root: store_root(store, &sc),
                bind: Some(bind),
                stepped: false,
                paced: false,
                spawn_devices: with_devices,
                stop_at_end: false,
                sync: SyncMode::Always,
            };
            eprintln!("serving http://{bind}/api/v1 (ctrl-c to stop)");
            simulate(sc, opts).await
        }
        Cmd::Devices { scenario } => {
            let sc = load_scenario(&scenario)?;
            for d in &sc.devices {
                let desc = d.descriptor();
                let metrics: Vec<&str> = desc.metrics.iter().map(|m| m.as_str()).collect();
                outln!(
                    "{:<16} {:<10} {:<20} {:<8} {}",
                    desc.device_id,
                    desc.protocol.to_string(),
                    serde_json::to_string(&desc.address).unwrap_or_default().trim_matches('"'),
                    desc.room_id,
                    metrics.join(",")
                );
            }
            Ok(())
        }
        Cmd::Query { store, device, metric, window } => {
            let st = open_existing(&store)?;
            let mut q = range(&window)?;
            if let Some(d) = device {
                q = q.device(d);
            }
            if let Some(m) = metric {
                q = q.metric(m);
            }
            let rows = st.query(&q)?;
            if rows.is_empty() {
                return Err(Failure(EXIT_NO_DATA, "NO_DATA: no rows match".into()));
            }
            outln!("{},room_id", sb_core::tstore::HEADER);
            for r in &rows {
                outln!("{},{}", format_row(r).trim_end(), r.room_id);
            }
            Ok(())
        }
        Cmd::Report { scenario, store, room, window, json } => {
            let sc = load_scenario(&scenario)?;
            let st = open_existing(&store)?;
            let from = window.from.unwrap_or(DateTime::<Utc>::MIN_UTC);
            let to = window.to.unwrap_or(DateTime::<Utc>::MAX_UTC);
            let r = runtime::room_report(&st, &room, from, to, &sc.bands, sc.light_threshold)?;
            if json {
                json_out(&r)
            } else {
                print_report(&r);
                Ok(())
            }
        }
        Cmd::Export { store, metric, device, room, window, bucket } => {
            if bucket == 0 {
                return Err(Failure(EXIT_INVALID, "bucket must be at least one minute".into()));
            }
            let st = open_existing(&store)?;
            let mut q = range(&window)?.metric(metric);
            if let Some(d) = device {
                q = q.device(d);
            }
            let series = runtime::export_series(&st, &q, room.as_deref(), Duration::from_secs(bucket * 60))?;
            outln!("bucket_start,mean");
            for (t, v) in series {
                outln!("{},{}", format_ts(&t), sb_core::tstore::format_value(v));
            }
            Ok(())
        }
        Cmd::Replay { scenario, store } => {
            let sc = load_scenario(&scenario)?;
            let st = open_existing(&store)?;
            json_out(&runtime::replay(&st, &sc)?)
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "error".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let rt = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_FAULT);
        }
    };
    match rt.block_on(dispatch(cli.cmd)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(code, msg)) => {
            eprintln!("{msg}");
            ExitCode::from(code)
        }
    }
}
