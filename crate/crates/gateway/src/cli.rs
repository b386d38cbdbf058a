//! The `cornet` command line: a server and a client for it.
//!
//! Exit codes: 0 success, 1 the operation failed, 2 bad usage.

use std::ffi::OsString;
use std::io::{Read, Write};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use cornet_core::allocator::Allocation;
use cornet_core::chanem::ChannelScenario;
use cornet_core::datamgr::{ArchiveSummary, ExperimentRecord, QueryFilter};
use cornet_core::inventory::{Inventory, RfPath};
use cornet_core::scheduler::{
    Channel, ComputeSpec, NetworkSpec, RadioSpec, Reservation, ResourceSpec, SchedulerConfig, SurveyForm,
    SurveyResponses, UtilizationBucket,
};
use cornet_core::specvirt::iqfile::IqFormat;
use cornet_core::specvirt::round_trip;
use cornet_core::{TimeWindow, Timestamp};

use crate::api::*;
use crate::auth::{Role, Session};
use crate::client::{CallError, Client};
use crate::clock::SystemClock;
use crate::emulation::{EmulationRequest, EmulationResult, TxAssignment};
use crate::server::serve;
use crate::state::{replay_state_dir, AppState, ServeConfig, SNAPSHOT_FILE};
use crate::status::NodeStatusEvent;

#[derive(Debug, Parser)]
#[command(name = "cornet", version, about = "Shared SDR testbed orchestrator")]
pub struct Cli {
    /// Server base URL.
    #[arg(long, global = true, env = "CORNET_SERVER", default_value = "http://127.0.0.1:8080")]
    pub server: String,
    /// Bearer token.
    #[arg(long, global = true, env = "CORNET_TOKEN", hide_env_values = true)]
    pub token: Option<String>,
    /// Print raw JSON responses.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the orchestrator HTTP server.
    Serve(ServeArgs),
    /// Request a reservation; prints its id.
    Reserve(ReserveArgs),
    /// Run automatic admission on a tentative reservation.
    Evaluate { id: String },
    /// Approve a reservation pending review (administrators).
    Approve { id: String },
    /// Deny a reservation pending review (administrators).
    Deny { id: String },
    Activate { id: String },
    /// Finish an active reservation and print its survey.
    Complete { id: String },
    Cancel {
        id: String,
        #[arg(long, default_value = "")]
        reason: String,
    },
    /// Answer the post-usage survey.
    Survey(SurveyArgs),
    /// All reservations.
    List,
    Show { id: String },
    /// Devices, slots and VMs bound to a reservation.
    Allocation { id: String },
    /// Reservations overlapping a time range.
    Schedule {
        #[arg(long)]
        from: String,
        #[arg(long)]
        to: String,
    },
    /// Node status.
    Status,
    Inventory,
    Capacity,
    /// Utilization per time bucket.
    Report {
        #[arg(long)]
        from: String,
        #[arg(long)]
        to: String,
        /// Bucket length in seconds.
        #[arg(long, default_value_t = 3600)]
        bucket: i64,
    },
    /// Mark a radio node faulty, or clear the mark (administrators).
    Fault {
        node: String,
        #[arg(long)]
        clear: bool,
    },
    /// Re-read the inventory and rebuild the scheduler (administrators).
    Reload {
        /// Inventory TOML to send; otherwise the server re-reads its own file.
        #[arg(long)]
        file: Option<PathBuf>,
    },
    #[command(subcommand)]
    Scenario(ScenarioCmd),
    /// Run the channel emulator for an active emulator-path reservation.
    Emulate(EmulateArgs),
    #[command(subcommand)]
    Experiment(ExperimentCmd),
    #[command(subcommand)]
    Data(DataCmd),
    /// Seal an experiment archive and print its digest.
    Seal { experiment: String },
    #[command(subcommand)]
    Specvirt(SpecvirtCmd),
    /// Rebuild a state directory's scheduler from its journal and compare
    /// it with the saved snapshot.
    Replay {
        #[arg(long)]
        state_dir: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: SocketAddr,
    #[arg(long)]
    pub state_dir: Option<PathBuf>,
    /// Inventory TOML used when the state directory has none.
    #[arg(long)]
    pub inventory: Option<PathBuf>,
    /// Researcher account, NAME:TOKEN. Repeatable.
    #[arg(long = "user", value_name = "NAME:TOKEN")]
    pub users: Vec<String>,
    /// Administrator account, NAME:TOKEN. Repeatable.
    #[arg(long = "admin", value_name = "NAME:TOKEN")]
    pub admins: Vec<String>,
    /// Longest reservation confirmed without review, in seconds.
    #[arg(long)]
    pub auto_approve_max_s: Option<i64>,
    /// Seconds before an unevaluated request lapses.
    #[arg(long)]
    pub tentative_ttl_s: Option<i64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PathArg {
    Ota,
    Emulator,
}

#[derive(Debug, Args)]
pub struct ReserveArgs {
    #[arg(long, default_value_t = 0)]
    pub usrps: u32,
    #[arg(long, value_enum, default_value = "ota")]
    pub path: PathArg,
    /// Center and bandwidth in MHz, CENTER:BW. Repeatable.
    #[arg(long = "channel", value_name = "MHZ:BWMHZ")]
    pub channels: Vec<String>,
    #[arg(long, default_value_t = 0)]
    pub cores: u32,
    #[arg(long, default_value_t = 0)]
    pub threads: u32,
    /// GB.
    #[arg(long, default_value_t = 0)]
    pub ram: u64,
    /// GB.
    #[arg(long, default_value_t = 0)]
    pub storage: u64,
    /// VM lifetime in seconds; defaults to the window length.
    #[arg(long)]
    pub lifetime: Option<u64>,
    /// Repeatable.
    #[arg(long)]
    pub software: Vec<String>,
    #[arg(long, default_value_t = 0.0)]
    pub network_gbps: f64,
    /// now, now+N[smhd], Unix seconds, or RFC 3339. "now" is the server's clock.
    #[arg(long, default_value = "now")]
    pub start: String,
    #[arg(long, conflicts_with = "end")]
    pub hours: Option<f64>,
    #[arg(long)]
    pub end: Option<String>,
}

#[derive(Debug, Args)]
pub struct SurveyArgs {
    pub id: String,
    #[arg(long, value_parser = ["yes", "no"])]
    pub adequate: Option<String>,
    #[arg(long, default_value = "")]
    pub usage: String,
    #[arg(long, default_value = "")]
    pub comments: String,
}

#[derive(Debug, Subcommand)]
pub enum ScenarioCmd {
    /// Load a scenario TOML (with any matrix file beside it) and install it.
    Put { file: PathBuf },
    Get,
    /// Print the built-in example scenario.
    Example,
}

#[derive(Debug, Args)]
pub struct EmulateArgs {
    #[arg(long)]
    pub reservation: String,
    /// Archive to record measurements into.
    #[arg(long)]
    pub experiment: Option<String>,
    #[arg(long)]
    pub duration: f64,
    #[arg(long, default_value_t = 1.0)]
    pub step: f64,
    #[arg(long, default_value_t = 4096)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// RADIO=SLOT transmitter assignment. Repeatable.
    #[arg(long = "tx", value_name = "RADIO=SLOT")]
    pub tx: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum ExperimentCmd {
    /// Open an archive for an active reservation; prints its id.
    Open {
        reservation: String,
        /// Sample formats used. Repeatable.
        #[arg(long = "format")]
        formats: Vec<String>,
    },
    List,
    Show { experiment: String },
}

#[derive(Debug, Subcommand)]
pub enum DataCmd {
    /// Append records, one tab-separated line each, from a file or "-".
    Append { experiment: String, file: PathBuf },
    /// Print matching records as tab-separated lines.
    Query {
        experiment: String,
        #[arg(long)]
        from_us: Option<i64>,
        #[arg(long)]
        to_us: Option<i64>,
        #[arg(long)]
        node: Option<String>,
        #[arg(long)]
        freq_from: Option<f64>,
        #[arg(long)]
        freq_to: Option<f64>,
        #[arg(long)]
        az_from: Option<f64>,
        #[arg(long)]
        az_to: Option<f64>,
    },
}

#[derive(Debug, Subcommand)]
pub enum SpecvirtCmd {
    /// Aggregate and split random slot signals locally and report quality.
    Roundtrip {
        #[arg(long, default_value_t = 3)]
        slots: usize,
        #[arg(long, default_value_t = 1 << 16)]
        len: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

/// Failure of one command.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Call(CallError),
    Local(String),
}

impl From<CallError> for Failure {
    fn from(e: CallError) -> Failure {
        Failure::Call(e)
    }
}

type Out<'a> = &'a mut dyn Write;

/// Runs the CLI on `args` (program name first) with process streams.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(args, &mut stdout.lock(), &mut stderr.lock())
}

/// Runs the CLI writing to the given streams; returns the exit code.
pub fn run_with<I, T>(args: I, out: Out<'_>, err: Out<'_>) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    0
                }
                _ => {
                    let _ = write!(err, "{text}");
                    2
                }
            };
        }
    };
    match dispatch(cli, out) {
        Ok(()) => 0,
        Err(Failure::Usage(m)) => {
            let _ = writeln!(err, "error: {m}");
            2
        }
        Err(Failure::Call(e)) => {
            let _ = writeln!(err, "{e}");
            1
        }
        Err(Failure::Local(m)) => {
            let _ = writeln!(err, "{m}");
            1
        }
    }
}

fn emit<T: Serialize>(out: Out<'_>, json: bool, value: &T, human: impl FnOnce(Out<'_>) -> std::io::Result<()>) -> Result<(), Failure> {
    let r = if json {
        serde_json::to_string_pretty(value)
            .map_err(|e| Failure::Local(e.to_string()))
            .and_then(|s| writeln!(out, "{s}").map_err(|e| Failure::Local(e.to_string())))
    } else {
        human(out).map_err(|e| Failure::Local(e.to_string()))
    };
    r
}

fn reservation_line(r: &Reservation) -> String {
    format!(
        "{} {:?} {} [{}, {})",
        r.id, r.state, r.user, r.window.start_utc, r.window.end_utc
    )
}

/// Parses `now`, `now+N[smhd]`, Unix seconds or RFC 3339 against `now`.
pub fn parse_time(text: &str, now: Timestamp) -> Result<Timestamp, String> {
    let t = text.trim();
    if t == "now" {
        return Ok(now);
    }
    if let Some(rest) = t.strip_prefix("now+") {
        let (num, unit) = rest.split_at(rest.find(|c: char| !c.is_ascii_digit()).unwrap_or(rest.len()));
        let n: i64 = num.parse().map_err(|_| format!("bad offset in {t:?}"))?;
        let scale = match unit {
            "" | "s" => 1,
            "m" => 60,
            "h" => 3600,
            "d" => 86_400,
            _ => return Err(format!("unknown unit {unit:?} in {t:?}")),
        };
        return Ok(now.plus(n * scale));
    }
    if let Ok(secs) = t.parse::<i64>() {
        return Ok(Timestamp(secs));
    }
    chrono::DateTime::parse_from_rfc3339(t)
        .map(|d| Timestamp(d.timestamp()))
        .map_err(|_| format!("cannot read time {t:?}: use now, now+N[smhd], Unix seconds or RFC 3339"))
}

fn parse_channel(text: &str) -> Result<Channel, String> {
    let (c, bw) = text
        .split_once(':')
        .ok_or_else(|| format!("channel {text:?} is not MHZ:BWMHZ"))?;
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| format!("channel {text:?} is not MHZ:BWMHZ"));
    Ok(Channel {
        center_hz: num(c)? * 1e6,
        bw_hz: num(bw)? * 1e6,
    })
}

fn parse_format(text: &str) -> Result<IqFormat, String> {
    serde_json::from_value(Value::String(text.to_ascii_lowercase()))
        .map_err(|_| format!("unknown sample format {text:?}: float64, sc16 or sc8"))
}

fn server_now(client: &Client) -> Result<Timestamp, Failure> {
    Ok(client.get::<Health>("/v1/health")?.now_utc)
}

fn client(cli: &Cli) -> Result<Client, Failure> {
    Ok(Client::new(&cli.server, cli.token.clone())?)
}

fn dispatch(cli: Cli, out: Out<'_>) -> Result<(), Failure> {
    let json = cli.json;
    match &cli.command {
        Command::Serve(a) => run_server(a, out),
        Command::Specvirt(SpecvirtCmd::Roundtrip { slots, len, seed }) => {
            let q = round_trip(*slots, *len, *seed).map_err(|e| Failure::Local(e.to_string()))?;
            emit(out, json, &q, |o| {
                for (i, s) in q.iter().enumerate() {
                    let leak = s.leakage_dbc.map_or("n/a".to_string(), |l| format!("{l:.1} dBc"));
                    writeln!(
                        o,
                        "slot {i}: offset {:.3} MHz bw {:.3} MHz evm {:.1} dBc leakage {leak}",
                        s.offset_hz / 1e6,
                        s.bw_hz / 1e6,
                        s.evm_dbc
                    )?;
                }
                Ok(())
            })
        }
        Command::Replay { state_dir } => replay(state_dir, json, out),
        Command::Scenario(ScenarioCmd::Example) => {
            write!(out, "{}", cornet_core::chanem::EXAMPLE_SCENARIO).map_err(|e| Failure::Local(e.to_string()))
        }
        _ => remote(&cli, client(&cli)?, json, out),
    }
}

fn remote(cli: &Cli, c: Client, json: bool, out: Out<'_>) -> Result<(), Failure> {
    let show_res = |out: Out<'_>, r: &Reservation| emit(out, json, r, |o| writeln!(o, "{}", reservation_line(r)));
    match &cli.command {
        Command::Reserve(a) => {
            let channels = a.channels.iter().map(|s| parse_channel(s)).collect::<Result<Vec<_>, _>>().map_err(Failure::Usage)?;
            if a.end.is_none() && a.hours.is_none() {
                return Err(Failure::Usage("give --hours or --end".into()));
            }
            let relative = a.start.starts_with("now") || a.end.as_deref().is_some_and(|e| e.starts_with("now"));
            let now = if relative { server_now(&c)? } else { Timestamp(0) };
            let start = parse_time(&a.start, now).map_err(Failure::Usage)?;
            let end = match (&a.end, a.hours) {
                (Some(e), _) => parse_time(e, now).map_err(Failure::Usage)?,
                (None, h) => start.plus((h.unwrap_or(0.0) * 3600.0).round() as i64),
            };
            let window = TimeWindow { start_utc: start, end_utc: end };
            let compute = ComputeSpec {
                ram_gb: a.ram,
                storage_gb: a.storage,
                vm_lifetime_s: a.lifetime.unwrap_or(window.duration_s().max(0) as u64),
                cpu_threads: a.threads,
                cpu_cores: a.cores,
                software: a.software.clone(),
            };
            let spec = ResourceSpec {
                compute: if compute.cpu_cores == 0 && compute.ram_gb == 0 && compute.storage_gb == 0 && compute.software.is_empty() {
                    ComputeSpec::default()
                } else {
                    compute
                },
                radio: RadioSpec {
                    n_usrps: a.usrps,
                    channels,
                    path: match a.path {
                        PathArg::Ota => RfPath::OverTheAir,
                        PathArg::Emulator => RfPath::Emulator,
                    },
                },
                network: NetworkSpec { requested_bps: a.network_gbps * 1e9 },
            };
            let r: Reservation = c.post("/v1/reservations", &ReservationRequest { window, spec })?;
            emit(out, json, &r, |o| writeln!(o, "{}", r.id))
        }
        Command::Evaluate { id } => show_res(out, &c.post(&format!("/v1/reservations/{id}/evaluate"), &json!({}))?),
        Command::Approve { id } => {
            show_res(out, &c.post(&format!("/v1/reservations/{id}/review"), &ReviewRequest { approve: true })?)
        }
        Command::Deny { id } => {
            show_res(out, &c.post(&format!("/v1/reservations/{id}/review"), &ReviewRequest { approve: false })?)
        }
        Command::Activate { id } => show_res(out, &c.post(&format!("/v1/reservations/{id}/activate"), &json!({}))?),
        Command::Complete { id } => {
            let r: CompleteResponse = c.post(&format!("/v1/reservations/{id}/complete"), &json!({}))?;
            emit(out, json, &r, |o| {
                writeln!(o, "{}", reservation_line(&r.reservation))?;
                writeln!(o, "scheduled {} s, used {} s", r.survey.scheduled_seconds, r.survey.actual_seconds)?;
                for (i, q) in r.survey.questions.iter().enumerate() {
                    writeln!(o, "Q{}: {q}", i + 1)?;
                }
                Ok(())
            })
        }
        Command::Cancel { id, reason } => show_res(
            out,
            &c.post(&format!("/v1/reservations/{id}/cancel"), &CancelRequest { reason: reason.clone() })?,
        ),
        Command::Survey(a) => {
            let responses = SurveyResponses {
                resources_adequate: a.adequate.as_deref().map(|s| s == "yes"),
                usage_comparison: a.usage.clone(),
                comments: a.comments.clone(),
            };
            let f: SurveyForm = c.post(&format!("/v1/reservations/{}/survey", a.id), &responses)?;
            emit(out, json, &f, |o| writeln!(o, "survey recorded for {}", f.reservation_id))
        }
        Command::List => {
            let all: Vec<Reservation> = c.get("/v1/reservations")?;
            emit(out, json, &all, |o| {
                for r in &all {
                    writeln!(o, "{}", reservation_line(r))?;
                }
                Ok(())
            })
        }
        Command::Show { id } => {
            let r: Reservation = c.get(&format!("/v1/reservations/{id}"))?;
            emit(out, json, &r, |o| {
                writeln!(o, "{}", reservation_line(&r))?;
                for a in &r.audit {
                    writeln!(o, "  {} {:?} -> {:?} by {}", a.t, a.from, a.to, a.actor)?;
                }
                Ok(())
            })
        }
        Command::Allocation { id } => {
            let a: Allocation = c.get(&format!("/v1/reservations/{id}/allocation"))?;
            emit(out, json, &a, |o| {
                writeln!(o, "devices: {}", a.devices.join(" "))?;
                for (i, s) in a.slots.iter().enumerate() {
                    writeln!(
                        o,
                        "slot {i}: {} center {:.3} MHz bw {:.3} MHz",
                        s.node_id,
                        s.center_hz() / 1e6,
                        s.slot.bw_hz / 1e6
                    )?;
                }
                for v in &a.vm_placements {
                    writeln!(o, "vm: {} {} cores {} GB RAM", v.compute_node_id, v.cores, v.ram_gb)?;
                }
                Ok(())
            })
        }
        Command::Schedule { from, to } => {
            let now = server_now(&c)?;
            let from = parse_time(from, now).map_err(Failure::Usage)?;
            let to = parse_time(to, now).map_err(Failure::Usage)?;
            let all: Vec<Reservation> = c.get(&format!("/v1/schedule?from={from}&to={to}"))?;
            emit(out, json, &all, |o| {
                for r in &all {
                    writeln!(o, "{}", reservation_line(r))?;
                }
                Ok(())
            })
        }
        Command::Status => {
            let s: Vec<NodeStatusEvent> = c.get("/v1/status")?;
            emit(out, json, &s, |o| {
                for e in &s {
                    let owner = e.owner.as_ref().map_or("-".to_string(), |r| r.to_string());
                    writeln!(o, "{} {:?} {owner}", e.node_id, e.state)?;
                }
                Ok(())
            })
        }
        Command::Inventory => {
            let inv: Inventory = c.get("/v1/inventory")?;
            emit(out, json, &inv, |o| write!(o, "{}", inv.to_toml()))
        }
        Command::Capacity => {
            let cap: CapacityResponse = c.get("/v1/capacity")?;
            emit(out, json, &cap, |o| {
                for a in &cap.accounting {
                    writeln!(o, "{}: {} held, {} free of {}", a.class, a.held, a.free, a.total)?;
                }
                for t in &cap.throughput {
                    writeln!(
                        o,
                        "block {}: {:.3} Gbit/s of {:.3} ({})",
                        t.node_id,
                        t.required_bps / 1e9,
                        t.port_rate_bps / 1e9,
                        if t.fits { "fits" } else { "exceeds" }
                    )?;
                }
                Ok(())
            })
        }
        Command::Report { from, to, bucket } => {
            let now = server_now(&c)?;
            let from = parse_time(from, now).map_err(Failure::Usage)?;
            let to = parse_time(to, now).map_err(Failure::Usage)?;
            let rows: Vec<UtilizationBucket> = c.get(&format!("/v1/utilization?from={from}&to={to}&bucket={bucket}"))?;
            emit(out, json, &rows, |o| {
                writeln!(o, "start\tend\tdevices\tcores\tram_gb\tstorage_gb\tnetwork_bps")?;
                for b in &rows {
                    writeln!(
                        o,
                        "{}\t{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}",
                        b.start_utc, b.end_utc, b.devices, b.cores, b.ram_gb, b.storage_gb, b.network_bps
                    )?;
                }
                Ok(())
            })
        }
        Command::Fault { node, clear } => {
            let s: Vec<NodeStatusEvent> = c.post(&format!("/v1/nodes/{node}/fault"), &FaultRequest { fault: !clear })?;
            emit(out, json, &s, |o| {
                for e in s.iter().filter(|e| &e.node_id == node) {
                    writeln!(o, "{} {:?}", e.node_id, e.state)?;
                }
                Ok(())
            })
        }
        Command::Reload { file } => {
            let toml = match file {
                Some(p) => Some(std::fs::read_to_string(p).map_err(|e| Failure::Local(format!("{}: {e}", p.display())))?),
                None => None,
            };
            let r: ReloadResponse = c.post("/v1/inventory/reload", &ReloadRequest { toml })?;
            emit(out, json, &r, |o| writeln!(o, "inventory {}", r.inventory_hash))
        }
        Command::Scenario(ScenarioCmd::Put { file }) => {
            let sc = ChannelScenario::load(file).map_err(|e| Failure::Local(e.to_string()))?;
            let r: ScenarioResponse = c.put("/v1/scenario", &sc)?;
            emit(out, json, &r, |o| writeln!(o, "scenario {}", r.scenario_hash))
        }
        Command::Scenario(ScenarioCmd::Get) => {
            let sc: ChannelScenario = c.get("/v1/scenario")?;
            emit(out, json, &sc, |o| write!(o, "{}", sc.to_toml()))
        }
        Command::Emulate(a) => {
            let tx = a
                .tx
                .iter()
                .map(|s| {
                    let (radio, slot) = s.split_once('=').ok_or_else(|| format!("tx {s:?} is not RADIO=SLOT"))?;
                    let slot = slot.parse().map_err(|_| format!("tx {s:?} is not RADIO=SLOT"))?;
                    Ok(TxAssignment { radio_id: radio.to_string(), slot })
                })
                .collect::<Result<Vec<_>, String>>()
                .map_err(Failure::Usage)?;
            let req = EmulationRequest {
                reservation_id: a.reservation.as_str().into(),
                experiment_id: a.experiment.clone(),
                duration_s: a.duration,
                step_s: a.step,
                samples_per_step: a.samples,
                seed: a.seed,
                tx,
            };
            let r: EmulationResult = c.post("/v1/emulation/run", &req)?;
            emit(out, json, &r, |o| {
                writeln!(
                    o,
                    "{} steps, {} measurements, {} recorded",
                    r.steps,
                    r.measurements.len(),
                    r.records_appended
                )
            })
        }
        Command::Experiment(ExperimentCmd::Open { reservation, formats }) => {
            let sample_formats = formats.iter().map(|f| parse_format(f)).collect::<Result<_, _>>().map_err(Failure::Usage)?;
            let req = OpenExperimentRequest {
                reservation_id: reservation.as_str().into(),
                sample_formats,
            };
            let d: ExperimentDetail = c.post("/v1/experiments", &req)?;
            emit(out, json, &d, |o| writeln!(o, "{}", d.summary.id))
        }
        Command::Experiment(ExperimentCmd::List) => {
            let all: Vec<ArchiveSummary> = c.get("/v1/experiments")?;
            emit(out, json, &all, |o| {
                for a in &all {
                    writeln!(
                        o,
                        "{} {} {} records{}",
                        a.id,
                        a.reservation_id,
                        a.records,
                        if a.sealed { " sealed" } else { "" }
                    )?;
                }
                Ok(())
            })
        }
        Command::Experiment(ExperimentCmd::Show { experiment }) => {
            let d: ExperimentDetail = c.get(&format!("/v1/experiments/{experiment}"))?;
            emit(out, json, &d, |o| {
                writeln!(o, "{} for {}: {} records", d.summary.id, d.summary.reservation_id, d.summary.records)?;
                writeln!(o, "inventory {}", d.snapshot.inventory_hash)?;
                if let Some(h) = &d.snapshot.scenario_hash {
                    writeln!(o, "scenario {h}")?;
                }
                if let Some(dg) = &d.summary.digest {
                    writeln!(o, "sealed sha256 {dg}")?;
                }
                Ok(())
            })
        }
        Command::Data(DataCmd::Append { experiment, file }) => {
            let mut text = String::new();
            let read = if file.as_os_str() == "-" {
                std::io::stdin().read_to_string(&mut text)
            } else {
                std::fs::File::open(file).and_then(|mut f| f.read_to_string(&mut text))
            };
            read.map_err(|e| Failure::Local(format!("{}: {e}", file.display())))?;
            let records = text
                .lines()
                .enumerate()
                .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
                .map(|(i, l)| ExperimentRecord::from_line(l).map_err(|e| format!("line {}: {e}", i + 1)))
                .collect::<Result<Vec<_>, _>>()
                .map_err(Failure::Usage)?;
            let r: AppendResponse = c.post(&format!("/v1/experiments/{experiment}/records"), &AppendRequest { records })?;
            emit(out, json, &r, |o| writeln!(o, "appended {} ({} total)", r.appended, r.total))
        }
        Command::Data(DataCmd::Query { experiment, from_us, to_us, node, freq_from, freq_to, az_from, az_to }) => {
            let filter = QueryFilter {
                t_from_us: *from_us,
                t_to_us: *to_us,
                node_id: node.clone(),
                freq_from_hz: *freq_from,
                freq_to_hz: *freq_to,
                azimuth_from_deg: *az_from,
                azimuth_to_deg: *az_to,
            };
            let r: RecordsResponse = c.get(&format!("/v1/experiments/{experiment}/records?{}", query_string(&filter)))?;
            emit(out, json, &r, |o| {
                for rec in &r.records {
                    write!(o, "{}", rec.to_line())?;
                }
                Ok(())
            })
        }
        Command::Seal { experiment } => {
            let r: SealResponse = c.post(&format!("/v1/experiments/{experiment}/seal"), &json!({}))?;
            emit(out, json, &r, |o| writeln!(o, "{} {}", r.algorithm, r.digest))
        }
        Command::Serve(_) | Command::Specvirt(_) | Command::Replay { .. } | Command::Scenario(ScenarioCmd::Example) => {
            unreachable!("handled locally")
        }
    }
}

/// Encodes the set fields of a filter as a query string.
pub fn query_string(f: &QueryFilter) -> String {
    let mut parts = Vec::new();
    let mut num = |k: &str, v: Option<String>| {
        if let Some(v) = v {
            parts.push(format!("{k}={v}"));
        }
    };
    num("t_from_us", f.t_from_us.map(|v| v.to_string()));
    num("t_to_us", f.t_to_us.map(|v| v.to_string()));
    num("freq_from_hz", f.freq_from_hz.map(|v| format!("{v:?}")));
    num("freq_to_hz", f.freq_to_hz.map(|v| format!("{v:?}")));
    num("azimuth_from_deg", f.azimuth_from_deg.map(|v| format!("{v:?}")));
    num("azimuth_to_deg", f.azimuth_to_deg.map(|v| format!("{v:?}")));
    if let Some(n) = &f.node_id {
        parts.push(format!("node_id={}", percent_encode(n)));
    }
    parts.join("&")
}

fn percent_encode(s: &str) -> String {
    s.bytes()
        .map(|b| match b {
            b'A'..=b'Z' | b'a'..=b'z' | b'0'..=b'9' | b'-' | b'_' | b'.' | b'~' => (b as char).to_string(),
            _ => format!("%{b:02X}"),
        })
        .collect()
}

fn run_server(a: &ServeArgs, out: Out<'_>) -> Result<(), Failure> {
    let mut sessions = Vec::new();
    for u in &a.users {
        sessions.push(Session::parse(u, Role::User).map_err(Failure::Usage)?);
    }
    for u in &a.admins {
        sessions.push(Session::parse(u, Role::Admin).map_err(Failure::Usage)?);
    }
    if sessions.is_empty() {
        return Err(Failure::Usage("give at least one --user or --admin NAME:TOKEN".into()));
    }
    let mut scheduler = SchedulerConfig::default();
    if let Some(v) = a.auto_approve_max_s {
        scheduler.auto_approve_max_s = v;
    }
    if let Some(v) = a.tentative_ttl_s {
        scheduler.tentative_ttl_s = v;
    }
    let config = ServeConfig {
        state_dir: a.state_dir.clone(),
        inventory_path: a.inventory.clone(),
        sessions,
        scheduler,
    };
    let state = AppState::open(config, Arc::new(SystemClock)).map_err(|e| Failure::Local(format!("{}: {}", e.body.error, e.body.message)))?;
    let rt = tokio::runtime::Runtime::new().map_err(|e| Failure::Local(e.to_string()))?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(a.bind).await.map_err(|e| Failure::Local(format!("bind {}: {e}", a.bind)))?;
        let addr = listener.local_addr().map_err(|e| Failure::Local(e.to_string()))?;
        let _ = writeln!(out, "listening on http://{addr}");
        let _ = out.flush();
        serve(listener, Arc::new(state), async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| Failure::Local(e.to_string()))
    })
}

fn replay(dir: &std::path::Path, json: bool, out: Out<'_>) -> Result<(), Failure> {
    let sched = replay_state_dir(dir, SchedulerConfig::default())
        .map_err(|e| Failure::Local(format!("{}: {}", e.body.error, e.body.message)))?;
    let rebuilt = serde_json::to_value(sched.snapshot()).map_err(|e| Failure::Local(e.to_string()))?;
    let path = dir.join(SNAPSHOT_FILE);
    let saved: Option<Value> = std::fs::read(&path).ok().and_then(|b| serde_json::from_slice(&b).ok());
    let matches = saved.as_ref() == Some(&rebuilt);
    let report = json!({ "last_seq": sched.last_seq(), "reservations": sched.reservations().count(), "matches_snapshot": matches });
    emit(out, json, &report, |o| {
        writeln!(
            o,
            "replayed {} events, {} reservations; snapshot {}",
            sched.last_seq(),
            sched.reservations().count(),
            if matches { "matches" } else { "differs" }
        )
    })?;
    if saved.is_some() && !matches {
        return Err(Failure::Local(format!("{} does not match the journal", path.display())));
    }
    Ok(())
}
