mod common;

use std::io::{BufRead, BufReader};
use std::process::{Command, Stdio};
use std::sync::Arc;

use common::*;
use cornet_core::chanem::ChannelScenario;
use cornet_core::Timestamp;
use cornet_gateway::cli::{parse_time, run_with};
use cornet_gateway::clock::ManualClock;
use cornet_gateway::{AppState, ServeConfig, ServerHandle};

struct Run {
    code: i32,
    out: String,
    err: String,
}

fn cli(args: &[&str]) -> Run {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let mut full = vec!["cornet"];
    full.extend_from_slice(args);
    let code = run_with(full, &mut out, &mut err);
    Run {
        code,
        out: String::from_utf8(out).unwrap(),
        err: String::from_utf8(err).unwrap(),
    }
}

fn server() -> (ServerHandle, Arc<ManualClock>) {
    let clock = Arc::new(ManualClock::at(T0));
    let config = ServeConfig {
        sessions: sessions(),
        ..ServeConfig::default()
    };
    let state = Arc::new(AppState::open(config, clock.clone()).unwrap());
    (ServerHandle::start(state).unwrap(), clock)
}

#[test]
fn times_parse_against_the_server_clock() {
    let now = Timestamp(1_000);
    assert_eq!(parse_time("now", now), Ok(now));
    assert_eq!(parse_time("now+90", now), Ok(Timestamp(1_090)));
    assert_eq!(parse_time("now+5m", now), Ok(Timestamp(1_300)));
    assert_eq!(parse_time("now+2h", now), Ok(Timestamp(8_200)));
    assert_eq!(parse_time("now+1d", now), Ok(Timestamp(87_400)));
    assert_eq!(parse_time("1700000000", now), Ok(Timestamp(1_700_000_000)));
    assert_eq!(parse_time("2023-11-14T22:13:20Z", now), Ok(Timestamp(1_700_000_000)));
    assert_eq!(parse_time("2023-11-14T23:13:20+01:00", now), Ok(Timestamp(1_700_000_000)));
    assert!(parse_time("tomorrow", now).is_err());
    assert!(parse_time("now+3w", now).is_err());
}

#[test]
fn usage_errors_exit_two() {
    let help = cli(&["--help"]);
    assert_eq!(help.code, 0);
    assert!(help.out.contains("reserve"));
    assert_eq!(cli(&[]).code, 2);
    assert_eq!(cli(&["frobnicate"]).code, 2);
    let r = cli(&["--server", "http://127.0.0.1:9", "reserve", "--usrps", "1", "--hours", "1", "--start", "0", "--channel", "2400"]);
    assert_eq!(r.code, 2, "{}", r.err);
    assert_eq!(cli(&["reserve", "--hours", "1", "--end", "5"]).code, 2);
    assert_eq!(cli(&["serve"]).code, 2);
    assert_eq!(cli(&["serve", "--user", "nocolon"]).code, 2);
}

#[test]
fn unreachable_server_is_a_failure() {
    let r = cli(&["--server", "http://127.0.0.1:9", "--token", "x", "list"]);
    assert_eq!(r.code, 1);
    assert!(r.err.starts_with("0 ConnectionError"), "{}", r.err);
}

#[test]
fn local_commands() {
    let r = cli(&["specvirt", "roundtrip", "--slots", "2", "--len", "16384", "--seed", "3"]);
    assert_eq!(r.code, 0, "{}", r.err);
    assert_eq!(r.out.lines().count(), 2);
    assert!(r.out.contains("evm"));
    let r = cli(&["--json", "specvirt", "roundtrip", "--slots", "3", "--len", "16384"]);
    let q: serde_json::Value = serde_json::from_str(&r.out).unwrap();
    assert_eq!(q.as_array().unwrap().len(), 3);
    let r = cli(&["scenario", "example"]);
    assert_eq!(r.code, 0);
    let sc = ChannelScenario::from_toml(&r.out, None).unwrap();
    assert_eq!(sc, ChannelScenario::example());
}

#[test]
fn failures_report_status_and_error_name() {
    let (srv, _clock) = server();
    let url = srv.url();
    let as_alice = |args: &[&str]| {
        let mut a = vec!["--server", url.as_str(), "--token", ALICE];
        a.extend_from_slice(args);
        cli(&a)
    };
    let r = as_alice(&["reserve", "--usrps", "1", "--channel", "2400:20", "--start", "now+10m", "--hours", "1"]);
    assert_eq!(r.code, 0, "{}", r.err);
    let id = r.out.trim().to_string();
    assert_eq!(id, "res-000001");
    let r = as_alice(&["evaluate", &id]);
    assert!(r.out.contains("Confirmed"), "{}", r.out);
    let r = as_alice(&["activate", &id]);
    assert_eq!(r.code, 1);
    assert!(r.err.starts_with("409 StateError: "), "{}", r.err);
    let r = as_alice(&["approve", &id]);
    assert!(r.err.starts_with("403 Forbidden: "), "{}", r.err);
    let r = as_alice(&["show", "res-999999"]);
    assert!(r.err.starts_with("404 NotFound: "), "{}", r.err);
    let r = cli(&["--server", url.as_str(), "--token", "bad", "list"]);
    assert!(r.err.starts_with("401 Unauthorized: "), "{}", r.err);
    let r = as_alice(&["reserve", "--usrps", "1", "--channel", "9000:20", "--hours", "1"]);
    assert!(r.err.starts_with("400 LicenseError: "), "{}", r.err);

    let r = as_alice(&["--json", "show", &id]);
    let shown: serde_json::Value = serde_json::from_str(&r.out).unwrap();
    assert_eq!(shown["window"]["start_utc"], T0 + 600);
    assert_eq!(shown["window"]["end_utc"], T0 + 4200);
    // Refused requests leave nothing behind.
    let r = as_alice(&["list"]);
    assert_eq!(r.out.lines().count(), 1);
    let r = as_alice(&["status"]);
    assert_eq!(r.out.lines().count(), 5);
    let r = as_alice(&["capacity"]);
    assert!(r.out.contains("devices: 0 held, 10 free of 10"), "{}", r.out);
}

#[test]
fn records_round_trip_through_files() {
    let (srv, _clock) = server();
    let url = srv.url();
    let as_alice = |args: &[&str]| {
        let mut a = vec!["--server", url.as_str(), "--token", ALICE];
        a.extend_from_slice(args);
        cli(&a)
    };
    let id = as_alice(&["reserve", "--usrps", "1", "--channel", "915:2", "--hours", "1"]).out.trim().to_string();
    as_alice(&["evaluate", &id]);
    assert_eq!(as_alice(&["activate", &id]).code, 0);
    let r = as_alice(&["experiment", "open", &id, "--format", "sc16", "--format", "SC8"]);
    assert_eq!(r.code, 0, "{}", r.err);
    let exp = r.out.trim().to_string();
    assert_eq!(as_alice(&["experiment", "open", &id, "--format", "mp3"]).code, 2);

    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("in.tsv");
    let lines = "# measured by hand\n\
        100\tn1\txyz:0.0,1.5,2.0\t915000000.0\t10.0\t-60.5\n\
        200\tn2\tlabel:lab bench\t915000000.0\t200.0\t-61.25\n\
        300\tn1\txyz:0.0,1.5,2.0\t915000000.0\t355.5\t-59.0\n";
    std::fs::write(&file, lines).unwrap();
    let r = as_alice(&["data", "append", &exp, file.to_str().unwrap()]);
    assert_eq!(r.out.trim(), "appended 3 (3 total)", "{}", r.err);
    let r = as_alice(&["data", "query", &exp]);
    assert_eq!(r.out, lines.lines().skip(1).map(|l| format!("{l}\n")).collect::<String>());
    let r = as_alice(&["data", "query", &exp, "--node", "n1", "--az-from", "350", "--az-to", "20"]);
    assert_eq!(r.out.lines().count(), 2);
    let r = as_alice(&["data", "query", &exp, "--from-us", "150", "--to-us", "300"]);
    assert_eq!(r.out.lines().count(), 1);
    let r = as_alice(&["seal", &exp]);
    assert!(r.out.starts_with("sha256 "), "{}", r.out);
    let r = as_alice(&["experiment", "show", &exp]);
    assert!(r.out.contains("sealed sha256"), "{}", r.out);
}

#[test]
fn binary_serves_and_answers() {
    let bin = env!("CARGO_BIN_EXE_cornet");
    let mut child = Command::new(bin)
        .args(["serve", "--bind", "127.0.0.1:0", "--user", "alice:alice-token", "--admin", "root:root-token"])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let url = line.trim().strip_prefix("listening on ").expect("address line").to_string();
    let out = Command::new(bin)
        .args(["--server", &url, "inventory"])
        .env("CORNET_TOKEN", ALICE)
        .output()
        .unwrap();
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let inv = cornet_core::inventory::load_inventory(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(inv, cornet_core::inventory::Inventory::testbed_default());
}
