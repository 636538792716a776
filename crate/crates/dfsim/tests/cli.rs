// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;
use std::process::Command;

use dfsim::dfsim_core::engine::Algorithm;
use dfsim::dfsim_core::scenario::{exp1, exp2, preset, run_scenario, ResultRow, ScenarioConfig};
use dfsim::dfsim_core::SimTime;
use dfsim::{emit_results, run_parallel, Error, Format, ScenarioFile};

fn repo_file(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn small_exp1() -> ScenarioConfig {
    let mut c = exp1();
    c.runs = 2;
    c.election.inter_pe_delays = vec![SimTime::from_millis(5), SimTime::from_millis(15)];
    c
}

fn dfsim(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_dfsim")).args(args).output().unwrap()
}

#[test]
fn presets_survive_a_toml_round_trip() {
    for config in [exp1(), exp2()] {
        let text = ScenarioFile::from_config(&config).to_toml();
        let back = ScenarioFile::parse(&text).unwrap().into_config().unwrap();
        assert_eq!(back, config);
    }
}

#[test]
fn shipped_scenario_files_match_the_presets() {
    for name in ["exp1", "exp2"] {
        let file = ScenarioFile::load(&repo_file(&format!("scenarios/{name}.toml"))).unwrap();
        assert_eq!(file.into_config().unwrap(), preset(name).unwrap(), "{name}");
    }
}

#[test]
fn invalid_fields_are_named_in_the_diagnostic() {
    let base = ScenarioFile::from_config(&exp1()).to_toml();
    let cases = [
        ("runs = 10", "runs = 0", "runs"),
        (
            "inter_pe_delays_ms = [0.0, 5.0, 10.0, 15.0, 20.0]",
            "inter_pe_delays_ms = []",
            "inter_pe_delays_ms",
        ),
        ("duration_s = 0.05", "duration_s = 0.0", "duration_s"),
        (
            "algorithm = \"service_carving\"",
            "algorithm = \"flood\"",
            "scenario.algorithm",
        ),
        (
            "late_route = \"timer\"",
            "late_route = \"never\"",
            "election.late_route",
        ),
        ("timer_ms = 10.0", "timer_ms = -1.0", "election.timer_ms"),
        ("seed = 1", "seed = 1\nspeed = 2", "speed"),
    ];
    for (from, to, field) in cases {
        assert!(base.contains(from), "{from}");
        let text = base.replacen(from, to, 1);
        let err = ScenarioFile::parse(&text)
            .and_then(ScenarioFile::into_config)
            .unwrap_err();
        assert!(err.to_string().contains(field), "{field}: {err}");
    }
}

#[test]
fn explicit_topology_sections_are_accepted() {
    let text = r#"
        [scenario]
        algorithm = "sdn"
        runs = 1
        seed = 3
        duration_s = 0.02

        [topology]
        node = [
            { name = "Src", role = "host" },
            { name = "R", role = "core" },
            { name = "PE-A", role = "pe" },
            { name = "PE-B", role = "pe" },
            { name = "S", role = "spine" },
            { name = "T", role = "tor" },
            { name = "Dst", role = "host" },
        ]
        link = [
            { from = "Src", to = "R", bandwidth_mbps = 10000, delay_ms = 1 },
            { from = "R", to = "PE-A", bandwidth_mbps = 1000, delay_ms = 1 },
            { from = "R", to = "PE-B", bandwidth_mbps = 1000, delay_ms = 1 },
            { from = "PE-A", to = "S", bandwidth_mbps = 1000, delay_ms = 1 },
            { from = "PE-B", to = "S", bandwidth_mbps = 1000, delay_ms = 1 },
            { from = "S", to = "T", bandwidth_mbps = 1000, delay_ms = 1 },
            { from = "T", to = "Dst", bandwidth_mbps = 10000, delay_ms = 1 },
        ]

        [[network]]
        vni = 20
        esi = "ES-1"
        evi = "EVI-1"
        tors = ["T"]

        [election]
        timer_ms = 5
        jitter_ms = 0
        inter_pe_delays_ms = [0]
        initially_up = ["PE-A", "PE-B"]

        [[traffic]]
        kind = "bum"
        src = "Src"
        dst = "Dst"
        rate_mbps = 60
        stop_s = 0.02
        vni = 20
    "#;
    let config = ScenarioFile::parse(text).unwrap().into_config().unwrap();
    let out = run_scenario(&config).unwrap();
    assert_eq!(out.len(), 1);
    let row = &out[0].row;
    assert_eq!(row.offered, 100);
    assert_eq!(row.received_unique, 100);
    assert_eq!(row.duplicates, 0);
    assert!(out[0].violations.is_empty(), "{:?}", out[0].violations);
}

#[test]
fn row_count_and_order_follow_the_sweep() {
    let config = small_exp1();
    let parallel = run_parallel(&config).unwrap();
    assert_eq!(parallel.len(), 2 * 2 * 2);
    let sequential = run_scenario(&config).unwrap();
    let rows = |o: &[dfsim::dfsim_core::scenario::RunOutcome]| o.iter().map(|x| x.row.clone()).collect::<Vec<_>>();
    assert_eq!(rows(&parallel), rows(&sequential));
}

#[test]
fn csv_has_a_header_and_one_line_per_row() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = small_exp1();
    config.runs = 1;
    config.election.inter_pe_delays.truncate(1);
    config.bum_rates_bps.truncate(1);
    let rows: Vec<ResultRow> = run_parallel(&config).unwrap().into_iter().map(|o| o.row).collect();
    assert_eq!(rows.len(), 1);
    let path = dir.path().join("one.csv");
    emit_results(&rows, &path, Format::Csv).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], ResultRow::COLUMNS.join(","));
    assert!(lines[1].starts_with("0,service_carving,5,75,312,"), "{}", lines[1]);
}

#[test]
fn json_is_an_array_of_objects_keyed_by_column() {
    let dir = tempfile::tempdir().unwrap();
    let rows: Vec<ResultRow> = run_parallel(&small_exp1())
        .unwrap()
        .into_iter()
        .map(|o| o.row)
        .collect();
    let path = dir.path().join("rows.json");
    emit_results(&rows, &path, Format::Json).unwrap();
    let value: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    let array = value.as_array().unwrap();
    assert_eq!(array.len(), rows.len());
    for (obj, row) in array.iter().zip(&rows) {
        let obj = obj.as_object().unwrap();
        let mut keys: Vec<&str> = obj.keys().map(String::as_str).collect();
        let mut expected = ResultRow::COLUMNS.to_vec();
        keys.sort_unstable();
        expected.sort_unstable();
        assert_eq!(keys, expected);
        assert_eq!(obj["offered"], row.offered);
        assert_eq!(obj["algo"], "service_carving");
        assert_eq!(
            obj["df_change_times"].as_array().unwrap().len(),
            row.df_change_times.len()
        );
    }
}

#[test]
fn emitting_nothing_or_to_a_bad_path_fails() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        emit_results(&[], &dir.path().join("x.csv"), Format::Csv),
        Err(Error::NoRows)
    ));
    let rows: Vec<ResultRow> = run_parallel(&small_exp1())
        .unwrap()
        .into_iter()
        .map(|o| o.row)
        .collect();
    let bad = dir.path().join("missing").join("x.csv");
    assert!(matches!(emit_results(&rows, &bad, Format::Csv), Err(Error::Io { .. })));
}

#[test]
fn cli_exit_codes() {
    let ok = dfsim(&["--preset", "exp1", "--runs", "1", "--algo", "sdn"]);
    assert!(ok.status.success());
    let stdout = String::from_utf8(ok.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 1 + 5 * 2);
    assert!(
        stdout.lines().skip(1).all(|l| l.split(',').nth(7) == Some("0")),
        "sdn never duplicates"
    );

    let check = dfsim(&["--preset", "exp1", "--runs", "1", "--algo", "handshake", "--check"]);
    assert!(check.status.success());
    assert!(check.stdout.is_empty());

    let unknown = dfsim(&["--preset", "exp7"]);
    assert_eq!(unknown.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("exp7"));

    let bad_algo = dfsim(&["--preset", "exp1", "--algo", "flood"]);
    assert_eq!(bad_algo.status.code(), Some(2));

    let zero_runs = dfsim(&["--preset", "exp1", "--runs", "0"]);
    assert_eq!(zero_runs.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&zero_runs.stderr).contains("runs"));

    let missing = dfsim(&["--scenario", "/nonexistent/scenario.toml"]);
    assert_eq!(missing.status.code(), Some(2));

    let no_input = dfsim(&[]);
    assert!(!no_input.status.success());
}

#[test]
fn cli_scenario_file_and_overrides() {
    let path = repo_file("scenarios/exp1.toml");
    let path = path.to_str().unwrap();
    let out = dfsim(&[
        "--scenario",
        path,
        "--runs",
        "1",
        "--seed",
        "5",
        "--algo",
        "handshake",
        "--format",
        "json",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let value: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let rows = value.as_array().unwrap();
    assert_eq!(rows.len(), 10);
    assert!(rows.iter().all(|r| r["algo"] == "handshake" && r["duplicates"] == 0));

    let printed = dfsim(&["--preset", "exp2", "--print-scenario"]);
    assert!(printed.status.success());
    let text = String::from_utf8(printed.stdout).unwrap();
    assert_eq!(ScenarioFile::parse(&text).unwrap().into_config().unwrap(), exp2());
}

#[test]
fn delay_zero_without_jitter_gives_no_duplicates() {
    for algo in Algorithm::ALL {
        let mut c = exp1();
        c.algorithm = algo;
        c.runs = 1;
        c.election.jitter = SimTime::ZERO;
        c.election.inter_pe_delays = vec![SimTime::ZERO];
        for o in run_parallel(&c).unwrap() {
            assert!(o.row.duplicates <= 1, "{algo}: {:?}", o.row);
        }
    }
}
