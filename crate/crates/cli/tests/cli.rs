use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn staffnet(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_staffnet"))
        .current_dir(dir)
        .arg("-q")
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const REGISTRY_HEADER: &str =
    "facility_id,name,state,county_fips,polygon,beds,cases,high_medicaid,high_black,urban,cms_rating,infection_violation,latitude,longitude\n";

fn square(lat: f64, lon: f64) -> String {
    let d = 0.0003;
    format!(
        "\"POLYGON(({a} {b}, {c} {b}, {c} {e}, {a} {e}, {a} {b}))\"",
        a = lon - d,
        b = lat - d,
        c = lon + d,
        e = lat + d
    )
}

#[test]
fn missing_ping_file_exits_2_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("reg.csv"), REGISTRY_HEADER).unwrap();
    let out = staffnet(
        dir.path(),
        &["ingest", "--pings", "nope/pings.csv", "--registry", "reg.csv"],
    );
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("ingest failed"), "{err}");
    assert!(err.contains("nope/pings.csv"), "{err}");
    assert!(!dir.path().join("out").join(".staging-ingest").exists());
}

#[test]
fn later_stage_without_inputs_reports_the_producer() {
    let dir = tempfile::tempdir().unwrap();
    let out = staffnet(dir.path(), &["metrics"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("run the ingest stage first"), "{}", stderr(&out));
    assert_eq!(fs::read_dir(dir.path().join("out")).unwrap().count(), 0);
}

#[test]
fn unknown_setting_in_config_file_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.conf"), "colour = blue\n").unwrap();
    let out = staffnet(dir.path(), &["synth", "--config", "run.conf"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("colour"));
}

#[test]
fn network_without_shared_staff_has_zero_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let mut reg = REGISTRY_HEADER.to_owned();
    for (i, lat) in [40.0, 40.01, 40.02].iter().enumerate() {
        reg += &format!("F{i},Home {i},AA,01001,{},50,{i},0,1,1,3,0,,\n", square(*lat, -80.0));
    }
    fs::write(dir.path().join("reg.csv"), reg).unwrap();
    // one device, three pings, one facility: a visit but no link
    let mut pings = "device_id,timestamp,latitude,longitude\n".to_owned();
    for t in 0..3 {
        pings += &format!("d1,{},40.0,-80.0\n", 1_585_000_000 + t * 60);
    }
    fs::write(dir.path().join("pings.csv"), pings).unwrap();
    for stage in ["ingest", "match", "network", "metrics"] {
        let out = staffnet(dir.path(), &[stage, "--pings", "pings.csv", "--registry", "reg.csv"]);
        assert!(out.status.success(), "{stage}: {}", stderr(&out));
    }
    let metrics = fs::read_to_string(dir.path().join("out/metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    let header: Vec<_> = lines.next().unwrap().split(',').collect();
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 3);
    for row in rows {
        for (name, value) in header.iter().zip(row) {
            if ["degree", "strength", "wand", "eigencentrality"].contains(name) {
                assert_eq!(value.parse::<f64>().unwrap(), 0.0, "{name}");
            }
        }
    }
    let assignments = fs::read_to_string(dir.path().join("out/assignments.csv")).unwrap();
    assert_eq!(assignments.lines().count(), 2);
    assert_eq!(
        fs::read_to_string(dir.path().join("out/edges.csv"))
            .unwrap()
            .lines()
            .count(),
        1
    );
}

#[test]
fn synth_then_all_writes_every_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = staffnet(dir.path(), &["synth", "--n-staff", "600", "--n-states", "2"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let out = staffnet(
        dir.path(),
        &[
            "all",
            "--pings",
            "synth/pings.csv",
            "--registry",
            "synth/facilities.csv",
            "--geocoder",
            "synth/geocoder.tsv",
            "--cases-alt",
            "synth/cases_alt.csv",
        ],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    for name in [
        "pings.clean.csv",
        "facilities.resolved.csv",
        "ingest_report.csv",
        "assignments.csv",
        "edges.csv",
        "cross_state.csv",
        "graphml/AA.graphml",
        "dot/AB.dot",
        "metrics.csv",
        "network_summary.csv",
        "hubs.csv",
        "coefficients.csv",
        "coefficients_alt.csv",
        "regression_table.txt",
        "semi_elasticities.csv",
        "counterfactual.csv",
    ] {
        assert!(dir.path().join("out").join(name).is_file(), "{name}");
    }
    let edges = fs::read_to_string(dir.path().join("out/edges.csv")).unwrap();
    let truth = fs::read_to_string(dir.path().join("synth/edges.csv.truth")).unwrap();
    assert_eq!(edges, truth);
    let leftovers: Vec<_> = fs::read_dir(dir.path().join("out"))
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().starts_with(".staging"))
        .collect();
    assert!(leftovers.is_empty());
}

#[test]
fn help_lists_stages() {
    let out = Command::new(env!("CARGO_BIN_EXE_staffnet"))
        .arg("--help")
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for stage in [
        "ingest",
        "match",
        "network",
        "metrics",
        "regress",
        "counterfactual",
        "synth",
        "all",
    ] {
        assert!(text.contains(stage), "{stage}");
    }
}
