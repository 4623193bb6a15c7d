use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use skisim_core::{Color, Level, SpeedModel};

fn toy(file: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/toy").join(file)
}

fn skisim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_skisim")).args(args).output().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Toy scenario with two replications, written into `dir`.
fn small_scenario(dir: &Path) -> PathBuf {
    let path = dir.join("scenario.json");
    let text = format!(
        r#"{{"network": {:?}, "demand": {:?}, "sim": {{"replications": 2}}}}"#,
        toy("network.json"),
        toy("demand.csv")
    );
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn run_writes_outputs_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let sc = small_scenario(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = skisim(&["run", "--scenario", s(&sc), "--out", s(out), "--seed", "4"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let summary = json(&a.join("summary.json"));
    assert!(summary["lifts_per_skier"].as_f64().unwrap() > 0.0);
    assert_eq!(summary["late_groups"].as_f64(), Some(0.0));
    for f in ["summary.json", "swipes.csv", "waits.csv", "budgets.csv", "swipe_profile.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn invalid_network_exits_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    let o = skisim(&["run", "--scenario", s(&toy("dead_end.json")), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    let err = json(&dir.path().join("error.json"));
    assert_eq!(err["error"], "NotStronglyConnected");
    assert_eq!(err["exit_code"], 2);
}

#[test]
fn malformed_demand_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let demand = dir.path().join("demand.csv");
    std::fs::write(&demand, "generator_id,step_index,skiers\nvillageA,17,35\nvillageB,eighteen,10\n").unwrap();
    let sc = dir.path().join("scenario.json");
    std::fs::write(&sc, format!(r#"{{"network": {:?}, "demand": "demand.csv"}}"#, toy("network.json"))).unwrap();
    let out = dir.path().join("out");
    let o = skisim(&["run", "--scenario", s(&sc), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    let message = json(&out.join("error.json"))["message"].as_str().unwrap().to_string();
    assert!(message.contains("line 3") && message.contains("demand.csv"), "{message}");
}

#[test]
fn beds_become_skiers_in_the_variant() {
    let dir = tempfile::tempdir().unwrap();
    let sc = small_scenario(dir.path());
    let out = dir.path().join("cmp");
    let o = skisim(&[
        "compare", "--base", s(&sc), "--variant", s(&sc), "--out", s(&out), "--beds", "2450", "--generator", "villageA",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = json(&out.join("compare.json"));
    // Group sizes round the synthesized total up by less than the largest group.
    let delta = report["skiers"]["delta"].as_f64().unwrap();
    assert!((delta - 1617.0).abs() < 16.0, "{delta}");
    assert!(report["mean_wait_s"]["delta"].as_f64().unwrap() > 0.0);
    assert!(out.join("base/summary.json").exists() && out.join("variant/summary.json").exists());

    let o = skisim(&["compare", "--base", s(&sc), "--variant", s(&sc), "--out", s(&out), "--beds", "10"]);
    assert!(!o.status.success());
}

#[test]
fn calibrate_writes_a_monotone_trace() {
    let dir = tempfile::tempdir().unwrap();
    let sc = small_scenario(dir.path());
    let observed = dir.path().join("observed.csv");
    std::fs::write(&observed, "lift_id,step,count\nLA1,18,300\nLB1,18,250\nLM1,20,400\nLR1,22,120\n").unwrap();
    let search = dir.path().join("search.json");
    std::fs::write(&search, r#"{"replications": 1, "final_replications": 1}"#).unwrap();
    let out = dir.path().join("cal");
    let o = skisim(&[
        "calibrate", "--scenario", s(&sc), "--observed", s(&observed), "--out", s(&out), "--budget", "5", "--search",
        s(&search), "--random-start", "--seed", "3",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let trace = std::fs::read_to_string(out.join("trace.csv")).unwrap();
    let mut lines = trace.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "best_rmse").unwrap();
    let best: Vec<f64> = lines.map(|l| l.split(',').nth(col).unwrap().parse().unwrap()).collect();
    assert_eq!(best.len(), 5);
    assert!(best.windows(2).all(|w| w[1] <= w[0]), "{best:?}");
    let result = json(&out.join("calibration.json"));
    assert_eq!(result["evaluations"], 5);
    assert!(out.join("params.json").exists());
}

#[test]
fn fit_speeds_from_synthetic_tracks() {
    let dir = tempfile::tempdir().unwrap();
    let colors = ["green", "blue", "red", "black"];
    let mut features = Vec::new();
    for (i, c) in colors.iter().enumerate() {
        let y = i as f64 * 1000.0;
        features.push(format!(
            r#"{{"type": "Feature", "properties": {{"slope_id": "S{i}", "color": "{c}"}}, "geometry": {{"type": "LineString", "coordinates": [[0, {y}], [100000, {y}]]}}}}"#
        ));
    }
    let geometry = dir.path().join("slopes.geojson");
    std::fs::write(&geometry, format!(r#"{{"type": "FeatureCollection", "features": [{}]}}"#, features.join(","))).unwrap();
    // Each level skis only its own color, at a speed alternating around
    // 2 + color index.
    let shares = dir.path().join("shares.csv");
    let mut text = String::from("level,population_share,green,blue,red,black\n");
    for (i, level) in ["beginner", "medium", "good", "expert"].iter().enumerate() {
        let usage: Vec<&str> = (0..4).map(|j| if i == j { "1" } else { "0" }).collect();
        writeln!(text, "{level},0.25,{}", usage.join(",")).unwrap();
    }
    std::fs::write(&shares, text).unwrap();
    let gps = dir.path().join("gps.csv");
    let mut text = String::from("skier_id,timestamp_s,x_m,y_m\n");
    for (i, _) in colors.iter().enumerate() {
        for k in 0..3 {
            let (mut x, y) = (0.0, i as f64 * 1000.0);
            for step in 0..81 {
                writeln!(text, "t{i}{k},{},{x},{y}", step * 30).unwrap();
                let v = 2.0 + i as f64 + if step % 2 == 0 { 0.5 } else { -0.5 };
                x += v * 30.0;
            }
        }
    }
    std::fs::write(&gps, text).unwrap();
    let out = dir.path().join("fit");
    let o = skisim(&[
        "fit-speeds", "--gps", s(&gps), "--geometry", s(&geometry), "--shares", s(&shares), "--out", s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let tracks = json(&out.join("tracks.json"));
    assert_eq!(tracks["tracks_read"], 12);
    assert_eq!(tracks["tracks_kept"], 12);
    let fit = json(&out.join("speed_fit.json"));
    assert_eq!(fit["tracks_used"], 12);
    let model: SpeedModel = serde_json::from_str(&std::fs::read_to_string(out.join("speed_model.json")).unwrap()).unwrap();
    for (level, color) in Level::ALL.into_iter().zip(Color::ALL) {
        let law = model.cell(level, color).unwrap();
        assert!((law.mean - (2.0 + color.index() as f64)).abs() < 1e-3, "{law:?}");
        assert!((law.sd - 0.5).abs() < 0.01, "{law:?}");
    }
}
