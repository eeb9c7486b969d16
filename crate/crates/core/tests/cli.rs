//! End-to-end tests of the `longidesign` binary.

use std::io::Write;
use std::path::PathBuf;
use std::process::{Command, Output, Stdio};

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn temp(name: &str) -> PathBuf {
    std::env::temp_dir().join(format!("longidesign-{}-{name}", std::process::id()))
}

fn run(args: &[&str], stdin: Option<&str>) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_longidesign"))
        .args(args)
        .env_remove("LONGIDESIGN_THREADS")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .expect("binary runs");
    if let Some(text) = stdin {
        child.stdin.take().unwrap().write_all(text.as_bytes()).unwrap();
    } else {
        drop(child.stdin.take());
    }
    child.wait_with_output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn sample_size_csv_has_fixed_header() {
    let path = scenario("table4_ldd_cs.json");
    let o = run(&["n", "--scenario", path.to_str().unwrap(), "--format", "csv"], None);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "task,n,n_enrolled,r,power,cost,mde_coefficient,mde_fraction,unit_variance,max_power,status"
    );
    assert!(lines.next().unwrap().starts_with("n,918,918,6,"));
    assert!(stderr(&o).contains("design.alpha = 0.05"));
}

#[test]
fn demo_scenario_and_json_archive_replay() {
    let path = scenario("demo.json");
    let archive = temp("demo-archive.json");
    let o = run(
        &["optimal", "--scenario", path.to_str().unwrap(), "--format", "json", "--out", archive.to_str().unwrap()],
        None,
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&archive).unwrap()).unwrap();
    assert_eq!(doc["results"][0]["n"], 732);
    assert_eq!(doc["results"][0]["r"], 12);
    assert_eq!(doc["results"][0]["cost"], 93696.0);

    let o = run(&["optimal", "--scenario", archive.to_str().unwrap(), "--format", "csv"], None);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).lines().nth(1).unwrap().starts_with("optimal,732,732,12,0.800433,93696,"));
    let _ = std::fs::remove_file(archive);
}

#[test]
fn wizard_session_is_saved_and_replayable() {
    let saved = temp("wizard.json");
    let answers = "cost\n0.8\n80\n20\ntau\n18\nldd\n0.79\n100\n0\npercent\n3.5\n-0.182\n0.1\nrs\nrel\n0.34\n0.877\n-0.32\n0.364\n6\n18\n";
    let o = run(&["wizard", "--save", saved.to_str().unwrap(), "--format", "csv"], Some(answers));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("optimal,732,732,12,"));

    let o = run(&["optimal", "--scenario", saved.to_str().unwrap(), "--format", "csv"], None);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("optimal,732,732,12,"));
    let _ = std::fs::remove_file(saved);
}

#[test]
fn wizard_defaults_reproduce_the_demo() {
    let saved = temp("wizard-defaults.json");
    let o = run(&["wizard", "--save", saved.to_str().unwrap(), "--format", "csv"], Some(&"\n".repeat(22)));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("optimal,732,732,12,"));
    let _ = std::fs::remove_file(saved);
}

#[test]
fn truncated_wizard_input_is_a_validation_error() {
    let o = run(&["wizard", "--save", temp("never.json").to_str().unwrap()], Some("cost\n"));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_key_is_rejected_with_its_path() {
    let text = std::fs::read_to_string(scenario("table4_ldd_cs.json")).unwrap().replace("\"v_t0\"", "\"v_t\"");
    let o = run(&["n", "--scenario", "-"], Some(&text));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("design.pop.v_t"), "{}", stderr(&o));
}

#[test]
fn correlated_constant_entry_time_is_rejected() {
    let text = std::fs::read_to_string(scenario("table4_ldd_cs.json"))
        .unwrap()
        .replace("\"v_t0\": 0", "\"v_t0\": 0, \"rho_e_t0\": 0.5");
    let o = run(&["n", "--scenario", "-"], Some(&text));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("design.pop.rho_e_t0"), "{}", stderr(&o));
}

#[test]
fn unattainable_power_reports_the_maximum() {
    let text = std::fs::read_to_string(scenario("table4_ldd_cs.json"))
        .unwrap()
        .replace("\"hyp\": \"ldd\"", "\"hyp\": \"cmd\"")
        .replace(
            "{\"scale\": \"ldd\", \"p2\": -0.182, \"p3\": 0.1, \"mu00\": 3.5086}",
            "{\"scale\": \"cmd\", \"p1\": 0.1, \"mu00\": 3.5086}",
        )
        .replace("\"n\": 133", "\"n\": 100");
    let o = run(&["r", "--scenario", "-"], Some(&text));
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("maximum achievable power"), "{}", stderr(&o));
    assert!(stdout(&o).contains("unattainable"));
}

#[test]
fn sweep_rows_follow_axis_order() {
    let path = scenario("sweep_entry_variance.json");
    let o = run(&["sweep", "--scenario", path.to_str().unwrap(), "--format", "csv"], None);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 10);
    assert!(lines[0].starts_with("design.pop.v_t0,design.grid.r,task,n,"));
    assert!(lines[1].starts_with("0,2,n,"));
    assert!(lines[9].starts_with("100,12,n,"));
    assert!(lines[5].starts_with("25,6,n,1299,"));
}

#[test]
fn sweep_output_is_independent_of_thread_count() {
    let path = scenario("sweep_entry_variance.json");
    let args = ["sweep", "--scenario", path.to_str().unwrap(), "--format", "csv"];
    let one = Command::new(env!("CARGO_BIN_EXE_longidesign"))
        .args(args)
        .env("LONGIDESIGN_THREADS", "1")
        .output()
        .unwrap();
    let four = Command::new(env!("CARGO_BIN_EXE_longidesign"))
        .args(args)
        .env("LONGIDESIGN_THREADS", "4")
        .output()
        .unwrap();
    assert_eq!(one.stdout, four.stdout);
}

#[test]
fn bad_thread_count_is_a_validation_error() {
    let o = Command::new(env!("CARGO_BIN_EXE_longidesign"))
        .args(["tables", "--which", "3"])
        .env("LONGIDESIGN_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn tables_regenerate_pilot_values() {
    let o = run(&["tables", "--which", "4", "--format", "csv"], None);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("cs,0,0,146,918"));
    assert!(text.contains("dex,100,0,144,1215"));
    assert!(text.contains("rs,100,0,147,1260"));
    let o = run(&["tables", "--which", "5", "--format", "csv"], None);
    assert!(stdout(&o).contains("dex,0,20,925,7,"));
}

#[test]
fn power_with_simulation_reports_interval() {
    let path = scenario("table4_ldd_cs.json");
    let o = run(
        &["power", "--scenario", path.to_str().unwrap(), "--replicates", "200", "--seed", "3", "--format", "csv"],
        None,
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.lines().next().unwrap().ends_with("simulated_power,ci_low,ci_high,replicates"));
    let again = run(
        &["power", "--scenario", path.to_str().unwrap(), "--replicates", "200", "--seed", "3", "--format", "csv"],
        None,
    );
    assert_eq!(text, stdout(&again));
}
