use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "
calibration.alpha = 0.1
calibration.eta = 0.05
calibration.score_bound = 1
calibration.horizon = 500
algorithm = ocp
channel.kind = iid
channel.p = 0.2
stream.generator = uniform
n_trials = 4
base_seed = 7
";

fn rocp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rocp"))
        .args(args)
        .output()
        .expect("spawn rocp")
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("exp.conf");
    fs::write(&p, text).unwrap();
    p.display().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn run_writes_summary_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let conf = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let o = rocp(&["run", "--config", &conf, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));

    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["summary"]["n_trials"], 4);
    assert_eq!(summary["config"]["calibration"]["horizon"], 500);
    let trace = fs::read_to_string(out.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 501);
    assert!(trace.starts_with("t,r,s,e_true,e_obs,z,set_size,in_range,is_training"));
}

#[test]
fn zero_trials_exit_three_with_summary() {
    let dir = tempfile::tempdir().unwrap();
    let conf = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let o = rocp(&[
        "run",
        "--config",
        &conf,
        "--trials",
        "0",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["summary"]["n_trials"], 0);
    assert!(summary["summary"].get("final_metrics").is_none());
}

#[test]
fn named_flags_override_file_and_set() {
    let dir = tempfile::tempdir().unwrap();
    let conf = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let o = rocp(&[
        "run",
        "--config",
        &conf,
        "--set",
        "calibration.alpha=0.3",
        "--set",
        "n_trials=3",
        "--alpha",
        "0.2",
        "--algorithm",
        "frocp",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["config"]["calibration"]["alpha"], 0.2);
    assert_eq!(summary["config"]["algorithm"], "frocp");
    assert_eq!(summary["summary"]["n_trials"], 3);
}

#[test]
fn invalid_config_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let conf = write_config(dir.path(), &format!("{SMALL}calibration.alpha = 1.5\n"));
    let o = rocp(&["run", "--config", &conf]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("alpha"));

    let conf = write_config(dir.path(), &format!("{SMALL}channel.colour = red\n"));
    assert_eq!(rocp(&["run", "--config", &conf]).status.code(), Some(1));
    assert_eq!(rocp(&["run", "--preset", "nope"]).status.code(), Some(1));
}

#[test]
fn sweep_writes_one_row_per_point() {
    let dir = tempfile::tempdir().unwrap();
    let conf = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let o = rocp(&[
        "sweep",
        "--config",
        &conf,
        "--vary",
        "channel.p=0.1,0.3",
        "--vary",
        "algorithm=ocp,frocp",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let table = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows.len(), 5);
    assert!(rows[0].starts_with("channel.p,algorithm,n_trials"));
    assert!(rows[1].starts_with("0.1,ocp,4"));
    assert!(rows[4].starts_with("0.3,frocp,4"));
    assert_eq!(stdout(&o), table);
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("sweep.json")).unwrap()).unwrap();
    assert_eq!(doc.as_array().map(Vec::len), Some(4));
}

#[test]
fn check_bounds_accepts_real_trace_and_flags_tampered_one() {
    let dir = tempfile::tempdir().unwrap();
    let conf = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let o = rocp(&["run", "--config", &conf, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let trace = out.join("trace.csv");

    let o = rocp(&["check-bounds", "--trace", trace.to_str().unwrap(), "--config", &conf]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(report["entries"]
        .as_array()
        .unwrap()
        .iter()
        .any(|e| e["name"] == "theorem1"));

    // mark every round as a true miss
    let text = fs::read_to_string(&trace).unwrap();
    let mut tampered = String::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            tampered.push_str(line);
        } else {
            let mut cols: Vec<&str> = line.split(',').collect();
            cols[3] = "1";
            tampered.push_str(&cols.join(","));
        }
        tampered.push('\n');
    }
    let bad = dir.path().join("tampered.csv");
    fs::write(&bad, tampered).unwrap();
    let o = rocp(&["check-bounds", "--trace", bad.to_str().unwrap(), "--config", &conf]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn summary_is_independent_of_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let conf = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let docs: Vec<String> = ["1", "4"]
        .iter()
        .map(|threads| {
            let o = rocp(&[
                "run",
                "--config",
                &conf,
                "--parallelism",
                threads,
                "--out",
                out.to_str().unwrap(),
            ]);
            assert_eq!(o.status.code(), Some(0));
            fs::read_to_string(out.join("summary.json")).unwrap()
        })
        .collect();
    assert!(docs[0] == docs[1], "summaries differ between thread counts");
}
