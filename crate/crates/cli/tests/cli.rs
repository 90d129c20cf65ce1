use std::path::PathBuf;
use std::process::{Command, Output};

fn smlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_smlab")).args(args).output().unwrap()
}

fn config(name: &str) -> String {
    let p: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "configs", &format!("{name}.toml")].iter().collect();
    p.to_string_lossy().into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn selftest_passes_with_defaults() {
    let o = smlab(&["selftest"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let out = stdout(&o);
    assert!(out.contains("PASS parseval"));
    assert!(!out.contains("FAIL"));
}

#[test]
fn perturbed_selftest_exits_one() {
    let o = smlab(&["selftest", "--perturb-quantization"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("FAIL composition_slope"));
}

#[test]
fn wavefront_scan_and_json_body() {
    let o = smlab(&["wavefront", "--config", &config("uk-n3-angular"), "--json"]);
    assert_eq!(o.status.code(), Some(0));
    let body: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(body["command"], "wavefront");
    assert_eq!(body["results"]["verdicts"][1]["classification"], "PRESENT");
    assert_eq!(body["results"]["verdicts"][5]["slope"], "inf");
    assert_eq!(body["config"]["thresholds"]["classify"]["m_max"], 3.0);
}

#[test]
fn violated_expectation_exits_one() {
    let o = smlab(&["propagate", "--config", &config("uk-n3-h1"), "--l", "-1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(config("packet-h1")).unwrap().replace("pass = false", "pass = true");
    let path = dir.path().join("packet.toml");
    std::fs::write(&path, text).unwrap();
    let o = smlab(&["propagate", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("PRESENT -> ABSENT"));
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "scenario = \"x\"\nunknown_key = 3\n").unwrap();
    let o = smlab(&["wavefront", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown"));
    assert_eq!(smlab(&["regularity"]).status.code(), Some(2));
    assert_eq!(smlab(&["nonsense"]).status.code(), Some(2));
    assert_eq!(smlab(&["selftest", "--m", "big"]).status.code(), Some(2));
    assert_eq!(smlab(&["wavefront", "--config", "/nonexistent.toml"]).status.code(), Some(2));
}

#[test]
fn outputs_written_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let run = || {
        let o =
            smlab(&["regularity", "--config", &config("plane-wave-x1"), "--out", out, "--plot-data", "--threads", "2"]);
        assert_eq!(o.status.code(), Some(0));
        std::fs::read(dir.path().join("plane-wave-x1.regularity.body.json")).unwrap()
    };
    let first = run();
    assert_eq!(first, run());
    assert!(dir.path().join("plane-wave-x1.regularity.regularity.csv").exists());
    assert!(dir.path().join("plane-wave-x1.regularity.regularity.plot.csv").exists());
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("plane-wave-x1.regularity.report.json")).unwrap())
            .unwrap();
    assert!(report["header"]["wall_clock_seconds"].is_number());
}

#[test]
fn flow_chart_quantize_commands() {
    for (cmd, name) in [("flow", "flow-h2"), ("chart", "chart-n4"), ("quantize", "quantize")] {
        let o = Command::new(env!("CARGO_BIN_EXE_smlab"))
            .args([cmd, "--config", &config(name)])
            .env("SMLAB_THREADS", "1")
            .output()
            .unwrap();
        assert_eq!(o.status.code(), Some(0), "{cmd}: {}", stdout(&o));
    }
    let o = smlab(&["flow", "--config", &config("flow-h2"), "--json"]);
    let body: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let x = body["results"]["x_end"].as_array().unwrap();
    assert!((x[0].as_f64().unwrap() - 0.6).abs() < 1e-9);
    assert!((x[1].as_f64().unwrap() - 0.8).abs() < 1e-9);
}
