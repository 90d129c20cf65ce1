use std::path::Path;

use smlab::experiment::{
    cmd_chart, cmd_flow, cmd_propagate, cmd_quantize, cmd_regularity, cmd_selftest, cmd_wavefront, ExperimentConfig,
};
use smlab::Error;

fn config(name: &str) -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(format!("{name}.toml"));
    ExperimentConfig::load(&path).unwrap()
}

#[test]
fn shipped_scenarios_meet_their_expectations() {
    let runs = [
        ("plane-wave-x3", cmd_regularity as fn(&ExperimentConfig) -> smlab::Result<_>),
        ("plane-wave-x1", cmd_regularity),
        ("uk-n3-angular", cmd_wavefront),
        ("uk-n3-angular-negative", cmd_wavefront),
        ("uk-n3-interior", cmd_wavefront),
        ("uk-n3-h1", cmd_propagate),
        ("uk-n3-h2", cmd_propagate),
        ("packet-h1", cmd_propagate),
        ("flow-h2", cmd_flow),
        ("chart-n4", cmd_chart),
        ("quantize", cmd_quantize),
    ];
    for (name, f) in runs {
        let r = f(&config(name)).unwrap();
        assert!(r.body.ok, "{name}: {:?}", r.body.checks);
        assert!(!r.body.checks.is_empty() || name == "flow-h2", "{name} has no checks");
    }
}

#[test]
fn zero_family_is_absent_everywhere() {
    let mut cfg = config("uk-n3-angular");
    cfg.family = ExperimentConfig::from_toml_str("[family]\ngenerator = \"zero\"\ndim = 3\nj_min = 4\nj_max = 40")
        .unwrap()
        .family;
    cfg.expect.present = Some(vec![]);
    let r = cmd_wavefront(&cfg).unwrap();
    assert!(r.body.ok, "{:?}", r.body.checks);
}

#[test]
fn mismatched_expectation_is_reported() {
    let mut cfg = config("uk-n3-angular");
    cfg.expect.present = Some(vec![2]);
    let r = cmd_wavefront(&cfg).unwrap();
    assert!(!r.body.ok);
    assert_eq!(r.exit_code(), 1);
}

#[test]
fn report_echoes_resolved_defaults() {
    let r = cmd_regularity(&config("plane-wave-x3")).unwrap();
    let c = &r.body.config;
    assert_eq!(c.coisotropic.as_ref().unwrap().w, Some(vec![vec![0.0, 0.0, 1.0]]));
    assert_eq!(c.thresholds.boundedness.slope_min, -0.1);
    assert_eq!(c.thresholds.classify.eps_slope, 0.5);
    let body = r.body_json().unwrap();
    assert!(body.contains("\"ratio_max\": 1.2"));
    assert!(!body.contains("wall_clock"));
}

#[test]
fn missing_sections_are_config_errors() {
    let cfg = ExperimentConfig::default();
    assert!(matches!(cmd_regularity(&cfg), Err(Error::Config(_))));
    assert!(matches!(cmd_wavefront(&cfg), Err(Error::Config(_))));
    assert!(cmd_selftest(&cfg, false).unwrap().body.ok);
}

#[test]
fn perturbed_selftest_fails_composition_only() {
    let r = cmd_selftest(&ExperimentConfig::default(), true).unwrap();
    let failed: Vec<&str> = r.body.checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
    assert_eq!(failed, vec!["composition_slope"]);
}

#[test]
fn reports_written_to_disk() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config("uk-n3-angular");
    cfg.output.plot_data = true;
    let r = cmd_wavefront(&cfg).unwrap();
    let files = r.write(dir.path()).unwrap();
    let names: Vec<String> = files.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
    assert!(names.contains(&"uk-n3-angular.wavefront.body.json".to_string()));
    assert!(names.contains(&"uk-n3-angular.wavefront.wavefront.csv".to_string()));
    assert!(names.contains(&"uk-n3-angular.wavefront.decay.plot.csv".to_string()));
    let csv = std::fs::read_to_string(dir.path().join("uk-n3-angular.wavefront.wavefront.csv")).unwrap();
    assert_eq!(csv.lines().count(), 9);
    assert!(csv.lines().nth(2).unwrap().contains("PRESENT"));
    let body = std::fs::read_to_string(dir.path().join("uk-n3-angular.wavefront.body.json")).unwrap();
    assert_eq!(body, r.body_json().unwrap());
}

#[test]
fn seed_changes_random_grids_only_through_config() {
    let text = "[family]\ngenerator = \"uk\"\nn = 3\nk_min = 8\nk_max = 30\n[probe.grid]\nkind = \"random_interior\"\ncount = 6";
    let mut a = ExperimentConfig::from_toml_str(text).unwrap();
    let r1 = cmd_wavefront(&a).unwrap().body_json().unwrap();
    assert_eq!(r1, cmd_wavefront(&a).unwrap().body_json().unwrap());
    a.seed = 9;
    assert_ne!(r1, cmd_wavefront(&a).unwrap().body_json().unwrap());
}
