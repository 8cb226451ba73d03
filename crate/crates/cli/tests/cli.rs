use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn weier(args: &[&str], threads: Option<&str>, dir: &Path) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_weier"));
    cmd.args(args).current_dir(dir);
    match threads {
        Some(t) => cmd.env("WEIER_THREADS", t),
        None => cmd.env_remove("WEIER_THREADS"),
    };
    cmd.output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&o.stdout)))
}

#[test]
fn lattice_info_reports_pole_critical() {
    let dir = tempfile::tempdir().unwrap();
    let o = weier(&["lattice", "info", "--m", "-3", "--require-pole-critical"], None, dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(&o);
    assert!(v["critical_values"].as_array().unwrap().len() == 3);
}

#[test]
fn square_lattice_is_not_pole_critical() {
    let dir = tempfile::tempdir().unwrap();
    let o = weier(&["lattice", "info", "--lattice", "1,0,0,1", "--require-pole-critical"], None, dir.path());
    assert_eq!(code(&o), 3);
    let o = weier(&["lattice", "info", "--lattice", "1,0,0,1"], None, dir.path());
    assert_eq!(code(&o), 0);
}

#[test]
fn configuration_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&weier(&["dim", "bound", "--a", "100"], None, dir.path())), 2);
    assert_eq!(code(&weier(&["lattice", "info", "--m", "-2"], None, dir.path())), 2);
    assert_eq!(code(&weier(&["show-config"], Some("zero"), dir.path())), 2);
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"bogus": 1}"#).unwrap();
    assert_eq!(code(&weier(&["--config", bad.to_str().unwrap(), "show-config"], None, dir.path())), 2);
    assert_eq!(code(&weier(&["escape-map", "--resolution", "0"], None, dir.path())), 2);
}

#[test]
fn config_round_trips_through_show_config() {
    let dir = tempfile::tempdir().unwrap();
    let o = weier(&["show-config", "--r", "0.03", "--a", "2000", "--seed", "9"], None, dir.path());
    assert_eq!(code(&o), 0);
    let path = dir.path().join("run.json");
    std::fs::write(&path, &o.stdout).unwrap();
    let again = weier(&["--config", path.to_str().unwrap(), "show-config"], None, dir.path());
    assert_eq!(o.stdout, again.stdout);
    let v = json(&again);
    assert_eq!(v["r"], 0.03);
    assert_eq!(v["seed"], 9);
}

#[test]
fn dim_bound_families() {
    let dir = tempfile::tempdir().unwrap();
    let o = weier(&["dim", "bound", "--family", "ternary", "--n-max", "200"], None, dir.path());
    assert_eq!(code(&o), 0);
    assert!((json(&o)["extrapolated"].as_f64().unwrap() - 2f64.ln() / 3f64.ln()).abs() < 1e-6);
    let o = weier(&["dim", "bound", "--a", "1e6"], None, dir.path());
    assert_eq!(code(&o), 0);
    assert!(json(&o)["gap"].as_f64().unwrap() < 1e-3);
    assert_eq!(code(&weier(&["dim", "bound", "--n-max", "3"], None, dir.path())), 6);
}

#[test]
fn orbit_csv_with_status_footer() {
    let dir = tempfile::tempdir().unwrap();
    let o = weier(&["orbit", "--beta", "1,0", "--steps", "4"], None, dir.path());
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("k,re,im,abs"));
    let footer = text.lines().last().unwrap().strip_prefix("# ").unwrap();
    let v: Value = serde_json::from_str(footer).unwrap();
    assert_eq!(v["kind"], "prepole");
    assert_eq!(v["level"], 1);
}

#[test]
fn escape_map_is_thread_count_independent() {
    let dir = tempfile::tempdir().unwrap();
    let run = |t: &str| {
        let out = format!("map{t}.pgm");
        let sum = format!("map{t}.csv");
        let o = weier(
            &["escape-map", "--resolution", "64", "--depth", "3", "--out", &out, "--summary", &sum],
            Some(t),
            dir.path(),
        );
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        (std::fs::read(dir.path().join(out)).unwrap(), std::fs::read_to_string(dir.path().join(sum)).unwrap())
    };
    let (a, sa) = run("1");
    let (b, sb) = run("2");
    assert_eq!(a, b);
    assert_eq!(sa, sb);
    assert!(a.starts_with(b"P2\n64 64\n255\n"));
    let header = sa.lines().next().unwrap();
    assert!(header.starts_with("resolution,pixels,escaping,prepole,bounded,unresolved"));
}

#[test]
fn cantor_build_is_thread_count_independent() {
    let dir = tempfile::tempdir().unwrap();
    let run = |t: &str| {
        let tree = format!("tree{t}.json");
        let stats = format!("stats{t}.csv");
        let o = weier(
            &["cantor", "build", "--depth", "2", "--branching", "2", "--tree", &tree, "--stats", &stats],
            Some(t),
            dir.path(),
        );
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        assert_eq!(json(&o)["passed"], true);
        (std::fs::read(dir.path().join(tree)).unwrap(), std::fs::read_to_string(dir.path().join(stats)).unwrap())
    };
    let (a, sa) = run("1");
    let (b, _) = run("3");
    assert_eq!(a, b);
    assert!(sa.starts_with("level,cylinders,n_available"));
    assert_eq!(sa.lines().count(), 3);
    let tree: Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(tree["nodes"].as_array().unwrap().len(), 4);
    assert_eq!(code(&weier(&["cantor", "build", "--branching", "0"], None, dir.path())), 2);
}

#[test]
fn verify_all_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = weier(&["verify", "all"], None, dir.path());
    let text = String::from_utf8_lossy(&o.stdout);
    assert_eq!(code(&o), 0, "{text}");
    assert!(text.lines().all(|l| !l.starts_with("FAIL")));
    assert!(text.trim_end().ends_with("checks passed"));
}
