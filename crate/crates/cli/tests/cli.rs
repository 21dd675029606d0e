use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hjbdual_cli::RunConfig;
use serde_json::Value;

const CAPPED: &str = r#"
[market]
r = 0.0
mu = 0.04
sigma = 0.2
T = 1.0

[utility]
kind = "cap"
cap = 1.0

[simulation]
paths = 4000
x = 0.5

[frontier]
x = 0.5
beta = 0.5
"#;

const TAIL: &str = r#"
[market]
r = 0.05
mu = 0.09
sigma = 0.2
T = 1.0
regime = "with_rate"

[utility]
kind = "power_tail"
p = 0.5
switch = 1.0
slopes = [1.0]
"#;

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn hjbdual(args: &[&str], config: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_hjbdual"));
    cmd.args(args);
    if let Some(c) = config {
        cmd.arg("--config").arg(c);
    }
    cmd.output().unwrap()
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn field(text: &str, key: &str) -> f64 {
    let prefix = format!("{key}=");
    text.lines().find_map(|l| l.strip_prefix(&prefix)).unwrap().parse().unwrap()
}

#[test]
fn value_prints_the_capped_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", CAPPED);
    let out = stdout(&hjbdual(&["value", "--t", "0", "--x", "0.5"], Some(&cfg)));
    assert!(out.starts_with("# hjbdual "));
    assert!((field(&out, "u") - 0.579_260).abs() <= 5e-7);
    assert!(out.contains("u=0.579259709\n"));
    for key in ["y", "u_x", "u_xx", "pi", "risky_amount"] {
        assert!(field(&out, key).is_finite());
    }
    assert!(field(&out, "u_xx") < 0.0);
}

#[test]
fn provenance_line_names_version_seed_and_hash() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", CAPPED);
    let out = stdout(&hjbdual(&["simulate", "--seed", "7"], Some(&cfg)));
    let first = out.lines().next().unwrap();
    assert!(first.starts_with(&format!("# hjbdual {} command=simulate seed=7 config_sha256=", env!("CARGO_PKG_VERSION"))));
    let hash = first.rsplit('=').next().unwrap();
    assert_eq!(hash.len(), 64);
    assert!(hash.chars().all(|c| c.is_ascii_hexdigit()));
}

#[test]
fn simulate_twice_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", CAPPED);
    let args = ["simulate", "--seed", "42", "--scheme", "euler_feedback", "--steps", "100"];
    let a = hjbdual(&args, Some(&cfg));
    let b = hjbdual(&[&args[..], &["--threads", "3"]].concat(), Some(&cfg));
    assert_eq!(stdout(&a), stdout(&b));
    let other = stdout(&hjbdual(&["simulate", "--seed", "43", "--scheme", "euler_feedback", "--steps", "100"], Some(&cfg)));
    assert_ne!(stdout(&a), other);
}

#[test]
fn simulate_summary_and_side_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", CAPPED);
    let hist = dir.path().join("h.json");
    let mart = dir.path().join("m.csv");
    let o = hjbdual(
        &["simulate", "--histogram", hist.to_str().unwrap(), "--martingale", mart.to_str().unwrap()],
        Some(&cfg),
    );
    let out = stdout(&o);
    let rows: Vec<&str> = out.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "paths,steps,exploded,mean,stderr,beta,var,cvar");
    let cols: Vec<f64> = rows[1].split(',').map(|c| c.parse().unwrap()).collect();
    assert_eq!(cols[0], 4000.0);
    assert!((cols[3] - 0.579_26).abs() <= 3.0 * cols[4]);

    let bins: Value = serde_json::from_str(&std::fs::read_to_string(&hist).unwrap()).unwrap();
    let mass: f64 = bins.as_array().unwrap().iter().map(|b| b["mass"].as_f64().unwrap()).sum();
    assert!((mass - 1.0).abs() < 1e-9);
    let table = std::fs::read_to_string(&mart).unwrap();
    assert_eq!(table.lines().filter(|l| !l.starts_with('#')).count(), 4);
}

#[test]
fn frontier_has_documented_shape() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", CAPPED);
    let out = stdout(&hjbdual(&["frontier", "--beta", "0.95", "--lambda", "0,0.25,0.5,1,2"], Some(&cfg)));
    let rows: Vec<&str> = out.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "lambda,var,cvar,expected_utility,objective");
    assert_eq!(rows.len(), 6);
    let cvar: Vec<f64> = rows[1..].iter().map(|r| r.split(',').nth(2).unwrap().parse().unwrap()).collect();
    assert!(cvar.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn turnpike_sweep_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "t.toml", TAIL);
    let out = stdout(&hjbdual(&["turnpike", "--tau", "1,5,40"], Some(&cfg)));
    assert!(out.lines().any(|l| l.starts_with('#') && l.contains("calibration choice")));
    let rows: Vec<&str> = out.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "tau,risky_amount,gap");
    let gaps: Vec<f64> = rows[1..].iter().map(|r| r.split(',').nth(2).unwrap().parse().unwrap()).collect();
    assert_eq!(gaps.len(), 3);
    assert!(gaps[2] < gaps[0] && gaps[2] <= 0.05);
}

#[test]
fn check_emits_flat_snake_case_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", CAPPED);
    let out = stdout(&hjbdual(&["check"], Some(&cfg)));
    let v: Value = serde_json::from_str(&out).unwrap();
    let obj = v.as_object().unwrap();
    for (k, val) in obj {
        assert!(k.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_'), "{k}");
        assert!(!val.is_object() && !val.is_array(), "{k}");
    }
    assert!(obj["dual_residual_max"].as_f64().unwrap() <= 1e-4);
    assert!(obj["primal_residual_max"].as_f64().unwrap() <= 1e-4);
    assert!(obj["v_y_large_deviation"].as_f64().unwrap() <= 1e-6);
    assert_eq!(obj["config_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn printed_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", CAPPED);
    let echoed = stdout(&hjbdual(&["frontier", "--beta", "0.9", "--lambda", "0,1", "--print-config"], Some(&cfg)));
    let parsed = RunConfig::parse(&echoed).unwrap();
    let f = parsed.frontier.as_ref().unwrap();
    assert_eq!(f.beta, 0.9);
    assert_eq!(f.lambdas, vec![0.0, 1.0]);
    assert_eq!(RunConfig::parse(&parsed.to_toml().unwrap()).unwrap(), parsed);

    // echoing the echo changes nothing
    let again = write(dir.path(), "again.toml", &echoed);
    let twice = stdout(&hjbdual(&["frontier", "--print-config"], Some(&again)));
    assert_eq!(RunConfig::parse(&twice).unwrap(), parsed);
    assert_eq!(twice, echoed);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", CAPPED);
    assert_eq!(hjbdual(&["optimize"], Some(&cfg)).status.code(), Some(1));
    assert_eq!(hjbdual(&[], None).status.code(), Some(1));
    assert_eq!(hjbdual(&["value", "--x", "0.5"], None).status.code(), Some(1));
    assert_eq!(hjbdual(&["value", "--x", "0.5"], Some(&dir.path().join("missing.toml"))).status.code(), Some(2));

    let unknown = write(dir.path(), "u.toml", &format!("{CAPPED}\n[extra]\na = 1\n"));
    assert_eq!(hjbdual(&["value", "--x", "0.5"], Some(&unknown)).status.code(), Some(2));
    let bad_market = write(dir.path(), "b.toml", &CAPPED.replace("mu = 0.04", "mu = -0.04"));
    assert_eq!(hjbdual(&["value", "--x", "0.5"], Some(&bad_market)).status.code(), Some(2));
    assert_eq!(hjbdual(&["value", "--x", "-1"], Some(&cfg)).status.code(), Some(2));
    assert_eq!(hjbdual(&["value"], Some(&cfg)).status.code(), Some(2));
    assert_eq!(hjbdual(&["frontier", "--lambda", "1,0"], Some(&cfg)).status.code(), Some(2));
    assert_eq!(hjbdual(&["turnpike"], Some(&cfg)).status.code(), Some(2));
    assert_eq!(hjbdual(&["--help"], None).status.code(), Some(0));
}

#[test]
fn output_flag_writes_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", CAPPED);
    let target = dir.path().join("v.txt");
    let o = hjbdual(&["value", "--x", "0.25", "--output", target.to_str().unwrap()], Some(&cfg));
    assert!(stdout(&o).is_empty());
    let text = std::fs::read_to_string(target).unwrap();
    assert_eq!(field(&text, "x"), 0.25);
}

#[test]
fn flat_region_reports_zero_control() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", CAPPED);
    let out = stdout(&hjbdual(&["value", "--x", "1.5", "--t", "0.5"], Some(&cfg)));
    assert_eq!(field(&out, "u"), 1.0);
    assert_eq!(field(&out, "pi"), 0.0);
}

#[test]
fn shipped_configs_run() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["capped.toml", "power_tail.toml", "merton.toml"] {
        let cfg = dir.join(name);
        let out = stdout(&hjbdual(&["value"], Some(&cfg)));
        assert!(field(&out, "u").is_finite(), "{name}");
        let echoed = stdout(&hjbdual(&["value", "--print-config"], Some(&cfg)));
        assert_eq!(RunConfig::parse(&echoed).unwrap(), RunConfig::load(&cfg).unwrap(), "{name}");
    }
    let merton = stdout(&hjbdual(&["turnpike"], Some(&dir.join("merton.toml"))));
    let gaps: Vec<f64> = merton.lines().filter(|l| !l.starts_with('#')).skip(1).map(|r| r.rsplit(',').next().unwrap().parse().unwrap()).collect();
    assert!(!gaps.is_empty() && gaps.iter().all(|g| *g <= 1e-12), "{gaps:?}");
}
