use std::path::Path;
use std::process::{Command, Output};

use normcrit::solvers::SolveResult;
use normcrit_cli::run::ConstantsReport;
use tempfile::TempDir;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_normcrit"))
        .args(args)
        .current_dir(dir)
        .env("NORMCRIT_CACHE", dir.join("cache"))
        .output()
        .expect("spawn normcrit")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn read(dir: &Path, file: &str) -> String {
    std::fs::read_to_string(dir.join(file)).unwrap()
}

fn column(csv: &str, name: &str) -> Vec<String> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let k = header.iter().position(|h| *h == name).unwrap();
    lines.map(|l| l.split(',').nth(k).unwrap().to_string()).collect()
}

#[test]
fn constants_table() {
    let tmp = TempDir::new().unwrap();
    let o = run(tmp.path(), &["constants", "--p", "2.5", "--beta", "2", "--a1", "0.1", "--a2", "0.1", "-o", "c"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let c: ConstantsReport = serde_json::from_str(&read(tmp.path(), "c/result.json")).unwrap();
    assert!((c.gamma_p - 0.4).abs() < 1e-15);
    assert!((c.k1.unwrap() - 1.0 / 3.0).abs() < 1e-15);
    assert!((c.k2.unwrap() - 1.0 / 3.0).abs() < 1e-15);
    assert!((c.sobolev.powi(2) - 32.0 * std::f64::consts::PI.powi(2) / 3.0).abs() < 1e-12);
    assert_eq!(c.geometry_holds, Some(true));
    let stdout = String::from_utf8_lossy(&o.stdout);
    for key in ["gamma_p", "k1", "k2", "S", "C_p", "T", "gamma1"] {
        assert!(stdout.lines().any(|l| l.starts_with(&format!("{key}\t"))), "{key}");
    }
}

#[test]
fn geometry_refusal_exits_3_and_names_the_inequality() {
    let tmp = TempDir::new().unwrap();
    let o = run(tmp.path(), &["ground", "--a1", "6", "--a2", "6"]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("T <= gamma1"));
}

#[test]
fn excluded_coupling_exits_3() {
    let tmp = TempDir::new().unwrap();
    let o = run(tmp.path(), &["mp", "--beta", "1"]);
    assert_eq!(code(&o), 3);
}

#[test]
fn usage_errors_exit_1() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(code(&run(tmp.path(), &["--bogus"])), 1);
    assert_eq!(code(&run(tmp.path(), &["ground", "--mu1", "-1"])), 1);
    std::fs::write(tmp.path().join("bad.json"), r#"{"command": "ground", "colour": "red"}"#).unwrap();
    let o = run(tmp.path(), &["ground", "--config", "bad.json"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("colour"));
    assert_eq!(code(&run(tmp.path(), &["--help"])), 0);
}

#[test]
fn help_documents_csv_columns() {
    let tmp = TempDir::new().unwrap();
    let o = run(tmp.path(), &["--help"]);
    let text = String::from_utf8_lossy(&o.stdout);
    for c in normcrit_cli::output::SUMMARY_COLUMNS {
        assert!(text.contains(c), "{c}");
    }
}

#[test]
fn flags_override_config_file() {
    let tmp = TempDir::new().unwrap();
    std::fs::write(tmp.path().join("cfg.json"), r#"{"command": "ground", "masses": [0.5, 0.5], "output": "from_file"}"#).unwrap();
    let o = run(tmp.path(), &["ground", "--config", "cfg.json", "--a1", "0.25"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = read(tmp.path(), "from_file/summary.csv");
    assert_eq!(column(&csv, "a1"), ["2.5000000000000000e-1"]);
    assert_eq!(column(&csv, "a2"), ["5.0000000000000000e-1"]);
}

#[test]
fn result_json_round_trips_exactly() {
    let tmp = TempDir::new().unwrap();
    let o = run(tmp.path(), &["ground", "--a1", "0.5", "--a2", "0.25", "-o", "g"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = read(tmp.path(), "g/result.json");
    let res: SolveResult = serde_json::from_str(&text).unwrap();
    assert_eq!(serde_json::to_string_pretty(&res).unwrap(), text);
    let csv = read(tmp.path(), "g/summary.csv");
    assert_eq!(column(&csv, "energy")[0].parse::<f64>().unwrap(), res.energy);
    assert_eq!(column(&csv, "lambda2")[0].parse::<f64>().unwrap(), res.lambda2);
    let profile = read(tmp.path(), "g/profile_ground_plus.tsv");
    assert_eq!(profile.lines().count(), res.pair.u.values().len() + 1);
}

#[test]
fn identical_seed_gives_identical_summary() {
    let tmp = TempDir::new().unwrap();
    for out in ["a", "b"] {
        let o = run(tmp.path(), &["mp", "--a1", "1", "--a2", "0.5", "--seed", "11", "-o", out]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(read(tmp.path(), "a/summary.csv"), read(tmp.path(), "b/summary.csv"));
}

#[test]
fn sweep_then_asym_gives_monotone_distances() {
    let tmp = TempDir::new().unwrap();
    let o = run(tmp.path(), &["sweep", "--ratio", "1", "--halvings", "5", "--threads", "2", "-o", "s"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(tmp.path().join("s/profile_05.tsv").exists());
    let o = run(tmp.path(), &["asym", "-o", "s"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_str(&read(tmp.path(), "s/result.json")).unwrap();
    assert_eq!(report["regime"], "small_mass_ground");
    let d: Vec<f64> = column(&read(tmp.path(), "s/summary.csv"), "distance").iter().map(|x| x.parse().unwrap()).collect();
    assert_eq!(d.len(), 6);
    assert!(d.windows(2).all(|w| w[1] < w[0]), "{d:?}");
}

#[test]
fn cache_admin_lifecycle() {
    let tmp = TempDir::new().unwrap();
    let o = run(tmp.path(), &["cache", "list"]);
    assert_eq!(code(&o), 0);
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().count(), 1);

    let o = run(tmp.path(), &["cache", "warm", "--p-list", "2.5,3.0,3.5"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let files: Vec<_> = std::fs::read_dir(tmp.path().join("cache")).unwrap().collect();
    assert_eq!(files.len(), 3);
    let listed = run(tmp.path(), &["cache", "list"]);
    assert_eq!(String::from_utf8_lossy(&listed.stdout).lines().count(), 4);

    assert_eq!(code(&run(tmp.path(), &["cache", "clear"])), 0);
    assert_eq!(std::fs::read_dir(tmp.path().join("cache")).unwrap().count(), 0);
    let o = run(tmp.path(), &["scalar", "--p", "2.5", "--a1", "0.5", "-o", "sc"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(std::fs::read_dir(tmp.path().join("cache")).unwrap().count() >= 1);
}

#[test]
fn probe_writes_report() {
    let tmp = TempDir::new().unwrap();
    let o = run(tmp.path(), &["probe", "--alpha1=-1", "--alpha2=-1", "--max-iter", "2000", "-o", "pr"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rep: serde_json::Value = serde_json::from_str(&read(tmp.path(), "pr/result.json")).unwrap();
    assert_eq!(rep["converged_positive"], false);
    assert!(rep["flagged"].as_u64().unwrap() > 0);
}
