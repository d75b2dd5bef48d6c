use std::path::PathBuf;
use std::process::{Command, Output};

fn mallows(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mallows"))
        .args(args)
        .env_remove("MALLOWS_SEED")
        .output()
        .expect("binary runs")
}

fn data(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name).display().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn eval_single_point() {
    let o = mallows(&["eval", "--op", "pmf_single", "--q", "0.5", "--alpha", "1", "--pairs", "0:0"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["op"], "pmf_single");
    // (1-q) q^-1/2 / ((1 + q^-1/2)(1 + q^1/2)) at q = 1/2 is 3 - 2 sqrt 2
    let prob: f64 = v["prob"].as_str().unwrap().parse().unwrap();
    assert!((prob - (3.0 - 2.0 * 2f64.sqrt())).abs() < 1e-15);
    let ln: f64 = v["log_prob"].as_str().unwrap().parse().unwrap();
    assert_eq!(ln.exp(), prob);
    assert_eq!(v["tail_bound"], "0.0000000000000000e0");
}

#[test]
fn usage_errors_exit_2() {
    let o = mallows(&["eval", "--op", "pmf_single", "--q", "0.5", "--alpha", "1", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    let o = mallows(&["eval", "--op", "pmf_single", "--q", "1.5", "--alpha", "1", "--pairs", "0:0"]);
    assert_eq!(o.status.code(), Some(2));
    let o = mallows(&["eval", "--op", "pmf_decreasing", "--q", "0.5", "--alpha", "1", "--pairs", "0:1,1:2"]);
    assert_eq!(o.status.code(), Some(2));
    let o = mallows(&["simulate-asep", "--q", "0.5", "--alpha", "1", "--M", "2"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn reports_are_deterministic_across_threads() {
    let run = |threads: &str| {
        let a = mallows(&["--threads", threads, "sample", "--q", "0.4", "--alpha", "2", "--k", "3", "--n", "300", "--seed", "5"]);
        let b = mallows(&[
            "--threads", threads, "simulate-asep", "--q", "0.5", "--alpha", "1", "--L", "6", "--t", "3",
            "--replicas", "200", "--coords", "0,1", "--seed", "5",
        ]);
        assert!(a.status.success() && b.status.success());
        (a.stdout, b.stdout)
    };
    let one = run("1");
    assert_eq!(one, run("4"));
    assert_eq!(one, run("1"));
}

#[test]
fn seed_comes_from_the_environment() {
    let args = ["sample", "--q", "0.5", "--alpha", "1", "--n", "20"];
    let with_env = Command::new(env!("CARGO_BIN_EXE_mallows")).args(args).env("MALLOWS_SEED", "77").output().unwrap();
    let with_flag = mallows(&[&args[..], &["--seed", "77"]].concat());
    assert_eq!(with_env.stdout, with_flag.stdout);
    assert_ne!(with_env.stdout, mallows(&args).stdout);
}

#[test]
fn csv_output_to_file() {
    let dir = std::env::temp_dir().join(format!("mallows-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("draws.csv");
    let o = mallows(&[
        "sample", "--q", "0.5", "--alpha", "1", "--start=-1", "--k", "2", "--n", "3", "--out",
        path.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert!(o.stdout.is_empty());
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "replica,position,value");
    assert_eq!(lines.len(), 7);
    assert!(lines[1].starts_with("0,-1,"));
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn sixvertex_verify_exit_status() {
    let ok = mallows(&["sixvertex", "--mode", "verify", "--support-file", &data("example_support.json")]);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    let v: serde_json::Value = serde_json::from_slice(&ok.stdout).unwrap();
    assert_eq!(v["holds"], true);
    assert_eq!(v["method"], "exact");
    assert_eq!(v["deviation"], "0.0000000000000000e0");

    let bad = mallows(&["sixvertex", "--mode", "verify", "--out", "csv", "--support-file", &data("mismatched_support.json")]);
    assert_eq!(bad.status.code(), Some(1));
    assert_eq!(stdout(&bad).lines().nth(1), Some("false,2,,7,2,,"));

    let missing = mallows(&["sixvertex", "--mode", "verify", "--support-file", &data("absent.json")]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn sixvertex_exact_law_sums_to_one() {
    let o = mallows(&["sixvertex", "--mode", "exact", "--width", "4", "--height", "3", "--cuts", "1:1,3:-1", "--out", "csv"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("h_0,h_1,ln_prob,prob"));
    let total: f64 = lines.map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-12);
}

#[test]
fn verify_subset_passes() {
    let o = mallows(&["verify", "--quick", "--only", "4,5,9", "--out", "csv"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 4);
    assert!(text.lines().skip(1).all(|l| l.contains(",true,")));
    let o = mallows(&["verify", "--only", "14"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn help_documents_csv_columns() {
    let o = mallows(&["simulate-asep", "--help"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("x,direction,jumps,occupation_time,rate,stderr,predicted"));
}
