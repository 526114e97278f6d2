use std::process::{Command, Output};

use pexprk::harness::{parse_csv, CSV_HEADER};

fn pexprk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pexprk"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

const SMALL_GS: &[&str] = &[
    "run", "--grid", "8", "--partition", "physics", "--order", "2", "--steps-pow2", "2:5",
    "--no-timing",
];

#[test]
fn run_writes_parseable_csv() {
    let o = pexprk(SMALL_GS);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.lines().any(|l| l == CSV_HEADER));
    let (meta, rows) = parse_csv(&text).unwrap();
    assert_eq!(rows.len(), 4);
    assert!(meta.iter().any(|(k, v)| k == "partition" && v == "physics"));
    assert!(rows.iter().all(|r| r.error_l2.is_some() && r.wall_ms == 0.0));
    assert!(rows.windows(2).all(|w| w[1].h < w[0].h));
}

#[test]
fn run_without_timing_is_reproducible() {
    let a = pexprk(SMALL_GS);
    let b = pexprk(SMALL_GS);
    assert!(a.status.success() && b.status.success());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn run_reads_json_config_and_writes_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    let out = dir.path().join("out.csv");
    std::fs::write(
        &cfg,
        r#"{"problem": "oracle", "grid": 6, "order": 3, "form": "orig", "tspan": "0:0.5", "steps-pow2": "2:5"}"#,
    )
    .unwrap();
    let o = pexprk(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--no-timing",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (meta, rows) = parse_csv(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert!(meta.iter().any(|(k, v)| k == "form" && v == "orig"));
    let last = rows.last().unwrap().observed_order.unwrap();
    assert!((last - 3.0).abs() < 0.3, "observed order {last}");
}

#[test]
fn invalid_configuration_exits_with_two() {
    for args in [
        &["run", "--grid", "8", "--partition", "physics", "--form", "tran"][..],
        &["run", "--order", "5"],
        &["run", "--partition", "diagonal"],
        &["run", "--tspan", "1:0"],
    ] {
        let o = pexprk(args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
    }
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"grid": 8, "stepsize": 0.1}"#).unwrap();
    let o = pexprk(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn check_order_reports_each_condition() {
    let o = pexprk(&["check-order", "--order", "2"]);
    assert!(o.status.success());
    let text = stdout(&o);
    for label in ["1", "2a", "2b", "3a", "4d"] {
        assert!(text.lines().any(|l| l.trim_start().starts_with(&format!("{label} "))), "{label}");
    }
    let line_2a = text.lines().find(|l| l.trim_start().starts_with("2a ")).unwrap();
    assert!(line_2a.ends_with(" ok"));
    let line_3a = text.lines().find(|l| l.trim_start().starts_with("3a ")).unwrap();
    assert!(line_3a.ends_with("beyond design order"));
}

#[test]
fn weakened_check_passes_for_order_four() {
    let o = pexprk(&["check-order", "--order", "4", "--weakened", "--seed", "3"]);
    assert!(o.status.success());
    assert!(!stdout(&o).contains("VIOLATED"));
}

#[test]
fn dump_tableau_lists_coefficients() {
    let plain = pexprk(&["dump-tableau", "--order", "3"]);
    let tran = pexprk(&["dump-tableau", "--order", "3", "--transformed"]);
    assert!(plain.status.success() && tran.status.success());
    assert!(!stdout(&plain).is_empty());
    assert_ne!(plain.stdout, tran.stdout);
    assert_eq!(pexprk(&["dump-tableau", "--order", "7"]).status.code(), Some(2));
}
