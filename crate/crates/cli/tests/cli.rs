use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn calsel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_calsel")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn data_lines(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(str::to_string)
        .collect()
}

fn column(path: &Path, name: &str) -> Vec<Option<f64>> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let idx = header.iter().position(|h| *h == name).unwrap();
    lines.map(|l| l.split(',').nth(idx).and_then(|c| c.parse().ok())).collect()
}

fn simulate(dir: &TempDir, name: &str, extra: &[&str]) -> PathBuf {
    let out = dir.path().join(name);
    let mut args = vec!["simulate", "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    let o = calsel(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    out
}

fn write_csv(dir: &TempDir, name: &str, header: &str, rows: impl Iterator<Item = String>) -> PathBuf {
    let path = dir.path().join(name);
    let mut s = format!("{header}\n");
    for r in rows {
        s.push_str(&r);
        s.push('\n');
    }
    std::fs::write(&path, s).unwrap();
    path
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn simulate_writes_requested_rows_with_provenance() {
    let dir = TempDir::new().unwrap();
    let a = simulate(&dir, "a.csv", &["--case", "1", "--dist", "normal", "--n", "550", "--seed", "7"]);
    assert_eq!(data_lines(&a).len(), 550);
    let text = std::fs::read_to_string(&a).unwrap();
    assert!(text.contains("# seed=7") && text.contains("# case=1") && text.contains("# dist=normal"));
    let b = simulate(&dir, "b.csv", &["--case", "1", "--dist", "normal", "--n", "550", "--seed", "7"]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn case_three_coefficients_drive_the_path() {
    let dir = TempDir::new().unwrap();
    let p = simulate(&dir, "c3.csv", &["--case", "3", "--dist", "t4", "--n", "200", "--seed", "1"]);
    let y: Vec<f64> = column(&p, "return").into_iter().map(Option::unwrap).collect();
    let s: Vec<f64> = column(&p, "sigma").into_iter().map(Option::unwrap).collect();
    for t in 1..200 {
        let expect = 0.1 + 0.9 * s[t - 1] + 0.05 * y[t - 1].abs();
        assert!((s[t] - expect).abs() < 1e-12 * expect);
    }
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(code(&calsel(&["simulate", "--case", "1", "--seed", "1"])), 1);
    assert_eq!(code(&calsel(&["simulate", "--n", "10", "--case", "7", "--seed", "1"])), 1);
    assert_eq!(code(&calsel(&["simulate", "--n", "ten"])), 1);
    assert_eq!(code(&calsel(&["frobnicate"])), 1);
    assert_eq!(code(&calsel(&["--help"])), 0);
}

#[test]
fn missing_seed_is_generated_and_reported() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("s.csv");
    let o = calsel(&["simulate", "--n", "20", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let line = stderr(&o).lines().find(|l| l.starts_with("seed=")).map(str::to_string).unwrap();
    assert!(std::fs::read_to_string(&out).unwrap().contains(&format!("# {line}")));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# shared settings\nn = 40\nseed = 3\ncase=2\n").unwrap();
    let out = simulate(&dir, "o.csv", &["--config", cfg.to_str().unwrap(), "--n", "30"]);
    assert_eq!(data_lines(&out).len(), 30);
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.contains("# n=30") && text.contains("# seed=3") && text.contains("# case=2"));
}

#[test]
fn forecast_emits_one_row_per_date_after_the_window() {
    let dir = TempDir::new().unwrap();
    let data = simulate(&dir, "d.csv", &["--case", "1", "--n", "520", "--seed", "11"]);
    let out = dir.path().join("f.csv");
    let tau = dir.path().join("tau.csv");
    let o = calsel(&[
        "forecast",
        "--input",
        data.to_str().unwrap(),
        "--window",
        "500",
        "--alpha",
        "0.05",
        "--out",
        out.to_str().unwrap(),
        "--tau-out",
        tau.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(data_lines(&out).len(), 20);
    assert_eq!(data_lines(&tau).len(), 20);
    let var = column(&out, "var_hat");
    let es = column(&out, "es_hat");
    for (v, e) in var.iter().zip(&es) {
        assert!(e.unwrap() <= v.unwrap() && v.unwrap() < 0.0);
    }
    let summary = json(&dir.path().join("f.json"));
    assert_eq!(summary["forecasts"], 20);
    assert_eq!(summary["config"]["window"], "500");
}

#[test]
fn upper_tail_mirrors_lower_tail_on_negated_data() {
    let dir = TempDir::new().unwrap();
    let data = simulate(&dir, "d.csv", &["--case", "1", "--n", "505", "--seed", "12"]);
    let y: Vec<f64> = column(&data, "return").into_iter().map(Option::unwrap).collect();
    let neg = write_csv(&dir, "neg.csv", "return", y.iter().map(|v| format!("{}", -v)));
    let up = dir.path().join("up.csv");
    let lo = dir.path().join("lo.csv");
    let run = |input: &Path, out: &Path, alpha: &str, tail: &str| {
        let o = calsel(&[
            "forecast",
            "--input",
            input.to_str().unwrap(),
            "--alpha",
            alpha,
            "--tail",
            tail,
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    };
    run(&data, &up, "0.95", "upper");
    run(&neg, &lo, &(1.0 - 0.95f64).to_string(), "lower");
    for name in ["var_hat", "es_hat", "var_tilde", "es_tilde", "sigma_hat"] {
        let sign = if name.starts_with("sigma") { 1.0 } else { -1.0 };
        for (a, b) in column(&up, name).iter().zip(column(&lo, name)) {
            assert_eq!(a.unwrap(), sign * b.unwrap(), "{name}");
        }
    }
}

#[test]
fn failing_windows_are_flagged_not_fatal() {
    let dir = TempDir::new().unwrap();
    let data = simulate(&dir, "d.csv", &["--case", "1", "--n", "80", "--seed", "13"]);
    let out = dir.path().join("f.csv");
    let o = calsel(&[
        "forecast",
        "--input",
        data.to_str().unwrap(),
        "--window",
        "70",
        "--m",
        "5",
        "--k",
        "9",
        "--el-fallback",
        "off",
        "--min-el-n",
        "1000",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let lines = data_lines(&out);
    assert_eq!(lines.len(), 10);
    assert!(lines.iter().all(|l| l.contains("skipped: [empirical-likelihood]")));
}

#[test]
fn malformed_csv_reports_the_line() {
    let dir = TempDir::new().unwrap();
    let bad = write_csv(&dir, "bad.csv", "return", ["0.1", "0.2", "abc", "0.3"].into_iter().map(String::from));
    let o = calsel(&["forecast", "--input", bad.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("line 4"), "{}", stderr(&o));
    let o = calsel(&["forecast", "--input", bad.to_str().unwrap(), "--col", "price"]);
    assert_eq!(code(&o), 2);
}

fn forecast_file(dir: &TempDir, hits: usize, n: usize) -> PathBuf {
    write_csv(
        dir,
        "hand.csv",
        "date_index,realized,var_hat,es_hat,sigma_hat",
        (0..n).map(|i| {
            let y = if i % (n / hits.max(1)) == 0 && i / (n / hits.max(1)) < hits { -2.0 } else { 0.5 };
            format!("{i},{y},-1,-1.5,1")
        }),
    )
}

#[test]
fn backtest_reproduces_kupiec_references() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("r.json");
    let f = forecast_file(&dir, 70, 1000);
    let o = calsel(&["backtest", "--forecasts", f.to_str().unwrap(), "--alpha", "0.05", "--seed", "1", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = &json(&out)["report"];
    assert_eq!(r["exceedances"], 70);
    assert!((r["kupiec"]["statistic"].as_f64().unwrap() - 7.530152).abs() < 1e-5);
    assert!(String::from_utf8_lossy(&o.stdout).contains("Kupiec"));

    let f = forecast_file(&dir, 50, 1000);
    let o = calsel(&["backtest", "--forecasts", f.to_str().unwrap(), "--alpha", "0.05", "--seed", "1", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let r = &json(&out)["report"];
    assert_eq!(r["kupiec"]["statistic"], 0.0);
    assert_eq!(r["kupiec"]["p_value"], 1.0);
}

#[test]
fn backtest_upper_tail_without_exceedances() {
    let dir = TempDir::new().unwrap();
    let f = write_csv(&dir, "u.csv", "date_index,realized,var_hat,es_hat", (0..100).map(|i| format!("{i},0.1,1,1.5")));
    let o = calsel(&["backtest", "--forecasts", f.to_str().unwrap(), "--alpha", "0.95", "--seed", "2"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let doc: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let r = &doc["report"];
    assert_eq!(r["tail"], "upper");
    assert_eq!(r["exceedances"], 0);
    assert!((r["kupiec"]["statistic"].as_f64().unwrap() + 200.0 * 0.95f64.ln()).abs() < 1e-9);
}

#[test]
fn forecast_then_backtest_with_alignment_checks() {
    let dir = TempDir::new().unwrap();
    let data = simulate(&dir, "d.csv", &["--case", "1", "--n", "360", "--seed", "14"]);
    let fc = dir.path().join("f.csv");
    let o = calsel(&[
        "forecast",
        "--input",
        data.to_str().unwrap(),
        "--window",
        "300",
        "--m",
        "5",
        "--k",
        "9",
        "--alpha",
        "0.05",
        "--out",
        fc.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = calsel(&["backtest", "--forecasts", fc.to_str().unwrap(), "--returns", data.to_str().unwrap(), "--seed", "5"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let doc: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(doc["report"]["n"], 60);
    assert_eq!(doc["config"]["alpha"], "0.05");
    let p = doc["report"]["kupiec"]["p_value"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&p));

    let y: Vec<f64> = column(&data, "return").into_iter().map(Option::unwrap).collect();
    let shifted = write_csv(&dir, "shifted.csv", "return", y.iter().skip(1).map(|v| v.to_string()));
    let o = calsel(&["backtest", "--forecasts", fc.to_str().unwrap(), "--returns", shifted.to_str().unwrap(), "--seed", "5"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("alignment"), "{}", stderr(&o));
}

#[test]
fn repro_tables_single_replication() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("t.csv");
    let args = [
        "repro-tables", "--reps", "1", "--n-in", "300", "--n-out", "5", "--m", "5", "--k", "9", "--seed", "3", "--out",
    ];
    let mut a = args.to_vec();
    a.push(out.to_str().unwrap());
    let o = calsel(&a);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let lines = data_lines(&out);
    assert_eq!(lines.len(), 4);
    assert!(lines.iter().any(|l| l.contains("CALS-EL2,VaR")));
    for (b, r) in column(&out, "bias").iter().zip(column(&out, "rmse")) {
        assert!(r.unwrap() >= b.unwrap());
    }
    assert!(String::from_utf8_lossy(&o.stdout).contains("CALS-EL1"));
    let first = std::fs::read(&out).unwrap();
    assert_eq!(code(&calsel(&a)), 0);
    assert_eq!(std::fs::read(&out).unwrap(), first);
}

#[test]
fn tau_on_normal_draws_matches_the_bridge_value() {
    let dir = TempDir::new().unwrap();
    let data = simulate(&dir, "iid.csv", &["--beta0", "1", "--beta", "", "--gamma", "", "--n", "100000", "--seed", "21"]);
    let o = calsel(&["tau", "--input", data.to_str().unwrap(), "--alpha", "0.05"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let doc: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let tau = doc["tau_el"].as_f64().unwrap();
    assert!((tau - 0.0124).abs() < 0.002, "{tau}");
    assert!(doc["tau_grid"].as_f64().is_some());
}

#[test]
fn tau_compare_favours_empirical_likelihood() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("cmp.csv");
    let o = calsel(&["tau", "--compare", "--n", "300", "--dist", "normal", "--reps", "100", "--seed", "4", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(data_lines(&out).len(), 100);
    let mut el: Vec<f64> = column(&out, "sq_err_el").into_iter().map(Option::unwrap).collect();
    let mut grid: Vec<f64> = column(&out, "sq_err_grid").into_iter().map(Option::unwrap).collect();
    el.sort_by(f64::total_cmp);
    grid.sort_by(f64::total_cmp);
    assert!(el[50] + el[49] <= grid[50] + grid[49]);
}

#[test]
fn tau_on_constant_input_is_a_numerical_failure() {
    let dir = TempDir::new().unwrap();
    let flat = write_csv(&dir, "flat.csv", "return", std::iter::repeat_n("0.25".to_string(), 200));
    let o = calsel(&["tau", "--input", flat.to_str().unwrap()]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}
