//! End-to-end tests of the `gaussum` binary: file round trips, CSV output
//! and the documented exit codes.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gaussum::gaussmix::GaussianMixture;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gaussum"))
}

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("gaussum-cli-{}-{tag}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("binary runs");
    assert!(
        out.status.success(),
        "command failed: {}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn write_fixtures(dir: &Path) {
    run_ok(bin().args(["fixtures", "--out-dir"]).arg(dir));
}

#[test]
fn fixtures_are_written_and_deterministic() {
    let dir = temp_dir("fixtures");
    write_fixtures(&dir);
    let table1 = fs::read_to_string(dir.join("table1.json")).unwrap();
    let m = GaussianMixture::from_json(&table1).unwrap();
    assert_eq!(m.order(), 16);
    // Weights as printed, close to but not exactly one.
    assert!((m.weight_sum() - 1.0).abs() <= 1e-3);
    let m2 = GaussianMixture::from_json(&fs::read_to_string(dir.join("table3.json")).unwrap())
        .unwrap();
    assert_eq!(m2.dim(), 2);
    assert_eq!(m2.order(), 10);

    let series1 = fs::read(dir.join("levelshift.csv")).unwrap();
    assert_eq!(series1.iter().filter(|&&b| b == b'\n').count(), 400);
    write_fixtures(&dir);
    let series2 = fs::read(dir.join("levelshift.csv")).unwrap();
    assert_eq!(series1, series2, "levelshift.csv must regenerate bit-identically");

    let out = run_ok(bin().args(["fixtures", "--seed", "7", "--out-dir"]).arg(&dir));
    assert!(out.status.success());
    let series3 = fs::read(dir.join("levelshift.csv")).unwrap();
    assert_ne!(series1, series3, "a different seed must change the series");
    let _ = fs::remove_dir_all(&dir);
}

#[test]
fn reduce_to_same_order_reproduces_the_input() {
    let dir = temp_dir("reduce-id");
    write_fixtures(&dir);
    let out_path = dir.join("same.json");
    run_ok(
        bin()
            .args(["reduce", "--to", "16", "--in"])
            .arg(dir.join("table1.json"))
            .arg("--out")
            .arg(&out_path),
    );
    let input = GaussianMixture::from_json(&fs::read_to_string(dir.join("table1.json")).unwrap())
        .unwrap()
        .normalize()
        .unwrap();
    let output =
        GaussianMixture::from_json(&fs::read_to_string(&out_path).unwrap()).unwrap();
    assert_eq!(output.order(), 16);
    for (a, b) in input.components().iter().zip(output.components()) {
        assert!((a.weight() - b.weight()).abs() <= 1e-12);
        assert!((a.mean()[0] - b.mean()[0]).abs() <= 1e-12);
        assert!((a.cov()[(0, 0)] - b.cov()[(0, 0)]).abs() <= 1e-12);
    }
    let _ = fs::remove_dir_all(&dir);
}

#[test]
fn reduce_writes_trace_with_tracked_kl() {
    let dir = temp_dir("reduce-trace");
    write_fixtures(&dir);
    let red = dir.join("m8.json");
    let trace = dir.join("trace.json");
    run_ok(
        bin()
            .args(["reduce", "--to", "8", "--criterion", "pearson", "--track-kl", "--in"])
            .arg(dir.join("table1.json"))
            .arg("--out")
            .arg(&red)
            .arg("--trace")
            .arg(&trace),
    );
    let reduced = GaussianMixture::from_json(&fs::read_to_string(&red).unwrap()).unwrap();
    assert_eq!(reduced.order(), 8);
    assert!(reduced.is_normalized(1e-9));

    let trace: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&trace).unwrap()).unwrap();
    let steps = trace["steps"].as_array().unwrap();
    assert_eq!(steps.len(), 8);
    assert_eq!(steps[0]["orderBefore"], 16);
    assert_eq!(steps[7]["orderBefore"], 9);
    for s in steps {
        assert!(s["klToTrue"].as_f64().unwrap().is_finite());
        assert!(s["score"].as_f64().unwrap() >= 0.0);
    }
    assert_eq!(trace["finalMixture"]["components"].as_array().unwrap().len(), 8);
    let _ = fs::remove_dir_all(&dir);
}

#[test]
fn compare_emits_table_shaped_csv() {
    let dir = temp_dir("compare");
    write_fixtures(&dir);
    let csv_path = dir.join("cmp.csv");
    run_ok(
        bin()
            .args([
                "compare",
                "--orders",
                "12-15",
                "--criteria",
                "runnalls,kitagawa,pearson",
                "--in",
            ])
            .arg(dir.join("table1.json"))
            .arg("--out")
            .arg(&csv_path),
    );
    let csv = fs::read_to_string(&csv_path).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "m,runnalls,kitagawa,pearson");
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("15,"));
    assert!(lines[4].starts_with("12,"));
    for line in &lines[1..] {
        for field in line.split(',').skip(1) {
            let v: f64 = field.parse().unwrap();
            assert!(v.is_finite() && v >= -1e-8);
        }
    }
    let _ = fs::remove_dir_all(&dir);
}

#[test]
fn compare_full_collapse_entries_agree_across_criteria() {
    let dir = temp_dir("compare-m1");
    write_fixtures(&dir);
    let csv_path = dir.join("cmp2d.csv");
    // Includes the Pearson column down to order 1, which exercises the
    // safe-guard fallback on the 2-D fixture.
    run_ok(
        bin()
            .args([
                "compare",
                "--orders",
                "1,2",
                "--criteria",
                "runnalls,kitagawa,pearson",
                "--quad-nodes",
                "250",
                "--in",
            ])
            .arg(dir.join("table3.json"))
            .arg("--out")
            .arg(&csv_path),
    );
    let csv = fs::read_to_string(&csv_path).unwrap();
    let last = csv.lines().last().unwrap();
    assert!(last.starts_with("1,"));
    let entries: Vec<f64> =
        last.split(',').skip(1).map(|f| f.parse().unwrap()).collect();
    assert_eq!(entries.len(), 3);
    for v in &entries {
        assert!((v - entries[0]).abs() <= 1e-6, "order-1 entries differ: {entries:?}");
    }
    let _ = fs::remove_dir_all(&dir);
}

#[test]
fn eval_grid_peaks_and_integrates_on_a_standard_normal() {
    let dir = temp_dir("grid");
    let mix_path = dir.join("std.json");
    fs::write(
        &mix_path,
        r#"{"dim": 1, "components": [{"weight": 1.0, "mean": [0.0], "cov": [[1.0]]}]}"#,
    )
    .unwrap();
    let out = run_ok(
        bin()
            .args(["eval-grid", "--lo", "-5", "--hi", "5", "--points", "401", "--in"])
            .arg(&mix_path),
    );
    let csv = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<(f64, f64)> = csv
        .lines()
        .skip(1)
        .map(|l| {
            let mut it = l.split(',');
            (it.next().unwrap().parse().unwrap(), it.next().unwrap().parse().unwrap())
        })
        .collect();
    assert_eq!(rows.len(), 401);
    let (peak_x, peak_v) = rows
        .iter()
        .cloned()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    assert_eq!(peak_x, 0.0);
    assert!((peak_v - 0.3989).abs() < 1e-4);
    // Trapezoid mass over the grid.
    let h = 10.0 / 400.0;
    let mass: f64 = rows.windows(2).map(|w| 0.5 * h * (w[0].1 + w[1].1)).sum();
    assert!((mass - 1.0).abs() <= 1e-3, "mass {mass}");
    let _ = fs::remove_dir_all(&dir);
}

#[test]
fn filter_and_smooth_produce_run_json() {
    let dir = temp_dir("filter");
    let model_path = dir.join("trend.json");
    let model = gaussum::trend_model(0.000254, 1.189, 0.989, 1.027).unwrap();
    fs::write(&model_path, model.to_json()).unwrap();
    let series_path = fixtures_series(&dir);
    let run_path = dir.join("run.json");
    run_ok(
        bin()
            .args(["smooth", "--cap", "2", "--criterion", "pearson", "--model"])
            .arg(&model_path)
            .arg("--data")
            .arg(&series_path)
            .arg("--out")
            .arg(&run_path),
    );
    let run: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&run_path).unwrap()).unwrap();
    assert_eq!(run["capM"], 2);
    assert_eq!(run["criterion"], "pearson");
    assert!(run["logLikelihood"].as_f64().unwrap().is_finite());
    assert_eq!(run["filtered"].as_array().unwrap().len(), 60);
    assert_eq!(run["smoothed"].as_array().unwrap().len(), 60);
    for m in run["filtered"].as_array().unwrap() {
        assert!(m["components"].as_array().unwrap().len() <= 2);
    }
    let _ = fs::remove_dir_all(&dir);
}

fn fixtures_series(dir: &Path) -> PathBuf {
    let series: String = gaussum::fixtures::level_shift_series(1)
        .into_iter()
        .take(60)
        .map(|v| format!("{v}\n"))
        .collect();
    let path = dir.join("short.csv");
    fs::write(&path, series).unwrap();
    path
}

#[test]
fn exit_codes_follow_the_contract() {
    let dir = temp_dir("exit");
    write_fixtures(&dir);

    // 2: argument errors (bad order, unknown criterion, malformed JSON).
    let out = bin()
        .args(["reduce", "--to", "20", "--in"])
        .arg(dir.join("table1.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = bin()
        .args(["reduce", "--to", "2", "--criterion", "bogus", "--in"])
        .arg(dir.join("table1.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let bad = dir.join("bad.json");
    fs::write(&bad, "{not json").unwrap();
    let out = bin().args(["reduce", "--to", "1", "--in"]).arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    // 3: numeric errors (covariance not positive definite).
    let npd = dir.join("npd.json");
    fs::write(
        &npd,
        r#"{"dim": 1, "components": [{"weight": 1.0, "mean": [0.0], "cov": [[-1.0]]}]}"#,
    )
    .unwrap();
    let out = bin().args(["reduce", "--to", "1", "--in"]).arg(&npd).output().unwrap();
    assert_eq!(out.status.code(), Some(3));

    // 4: reduction stuck (the only pair is excluded by the safe-guard).
    let stuck = dir.join("stuck.json");
    fs::write(
        &stuck,
        r#"{"dim": 1, "components": [
            {"weight": 0.01, "mean": [0.0], "cov": [[10.0]]},
            {"weight": 0.99, "mean": [0.0], "cov": [[1.0]]}
        ]}"#,
    )
    .unwrap();
    let out = bin()
        .args(["reduce", "--to", "1", "--criterion", "pearson", "--in"])
        .arg(&stuck)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4));

    // 1: I/O failure (missing file).
    let out = bin()
        .args(["reduce", "--to", "1", "--in"])
        .arg(dir.join("missing.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));

    let _ = fs::remove_dir_all(&dir);
}
