//! End-to-end runs of the `pmq` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const HESTON: &str = r#"
[model.heston]
s0 = 100.0
v0 = 0.09
kappa = 2.0
theta = 0.09
sigma = 0.6
r = 0.05
rho = -0.3

[schedule]
horizon = 1.0
steps = 12
codewords = [30, 15]
schemes = ["euler", "wo2"]

[[options]]
kind = "european-put"
strike = [80.0, 100.0, 120.0]

[[options]]
kind = "up-and-out-put"
strike = 100.0
barrier = [110.0, 120.0, 130.0, 140.0]

[[options]]
kind = "bermudan-put"
strike = 100.0
"#;

const SABR_SMALL: &str = r#"
[model.sabr]
s0 = 100.0
y0 = 0.4
beta = 0.9
nu = 0.4
rho = -0.3
r = 0.1

[schedule]
horizon = 1.0
steps = 12
codewords = [20, 10]
schemes = ["euler", "wo2"]

[[options]]
kind = "up-and-out-put"
strike = 100.0
barrier = [110.0, 130.0]

[[options]]
kind = "european-call"
strike = 100.0

[[options]]
kind = "bermudan-put"
strike = 100.0

[mc]
paths = 4000
steps_per_year = 48
"#;

fn pmq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pmq")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn run_ok(args: &[&str]) -> Output {
    let o = pmq(args);
    assert_eq!(code(&o), 0, "{args:?}: {}", stderr(&o));
    o
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn quantize_writes_conserving_deterministic_grids() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "heston.toml", HESTON);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_ok(&["quantize", "--config", s(&cfg), "--out", s(&a)]);
    run_ok(&["quantize", "--config", s(&cfg), "--out", s(&b)]);
    let rows = csv_rows(&a.join("quantize_summary.csv"));
    assert_eq!(rows.len(), 13);
    for r in &rows {
        let residual: f64 = r.last().unwrap().parse().unwrap();
        assert!(residual < 1e-10, "step {}: {residual}", r[0]);
    }
    for f in ["grid.pmq", "grid.txt", "quantize_summary.csv", "run.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs between runs");
    }
}

#[test]
fn price_from_grid_file_matches_fresh_build() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "heston.toml", HESTON);
    let q = dir.path().join("q");
    run_ok(&["quantize", "--config", s(&cfg), "--out", s(&q)]);
    let fresh = dir.path().join("fresh");
    let o = run_ok(&["price", "--config", s(&cfg), "--out", s(&fresh)]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("up-and-out-put-K100-B110"));
    let from_bin = dir.path().join("bin");
    run_ok(&["price", "--config", s(&cfg), "--grid", s(&q.join("grid.pmq")), "--out", s(&from_bin)]);
    let from_txt = dir.path().join("txt");
    run_ok(&["price", "--config", s(&cfg), "--grid", s(&q.join("grid.txt")), "--out", s(&from_txt)]);
    let reference = fs::read(fresh.join("prices.csv")).unwrap();
    assert_eq!(fs::read(from_bin.join("prices.csv")).unwrap(), reference);
    assert_eq!(fs::read(from_txt.join("prices.csv")).unwrap(), reference);

    let rows = csv_rows(&fresh.join("prices.csv"));
    assert_eq!(rows.len(), 3 + 4 + 1);
    let barrier_rows: Vec<&Vec<String>> = rows.iter().filter(|r| r[1] == "up-and-out-put").collect();
    assert_eq!(barrier_rows.len(), 4);
    let prices: Vec<f64> = barrier_rows.iter().map(|r| r[4].parse().unwrap()).collect();
    assert!(prices.windows(2).all(|w| w[0] <= w[1]), "{prices:?}");
    for r in &rows {
        let digits = r[4].split('e').next().unwrap().replace(['.', '-'], "");
        assert_eq!(digits.len(), 12, "{}", r[4]);
    }
}

#[test]
fn empty_option_list_gives_header_only() {
    let dir = TempDir::new().unwrap();
    let text = HESTON.split("[[options]]").next().unwrap().replace("codewords = [30, 15]", "codewords = [6, 4]");
    let cfg = write(dir.path(), "empty.toml", &text);
    let out = dir.path().join("o");
    run_ok(&["price", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(fs::read_to_string(out.join("prices.csv")).unwrap(), "id,kind,strike,barrier,price\n");
}

#[test]
fn grid_for_another_model_is_refused() {
    let dir = TempDir::new().unwrap();
    let small = HESTON.replace("codewords = [30, 15]", "codewords = [6, 4]");
    let cfg = write(dir.path(), "h.toml", &small);
    let q = dir.path().join("q");
    run_ok(&["quantize", "--config", s(&cfg), "--out", s(&q)]);
    let other = write(dir.path(), "other.toml", &small.replace("rho = -0.3", "rho = -0.5"));
    let o = pmq(&["price", "--config", s(&other), "--grid", s(&q.join("grid.pmq")), "--out", s(&q)]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("provenance"));
    let resized = write(dir.path(), "resized.toml", &small.replace("codewords = [6, 4]", "codewords = [6, 5]"));
    let o = pmq(&["price", "--config", s(&resized), "--grid", s(&q.join("grid.pmq")), "--out", s(&q)]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));

    let mut bytes = fs::read(q.join("grid.pmq")).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0xff;
    let bad = write(dir.path(), "bad.pmq", "");
    fs::write(&bad, bytes).unwrap();
    let o = pmq(&["price", "--config", s(&cfg), "--grid", s(&bad), "--out", s(&q)]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("checksum"));
}

#[test]
fn config_errors_exit_2_with_locations() {
    let dir = TempDir::new().unwrap();
    let zero = write(dir.path(), "zero.toml", &HESTON.replace("horizon = 1.0", "horizon = 0.0"));
    let o = pmq(&["quantize", "--config", s(&zero), "--out", s(dir.path())]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("horizon"), "{}", stderr(&o));

    let unknown = write(dir.path(), "unknown.toml", &HESTON.replace("rho = -0.3", "rho = -0.3\nrhoo = 1.0"));
    let o = pmq(&["quantize", "--config", s(&unknown), "--out", s(dir.path())]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("line 10") && stderr(&o).contains("rhoo"), "{}", stderr(&o));

    let wo2 = write(dir.path(), "wo2.toml", &HESTON.replace(r#"["euler", "wo2"]"#, r#"["wo2", "wo2"]"#));
    let o = pmq(&["quantize", "--config", s(&wo2), "--out", s(dir.path())]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("autonomous"), "{}", stderr(&o));

    let nobarrier = format!("{}\n[[options]]\nkind = \"up-and-out-put\"\nstrike = 90.0\n", HESTON);
    let nb = write(dir.path(), "nb.toml", &nobarrier);
    let o = pmq(&["price", "--config", s(&nb), "--out", s(dir.path())]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("entry 4"), "{}", stderr(&o));

    let o = pmq(&["quantize", "--config", s(&dir.path().join("missing.toml"))]);
    assert_eq!(code(&o), 2);
    let o = pmq(&["quantize"]);
    assert_eq!(code(&o), 2);
    let o = pmq(&["quantize", "--config", s(&zero), "--threads", "0"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn degenerate_grid_exits_4_with_diagnostics() {
    let dir = TempDir::new().unwrap();
    let text = SABR_SMALL.replace("nu = 0.4", "nu = 400.0");
    let cfg = write(dir.path(), "wild.toml", &text);
    let out = dir.path().join("o");
    let o = pmq(&["quantize", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    let diag: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("diagnostics.json")).unwrap()).unwrap();
    assert_eq!(diag["command"], "quantize");
    assert!(diag["error"].as_str().unwrap().contains("non-finite"));
}

#[test]
fn seeds_move_mc_columns_only() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "sabr.toml", SABR_SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_ok(&["compare-mc", "--config", s(&cfg), "--out", s(&a), "--seed", "1"]);
    run_ok(&["compare-mc", "--config", s(&cfg), "--out", s(&b), "--seed", "2"]);
    let (ra, rb) = (csv_rows(&a.join("compare_mc.csv")), csv_rows(&b.join("compare_mc.csv")));
    assert_eq!(ra.len(), 4);
    for (x, y) in ra.iter().zip(&rb) {
        assert_eq!(x[..5], y[..5], "pmq columns must not depend on the seed");
        if x[1] == "bermudan-put" {
            assert!(x[5..].iter().all(String::is_empty));
        } else {
            assert_ne!(x[5], y[5], "mc mean should change with the seed");
            let z: f64 = x[7].parse().unwrap();
            assert!(z.is_finite());
        }
    }
    let again = dir.path().join("c");
    run_ok(&["compare-mc", "--config", s(&cfg), "--out", s(&again), "--seed", "1"]);
    assert_eq!(fs::read(a.join("compare_mc.csv")).unwrap(), fs::read(again.join("compare_mc.csv")).unwrap());
}

#[test]
fn zero_vol_rows_have_zero_z() {
    let dir = TempDir::new().unwrap();
    let text = r#"
[model.gbm]
x0 = [100.0]
sigma = [0.0]
r = 0.0

[schedule]
horizon = 1.0
steps = 4
codewords = [3]
schemes = ["euler"]

[[options]]
kind = "european-put"
strike = [90.0, 110.0]

[[options]]
kind = "european-call"
strike = 95.0

[[options]]
kind = "up-and-out-put"
strike = 110.0
barrier = [99.0, 120.0]

[mc]
paths = 500
"#;
    let cfg = write(dir.path(), "zero.toml", text);
    let out = dir.path().join("o");
    run_ok(&["compare-mc", "--config", s(&cfg), "--out", s(&out)]);
    for r in csv_rows(&out.join("compare_mc.csv")) {
        assert_eq!(r[7].parse::<f64>().unwrap(), 0.0, "{r:?}");
        assert_eq!(r[4], r[5]);
    }
}

fn calibration_config(dir: &Path, quotes: &Path, budget: &str) -> PathBuf {
    let text = format!(
        r#"
task = "calibrate"

[calibration]
model = "sabr"
quotes = "{}"
spot = 100.0
rate = 0.1
init = [0.48, 1.08, 0.48, -0.36]

[calibration.grid]
codewords = [20, 8]
schemes = ["euler", "wo2"]

[calibration.budget]
{budget}
"#,
        quotes.file_name().unwrap().to_str().unwrap()
    );
    write(dir, "calibrate.toml", &text)
}

fn example(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

#[test]
fn calibration_recovers_synthetic_parameters() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("o");
    run_ok(&["run", "--config", s(&example("sabr_calibrate.toml")), "--out", s(&out)]);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("calibration.json")).unwrap()).unwrap();
    assert!(report["objective"].as_f64().unwrap() < 1e-6, "{report}");
    assert_eq!(report["quotes_used"], 27);
    let truth = [0.4, 0.9, 0.4, -0.3];
    for (p, t) in report["parameters"].as_array().unwrap().iter().zip(truth) {
        let v = p["value"].as_f64().unwrap();
        assert!(((v - t) / t).abs() < 0.02, "{p}");
    }
    assert_eq!(report["parameters"][0]["upper"], "inf");
    let fit = csv_rows(&out.join("calibration_fit.csv"));
    assert_eq!(fit.len(), 27);
    assert_eq!(fit[0][0], "2");
}

#[test]
fn one_evaluation_budget_returns_init() {
    let dir = TempDir::new().unwrap();
    let quotes = dir.path().join("q.csv");
    fs::copy(example("sabr_quotes.csv"), &quotes).unwrap();
    let cfg = calibration_config(dir.path(), &quotes, "max_evals = 1");
    let out = dir.path().join("o");
    run_ok(&["calibrate", "--config", s(&cfg), "--out", s(&out)]);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("calibration.json")).unwrap()).unwrap();
    assert_eq!(report["budget_exhausted"], true);
    assert_eq!(report["evaluations"], 1);
    let params = report["parameters"].as_array().unwrap();
    assert_eq!(params[0]["value"], params[0]["init"]);
    assert_eq!(params[2]["value"], params[2]["init"]);
    assert_eq!(csv_rows(&out.join("calibration_trace.csv")).len(), 1);
}

#[test]
fn malformed_quote_row_names_the_line() {
    let dir = TempDir::new().unwrap();
    let quotes = write(
        dir.path(),
        "q.csv",
        "maturity_years,strike,kind,market_implied_vol,volume\n0.25,100,put,0.3,5\n0.5,100,put,oops,5\n",
    );
    let cfg = calibration_config(dir.path(), &quotes, "max_evals = 1");
    let o = pmq(&["calibrate", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn run_needs_a_task_and_export_round_trips() {
    let dir = TempDir::new().unwrap();
    let small = HESTON.replace("codewords = [30, 15]", "codewords = [5, 3]");
    let cfg = write(dir.path(), "h.toml", &small);
    let o = pmq(&["run", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("task"));
    let tasked = write(dir.path(), "t.toml", &format!("task = \"quantize\"\n{small}"));
    let q = dir.path().join("q");
    run_ok(&["run", "--config", s(&tasked), "--out", s(&q)]);
    let txt = dir.path().join("g.txt");
    let bin = dir.path().join("g.pmq");
    run_ok(&["export", "--grid", s(&q.join("grid.pmq")), "--to", s(&txt)]);
    run_ok(&["export", "--grid", s(&txt), "--to", s(&bin), "--format", "binary"]);
    assert_eq!(fs::read(&txt).unwrap(), fs::read(q.join("grid.txt")).unwrap());
    assert_eq!(fs::read(&bin).unwrap(), fs::read(q.join("grid.pmq")).unwrap());
}

#[test]
fn sabr_barrier_example_stays_within_mc_bounds() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("o");
    run_ok(&["compare-mc", "--config", s(&example("sabr_barrier.toml")), "--out", s(&out)]);
    let rows = csv_rows(&out.join("compare_mc.csv"));
    let barrier: Vec<&Vec<String>> = rows.iter().filter(|r| r[1] == "up-and-out-put").collect();
    assert_eq!(barrier.len(), 10);
    let outside = barrier.iter().filter(|r| r[7].parse::<f64>().unwrap().abs() > 3.0).count();
    assert!(outside <= 2, "{outside} barrier rows outside 3 stderr");
}
