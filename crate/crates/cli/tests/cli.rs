//! End-to-end tests against the built binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use covmrc::harness::benchmark_gains;
use covmrc::linear_system::spectral_norm;
use covmrc::matrix_io::read_matrix;

fn covmrc(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_covmrc"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary should run")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("process should exit normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn repo_path(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn assert_benchmark_gains(dir: &Path, tol: f64) {
    let kx = read_matrix(&dir.join("kx.txt")).unwrap();
    let kr = read_matrix(&dir.join("kr.txt")).unwrap();
    let truth = benchmark_gains();
    assert!(
        spectral_norm(&(&kx - &truth.kx)) < tol,
        "kx off by more than {tol}:\n{kx}"
    );
    assert!(
        spectral_norm(&(&kr - &truth.kr)) < tol,
        "kr off by more than {tol}:\n{kr}"
    );
}

#[test]
fn help_exits_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let out = covmrc(&["--help"], tmp.path());
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("simulate"));
    assert!(stdout(&out).contains("selftest"));
}

#[test]
fn usage_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&covmrc(&["--bogus"], tmp.path())), 1);
    assert_eq!(code(&covmrc(&["frobnicate"], tmp.path())), 1);
    assert_eq!(code(&covmrc(&["synthesize"], tmp.path())), 1);
    let out = covmrc(&["montecarlo", "--config", "no_such_file.toml"], tmp.path());
    assert_eq!(code(&out), 1);
    assert!(!stderr(&out).is_empty());
}

#[test]
fn simulate_then_exact_synthesis_recovers_benchmark_gains() {
    let tmp = tempfile::tempdir().unwrap();
    let out = covmrc(
        &["simulate", "--t-len", "800", "--variance", "0", "--out-dir", "ds"],
        tmp.path(),
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for name in ["inputs.txt", "states.txt", "states_clean.txt", "states_iv.txt"] {
        assert!(tmp.path().join("ds").join(name).is_file(), "missing {name}");
    }
    let out = covmrc(
        &[
            "synthesize",
            "--method",
            "exact",
            "--inputs",
            "ds/inputs.txt",
            "--states",
            "ds/states.txt",
            "--out-dir",
            "gains",
        ],
        tmp.path(),
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_benchmark_gains(&tmp.path().join("gains"), 1e-3);
}

#[test]
fn shipped_sample_dataset_reproduces_benchmark_gains() {
    let tmp = tempfile::tempdir().unwrap();
    let inputs = repo_path("data/sample/inputs.txt");
    let states = repo_path("data/sample/states.txt");
    let out = covmrc(
        &[
            "synthesize",
            "--method",
            "exact",
            "--inputs",
            inputs.to_str().unwrap(),
            "--states",
            states.to_str().unwrap(),
            "--out-dir",
            "gains",
        ],
        tmp.path(),
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_benchmark_gains(&tmp.path().join("gains"), 1e-3);
}

#[test]
fn noisy_routes_run_from_simulated_files() {
    let tmp = tempfile::tempdir().unwrap();
    let out = covmrc(
        &["simulate", "--t-len", "1500", "--variance", "0.25", "--out-dir", "ds"],
        tmp.path(),
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let bc = covmrc(
        &[
            "synthesize",
            "--method",
            "bc",
            "--variance",
            "0.25",
            "--inputs",
            "ds/inputs.txt",
            "--states",
            "ds/states.txt",
            "--out-dir",
            "bc",
        ],
        tmp.path(),
    );
    assert_eq!(code(&bc), 0, "{}", stderr(&bc));

    let iv = covmrc(
        &[
            "synthesize",
            "--method",
            "iv",
            "--inputs",
            "ds/inputs.txt",
            "--states",
            "ds/states.txt",
            "--iv-states",
            "ds/states_iv.txt",
            "--out-dir",
            "iv",
        ],
        tmp.path(),
    );
    assert_eq!(code(&iv), 0, "{}", stderr(&iv));

    // the twin shares inputs with the main experiment, so it doubles as a
    // second repeat for the averaging route
    let avg = covmrc(
        &[
            "synthesize",
            "--method",
            "avg",
            "--inputs",
            "ds/inputs.txt",
            "--states",
            "ds/states.txt",
            "--states",
            "ds/states_iv.txt",
            "--out-dir",
            "avg",
        ],
        tmp.path(),
    );
    assert_eq!(code(&avg), 0, "{}", stderr(&avg));

    // at this length and noise level every mitigated route should land in a
    // loose neighborhood of the benchmark gains
    assert_benchmark_gains(&tmp.path().join("bc"), 0.5);
    assert_benchmark_gains(&tmp.path().join("iv"), 0.5);
    assert_benchmark_gains(&tmp.path().join("avg"), 0.5);
}

#[test]
fn iv_route_requires_instrument_states() {
    let tmp = tempfile::tempdir().unwrap();
    covmrc(
        &["simulate", "--t-len", "200", "--variance", "0.1", "--out-dir", "ds"],
        tmp.path(),
    );
    let out = covmrc(
        &[
            "synthesize",
            "--method",
            "iv",
            "--inputs",
            "ds/inputs.txt",
            "--states",
            "ds/states.txt",
        ],
        tmp.path(),
    );
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("iv-states"));
}

#[test]
fn multiple_state_files_rejected_outside_avg() {
    let tmp = tempfile::tempdir().unwrap();
    covmrc(
        &["simulate", "--t-len", "200", "--variance", "0.1", "--out-dir", "ds"],
        tmp.path(),
    );
    let out = covmrc(
        &[
            "synthesize",
            "--method",
            "bc",
            "--inputs",
            "ds/inputs.txt",
            "--states",
            "ds/states.txt",
            "--states",
            "ds/states_iv.txt",
        ],
        tmp.path(),
    );
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("avg"));
}

#[test]
fn model_flags_must_come_together() {
    let tmp = tempfile::tempdir().unwrap();
    covmrc(
        &["simulate", "--t-len", "200", "--variance", "0", "--out-dir", "ds"],
        tmp.path(),
    );
    std::fs::write(tmp.path().join("am.txt"), "3 3 0.2 0 0 0 0.2 0 0 0 0.2").unwrap();
    let out = covmrc(
        &[
            "synthesize",
            "--method",
            "exact",
            "--inputs",
            "ds/inputs.txt",
            "--states",
            "ds/states.txt",
            "--model-am",
            "am.txt",
        ],
        tmp.path(),
    );
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("model-am and model-bm"));
}

#[test]
fn rank_deficient_data_is_a_numerical_error() {
    let tmp = tempfile::tempdir().unwrap();
    // constant input and constant state: the covariance has rank one
    std::fs::write(tmp.path().join("u.txt"), "1 4\n1 1 1 1\n").unwrap();
    std::fs::write(tmp.path().join("x.txt"), "1 5\n2 2 2 2 2\n").unwrap();
    let out = covmrc(
        &[
            "synthesize",
            "--method",
            "raw",
            "--inputs",
            "u.txt",
            "--states",
            "x.txt",
        ],
        tmp.path(),
    );
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn montecarlo_writes_both_csvs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = covmrc(
        &[
            "montecarlo",
            "--t-len",
            "200",
            "--variance",
            "0",
            "--mc-runs",
            "2",
            "--method",
            "exact",
            "--records",
            "r.csv",
            "--summary",
            "s.csv",
        ],
        tmp.path(),
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let records = std::fs::read_to_string(tmp.path().join("r.csv")).unwrap();
    let mut lines = records.lines();
    assert_eq!(
        lines.next().unwrap(),
        "run_index,seed,method,t_len,variance,snr_db,err_kx,err_kr,stable,spectral_radius,solve_time_ms,solver_status"
    );
    let data_rows: Vec<&str> = lines.collect();
    assert_eq!(data_rows.len(), 2);
    for row in data_rows {
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields[2], "exact");
        let err_kx: f64 = fields[6].parse().unwrap();
        assert!(err_kx < 1e-6, "noise-free exact run should match: {row}");
        assert_eq!(fields[8], "true");
    }

    let summary = std::fs::read_to_string(tmp.path().join("s.csv")).unwrap();
    assert!(summary.starts_with("method,t_len,variance,metric,median,q25,q75,mean,std,n"));
    assert!(summary.contains("exact,200,0,err_kx"));
}

#[test]
fn montecarlo_accepts_shipped_quick_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = repo_path("configs/quick.toml");
    let out = covmrc(
        &[
            "montecarlo",
            "--config",
            cfg.to_str().unwrap(),
            "--t-len",
            "300",
            "--mc-runs",
            "2",
            "--records",
            "r.csv",
            "--summary",
            "s.csv",
        ],
        tmp.path(),
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let records = std::fs::read_to_string(tmp.path().join("r.csv")).unwrap();
    // 3 methods from the config x 2 runs
    assert_eq!(records.lines().count(), 1 + 6);
}

#[test]
fn tracking_writes_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let out = covmrc(
        &[
            "tracking",
            "--t-len",
            "300",
            "--variance",
            "0",
            "--mc-runs",
            "2",
            "--method",
            "exact",
            "--output",
            "tr.csv",
        ],
        tmp.path(),
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = std::fs::read_to_string(tmp.path().join("tr.csv")).unwrap();
    assert!(text.starts_with("t,xd_1,xd_2,xd_3,mean_1,mean_2,mean_3,std_1,std_2,std_3"));
    assert!(text.lines().count() > 10);
}

#[test]
fn tracking_accepts_external_gains() {
    let tmp = tempfile::tempdir().unwrap();
    covmrc(
        &["simulate", "--t-len", "800", "--variance", "0", "--out-dir", "ds"],
        tmp.path(),
    );
    covmrc(
        &[
            "synthesize",
            "--method",
            "exact",
            "--inputs",
            "ds/inputs.txt",
            "--states",
            "ds/states.txt",
            "--out-dir",
            "gains",
        ],
        tmp.path(),
    );
    let out = covmrc(
        &[
            "tracking",
            "--t-len",
            "300",
            "--variance",
            "0",
            "--mc-runs",
            "2",
            "--kx-file",
            "gains/kx.txt",
            "--kr-file",
            "gains/kr.txt",
            "--output",
            "tr.csv",
        ],
        tmp.path(),
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("external"));

    let giving_only_kx = covmrc(
        &["tracking", "--kx-file", "gains/kx.txt"],
        tmp.path(),
    );
    assert_eq!(code(&giving_only_kx), 1);
}

#[test]
fn selftest_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = covmrc(&["selftest"], tmp.path());
    let text = stdout(&out);
    assert_eq!(code(&out), 0, "selftest output:\n{text}");
    assert!(text.contains("checks passed"), "{text}");
    assert!(!text.contains("[FAIL]"), "{text}");
}
