//! Self-contained acceptance battery at desk scale: every bundled claim is
//! re-checked with short experiments and few runs so a full pass takes
//! seconds. The CLI exposes it as the `selftest` subcommand.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data_pipeline::{
    bias_correct, build_experiment_data, build_iv_projection_from_experiment, project,
};
use crate::error::Result;
use crate::harness::config::{ExperimentConfig, Method};
use crate::harness::defaults;
use crate::harness::montecarlo::{
    self, compute_snr, records_csv_masked_timing, run_monte_carlo, run_trajectories, summarize,
    RunRecord,
};
use crate::linear_system::{simulate_open_loop, LtiSystem, NoiseSpec, ReferenceModel};
use crate::mrc_synth::{gains_from_decision, solve_exact_matching, synthesize, SynthesisOptions};
use crate::sdp_core::{check_solution, solve, LmiBlock, SdpProblem, SdpStatus, SolveSettings};

/// One line of the selftest report.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckItem {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

pub fn all_passed(items: &[CheckItem]) -> bool {
    items.iter().all(|i| i.passed)
}

pub fn render(items: &[CheckItem]) -> String {
    let mut out = String::new();
    for i in items {
        let tag = if i.passed { "PASS" } else { "FAIL" };
        out.push_str(&format!("[{tag}] {}: {}\n", i.name, i.detail));
    }
    let passed = items.iter().filter(|i| i.passed).count();
    out.push_str(&format!("{passed}/{} checks passed\n", items.len()));
    out
}

fn item(name: &'static str, body: impl FnOnce() -> Result<(bool, String)>) -> CheckItem {
    match body() {
        Ok((passed, detail)) => CheckItem { name, passed, detail },
        Err(e) => CheckItem { name, passed: false, detail: format!("error: {e}") },
    }
}

/// Run the whole battery; items never panic and never abort each other.
pub fn run_selftest() -> Vec<CheckItem> {
    let mut items = vec![
        item("exact-matching-reproduction", check_exact_reproduction),
        item("snr-bands", check_snr_bands),
        item("error-consistency-trend", check_consistency_trend),
    ];
    match benefit_records() {
        Ok(records) => {
            items.push(item("noise-mitigation-benefit", || check_benefit(&records)));
            items.push(item("stability-rate", || check_stability(&records)));
        }
        Err(e) => {
            for name in ["noise-mitigation-benefit", "stability-rate"] {
                items.push(CheckItem { name, passed: false, detail: format!("error: {e}") });
            }
        }
    }
    items.push(item("sdp-oracle-equivalence", check_oracle_equivalence));
    items.push(item("expectation-identities", check_expectation_identities));
    items.push(item("feasible-matching-equivalence", check_feasible_equivalence));
    items.push(item("solve-time-flatness", check_flatness));
    items.push(item("csv-reproducibility", check_reproducibility));
    items
}

fn check_exact_reproduction() -> Result<(bool, String)> {
    let started = Instant::now();
    let mut cfg = ExperimentConfig::benchmark_default();
    cfg.variance = 0.0;
    let truth = montecarlo::ground_truth_gains(&cfg)?;
    let published = defaults::benchmark_gains();
    let dev_kx = (&truth.kx - &published.kx).abs().max();
    let dev_kr = (&truth.kr - &published.kr).abs().max();
    let a_cl = &cfg.plant.a_matrix + &cfg.plant.b_matrix * &truth.kx;
    let dev_cl = (&a_cl - &cfg.model.am_matrix).abs().max();
    let elapsed = started.elapsed().as_secs_f64();
    let passed = dev_kx < 1e-3 && dev_kr < 1e-3 && dev_cl < 1e-3 && elapsed < 1.0;
    Ok((
        passed,
        format!(
            "gain deviations ({dev_kx:.1e}, {dev_kr:.1e}), closed-loop deviation {dev_cl:.1e}, {elapsed:.2} s"
        ),
    ))
}

fn check_snr_bands() -> Result<(bool, String)> {
    let mut passed = true;
    let mut detail = String::new();
    for (variance, lo, hi) in [(0.25, 11.0, 15.0), (1.0, 5.0, 9.0)] {
        let mut cfg = ExperimentConfig::benchmark_default();
        cfg.t_len = 3000;
        cfg.variance = variance;
        cfg.seed = 101;
        let mut acc = 0.0;
        let runs = 10;
        for run in 0..runs {
            let (traj, _) = run_trajectories(&cfg, cfg.t_len, run)?;
            acc += compute_snr(&traj.states_clean, &traj.noise)?;
        }
        let mean = acc / runs as f64;
        passed &= (lo..=hi).contains(&mean);
        detail.push_str(&format!("sigma2={variance}: {mean:.1} dB in [{lo}, {hi}]; "));
    }
    Ok((passed, detail.trim_end().to_string()))
}

fn check_consistency_trend() -> Result<(bool, String)> {
    let mut cfg = ExperimentConfig::benchmark_default();
    cfg.variance = 0.25;
    cfg.mc_runs = 12;
    cfg.seed = 23;
    cfg.methods = vec![Method::Bc, Method::Iv];
    cfg.t_grid = vec![300, 3000];
    let rows = summarize(&run_monte_carlo(&cfg)?);
    let median = |method: &str, t_len: usize| {
        rows.iter()
            .find(|r| r.method == method && r.t_len == t_len && r.metric == "err_kx")
            .map(|r| r.median)
            .unwrap_or(f64::NAN)
    };
    let mut passed = true;
    let mut detail = String::new();
    for method in ["bc", "iv"] {
        let short = median(method, 300);
        let long = median(method, 3000);
        passed &= long <= short && long < 0.1;
        detail.push_str(&format!("{method}: {short:.3} -> {long:.3}; "));
    }
    Ok((passed, detail.trim_end().to_string()))
}

fn benefit_records() -> Result<Vec<RunRecord>> {
    let mut cfg = ExperimentConfig::benchmark_default();
    cfg.t_len = 3000;
    cfg.variance = 1.0;
    cfg.mc_runs = 12;
    cfg.seed = 31;
    cfg.methods = vec![Method::Raw, Method::Bc, Method::Iv];
    run_monte_carlo(&cfg)
}

fn check_benefit(records: &[RunRecord]) -> Result<(bool, String)> {
    let rows = summarize(records);
    let median = |method: &str| {
        rows.iter()
            .find(|r| r.method == method && r.metric == "err_kx")
            .map(|r| r.median)
            .unwrap_or(f64::NAN)
    };
    let raw = median("raw");
    let bc = median("bc");
    let iv = median("iv");
    let passed = bc < raw && iv < raw;
    Ok((passed, format!("median err_kx raw {raw:.3}, bc {bc:.3}, iv {iv:.3}")))
}

fn check_stability(records: &[RunRecord]) -> Result<(bool, String)> {
    let mut passed = true;
    let mut detail = String::new();
    for method in [Method::Bc, Method::Iv] {
        let group: Vec<_> = records.iter().filter(|r| r.method == method).collect();
        let stable = group.iter().filter(|r| r.stable).count();
        let rate = stable as f64 / group.len().max(1) as f64;
        passed &= rate >= 0.95;
        detail.push_str(&format!("{method}: {stable}/{} stable; ", group.len()));
    }
    Ok((passed, detail.trim_end().to_string()))
}

fn check_oracle_equivalence() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    let mut worst_gap = 0.0f64;
    for trial in 0..10 {
        let k = 2 + (trial % 5);
        let instance = oracle_instance(&mut rng, k);
        let sol = solve(&instance.problem, &SolveSettings::default())?;
        if sol.status != SdpStatus::Optimal {
            return Ok((false, format!("instance {trial}: status {}", sol.status)));
        }
        let check = check_solution(&instance.problem, &sol.y);
        if check.equality_residual > 1e-6 || check.min_lmi_eigs.iter().any(|e| *e < -1e-6) {
            return Ok((
                false,
                format!(
                    "instance {trial}: certification failed (eq {:.1e}, min eig {:.1e})",
                    check.equality_residual,
                    check.min_lmi_eigs.iter().fold(f64::INFINITY, |a, b| a.min(*b)),
                ),
            ));
        }
        let gap =
            (sol.objective_value - instance.optimum).abs() / (1.0 + instance.optimum.abs());
        worst_gap = worst_gap.max(gap);
    }
    Ok((worst_gap < 1e-5, format!("worst relative objective gap {worst_gap:.1e} over 10 instances")))
}

fn check_expectation_identities() -> Result<(bool, String)> {
    let cfg = ExperimentConfig::benchmark_default();
    let sys = &cfg.plant;
    let t_len = 1000;
    let variance = 1.0;
    let runs = 50;
    let inputs = montecarlo::uniform_inputs(-2.0, 2.0, sys.m, t_len, 71);
    let x0 = DVector::zeros(sys.n);
    let clean = simulate_open_loop(sys, &inputs, &x0, &NoiseSpec::noise_free(0))?;
    let target = project(&build_experiment_data(&clean, false)?).x0_bar;

    let dims = (sys.n, sys.m + sys.n);
    let mut acc = [
        (DMatrix::zeros(dims.0, dims.1), DMatrix::zeros(dims.0, dims.1)),
        (DMatrix::zeros(dims.0, dims.1), DMatrix::zeros(dims.0, dims.1)),
    ];
    for r in 0..runs {
        let traj = simulate_open_loop(sys, &inputs, &x0, &NoiseSpec::new(variance, 7000 + 2 * r)?)?;
        let twin = simulate_open_loop(sys, &inputs, &x0, &NoiseSpec::new(variance, 7001 + 2 * r)?)?;
        let data = build_experiment_data(&traj, true)?;
        let bc = bias_correct(&project(&data), variance)?;
        let iv = build_iv_projection_from_experiment(&data, &build_experiment_data(&twin, true)?)?;
        for (projected, (mean, sq)) in [bc, iv].into_iter().zip(acc.iter_mut()) {
            *mean += &projected.x0_bar;
            *sq += projected.x0_bar.map(|v| v * v);
        }
    }

    let mut passed = true;
    let mut detail = String::new();
    for (label, (mut mean, mut sq)) in ["bc", "iv"].into_iter().zip(acc) {
        mean /= runs as f64;
        sq /= runs as f64;
        let mut within = 0;
        let total = dims.0 * dims.1;
        for i in 0..dims.0 {
            for j in 0..dims.1 {
                let var = (sq[(i, j)] - mean[(i, j)] * mean[(i, j)]).max(0.0);
                let se = (var / runs as f64).sqrt();
                if (mean[(i, j)] - target[(i, j)]).abs() <= 3.0 * se + 1e-12 {
                    within += 1;
                }
            }
        }
        passed &= within * 100 >= total * 88;
        detail.push_str(&format!("{label}: {within}/{total} entries within 3 SE; "));
    }
    Ok((passed, detail.trim_end().to_string()))
}

fn check_feasible_equivalence() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(67);
    let mut worst = 0.0f64;
    for case in 0..4 {
        let (sys, model) = random_feasible_case(&mut rng);
        let inputs = montecarlo::uniform_inputs(-2.0, 2.0, sys.m, 400, 900 + case);
        let traj = simulate_open_loop(&sys, &inputs, &DVector::zeros(sys.n), &NoiseSpec::noise_free(0))?;
        let proj = project(&build_experiment_data(&traj, false)?);
        let exact_decision = solve_exact_matching(&proj, &model)?;
        let exact = gains_from_decision(&exact_decision, &proj, &model)?;
        let sdp = synthesize(&proj, &model, &SynthesisOptions::default())?;
        let dev = (&exact.kx - &sdp.kx).abs().max().max((&exact.kr - &sdp.kr).abs().max());
        worst = worst.max(dev);
    }
    Ok((worst < 1e-5, format!("worst gain deviation {worst:.1e} over 4 feasible plants")))
}

fn check_flatness() -> Result<(bool, String)> {
    let median_time = |t_len: usize| -> Result<f64> {
        let mut cfg = ExperimentConfig::benchmark_default();
        cfg.t_len = t_len;
        cfg.variance = 0.25;
        cfg.mc_runs = 9;
        cfg.seed = 41;
        cfg.methods = vec![Method::Bc];
        let records = run_monte_carlo(&cfg)?;
        let mut times: Vec<f64> = records.iter().map(|r| r.solve_time_ms).collect();
        times.sort_by(f64::total_cmp);
        Ok(times[times.len() / 2])
    };
    let short = median_time(300)?;
    let long = median_time(3000)?;
    let ratio = (short / long).max(long / short);
    Ok((ratio < 2.0, format!("median solve {short:.2} ms at T=300 vs {long:.2} ms at T=3000 (x{ratio:.2})")))
}

fn check_reproducibility() -> Result<(bool, String)> {
    let mut cfg = ExperimentConfig::benchmark_default();
    cfg.t_len = 300;
    cfg.variance = 0.5;
    cfg.mc_runs = 3;
    cfg.seed = 53;
    cfg.methods = vec![Method::Bc, Method::Iv];
    let a = run_monte_carlo(&cfg)?;
    let b = run_monte_carlo(&cfg)?;
    let identical = records_csv_masked_timing(&a) == records_csv_masked_timing(&b);
    Ok((identical, "records CSV byte-identical across reruns (wall-clock column excluded)".into()))
}

/// Stable random plant plus a model it can match by construction:
/// A_M = A + B K_x and B_M = B K_r for drawn gains.
fn random_feasible_case(rng: &mut ChaCha8Rng) -> (LtiSystem, ReferenceModel) {
    loop {
        let raw_a = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
        let rho_a = crate::linalg::spectral_radius(&raw_a);
        if !(rho_a > 0.05) {
            continue;
        }
        let a = raw_a * (0.8 / rho_a);
        let b: DMatrix<f64> = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
        if b.determinant().abs() < 0.1 {
            continue;
        }
        let kx = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-0.8..0.8));
        let kr = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-0.8..0.8));
        let am = &a + &b * kx;
        if crate::linalg::spectral_radius(&am) >= 0.95 {
            continue;
        }
        let bm = &b * kr;
        let sys = LtiSystem::new(a, b).expect("validated dims");
        let Ok(model) = ReferenceModel::new(am, bm) else { continue };
        return (sys, model);
    }
}

// ---- standalone 1-D brute-force oracle for the solver check ----

struct OracleInstance {
    problem: SdpProblem,
    optimum: f64,
}

fn sym_rand(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let m = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    (&m + m.transpose()) / 2.0
}

fn min_eig_2x2(m: &DMatrix<f64>) -> f64 {
    let tr = m[(0, 0)] + m[(1, 1)];
    let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    let disc = (tr * tr - 4.0 * det).max(0.0).sqrt();
    (tr - disc) / 2.0
}

fn lam_at(base: &DMatrix<f64>, dir: &DMatrix<f64>, s: f64) -> f64 {
    min_eig_2x2(&(base + dir * s))
}

fn refine_endpoint(base: &DMatrix<f64>, dir: &DMatrix<f64>, feasible: f64, infeasible: f64) -> f64 {
    let mut lo = feasible;
    let mut hi = infeasible;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if lam_at(base, dir, mid) >= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Feasible interval of base + s * dir >= 0 by grid scan plus bisection;
/// None when empty or escaping the scan window.
fn oracle_interval(base: &DMatrix<f64>, dir: &DMatrix<f64>) -> Option<(f64, f64)> {
    let scan = 60.0;
    let step = 0.01;
    let count = (2.0 * scan / step) as usize + 1;
    let mut lo_grid = f64::INFINITY;
    let mut hi_grid = f64::NEG_INFINITY;
    for i in 0..count {
        let s = -scan + step * i as f64;
        if lam_at(base, dir, s) >= 0.0 {
            lo_grid = lo_grid.min(s);
            hi_grid = hi_grid.max(s);
        }
    }
    if lo_grid > hi_grid || lo_grid <= -scan + step || hi_grid >= scan - step {
        return None;
    }
    let lo = refine_endpoint(base, dir, lo_grid, lo_grid - 2.0 * step);
    let hi = refine_endpoint(base, dir, hi_grid, hi_grid + 2.0 * step);
    Some((lo, hi))
}

/// Random instance with one unit equality row and one 2x2 block whose
/// coefficients all point along a single direction orthogonal to the equality,
/// so the feasible set is a segment and the optimum is a scalar search.
fn oracle_instance(rng: &mut ChaCha8Rng, k: usize) -> OracleInstance {
    loop {
        let mut a = DVector::from_fn(k, |_, _| rng.random_range(-1.0..1.0));
        if a.norm() < 1e-3 {
            continue;
        }
        a /= a.norm();
        let f0: f64 = rng.random_range(-1.0..1.0);
        let mut dvec = DVector::from_fn(k, |_, _| rng.random_range(-1.0..1.0));
        dvec -= &a * a.dot(&dvec);
        if dvec.norm() < 1e-6 {
            continue;
        }
        dvec /= dvec.norm();
        let f_dir = sym_rand(rng, 2);
        if min_eig_2x2(&f_dir) > -0.1 || min_eig_2x2(&(-&f_dir)) > -0.1 {
            continue;
        }
        let base = sym_rand(rng, 2) + DMatrix::identity(2, 2) * 2.0;
        let alpha: f64 = rng.random_range(-1.5..1.5);
        let beta: f64 = rng.random_range(-1.5..1.5);
        if beta.abs() < 1e-3 {
            continue;
        }
        let c = &a * alpha + &dvec * beta;
        let Some((lo, hi)) = oracle_interval(&base, &f_dir) else { continue };
        let optimum = alpha * f0 + (beta * lo).min(beta * hi);
        let coeffs = (0..k).map(|i| &f_dir * dvec[i]).collect();
        let problem = SdpProblem {
            num_vars: k,
            objective: c,
            eq_matrix: DMatrix::from_fn(1, k, |_, j| a[j]),
            eq_rhs: DVector::from_element(1, f0),
            lmi_blocks: vec![LmiBlock { base, coeffs }],
        };
        return OracleInstance { problem, optimum };
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_interval_endpoints_sit_on_the_boundary() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let base = sym_rand(&mut rng, 2) + DMatrix::identity(2, 2) * 2.0;
            let dir = loop {
                let d = sym_rand(&mut rng, 2);
                if min_eig_2x2(&d) < -0.1 && min_eig_2x2(&(-&d)) < -0.1 {
                    break d;
                }
            };
            let Some((lo, hi)) = oracle_interval(&base, &dir) else { continue };
            assert!(lo < hi);
            assert!(lam_at(&base, &dir, lo).abs() < 1e-8);
            assert!(lam_at(&base, &dir, hi).abs() < 1e-8);
            assert!(lam_at(&base, &dir, 0.5 * (lo + hi)) > 0.0);
        }
    }

    #[test]
    fn full_battery_passes() {
        let items = run_selftest();
        let report = render(&items);
        assert!(all_passed(&items), "selftest failures:\n{report}");
        assert_eq!(items.len(), 10);
    }
}
