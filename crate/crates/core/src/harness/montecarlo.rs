//! Monte-Carlo campaign engine: paired-seed dataset generation, synthesis
//! under every configured method, error metrics against exact-matching ground
//! truth, and CSV emission. Runs execute in parallel but records always come
//! back in deterministic (t_len, method, run) order.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data_pipeline::{
    bias_correct, build_averaged_projection, build_experiment_data,
    build_iv_projection_from_experiment, project, ExperimentData, ProjectedData,
};
use crate::error::{Error, Result};
use crate::harness::config::{ExperimentConfig, Method};
use crate::harness::seeds::{derive_seed, stream};
use crate::linear_system::{simulate_open_loop, spectral_norm, NoiseSpec, Trajectory};
use crate::mrc_synth::{
    gains_from_decision, solve_exact_matching, synthesize, verify_matching, ControllerGains,
};

/// Environment variable that caps the worker-thread count for campaigns.
pub const THREADS_ENV_VAR: &str = "COVMRC_THREADS";

/// Outcome of one synthesis attempt. Failed runs keep NaN metrics and carry
/// the failure text in `solver_status`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub run_index: usize,
    pub seed: u64,
    pub method: Method,
    pub t_len: usize,
    pub variance: f64,
    pub snr_db: f64,
    pub err_kx: f64,
    pub err_kr: f64,
    pub stable: bool,
    pub spectral_radius: f64,
    pub solve_time_ms: f64,
    pub solver_status: String,
}

/// Per-component signal-to-noise ratio in dB, averaged over components:
/// (1/n) sum_i 10 log10(sum_t clean_i(t)^2 / sum_t noise_i(t)^2).
pub fn compute_snr(states_clean: &DMatrix<f64>, noise: &DMatrix<f64>) -> Result<f64> {
    if states_clean.shape() != noise.shape() || states_clean.is_empty() {
        return Err(Error::dimension(
            "SNR inputs",
            format!("matching nonempty shapes, clean {}x{}", states_clean.nrows(), states_clean.ncols()),
            format!("{}x{}", noise.nrows(), noise.ncols()),
        ));
    }
    let n = states_clean.nrows();
    let mut signal = vec![0.0; n];
    let mut noise_e = vec![0.0; n];
    for c in 0..states_clean.ncols() {
        for i in 0..n {
            signal[i] += states_clean[(i, c)] * states_clean[(i, c)];
            noise_e[i] += noise[(i, c)] * noise[(i, c)];
        }
    }
    snr_from_energies(&signal, &noise_e)
}

fn snr_from_energies(signal: &[f64], noise: &[f64]) -> Result<f64> {
    let mut acc = 0.0;
    for (s, w) in signal.iter().zip(noise) {
        if *w == 0.0 {
            return Err(Error::ZeroNoise);
        }
        acc += 10.0 * (s / w).log10();
    }
    Ok(acc / signal.len() as f64)
}

pub(crate) fn uniform_inputs(
    low: f64,
    high: f64,
    m: usize,
    t_len: usize,
    seed: u64,
) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(m, t_len, |_, _| rng.random_range(low..high))
}

/// Per-run dataset seed; identical for every method so comparisons between
/// methods at the same run index see the same noise realization.
pub fn run_seed(config: &ExperimentConfig, t_len: usize, run_index: usize) -> u64 {
    derive_seed(config.seed, &[t_len as u64, run_index as u64])
}

/// Simulate the main experiment and its identically-driven instrument twin.
pub fn run_trajectories(
    config: &ExperimentConfig,
    t_len: usize,
    run_index: usize,
) -> Result<(Trajectory, Trajectory)> {
    let seed = run_seed(config, t_len, run_index);
    let inputs = uniform_inputs(
        config.uniform_low,
        config.uniform_high,
        config.plant.m,
        t_len,
        derive_seed(seed, &[stream::INPUTS]),
    );
    let main = simulate_open_loop(
        &config.plant,
        &inputs,
        &config.x0,
        &NoiseSpec::new(config.variance, derive_seed(seed, &[stream::NOISE]))?,
    )?;
    let twin = simulate_open_loop(
        &config.plant,
        &inputs,
        &config.x0,
        &NoiseSpec::new(config.variance, derive_seed(seed, &[stream::NOISE_IV]))?,
    )?;
    Ok((main, twin))
}

/// Simulate the repeated short experiments consumed by the averaging baseline.
pub fn averaged_trajectories(
    config: &ExperimentConfig,
    t_len: usize,
    run_index: usize,
) -> Result<Vec<Trajectory>> {
    let seed = run_seed(config, t_len, run_index);
    let count = config.avg_count_for(t_len);
    let inputs = uniform_inputs(
        config.uniform_low,
        config.uniform_high,
        config.plant.m,
        config.avg_len,
        derive_seed(seed, &[stream::INPUTS]),
    );
    (0..count)
        .map(|k| {
            simulate_open_loop(
                &config.plant,
                &inputs,
                &config.x0,
                &NoiseSpec::new(config.variance, derive_seed(seed, &[stream::noise_repeat(k)]))?,
            )
        })
        .collect()
}

/// Build the projected matrices a method consumes, together with the dataset
/// SNR in dB (NaN when the dataset carries no noise).
pub fn projection_for_method(
    config: &ExperimentConfig,
    method: Method,
    t_len: usize,
    run_index: usize,
) -> Result<(ProjectedData, f64)> {
    match method {
        Method::Exact | Method::NoiseFree => {
            let (traj, _) = run_trajectories(config, t_len, run_index)?;
            let snr = trajectory_snr(&traj)?;
            let data = build_experiment_data(&traj, false)?;
            Ok((project(&data), snr))
        }
        Method::Raw => {
            let (traj, _) = run_trajectories(config, t_len, run_index)?;
            let snr = trajectory_snr(&traj)?;
            let data = build_experiment_data(&traj, true)?;
            Ok((project(&data), snr))
        }
        Method::Bc => {
            let (traj, _) = run_trajectories(config, t_len, run_index)?;
            let snr = trajectory_snr(&traj)?;
            let data = build_experiment_data(&traj, true)?;
            let proj = project(&data);
            if data.from_noisy {
                Ok((bias_correct(&proj, config.variance)?, snr))
            } else {
                Ok((proj, snr))
            }
        }
        Method::Iv => {
            let (traj, twin) = run_trajectories(config, t_len, run_index)?;
            let snr = trajectory_snr(&traj)?;
            let data = build_experiment_data(&traj, true)?;
            let twin_data = build_experiment_data(&twin, true)?;
            Ok((build_iv_projection_from_experiment(&data, &twin_data)?, snr))
        }
        Method::Avg => {
            let trajectories = averaged_trajectories(config, t_len, run_index)?;
            let n = config.plant.n;
            let mut signal = vec![0.0; n];
            let mut noise = vec![0.0; n];
            for traj in &trajectories {
                for c in 0..traj.states_clean.ncols() {
                    for i in 0..n {
                        signal[i] += traj.states_clean[(i, c)] * traj.states_clean[(i, c)];
                        noise[i] += traj.noise[(i, c)] * traj.noise[(i, c)];
                    }
                }
            }
            let snr =
                if config.variance == 0.0 { f64::NAN } else { snr_from_energies(&signal, &noise)? };
            let experiments: Vec<ExperimentData> = trajectories
                .iter()
                .map(|t| build_experiment_data(t, true))
                .collect::<Result<_>>()?;
            Ok((build_averaged_projection(&experiments)?, snr))
        }
    }
}

fn trajectory_snr(traj: &Trajectory) -> Result<f64> {
    if traj.noise.iter().all(|v| *v == 0.0) {
        return Ok(f64::NAN);
    }
    compute_snr(&traj.states_clean, &traj.noise)
}

/// Reference gains for the error metrics: exact matching on noise-free data
/// from the configured plant, independent of every campaign run.
pub fn ground_truth_gains(config: &ExperimentConfig) -> Result<ControllerGains> {
    let seed = derive_seed(config.seed, &[stream::GROUND_TRUTH]);
    let t_len = 1000.max(4 * (config.plant.m + config.plant.n));
    let inputs =
        uniform_inputs(config.uniform_low, config.uniform_high, config.plant.m, t_len, seed);
    let traj = simulate_open_loop(&config.plant, &inputs, &config.x0, &NoiseSpec::noise_free(0))?;
    let data = build_experiment_data(&traj, false)?;
    let proj = project(&data);
    let decision = solve_exact_matching(&proj, &config.model)?;
    gains_from_decision(&decision, &proj, &config.model)
}

fn run_one(
    config: &ExperimentConfig,
    truth: &ControllerGains,
    method: Method,
    t_len: usize,
    run_index: usize,
) -> RunRecord {
    let mut record = RunRecord {
        run_index,
        seed: run_seed(config, t_len, run_index),
        method,
        t_len,
        variance: config.variance,
        snr_db: f64::NAN,
        err_kx: f64::NAN,
        err_kr: f64::NAN,
        stable: false,
        spectral_radius: f64::NAN,
        solve_time_ms: f64::NAN,
        solver_status: String::new(),
    };

    let (proj, snr) = match projection_for_method(config, method, t_len, run_index) {
        Ok(pair) => pair,
        Err(e) => {
            record.solver_status = format!("data: {e}");
            return record;
        }
    };
    record.snr_db = snr;

    let started = Instant::now();
    let synthesized = match method {
        Method::Exact => solve_exact_matching(&proj, &config.model)
            .and_then(|d| gains_from_decision(&d, &proj, &config.model)),
        _ => synthesize(&proj, &config.model, &config.synthesis),
    };
    record.solve_time_ms = started.elapsed().as_secs_f64() * 1e3;

    match synthesized {
        Ok(gains) => {
            record.err_kx = spectral_norm(&(&gains.kx - &truth.kx));
            record.err_kr = spectral_norm(&(&gains.kr - &truth.kr));
            let verdict = verify_matching(&config.plant, &config.model, &gains, 1e-3);
            record.spectral_radius = verdict.spectral_radius;
            record.stable = verdict.stable;
            record.solver_status =
                if method == Method::Exact { "exact".into() } else { "optimal".into() };
        }
        Err(e) => record.solver_status = e.to_string(),
    }
    record
}

fn thread_count_override() -> Option<usize> {
    std::env::var(THREADS_ENV_VAR).ok()?.trim().parse::<usize>().ok().filter(|k| *k >= 1)
}

/// Run the full campaign: every configured experiment length, method and run
/// index, in parallel, with one record per (t_len, method, run).
pub fn run_monte_carlo(config: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    config.validate()?;
    let truth = ground_truth_gains(config)?;
    let mut jobs = Vec::new();
    for t_len in config.t_values() {
        for &method in &config.methods {
            for run_index in 0..config.mc_runs {
                jobs.push((method, t_len, run_index));
            }
        }
    }
    let execute = || {
        jobs.par_iter()
            .map(|&(method, t_len, run_index)| run_one(config, &truth, method, t_len, run_index))
            .collect::<Vec<_>>()
    };
    let records = match thread_count_override() {
        Some(threads) => rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Config(format!("{THREADS_ENV_VAR}: {e}")))?
            .install(execute),
        None => execute(),
    };
    Ok(records)
}

pub const RECORDS_HEADER: &str =
    "run_index,seed,method,t_len,variance,snr_db,err_kx,err_kr,stable,spectral_radius,solve_time_ms,solver_status";

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn records_csv(records: &[RunRecord]) -> String {
    let mut out = String::from(RECORDS_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.run_index,
            r.seed,
            r.method,
            r.t_len,
            r.variance,
            r.snr_db,
            r.err_kx,
            r.err_kr,
            r.stable,
            r.spectral_radius,
            r.solve_time_ms,
            csv_field(&r.solver_status),
        ));
    }
    out
}

/// One aggregate row of the summary CSV. Plain rows carry a method name;
/// paired rows carry "a-minus-b" and aggregate per-run metric differences.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: String,
    pub t_len: usize,
    pub variance: f64,
    pub metric: String,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

/// Linear-interpolation quantile (the common "type 7" rule) on a sorted slice.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn stats_row(
    method: String,
    t_len: usize,
    variance: f64,
    metric: &str,
    values: &[f64],
) -> SummaryRow {
    let mut finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    finite.sort_by(f64::total_cmp);
    let n = finite.len();
    let mean = if n > 0 { finite.iter().sum::<f64>() / n as f64 } else { f64::NAN };
    let std = if n > 1 {
        (finite.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else if n == 1 {
        0.0
    } else {
        f64::NAN
    };
    SummaryRow {
        method,
        t_len,
        variance,
        metric: metric.to_string(),
        median: quantile(&finite, 0.5),
        q25: quantile(&finite, 0.25),
        q75: quantile(&finite, 0.75),
        mean,
        std,
        n,
    }
}

const SUMMARY_METRICS: &[&str] =
    &["err_kx", "err_kr", "snr_db", "spectral_radius", "solve_time_ms", "stable"];

fn metric_value(record: &RunRecord, metric: &str) -> f64 {
    match metric {
        "err_kx" => record.err_kx,
        "err_kr" => record.err_kr,
        "snr_db" => record.snr_db,
        "spectral_radius" => record.spectral_radius,
        "solve_time_ms" => record.solve_time_ms,
        "stable" => {
            if record.stable {
                1.0
            } else {
                0.0
            }
        }
        _ => f64::NAN,
    }
}

/// Pooled per-method statistics for every metric, then paired per-run error
/// differences for every method pair sharing a (t_len, variance) group.
pub fn summarize(records: &[RunRecord]) -> Vec<SummaryRow> {
    let mut groups: Vec<((Method, usize, u64), Vec<&RunRecord>)> = Vec::new();
    for r in records {
        let key = (r.method, r.t_len, r.variance.to_bits());
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(r),
            None => groups.push((key, vec![r])),
        }
    }

    let mut rows = Vec::new();
    for ((method, t_len, var_bits), group) in &groups {
        let variance = f64::from_bits(*var_bits);
        for metric in SUMMARY_METRICS {
            let values: Vec<f64> = group.iter().map(|r| metric_value(r, metric)).collect();
            rows.push(stats_row(method.to_string(), *t_len, variance, metric, &values));
        }
    }

    // paired differences, ordered by the canonical method order
    let mut scopes: Vec<(usize, u64)> = Vec::new();
    for ((_, t_len, var_bits), _) in &groups {
        if !scopes.contains(&(*t_len, *var_bits)) {
            scopes.push((*t_len, *var_bits));
        }
    }
    for (t_len, var_bits) in scopes {
        let variance = f64::from_bits(var_bits);
        let present: Vec<Method> = Method::ALL
            .iter()
            .copied()
            .filter(|m| groups.iter().any(|((gm, gt, gv), _)| gm == m && *gt == t_len && *gv == var_bits))
            .collect();
        for (ai, &a) in present.iter().enumerate() {
            for &b in &present[ai + 1..] {
                let by_run = |method: Method, metric: &str| -> Vec<(usize, f64)> {
                    groups
                        .iter()
                        .find(|((gm, gt, gv), _)| *gm == method && *gt == t_len && *gv == var_bits)
                        .map(|(_, v)| v.iter().map(|r| (r.run_index, metric_value(r, metric))).collect())
                        .unwrap_or_default()
                };
                for metric in ["err_kx", "err_kr"] {
                    let left = by_run(a, metric);
                    let right = by_run(b, metric);
                    let deltas: Vec<f64> = left
                        .iter()
                        .filter_map(|(run, va)| {
                            right.iter().find(|(rb, _)| rb == run).map(|(_, vb)| va - vb)
                        })
                        .collect();
                    rows.push(stats_row(
                        format!("{a}-minus-{b}"),
                        t_len,
                        variance,
                        metric,
                        &deltas,
                    ));
                }
            }
        }
    }
    rows
}

pub const SUMMARY_HEADER: &str = "method,t_len,variance,metric,median,q25,q75,mean,std,n";

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            csv_field(&r.method),
            r.t_len,
            r.variance,
            r.metric,
            r.median,
            r.q25,
            r.q75,
            r.mean,
            r.std,
            r.n,
        ));
    }
    out
}

/// Records CSV with the wall-clock column blanked, for byte-identity checks.
pub fn records_csv_masked_timing(records: &[RunRecord]) -> String {
    let mut masked = records.to_vec();
    for r in &mut masked {
        r.solve_time_ms = 0.0;
    }
    records_csv(&masked)
}
