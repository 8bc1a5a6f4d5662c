//! Construction of the data-derived matrices used by synthesis: raw blocks,
//! the stacked regressor Phi, the sample covariance Sigma, T-normalized
//! projections, and the bias-corrected / instrumental-variable / averaged
//! variants, plus the persistence-of-excitation check.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linear_system::{LtiSystem, Trajectory};

/// Recommended relative threshold below which singular values of Phi count as zero.
pub const PE_RANK_TOL: f64 = 1e-10;
/// Minimum singular value of the effective covariance for synthesis to proceed.
pub const COVARIANCE_MIN_SV: f64 = 1e-8;

/// Which noise-handling route produced a set of projected matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    NoiseFree,
    RawNoisy,
    BiasCorrected,
    InstrumentalVariable,
    Averaged,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Regime::NoiseFree => "noise-free",
            Regime::RawNoisy => "raw-noisy",
            Regime::BiasCorrected => "bias-corrected",
            Regime::InstrumentalVariable => "instrumental-variable",
            Regime::Averaged => "averaged",
        };
        f.write_str(s)
    }
}

/// Raw experiment blocks: U0 and X0 hold columns 0..T, X1 holds columns 1..=T,
/// phi = [U0; X0], sigma = (1/T) phi phi'.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentData {
    pub u0: DMatrix<f64>,
    pub x0_block: DMatrix<f64>,
    pub x1_block: DMatrix<f64>,
    pub phi: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
    pub t_len: usize,
    pub from_noisy: bool,
}

impl ExperimentData {
    /// Assemble blocks from an input sequence (m x T) and a state sequence
    /// (n x (T+1)); `from_noisy` records whether the states carry noise.
    pub fn from_matrices(
        inputs: &DMatrix<f64>,
        states: &DMatrix<f64>,
        from_noisy: bool,
    ) -> Result<Self> {
        let t_len = inputs.ncols();
        if t_len < 1 {
            return Err(Error::dimension("experiment data", ">= 1 samples", "0 samples"));
        }
        if states.ncols() != t_len + 1 {
            return Err(Error::dimension(
                "experiment states",
                format!("{} columns", t_len + 1),
                format!("{} columns", states.ncols()),
            ));
        }
        let m = inputs.nrows();
        let n = states.nrows();
        if m == 0 || n == 0 {
            return Err(Error::dimension("experiment data", "m, n >= 1", "empty matrix"));
        }
        if !inputs.iter().all(|v| v.is_finite()) || !states.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("experiment data".into()));
        }
        let u0 = inputs.clone();
        let x0_block = states.columns(0, t_len).into_owned();
        let x1_block = states.columns(1, t_len).into_owned();
        let mut phi = DMatrix::zeros(m + n, t_len);
        phi.rows_mut(0, m).copy_from(&u0);
        phi.rows_mut(m, n).copy_from(&x0_block);
        let sigma = sample_covariance(&phi);
        Ok(Self { u0, x0_block, x1_block, phi, sigma, t_len, from_noisy })
    }

    pub fn m(&self) -> usize {
        self.u0.nrows()
    }

    pub fn n(&self) -> usize {
        self.x0_block.nrows()
    }
}

fn sample_covariance(phi: &DMatrix<f64>) -> DMatrix<f64> {
    let t = phi.ncols() as f64;
    let raw = phi * phi.transpose() / t;
    (&raw + raw.transpose()) / 2.0
}

/// Fully processed T-normalized matrices consumed by synthesis. Across all
/// regimes the stack [u0_bar; x0_bar] equals `sigma`, the effective covariance
/// whose conditioning gates synthesis.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedData {
    pub x0_bar: DMatrix<f64>,
    pub x1_bar: DMatrix<f64>,
    pub u0_bar: DMatrix<f64>,
    pub regime: Regime,
    pub sigma: DMatrix<f64>,
    pub t_len: usize,
}

impl ProjectedData {
    pub fn m(&self) -> usize {
        self.u0_bar.nrows()
    }

    pub fn n(&self) -> usize {
        self.x0_bar.nrows()
    }
}

/// Build the raw blocks from a simulated trajectory, from either the noisy or
/// the clean states.
pub fn build_experiment_data(traj: &Trajectory, use_noisy: bool) -> Result<ExperimentData> {
    let states = if use_noisy { &traj.states_noisy } else { &traj.states_clean };
    let carries_noise = use_noisy && traj.noise.iter().any(|v| *v != 0.0);
    ExperimentData::from_matrices(&traj.inputs, states, carries_noise)
}

/// Numerical rank report for Phi together with the smallest eigenvalue of Sigma.
#[derive(Debug, Clone, PartialEq)]
pub struct PeReport {
    pub rank: usize,
    pub min_singular_value: f64,
    pub min_sigma_eigenvalue: f64,
    pub satisfied: bool,
}

/// Persistence-of-excitation check: Phi must have full row rank, counting
/// singular values above tol * sigma_max.
pub fn check_persistence_of_excitation(data: &ExperimentData, tol: f64) -> PeReport {
    let svals = crate::linalg::singular_values(&data.phi);
    let smax = svals.max();
    let rank = svals.iter().filter(|s| **s > tol * smax).count();
    let full = data.m() + data.n();
    let min_singular_value = if svals.len() == full { svals[svals.len() - 1] } else { 0.0 };
    let min_sigma_eigenvalue = data
        .sigma
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .min();
    PeReport { rank, min_singular_value, min_sigma_eigenvalue, satisfied: rank == full }
}

/// T-normalized projection: x1_bar = (1/T) X1 Phi', and [u0_bar; x0_bar]
/// taken as the rows of Sigma so the block identity holds exactly.
pub fn project(data: &ExperimentData) -> ProjectedData {
    let m = data.m();
    let n = data.n();
    let t = data.t_len as f64;
    let x1_bar = &data.x1_block * data.phi.transpose() / t;
    let u0_bar = data.sigma.rows(0, m).into_owned();
    let x0_bar = data.sigma.rows(m, n).into_owned();
    let regime = if data.from_noisy { Regime::RawNoisy } else { Regime::NoiseFree };
    ProjectedData { x0_bar, x1_bar, u0_bar, regime, sigma: data.sigma.clone(), t_len: data.t_len }
}

/// Subtract the known noise contribution variance * I from the last n columns
/// of x0_bar (and the matching block of sigma); x1_bar is untouched.
pub fn bias_correct(proj: &ProjectedData, variance: f64) -> Result<ProjectedData> {
    if proj.regime != Regime::RawNoisy {
        return Err(Error::WrongRegime {
            need: Regime::RawNoisy.to_string(),
            got: proj.regime.to_string(),
        });
    }
    if !(variance >= 0.0) || !variance.is_finite() {
        return Err(Error::Config(format!("variance must be finite and >= 0, got {variance}")));
    }
    let m = proj.m();
    let n = proj.n();
    let mut out = proj.clone();
    for i in 0..n {
        out.x0_bar[(i, m + i)] -= variance;
        out.sigma[(m + i, m + i)] -= variance;
    }
    out.regime = Regime::BiasCorrected;
    Ok(out)
}

/// Project against the instrument regressor built from a second experiment's
/// states: phi_iv = [U0; iv_states], all products taken with phi_iv.
pub fn build_iv_projection(data: &ExperimentData, iv_states: &DMatrix<f64>) -> Result<ProjectedData> {
    let m = data.m();
    let n = data.n();
    if iv_states.nrows() != n || iv_states.ncols() != data.t_len {
        return Err(Error::dimension(
            "instrument states",
            format!("{}x{}", n, data.t_len),
            format!("{}x{}", iv_states.nrows(), iv_states.ncols()),
        ));
    }
    if !iv_states.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("instrument states".into()));
    }
    let t = data.t_len as f64;
    let mut phi_iv = DMatrix::zeros(m + n, data.t_len);
    phi_iv.rows_mut(0, m).copy_from(&data.u0);
    phi_iv.rows_mut(m, n).copy_from(iv_states);
    let cross = &data.phi * phi_iv.transpose() / t;
    let x1_bar = &data.x1_block * phi_iv.transpose() / t;
    let u0_bar = cross.rows(0, m).into_owned();
    let x0_bar = cross.rows(m, n).into_owned();
    Ok(ProjectedData {
        x0_bar,
        x1_bar,
        u0_bar,
        regime: Regime::InstrumentalVariable,
        sigma: cross,
        t_len: data.t_len,
    })
}

/// Same as [`build_iv_projection`] but takes the instrument experiment whole
/// and verifies bit-exact equality of the two input sequences.
pub fn build_iv_projection_from_experiment(
    data: &ExperimentData,
    iv_data: &ExperimentData,
) -> Result<ProjectedData> {
    if data.u0 != iv_data.u0 {
        return Err(Error::InputMismatch);
    }
    build_iv_projection(data, &iv_data.x0_block)
}

/// Baseline that averages the raw X0/X1 blocks over repeated identical-input
/// experiments and projects the averaged blocks.
pub fn build_averaged_projection(experiments: &[ExperimentData]) -> Result<ProjectedData> {
    let first = experiments
        .first()
        .ok_or_else(|| Error::Config("averaging needs at least one experiment".into()))?;
    let m = first.m();
    let n = first.n();
    let t_len = first.t_len;
    let mut x0_sum = DMatrix::zeros(n, t_len);
    let mut x1_sum = DMatrix::zeros(n, t_len);
    for exp in experiments {
        if exp.t_len != t_len || exp.m() != m || exp.n() != n {
            return Err(Error::dimension(
                "averaged experiments",
                format!("m={m}, n={n}, T={t_len}"),
                format!("m={}, n={}, T={}", exp.m(), exp.n(), exp.t_len),
            ));
        }
        if exp.u0 != first.u0 {
            return Err(Error::InputMismatch);
        }
        x0_sum += &exp.x0_block;
        x1_sum += &exp.x1_block;
    }
    let count = experiments.len() as f64;
    let x0_avg = x0_sum / count;
    let x1_avg = x1_sum / count;
    let t = t_len as f64;
    let mut phi = DMatrix::zeros(m + n, t_len);
    phi.rows_mut(0, m).copy_from(&first.u0);
    phi.rows_mut(m, n).copy_from(&x0_avg);
    let sigma = sample_covariance(&phi);
    let x1_bar = &x1_avg * phi.transpose() / t;
    let u0_bar = sigma.rows(0, m).into_owned();
    let x0_bar = sigma.rows(m, n).into_owned();
    Ok(ProjectedData { x0_bar, x1_bar, u0_bar, regime: Regime::Averaged, sigma, t_len })
}

/// Pooled noise-variance estimate from two repeated experiments with identical
/// inputs: (1/(2 n T)) sum of squared state differences.
pub fn estimate_variance_from_repeats(x_a: &DMatrix<f64>, x_b: &DMatrix<f64>) -> Result<f64> {
    check_repeat_dims(x_a, x_b)?;
    let count = (x_a.nrows() * x_a.ncols()) as f64;
    let sum_sq: f64 = x_a.iter().zip(x_b.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sum_sq / (2.0 * count))
}

/// Per-component variant of the repeat estimator, for diagnostics.
pub fn estimate_variance_per_component(
    x_a: &DMatrix<f64>,
    x_b: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    check_repeat_dims(x_a, x_b)?;
    let t = x_a.ncols() as f64;
    let mut out = DVector::zeros(x_a.nrows());
    for i in 0..x_a.nrows() {
        let sum_sq: f64 = (0..x_a.ncols()).map(|c| (x_a[(i, c)] - x_b[(i, c)]).powi(2)).sum();
        out[i] = sum_sq / (2.0 * t);
    }
    Ok(out)
}

fn check_repeat_dims(x_a: &DMatrix<f64>, x_b: &DMatrix<f64>) -> Result<()> {
    if x_a.shape() != x_b.shape() || x_a.is_empty() {
        return Err(Error::dimension(
            "repeat estimator",
            format!("matching nonempty shapes, left {}x{}", x_a.nrows(), x_a.ncols()),
            format!("{}x{}", x_b.nrows(), x_b.ncols()),
        ));
    }
    Ok(())
}

/// Test-support oracle: T-normalized projections of the true noise sequence,
/// only computable when the generating trajectory and plant are known.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseProjection {
    pub v0_bar: DMatrix<f64>,
    pub v1_bar: DMatrix<f64>,
    pub w0_bar: DMatrix<f64>,
}

impl NoiseProjection {
    pub fn new(traj: &Trajectory, data: &ExperimentData, sys: &LtiSystem) -> Result<Self> {
        if traj.t_len() != data.t_len || traj.n() != data.n() {
            return Err(Error::dimension(
                "noise projection",
                format!("n={}, T={}", data.n(), data.t_len),
                format!("n={}, T={}", traj.n(), traj.t_len()),
            ));
        }
        let t = data.t_len as f64;
        let v0 = traj.noise.columns(0, data.t_len);
        let v1 = traj.noise.columns(1, data.t_len);
        let v0_bar = v0 * data.phi.transpose() / t;
        let v1_bar = v1 * data.phi.transpose() / t;
        let w0_bar = &sys.a_matrix * &v0_bar - &v1_bar;
        Ok(Self { v0_bar, v1_bar, w0_bar })
    }
}
