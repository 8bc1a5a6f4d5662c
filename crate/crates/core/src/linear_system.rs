//! Discrete-time LTI plant and reference model representation plus trajectory
//! simulation under additive white Gaussian state-measurement noise.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::mrc_synth::ControllerGains;

/// Plant x(t+1) = A x(t) + B u(t); only the data generator and ground-truth
/// evaluation ever see these matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiSystem {
    pub a_matrix: DMatrix<f64>,
    pub b_matrix: DMatrix<f64>,
    pub n: usize,
    pub m: usize,
}

impl LtiSystem {
    pub fn new(a_matrix: DMatrix<f64>, b_matrix: DMatrix<f64>) -> Result<Self> {
        let n = a_matrix.nrows();
        let m = b_matrix.ncols();
        if n == 0 || a_matrix.ncols() != n {
            return Err(Error::dimension(
                "LtiSystem A",
                format!("{n}x{n} with n >= 1"),
                format!("{}x{}", a_matrix.nrows(), a_matrix.ncols()),
            ));
        }
        if m == 0 || b_matrix.nrows() != n {
            return Err(Error::dimension(
                "LtiSystem B",
                format!("{n}xm with m >= 1"),
                format!("{}x{}", b_matrix.nrows(), b_matrix.ncols()),
            ));
        }
        if !a_matrix.iter().all(|v| v.is_finite()) || !b_matrix.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("plant matrices".into()));
        }
        Ok(Self { a_matrix, b_matrix, n, m })
    }
}

/// Stable target dynamics x_d(t+1) = A_M x_d(t) + B_M r(t).
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceModel {
    pub am_matrix: DMatrix<f64>,
    pub bm_matrix: DMatrix<f64>,
}

impl ReferenceModel {
    pub fn new(am_matrix: DMatrix<f64>, bm_matrix: DMatrix<f64>) -> Result<Self> {
        let n = am_matrix.nrows();
        if n == 0 || am_matrix.ncols() != n || bm_matrix.nrows() != n || bm_matrix.ncols() != n {
            return Err(Error::dimension(
                "ReferenceModel",
                format!("{n}x{n} A_M and B_M"),
                format!(
                    "{}x{} and {}x{}",
                    am_matrix.nrows(),
                    am_matrix.ncols(),
                    bm_matrix.nrows(),
                    bm_matrix.ncols()
                ),
            ));
        }
        let rho = spectral_radius(&am_matrix)?;
        if rho >= 1.0 {
            return Err(Error::UnstableModel { rho });
        }
        Ok(Self { am_matrix, bm_matrix })
    }

    pub fn n(&self) -> usize {
        self.am_matrix.nrows()
    }
}

/// Isotropic measurement-noise description: x(t) = x_o(t) + v(t) with
/// v(t) ~ N(0, variance * I).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub variance: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(variance: f64, seed: u64) -> Result<Self> {
        if !(variance >= 0.0) || !variance.is_finite() {
            return Err(Error::Config(format!(
                "noise variance must be finite and >= 0, got {variance}"
            )));
        }
        Ok(Self { variance, seed })
    }

    pub fn noise_free(seed: u64) -> Self {
        Self { variance: 0.0, seed }
    }
}

/// Simulated run over T steps: columns 0..=T of the state matrices, columns
/// 0..T of the inputs. states_noisy = states_clean + noise.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states_clean: DMatrix<f64>,
    pub states_noisy: DMatrix<f64>,
    pub inputs: DMatrix<f64>,
    pub noise: DMatrix<f64>,
}

impl Trajectory {
    pub fn t_len(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn n(&self) -> usize {
        self.states_clean.nrows()
    }
}

fn sample_noise(n: usize, cols: usize, noise: &NoiseSpec) -> DMatrix<f64> {
    if noise.variance == 0.0 {
        return DMatrix::zeros(n, cols);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let dist = Normal::new(0.0, noise.variance.sqrt()).expect("validated variance");
    let mut out = DMatrix::zeros(n, cols);
    for t in 0..cols {
        for i in 0..n {
            out[(i, t)] = dist.sample(&mut rng);
        }
    }
    out
}

fn check_x0(n: usize, x0: &DVector<f64>) -> Result<()> {
    if x0.len() != n {
        return Err(Error::dimension("initial state", format!("{n}"), format!("{}", x0.len())));
    }
    if !x0.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("initial state".into()));
    }
    Ok(())
}

/// Simulate x_o(t+1) = A x_o(t) + B u(t) and overlay measurement noise.
/// Reproducible: a fixed (sys, inputs, x0, noise) yields bit-identical output.
pub fn simulate_open_loop(
    sys: &LtiSystem,
    inputs: &DMatrix<f64>,
    x0: &DVector<f64>,
    noise: &NoiseSpec,
) -> Result<Trajectory> {
    if inputs.nrows() != sys.m {
        return Err(Error::dimension(
            "open-loop inputs",
            format!("{} rows", sys.m),
            format!("{} rows", inputs.nrows()),
        ));
    }
    if !inputs.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("inputs".into()));
    }
    check_x0(sys.n, x0)?;
    let t_len = inputs.ncols();
    let mut states_clean = DMatrix::zeros(sys.n, t_len + 1);
    states_clean.column_mut(0).copy_from(x0);
    for t in 0..t_len {
        let next = &sys.a_matrix * states_clean.column(t) + &sys.b_matrix * inputs.column(t);
        states_clean.column_mut(t + 1).copy_from(&next);
    }
    let noise_mat = sample_noise(sys.n, t_len + 1, noise);
    let states_noisy = &states_clean + &noise_mat;
    Ok(Trajectory { states_clean, states_noisy, inputs: inputs.clone(), noise: noise_mat })
}

/// Simulate the loop closed by u(t) = K_x x(t) + K_r r(t), where x(t) is the
/// noisy measured state; with zero variance this is the exact deterministic
/// closed loop.
pub fn simulate_closed_loop(
    sys: &LtiSystem,
    gains: &ControllerGains,
    reference: &DMatrix<f64>,
    x0: &DVector<f64>,
    noise: &NoiseSpec,
) -> Result<Trajectory> {
    if gains.kx.nrows() != sys.m || gains.kx.ncols() != sys.n {
        return Err(Error::dimension(
            "closed-loop K_x",
            format!("{}x{}", sys.m, sys.n),
            format!("{}x{}", gains.kx.nrows(), gains.kx.ncols()),
        ));
    }
    if gains.kr.nrows() != sys.m || gains.kr.ncols() != reference.nrows() {
        return Err(Error::dimension(
            "closed-loop K_r",
            format!("{}x{}", sys.m, reference.nrows()),
            format!("{}x{}", gains.kr.nrows(), gains.kr.ncols()),
        ));
    }
    check_x0(sys.n, x0)?;
    let t_len = reference.ncols();
    let noise_mat = sample_noise(sys.n, t_len + 1, noise);
    let mut states_clean = DMatrix::zeros(sys.n, t_len + 1);
    let mut inputs = DMatrix::zeros(sys.m, t_len);
    states_clean.column_mut(0).copy_from(x0);
    for t in 0..t_len {
        let measured = states_clean.column(t) + noise_mat.column(t);
        let u = &gains.kx * measured + &gains.kr * reference.column(t);
        let next = &sys.a_matrix * states_clean.column(t) + &sys.b_matrix * &u;
        inputs.column_mut(t).copy_from(&u);
        states_clean.column_mut(t + 1).copy_from(&next);
    }
    let states_noisy = &states_clean + &noise_mat;
    Ok(Trajectory { states_clean, states_noisy, inputs, noise: noise_mat })
}

/// Desired-state rollout x_d(t+1) = A_M x_d(t) + B_M r(t).
pub fn simulate_reference(
    model: &ReferenceModel,
    reference: &DMatrix<f64>,
    x0: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let n = model.n();
    if reference.nrows() != n {
        return Err(Error::dimension(
            "reference signal",
            format!("{n} rows"),
            format!("{} rows", reference.nrows()),
        ));
    }
    if !reference.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("reference signal".into()));
    }
    check_x0(n, x0)?;
    let t_len = reference.ncols();
    let mut xd = DMatrix::zeros(n, t_len + 1);
    xd.column_mut(0).copy_from(x0);
    for t in 0..t_len {
        let next = &model.am_matrix * xd.column(t) + &model.bm_matrix * reference.column(t);
        xd.column_mut(t + 1).copy_from(&next);
    }
    Ok(xd)
}

/// Largest eigenvalue magnitude of a square matrix.
pub fn spectral_radius(matrix: &DMatrix<f64>) -> Result<f64> {
    if matrix.nrows() != matrix.ncols() {
        return Err(Error::dimension(
            "spectral_radius",
            "square matrix",
            format!("{}x{}", matrix.nrows(), matrix.ncols()),
        ));
    }
    if !matrix.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("spectral_radius input".into()));
    }
    Ok(crate::linalg::spectral_radius(matrix))
}

/// Largest singular value; the induced 2-norm used by all error metrics.
pub fn spectral_norm(matrix: &DMatrix<f64>) -> f64 {
    if matrix.is_empty() {
        return 0.0;
    }
    crate::linalg::spectral_norm(matrix)
}
