//! Self-contained solver for small dense semidefinite programs: linear
//! objective, affine equality constraints, block-diagonal LMI constraints.
//!
//! Equalities are eliminated through an orthonormal null-space
//! parameterization, a preliminary big-M feasibility phase finds a strictly
//! feasible start, and a Nesterov-Todd scaled primal-dual path-following
//! iteration with a Mehrotra predictor-corrector closes the duality gap.
//! Problems without a strictly feasible interior are reported as Infeasible.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::matrix_io;

/// One LMI constraint base + sum_i y_i coeffs[i] >= 0.
#[derive(Debug, Clone, PartialEq)]
pub struct LmiBlock {
    pub base: DMatrix<f64>,
    pub coeffs: Vec<DMatrix<f64>>,
}

impl LmiBlock {
    pub fn dim(&self) -> usize {
        self.base.nrows()
    }

    /// Evaluate the block at y.
    pub fn eval(&self, y: &DVector<f64>) -> DMatrix<f64> {
        let mut out = self.base.clone();
        for (i, c) in self.coeffs.iter().enumerate() {
            out += c * y[i];
        }
        symmetrize(&out)
    }
}

/// Canonical small dense cone program:
/// minimize objective' y subject to eq_matrix y = eq_rhs and all LMI blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct SdpProblem {
    pub num_vars: usize,
    pub objective: DVector<f64>,
    pub eq_matrix: DMatrix<f64>,
    pub eq_rhs: DVector<f64>,
    pub lmi_blocks: Vec<LmiBlock>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdpStatus {
    Optimal,
    Infeasible,
    NumericalLimit,
}

impl std::fmt::Display for SdpStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SdpStatus::Optimal => "optimal",
            SdpStatus::Infeasible => "infeasible",
            SdpStatus::NumericalLimit => "numerical-limit",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpSolution {
    pub y: DVector<f64>,
    pub status: SdpStatus,
    pub objective_value: f64,
    pub max_equality_residual: f64,
    pub min_lmi_eigenvalue_per_block: Vec<f64>,
    pub iterations: usize,
    /// Total complementarity <S, X> recorded at the start of each main-phase
    /// iteration.
    pub gap_history: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveSettings {
    pub eq_tol: f64,
    pub psd_tol: f64,
    pub duality_gap_tol: f64,
    pub max_iter: usize,
}

impl Default for SolveSettings {
    fn default() -> Self {
        Self { eq_tol: 1e-7, psd_tol: 1e-7, duality_gap_tol: 1e-8, max_iter: 200 }
    }
}

/// Re-verification report produced independently of the solver state.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionCheck {
    pub equality_residual: f64,
    pub min_lmi_eigs: Vec<f64>,
    pub objective: f64,
}

/// Matrix-valued expression base + sum_i y_i coeffs[i], used to assemble
/// epigraph blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMatrixExpr {
    pub rows: usize,
    pub cols: usize,
    pub base: DMatrix<f64>,
    pub coeffs: Vec<DMatrix<f64>>,
}

impl AffineMatrixExpr {
    pub fn zeros(rows: usize, cols: usize, num_vars: usize) -> Self {
        Self {
            rows,
            cols,
            base: DMatrix::zeros(rows, cols),
            coeffs: vec![DMatrix::zeros(rows, cols); num_vars],
        }
    }

    pub fn num_vars(&self) -> usize {
        self.coeffs.len()
    }
}

/// Build the LMI block [[t I, M(y)], [M(y)', t I]] >= 0 whose minimal
/// feasible t equals the spectral norm of M(y); `t_index` names the scalar
/// epigraph variable, which must not occur inside the expression.
pub fn epigraph_spectral_norm(expr: &AffineMatrixExpr, t_index: usize) -> LmiBlock {
    let a = expr.rows;
    let b = expr.cols;
    let d = a + b;
    assert!(t_index < expr.num_vars(), "epigraph variable outside the decision vector");
    debug_assert!(
        expr.coeffs[t_index].iter().all(|v| *v == 0.0),
        "epigraph variable may not appear inside the matrix expression"
    );
    let embed = |m: &DMatrix<f64>| {
        let mut out = DMatrix::zeros(d, d);
        out.view_mut((0, a), (a, b)).copy_from(m);
        out.view_mut((a, 0), (b, a)).copy_from(&m.transpose());
        out
    };
    let base = embed(&expr.base);
    let mut coeffs: Vec<DMatrix<f64>> = expr.coeffs.iter().map(embed).collect();
    coeffs[t_index] += DMatrix::identity(d, d);
    LmiBlock { base, coeffs }
}

/// Independent verification pass over a candidate point.
pub fn check_solution(problem: &SdpProblem, y: &DVector<f64>) -> SolutionCheck {
    let equality_residual = if problem.eq_matrix.nrows() == 0 {
        0.0
    } else {
        (&problem.eq_matrix * y - &problem.eq_rhs).abs().max()
    };
    let min_lmi_eigs = problem
        .lmi_blocks
        .iter()
        .map(|b| b.eval(y).symmetric_eigen().eigenvalues.min())
        .collect();
    SolutionCheck { equality_residual, min_lmi_eigs, objective: problem.objective.dot(y) }
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) / 2.0
}

fn sym_eig_map(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(f));
    symmetrize(&(&eig.eigenvectors * d * eig.eigenvectors.transpose()))
}

fn min_eig(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigen().eigenvalues.min()
}

/// Scaling point W with W S W = X, both arguments symmetric positive definite.
fn nt_scaling(s: &DMatrix<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
    let x_half = sym_eig_map(x, |v| v.max(1e-300).sqrt());
    let inner = symmetrize(&(&x_half * s * &x_half));
    let inner_inv_half = sym_eig_map(&inner, |v| 1.0 / v.max(1e-300).sqrt());
    symmetrize(&(&x_half * inner_inv_half * &x_half))
}

/// Largest alpha in (0, 1] keeping s + alpha d positive definite, with a 0.99
/// fraction-to-boundary backoff.
fn max_step(s: &DMatrix<f64>, d: &DMatrix<f64>) -> f64 {
    if !d.iter().all(|v| v.is_finite()) {
        return 0.0;
    }
    let s_inv_half = sym_eig_map(s, |v| 1.0 / v.max(1e-300).sqrt());
    let lam = min_eig(&symmetrize(&(&s_inv_half * d * &s_inv_half)));
    if lam >= 0.0 {
        1.0
    } else {
        (-0.99 / lam).min(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum IpmStatus {
    Converged,
    EarlyStop,
    MaxIter,
    Diverged,
}

struct IpmOutcome {
    z: DVector<f64>,
    iterations: usize,
    status: IpmStatus,
    gap_history: Vec<f64>,
}

struct ReducedProblem {
    b: DVector<f64>,
    bases: Vec<DMatrix<f64>>,
    coeffs: Vec<Vec<DMatrix<f64>>>,
}

impl ReducedProblem {
    fn eval_blocks(&self, z: &DVector<f64>) -> Vec<DMatrix<f64>> {
        self.bases
            .iter()
            .zip(&self.coeffs)
            .map(|(base, cs)| {
                let mut s = base.clone();
                for (l, c) in cs.iter().enumerate() {
                    s += c * z[l];
                }
                symmetrize(&s)
            })
            .collect()
    }
}

fn solve_schur(m: &DMatrix<f64>, q: &DVector<f64>) -> Option<DVector<f64>> {
    let k = m.nrows();
    let scale = m.diagonal().abs().max().max(1.0);
    let mut reg = 1e-13 * scale;
    for _ in 0..6 {
        let reg_m = m + DMatrix::identity(k, k) * reg;
        if let Some(chol) = reg_m.cholesky() {
            return Some(chol.solve(q));
        }
        reg *= 100.0;
    }
    (m + DMatrix::identity(k, k) * reg).lu().solve(q)
}

/// Feasible-start path-following iteration on the reduced (equality-free)
/// problem. `early_stop` aborts as soon as the predicate holds, used by the
/// feasibility phase.
fn ipm(
    reduced: &ReducedProblem,
    z0: DVector<f64>,
    gap_tol: f64,
    max_iter: usize,
    early_stop: Option<&dyn Fn(&DVector<f64>) -> bool>,
) -> IpmOutcome {
    let k = reduced.b.len();
    let nb = reduced.bases.len();
    let d_tot: usize = reduced.bases.iter().map(|b| b.nrows()).sum();
    let b_scale = 1.0 + reduced.b.norm();
    let mut z = z0;
    let mut s_mats = reduced.eval_blocks(&z);
    let mut x_mats: Vec<DMatrix<f64>> =
        reduced.bases.iter().map(|b| DMatrix::identity(b.nrows(), b.nrows())).collect();
    let mut gap_history = Vec::new();

    for it in 0..max_iter {
        let gap: f64 = (0..nb).map(|j| s_mats[j].dot(&x_mats[j])).sum();
        let mu = gap / d_tot as f64;
        gap_history.push(gap);
        let obj = reduced.b.dot(&z);
        let rd = DVector::from_fn(k, |l, _| {
            reduced.b[l] - (0..nb).map(|j| reduced.coeffs[j][l].dot(&x_mats[j])).sum::<f64>()
        });
        if let Some(stop) = early_stop {
            if stop(&z) {
                return IpmOutcome { z, iterations: it, status: IpmStatus::EarlyStop, gap_history };
            }
        }
        if gap <= gap_tol * (1.0 + obj.abs()) && rd.norm() <= 1e-8 * b_scale {
            return IpmOutcome { z, iterations: it, status: IpmStatus::Converged, gap_history };
        }
        if !gap.is_finite() || !obj.is_finite() || obj.abs() > 1e12 * b_scale {
            return IpmOutcome { z, iterations: it, status: IpmStatus::Diverged, gap_history };
        }

        let w_mats: Vec<DMatrix<f64>> =
            (0..nb).map(|j| nt_scaling(&s_mats[j], &x_mats[j])).collect();
        let mut schur = DMatrix::zeros(k, k);
        for j in 0..nb {
            let wcw: Vec<DMatrix<f64>> = (0..k)
                .map(|l| symmetrize(&(&w_mats[j] * &reduced.coeffs[j][l] * &w_mats[j])))
                .collect();
            for l in 0..k {
                for mm in l..k {
                    let v = reduced.coeffs[j][l].dot(&wcw[mm]);
                    schur[(l, mm)] += v;
                    if mm != l {
                        schur[(mm, l)] += v;
                    }
                }
            }
        }
        let s_invs: Vec<DMatrix<f64>> =
            (0..nb).map(|j| sym_eig_map(&s_mats[j], |v| 1.0 / v.max(1e-300))).collect();

        let direction = |sigma_mu: f64| -> Option<(DVector<f64>, Vec<DMatrix<f64>>, Vec<DMatrix<f64>>)> {
            let centering: Vec<DMatrix<f64>> =
                (0..nb).map(|j| &s_invs[j] * sigma_mu - &x_mats[j]).collect();
            let q = DVector::from_fn(k, |l, _| {
                (0..nb).map(|j| reduced.coeffs[j][l].dot(&centering[j])).sum::<f64>() - rd[l]
            });
            let dz = solve_schur(&schur, &q)?;
            if !dz.iter().all(|v| v.is_finite()) {
                return None;
            }
            let ds: Vec<DMatrix<f64>> = (0..nb)
                .map(|j| {
                    let mut d = DMatrix::zeros(s_mats[j].nrows(), s_mats[j].nrows());
                    for (l, c) in reduced.coeffs[j].iter().enumerate() {
                        d += c * dz[l];
                    }
                    symmetrize(&d)
                })
                .collect();
            let dx: Vec<DMatrix<f64>> = (0..nb)
                .map(|j| symmetrize(&(&centering[j] - &w_mats[j] * &ds[j] * &w_mats[j])))
                .collect();
            Some((dz, ds, dx))
        };

        let Some((_, ds_aff, dx_aff)) = direction(0.0) else {
            return IpmOutcome { z, iterations: it, status: IpmStatus::Diverged, gap_history };
        };
        let ap_aff =
            (0..nb).map(|j| max_step(&s_mats[j], &ds_aff[j])).fold(1.0f64, f64::min);
        let ad_aff =
            (0..nb).map(|j| max_step(&x_mats[j], &dx_aff[j])).fold(1.0f64, f64::min);
        let mu_aff: f64 = (0..nb)
            .map(|j| {
                let s_trial = &s_mats[j] + &ds_aff[j] * ap_aff;
                let x_trial = &x_mats[j] + &dx_aff[j] * ad_aff;
                s_trial.dot(&x_trial)
            })
            .sum::<f64>()
            / d_tot as f64;
        let sigma = (mu_aff.max(0.0) / mu).powi(3).clamp(1e-10, 1.0);

        let Some((dz, ds, dx)) = direction(sigma * mu) else {
            return IpmOutcome { z, iterations: it, status: IpmStatus::Diverged, gap_history };
        };
        let ap = (0..nb).map(|j| max_step(&s_mats[j], &ds[j])).fold(1.0f64, f64::min);
        let ad = (0..nb).map(|j| max_step(&x_mats[j], &dx[j])).fold(1.0f64, f64::min);
        z += dz * ap;
        s_mats = reduced.eval_blocks(&z);
        for j in 0..nb {
            x_mats[j] = symmetrize(&(&x_mats[j] + &dx[j] * ad));
        }
    }
    IpmOutcome { z: z.clone(), iterations: max_iter, status: IpmStatus::MaxIter, gap_history }
}

fn validate(problem: &SdpProblem) -> Result<()> {
    let k = problem.num_vars;
    if problem.objective.len() != k {
        return Err(Error::MalformedProblem(format!(
            "objective has {} entries for {} variables",
            problem.objective.len(),
            k
        )));
    }
    let p = problem.eq_matrix.nrows();
    if p > 0 && problem.eq_matrix.ncols() != k {
        return Err(Error::MalformedProblem(format!(
            "equality matrix has {} columns for {} variables",
            problem.eq_matrix.ncols(),
            k
        )));
    }
    if problem.eq_rhs.len() != p {
        return Err(Error::MalformedProblem(format!(
            "equality rhs has {} entries for {} rows",
            problem.eq_rhs.len(),
            p
        )));
    }
    for (j, block) in problem.lmi_blocks.iter().enumerate() {
        let d = block.dim();
        if block.base.ncols() != d {
            return Err(Error::MalformedProblem(format!("block {j} base is not square")));
        }
        if block.coeffs.len() != k {
            return Err(Error::MalformedProblem(format!(
                "block {j} has {} coefficient matrices for {} variables",
                block.coeffs.len(),
                k
            )));
        }
        let sym_tol = 1e-12 * (1.0 + block.base.abs().max());
        if (&block.base - block.base.transpose()).abs().max() > sym_tol {
            return Err(Error::MalformedProblem(format!("block {j} base is not symmetric")));
        }
        for (i, c) in block.coeffs.iter().enumerate() {
            if c.nrows() != d || c.ncols() != d {
                return Err(Error::MalformedProblem(format!(
                    "block {j} coefficient {i} has wrong shape"
                )));
            }
            let tol = 1e-12 * (1.0 + c.abs().max());
            if (c - c.transpose()).abs().max() > tol {
                return Err(Error::MalformedProblem(format!(
                    "block {j} coefficient {i} is not symmetric"
                )));
            }
        }
        if !block.base.iter().all(|v| v.is_finite())
            || !block.coeffs.iter().all(|c| c.iter().all(|v| v.is_finite()))
        {
            return Err(Error::MalformedProblem(format!("block {j} has non-finite entries")));
        }
    }
    if !problem.objective.iter().all(|v| v.is_finite())
        || !problem.eq_matrix.iter().all(|v| v.is_finite())
        || !problem.eq_rhs.iter().all(|v| v.is_finite())
    {
        return Err(Error::MalformedProblem("non-finite problem data".into()));
    }
    Ok(())
}

struct Elimination {
    y_particular: DVector<f64>,
    null_basis: DMatrix<f64>,
    consistent: bool,
}

/// Min-norm particular solution of E y = f plus an orthonormal basis of the
/// null space, from the eigendecomposition of E'E.
fn eliminate_equalities(e: &DMatrix<f64>, f: &DVector<f64>, eq_tol: f64) -> Elimination {
    let k = e.ncols();
    if e.nrows() == 0 {
        return Elimination {
            y_particular: DVector::zeros(k),
            null_basis: DMatrix::identity(k, k),
            consistent: true,
        };
    }
    let gram = symmetrize(&(e.transpose() * e));
    let eig = gram.symmetric_eigen();
    let lam_max = eig.eigenvalues.max().max(0.0);
    let tol = lam_max * 1e-12;
    let etf = e.transpose() * f;
    let mut y_particular = DVector::zeros(k);
    let mut null_cols = Vec::new();
    for i in 0..k {
        let lam = eig.eigenvalues[i];
        let v = eig.eigenvectors.column(i);
        if lam > tol && lam > 0.0 {
            y_particular += v * (v.dot(&etf) / lam);
        } else {
            null_cols.push(v.into_owned());
        }
    }
    let null_basis = if null_cols.is_empty() {
        DMatrix::zeros(k, 0)
    } else {
        DMatrix::from_columns(&null_cols)
    };
    let residual = (e * &y_particular - f).abs().max();
    let consistent = residual <= eq_tol * (1.0 + f.abs().max());
    Elimination { y_particular, null_basis, consistent }
}

fn reduce_problem(problem: &SdpProblem, elim: &Elimination) -> ReducedProblem {
    let k = problem.num_vars;
    let kr = elim.null_basis.ncols();
    let bases = problem
        .lmi_blocks
        .iter()
        .map(|block| {
            let mut base = block.base.clone();
            for i in 0..k {
                base += &block.coeffs[i] * elim.y_particular[i];
            }
            symmetrize(&base)
        })
        .collect();
    let coeffs = problem
        .lmi_blocks
        .iter()
        .map(|block| {
            (0..kr)
                .map(|l| {
                    let mut c = DMatrix::zeros(block.dim(), block.dim());
                    for i in 0..k {
                        let w = elim.null_basis[(i, l)];
                        if w != 0.0 {
                            c += &block.coeffs[i] * w;
                        }
                    }
                    symmetrize(&c)
                })
                .collect()
        })
        .collect();
    ReducedProblem { b: elim.null_basis.transpose() * &problem.objective, bases, coeffs }
}

fn finish(
    problem: &SdpProblem,
    settings: &SolveSettings,
    y: DVector<f64>,
    status: SdpStatus,
    iterations: usize,
    gap_history: Vec<f64>,
) -> SdpSolution {
    let check = check_solution(problem, &y);
    let mut status = status;
    if status == SdpStatus::Optimal {
        let feasible = check.equality_residual <= settings.eq_tol
            && check.min_lmi_eigs.iter().all(|e| *e >= -settings.psd_tol);
        if !feasible {
            status = SdpStatus::NumericalLimit;
        }
    }
    SdpSolution {
        y,
        status,
        objective_value: check.objective,
        max_equality_residual: check.equality_residual,
        min_lmi_eigenvalue_per_block: check.min_lmi_eigs,
        iterations,
        gap_history,
    }
}

/// Solve the program. Deterministic for fixed inputs; Optimal results are
/// certified by an independent [`check_solution`] pass before being reported.
pub fn solve(problem: &SdpProblem, settings: &SolveSettings) -> Result<SdpSolution> {
    validate(problem)?;
    let elim = eliminate_equalities(&problem.eq_matrix, &problem.eq_rhs, settings.eq_tol);
    if !elim.consistent {
        return Ok(finish(
            problem,
            settings,
            elim.y_particular.clone(),
            SdpStatus::Infeasible,
            0,
            Vec::new(),
        ));
    }
    let reduced = reduce_problem(problem, &elim);
    let kr = reduced.b.len();
    if kr == 0 {
        let feasible = reduced.bases.iter().all(|b| min_eig(b) >= -settings.psd_tol);
        let status = if feasible { SdpStatus::Optimal } else { SdpStatus::Infeasible };
        return Ok(finish(problem, settings, elim.y_particular.clone(), status, 0, Vec::new()));
    }
    if reduced.bases.is_empty() {
        let status = if reduced.b.norm() <= 1e-12 { SdpStatus::Optimal } else { SdpStatus::NumericalLimit };
        return Ok(finish(problem, settings, elim.y_particular.clone(), status, 0, Vec::new()));
    }

    // feasibility phase: minimize t with every block shifted by t I
    let lam0 = reduced.bases.iter().map(min_eig).fold(f64::INFINITY, f64::min);
    let mut phase1_iters = 0;
    let z_start = if lam0 > 1e-6 {
        DVector::zeros(kr)
    } else {
        let t0 = 1.0 + (-lam0).max(0.0);
        let big_m = t0 + 10.0;
        let mut bases1: Vec<DMatrix<f64>> = reduced.bases.clone();
        bases1.push(DMatrix::from_element(1, 1, big_m));
        let mut coeffs1: Vec<Vec<DMatrix<f64>>> = Vec::with_capacity(bases1.len());
        for (j, cs) in reduced.coeffs.iter().enumerate() {
            let mut row = cs.clone();
            row.push(DMatrix::identity(reduced.bases[j].nrows(), reduced.bases[j].nrows()));
            coeffs1.push(row);
        }
        let mut slack_row = vec![DMatrix::zeros(1, 1); kr];
        slack_row.push(DMatrix::from_element(1, 1, -1.0));
        coeffs1.push(slack_row);
        let mut b1 = DVector::zeros(kr + 1);
        b1[kr] = 1.0;
        let mut z1 = DVector::zeros(kr + 1);
        z1[kr] = t0;
        let phase1 = ReducedProblem { b: b1, bases: bases1, coeffs: coeffs1 };
        let strict = |z: &DVector<f64>| z[kr] < -1e-4;
        let outcome = ipm(&phase1, z1, 1e-9, settings.max_iter, Some(&strict));
        phase1_iters = outcome.iterations;
        let t_val = outcome.z[kr];
        let interior_ok = match outcome.status {
            IpmStatus::EarlyStop => true,
            IpmStatus::Converged => t_val < -1e-9,
            _ => false,
        };
        if !interior_ok {
            let status = if matches!(outcome.status, IpmStatus::Converged) {
                SdpStatus::Infeasible
            } else {
                SdpStatus::NumericalLimit
            };
            let y = &elim.y_particular + &elim.null_basis * outcome.z.rows(0, kr).into_owned();
            return Ok(finish(problem, settings, y, status, phase1_iters, outcome.gap_history));
        }
        let z_candidate = outcome.z.rows(0, kr).into_owned();
        let strictly_ok = reduced
            .eval_blocks(&z_candidate)
            .iter()
            .all(|s| min_eig(s) > 0.0);
        if !strictly_ok {
            let y = &elim.y_particular + &elim.null_basis * &z_candidate;
            return Ok(finish(
                problem,
                settings,
                y,
                SdpStatus::NumericalLimit,
                phase1_iters,
                outcome.gap_history,
            ));
        }
        z_candidate
    };

    let outcome = ipm(&reduced, z_start, settings.duality_gap_tol, settings.max_iter, None);
    let y = &elim.y_particular + &elim.null_basis * &outcome.z;
    let status = match outcome.status {
        IpmStatus::Converged => SdpStatus::Optimal,
        _ => SdpStatus::NumericalLimit,
    };
    Ok(finish(
        problem,
        settings,
        y,
        status,
        phase1_iters + outcome.iterations,
        outcome.gap_history,
    ))
}

/// Write a problem to a directory, one plain-text matrix file per component,
/// for offline cross-checking against external solvers.
pub fn dump_problem(problem: &SdpProblem, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    matrix_io::write_matrix(
        &dir.join("objective.txt"),
        &DMatrix::from_column_slice(problem.num_vars, 1, problem.objective.as_slice()),
    )?;
    matrix_io::write_matrix(&dir.join("eq_matrix.txt"), &problem.eq_matrix)?;
    matrix_io::write_matrix(
        &dir.join("eq_rhs.txt"),
        &DMatrix::from_column_slice(problem.eq_rhs.len(), 1, problem.eq_rhs.as_slice()),
    )?;
    for (j, block) in problem.lmi_blocks.iter().enumerate() {
        matrix_io::write_matrix(&dir.join(format!("block{j}_base.txt")), &block.base)?;
        for (i, c) in block.coeffs.iter().enumerate() {
            matrix_io::write_matrix(&dir.join(format!("block{j}_coeff{i}.txt")), c)?;
        }
    }
    Ok(())
}

/// Inverse of [`dump_problem`].
pub fn load_problem(dir: &Path) -> Result<SdpProblem> {
    let objective_mat = matrix_io::read_matrix(&dir.join("objective.txt"))?;
    let num_vars = objective_mat.nrows();
    let objective = DVector::from_column_slice(objective_mat.as_slice());
    let eq_matrix = matrix_io::read_matrix(&dir.join("eq_matrix.txt"))?;
    let eq_rhs_mat = matrix_io::read_matrix(&dir.join("eq_rhs.txt"))?;
    let eq_rhs = DVector::from_column_slice(eq_rhs_mat.as_slice());
    let mut lmi_blocks = Vec::new();
    for j in 0.. {
        let base_path = dir.join(format!("block{j}_base.txt"));
        if !base_path.exists() {
            break;
        }
        let base = matrix_io::read_matrix(&base_path)?;
        let coeffs = (0..num_vars)
            .map(|i| matrix_io::read_matrix(&dir.join(format!("block{j}_coeff{i}.txt"))))
            .collect::<Result<Vec<_>>>()?;
        lmi_blocks.push(LmiBlock { base, coeffs });
    }
    Ok(SdpProblem { num_vars, objective, eq_matrix, eq_rhs, lmi_blocks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn settings() -> SolveSettings {
        SolveSettings::default()
    }

    fn min_t_problem() -> SdpProblem {
        // minimize t subject to [[t, 1], [1, t]] >= 0
        SdpProblem {
            num_vars: 1,
            objective: DVector::from_element(1, 1.0),
            eq_matrix: DMatrix::zeros(0, 1),
            eq_rhs: DVector::zeros(0),
            lmi_blocks: vec![LmiBlock {
                base: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]),
                coeffs: vec![DMatrix::identity(2, 2)],
            }],
        }
    }

    #[test]
    fn eigenvalue_bound_problem() {
        let sol = solve(&min_t_problem(), &settings()).unwrap();
        assert_eq!(sol.status, SdpStatus::Optimal);
        assert_relative_eq!(sol.y[0], 1.0, epsilon = 1e-6);
        assert_relative_eq!(sol.objective_value, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn pinned_variable_problem() {
        // minimize y subject to y = 3 and y >= 0
        let problem = SdpProblem {
            num_vars: 1,
            objective: DVector::from_element(1, 1.0),
            eq_matrix: DMatrix::from_element(1, 1, 1.0),
            eq_rhs: DVector::from_element(1, 3.0),
            lmi_blocks: vec![LmiBlock {
                base: DMatrix::zeros(1, 1),
                coeffs: vec![DMatrix::identity(1, 1)],
            }],
        };
        let sol = solve(&problem, &settings()).unwrap();
        assert_eq!(sol.status, SdpStatus::Optimal);
        assert_relative_eq!(sol.y[0], 3.0, epsilon = 1e-9);
    }

    #[test]
    fn epigraph_constant_blocks() {
        for (mat, expected) in [
            (DMatrix::from_row_slice(1, 1, &[3.0]), 3.0),
            (DMatrix::zeros(2, 2), 0.0),
            (DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]), 2.0),
        ] {
            let mut expr = AffineMatrixExpr::zeros(mat.nrows(), mat.ncols(), 1);
            expr.base = mat;
            let block = epigraph_spectral_norm(&expr, 0);
            let problem = SdpProblem {
                num_vars: 1,
                objective: DVector::from_element(1, 1.0),
                eq_matrix: DMatrix::zeros(0, 1),
                eq_rhs: DVector::zeros(0),
                lmi_blocks: vec![block],
            };
            let sol = solve(&problem, &settings()).unwrap();
            assert_eq!(sol.status, SdpStatus::Optimal);
            assert_relative_eq!(sol.objective_value, expected, epsilon = 1e-6);
        }
    }

    #[test]
    fn check_solution_reports_violations() {
        let problem = SdpProblem {
            num_vars: 1,
            objective: DVector::from_element(1, 1.0),
            eq_matrix: DMatrix::from_element(1, 1, 1.0),
            eq_rhs: DVector::from_element(1, 3.0),
            lmi_blocks: vec![LmiBlock {
                base: DMatrix::zeros(1, 1),
                coeffs: vec![DMatrix::identity(1, 1)],
            }],
        };
        let ok = check_solution(&problem, &DVector::from_element(1, 3.0));
        assert_eq!(ok.equality_residual, 0.0);
        assert!(ok.min_lmi_eigs[0] >= 0.0);
        let bad = check_solution(&problem, &DVector::from_element(1, 4.0));
        assert_relative_eq!(bad.equality_residual, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn optimal_solutions_pass_their_own_certification() {
        let sol = solve(&min_t_problem(), &settings()).unwrap();
        let check = check_solution(&min_t_problem(), &sol.y);
        assert!(check.equality_residual <= settings().eq_tol);
        assert!(check.min_lmi_eigs.iter().all(|e| *e >= -settings().psd_tol));
    }

    #[test]
    fn objective_scaling_leaves_argmin_unchanged() {
        let base = min_t_problem();
        let mut scaled = base.clone();
        scaled.objective *= 5.0;
        let y1 = solve(&base, &settings()).unwrap().y;
        let y2 = solve(&scaled, &settings()).unwrap().y;
        assert_relative_eq!(y1[0], y2[0], epsilon = 1e-6);
    }

    #[test]
    fn gap_shrinks_monotonically_near_convergence() {
        let sol = solve(&min_t_problem(), &settings()).unwrap();
        let h = &sol.gap_history;
        assert!(h.len() >= 2);
        let tail = &h[h.len().saturating_sub(5)..];
        for w in tail.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-9) + 1e-15, "gap increased: {:?}", tail);
        }
    }

    #[test]
    fn infeasible_block_is_detected() {
        let problem = SdpProblem {
            num_vars: 1,
            objective: DVector::from_element(1, 1.0),
            eq_matrix: DMatrix::zeros(0, 1),
            eq_rhs: DVector::zeros(0),
            lmi_blocks: vec![LmiBlock {
                base: DMatrix::from_element(1, 1, -1.0),
                coeffs: vec![DMatrix::zeros(1, 1)],
            }],
        };
        let sol = solve(&problem, &settings()).unwrap();
        assert_eq!(sol.status, SdpStatus::Infeasible);
    }

    #[test]
    fn inconsistent_equalities_are_detected() {
        let problem = SdpProblem {
            num_vars: 1,
            objective: DVector::from_element(1, 1.0),
            eq_matrix: DMatrix::from_column_slice(2, 1, &[1.0, 1.0]),
            eq_rhs: DVector::from_column_slice(&[1.0, 2.0]),
            lmi_blocks: vec![LmiBlock {
                base: DMatrix::zeros(1, 1),
                coeffs: vec![DMatrix::identity(1, 1)],
            }],
        };
        let sol = solve(&problem, &settings()).unwrap();
        assert_eq!(sol.status, SdpStatus::Infeasible);
    }

    #[test]
    fn unbounded_objective_does_not_claim_optimality() {
        let problem = SdpProblem {
            num_vars: 1,
            objective: DVector::from_element(1, -1.0),
            eq_matrix: DMatrix::zeros(0, 1),
            eq_rhs: DVector::zeros(0),
            lmi_blocks: vec![LmiBlock {
                base: DMatrix::zeros(1, 1),
                coeffs: vec![DMatrix::identity(1, 1)],
            }],
        };
        let sol = solve(&problem, &settings()).unwrap();
        assert_ne!(sol.status, SdpStatus::Optimal);
    }

    #[test]
    fn asymmetric_block_is_rejected() {
        let problem = SdpProblem {
            num_vars: 1,
            objective: DVector::from_element(1, 1.0),
            eq_matrix: DMatrix::zeros(0, 1),
            eq_rhs: DVector::zeros(0),
            lmi_blocks: vec![LmiBlock {
                base: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
                coeffs: vec![DMatrix::identity(2, 2)],
            }],
        };
        assert!(matches!(solve(&problem, &settings()), Err(Error::MalformedProblem(_))));
    }

    #[test]
    fn solver_is_deterministic() {
        let a = solve(&min_t_problem(), &settings()).unwrap();
        let b = solve(&min_t_problem(), &settings()).unwrap();
        assert_eq!(a.y, b.y);
        assert_eq!(a.gap_history, b.gap_history);
    }

    #[test]
    fn dump_and_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let problem = min_t_problem();
        dump_problem(&problem, dir.path()).unwrap();
        let loaded = load_problem(dir.path()).unwrap();
        assert_eq!(problem, loaded);
    }

    // ---- randomized comparison against a brute-force 1-D oracle ----

    fn sym_rand(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
        let m = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        symmetrize(&m)
    }

    fn min_eig_2x2(m: &DMatrix<f64>) -> f64 {
        let tr = m[(0, 0)] + m[(1, 1)];
        let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
        let disc = (tr * tr - 4.0 * det).max(0.0).sqrt();
        (tr - disc) / 2.0
    }

    /// Smallest eigenvalue of base + s * dir for the 2x2 oracle family.
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

    pub(crate) struct OracleInstance {
        pub problem: SdpProblem,
        pub optimum: f64,
    }

    /// Random instance with one equality and one 2x2 block whose coefficient
    /// matrices all point along a single direction, so the feasible set is a
    /// segment and the optimum is computable by scalar search.
    pub(crate) fn random_oracle_instance(rng: &mut ChaCha8Rng, k: usize) -> OracleInstance {
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
            let eigs = f_dir.clone().symmetric_eigen().eigenvalues;
            if eigs.min() > -0.1 || eigs.max() < 0.1 {
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

    #[test]
    fn random_instances_match_bisection_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        for trial in 0..10 {
            let k = 2 + (trial % 5);
            let instance = random_oracle_instance(&mut rng, k);
            let sol = solve(&instance.problem, &settings()).unwrap();
            assert_eq!(sol.status, SdpStatus::Optimal, "trial {trial}");
            let err = (sol.objective_value - instance.optimum).abs() / (1.0 + instance.optimum.abs());
            assert!(err < 1e-6, "trial {trial}: solver {} oracle {}", sol.objective_value, instance.optimum);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        // min eig of [[t I, M], [M', t I]] is exactly t - sigma_max(M), so the
        // block must flip from PSD to indefinite at the spectral norm
        #[test]
        fn epigraph_block_flips_sign_at_the_spectral_norm(
            seed in 0u64..10_000,
            rows in 1usize..4,
            cols in 1usize..4,
            k in 1usize..4,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut expr = AffineMatrixExpr::zeros(rows, cols, k + 1);
            expr.base = DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-2.0..2.0));
            for i in 0..k {
                expr.coeffs[i] = DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-2.0..2.0));
            }
            let block = epigraph_spectral_norm(&expr, k);

            let mut y = DVector::from_fn(k + 1, |_, _| rng.random_range(-1.5..1.5));
            let mut m_of_y = expr.base.clone();
            for i in 0..k {
                m_of_y += &expr.coeffs[i] * y[i];
            }
            let norm = crate::linalg::spectral_norm(&m_of_y);
            let margin = 1e-6 * (1.0 + norm);

            y[k] = norm + margin;
            let above = block.eval(&y).symmetric_eigen().eigenvalues.min();
            prop_assert!(above >= -1e-9, "indefinite just above the norm: {}", above);

            y[k] = norm - margin;
            let below = block.eval(&y).symmetric_eigen().eigenvalues.min();
            prop_assert!(below < 0.0, "still PSD below the norm: {}", below);
        }
    }
}
