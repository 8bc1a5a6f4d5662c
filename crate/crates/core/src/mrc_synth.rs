//! Model-reference controller synthesis from projected data: a direct
//! least-squares route when the matching conditions are exactly solvable, and
//! an SDP route that trades matching residual against a Lyapunov stability
//! certificate on the data-estimated closed loop.
//!
//! The SDP decision variables are Q_x, Q_r (each (m+n) x n), the symmetric
//! Lyapunov factor P packed as its upper triangle, and two spectral-norm
//! epigraph scalars:
//!
//!   minimize t1 + lambda t2
//!   s.t.     X0bar Q_x = P,   X0bar Q_r = 0,
//!            ||X1bar Q_x - A_M P|| <= t1,   ||X1bar Q_r - B_M P|| <= t2,
//!            [[P, X1bar Q_x], [Q_x' X1bar', P]] >= eps I.
//!
//! Gains are recovered as K_x = U0bar Q_x P^-1 and K_r = U0bar Q_r P^-1; the
//! variable count is independent of the experiment length.

use nalgebra::{DMatrix, DVector};

use crate::data_pipeline::{ProjectedData, Regime, COVARIANCE_MIN_SV};
use crate::error::{Error, Result};
use crate::linear_system::{spectral_norm, spectral_radius, LtiSystem, ReferenceModel};
use crate::sdp_core::{
    epigraph_spectral_norm, solve, AffineMatrixExpr, LmiBlock, SdpProblem, SdpSolution,
    SdpStatus, SolveSettings,
};

/// Relative residual above which the stacked least-squares matching is
/// declared infeasible.
pub const EXACT_MATCH_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthesisMethod {
    Exact,
    NoiseFreeSdp,
    RawNoisySdp,
    BiasCorrectedSdp,
    IvSdp,
    AveragedSdp,
    /// Gains supplied from outside rather than synthesized here.
    External,
}

impl std::fmt::Display for SynthesisMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SynthesisMethod::Exact => "exact",
            SynthesisMethod::NoiseFreeSdp => "noise-free-sdp",
            SynthesisMethod::RawNoisySdp => "raw-noisy-sdp",
            SynthesisMethod::BiasCorrectedSdp => "bias-corrected-sdp",
            SynthesisMethod::IvSdp => "iv-sdp",
            SynthesisMethod::AveragedSdp => "averaged-sdp",
            SynthesisMethod::External => "external",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisOptions {
    /// Weight on the B-matching epigraph term.
    pub lambda: f64,
    /// Strictness margin of the stability LMI.
    pub epsilon: f64,
    pub with_stability_lmi: bool,
    pub solver: SolveSettings,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            epsilon: 1e-8,
            with_stability_lmi: true,
            solver: SolveSettings::default(),
        }
    }
}

/// Raw optimization output before gain recovery.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchingDecision {
    pub qx: DMatrix<f64>,
    pub qr: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub method: SynthesisMethod,
    pub solver_report: Option<SdpSolution>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainDiagnostics {
    /// ||X1bar Q_x P^-1 - A_M|| on the data the gains came from.
    pub matching_residual_a: f64,
    /// ||X1bar Q_r P^-1 - B_M|| on the data the gains came from.
    pub matching_residual_b: f64,
    /// Spectral radius of the data-side closed-loop estimate X1bar Q_x P^-1.
    pub closed_loop_spectral_radius_estimate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerGains {
    pub kx: DMatrix<f64>,
    pub kr: DMatrix<f64>,
    pub method: SynthesisMethod,
    pub t_len: Option<usize>,
    pub seed: Option<u64>,
    pub diagnostics: Option<GainDiagnostics>,
}

impl ControllerGains {
    pub fn from_matrices(kx: DMatrix<f64>, kr: DMatrix<f64>, method: SynthesisMethod) -> Self {
        Self { kx, kr, method, t_len: None, seed: None, diagnostics: None }
    }

    pub fn m(&self) -> usize {
        self.kx.nrows()
    }

    pub fn n(&self) -> usize {
        self.kx.ncols()
    }
}

/// Ground-truth matching report, computable only with plant access.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchVerdict {
    pub err_a: f64,
    pub err_b: f64,
    pub spectral_radius: f64,
    pub stable: bool,
    pub within_tol: bool,
}

/// Decision-variable packing for the matching SDP. Column-major within each
/// Q block, upper-triangle column-major for P, epigraph scalars last.
#[derive(Debug, Clone, Copy)]
struct VarLayout {
    m_plus_n: usize,
    n: usize,
}

impl VarLayout {
    fn q_size(&self) -> usize {
        self.m_plus_n * self.n
    }

    fn p_size(&self) -> usize {
        self.n * (self.n + 1) / 2
    }

    fn num_vars(&self) -> usize {
        2 * self.q_size() + self.p_size() + 2
    }

    fn qx(&self, r: usize, c: usize) -> usize {
        r + c * self.m_plus_n
    }

    fn qr(&self, r: usize, c: usize) -> usize {
        self.q_size() + r + c * self.m_plus_n
    }

    fn p_entry(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        2 * self.q_size() + j * (j + 1) / 2 + i
    }

    fn t1(&self) -> usize {
        2 * self.q_size() + self.p_size()
    }

    fn t2(&self) -> usize {
        self.t1() + 1
    }

    /// Pairs (i, j) with i <= j in packing order.
    fn p_pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.p_size());
        for j in 0..self.n {
            for i in 0..=j {
                out.push((i, j));
            }
        }
        out
    }

    /// dP/dy_a as a symmetric matrix.
    fn p_basis(&self, i: usize, j: usize) -> DMatrix<f64> {
        let mut b = DMatrix::zeros(self.n, self.n);
        b[(i, j)] = 1.0;
        b[(j, i)] = 1.0;
        if i == j {
            b[(i, j)] = 1.0;
        }
        b
    }
}

fn check_projection_model(proj: &ProjectedData, model: &ReferenceModel) -> Result<VarLayout> {
    let n = proj.n();
    if model.n() != n {
        return Err(Error::dimension(
            "matching model",
            format!("{n}x{n}"),
            format!("{}x{}", model.n(), model.n()),
        ));
    }
    Ok(VarLayout { m_plus_n: proj.m() + n, n })
}

/// Solve both matching conditions by stacked least squares on
/// [X1bar; X0bar] G = [target; I or 0]; feasible exactly when the plant can
/// represent the model on this data.
pub fn solve_exact_matching(
    proj: &ProjectedData,
    model: &ReferenceModel,
) -> Result<MatchingDecision> {
    let layout = check_projection_model(proj, model)?;
    let n = layout.n;
    let mpn = layout.m_plus_n;
    let mut stacked = DMatrix::zeros(2 * n, mpn);
    stacked.rows_mut(0, n).copy_from(&proj.x1_bar);
    stacked.rows_mut(n, n).copy_from(&proj.x0_bar);

    let mut rhs_x = DMatrix::zeros(2 * n, n);
    rhs_x.rows_mut(0, n).copy_from(&model.am_matrix);
    rhs_x.rows_mut(n, n).copy_from(&DMatrix::identity(n, n));
    let mut rhs_r = DMatrix::zeros(2 * n, n);
    rhs_r.rows_mut(0, n).copy_from(&model.bm_matrix);

    let gx = crate::linalg::least_squares_solve(&stacked, &rhs_x, 1e-12);
    let gr = crate::linalg::least_squares_solve(&stacked, &rhs_r, 1e-12);

    let residual = |g: &DMatrix<f64>, rhs: &DMatrix<f64>| {
        (&stacked * g - rhs).abs().max() / (1.0 + rhs.abs().max())
    };
    let res = residual(&gx, &rhs_x).max(residual(&gr, &rhs_r));
    if res > EXACT_MATCH_TOL {
        return Err(Error::InfeasibleMatching { residual: res, tol: EXACT_MATCH_TOL });
    }
    Ok(MatchingDecision {
        qx: gx,
        qr: gr,
        p: DMatrix::identity(n, n),
        method: SynthesisMethod::Exact,
        solver_report: None,
    })
}

/// Build the matching SDP for the given projection. The decision vector has
/// 2(m+n)n + n(n+1)/2 + 2 entries and the equality system has 2n^2 rows,
/// independent of the experiment length.
pub fn assemble_matching_sdp(
    proj: &ProjectedData,
    model: &ReferenceModel,
    opts: &SynthesisOptions,
) -> Result<SdpProblem> {
    let layout = check_projection_model(proj, model)?;
    if !(opts.lambda > 0.0) || !opts.lambda.is_finite() {
        return Err(Error::Config(format!("lambda must be positive, got {}", opts.lambda)));
    }
    if !(opts.epsilon > 0.0) || !opts.epsilon.is_finite() {
        return Err(Error::Config(format!("epsilon must be positive, got {}", opts.epsilon)));
    }
    let n = layout.n;
    let mpn = layout.m_plus_n;
    let k = layout.num_vars();
    let pairs = layout.p_pairs();

    let mut objective = DVector::zeros(k);
    objective[layout.t1()] = 1.0;
    objective[layout.t2()] = opts.lambda;

    // X0bar Q_x - P = 0 and X0bar Q_r = 0, row-major over (i, j)
    let mut eq_matrix = DMatrix::zeros(2 * n * n, k);
    let eq_rhs = DVector::zeros(2 * n * n);
    for i in 0..n {
        for j in 0..n {
            let row = i * n + j;
            for r in 0..mpn {
                eq_matrix[(row, layout.qx(r, j))] += proj.x0_bar[(i, r)];
            }
            eq_matrix[(row, layout.p_entry(i, j))] -= 1.0;
            let row = n * n + i * n + j;
            for r in 0..mpn {
                eq_matrix[(row, layout.qr(r, j))] += proj.x0_bar[(i, r)];
            }
        }
    }

    // residual expression X1bar Q - G_M P for an epigraph block
    let residual_expr = |target: &DMatrix<f64>, q_of: &dyn Fn(usize, usize) -> usize| {
        let mut expr = AffineMatrixExpr::zeros(n, n, k);
        for j in 0..n {
            for r in 0..mpn {
                let var = q_of(r, j);
                for i in 0..n {
                    expr.coeffs[var][(i, j)] += proj.x1_bar[(i, r)];
                }
            }
        }
        for &(pi, pj) in &pairs {
            let gp = target * layout.p_basis(pi, pj);
            expr.coeffs[layout.p_entry(pi, pj)] -= &gp;
        }
        expr
    };

    let mut lmi_blocks = vec![
        epigraph_spectral_norm(
            &residual_expr(&model.am_matrix, &|r, c| layout.qx(r, c)),
            layout.t1(),
        ),
        epigraph_spectral_norm(
            &residual_expr(&model.bm_matrix, &|r, c| layout.qr(r, c)),
            layout.t2(),
        ),
    ];

    if opts.with_stability_lmi {
        let d = 2 * n;
        let base = DMatrix::identity(d, d) * -opts.epsilon;
        let mut coeffs = vec![DMatrix::zeros(d, d); k];
        for &(pi, pj) in &pairs {
            let pb = layout.p_basis(pi, pj);
            let c = &mut coeffs[layout.p_entry(pi, pj)];
            c.view_mut((0, 0), (n, n)).copy_from(&pb);
            c.view_mut((n, n), (n, n)).copy_from(&pb);
        }
        for j in 0..n {
            for r in 0..mpn {
                let c = &mut coeffs[layout.qx(r, j)];
                for i in 0..n {
                    c[(i, n + j)] += proj.x1_bar[(i, r)];
                    c[(n + j, i)] += proj.x1_bar[(i, r)];
                }
            }
        }
        lmi_blocks.push(LmiBlock { base, coeffs });
    }

    Ok(SdpProblem { num_vars: k, objective, eq_matrix, eq_rhs, lmi_blocks })
}

fn unpack_decision(
    y: &DVector<f64>,
    layout: &VarLayout,
    method: SynthesisMethod,
    report: SdpSolution,
) -> MatchingDecision {
    let n = layout.n;
    let mpn = layout.m_plus_n;
    let mut qx = DMatrix::zeros(mpn, n);
    let mut qr = DMatrix::zeros(mpn, n);
    for c in 0..n {
        for r in 0..mpn {
            qx[(r, c)] = y[layout.qx(r, c)];
            qr[(r, c)] = y[layout.qr(r, c)];
        }
    }
    let mut p = DMatrix::zeros(n, n);
    for (i, j) in layout.p_pairs() {
        p[(i, j)] = y[layout.p_entry(i, j)];
        p[(j, i)] = y[layout.p_entry(i, j)];
    }
    MatchingDecision { qx, qr, p, method, solver_report: Some(report) }
}

fn invert_p(p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let svals = crate::linalg::singular_values(p);
    let cond = svals.max() / svals.min().max(f64::MIN_POSITIVE);
    if !cond.is_finite() || cond > 1e14 {
        return Err(Error::IllConditioned { cond });
    }
    p.clone()
        .try_inverse()
        .ok_or(Error::IllConditioned { cond })
}

/// Recover gains and data-side diagnostics from an optimization decision.
pub fn gains_from_decision(
    decision: &MatchingDecision,
    proj: &ProjectedData,
    model: &ReferenceModel,
) -> Result<ControllerGains> {
    let p_inv = invert_p(&decision.p)?;
    let gx = &decision.qx * &p_inv;
    let gr = &decision.qr * &p_inv;
    let kx = &proj.u0_bar * &gx;
    let kr = &proj.u0_bar * &gr;
    if !kx.iter().all(|v| v.is_finite()) || !kr.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("recovered gains".into()));
    }
    let a_est = &proj.x1_bar * &gx;
    let b_est = &proj.x1_bar * &gr;
    let diagnostics = GainDiagnostics {
        matching_residual_a: spectral_norm(&(&a_est - &model.am_matrix)),
        matching_residual_b: spectral_norm(&(&b_est - &model.bm_matrix)),
        closed_loop_spectral_radius_estimate: spectral_radius(&a_est)?,
    };
    Ok(ControllerGains {
        kx,
        kr,
        method: decision.method,
        t_len: Some(proj.t_len),
        seed: None,
        diagnostics: Some(diagnostics),
    })
}

fn method_for_regime(regime: Regime) -> SynthesisMethod {
    match regime {
        Regime::NoiseFree => SynthesisMethod::NoiseFreeSdp,
        Regime::RawNoisy => SynthesisMethod::RawNoisySdp,
        Regime::BiasCorrected => SynthesisMethod::BiasCorrectedSdp,
        Regime::InstrumentalVariable => SynthesisMethod::IvSdp,
        Regime::Averaged => SynthesisMethod::AveragedSdp,
    }
}

/// End-to-end SDP synthesis on a projection: conditioning gate, assembly,
/// solve, gain recovery.
pub fn synthesize(
    proj: &ProjectedData,
    model: &ReferenceModel,
    opts: &SynthesisOptions,
) -> Result<ControllerGains> {
    let min_sv = crate::linalg::singular_values(&proj.sigma).min();
    if min_sv <= COVARIANCE_MIN_SV {
        return Err(Error::SingularCovariance { min_sv });
    }
    let layout = check_projection_model(proj, model)?;
    let problem = assemble_matching_sdp(proj, model, opts)?;
    let solution = solve(&problem, &opts.solver)?;
    if solution.status != SdpStatus::Optimal {
        return Err(Error::Solver {
            status: solution.status.to_string(),
            detail: format!(
                "{} iterations, equality residual {:.3e}, min LMI eigenvalue {:.3e}",
                solution.iterations,
                solution.max_equality_residual,
                solution
                    .min_lmi_eigenvalue_per_block
                    .iter()
                    .fold(f64::INFINITY, |a, b| a.min(*b)),
            ),
        });
    }
    let method = method_for_regime(proj.regime);
    let decision = unpack_decision(&solution.y.clone(), &layout, method, solution);
    gains_from_decision(&decision, proj, model)
}

/// Compare the true closed loop against the reference model. Requires plant
/// access, so this is an evaluation tool, not part of synthesis.
pub fn verify_matching(
    sys: &LtiSystem,
    model: &ReferenceModel,
    gains: &ControllerGains,
    tol: f64,
) -> MatchVerdict {
    let a_cl = &sys.a_matrix + &sys.b_matrix * &gains.kx;
    let err_a = spectral_norm(&(&a_cl - &model.am_matrix));
    let err_b = spectral_norm(&(&sys.b_matrix * &gains.kr - &model.bm_matrix));
    let rho = spectral_radius(&a_cl).unwrap_or(f64::INFINITY);
    MatchVerdict {
        err_a,
        err_b,
        spectral_radius: rho,
        stable: rho < 1.0,
        within_tol: err_a <= tol && err_b <= tol,
    }
}
