//! Campaign configuration: bracketed-section `key = value` files resolved
//! into validated plant/model/experiment settings. Absent sections fall back
//! to the bundled benchmark setup.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::DVector;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::harness::defaults;
use crate::linear_system::{LtiSystem, ReferenceModel};
use crate::matrix_io::{parse_matrix, read_matrix};
use crate::mrc_synth::SynthesisOptions;

/// Noise-handling route of a campaign. `Exact` and `NoiseFree` consume the
/// clean states (calibration paths); the rest consume noisy measurements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Exact,
    NoiseFree,
    Raw,
    Bc,
    Iv,
    Avg,
}

impl Method {
    pub const ALL: [Method; 6] =
        [Method::Exact, Method::NoiseFree, Method::Raw, Method::Bc, Method::Iv, Method::Avg];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Exact => "exact",
            Method::NoiseFree => "noisefree",
            Method::Raw => "raw",
            Method::Bc => "bc",
            Method::Iv => "iv",
            Method::Avg => "avg",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "exact" => Ok(Method::Exact),
            "noisefree" => Ok(Method::NoiseFree),
            "raw" => Ok(Method::Raw),
            "bc" => Ok(Method::Bc),
            "iv" => Ok(Method::Iv),
            "avg" => Ok(Method::Avg),
            other => Err(Error::Config(format!(
                "unknown method {other:?} (expected exact, noisefree, raw, bc, iv or avg)"
            ))),
        }
    }
}

/// Parse a comma-separated method list, deduplicating while keeping order.
pub fn parse_method_list(s: &str) -> Result<Vec<Method>> {
    let mut out = Vec::new();
    for part in s.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let m = part.parse::<Method>()?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    if out.is_empty() {
        return Err(Error::Config("method list is empty".into()));
    }
    Ok(out)
}

/// Fully resolved campaign description shared by the Monte-Carlo engine, the
/// tracking simulator and the CLI.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub plant: LtiSystem,
    pub model: ReferenceModel,
    pub t_len: usize,
    pub variance: f64,
    pub methods: Vec<Method>,
    pub mc_runs: usize,
    pub seed: u64,
    /// Extra experiment lengths; empty means run only `t_len`.
    pub t_grid: Vec<usize>,
    pub uniform_low: f64,
    pub uniform_high: f64,
    /// Number of repeated short experiments for the averaging baseline; when
    /// unset it is derived so the total sample budget matches `t_len`.
    pub avg_count: Option<usize>,
    /// Length of each repeated experiment for the averaging baseline.
    pub avg_len: usize,
    pub x0: DVector<f64>,
    pub synthesis: SynthesisOptions,
    pub tracking_horizon: usize,
    pub reference_file: Option<PathBuf>,
}

impl ExperimentConfig {
    /// The bundled benchmark study: bundled plant and model, T = 30000,
    /// u ~ U[-2, 2], 100 runs, all three noise-mitigation routes.
    pub fn benchmark_default() -> Self {
        Self {
            plant: defaults::benchmark_plant(),
            model: defaults::benchmark_model(),
            t_len: 30000,
            variance: 0.25,
            methods: vec![Method::Bc, Method::Iv, Method::Avg],
            mc_runs: 100,
            seed: 1,
            t_grid: Vec::new(),
            uniform_low: -2.0,
            uniform_high: 2.0,
            avg_count: None,
            avg_len: 30,
            x0: DVector::zeros(3),
            synthesis: SynthesisOptions::default(),
            tracking_horizon: 80,
            reference_file: None,
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_toml_str(&text, base, &path.display().to_string())
    }

    /// Parse config text; relative file references are resolved against
    /// `base_dir`, and `source_name` labels parse errors.
    pub fn from_toml_str(text: &str, base_dir: &Path, source_name: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Parse {
            source_name: source_name.to_string(),
            detail: e.to_string(),
        })?;
        resolve(raw, base_dir)
    }

    /// Experiment lengths to sweep: the grid when given, otherwise `t_len`.
    pub fn t_values(&self) -> Vec<usize> {
        if self.t_grid.is_empty() {
            vec![self.t_len]
        } else {
            self.t_grid.clone()
        }
    }

    /// Repeat count for the averaging baseline at a given experiment length.
    pub fn avg_count_for(&self, t_len: usize) -> usize {
        self.avg_count.unwrap_or_else(|| (t_len / self.avg_len).max(1))
    }

    pub fn validate(&self) -> Result<()> {
        if self.mc_runs < 1 {
            return Err(Error::Config("mc_runs must be >= 1".into()));
        }
        if !(self.uniform_low < self.uniform_high) {
            return Err(Error::Config(format!(
                "uniform_low ({}) must be strictly below uniform_high ({})",
                self.uniform_low, self.uniform_high
            )));
        }
        if !self.variance.is_finite() || self.variance < 0.0 {
            return Err(Error::Config(format!(
                "variance must be finite and >= 0, got {}",
                self.variance
            )));
        }
        if self.t_len < 1 || self.t_values().iter().any(|t| *t < 1) {
            return Err(Error::Config("experiment lengths must be >= 1".into()));
        }
        if self.avg_len < 1 {
            return Err(Error::Config("avg_len must be >= 1".into()));
        }
        if self.avg_count == Some(0) {
            return Err(Error::Config("avg_count must be >= 1".into()));
        }
        if self.tracking_horizon < 1 {
            return Err(Error::Config("tracking horizon must be >= 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("method list is empty".into()));
        }
        if self.plant.n != self.model.n() {
            return Err(Error::Config(format!(
                "plant state dimension {} does not match model dimension {}",
                self.plant.n,
                self.model.n()
            )));
        }
        if self.x0.len() != self.plant.n {
            return Err(Error::Config(format!(
                "x0 has {} entries for a {}-state plant",
                self.x0.len(),
                self.plant.n
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    plant: Option<RawPlant>,
    model: Option<RawModel>,
    experiment: Option<RawExperiment>,
    solver: Option<RawSolver>,
    tracking: Option<RawTracking>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPlant {
    a: Option<String>,
    a_file: Option<PathBuf>,
    b: Option<String>,
    b_file: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    am: Option<String>,
    am_file: Option<PathBuf>,
    bm: Option<String>,
    bm_file: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExperiment {
    t_len: Option<usize>,
    variance: Option<f64>,
    method: Option<String>,
    mc_runs: Option<usize>,
    seed: Option<u64>,
    t_grid: Option<Vec<usize>>,
    uniform_low: Option<f64>,
    uniform_high: Option<f64>,
    avg_count: Option<usize>,
    avg_len: Option<usize>,
    x0: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSolver {
    lambda: Option<f64>,
    epsilon: Option<f64>,
    eq_tol: Option<f64>,
    psd_tol: Option<f64>,
    duality_gap_tol: Option<f64>,
    max_iter: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTracking {
    horizon: Option<usize>,
    reference_file: Option<PathBuf>,
}

fn load_matrix(
    key: &str,
    inline: Option<String>,
    file: Option<PathBuf>,
    base_dir: &Path,
) -> Result<Option<nalgebra::DMatrix<f64>>> {
    match (inline, file) {
        (Some(_), Some(_)) => Err(Error::Config(format!(
            "{key}: give either the inline matrix or {key}_file, not both"
        ))),
        (Some(text), None) => Ok(Some(parse_matrix(&text, key)?)),
        (None, Some(path)) => {
            let full = if path.is_absolute() { path } else { base_dir.join(path) };
            Ok(Some(read_matrix(&full)?))
        }
        (None, None) => Ok(None),
    }
}

fn resolve(raw: RawConfig, base_dir: &Path) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::benchmark_default();

    if let Some(plant) = raw.plant {
        let a = load_matrix("plant.a", plant.a, plant.a_file, base_dir)?;
        let b = load_matrix("plant.b", plant.b, plant.b_file, base_dir)?;
        match (a, b) {
            (Some(a), Some(b)) => cfg.plant = LtiSystem::new(a, b)?,
            (None, None) => {}
            _ => {
                return Err(Error::Config(
                    "plant: both plant.a and plant.b are required when overriding".into(),
                ))
            }
        }
    }
    if let Some(model) = raw.model {
        let am = load_matrix("model.am", model.am, model.am_file, base_dir)?;
        let bm = load_matrix("model.bm", model.bm, model.bm_file, base_dir)?;
        match (am, bm) {
            (Some(am), Some(bm)) => cfg.model = ReferenceModel::new(am, bm)?,
            (None, None) => {}
            _ => {
                return Err(Error::Config(
                    "model: both model.am and model.bm are required when overriding".into(),
                ))
            }
        }
    }

    // defaults sized for the bundled plant must follow a plant override
    cfg.x0 = DVector::zeros(cfg.plant.n);

    if let Some(exp) = raw.experiment {
        if let Some(v) = exp.t_len {
            cfg.t_len = v;
        }
        if let Some(v) = exp.variance {
            cfg.variance = v;
        }
        if let Some(v) = exp.method {
            cfg.methods = parse_method_list(&v)?;
        }
        if let Some(v) = exp.mc_runs {
            cfg.mc_runs = v;
        }
        if let Some(v) = exp.seed {
            cfg.seed = v;
        }
        if let Some(v) = exp.t_grid {
            cfg.t_grid = v;
        }
        if let Some(v) = exp.uniform_low {
            cfg.uniform_low = v;
        }
        if let Some(v) = exp.uniform_high {
            cfg.uniform_high = v;
        }
        if exp.avg_count.is_some() {
            cfg.avg_count = exp.avg_count;
        }
        if let Some(v) = exp.avg_len {
            cfg.avg_len = v;
        }
        if let Some(v) = exp.x0 {
            cfg.x0 = DVector::from_vec(v);
        }
    }

    if let Some(solver) = raw.solver {
        if let Some(v) = solver.lambda {
            cfg.synthesis.lambda = v;
        }
        if let Some(v) = solver.epsilon {
            cfg.synthesis.epsilon = v;
        }
        if let Some(v) = solver.eq_tol {
            cfg.synthesis.solver.eq_tol = v;
        }
        if let Some(v) = solver.psd_tol {
            cfg.synthesis.solver.psd_tol = v;
        }
        if let Some(v) = solver.duality_gap_tol {
            cfg.synthesis.solver.duality_gap_tol = v;
        }
        if let Some(v) = solver.max_iter {
            cfg.synthesis.solver.max_iter = v;
        }
    }

    if let Some(tracking) = raw.tracking {
        if let Some(v) = tracking.horizon {
            cfg.tracking_horizon = v;
        }
        if let Some(path) = tracking.reference_file {
            let full = if path.is_absolute() { path } else { base_dir.join(path) };
            cfg.reference_file = Some(full);
        }
    }

    cfg.validate()?;
    Ok(cfg)
}
