//! Command-line front end: dataset simulation, one-shot gain synthesis,
//! Monte-Carlo campaigns, tracking studies and the selftest battery.
//! Exit codes: 0 success, 1 usage error, 2 numerical failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;

use covmrc::data_pipeline::{
    bias_correct, build_averaged_projection, build_iv_projection_from_experiment, project,
    ExperimentData, ProjectedData,
};
use covmrc::harness::montecarlo::projection_for_method;
use covmrc::harness::{
    all_passed, records_csv, render, run_monte_carlo, run_selftest, run_tracking,
    run_trajectories, summarize, summary_csv, tracking_csv, ExperimentConfig, Method,
    parse_method_list,
};
use covmrc::linear_system::ReferenceModel;
use covmrc::matrix_io::{format_matrix, read_matrix, write_matrix};
use covmrc::mrc_synth::{
    gains_from_decision, solve_exact_matching, synthesize, ControllerGains, SynthesisMethod,
    SynthesisOptions,
};
use covmrc::{Error, Result};

#[derive(Parser)]
#[command(
    name = "covmrc",
    version,
    about = "Model-reference controller synthesis from noisy state-input data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate an experiment and write its dataset files
    Simulate(SimulateArgs),
    /// Synthesize controller gains from dataset files
    Synthesize(SynthesizeArgs),
    /// Run a Monte-Carlo campaign and write records/summary CSVs
    Montecarlo(MontecarloArgs),
    /// Simulate closed-loop reference tracking and write the tracking CSV
    Tracking(TrackingArgs),
    /// Run the built-in acceptance battery
    Selftest,
}

#[derive(Args)]
struct ConfigOverrides {
    /// Campaign config file; bundled benchmark settings when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the experiment length
    #[arg(long)]
    t_len: Option<usize>,
    /// Override the measurement-noise variance
    #[arg(long)]
    variance: Option<f64>,
    /// Override the base seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override the number of Monte-Carlo runs
    #[arg(long)]
    mc_runs: Option<usize>,
    /// Override the method list (comma separated)
    #[arg(long)]
    method: Option<String>,
}

impl ConfigOverrides {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)?,
            None => ExperimentConfig::benchmark_default(),
        };
        if let Some(v) = self.t_len {
            cfg.t_len = v;
        }
        if let Some(v) = self.variance {
            cfg.variance = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.mc_runs {
            cfg.mc_runs = v;
        }
        if let Some(v) = &self.method {
            cfg.methods = parse_method_list(v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    overrides: ConfigOverrides,
    /// Which campaign run to reproduce
    #[arg(long, default_value_t = 0)]
    run_index: usize,
    /// Output directory for the dataset files
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SynthesizeArgs {
    /// Noise-handling route: exact, noisefree, raw, bc, iv or avg
    #[arg(long, default_value = "exact")]
    method: Method,
    /// Input sequence file (m x T)
    #[arg(long)]
    inputs: PathBuf,
    /// State sequence file (n x (T+1)); repeat the flag for the averaging route
    #[arg(long, required = true)]
    states: Vec<PathBuf>,
    /// Instrument state sequence from the repeated experiment (n x (T+1))
    #[arg(long)]
    iv_states: Option<PathBuf>,
    /// Reference-model state matrix file; 0.2*I when omitted
    #[arg(long)]
    model_am: Option<PathBuf>,
    /// Reference-model input matrix file; 0.8*I when omitted
    #[arg(long)]
    model_bm: Option<PathBuf>,
    /// Known measurement-noise variance, used by the bias correction
    #[arg(long, default_value_t = 0.0)]
    variance: f64,
    /// Weight on the input-matching residual
    #[arg(long)]
    lambda: Option<f64>,
    /// Stability-margin parameter of the Lyapunov constraint
    #[arg(long)]
    epsilon: Option<f64>,
    /// Also write kx.txt and kr.txt into this directory
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct MontecarloArgs {
    #[command(flatten)]
    overrides: ConfigOverrides,
    /// Records CSV output path
    #[arg(long, default_value = "records.csv")]
    records: PathBuf,
    /// Summary CSV output path
    #[arg(long, default_value = "summary.csv")]
    summary: PathBuf,
}

#[derive(Args)]
struct TrackingArgs {
    #[command(flatten)]
    overrides: ConfigOverrides,
    /// External state-feedback gain file (bypasses synthesis)
    #[arg(long, requires = "kr_file")]
    kx_file: Option<PathBuf>,
    /// External reference gain file (bypasses synthesis)
    #[arg(long, requires = "kx_file")]
    kr_file: Option<PathBuf>,
    /// Tracking CSV output path
    #[arg(long, default_value = "tracking.csv")]
    output: PathBuf,
}

/// Parse arguments and dispatch; returns the process exit code.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.command {
        Command::Simulate(args) => cmd_simulate(args).map(|_| 0),
        Command::Synthesize(args) => cmd_synthesize(args).map(|_| 0),
        Command::Montecarlo(args) => cmd_montecarlo(args).map(|_| 0),
        Command::Tracking(args) => cmd_tracking(args).map(|_| 0),
        Command::Selftest => cmd_selftest(),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Usage problems exit 1; numerical/solver problems exit 2.
fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::Parse { .. }
        | Error::Io(_)
        | Error::Dimension { .. }
        | Error::WrongRegime { .. }
        | Error::InputMismatch
        | Error::UnstableModel { .. } => 1,
        _ => 2,
    }
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let cfg = args.overrides.load()?;
    let (main_traj, twin) = run_trajectories(&cfg, cfg.t_len, args.run_index)?;
    std::fs::create_dir_all(&args.out_dir)?;
    let files = [
        ("inputs.txt", &main_traj.inputs),
        ("states.txt", &main_traj.states_noisy),
        ("states_clean.txt", &main_traj.states_clean),
        ("states_iv.txt", &twin.states_noisy),
    ];
    for (name, matrix) in files {
        write_matrix(&args.out_dir.join(name), matrix)?;
    }
    println!(
        "wrote inputs.txt, states.txt, states_clean.txt, states_iv.txt to {} (T = {}, variance = {}, run {})",
        args.out_dir.display(),
        cfg.t_len,
        cfg.variance,
        args.run_index,
    );
    Ok(())
}

fn load_model(
    model_am: Option<&Path>,
    model_bm: Option<&Path>,
    n: usize,
) -> Result<ReferenceModel> {
    match (model_am, model_bm) {
        (Some(am), Some(bm)) => ReferenceModel::new(read_matrix(am)?, read_matrix(bm)?),
        (None, None) => {
            ReferenceModel::new(DMatrix::identity(n, n) * 0.2, DMatrix::identity(n, n) * 0.8)
        }
        _ => Err(Error::Config(
            "model-am and model-bm must be given together".into(),
        )),
    }
}

fn cmd_synthesize(args: SynthesizeArgs) -> Result<()> {
    let inputs = read_matrix(&args.inputs)?;
    let states: Vec<DMatrix<f64>> =
        args.states.iter().map(|p| read_matrix(p)).collect::<Result<_>>()?;
    if states.len() > 1 && args.method != Method::Avg {
        return Err(Error::Config(format!(
            "multiple --states files are only valid with --method avg, got {}",
            args.method
        )));
    }
    let model = load_model(args.model_am.as_deref(), args.model_bm.as_deref(), states[0].nrows())?;
    let mut opts = SynthesisOptions::default();
    if let Some(v) = args.lambda {
        opts.lambda = v;
    }
    if let Some(v) = args.epsilon {
        opts.epsilon = v;
    }

    let proj: ProjectedData = match args.method {
        Method::Exact | Method::NoiseFree => {
            project(&ExperimentData::from_matrices(&inputs, &states[0], false)?)
        }
        Method::Raw => project(&ExperimentData::from_matrices(&inputs, &states[0], true)?),
        Method::Bc => {
            let raw = project(&ExperimentData::from_matrices(&inputs, &states[0], true)?);
            bias_correct(&raw, args.variance)?
        }
        Method::Iv => {
            let iv_path = args.iv_states.as_ref().ok_or_else(|| {
                Error::Config("--iv-states is required with --method iv".into())
            })?;
            let data = ExperimentData::from_matrices(&inputs, &states[0], true)?;
            let twin = ExperimentData::from_matrices(&inputs, &read_matrix(iv_path)?, true)?;
            build_iv_projection_from_experiment(&data, &twin)?
        }
        Method::Avg => {
            let experiments: Vec<ExperimentData> = states
                .iter()
                .map(|s| ExperimentData::from_matrices(&inputs, s, true))
                .collect::<Result<_>>()?;
            build_averaged_projection(&experiments)?
        }
    };

    let gains = match args.method {
        Method::Exact => {
            let decision = solve_exact_matching(&proj, &model)?;
            gains_from_decision(&decision, &proj, &model)?
        }
        _ => synthesize(&proj, &model, &opts)?,
    };

    println!("method: {}", args.method);
    println!("K_x:\n{}", format_matrix(&gains.kx));
    println!("K_r:\n{}", format_matrix(&gains.kr));
    if let Some(d) = &gains.diagnostics {
        println!(
            "matching residuals: {:.3e} (state), {:.3e} (reference)",
            d.matching_residual_a, d.matching_residual_b
        );
        println!(
            "data-side closed-loop spectral radius: {:.6}",
            d.closed_loop_spectral_radius_estimate
        );
    }
    if let Some(dir) = &args.out_dir {
        std::fs::create_dir_all(dir)?;
        write_matrix(&dir.join("kx.txt"), &gains.kx)?;
        write_matrix(&dir.join("kr.txt"), &gains.kr)?;
        println!("wrote kx.txt, kr.txt to {}", dir.display());
    }
    Ok(())
}

fn cmd_montecarlo(args: MontecarloArgs) -> Result<()> {
    let cfg = args.overrides.load()?;
    let records = run_monte_carlo(&cfg)?;
    let summary = summarize(&records);
    std::fs::write(&args.records, records_csv(&records))?;
    std::fs::write(&args.summary, summary_csv(&summary))?;
    println!(
        "campaign finished: {} records ({} methods x {} T values x {} runs)",
        records.len(),
        cfg.methods.len(),
        cfg.t_values().len(),
        cfg.mc_runs,
    );
    for row in &summary {
        if row.metric == "err_kx" && !row.method.contains("-minus-") {
            println!(
                "  {} @ T={}, variance={}: median err_kx {:.4} (n={})",
                row.method, row.t_len, row.variance, row.median, row.n
            );
        }
    }
    println!("records: {}", args.records.display());
    println!("summary: {}", args.summary.display());
    Ok(())
}

fn cmd_tracking(args: TrackingArgs) -> Result<()> {
    let cfg = args.overrides.load()?;
    let gains = match (&args.kx_file, &args.kr_file) {
        (Some(kx), Some(kr)) => ControllerGains::from_matrices(
            read_matrix(kx)?,
            read_matrix(kr)?,
            SynthesisMethod::External,
        ),
        _ => {
            let method = cfg.methods[0];
            let (proj, _) = projection_for_method(&cfg, method, cfg.t_len, 0)?;
            match method {
                Method::Exact => {
                    let decision = solve_exact_matching(&proj, &cfg.model)?;
                    gains_from_decision(&decision, &proj, &cfg.model)?
                }
                _ => synthesize(&proj, &cfg.model, &cfg.synthesis)?,
            }
        }
    };
    let result = run_tracking(&cfg, &gains)?;
    std::fs::write(&args.output, tracking_csv(&result))?;
    println!(
        "tracking finished: horizon {}, {} runs, gains from {}",
        cfg.tracking_horizon,
        result.runs,
        gains.method,
    );
    println!("output: {}", args.output.display());
    Ok(())
}

fn cmd_selftest() -> Result<i32> {
    let items = run_selftest();
    print!("{}", render(&items));
    Ok(if all_passed(&items) { 0 } else { 2 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn help_is_not_an_error() {
        assert_eq!(cli_main(["covmrc", "--help"]), 0);
        assert_eq!(cli_main(["covmrc", "synthesize", "--help"]), 0);
    }

    #[test]
    fn unknown_flags_and_subcommands_are_usage_errors() {
        assert_eq!(cli_main(["covmrc", "--bogus"]), 1);
        assert_eq!(cli_main(["covmrc", "frobnicate"]), 1);
        assert_eq!(cli_main(["covmrc"]), 1);
    }

    #[test]
    fn error_classification() {
        assert_eq!(exit_code(&Error::Config("x".into())), 1);
        assert_eq!(exit_code(&Error::InputMismatch), 1);
        assert_eq!(
            exit_code(&Error::Solver { status: "infeasible".into(), detail: String::new() }),
            2
        );
        assert_eq!(exit_code(&Error::SingularCovariance { min_sv: 0.0 }), 2);
        assert_eq!(exit_code(&Error::ZeroNoise), 2);
    }

    #[test]
    fn missing_required_flag_is_usage_error() {
        assert_eq!(cli_main(["covmrc", "synthesize"]), 1);
    }
}
