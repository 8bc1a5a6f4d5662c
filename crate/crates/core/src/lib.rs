//! Synthesis of model-reference state-feedback controllers for discrete-time
//! LTI systems directly from noisy state-input data.
//!
//! The crate covers the full chain: trajectory simulation, construction of
//! T-normalized data matrices with bias-corrected and instrumental-variable
//! noise mitigation, a small dense SDP solver for the Lyapunov-constrained
//! matching programs, and a Monte-Carlo benchmark harness with CSV output.

pub mod data_pipeline;
pub mod error;
pub mod harness;
mod linalg;
pub mod linear_system;
pub mod matrix_io;
pub mod mrc_synth;
pub mod sdp_core;

pub use data_pipeline::{ExperimentData, PeReport, ProjectedData, Regime};
pub use error::{Error, Result};
pub use harness::{ExperimentConfig, Method, RunRecord, SummaryRow};
pub use linear_system::{spectral_radius, LtiSystem, NoiseSpec, ReferenceModel, Trajectory};
pub use mrc_synth::{
    ControllerGains, GainDiagnostics, MatchVerdict, MatchingDecision, SynthesisMethod,
    SynthesisOptions,
};
pub use sdp_core::{
    AffineMatrixExpr, LmiBlock, SdpProblem, SdpSolution, SdpStatus, SolveSettings,
};
