//! Bundled benchmark system: the three-state, three-input study plant with
//! its diagonal reference model and the published matched gains.

use nalgebra::DMatrix;

use crate::linear_system::{LtiSystem, ReferenceModel};
use crate::mrc_synth::{ControllerGains, SynthesisMethod};

pub fn benchmark_plant() -> LtiSystem {
    let a = DMatrix::from_row_slice(
        3,
        3,
        &[
            0.1344, 0.2155, -0.1084,
            0.4585, 0.0797, 0.0857,
            -0.5647, -0.3269, 0.8946,
        ],
    );
    let b = DMatrix::from_row_slice(
        3,
        3,
        &[
            0.9298, 0.9143, -0.7162,
            -0.6848, -0.0292, -0.1565,
            0.9412, 0.6006, 0.8315,
        ],
    );
    LtiSystem::new(a, b).expect("bundled plant is valid")
}

pub fn benchmark_model() -> ReferenceModel {
    ReferenceModel::new(DMatrix::identity(3, 3) * 0.2, DMatrix::identity(3, 3) * 0.8)
        .expect("bundled model is Schur stable")
}

/// Published matched gains, quoted to four decimals.
pub fn benchmark_gains() -> ControllerGains {
    let kx = DMatrix::from_row_slice(
        3,
        3,
        &[
            0.6308, -0.2920, 0.3080,
            -0.3814, 0.4011, -0.7166,
            0.2405, 0.4340, -0.6664,
        ],
    );
    let kr = DMatrix::from_row_slice(
        3,
        3,
        &[
            0.0768, -1.3126, -0.1809,
            0.4654, 1.5957, 0.7012,
            -0.4231, 0.3332, 0.6604,
        ],
    );
    ControllerGains::from_matrices(kx, kr, SynthesisMethod::External)
}
