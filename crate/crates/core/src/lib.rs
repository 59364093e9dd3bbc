//! Damped scaled gradient descent, ScaledGD(λ), for overparameterized
//! low-rank matrix sensing, together with the GD, ScaledGD and PrecGD
//! baselines, Gaussian and identity sensing operators, iterate diagnostics,
//! and a sweep harness for the standard convergence experiments.

pub mod diagnostics;
pub mod error;
pub mod experiments;
pub mod io;
pub mod linalg;
pub mod problem;
pub mod rng;
pub mod sensing;
pub mod solver;

pub use diagnostics::{
    decompose_iterate, delta_norm, orthonormal_complement, phase_metrics, reconstruction_error,
    DeltaNorm, IterateDecomposition, PhaseMetrics, Reference,
};
pub use error::{Error, Result};
pub use problem::{
    dense_m_star, make_approx_truth, make_ground_truth, make_ground_truth_with, ApproxTruth,
    GroundTruth, NoiseModel, Spectrum, Truth,
};
pub use sensing::{
    estimate_rip_constant, gaussian_operator, identity_operator, measure, Backend, Measurements,
    RipEstimate, SensingOperator,
};
pub use solver::{
    estimate_damping, gradient, loss, random_init, run, spectral_init, Algorithm, DampingEstimate,
    Init, IterateState, LambdaRule, SolverConfig, StopReason, StoppingRule, Trajectory,
};

pub use nalgebra::{DMatrix, DVector};
