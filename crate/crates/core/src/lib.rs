//! Locally D-optimal and adaptive designs for generalized linear models
//! with one-parameter exponential-family responses.
//!
//! The crate covers the response families ([`expfam`]), model
//! specifications over a finite design grid ([`model`]), designs and
//! information matrices ([`design`]), the fixed-parameter Wynn solver
//! ([`wynn`]), maximum-likelihood estimation over a parameter box
//! ([`estimation`]), the adaptive loop ([`adaptive`]) and replicated
//! simulation experiments ([`simlab`]).

pub mod adaptive;
pub mod appendix;
pub mod design;
pub mod error;
pub mod estimation;
pub mod expfam;
pub mod format;
pub mod model;
pub mod simlab;
pub mod wynn;

pub use adaptive::{
    adaptive_init, run_adaptive, run_adaptive_with, AdaptiveState, EstimatorConfig, MeanResponses, ResponseSource,
    SimulatedResponses, StepDiagnostics, Trajectory, TrajectoryRow,
};
pub use design::{
    information_matrix, sensitivity, sensitivity_profile, update_design, Design, DesignEntry, InfoMatrix,
};
pub use error::{Error, Result};
pub use estimation::{fit_mle, log_likelihood, score, DataSet, FitResult, SolverConfig};
pub use expfam::{Family, FamilyLink};
pub use model::{GridPoint, ModelSpec, ModelSpecDocument, ParameterBox, ValidationFailure, ValidationReport};
pub use wynn::{solve_locally_d_optimal, wynn_step, Certificate, SolveStatus, WynnConfig, WynnStep};
