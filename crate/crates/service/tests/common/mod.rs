#![allow(dead_code)]

use wynn_core::adaptive::EstimatorConfig;
use wynn_core::model::linspace;
use wynn_core::{FamilyLink, ModelSpec, ModelSpecDocument};
use wynn_service::{CreateSession, PointRef};

pub fn logistic_doc() -> ModelSpecDocument {
    ModelSpec::polynomial_1d(FamilyLink::BernoulliLogit, &linspace(-4.0, 4.0, 81), 1, vec![-2.0, -0.5], vec![2.5, 3.0])
        .unwrap()
        .to_document()
}

pub fn gauss5_doc() -> ModelSpecDocument {
    ModelSpec::polynomial_1d(
        FamilyLink::GaussianIdentity,
        &[-1.0, -0.5, 0.0, 0.5, 1.0],
        1,
        vec![-2.0, -2.0],
        vec![2.0, 2.0],
    )
    .unwrap()
    .to_document()
}

pub fn create(doc: ModelSpecDocument, start: &[&str]) -> CreateSession {
    CreateSession {
        spec: doc,
        start: start.iter().map(|s| PointRef::Label(s.to_string())).collect(),
        estimator: EstimatorConfig::default(),
        theta_seed: None,
    }
}

/// Deterministic 0/1 responses.
pub fn bit(i: usize) -> f64 {
    ((i * 7919 + 13) % 5 < 2) as u8 as f64
}
