//! Fixtures shared by the benchmarks.

use std::sync::Arc;

use nalgebra::DVector;
use wynn_core::model::linspace;
use wynn_core::{DataSet, FamilyLink, ModelSpec};

/// Logistic line on `points` equally spaced values in [-4, 4].
pub fn logistic_line(points: usize) -> Arc<ModelSpec> {
    Arc::new(
        ModelSpec::polynomial_1d(
            FamilyLink::BernoulliLogit,
            &linspace(-4.0, 4.0, points),
            1,
            vec![-2.0, -0.5],
            vec![2.5, 3.0],
        )
        .expect("valid spec"),
    )
}

pub fn theta_true() -> DVector<f64> {
    DVector::from_vec(vec![0.0, 1.0])
}

/// `rows` Bernoulli observations cycling over the grid, with the response
/// set to 1 whenever the true success probability exceeds a fixed ramp.
pub fn logistic_data(spec: &Arc<ModelSpec>, rows: usize) -> DataSet {
    let theta = theta_true();
    let mut data = DataSet::new(spec.clone());
    for i in 0..rows {
        let k = (i * 37) % spec.len();
        let mu = spec.mean_response(k, &theta).expect("theta in box");
        let ramp = (i % 97) as f64 / 97.0;
        data.push(k, (mu > ramp) as u8 as f64).expect("valid row");
    }
    data
}
