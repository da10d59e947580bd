//! The two benchmark models.

use ctmap::{LinearAffineModel, Matrix, NonlinearModel, Vector};

/// Time span used by both benchmark models.
pub const SPAN: (f64, f64) = (0.0, 5.0);

/// Partially observed Wiener velocity model in two dimensions: state
/// `(p₁, p₂, v₁, v₂)`, positions observed.
pub fn wiener_velocity_model() -> LinearAffineModel {
    let mut f = Matrix::zeros(4, 4);
    f[(0, 2)] = 1.0;
    f[(1, 3)] = 1.0;
    let mut l = Matrix::zeros(4, 2);
    l[(2, 0)] = 1.0;
    l[(3, 1)] = 1.0;
    let mut h = Matrix::zeros(2, 4);
    h[(0, 0)] = 1.0;
    h[(1, 1)] = 1.0;
    LinearAffineModel::time_invariant(
        f,
        l,
        Matrix::identity(2, 2) * 4.0,
        h,
        Matrix::identity(2, 2) * 1e-2,
        Vector::from_vec(vec![5.0, 5.0, 0.0, 0.0]),
        Matrix::identity(4, 4) * 1e-2,
    )
}

pub const CT_SIGMA_V: f64 = 5e-4;
pub const CT_SIGMA_OMEGA: f64 = 0.02;

fn ct_drift(x: &Vector) -> Vector {
    let omega = x[4];
    Vector::from_vec(vec![x[2], x[3], -omega * x[3], omega * x[2], 0.0])
}

fn ct_drift_jacobian(x: &Vector) -> Matrix {
    let omega = x[4];
    let mut j = Matrix::zeros(5, 5);
    j[(0, 2)] = 1.0;
    j[(1, 3)] = 1.0;
    j[(2, 3)] = -omega;
    j[(2, 4)] = -x[3];
    j[(3, 2)] = omega;
    j[(3, 4)] = x[2];
    j
}

fn range_bearing(x: &Vector) -> Vector {
    Vector::from_vec(vec![x[0].hypot(x[1]), x[1].atan2(x[0])])
}

fn range_bearing_jacobian(x: &Vector) -> Matrix {
    let r2 = x[0] * x[0] + x[1] * x[1];
    let r = r2.sqrt();
    let mut j = Matrix::zeros(2, 5);
    j[(0, 0)] = x[0] / r;
    j[(0, 1)] = x[1] / r;
    j[(1, 0)] = -x[1] / r2;
    j[(1, 1)] = x[0] / r2;
    j
}

/// Coordinated turn with range/bearing measurements: state
/// `(ξ, ζ, ξ̇, ζ̇, ω)`.
pub fn coordinated_turn_model() -> NonlinearModel {
    let mut l = Matrix::zeros(5, 3);
    l[(2, 0)] = CT_SIGMA_V;
    l[(3, 1)] = CT_SIGMA_V;
    l[(4, 2)] = CT_SIGMA_OMEGA;
    NonlinearModel::new(
        |x, _| ct_drift(x),
        |x, _| range_bearing(x),
        l,
        Matrix::identity(3, 3),
        Matrix::from_diagonal(&Vector::from_vec(vec![5e-3, 1e-3])),
        Vector::from_vec(vec![5.0, 5.0, 0.0, 0.3, 0.0]),
        Matrix::from_diagonal(&Vector::from_vec(vec![0.01, 0.01, 0.01, 0.01, 0.04])),
    )
    .with_drift_jacobian(|x, _| ct_drift_jacobian(x))
    .with_divergence(|_, _| 0.0)
    .with_measurement_jacobian(|x, _| range_bearing_jacobian(x))
}
