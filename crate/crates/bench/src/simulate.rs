//! Euler–Maruyama simulation with white-noise measurements.

use ctmap::{Matrix, MeasurementSeries, StateSpaceModel, TimeGrid, Trajectory, Vector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{BenchError, Result};

fn normal_vector(rng: &mut ChaCha8Rng, n: usize) -> Vector {
    Vector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(rng)))
}

/// A square root `G` with `G Gᵀ = m`; Cholesky when possible, otherwise the
/// symmetric root of a PSD matrix (e.g. zero diffusion).
fn cholesky_factor(m: &Matrix, what: &str) -> Result<Matrix> {
    if let Some(c) = m.clone().cholesky() {
        return Ok(c.l());
    }
    let eig = m.clone().symmetric_eigen();
    let max = eig.eigenvalues.amax();
    if eig.eigenvalues.iter().any(|l| *l < -1e-12 * max.max(1.0)) {
        return Err(BenchError::Invalid(format!("{what} is not positive semidefinite")));
    }
    let root = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * Matrix::from_diagonal(&root) * eig.eigenvectors.transpose())
}

/// `x_{k+1} = x_k + f(x_k) Δ + L √(WΔ) ξ_k` from `x_0 ~ N(m0, P0)`, and
/// `y_k = h(x_k) + ν_k` with `ν_k ~ N(0, R/Δ)` at every node.
pub fn simulate<M: StateSpaceModel + ?Sized>(model: &M, grid: &TimeGrid, seed: u64) -> Result<(Trajectory, MeasurementSeries)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dt = grid.step();
    let nx = model.state_dim();
    let ny = model.obs_dim();

    let mut x = model.prior_mean() + cholesky_factor(model.prior_cov(), "P0")? * normal_vector(&mut rng, nx);
    let mut states = Vec::with_capacity(grid.len());
    let mut values = Vec::with_capacity(grid.len());
    for k in 0..grid.len() {
        let t = grid.time(k);
        let r_half = cholesky_factor(&(model.obs_density(k, t) / dt), "R")?;
        values.push(model.measurement(&x, k, t) + r_half * normal_vector(&mut rng, ny));
        if k == grid.steps() {
            states.push(x);
            break;
        }
        let l = model.noise_gain(k, t);
        let w_half = cholesky_factor(&(model.noise_density(k, t) * dt), "W")?;
        let next = &x + model.drift(&x, k, t) * dt + l * w_half * normal_vector(&mut rng, model.noise_density(k, t).nrows());
        if !next.iter().all(|v| v.is_finite()) {
            return Err(BenchError::SimulationBlowUp { node: k + 1 });
        }
        states.push(std::mem::replace(&mut x, next));
    }
    if !values.iter().all(|v| v.iter().all(|y| y.is_finite())) {
        return Err(BenchError::SimulationBlowUp { node: grid.steps() });
    }
    Ok((Trajectory::on_grid(grid, states)?, MeasurementSeries::new(grid, values)?))
}

/// Measurements for a grid whose step is `factor` fine steps: each coarse
/// node averages the fine values it holds over, and the last node is kept.
/// Averaging preserves the white-noise scaling `R/Δ` of the coarse grid.
pub fn coarsen_measurements(meas: &MeasurementSeries, fine: &TimeGrid, coarse: &TimeGrid) -> Result<MeasurementSeries> {
    let factor = coarse_factor(fine, coarse)?;
    let mut values = Vec::with_capacity(coarse.len());
    for k in 0..coarse.steps() {
        let group = &meas.values[k * factor..(k + 1) * factor];
        let sum = group.iter().skip(1).fold(group[0].clone(), |acc, v| acc + v);
        values.push(sum / factor as f64);
    }
    values.push(meas.values[fine.steps()].clone());
    Ok(MeasurementSeries::new(coarse, values)?)
}

/// Every `factor`-th state of a fine trajectory.
pub fn subsample(traj: &Trajectory, fine: &TimeGrid, coarse: &TimeGrid) -> Result<Trajectory> {
    let factor = coarse_factor(fine, coarse)?;
    let states = (0..coarse.len()).map(|k| traj.states[k * factor].clone()).collect();
    Ok(Trajectory::on_grid(coarse, states)?)
}

fn coarse_factor(fine: &TimeGrid, coarse: &TimeGrid) -> Result<usize> {
    let (nf, nc) = (fine.steps(), coarse.steps());
    if nc == 0 || nf % nc != 0 || fine.t0() != coarse.t0() || fine.tf() != coarse.tf() {
        return Err(BenchError::Invalid(format!(
            "a grid of {nc} steps is not a coarsening of one with {nf} steps"
        )));
    }
    Ok(nf / nc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::wiener_velocity_model;
    use ctmap::{build_time_grid, LinearAffineModel};

    #[test]
    fn noiseless_dynamics_stay_put() {
        let model = LinearAffineModel::time_invariant(
            Matrix::zeros(2, 2),
            Matrix::identity(2, 2),
            Matrix::zeros(2, 2),
            Matrix::identity(2, 2),
            Matrix::identity(2, 2),
            Vector::from_vec(vec![1.0, 2.0]),
            Matrix::identity(2, 2),
        );
        let grid = build_time_grid(0.0, 1.0, 4, 5).unwrap();
        let (x, y) = simulate(&model, &grid, 1).unwrap();
        for s in &x.states {
            assert_eq!(s, &x.states[0]);
        }
        assert!(y.values.iter().any(|v| (v - &x.states[0]).amax() > 1e-3));
    }

    #[test]
    fn fixed_seed_is_deterministic() {
        let grid = build_time_grid(0.0, 5.0, 10, 10).unwrap();
        let a = simulate(&wiener_velocity_model(), &grid, 42).unwrap();
        let b = simulate(&wiener_velocity_model(), &grid, 42).unwrap();
        assert_eq!(a, b);
        let c = simulate(&wiener_velocity_model(), &grid, 43).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn coarsening_averages_groups() {
        let fine = build_time_grid(0.0, 1.0, 2, 2).unwrap();
        let coarse = build_time_grid(0.0, 1.0, 2, 1).unwrap();
        let ys = (0..5).map(|k| Vector::from_element(1, k as f64)).collect();
        let meas = MeasurementSeries::new(&fine, ys).unwrap();
        let c = coarsen_measurements(&meas, &fine, &coarse).unwrap();
        let vals: Vec<f64> = c.values.iter().map(|v| v[0]).collect();
        assert_eq!(vals, vec![0.5, 2.5, 4.0]);
        assert!(coarsen_measurements(&meas, &coarse, &fine).is_err());
    }
}
