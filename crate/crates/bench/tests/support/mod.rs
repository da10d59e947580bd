//! Shared helpers for the integration and acceptance tests.
#![allow(dead_code)]

use ctmap::{build_time_grid, Matrix, MeasurementSeries, StateSpaceModel, TimeGrid, Trajectory, Vector};
use ctmap_bench::{coarsen_measurements, simulate, wiener_velocity_model};

/// Exact minimizer of the Euler-discretized OM cost for the Wiener velocity
/// model. The position rows of `Q` are zero, so `p_{k+1} = p_k + Δ v_k` holds
/// exactly; with diagonal `P0`, `W`, `R` the two axes decouple and each is a
/// dense quadratic in `(p_0, v_0 … v_N)`.
pub fn wiener_qp_oracle(meas: &MeasurementSeries, grid: &TimeGrid) -> Trajectory {
    let model = wiener_velocity_model();
    let n = grid.steps();
    let dt = grid.step();
    let w = model.noise_density(0, 0.0)[(0, 0)];
    let r = model.obs_density(0, 0.0)[(0, 0)];
    let p0_var = model.p0[(0, 0)];
    let mut states = vec![Vector::zeros(4); n + 1];
    for axis in 0..2 {
        // unknowns: index 0 is p_0, index 1 + i is v_i
        let m = n + 2;
        let mut h = Matrix::zeros(m, m);
        let mut g = Vector::zeros(m);
        h[(0, 0)] += 1.0 / p0_var;
        g[0] += model.m0[axis] / p0_var;
        h[(1, 1)] += 1.0 / p0_var;
        g[1] += model.m0[axis + 2] / p0_var;
        for k in 0..n {
            let c = 1.0 / (w * dt);
            let (a, b) = (1 + k, 2 + k);
            h[(a, a)] += c;
            h[(b, b)] += c;
            h[(a, b)] -= c;
            h[(b, a)] -= c;
        }
        // measurement terms Δ/(2r)(y_k − p_k)², p_k = p_0 + Δ Σ_{i<k} v_i
        let weight = dt / r;
        let count = |i: usize| n.saturating_sub(i + 1) as f64;
        h[(0, 0)] += weight * n as f64;
        for i in 0..n {
            h[(0, 1 + i)] += weight * dt * count(i);
            h[(1 + i, 0)] += weight * dt * count(i);
            for j in 0..n {
                h[(1 + i, 1 + j)] += weight * dt * dt * count(i.max(j));
            }
        }
        for k in 0..n {
            g[0] += weight * meas.values[k][axis];
        }
        for i in 0..n {
            let s: f64 = (i + 1..n).map(|k| meas.values[k][axis]).sum();
            g[1 + i] += weight * dt * s;
        }
        let z = h.cholesky().expect("oracle Hessian is SPD").solve(&g);
        let mut p = z[0];
        for k in 0..=n {
            states[k][axis] = p;
            states[k][axis + 2] = z[1 + k];
            if k < n {
                p += dt * z[1 + k];
            }
        }
    }
    Trajectory::on_grid(grid, states).unwrap()
}

/// Wiener data simulated on the finest grid `(blocks, substeps · 2^levels)`
/// and averaged onto each coarser grid; returns `(grid, measurements)` from
/// coarse to fine.
pub fn wiener_refinements(seed: u64, blocks: usize, substeps: usize, levels: u32) -> Vec<(TimeGrid, MeasurementSeries)> {
    let model = wiener_velocity_model();
    let fine = build_time_grid(0.0, 5.0, blocks, substeps << levels).unwrap();
    let (_, meas) = simulate(&model, &fine, seed).unwrap();
    (0..=levels)
        .map(|l| {
            let grid = build_time_grid(0.0, 5.0, blocks, substeps << l).unwrap();
            let m = coarsen_measurements(&meas, &fine, &grid).unwrap();
            (grid, m)
        })
        .collect()
}

/// Max-abs difference between two trajectories at the nodes of the coarser one.
pub fn max_diff_on_coarse(coarse: &Trajectory, fine: &Trajectory) -> f64 {
    let factor = (fine.len() - 1) / (coarse.len() - 1);
    coarse
        .states
        .iter()
        .enumerate()
        .map(|(k, x)| (x - &fine.states[k * factor]).amax())
        .fold(0.0, f64::max)
}

pub fn max_diff(a: &Trajectory, b: &Trajectory) -> f64 {
    a.max_abs_diff(b)
}
