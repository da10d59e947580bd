//! Discretized Onsager–Machlup cost and the time-reversed control problem.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};
use crate::model::{LinearAffineModel, MeasurementSeries, StateSpaceModel, TimeGrid, Trajectory};

/// Per-term breakdown of the discretized cost.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OmCost {
    /// `−log N(x0; m0, P0)` including the normalization constant.
    pub prior: f64,
    /// `Σ Δ · ½ ∇·f`.
    pub divergence: f64,
    /// `Σ Δ · ½ |d_k − f_k|²_{Q⁻¹}` (pseudo-inverse when `Q` is rank deficient).
    pub dynamics: f64,
    /// `Σ Δ · ½ |y_k − h_k|²_{R⁻¹}`.
    pub measurement: f64,
    /// Largest norm of `d_k − f_k` projected onto the null space of `Q`; zero
    /// when `Q` has full rank.
    pub constraint_residual: f64,
}

impl OmCost {
    pub fn total(&self) -> f64 {
        self.prior + self.divergence + self.dynamics + self.measurement
    }
}

pub fn om_cost<M: StateSpaceModel + ?Sized>(
    model: &M,
    traj: &Trajectory,
    meas: &MeasurementSeries,
    grid: &TimeGrid,
) -> Result<f64> {
    om_cost_terms(model, traj, meas, grid).map(|c| c.total())
}

/// Left-endpoint quadrature of the Onsager–Machlup functional with forward
/// differences `d_k = (x_{k+1} − x_k)/Δ`, `k = 0 … N−1`.
pub fn om_cost_terms<M: StateSpaceModel + ?Sized>(
    model: &M,
    traj: &Trajectory,
    meas: &MeasurementSeries,
    grid: &TimeGrid,
) -> Result<OmCost> {
    if traj.len() != grid.len() || meas.len() != grid.len() {
        return Err(Error::parameter(format!(
            "trajectory ({}) and measurements ({}) must match the grid ({} nodes)",
            traj.len(),
            meas.len(),
            grid.len()
        )));
    }
    let dt = grid.step();
    let x0 = &traj.states[0];
    let p0 = model.prior_cov();
    let dev = x0 - model.prior_mean();
    let p0_solve = linalg::spd_solve_vec(p0, &dev).ok_or_else(|| Error::numeric(0, "P0 is not positive definite"))?;
    let log_det = linalg::log_det_spd(p0).ok_or_else(|| Error::numeric(0, "P0 is not positive definite"))?;
    let nx = model.state_dim() as f64;
    let prior = 0.5 * dev.dot(&p0_solve) + 0.5 * (nx * (2.0 * std::f64::consts::PI).ln() + log_det);

    let terms: Vec<[f64; 4]> = (0..grid.steps())
        .into_par_iter()
        .map(|k| -> Result<[f64; 4]> {
            let t = grid.time(k);
            let x = &traj.states[k];
            let d = (&traj.states[k + 1] - x) / dt;
            let resid = d - model.drift(x, k, t);
            let (q_pinv, q_null) = diffusion_inverse(model, k, t)?;
            let dyn_term = 0.5 * resid.dot(&(&q_pinv * &resid));
            let null_norm = (&q_null * &resid).norm();

            let r = model.obs_density(k, t);
            let innov = &meas.values[k] - model.measurement(x, k, t);
            let r_solve = linalg::spd_solve_vec(&r, &innov)
                .ok_or_else(|| Error::numeric(k, "measurement noise density R is singular"))?;
            let meas_term = 0.5 * innov.dot(&r_solve);
            let div = 0.5 * model.divergence(x, k, t)?;
            Ok([div * dt, dyn_term * dt, meas_term * dt, null_norm])
        })
        .collect::<Result<_>>()?;

    let column = |i: usize| terms.iter().map(|v| v[i]).collect::<Vec<_>>();
    Ok(OmCost {
        prior,
        divergence: pairwise_sum(&column(0)),
        dynamics: pairwise_sum(&column(1)),
        measurement: pairwise_sum(&column(2)),
        constraint_residual: terms.iter().map(|v| v[3]).fold(0.0, f64::max),
    })
}

/// Pseudo-inverse of `Q` and the projector onto its null space. Fails when
/// `Q` is singular on the range of `L`.
fn diffusion_inverse<M: StateSpaceModel + ?Sized>(model: &M, k: usize, t: f64) -> Result<(Matrix, Matrix)> {
    let q = model.diffusion(k, t);
    let l = model.noise_gain(k, t);
    let (pinv, null) = linalg::psd_pseudo_inverse(&q);
    let rank_q = q.nrows() - null.trace().round() as usize;
    if rank_q == 0 || rank_q < linalg::rank(&l) {
        return Err(Error::numeric(k, "diffusion Q = L W Lᵀ is singular on the range of L"));
    }
    Ok((pinv, null))
}

/// Fixed-shape pairwise summation, independent of thread count.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        n if n <= 8 => values.iter().sum(),
        n => {
            let (a, b) = values.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

#[derive(Debug, Clone)]
enum Series<T> {
    Constant(T),
    PerNode(Vec<T>),
}

impl<T> Series<T> {
    fn get(&self, node: usize) -> &T {
        match self {
            Series::Constant(v) => v,
            Series::PerNode(v) => &v[node],
        }
    }
}

/// The linear-quadratic tracking problem in reversed time `τ = tf − t`.
///
/// Node `j` of the τ-axis is node `N − j` of the original grid. Besides the
/// reversed model quantities the problem caches the information terms
/// `H̃ᵀR̃⁻¹H̃` and `H̃ᵀR̃⁻¹(ỹ − r̃)` used by every backward recursion.
#[derive(Debug, Clone)]
pub struct ReversedControlProblem {
    grid: TimeGrid,
    time_grid: TimeGrid,
    drift: Series<Matrix>,
    drift_offset: Series<Vector>,
    diffusion: Series<Matrix>,
    obs: Series<Matrix>,
    obs_offset: Series<Vector>,
    obs_density: Series<Matrix>,
    info_matrix: Series<Matrix>,
    info_vector: Vec<Vector>,
    meas: Vec<Vector>,
    m0: Vector,
    p0: Matrix,
}

pub fn reverse_problem(
    model: &LinearAffineModel,
    meas: &MeasurementSeries,
    grid: &TimeGrid,
) -> Result<ReversedControlProblem> {
    ReversedControlProblem::new(model, meas, grid)
}

impl ReversedControlProblem {
    pub fn new(model: &LinearAffineModel, meas: &MeasurementSeries, grid: &TimeGrid) -> Result<Self> {
        if meas.len() != grid.len() {
            return Err(Error::parameter(format!(
                "measurement series has {} values, grid has {} nodes",
                meas.len(),
                grid.len()
            )));
        }
        let n = grid.steps();
        let nx = model.m0.len();
        if model.p0.nrows() != nx || model.f(0, grid.t0()).nrows() != nx {
            return Err(Error::parameter("state dimension mismatch between m0, P0 and F"));
        }
        linalg::spd_inverse(&model.p0).ok_or_else(|| Error::numeric(n, "P0 is not positive definite"))?;

        // τ-node j ↔ t-node n − j
        let t_node = |j: usize| n - j;
        let sample = |j: usize| -> Result<(Matrix, Vector, Matrix, Matrix, Vector, Matrix, Matrix, Matrix)> {
            let k = t_node(j);
            let t = grid.time(k);
            let f = -model.f(k, t).into_owned();
            let c = -model.c(k, t).into_owned();
            let q = model.q(k, t);
            let h = model.h(k, t).into_owned();
            let r = model.r(k, t).into_owned();
            let rr = model.obs_noise(k, t).into_owned();
            let rinv_h = linalg::spd_solve(&rr, &h)
                .ok_or_else(|| Error::numeric(k, "measurement noise density R is not positive definite"))?;
            let info = linalg::symmetrized(h.transpose() * &rinv_h);
            Ok((f, c, q, h, r, rr, info, rinv_h.transpose()))
        };

        let (drift, drift_offset, diffusion, obs, obs_offset, obs_density, info_matrix, gains) =
            if model.is_time_invariant() {
                let (f, c, q, h, r, rr, info, gain) = sample(0)?;
                (
                    Series::Constant(f),
                    Series::Constant(c),
                    Series::Constant(q),
                    Series::Constant(h),
                    Series::Constant(r),
                    Series::Constant(rr),
                    Series::Constant(info),
                    Series::Constant(gain),
                )
            } else {
                let samples = (0..=n).into_par_iter().map(sample).collect::<Result<Vec<_>>>()?;
                let mut out = (vec![], vec![], vec![], vec![], vec![], vec![], vec![], vec![]);
                for (f, c, q, h, r, rr, info, gain) in samples {
                    out.0.push(f);
                    out.1.push(c);
                    out.2.push(q);
                    out.3.push(h);
                    out.4.push(r);
                    out.5.push(rr);
                    out.6.push(info);
                    out.7.push(gain);
                }
                (
                    Series::PerNode(out.0),
                    Series::PerNode(out.1),
                    Series::PerNode(out.2),
                    Series::PerNode(out.3),
                    Series::PerNode(out.4),
                    Series::PerNode(out.5),
                    Series::PerNode(out.6),
                    Series::PerNode(out.7),
                )
            };

        let meas_rev: Vec<Vector> = (0..=n).map(|j| meas.values[t_node(j)].clone()).collect();
        let info_vector = (0..=n)
            .into_par_iter()
            .map(|j| gains.get(j) * (&meas_rev[j] - obs_offset.get(j)))
            .collect();

        Ok(Self {
            grid: grid.reversed_axis(),
            time_grid: *grid,
            drift,
            drift_offset,
            diffusion,
            obs,
            obs_offset,
            obs_density,
            info_matrix,
            info_vector,
            meas: meas_rev,
            m0: model.m0.clone(),
            p0: model.p0.clone(),
        })
    }

    /// The τ-axis grid `[0, tf − t0]`.
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// The original t-axis grid.
    pub fn time_grid(&self) -> &TimeGrid {
        &self.time_grid
    }

    pub fn state_dim(&self) -> usize {
        self.m0.len()
    }

    pub fn step(&self) -> f64 {
        self.grid.step()
    }

    /// `F̃(τ_j) = −F(tf − τ_j)`.
    pub fn f(&self, j: usize) -> &Matrix {
        self.drift.get(j)
    }

    /// `c̃(τ_j) = −c(tf − τ_j)`.
    pub fn c(&self, j: usize) -> &Vector {
        self.drift_offset.get(j)
    }

    /// `Q̃(τ_j) = Q(tf − τ_j)`.
    pub fn q(&self, j: usize) -> &Matrix {
        self.diffusion.get(j)
    }

    pub fn h(&self, j: usize) -> &Matrix {
        self.obs.get(j)
    }

    pub fn r(&self, j: usize) -> &Vector {
        self.obs_offset.get(j)
    }

    /// `R̃(τ_j)`.
    pub fn obs_density(&self, j: usize) -> &Matrix {
        self.obs_density.get(j)
    }

    /// `ỹ(τ_j) = y(tf − τ_j)`.
    pub fn y(&self, j: usize) -> &Vector {
        &self.meas[j]
    }

    /// `H̃ᵀ R̃⁻¹ H̃` at τ-node `j`.
    pub fn info_matrix(&self, j: usize) -> &Matrix {
        self.info_matrix.get(j)
    }

    /// `H̃ᵀ R̃⁻¹ (ỹ − r̃)` at τ-node `j`.
    pub fn info_vector(&self, j: usize) -> &Vector {
        &self.info_vector[j]
    }

    /// Terminal cost parameters: `S(τ_f) = P0⁻¹`, `v(τ_f) = P0⁻¹ m0`.
    pub fn prior(&self) -> (&Vector, &Matrix) {
        (&self.m0, &self.p0)
    }
}

/// Maps a trajectory between the τ-axis and the t-axis of `grid` by index
/// reversal. Applying it twice returns the input.
pub fn reverse_trajectory(phi: &Trajectory, grid: &TimeGrid) -> Trajectory {
    let on_tau_axis = phi.times.first().is_some_and(|t| *t == 0.0);
    let times = if on_tau_axis || grid.t0() == 0.0 {
        if on_tau_axis {
            grid.node_times()
        } else {
            grid.reversed_axis().node_times()
        }
    } else {
        grid.reversed_axis().node_times()
    };
    let times = if phi.len() == times.len() {
        times
    } else {
        phi.times.iter().rev().copied().collect()
    };
    let mut states = phi.states.clone();
    states.reverse();
    let covariances = phi.covariances.as_ref().map(|c| c.iter().rev().cloned().collect());
    Trajectory {
        times,
        states,
        covariances,
    }
}

/// Cost of the reversed control problem for a τ-axis path `φ`, with controls
/// `u_j = (φ_{j+1} − φ_j)/Δ − F̃_j φ_j − c̃_j` and left-endpoint quadrature in τ.
pub fn control_cost(problem: &ReversedControlProblem, phi: &[Vector]) -> Result<f64> {
    let n = problem.grid().steps();
    if phi.len() != n + 1 {
        return Err(Error::parameter("path does not match the τ-grid"));
    }
    let dt = problem.step();
    let (m0, p0) = problem.prior();
    let dev = &phi[n] - m0;
    let solve = linalg::spd_solve_vec(p0, &dev).ok_or_else(|| Error::numeric(n, "P0 is not positive definite"))?;
    let log_det = linalg::log_det_spd(p0).ok_or_else(|| Error::numeric(n, "P0 is not positive definite"))?;
    let terminal =
        0.5 * dev.dot(&solve) + 0.5 * (m0.len() as f64 * (2.0 * std::f64::consts::PI).ln() + log_det);

    let running: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|j| -> Result<f64> {
            let u = (&phi[j + 1] - &phi[j]) / dt - problem.f(j) * &phi[j] - problem.c(j);
            let (q_pinv, _) = linalg::psd_pseudo_inverse(problem.q(j));
            let innov = problem.y(j) - problem.h(j) * &phi[j] - problem.r(j);
            let r_solve = linalg::spd_solve_vec(problem.obs_density(j), &innov)
                .ok_or_else(|| Error::numeric(j, "R̃ is not positive definite"))?;
            Ok(dt * (0.5 * u.dot(&(q_pinv * &u)) + 0.5 * innov.dot(&r_solve) - 0.5 * problem.f(j).trace()))
        })
        .collect::<Result<_>>()?;
    Ok(terminal + pairwise_sum(&running))
}
