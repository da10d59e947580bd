//! Iterated linearization for nonlinear models: linearize about a nominal
//! path, solve the affine problem, repeat.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{self, Vector};
use crate::model::{LinearAffineModel, MeasurementSeries, StateSpaceModel, TimeFn, TimeGrid, Trajectory};
use crate::om::{om_cost, reverse_problem};
use crate::parallel::{parallel_rts_map_with, parallel_tf_map_with, SolverOptions};
use crate::sequential::{sequential_rts_map, two_filter_seq};

pub const DEFAULT_ITERATIONS: usize = 5;
pub const DEFAULT_TOLERANCE: f64 = 1e-8;
/// Consecutive cost increases that count as divergence.
pub const DIVERGENCE_RUN: usize = 3;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct IterationTrace {
    /// Nonlinear OM cost of each iterate.
    pub costs: Vec<f64>,
    /// Max-abs change of each iterate against the previous nominal.
    pub step_norms: Vec<f64>,
    pub iterations_run: usize,
}

impl IterationTrace {
    /// Length of the trailing run of cost increases.
    pub fn consecutive_increases(&self) -> usize {
        self.costs.windows(2).rev().take_while(|w| w[1] > w[0]).count()
    }
}

/// Affine solver used inside each iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Backend {
    SeqRts,
    #[default]
    ParRts,
    SeqTf,
    ParTf,
}

impl Backend {
    pub fn solve(self, model: &LinearAffineModel, meas: &MeasurementSeries, grid: &TimeGrid) -> Result<Trajectory> {
        self.solve_with(model, meas, grid, &SolverOptions::default())
    }

    pub fn solve_with(
        self,
        model: &LinearAffineModel,
        meas: &MeasurementSeries,
        grid: &TimeGrid,
        opts: &SolverOptions,
    ) -> Result<Trajectory> {
        match self {
            Backend::SeqRts => sequential_rts_map(model, meas, grid),
            Backend::ParRts => Ok(parallel_rts_map_with(model, meas, grid, opts)?.trajectory),
            Backend::SeqTf => two_filter_seq(&reverse_problem(model, meas, grid)?),
            Backend::ParTf => Ok(parallel_tf_map_with(model, meas, grid, opts)?.trajectory),
        }
    }

    pub fn is_parallel(self) -> bool {
        matches!(self, Backend::ParRts | Backend::ParTf)
    }
}

/// First-order Taylor model about `nominal`, one set of coefficients per node.
pub fn linearize_about<M: StateSpaceModel + ?Sized>(
    model: &M,
    nominal: &Trajectory,
    grid: &TimeGrid,
) -> Result<LinearAffineModel> {
    if nominal.len() != grid.len() {
        return Err(Error::parameter(format!(
            "nominal has {} states, grid has {} nodes",
            nominal.len(),
            grid.len()
        )));
    }
    let n = grid.len();
    let (mut fs, mut cs, mut hs, mut rs) = (
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    );
    for (k, x) in nominal.states.iter().enumerate() {
        if !linalg::is_finite_vec(x) {
            return Err(Error::numeric(k, "nominal state is not finite"));
        }
        let t = grid.time(k);
        let at = |e: Error| Error::numeric(k, format!("linearization failed: {e}"));
        let f = model.drift_jacobian(x, k, t).map_err(at)?;
        let h = model.measurement_jacobian(x, k, t).map_err(at)?;
        let c = model.drift(x, k, t) - &f * x;
        let r = model.measurement(x, k, t) - &h * x;
        if !linalg::is_finite_vec(&c) || !linalg::is_finite_vec(&r) {
            return Err(Error::numeric(k, "model evaluation is not finite at the nominal"));
        }
        fs.push(f);
        cs.push(c);
        hs.push(h);
        rs.push(r);
    }
    let gains: Vec<_> = (0..n).map(|k| model.noise_gain(k, grid.time(k))).collect();
    let densities: Vec<_> = (0..n).map(|k| model.noise_density(k, grid.time(k))).collect();
    let obs_noise: Vec<_> = (0..n).map(|k| model.obs_density(k, grid.time(k))).collect();
    Ok(LinearAffineModel {
        drift: TimeFn::PerNode(Arc::new(fs)),
        drift_offset: TimeFn::PerNode(Arc::new(cs)),
        noise_gain: TimeFn::PerNode(Arc::new(gains)),
        noise_density: TimeFn::PerNode(Arc::new(densities)),
        obs: TimeFn::PerNode(Arc::new(hs)),
        obs_offset: TimeFn::PerNode(Arc::new(rs)),
        obs_density: TimeFn::PerNode(Arc::new(obs_noise)),
        m0: model.prior_mean().clone(),
        p0: model.prior_cov().clone(),
    })
}

/// Measurement-free Euler propagation of the prior mean through the drift.
pub fn initial_nominal<M: StateSpaceModel + ?Sized>(model: &M, grid: &TimeGrid) -> Result<Trajectory> {
    let dt = grid.step();
    let mut states = Vec::with_capacity(grid.len());
    states.push(model.prior_mean().clone());
    for k in 0..grid.steps() {
        let x = &states[k];
        let next: Vector = x + model.drift(x, k, grid.time(k)) * dt;
        if !linalg::is_finite_vec(&next) {
            return Err(Error::numeric(k + 1, "prior mean propagation is not finite"));
        }
        states.push(next);
    }
    Trajectory::on_grid(grid, states)
}

/// Settings of [`iterated_map_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationOptions {
    pub backend: Backend,
    pub iterations: usize,
    /// Stop once the max state change drops below this.
    pub tolerance: f64,
    pub solver: SolverOptions,
}

impl Default for IterationOptions {
    fn default() -> Self {
        Self {
            backend: Backend::default(),
            iterations: DEFAULT_ITERATIONS,
            tolerance: DEFAULT_TOLERANCE,
            solver: SolverOptions::default(),
        }
    }
}

/// Iterated MAP estimate with `iters` relinearizations at most, stopping early
/// once the max state change drops below `tol`.
pub fn iterated_map<M: StateSpaceModel + ?Sized>(
    model: &M,
    meas: &MeasurementSeries,
    grid: &TimeGrid,
    backend: Backend,
    iters: usize,
    tol: f64,
) -> Result<(Trajectory, IterationTrace)> {
    let opts = IterationOptions {
        backend,
        iterations: iters,
        tolerance: tol,
        ..IterationOptions::default()
    };
    iterated_map_with(model, meas, grid, &opts, |_, _| {})
}

/// [`iterated_map`] calling `observe(iteration, iterate)` after every solve,
/// iterations counted from 1.
pub fn iterated_map_with<M, F>(
    model: &M,
    meas: &MeasurementSeries,
    grid: &TimeGrid,
    opts: &IterationOptions,
    mut observe: F,
) -> Result<(Trajectory, IterationTrace)>
where
    M: StateSpaceModel + ?Sized,
    F: FnMut(usize, &Trajectory),
{
    if opts.iterations == 0 {
        return Err(Error::parameter("iteration count must be at least 1"));
    }
    if !(opts.tolerance >= 0.0) {
        return Err(Error::parameter(format!(
            "tolerance must be non-negative, got {}",
            opts.tolerance
        )));
    }
    let mut nominal = initial_nominal(model, grid)?;
    let mut trace = IterationTrace::default();
    for iteration in 1..=opts.iterations {
        let wrap = |e: Error| Error::Iteration {
            iteration,
            source: Box::new(e),
        };
        let linear = linearize_about(model, &nominal, grid).map_err(wrap)?;
        let next = opts.backend.solve_with(&linear, meas, grid, &opts.solver).map_err(wrap)?;
        let cost = om_cost(model, &next, meas, grid).map_err(wrap)?;
        let change = next.max_abs_diff(&nominal);
        trace.costs.push(cost);
        trace.step_norms.push(change);
        trace.iterations_run = iteration;
        observe(iteration, &next);
        nominal = next;
        if trace.consecutive_increases() >= DIVERGENCE_RUN {
            return Err(Error::Divergence { trace });
        }
        if change < opts.tolerance {
            break;
        }
    }
    Ok((nominal, trace))
}
