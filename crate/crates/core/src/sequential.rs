//! Sequential baselines on the fine Euler grid: Kalman–Bucy filter, backward
//! Riccati pass, continuous-time RTS smoother and the two-filter smoother.

use crate::element::{
    forward_information, forward_refine_path, init_element, make_abar0, value_minimizer, ConditionalElement,
    GaussianState, Integrator, ValueFunction,
};
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};
use crate::model::{LinearAffineModel, MeasurementSeries, TimeGrid, Trajectory};
use crate::om::{reverse_trajectory, ReversedControlProblem};

/// Condition estimate of `I + C̄S` above which the two-filter combination is
/// reported as ill-conditioned.
pub const FUSION_CONDITION_LIMIT: f64 = 1e12;

/// Filter marginals, one per node in t order.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterResult {
    pub states: Vec<GaussianState>,
}

impl FilterResult {
    pub fn means(&self) -> Vec<Vector> {
        self.states.iter().map(|s| s.m.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn to_trajectory(&self) -> Trajectory {
        Trajectory {
            times: self.states.iter().map(|s| s.time).collect(),
            states: self.means(),
            covariances: Some(self.states.iter().map(|s| s.p.clone()).collect()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FilterForm {
    /// Mean and covariance ODEs.
    #[default]
    Covariance,
    /// `P⁻¹` and `P⁻¹m` ODEs; the same recursion as the backward Riccati pass.
    Information,
}

pub fn kalman_bucy_filter(
    model: &LinearAffineModel,
    meas: &MeasurementSeries,
    grid: &TimeGrid,
) -> Result<FilterResult> {
    kalman_bucy_filter_with(model, meas, grid, FilterForm::Covariance)
}

/// Forward Euler in t; step `k → k+1` uses the coefficients and measurement at node `k`.
pub fn kalman_bucy_filter_with(
    model: &LinearAffineModel,
    meas: &MeasurementSeries,
    grid: &TimeGrid,
    form: FilterForm,
) -> Result<FilterResult> {
    if meas.len() != grid.len() {
        return Err(Error::parameter(format!(
            "measurement series has {} values, grid has {} nodes",
            meas.len(),
            grid.len()
        )));
    }
    match form {
        FilterForm::Covariance => covariance_filter(model, meas, grid),
        FilterForm::Information => information_filter(model, meas, grid),
    }
}

fn covariance_filter(model: &LinearAffineModel, meas: &MeasurementSeries, grid: &TimeGrid) -> Result<FilterResult> {
    let dt = grid.step();
    let mut m = model.m0.clone();
    let mut p = model.p0.clone();
    let mut states = Vec::with_capacity(grid.len());
    states.push(GaussianState {
        m: m.clone(),
        p: p.clone(),
        time: grid.time(0),
    });
    for k in 0..grid.steps() {
        let t = grid.time(k);
        let f = model.f(k, t);
        let h = model.h(k, t);
        let r = model.obs_noise(k, t);
        let rinv_h = linalg::spd_solve(&r, &h).ok_or_else(|| Error::numeric(k, "R is not positive definite"))?;
        let innov = &meas.values[k] - h.as_ref() * &m - model.r(k, t).as_ref();
        let gain = &p * rinv_h.transpose();
        let dm = f.as_ref() * &m + model.c(k, t).as_ref() + &gain * innov;
        let fp = f.as_ref() * &p;
        let dp = &fp + fp.transpose() + model.q(k, t) - &gain * h.as_ref() * &p;
        m += dm * dt;
        p = linalg::symmetrized(&p + dp * dt);
        if !linalg::is_finite_vec(&m) || p.clone().cholesky().is_none() {
            return Err(Error::numeric(k + 1, "filter covariance lost positive definiteness"));
        }
        states.push(GaussianState {
            m: m.clone(),
            p: p.clone(),
            time: grid.time(k + 1),
        });
    }
    Ok(FilterResult { states })
}

fn information_filter(model: &LinearAffineModel, meas: &MeasurementSeries, grid: &TimeGrid) -> Result<FilterResult> {
    let dt = grid.step();
    let mut y = linalg::spd_inverse(&model.p0).ok_or_else(|| Error::numeric(0, "P0 is not positive definite"))?;
    let mut z = &y * &model.m0;
    let mut states = Vec::with_capacity(grid.len());
    states.push(GaussianState {
        m: model.m0.clone(),
        p: model.p0.clone(),
        time: grid.time(0),
    });
    for k in 0..grid.steps() {
        let t = grid.time(k);
        let f = model.f(k, t);
        let h = model.h(k, t);
        let r = model.obs_noise(k, t);
        let rinv_h = linalg::spd_solve(&r, &h).ok_or_else(|| Error::numeric(k, "R is not positive definite"))?;
        let info = linalg::symmetrized(h.transpose() * &rinv_h);
        let info_vec = rinv_h.transpose() * (&meas.values[k] - model.r(k, t).as_ref());
        let yq = &y * model.q(k, t);
        let yf = &y * f.as_ref();
        let dy = -(&yq * &y) - &yf - yf.transpose() + info;
        let dz = -(&yq * &z) - f.transpose() * &z + &y * model.c(k, t).as_ref() + info_vec;
        y = linalg::symmetrized(&y + dy * dt);
        z += dz * dt;
        let chol = y
            .clone()
            .cholesky()
            .ok_or_else(|| Error::numeric(k + 1, "filter information lost positive definiteness"))?;
        states.push(GaussianState {
            m: chol.solve(&z),
            p: linalg::symmetrized(chol.inverse()),
            time: grid.time(k + 1),
        });
    }
    Ok(FilterResult { states })
}

/// Backward Euler sweep in τ from `S(τ_f) = P0⁻¹`, `v(τ_f) = P0⁻¹m0`; entry `j`
/// belongs to τ-node `j`. Step `j+1 → j` uses the coefficients at node `j+1`.
pub fn riccati_backward_seq(problem: &ReversedControlProblem) -> Result<Vec<ValueFunction>> {
    let grid = problem.grid();
    let n = grid.steps();
    let dt = problem.step();
    let (m0, p0) = problem.prior();
    let s_f = linalg::spd_inverse(p0).ok_or_else(|| Error::numeric(n, "P0 is not positive definite"))?;
    let v_f = &s_f * m0;
    let mut out = vec![
        ValueFunction {
            s: s_f,
            v: v_f,
            time: grid.time(n),
        };
        1
    ];
    for j in (0..n).rev() {
        let cur = out.last().expect("seeded");
        let node = j + 1;
        let f = problem.f(node);
        let sq = &cur.s * problem.q(node);
        let sf = &cur.s * f;
        let ds = &sq * &cur.s - &sf - sf.transpose() - problem.info_matrix(node);
        let dv = &sq * &cur.v - f.transpose() * &cur.v + &cur.s * problem.c(node) - problem.info_vector(node);
        let s = linalg::symmetrized(&cur.s - ds * dt);
        let v = &cur.v - dv * dt;
        if !linalg::is_finite(&s) || !linalg::is_finite_vec(&v) {
            return Err(Error::numeric(j, "non-finite value function"));
        }
        if s.diagonal().iter().any(|&d| d < 0.0) {
            return Err(Error::numeric(
                j,
                "S lost positive semidefiniteness; the Euler step is too large for dt·|S·Q|, refine the grid",
            ));
        }
        out.push(ValueFunction {
            s,
            v,
            time: grid.time(j),
        });
    }
    out.reverse();
    Ok(out)
}

/// Backward Euler in t of `ẋ = F x + c + Q P⁻¹(x − m)` from `x(tf) = m(tf)`;
/// step `k+1 → k` uses the coefficients and filter marginal at node `k+1`.
pub fn rts_smoother_seq(model: &LinearAffineModel, filter: &FilterResult, grid: &TimeGrid) -> Result<Trajectory> {
    if filter.len() != grid.len() {
        return Err(Error::parameter("filter result does not match the grid"));
    }
    let dt = grid.step();
    let n = grid.steps();
    let mut states = vec![Vector::zeros(0); n + 1];
    states[n] = filter.states[n].m.clone();
    for k in (0..n).rev() {
        let node = k + 1;
        let t = grid.time(node);
        let x = &states[node];
        let marg = &filter.states[node];
        let pull = linalg::spd_solve_vec(&marg.p, &(x - &marg.m))
            .ok_or_else(|| Error::numeric(node, "filter covariance is singular"))?;
        let dx = model.f(node, t).as_ref() * x + model.c(node, t).as_ref() + model.q(node, t) * pull;
        let next = x - dx * dt;
        if !linalg::is_finite_vec(&next) {
            return Err(Error::numeric(k, "non-finite smoother state"));
        }
        states[k] = next;
    }
    Trajectory::on_grid(grid, states)
}

/// `φ = (I + C̄S)⁻¹(b̄ + C̄v)` with an unsymmetric LU; returns the state and the
/// 1-norm condition estimate of `I + C̄S`.
pub(crate) fn fuse(cbar: &Matrix, bbar: &Vector, value: &ValueFunction, node: usize) -> Result<(Vector, f64)> {
    let n = bbar.len();
    let m = Matrix::identity(n, n) + cbar * &value.s;
    let cond = linalg::condition_estimate(&m);
    let phi = m
        .lu()
        .solve(&(bbar + cbar * &value.v))
        .ok_or_else(|| Error::numeric(node, "two-filter combination I + C̄S is singular"))?;
    Ok((phi, cond))
}

/// `φ = (Λ + S)⁻¹(λ + v)` for nodes inside the first block.
pub(crate) fn fuse_information(lam: &Matrix, l: &Vector, value: &ValueFunction, node: usize) -> Result<Vector> {
    linalg::spd_solve_vec(&(lam + &value.s), &(l + &value.v))
        .ok_or_else(|| Error::numeric(node, "combined information is singular"))
}

/// Summarizes per-node condition estimates into at most one warning.
pub(crate) fn condition_warning(conds: &[(usize, f64)], grid: &TimeGrid) -> Option<String> {
    let bad: Vec<&(usize, f64)> = conds.iter().filter(|(_, c)| *c > FUSION_CONDITION_LIMIT).collect();
    let worst = bad.iter().max_by(|a, b| a.1.total_cmp(&b.1))?;
    Some(format!(
        "two-filter combination ill-conditioned at {} node(s); worst condition estimate {:.3e} at t = {}",
        bad.len(),
        worst.1,
        grid.tf() - grid.reversed_axis().time(worst.0)
    ))
}

/// Two-filter smoother with sequential passes: the backward Riccati sweep and
/// a forward refinement from the first block's minimized element.
pub fn two_filter_seq(problem: &ReversedControlProblem) -> Result<Trajectory> {
    two_filter_seq_with_warnings(problem).map(|(traj, _)| traj)
}

pub fn two_filter_seq_with_warnings(problem: &ReversedControlProblem) -> Result<(Trajectory, Vec<String>)> {
    let grid = problem.grid();
    let n = grid.steps();
    let sub = grid.substeps();
    let values = riccati_backward_seq(problem)?;

    let a0: ConditionalElement = init_element(problem, 0, sub, Integrator::Euler)?;
    let abar = make_abar0(&a0)?;
    let forward = forward_refine_path(&abar, problem, sub, n)?;
    let info = forward_information(problem, 0, sub)?;

    let mut states = Vec::with_capacity(n + 1);
    states.push(value_minimizer(&values[0])?);
    for (m, (lam, l)) in info.iter().enumerate().take(sub).skip(1) {
        states.push(fuse_information(lam, l, &values[m], m)?);
    }
    let mut conds = Vec::with_capacity(n + 1 - sub);
    for (offset, e) in forward.iter().enumerate() {
        let node = sub + offset;
        let (phi, cond) = fuse(&e.c, &e.b, &values[node], node)?;
        conds.push((node, cond));
        states.push(phi);
    }
    let tau = Trajectory::on_grid(grid, states)?;
    let warnings = condition_warning(&conds, grid).into_iter().collect();
    Ok((reverse_trajectory(&tau, problem.time_grid()), warnings))
}

/// Filter marginals from a τ-indexed list of value functions, in t order.
pub fn values_to_filter(values: &[ValueFunction], grid: &TimeGrid) -> Result<FilterResult> {
    use rayon::prelude::*;
    let mut states = values
        .par_iter()
        .map(|v| crate::element::value_to_gaussian(v, grid.tf()))
        .collect::<Result<Vec<_>>>()?;
    states.reverse();
    for (k, s) in states.iter_mut().enumerate() {
        s.time = grid.time(k);
    }
    Ok(FilterResult { states })
}

/// Smoother output of [`rts_smoother_seq`] after a covariance-form filter.
pub fn sequential_rts_map(model: &LinearAffineModel, meas: &MeasurementSeries, grid: &TimeGrid) -> Result<Trajectory> {
    let filter = kalman_bucy_filter(model, meas, grid)?;
    rts_smoother_seq(model, &filter, grid)
}
