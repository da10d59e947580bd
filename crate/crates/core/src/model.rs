//! State-space models, time grids, measurements and trajectories.

use std::borrow::Cow;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector, SINGULAR_FLOOR};

/// Uniform grid of `blocks · substeps + 1` nodes on `[t0, tf]`.
///
/// Block `k` starts at node `k · substeps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    t0: f64,
    tf: f64,
    blocks: usize,
    substeps: usize,
    step: f64,
}

pub fn build_time_grid(t0: f64, tf: f64, blocks: usize, substeps: usize) -> Result<TimeGrid> {
    TimeGrid::new(t0, tf, blocks, substeps)
}

impl TimeGrid {
    pub fn new(t0: f64, tf: f64, blocks: usize, substeps: usize) -> Result<Self> {
        if !(t0.is_finite() && tf.is_finite() && tf > t0) {
            return Err(Error::parameter(format!("time span [{t0}, {tf}] is empty or not finite")));
        }
        if blocks == 0 || substeps == 0 {
            return Err(Error::parameter(format!(
                "grid needs at least one block and one substep (got T={blocks}, n={substeps})"
            )));
        }
        let step = (tf - t0) / (blocks * substeps) as f64;
        Ok(Self {
            t0,
            tf,
            blocks,
            substeps,
            step,
        })
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn tf(&self) -> f64 {
        self.tf
    }

    pub fn blocks(&self) -> usize {
        self.blocks
    }

    pub fn substeps(&self) -> usize {
        self.substeps
    }

    /// Node spacing Δ.
    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn span(&self) -> f64 {
        self.tf - self.t0
    }

    /// Number of Euler steps, `T · n`.
    pub fn steps(&self) -> usize {
        self.blocks * self.substeps
    }

    /// Number of nodes, `T · n + 1`.
    pub fn len(&self) -> usize {
        self.steps() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Time of node `k`, computed as `t0 + k·Δ` (the last node is `tf` exactly).
    pub fn time(&self, k: usize) -> f64 {
        if k == self.steps() {
            self.tf
        } else {
            self.t0 + k as f64 * self.step
        }
    }

    pub fn node_times(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.time(k)).collect()
    }

    pub fn block_start(&self, block: usize) -> usize {
        block * self.substeps
    }

    /// Node indices of the block boundaries `0, n, 2n, …, T·n`.
    pub fn boundary_nodes(&self) -> Vec<usize> {
        (0..=self.blocks).map(|b| self.block_start(b)).collect()
    }

    /// The same grid shifted to start at zero: the axis of the reversed problem.
    pub fn reversed_axis(&self) -> TimeGrid {
        TimeGrid {
            t0: 0.0,
            tf: self.span(),
            ..*self
        }
    }
}

/// A time-varying quantity evaluated at grid nodes.
#[derive(Clone)]
pub enum TimeFn<T> {
    Constant(T),
    /// One value per grid node, held constant between nodes.
    PerNode(Arc<Vec<T>>),
    Function(Arc<dyn Fn(f64) -> T + Send + Sync>),
}

impl<T: Clone> TimeFn<T> {
    pub fn at(&self, node: usize, t: f64) -> Cow<'_, T> {
        match self {
            TimeFn::Constant(v) => Cow::Borrowed(v),
            TimeFn::PerNode(values) => Cow::Borrowed(&values[node.min(values.len() - 1)]),
            TimeFn::Function(f) => Cow::Owned(f(t)),
        }
    }

    pub fn function(f: impl Fn(f64) -> T + Send + Sync + 'static) -> Self {
        TimeFn::Function(Arc::new(f))
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, TimeFn::Constant(_))
    }
}

impl<T> From<T> for TimeFn<T> {
    fn from(v: T) -> Self {
        TimeFn::Constant(v)
    }
}

impl<T: fmt::Debug> fmt::Debug for TimeFn<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TimeFn::Constant(v) => f.debug_tuple("Constant").field(v).finish(),
            TimeFn::PerNode(v) => write!(f, "PerNode({} values)", v.len()),
            TimeFn::Function(_) => f.write_str("Function(..)"),
        }
    }
}

/// Common interface of linear-affine and nonlinear models.
///
/// Implementations must be pure: every method may be called concurrently.
pub trait StateSpaceModel: Sync {
    fn state_dim(&self) -> usize;
    fn obs_dim(&self) -> usize;

    fn drift(&self, x: &Vector, node: usize, t: f64) -> Vector;
    fn drift_jacobian(&self, x: &Vector, node: usize, t: f64) -> Result<Matrix>;
    /// Divergence `∇·f`.
    fn divergence(&self, x: &Vector, node: usize, t: f64) -> Result<f64>;

    fn measurement(&self, x: &Vector, node: usize, t: f64) -> Vector;
    fn measurement_jacobian(&self, x: &Vector, node: usize, t: f64) -> Result<Matrix>;

    /// Noise gain `L(t)`.
    fn noise_gain(&self, node: usize, t: f64) -> Matrix;
    /// Process noise spectral density `W(t)`.
    fn noise_density(&self, node: usize, t: f64) -> Matrix;
    /// Measurement noise spectral density `R(t)`.
    fn obs_density(&self, node: usize, t: f64) -> Matrix;

    fn prior_mean(&self) -> &Vector;
    fn prior_cov(&self) -> &Matrix;

    /// `Q(t) = L(t) W(t) L(t)ᵀ`.
    fn diffusion(&self, node: usize, t: f64) -> Matrix {
        let l = self.noise_gain(node, t);
        linalg::symmetrized(&l * self.noise_density(node, t) * l.transpose())
    }

    /// Whether drift Jacobian and divergence are supplied analytically.
    fn has_analytic_derivatives(&self) -> bool {
        true
    }
}

/// `dx = (F x + c) dt + L dβ`, `y = H x + r + ν`, `x(t0) ~ N(m0, P0)`.
#[derive(Clone, Debug)]
pub struct LinearAffineModel {
    pub drift: TimeFn<Matrix>,
    pub drift_offset: TimeFn<Vector>,
    pub noise_gain: TimeFn<Matrix>,
    pub noise_density: TimeFn<Matrix>,
    pub obs: TimeFn<Matrix>,
    pub obs_offset: TimeFn<Vector>,
    pub obs_density: TimeFn<Matrix>,
    pub m0: Vector,
    pub p0: Matrix,
}

impl LinearAffineModel {
    /// Time-invariant model with zero offsets.
    pub fn time_invariant(
        f: Matrix,
        l: Matrix,
        w: Matrix,
        h: Matrix,
        r: Matrix,
        m0: Vector,
        p0: Matrix,
    ) -> Self {
        let nx = f.nrows();
        let ny = h.nrows();
        Self {
            drift: f.into(),
            drift_offset: Vector::zeros(nx).into(),
            noise_gain: l.into(),
            noise_density: w.into(),
            obs: h.into(),
            obs_offset: Vector::zeros(ny).into(),
            obs_density: r.into(),
            m0,
            p0,
        }
    }

    pub fn f(&self, node: usize, t: f64) -> Cow<'_, Matrix> {
        self.drift.at(node, t)
    }

    pub fn c(&self, node: usize, t: f64) -> Cow<'_, Vector> {
        self.drift_offset.at(node, t)
    }

    pub fn h(&self, node: usize, t: f64) -> Cow<'_, Matrix> {
        self.obs.at(node, t)
    }

    pub fn r(&self, node: usize, t: f64) -> Cow<'_, Vector> {
        self.obs_offset.at(node, t)
    }

    pub fn q(&self, node: usize, t: f64) -> Matrix {
        self.diffusion(node, t)
    }

    pub fn obs_noise(&self, node: usize, t: f64) -> Cow<'_, Matrix> {
        self.obs_density.at(node, t)
    }

    /// True when every coefficient is a [`TimeFn::Constant`].
    pub fn is_time_invariant(&self) -> bool {
        self.drift.is_constant()
            && self.drift_offset.is_constant()
            && self.noise_gain.is_constant()
            && self.noise_density.is_constant()
            && self.obs.is_constant()
            && self.obs_offset.is_constant()
            && self.obs_density.is_constant()
    }
}

impl StateSpaceModel for LinearAffineModel {
    fn state_dim(&self) -> usize {
        self.m0.len()
    }

    fn obs_dim(&self) -> usize {
        self.obs.at(0, 0.0).nrows()
    }

    fn drift(&self, x: &Vector, node: usize, t: f64) -> Vector {
        self.f(node, t).as_ref() * x + self.c(node, t).as_ref()
    }

    fn drift_jacobian(&self, _x: &Vector, node: usize, t: f64) -> Result<Matrix> {
        Ok(self.f(node, t).into_owned())
    }

    fn divergence(&self, _x: &Vector, node: usize, t: f64) -> Result<f64> {
        Ok(self.f(node, t).trace())
    }

    fn measurement(&self, x: &Vector, node: usize, t: f64) -> Vector {
        self.h(node, t).as_ref() * x + self.r(node, t).as_ref()
    }

    fn measurement_jacobian(&self, _x: &Vector, node: usize, t: f64) -> Result<Matrix> {
        Ok(self.h(node, t).into_owned())
    }

    fn noise_gain(&self, node: usize, t: f64) -> Matrix {
        self.noise_gain.at(node, t).into_owned()
    }

    fn noise_density(&self, node: usize, t: f64) -> Matrix {
        self.noise_density.at(node, t).into_owned()
    }

    fn obs_density(&self, node: usize, t: f64) -> Matrix {
        self.obs_density.at(node, t).into_owned()
    }

    fn prior_mean(&self) -> &Vector {
        &self.m0
    }

    fn prior_cov(&self) -> &Matrix {
        &self.p0
    }
}

pub type VectorFn = Arc<dyn Fn(&Vector, f64) -> Vector + Send + Sync>;
pub type MatrixFn = Arc<dyn Fn(&Vector, f64) -> Matrix + Send + Sync>;
pub type ScalarFn = Arc<dyn Fn(&Vector, f64) -> f64 + Send + Sync>;

/// `dx = f(x, t) dt + L dβ`, `y = h(x, t) + ν`, `x(t0) ~ N(m0, P0)`.
///
/// Missing Jacobians fall back to central differences; a missing divergence
/// falls back to the trace of the drift Jacobian.
#[derive(Clone)]
pub struct NonlinearModel {
    pub drift: VectorFn,
    pub drift_jacobian: Option<MatrixFn>,
    pub divergence: Option<ScalarFn>,
    pub measurement: VectorFn,
    pub measurement_jacobian: Option<MatrixFn>,
    pub noise_gain: TimeFn<Matrix>,
    pub noise_density: TimeFn<Matrix>,
    pub obs_density: TimeFn<Matrix>,
    pub m0: Vector,
    pub p0: Matrix,
    pub obs_dim: usize,
}

impl fmt::Debug for NonlinearModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NonlinearModel")
            .field("state_dim", &self.m0.len())
            .field("obs_dim", &self.obs_dim)
            .field("analytic_drift_jacobian", &self.drift_jacobian.is_some())
            .field("analytic_divergence", &self.divergence.is_some())
            .field("analytic_measurement_jacobian", &self.measurement_jacobian.is_some())
            .finish()
    }
}

impl NonlinearModel {
    /// Model with drift and measurement only; derivatives by finite differences.
    pub fn new(
        drift: impl Fn(&Vector, f64) -> Vector + Send + Sync + 'static,
        measurement: impl Fn(&Vector, f64) -> Vector + Send + Sync + 'static,
        l: Matrix,
        w: Matrix,
        r: Matrix,
        m0: Vector,
        p0: Matrix,
    ) -> Self {
        let obs_dim = r.nrows();
        Self {
            drift: Arc::new(drift),
            drift_jacobian: None,
            divergence: None,
            measurement: Arc::new(measurement),
            measurement_jacobian: None,
            noise_gain: l.into(),
            noise_density: w.into(),
            obs_density: r.into(),
            m0,
            p0,
            obs_dim,
        }
    }

    pub fn with_drift_jacobian(mut self, jac: impl Fn(&Vector, f64) -> Matrix + Send + Sync + 'static) -> Self {
        self.drift_jacobian = Some(Arc::new(jac));
        self
    }

    pub fn with_divergence(mut self, div: impl Fn(&Vector, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.divergence = Some(Arc::new(div));
        self
    }

    pub fn with_measurement_jacobian(
        mut self,
        jac: impl Fn(&Vector, f64) -> Matrix + Send + Sync + 'static,
    ) -> Self {
        self.measurement_jacobian = Some(Arc::new(jac));
        self
    }
}

impl StateSpaceModel for NonlinearModel {
    fn state_dim(&self) -> usize {
        self.m0.len()
    }

    fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    fn drift(&self, x: &Vector, _node: usize, t: f64) -> Vector {
        (self.drift)(x, t)
    }

    fn drift_jacobian(&self, x: &Vector, _node: usize, t: f64) -> Result<Matrix> {
        match &self.drift_jacobian {
            Some(jac) => Ok(jac(x, t)),
            None => finite_difference_jacobian(|z, s| (self.drift)(z, s), x, t),
        }
    }

    fn divergence(&self, x: &Vector, node: usize, t: f64) -> Result<f64> {
        match &self.divergence {
            Some(div) => Ok(div(x, t)),
            None => Ok(self.drift_jacobian(x, node, t)?.trace()),
        }
    }

    fn measurement(&self, x: &Vector, _node: usize, t: f64) -> Vector {
        (self.measurement)(x, t)
    }

    fn measurement_jacobian(&self, x: &Vector, _node: usize, t: f64) -> Result<Matrix> {
        match &self.measurement_jacobian {
            Some(jac) => Ok(jac(x, t)),
            None => finite_difference_jacobian(|z, s| (self.measurement)(z, s), x, t),
        }
    }

    fn noise_gain(&self, node: usize, t: f64) -> Matrix {
        self.noise_gain.at(node, t).into_owned()
    }

    fn noise_density(&self, node: usize, t: f64) -> Matrix {
        self.noise_density.at(node, t).into_owned()
    }

    fn obs_density(&self, node: usize, t: f64) -> Matrix {
        self.obs_density.at(node, t).into_owned()
    }

    fn prior_mean(&self) -> &Vector {
        &self.m0
    }

    fn prior_cov(&self) -> &Matrix {
        &self.p0
    }

    fn has_analytic_derivatives(&self) -> bool {
        self.drift_jacobian.is_some() && self.divergence.is_some()
    }
}

/// Central-difference Jacobian with per-coordinate step `1e-6·(1+|x_i|)`.
pub fn finite_difference_jacobian<F>(f: F, x: &Vector, t: f64) -> Result<Matrix>
where
    F: Fn(&Vector, f64) -> Vector,
{
    let f0 = f(x, t);
    if !linalg::is_finite_vec(&f0) {
        return Err(Error::Evaluation(format!("non-finite function value at t={t}")));
    }
    let mut jac = Matrix::zeros(f0.len(), x.len());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let h = 1e-6 * (1.0 + x[i].abs());
        probe[i] = x[i] + h;
        let up = f(&probe, t);
        probe[i] = x[i] - h;
        let down = f(&probe, t);
        probe[i] = x[i];
        let col = (up - down) / (2.0 * h);
        if !linalg::is_finite_vec(&col) {
            return Err(Error::Evaluation(format!(
                "non-finite value while differencing coordinate {i} at t={t}"
            )));
        }
        jac.set_column(i, &col);
    }
    Ok(jac)
}

/// Measurements on the grid nodes, held constant between nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSeries {
    pub times: Vec<f64>,
    pub values: Vec<Vector>,
}

impl MeasurementSeries {
    pub fn new(grid: &TimeGrid, values: Vec<Vector>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::parameter(format!(
                "measurement series has {} values, grid has {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !linalg::is_finite_vec(v)) {
            return Err(Error::parameter(format!("measurement at node {k} is not finite")));
        }
        Ok(Self {
            times: grid.node_times(),
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vector>,
    pub covariances: Option<Vec<Matrix>>,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, states: Vec<Vector>) -> Self {
        Self {
            times,
            states,
            covariances: None,
        }
    }

    pub fn on_grid(grid: &TimeGrid, states: Vec<Vector>) -> Result<Self> {
        if states.len() != grid.len() {
            return Err(Error::parameter(format!(
                "trajectory has {} states, grid has {} nodes",
                states.len(),
                grid.len()
            )));
        }
        Ok(Self::new(grid.node_times(), states))
    }

    pub fn with_covariances(mut self, covariances: Vec<Matrix>) -> Self {
        self.covariances = Some(covariances);
        self
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Largest absolute componentwise difference between two trajectories.
    pub fn max_abs_diff(&self, other: &Trajectory) -> f64 {
        self.states
            .iter()
            .zip(&other.states)
            .map(|(a, b)| linalg::max_abs_diff_vec(a, b))
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NonFinite { what: &'static str },
    DimensionMismatch { what: &'static str, expected: usize, found: usize },
    Asymmetric { what: &'static str, amount: f64 },
    NotPositiveDefinite { what: &'static str, min_eigenvalue: f64 },
    /// `Q = L W Lᵀ` is singular on the range of `L`.
    SingularDiffusion { min_eigenvalue: f64 },
    DivergenceMismatch { divergence: f64, jacobian_trace: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelIssue {
    /// Grid node, or `None` for time-independent quantities (m0, P0).
    pub node: Option<usize>,
    pub violation: Violation,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub issues: Vec<ModelIssue>,
}

impl ValidationReport {
    pub fn is_admissible(&self) -> bool {
        self.issues.is_empty()
    }

    fn push(&mut self, node: Option<usize>, violation: Violation) {
        self.issues.push(ModelIssue { node, violation });
    }

    pub fn into_result(self) -> Result<()> {
        match self.issues.first() {
            None => Ok(()),
            Some(issue) => Err(Error::parameter(format!(
                "model is not admissible ({} issues, first at node {:?}: {:?})",
                self.issues.len(),
                issue.node,
                issue.violation
            ))),
        }
    }
}

const SYMMETRY_TOL: f64 = 1e-12;
const DIVERGENCE_TOL: f64 = 1e-8;
const DIVERGENCE_PROBES: usize = 8;

fn check_spd(report: &mut ValidationReport, node: Option<usize>, what: &'static str, m: &Matrix, dim: usize) {
    if m.nrows() != dim || m.ncols() != dim {
        report.push(
            node,
            Violation::DimensionMismatch {
                what,
                expected: dim,
                found: m.nrows(),
            },
        );
        return;
    }
    if !linalg::is_finite(m) {
        report.push(node, Violation::NonFinite { what });
        return;
    }
    let asym = linalg::asymmetry(m);
    if asym > SYMMETRY_TOL {
        report.push(node, Violation::Asymmetric { what, amount: asym });
    }
    let (min, _) = linalg::eigen_range(m);
    if min <= 0.0 {
        report.push(
            node,
            Violation::NotPositiveDefinite {
                what,
                min_eigenvalue: min,
            },
        );
    }
}

/// Checks every admissibility condition and lists the violations.
///
/// `Q(t)` may be rank deficient when `L(t)` has fewer columns than the state
/// dimension; it must however be invertible on the range of `L(t)`.
pub fn validate_model<M: StateSpaceModel + ?Sized>(model: &M, grid: &TimeGrid) -> ValidationReport {
    let mut report = ValidationReport::default();
    let nx = model.state_dim();
    let ny = model.obs_dim();

    if model.prior_mean().len() != nx || !linalg::is_finite_vec(model.prior_mean()) {
        report.push(None, Violation::NonFinite { what: "m0" });
    }
    check_spd(&mut report, None, "P0", model.prior_cov(), nx);

    for k in 0..grid.len() {
        let t = grid.time(k);
        let w = model.noise_density(k, t);
        let l = model.noise_gain(k, t);
        check_spd(&mut report, Some(k), "W", &w, l.ncols());
        check_spd(&mut report, Some(k), "R", &model.obs_density(k, t), ny);
        if l.nrows() != nx {
            report.push(
                Some(k),
                Violation::DimensionMismatch {
                    what: "L",
                    expected: nx,
                    found: l.nrows(),
                },
            );
            continue;
        }
        if w.nrows() != l.ncols() || w.ncols() != l.ncols() {
            continue;
        }
        let q = model.diffusion(k, t);
        let eig = q.clone().symmetric_eigenvalues();
        let max = eig.iter().copied().fold(0.0f64, f64::max);
        let mut sorted: Vec<f64> = eig.iter().copied().collect();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let needed = linalg::rank(&l);
        let active = sorted.get(needed.saturating_sub(1)).copied().unwrap_or(0.0);
        if needed == 0 || active <= SINGULAR_FLOOR * max.max(1.0) {
            report.push(Some(k), Violation::SingularDiffusion { min_eigenvalue: active });
        }
    }

    // divergence consistency at a few deterministic probe points
    let stride = (grid.len() / DIVERGENCE_PROBES).max(1);
    for (probe, k) in (0..grid.len()).step_by(stride).enumerate() {
        let t = grid.time(k);
        let mut x = model.prior_mean().clone();
        for (i, xi) in x.iter_mut().enumerate() {
            *xi += 0.1 * ((probe * 7 + i * 3) as f64).sin();
        }
        if let (Ok(div), Ok(jac)) = (model.divergence(&x, k, t), model.drift_jacobian(&x, k, t)) {
            let tr = jac.trace();
            if (div - tr).abs() > DIVERGENCE_TOL * (1.0 + tr.abs()) {
                report.push(
                    Some(k),
                    Violation::DivergenceMismatch {
                        divergence: div,
                        jacobian_trace: tr,
                    },
                );
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wiener() -> LinearAffineModel {
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

    #[test]
    fn grid_examples() {
        let g = build_time_grid(0.0, 5.0, 100, 10).unwrap();
        assert_eq!(g.len(), 1001);
        assert!((g.step() - 0.005).abs() < 1e-18);
        assert_eq!(g.time(1000), 5.0);

        let g = build_time_grid(0.0, 1.0, 1, 1).unwrap();
        assert_eq!(g.node_times(), vec![0.0, 1.0]);

        let g = build_time_grid(0.0, 2.0, 4, 2).unwrap();
        assert_eq!(g.len(), 9);
        assert_eq!(g.step(), 0.25);
        assert_eq!(g.boundary_nodes(), vec![0, 2, 4, 6, 8]);
        assert_eq!(g.time(3), 0.75);
    }

    #[test]
    fn grid_rejects_bad_parameters() {
        assert!(matches!(build_time_grid(1.0, 1.0, 1, 1), Err(Error::Parameter(_))));
        assert!(matches!(build_time_grid(0.0, 1.0, 0, 1), Err(Error::Parameter(_))));
        assert!(matches!(build_time_grid(0.0, 1.0, 1, 0), Err(Error::Parameter(_))));
        assert!(build_time_grid(0.0, f64::NAN, 1, 1).is_err());
    }

    #[test]
    fn node_times_are_multiplicative() {
        let g = build_time_grid(0.3, 1.7, 7, 13).unwrap();
        let times = g.node_times();
        for (k, t) in times.iter().enumerate().take(g.steps()) {
            assert_eq!(*t, 0.3 + k as f64 * g.step());
        }
        assert!(times.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(*times.last().unwrap(), 1.7);
    }

    #[test]
    fn wiener_velocity_is_admissible() {
        let g = build_time_grid(0.0, 5.0, 10, 10).unwrap();
        let report = validate_model(&wiener(), &g);
        assert!(report.is_admissible(), "{report:?}");
    }

    #[test]
    fn zero_diffusion_is_flagged_at_every_node() {
        let g = build_time_grid(0.0, 1.0, 3, 2).unwrap();
        let mut m = wiener();
        m.noise_density = Matrix::zeros(2, 2).into();
        let report = validate_model(&m, &g);
        for k in 0..g.len() {
            assert!(report
                .issues
                .iter()
                .any(|i| i.node == Some(k) && matches!(i.violation, Violation::SingularDiffusion { .. })));
        }
    }

    #[test]
    fn asymmetric_noise_is_flagged() {
        let g = build_time_grid(0.0, 1.0, 1, 2).unwrap();
        let mut m = wiener();
        let mut r = Matrix::identity(2, 2) * 1e-2;
        r[(0, 1)] = 1e-3;
        m.obs_density = r.into();
        let report = validate_model(&m, &g);
        assert!(report.issues.iter().any(|i| matches!(
            i.violation,
            Violation::Asymmetric { what: "R", .. }
        )));
        assert!(report.into_result().is_err());
    }

    #[test]
    fn bad_divergence_is_flagged() {
        let g = build_time_grid(0.0, 1.0, 2, 2).unwrap();
        let m = NonlinearModel::new(
            |x, _| x.map(|v| v * v),
            |x, _| x.clone(),
            Matrix::identity(2, 2),
            Matrix::identity(2, 2),
            Matrix::identity(2, 2),
            Vector::from_vec(vec![1.0, 2.0]),
            Matrix::identity(2, 2),
        )
        .with_divergence(|_, _| 0.0);
        let report = validate_model(&m, &g);
        assert!(report
            .issues
            .iter()
            .any(|i| matches!(i.violation, Violation::DivergenceMismatch { .. })));
    }

    #[test]
    fn finite_difference_examples() {
        let x = Vector::from_vec(vec![0.3, -1.2, 4.0]);
        let id = finite_difference_jacobian(|z, _| z.clone(), &x, 0.0).unwrap();
        assert!(linalg::max_abs_diff(&id, &Matrix::identity(3, 3)) < 1e-9);

        let m = Matrix::from_row_slice(3, 3, &[1.0, 2.0, -3.0, 0.5, 0.0, 7.0, -2.0, 1.5, 0.25]);
        let jac = finite_difference_jacobian(|z, _| &m * z, &x, 0.0).unwrap();
        assert!(linalg::max_abs_diff(&jac, &m) < 1e-8);

        let err = finite_difference_jacobian(|z, _| z.map(|v| if v > 3.9 { f64::NAN } else { v }), &x, 0.0);
        assert!(matches!(err, Err(Error::Evaluation(_))));
    }

    #[test]
    fn time_fn_variants() {
        let c: TimeFn<f64> = 2.0.into();
        assert_eq!(*c.at(5, 9.0), 2.0);
        let per = TimeFn::PerNode(Arc::new(vec![1.0, 2.0, 3.0]));
        assert_eq!(*per.at(1, 0.0), 2.0);
        let f = TimeFn::function(|t| 3.0 * t);
        assert_eq!(*f.at(0, 2.0), 6.0);
    }
}
