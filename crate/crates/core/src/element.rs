//! Conditional value function algebra for the linear-affine problem.
//!
//! An element `(A, b, C, η, J)` over `[s, γ]` describes the cost of moving
//! from `φ` at `s` to `z` at `γ`. Elements compose associatively; the
//! zero-span element `(I, 0, 0, 0, 0)` is neutral.

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};
use crate::om::ReversedControlProblem;

/// Relative tolerance for matching span endpoints in [`combine`].
pub const SPAN_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalElement {
    pub a: Matrix,
    pub b: Vector,
    pub c: Matrix,
    pub eta: Vector,
    pub j: Matrix,
    /// `(s, γ)` on the τ-axis.
    pub span: (f64, f64),
}

impl ConditionalElement {
    /// The neutral zero-span element at `at`.
    pub fn identity(dim: usize, at: f64) -> Self {
        Self {
            a: Matrix::identity(dim, dim),
            b: Vector::zeros(dim),
            c: Matrix::zeros(dim, dim),
            eta: Vector::zeros(dim),
            j: Matrix::zeros(dim, dim),
            span: (at, at),
        }
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn is_finite(&self) -> bool {
        linalg::is_finite(&self.a)
            && linalg::is_finite_vec(&self.b)
            && linalg::is_finite(&self.c)
            && linalg::is_finite_vec(&self.eta)
            && linalg::is_finite(&self.j)
    }

    fn symmetrize(&mut self) {
        linalg::symmetrize(&mut self.c);
        linalg::symmetrize(&mut self.j);
    }
}

/// Quadratic value function `½ φᵀSφ − vᵀφ + const` at τ.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueFunction {
    pub s: Matrix,
    pub v: Vector,
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianState {
    pub m: Vector,
    pub p: Matrix,
    pub time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Integrator {
    #[default]
    Euler,
    /// Classical fourth-order Runge–Kutta with the coefficients held at the
    /// node sample over each substep.
    Rk4,
}

fn spans_meet(end: f64, start: f64) -> bool {
    (end - start).abs() <= SPAN_TOL * end.abs().max(start.abs()).max(1.0)
}

/// `e1 ⊗ e2` for `e1` over `[s, τ]` and `e2` over `[τ, γ]`.
pub fn combine(e1: &ConditionalElement, e2: &ConditionalElement) -> Result<ConditionalElement> {
    if !spans_meet(e1.span.1, e2.span.0) {
        return Err(Error::parameter(format!(
            "cannot combine element ending at {} with element starting at {}",
            e1.span.1, e2.span.0
        )));
    }
    let n = e1.dim();
    let m = Matrix::identity(n, n) + &e1.c * &e2.j;
    let mut rhs = Matrix::zeros(n, 2 * n + 1);
    rhs.columns_mut(0, n).copy_from(&e1.a);
    rhs.set_column(n, &(&e1.b + &e1.c * &e2.eta));
    rhs.columns_mut(n + 1, n).copy_from(&e1.c);
    let x = m.lu().solve(&rhs).ok_or_else(|| {
        Error::Singular(format!("I + C₁J₂ over [{}, {}]", e1.span.0, e2.span.1))
    })?;
    let x_a = x.columns(0, n);
    let x_b = x.column(n);
    let x_c = x.columns(n + 1, n);

    let mut out = ConditionalElement {
        a: &e2.a * x_a,
        b: &e2.a * x_b + &e2.b,
        c: &e2.a * x_c * e2.a.transpose() + &e2.c,
        eta: x_a.transpose() * (&e2.eta - &e2.j * &e1.b) + &e1.eta,
        j: x_a.transpose() * &e2.j * &e1.a + &e1.j,
        span: (e1.span.0, e2.span.1),
    };
    out.symmetrize();
    if !out.is_finite() {
        return Err(Error::Singular(format!(
            "non-finite combination over [{}, {}]",
            out.span.0, out.span.1
        )));
    }
    Ok(out)
}

/// Embeds the terminal value function `S = P0⁻¹`, `v = P0⁻¹m0` at `τ_f`.
pub fn terminal_element(m0: &Vector, p0: &Matrix, tau_f: f64) -> Result<ConditionalElement> {
    let n = m0.len();
    let j = linalg::spd_inverse(p0).ok_or_else(|| Error::Singular("P0 is not positive definite".into()))?;
    let eta = &j * m0;
    Ok(ConditionalElement {
        a: Matrix::zeros(n, n),
        b: Vector::zeros(n),
        c: Matrix::zeros(n, n),
        eta,
        j,
        span: (tau_f, tau_f),
    })
}

/// Reads `(S, v)` off a suffix that ends at the terminal element.
pub fn extract_value_function(e: &ConditionalElement) -> ValueFunction {
    ValueFunction {
        s: e.j.clone(),
        v: e.eta.clone(),
        time: e.span.0,
    }
}

/// `P = S⁻¹`, `m = S⁻¹v` at `t = tf − τ`.
pub fn value_to_gaussian(value: &ValueFunction, tf: f64) -> Result<GaussianState> {
    if linalg::is_numerically_singular(&value.s) {
        return Err(Error::Uninformative(format!(
            "information matrix S is singular at τ = {}",
            value.time
        )));
    }
    let chol = value
        .s
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Uninformative(format!("S is not positive definite at τ = {}", value.time)))?;
    Ok(GaussianState {
        m: chol.solve(&value.v),
        p: linalg::symmetrized(chol.inverse()),
        time: tf - value.time,
    })
}

/// The minimizer `S⁻¹v` of a quadratic value function.
pub fn value_minimizer(value: &ValueFunction) -> Result<Vector> {
    if linalg::is_numerically_singular(&value.s) {
        return Err(Error::Uninformative(format!(
            "information matrix S is singular at τ = {}",
            value.time
        )));
    }
    linalg::spd_solve_vec(&value.s, &value.v)
        .ok_or_else(|| Error::Uninformative(format!("S is not positive definite at τ = {}", value.time)))
}

/// The first element with its start state minimized out: a constant
/// conditional value function of the end state, `b̄ = A₀J₀⁻¹η₀ + b₀`,
/// `C̄ = A₀J₀⁻¹A₀ᵀ + C₀`.
pub fn make_abar0(a0: &ConditionalElement) -> Result<ConditionalElement> {
    if linalg::is_numerically_singular(&a0.j) {
        return Err(Error::Uninformative(format!(
            "the first block [{}, {}] carries no invertible information; widen the first block \
             or use a measurement model that observes the full state over it",
            a0.span.0, a0.span.1
        )));
    }
    let n = a0.dim();
    let chol = a0
        .j
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Uninformative("J of the first block is not positive definite".into()))?;
    let mut out = ConditionalElement {
        a: Matrix::zeros(n, n),
        b: &a0.a * chol.solve(&a0.eta) + &a0.b,
        c: &a0.a * chol.solve(&a0.a.transpose()) + &a0.c,
        eta: a0.eta.clone(),
        j: a0.j.clone(),
        span: a0.span,
    };
    out.symmetrize();
    Ok(out)
}

struct Rates {
    a: Matrix,
    b: Vector,
    c: Matrix,
    eta: Vector,
    j: Matrix,
}

/// `∂/∂s` of the element parameters at the start `s`, with coefficients
/// sampled at τ-node `node`.
fn backward_rates(e: &ConditionalElement, p: &ReversedControlProblem, node: usize) -> Rates {
    let f = p.f(node);
    let q = p.q(node);
    let aq = &e.a * q;
    let jq = &e.j * q;
    let jf = &e.j * f;
    Rates {
        a: &aq * &e.j - &e.a * f,
        b: -(&aq * &e.eta) - &e.a * p.c(node),
        c: -(&aq * e.a.transpose()),
        eta: &jq * &e.eta - f.transpose() * &e.eta - p.info_vector(node) + &e.j * p.c(node),
        j: &jq * &e.j - &jf - jf.transpose() - p.info_matrix(node),
    }
}

fn advance(e: &ConditionalElement, r: &Rates, h: f64) -> ConditionalElement {
    let mut out = ConditionalElement {
        a: &e.a + &r.a * h,
        b: &e.b + &r.b * h,
        c: &e.c + &r.c * h,
        eta: &e.eta + &r.eta * h,
        j: &e.j + &r.j * h,
        span: e.span,
    };
    out.symmetrize();
    out
}

fn backward_step(
    e: &ConditionalElement,
    p: &ReversedControlProblem,
    node: usize,
    dt: f64,
    integrator: Integrator,
) -> ConditionalElement {
    let h = -dt;
    let mut out = match integrator {
        Integrator::Euler => advance(e, &backward_rates(e, p, node), h),
        Integrator::Rk4 => {
            let k1 = backward_rates(e, p, node);
            let k2 = backward_rates(&advance(e, &k1, 0.5 * h), p, node);
            let k3 = backward_rates(&advance(e, &k2, 0.5 * h), p, node);
            let k4 = backward_rates(&advance(e, &k3, h), p, node);
            let mut out = e.clone();
            out.a += (k1.a + 2.0 * k2.a + 2.0 * k3.a + k4.a) * (h / 6.0);
            out.b += (k1.b + 2.0 * k2.b + 2.0 * k3.b + k4.b) * (h / 6.0);
            out.c += (k1.c + 2.0 * k2.c + 2.0 * k3.c + k4.c) * (h / 6.0);
            out.eta += (k1.eta + 2.0 * k2.eta + 2.0 * k3.eta + k4.eta) * (h / 6.0);
            out.j += (k1.j + 2.0 * k2.j + 2.0 * k3.j + k4.j) * (h / 6.0);
            out.symmetrize();
            out
        }
    };
    out.span.0 = p.grid().time(node - 1);
    out
}

/// Integrates the element ODEs backward over τ-nodes `first..=last`.
///
/// Step `j+1 → j` uses the coefficients at node `j+1`.
pub fn init_element(
    problem: &ReversedControlProblem,
    first: usize,
    last: usize,
    integrator: Integrator,
) -> Result<ConditionalElement> {
    check_nodes(problem, first, last)?;
    let dt = problem.step();
    let mut e = ConditionalElement::identity(problem.state_dim(), problem.grid().time(last));
    for node in (first + 1..=last).rev() {
        e = backward_step(&e, problem, node, dt, integrator);
        if !e.is_finite() {
            return Err(Error::numeric(node - 1, "non-finite element parameters"));
        }
    }
    Ok(e)
}

/// Like [`init_element`] but keeps every intermediate element: entry `m` spans
/// `[τ_{first+m}, τ_last]`, so entry 0 is the block element and the last entry
/// is the identity at `τ_last`.
pub fn init_element_substeps(
    problem: &ReversedControlProblem,
    first: usize,
    last: usize,
    integrator: Integrator,
) -> Result<Vec<ConditionalElement>> {
    check_nodes(problem, first, last)?;
    let dt = problem.step();
    let mut out = Vec::with_capacity(last - first + 1);
    out.push(ConditionalElement::identity(problem.state_dim(), problem.grid().time(last)));
    for node in (first + 1..=last).rev() {
        let e = backward_step(out.last().expect("seeded"), problem, node, dt, integrator);
        if !e.is_finite() {
            return Err(Error::numeric(node - 1, "non-finite element parameters"));
        }
        out.push(e);
    }
    out.reverse();
    Ok(out)
}

fn check_nodes(problem: &ReversedControlProblem, first: usize, last: usize) -> Result<()> {
    if first > last || last > problem.grid().steps() {
        return Err(Error::parameter(format!(
            "node range {first}..={last} is not within the grid"
        )));
    }
    Ok(())
}

/// Advances `A, b, C` from the anchor's end node to `target`, returning one
/// element per node (the anchor first). Each fine step combines the running
/// element with the one-step Euler element, which solves the forward equations
/// to first order without the explicit-step instability when `C` is large.
/// `η` and `J` are carried unchanged.
pub fn forward_refine_path(
    anchor: &ConditionalElement,
    problem: &ReversedControlProblem,
    start: usize,
    target: usize,
) -> Result<Vec<ConditionalElement>> {
    check_nodes(problem, start, target)?;
    let grid = problem.grid();
    if !spans_meet(anchor.span.1, grid.time(start)) {
        return Err(Error::parameter(format!(
            "anchor ends at {} but refinement starts at {}",
            anchor.span.1,
            grid.time(start)
        )));
    }
    let mut out = Vec::with_capacity(target - start + 1);
    out.push(anchor.clone());
    for node in start..target {
        let e = out.last().expect("seeded");
        let step = init_element(problem, node, node + 1, Integrator::Euler)?;
        let joined = combine(e, &step)?;
        let mut next = e.clone();
        next.a = joined.a;
        next.b = joined.b;
        next.c = joined.c;
        next.span.1 = joined.span.1;
        if !next.is_finite() {
            return Err(Error::numeric(node + 1, "non-finite forward refinement"));
        }
        out.push(next);
    }
    Ok(out)
}

pub fn forward_refine(
    anchor: &ConditionalElement,
    problem: &ReversedControlProblem,
    start: usize,
    target: usize,
) -> Result<ConditionalElement> {
    Ok(forward_refine_path(anchor, problem, start, target)?
        .pop()
        .expect("path holds the anchor"))
}

/// Forward information filter `(Λ, λ)` on the τ-axis started from zero
/// information at node `first`; entry `m` belongs to node `first + m`.
pub fn forward_information(
    problem: &ReversedControlProblem,
    first: usize,
    last: usize,
) -> Result<Vec<(Matrix, Vector)>> {
    check_nodes(problem, first, last)?;
    let n = problem.state_dim();
    let dt = problem.step();
    let mut out = Vec::with_capacity(last - first + 1);
    out.push((Matrix::zeros(n, n), Vector::zeros(n)));
    for node in first..last {
        let (lam, l) = out.last().expect("seeded");
        let s = node + 1;
        let f = problem.f(s);
        let lq = lam * problem.q(s);
        let lf = lam * f;
        let d_lam = problem.info_matrix(s) - &lq * lam - &lf - lf.transpose();
        let d_l = problem.info_vector(s) - &lq * l - f.transpose() * l + lam * problem.c(s);
        let next_lam = linalg::symmetrized(lam + d_lam * dt);
        let next_l = l + d_l * dt;
        if !linalg::is_finite(&next_lam) || !linalg::is_finite_vec(&next_l) {
            return Err(Error::numeric(s, "non-finite forward information"));
        }
        out.push((next_lam, next_l));
    }
    Ok(out)
}
