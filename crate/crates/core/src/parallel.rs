//! Parallel-in-time MAP estimation: a reversed scan of conditional value
//! function elements for `(S, v)`, then either a forward scan of affine
//! transition elements (RTS form) or a forward element scan fused with the
//! value functions (two-filter form).

use rayon::prelude::*;

use ctmap_scan::{try_scan_with_stats, Direction, Execution, ScanPlan, ScanStats, DEFAULT_CUTOFF};

use crate::element::{
    combine, extract_value_function, forward_information, forward_refine_path, init_element_substeps, make_abar0,
    terminal_element, value_minimizer, ConditionalElement, GaussianState, Integrator, ValueFunction, SPAN_TOL,
};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::model::{LinearAffineModel, MeasurementSeries, TimeGrid, Trajectory};
use crate::om::{reverse_problem, reverse_trajectory, ReversedControlProblem};
use crate::sequential::{condition_warning, fuse, fuse_information, values_to_filter};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SolverOptions {
    pub integrator: Integrator,
    pub execution: Execution,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            integrator: Integrator::Euler,
            execution: Execution::Parallel { cutoff: DEFAULT_CUTOFF },
        }
    }
}

impl SolverOptions {
    fn plan(&self, direction: Direction) -> ScanPlan {
        ScanPlan {
            direction,
            execution: self.execution,
        }
    }
}

/// Affine flow map `φ(γ) = Φ φ(s) + β` of the closed-loop dynamics.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionElement {
    pub phi: Matrix,
    pub beta: Vector,
    pub span: (f64, f64),
}

impl TransitionElement {
    pub fn identity(dim: usize, at: f64) -> Self {
        Self {
            phi: Matrix::identity(dim, dim),
            beta: Vector::zeros(dim),
            span: (at, at),
        }
    }

    pub fn apply(&self, x: &Vector) -> Vector {
        &self.phi * x + &self.beta
    }
}

/// `t2 ∘ t1` for `t1` over `[s, τ]` followed by `t2` over `[τ, γ]`.
pub fn combine_transitions(t1: &TransitionElement, t2: &TransitionElement) -> Result<TransitionElement> {
    let (end, start) = (t1.span.1, t2.span.0);
    if (end - start).abs() > SPAN_TOL * end.abs().max(start.abs()).max(1.0) {
        return Err(Error::parameter(format!(
            "cannot compose transition ending at {end} with one starting at {start}"
        )));
    }
    Ok(TransitionElement {
        phi: &t2.phi * &t1.phi,
        beta: &t2.phi * &t1.beta + &t2.beta,
        span: (t1.span.0, t2.span.1),
    })
}

/// Output of the reversed element scan.
#[derive(Debug, Clone)]
pub struct BackwardPass {
    /// `(S, v)` at the block boundaries `τ_0 … τ_T`.
    pub boundaries: Vec<ValueFunction>,
    /// `(S, v)` at every τ-node.
    pub nodes: Vec<ValueFunction>,
    /// The block elements `e_0 … e_{T−1}`.
    pub elements: Vec<ConditionalElement>,
    pub stats: ScanStats,
}

pub fn backward_pass_parallel(problem: &ReversedControlProblem) -> Result<Vec<ValueFunction>> {
    Ok(backward_pass(problem, &SolverOptions::default())?.boundaries)
}

/// Block elements in parallel, terminal element appended, reversed scan, then
/// node values from the cached substep elements.
pub fn backward_pass(problem: &ReversedControlProblem, opts: &SolverOptions) -> Result<BackwardPass> {
    let grid = problem.grid();
    let (blocks, sub) = (grid.blocks(), grid.substeps());
    let substeps: Vec<Vec<ConditionalElement>> = (0..blocks)
        .into_par_iter()
        .map(|i| init_element_substeps(problem, i * sub, (i + 1) * sub, opts.integrator))
        .collect::<Result<_>>()?;

    let (m0, p0) = problem.prior();
    let mut elements: Vec<ConditionalElement> = substeps.iter().map(|s| s[0].clone()).collect();
    elements.push(terminal_element(m0, p0, grid.time(grid.steps()))?);
    let (suffix, stats) = try_scan_with_stats(elements, combine, &opts.plan(Direction::Reversed))?;

    let boundaries: Vec<ValueFunction> = suffix.iter().map(extract_value_function).collect();
    let inner: Vec<Vec<ValueFunction>> = substeps
        .par_iter()
        .enumerate()
        .map(|(i, subs)| {
            let mut vals = vec![boundaries[i].clone()];
            for e in &subs[1..sub] {
                vals.push(extract_value_function(&combine(e, &suffix[i + 1])?));
            }
            Ok(vals)
        })
        .collect::<Result<_>>()?;
    let mut nodes: Vec<ValueFunction> = inner.into_iter().flatten().collect();
    nodes.push(boundaries[blocks].clone());

    let elements: Vec<ConditionalElement> = substeps.into_iter().map(|mut s| s.swap_remove(0)).collect();
    Ok(BackwardPass {
        boundaries,
        nodes,
        elements,
        stats,
    })
}

/// `φ*(τ_0) = S(τ_0)⁻¹ v(τ_0)`.
pub fn initial_state(v0: &ValueFunction) -> Result<Vector> {
    value_minimizer(v0)
}

/// Closed-loop coefficients `F̄ = F̃ − Q̃S`, `c̄ = Q̃v + c̃` at τ-node `j`.
fn closed_loop(problem: &ReversedControlProblem, value: &ValueFunction, j: usize) -> (Matrix, Vector) {
    let q = problem.q(j);
    (problem.f(j) - q * &value.s, q * &value.v + problem.c(j))
}

/// One transition element per block, by Euler steps that use the node at the
/// left end of each substep.
pub fn transition_elements(problem: &ReversedControlProblem, values: &[ValueFunction]) -> Result<Vec<TransitionElement>> {
    let grid = problem.grid();
    if values.len() != grid.len() {
        return Err(Error::parameter("transition elements need a value function at every node"));
    }
    let (sub, dt, nx) = (grid.substeps(), problem.step(), problem.state_dim());
    (0..grid.blocks())
        .into_par_iter()
        .map(|i| {
            let mut t = TransitionElement::identity(nx, grid.time(i * sub));
            for j in i * sub..(i + 1) * sub {
                let (fbar, cbar) = closed_loop(problem, &values[j], j);
                t.beta = &t.beta + (&fbar * &t.beta + cbar) * dt;
                t.phi = &t.phi + &fbar * &t.phi * dt;
            }
            t.span.1 = grid.time((i + 1) * sub);
            if !crate::linalg::is_finite(&t.phi) || !crate::linalg::is_finite_vec(&t.beta) {
                return Err(Error::numeric((i + 1) * sub, "non-finite transition element"));
            }
            Ok(t)
        })
        .collect()
}

/// States at the block boundaries `τ_0 … τ_T`.
pub fn forward_pass_parallel(transitions: Vec<TransitionElement>, phi0: &Vector) -> Result<Vec<Vector>> {
    forward_pass(transitions, phi0, &SolverOptions::default()).map(|(s, _)| s)
}

fn forward_pass(
    transitions: Vec<TransitionElement>,
    phi0: &Vector,
    opts: &SolverOptions,
) -> Result<(Vec<Vector>, ScanStats)> {
    let (prefix, stats) = try_scan_with_stats(transitions, combine_transitions, &opts.plan(Direction::Forward))?;
    let mut states = vec![phi0.clone()];
    states.extend(prefix.iter().map(|t| t.apply(phi0)));
    Ok((states, stats))
}

/// A MAP trajectory with the filter marginals and any numerical warnings.
#[derive(Debug, Clone)]
pub struct MapEstimate {
    pub trajectory: Trajectory,
    /// Filter marginals `(m(t), P(t))` in t order, when the method produces them.
    pub filter: Option<Vec<GaussianState>>,
    pub warnings: Vec<String>,
    /// Structural counters of the scans, in execution order.
    pub scans: Vec<ScanStats>,
}

pub fn parallel_rts_map(model: &LinearAffineModel, meas: &MeasurementSeries, grid: &TimeGrid) -> Result<MapEstimate> {
    parallel_rts_map_with(model, meas, grid, &SolverOptions::default())
}

pub fn parallel_rts_map_with(
    model: &LinearAffineModel,
    meas: &MeasurementSeries,
    grid: &TimeGrid,
    opts: &SolverOptions,
) -> Result<MapEstimate> {
    let problem = reverse_problem(model, meas, grid)?;
    parallel_rts_problem(&problem, opts)
}

pub fn parallel_rts_problem(problem: &ReversedControlProblem, opts: &SolverOptions) -> Result<MapEstimate> {
    let grid = problem.grid();
    let back = backward_pass(problem, opts)?;
    let phi0 = initial_state(&back.nodes[0])?;
    let transitions = transition_elements(problem, &back.nodes)?;
    let (boundary_states, fwd_stats) = forward_pass(transitions, &phi0, opts)?;

    let (sub, dt) = (grid.substeps(), problem.step());
    let blocks: Vec<Vec<Vector>> = (0..grid.blocks())
        .into_par_iter()
        .map(|i| {
            let mut x = boundary_states[i].clone();
            let mut out = Vec::with_capacity(sub);
            out.push(x.clone());
            for j in i * sub..(i + 1) * sub - 1 {
                let (fbar, cbar) = closed_loop(problem, &back.nodes[j], j);
                x = &x + (&fbar * &x + cbar) * dt;
                out.push(x.clone());
            }
            out
        })
        .collect();
    let mut states: Vec<Vector> = blocks.into_iter().flatten().collect();
    states.push(boundary_states[grid.blocks()].clone());

    let tau = Trajectory::on_grid(grid, states)?;
    let filter = values_to_filter(&back.nodes, problem.time_grid())?;
    Ok(MapEstimate {
        trajectory: reverse_trajectory(&tau, problem.time_grid()),
        filter: Some(filter.states),
        warnings: Vec::new(),
        scans: vec![back.stats, fwd_stats],
    })
}

pub fn parallel_tf_map(model: &LinearAffineModel, meas: &MeasurementSeries, grid: &TimeGrid) -> Result<MapEstimate> {
    parallel_tf_map_with(model, meas, grid, &SolverOptions::default())
}

pub fn parallel_tf_map_with(
    model: &LinearAffineModel,
    meas: &MeasurementSeries,
    grid: &TimeGrid,
    opts: &SolverOptions,
) -> Result<MapEstimate> {
    let problem = reverse_problem(model, meas, grid)?;
    parallel_tf_problem(&problem, opts)
}

pub fn parallel_tf_problem(problem: &ReversedControlProblem, opts: &SolverOptions) -> Result<MapEstimate> {
    let grid = problem.grid();
    let (blocks, sub) = (grid.blocks(), grid.substeps());
    let back = backward_pass(problem, opts)?;

    let mut forward: Vec<ConditionalElement> = back.elements.clone();
    forward[0] = make_abar0(&back.elements[0])?;
    let (prefix, fwd_stats) = try_scan_with_stats(forward, combine, &opts.plan(Direction::Forward))?;

    let info = forward_information(problem, 0, sub)?;
    let per_block: Vec<(Vec<Vector>, Vec<(usize, f64)>)> = (0..blocks)
        .into_par_iter()
        .map(|i| -> Result<_> {
            let first = i * sub;
            let mut states = Vec::with_capacity(sub);
            let mut conds = Vec::new();
            if i == 0 {
                states.push(initial_state(&back.nodes[0])?);
                for (m, (lam, l)) in info.iter().enumerate().take(sub).skip(1) {
                    states.push(fuse_information(lam, l, &back.nodes[m], m)?);
                }
            } else {
                let path = forward_refine_path(&prefix[i - 1], problem, first, first + sub - 1)?;
                for (m, e) in path.iter().enumerate() {
                    let node = first + m;
                    let (phi, cond) = fuse(&e.c, &e.b, &back.nodes[node], node)?;
                    conds.push((node, cond));
                    states.push(phi);
                }
            }
            Ok((states, conds))
        })
        .collect::<Result<_>>()?;

    let mut states = Vec::with_capacity(grid.len());
    let mut conds = Vec::new();
    for (s, c) in per_block {
        states.extend(s);
        conds.extend(c);
    }
    let last = grid.steps();
    let (phi, cond) = fuse(&prefix[blocks - 1].c, &prefix[blocks - 1].b, &back.nodes[last], last)?;
    states.push(phi);
    conds.push((last, cond));

    let tau = Trajectory::on_grid(grid, states)?;
    let filter = values_to_filter(&back.nodes, problem.time_grid())?;
    Ok(MapEstimate {
        trajectory: reverse_trajectory(&tau, problem.time_grid()),
        filter: Some(filter.states),
        warnings: condition_warning(&conds, grid).into_iter().collect(),
        scans: vec![back.stats, fwd_stats],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_time_grid;

    fn m1(x: f64) -> Matrix {
        Matrix::from_element(1, 1, x)
    }

    fn v1(x: f64) -> Vector {
        Vector::from_element(1, x)
    }

    fn scalar(phi: f64, beta: f64, span: (f64, f64)) -> TransitionElement {
        TransitionElement {
            phi: m1(phi),
            beta: v1(beta),
            span,
        }
    }

    #[test]
    fn transition_composition_by_hand() {
        let t = combine_transitions(&scalar(2.0, 1.0, (0.0, 1.0)), &scalar(3.0, 0.0, (1.0, 2.0))).unwrap();
        assert_eq!(t, scalar(6.0, 3.0, (0.0, 2.0)));
        assert_eq!(t.apply(&v1(1.0)), v1(9.0));
        assert!(combine_transitions(&scalar(2.0, 1.0, (0.0, 1.0)), &scalar(3.0, 0.0, (1.5, 2.0))).is_err());
    }

    #[test]
    fn identity_transitions_keep_the_state() {
        let ts: Vec<_> = (0..5).map(|i| TransitionElement::identity(2, i as f64)).map(|mut t| {
            t.span.1 += 1.0;
            t
        }).collect();
        let x0 = Vector::from_vec(vec![1.5, -2.0]);
        for x in forward_pass_parallel(ts, &x0).unwrap() {
            assert_eq!(x, x0);
        }
    }

    #[test]
    fn initial_state_examples() {
        let v = ValueFunction {
            s: Matrix::identity(2, 2),
            v: Vector::zeros(2),
            time: 0.0,
        };
        assert_eq!(initial_state(&v).unwrap(), Vector::zeros(2));
        let v = ValueFunction {
            s: m1(100.0),
            v: v1(500.0),
            time: 0.0,
        };
        assert!((initial_state(&v).unwrap()[0] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn fixed_point_boundaries_are_first_order() {
        // Euler elements keep the Riccati equilibrium S = 1 only to O(Δ)
        let model = LinearAffineModel::time_invariant(m1(0.0), m1(1.0), m1(1.0), m1(1.0), m1(1.0), v1(0.0), m1(1.0));
        let worst = |n: usize| {
            let grid = build_time_grid(0.0, 2.0, 16, n).unwrap();
            let meas = MeasurementSeries::new(&grid, vec![v1(0.0); grid.len()]).unwrap();
            let p = reverse_problem(&model, &meas, &grid).unwrap();
            let back = backward_pass(&p, &SolverOptions::default()).unwrap();
            let err = back.nodes.iter().map(|v| (v.s[(0, 0)] - 1.0).abs()).fold(0.0, f64::max);
            (err, grid.step())
        };
        let (coarse, dt) = worst(5);
        let (fine, _) = worst(10);
        assert!(coarse < dt, "{coarse}");
        let ratio = coarse / fine;
        assert!((1.7..=2.3).contains(&ratio), "{ratio}");
    }

    #[test]
    fn single_block_is_one_combination() {
        let model = LinearAffineModel::time_invariant(m1(-0.4), m1(1.0), m1(0.3), m1(1.0), m1(0.2), v1(1.0), m1(0.5));
        let grid = build_time_grid(0.0, 1.0, 1, 7).unwrap();
        let ys = (0..grid.len()).map(|k| v1(k as f64 * 0.1)).collect();
        let meas = MeasurementSeries::new(&grid, ys).unwrap();
        let p = reverse_problem(&model, &meas, &grid).unwrap();
        let back = backward_pass(&p, &SolverOptions::default()).unwrap();
        let e = crate::element::init_element(&p, 0, 7, Integrator::Euler).unwrap();
        let term = terminal_element(&model.m0, &model.p0, 1.0).unwrap();
        let direct = combine(&e, &term).unwrap();
        assert_eq!(back.boundaries[0].s, direct.j);
        assert_eq!(back.boundaries[0].v, direct.eta);
    }

    #[test]
    fn stationary_model_gives_constant_trajectories() {
        let model = LinearAffineModel::time_invariant(m1(0.0), m1(1.0), m1(1.0), m1(1.0), m1(1.0), v1(2.0), m1(1.0));
        let grid = build_time_grid(0.0, 1.0, 8, 4).unwrap();
        let meas = MeasurementSeries::new(&grid, vec![v1(2.0); grid.len()]).unwrap();
        for est in [
            parallel_rts_map(&model, &meas, &grid).unwrap(),
            parallel_tf_map(&model, &meas, &grid).unwrap(),
        ] {
            for x in &est.trajectory.states {
                assert!((x[0] - 2.0).abs() < 1e-12);
            }
            assert_eq!(est.trajectory.times, grid.node_times());
            assert!(est.warnings.is_empty());
        }
    }
}
