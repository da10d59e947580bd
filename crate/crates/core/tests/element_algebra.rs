use ctmap::element::{combine, init_element, ConditionalElement, Integrator};
use ctmap::parallel::{combine_transitions, TransitionElement};
use ctmap::scan::{sequential_scan, try_scan, Direction, ScanPlan};
use ctmap::{build_time_grid, reverse_problem, LinearAffineModel, Matrix, MeasurementSeries, Vector};
use proptest::prelude::*;

fn rel_diff(a: &Matrix, b: &Matrix) -> f64 {
    (a - b).amax() / (1.0 + a.amax().max(b.amax()))
}

fn rel_diff_vec(a: &Vector, b: &Vector) -> f64 {
    (a - b).amax() / (1.0 + a.amax().max(b.amax()))
}

fn element_diff(x: &ConditionalElement, y: &ConditionalElement) -> f64 {
    [
        rel_diff(&x.a, &y.a),
        rel_diff_vec(&x.b, &y.b),
        rel_diff(&x.c, &y.c),
        rel_diff_vec(&x.eta, &y.eta),
        rel_diff(&x.j, &y.j),
    ]
    .into_iter()
    .fold(0.0, f64::max)
}

fn matrix(dim: usize, entries: &[f64]) -> Matrix {
    Matrix::from_fn(dim, dim, |i, j| entries[i * dim + j])
}

fn psd(dim: usize, entries: &[f64]) -> Matrix {
    let g = matrix(dim, entries);
    &g * g.transpose() * 0.5
}

prop_compose! {
    fn element(dim: usize, start: f64)(
        a in prop::collection::vec(-1.0..1.0f64, dim * dim),
        b in prop::collection::vec(-2.0..2.0f64, dim),
        c in prop::collection::vec(-1.0..1.0f64, dim * dim),
        eta in prop::collection::vec(-2.0..2.0f64, dim),
        j in prop::collection::vec(-1.0..1.0f64, dim * dim),
    ) -> ConditionalElement {
        ConditionalElement {
            a: Matrix::identity(dim, dim) + matrix(dim, &a) * 0.5,
            b: Vector::from_vec(b),
            c: psd(dim, &c),
            eta: Vector::from_vec(eta),
            j: psd(dim, &j),
            span: (start, start + 1.0),
        }
    }
}

fn triple() -> impl Strategy<Value = (ConditionalElement, ConditionalElement, ConditionalElement)> {
    (1usize..=4).prop_flat_map(|d| (element(d, 0.0), element(d, 1.0), element(d, 2.0)))
}

prop_compose! {
    fn transition(dim: usize, start: f64)(
        phi in prop::collection::vec(-1.5..1.5f64, dim * dim),
        beta in prop::collection::vec(-2.0..2.0f64, dim),
    ) -> TransitionElement {
        TransitionElement { phi: matrix(dim, &phi), beta: Vector::from_vec(beta), span: (start, start + 1.0) }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn combine_is_associative((e1, e2, e3) in triple()) {
        let left = combine(&combine(&e1, &e2).unwrap(), &e3).unwrap();
        let right = combine(&e1, &combine(&e2, &e3).unwrap()).unwrap();
        prop_assert!(element_diff(&left, &right) < 1e-10, "{}", element_diff(&left, &right));
        prop_assert_eq!(left.span, (0.0, 3.0));
    }

    #[test]
    fn combine_keeps_symmetry((e1, e2, e3) in triple()) {
        let out = combine(&combine(&e1, &e2).unwrap(), &e3).unwrap();
        prop_assert_eq!(out.c.clone(), out.c.transpose());
        prop_assert_eq!(out.j.clone(), out.j.transpose());
    }

    #[test]
    fn identity_is_exactly_neutral(e in (1usize..=4).prop_flat_map(|d| element(d, 0.0))) {
        let dim = e.dim();
        let left = combine(&ConditionalElement::identity(dim, 0.0), &e).unwrap();
        let right = combine(&e, &ConditionalElement::identity(dim, 1.0)).unwrap();
        for out in [left, right] {
            prop_assert_eq!(&out.a, &e.a);
            prop_assert_eq!(&out.b, &e.b);
            prop_assert_eq!(&out.c, &e.c);
            prop_assert_eq!(&out.eta, &e.eta);
            prop_assert_eq!(&out.j, &e.j);
        }
    }

    #[test]
    fn transitions_compose_associatively(
        (t1, t2, t3) in (1usize..=4).prop_flat_map(|d| (transition(d, 0.0), transition(d, 1.0), transition(d, 2.0)))
    ) {
        let left = combine_transitions(&combine_transitions(&t1, &t2).unwrap(), &t3).unwrap();
        let right = combine_transitions(&t1, &combine_transitions(&t2, &t3).unwrap()).unwrap();
        prop_assert!(rel_diff(&left.phi, &right.phi) < 1e-10);
        prop_assert!(rel_diff_vec(&left.beta, &right.beta) < 1e-10);
    }
}

#[test]
fn transition_scan_matches_sequential_composition() {
    let dim = 3;
    let elements: Vec<TransitionElement> = (0..300)
        .map(|k| {
            let s = k as f64;
            let phi = Matrix::from_fn(dim, dim, |i, j| {
                let base = if i == j { 1.0 } else { 0.0 };
                base + 0.01 * ((s + 1.0) * (i as f64 + 2.0) + j as f64).sin()
            });
            let beta = Vector::from_fn(dim, |i, _| (0.3 * s + i as f64).cos());
            TransitionElement {
                phi,
                beta,
                span: (s, s + 1.0),
            }
        })
        .collect();
    let tree = try_scan(
        elements.clone(),
        combine_transitions,
        &ScanPlan::forward().with_cutoff(2),
    )
    .unwrap();
    let seq = sequential_scan(
        elements,
        |a: &TransitionElement, b: &TransitionElement| combine_transitions(a, b).unwrap(),
        Direction::Forward,
    )
    .unwrap();
    for (x, y) in tree.iter().zip(&seq) {
        assert!(rel_diff(&x.phi, &y.phi) < 1e-10);
        assert!(rel_diff_vec(&x.beta, &y.beta) < 1e-10);
        assert_eq!(x.span, y.span);
    }
}

fn tracking_model() -> LinearAffineModel {
    let f = Matrix::from_row_slice(2, 2, &[0.0, 1.0, -0.5, -0.1]);
    let l = Matrix::from_row_slice(2, 1, &[0.0, 1.0]);
    let h = Matrix::from_row_slice(1, 2, &[1.0, 0.0]);
    LinearAffineModel::time_invariant(
        f,
        l,
        Matrix::from_element(1, 1, 0.5),
        h,
        Matrix::from_element(1, 1, 0.05),
        Vector::from_row_slice(&[1.0, 0.0]),
        Matrix::identity(2, 2) * 0.2,
    )
}

fn sine_problem(blocks: usize, substeps: usize) -> ctmap::ReversedControlProblem {
    let grid = build_time_grid(0.0, 2.0, blocks, substeps).unwrap();
    let values = (0..grid.len())
        .map(|k| Vector::from_element(1, (1.5 * grid.time(k)).sin()))
        .collect();
    let meas = MeasurementSeries::new(&grid, values).unwrap();
    reverse_problem(&tracking_model(), &meas, &grid).unwrap()
}

#[test]
fn nested_splits_agree() {
    let p = sine_problem(1, 400);
    let e = |a, b| init_element(&p, a, b, Integrator::Euler).unwrap();
    let (s, g1, g2, t) = (0, 90, 270, 400);
    let orders = [
        combine(&combine(&e(s, g1), &e(g1, g2)).unwrap(), &e(g2, t)).unwrap(),
        combine(&e(s, g1), &combine(&e(g1, g2), &e(g2, t)).unwrap()).unwrap(),
    ];
    assert!(element_diff(&orders[0], &orders[1]) < 1e-10);
}

#[test]
fn split_consistency_is_first_order() {
    let gap = |substeps: usize| {
        let p = sine_problem(1, substeps);
        let whole = init_element(&p, 0, substeps, Integrator::Euler).unwrap();
        let half = substeps / 2;
        let joined = combine(
            &init_element(&p, 0, half, Integrator::Euler).unwrap(),
            &init_element(&p, half, substeps, Integrator::Euler).unwrap(),
        )
        .unwrap();
        element_diff(&whole, &joined)
    };
    let gaps: Vec<f64> = [100, 200, 400, 800].into_iter().map(gap).collect();
    for w in gaps.windows(2) {
        let ratio = w[0] / w[1];
        assert!((1.5..=2.5).contains(&ratio), "{gaps:?}");
    }
}

#[test]
fn pure_diffusion_element_has_interval_covariance() {
    let model = LinearAffineModel::time_invariant(
        Matrix::zeros(1, 1),
        Matrix::identity(1, 1),
        Matrix::identity(1, 1),
        Matrix::zeros(1, 1),
        Matrix::identity(1, 1),
        Vector::zeros(1),
        Matrix::identity(1, 1),
    );
    let grid = build_time_grid(0.0, 1.0, 4, 8).unwrap();
    let meas = MeasurementSeries::new(&grid, vec![Vector::zeros(1); grid.len()]).unwrap();
    let p = reverse_problem(&model, &meas, &grid).unwrap();
    for (first, last) in [(0, 8), (8, 32), (3, 17)] {
        let e = init_element(&p, first, last, Integrator::Euler).unwrap();
        let len = grid.time(last) - grid.time(first);
        assert!((e.c[(0, 0)] - len).abs() < 1e-14);
        assert_eq!(e.a[(0, 0)], 1.0);
    }
}
