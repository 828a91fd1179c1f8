use nalgebra::DMatrix;
use proptest::prelude::*;

use echoloop::catalog::{ItemCatalog, SocialGraph};
use echoloop::theory::{self, SolveMethod};
use echoloop::ModelParams;

fn params(alpha: f64, beta: f64, gamma: f64, epsilon: f64, eta: f64) -> ModelParams {
    ModelParams {
        alpha,
        beta,
        gamma,
        epsilon,
        eta,
        h: 1,
    }
}

/// Exact one-step expectation for `h = 1`, written out from the model
/// definition without going through the library's probability helpers.
fn exact_expected_update(
    u: &DMatrix<f64>,
    catalog: &ItemCatalog,
    graph: &SocialGraph,
    p: &ModelParams,
) -> DMatrix<f64> {
    let (c, n, m) = (u.nrows(), u.ncols(), catalog.num_items());
    let v = catalog.matrix();
    let mut out = u.clone();
    for i in 0..n {
        let nb = graph.neighbors(i);
        let mut mean = u.column(i).clone_owned();
        if !nb.is_empty() {
            mean.fill(0.0);
            for &j in nb {
                mean += u.column(j);
            }
            mean /= nb.len() as f64;
        }
        let s = u.column(i) * p.gamma + mean * (1.0 - p.gamma);
        let logits: Vec<f64> = (0..m).map(|j| p.alpha * v.column(j).dot(&s)).collect();
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        for j in 0..m {
            let d = v.column(j).dot(&u.column(i));
            let a = (1.0 + d).powf(p.beta);
            let b = (1.0 - d).powf(p.beta);
            let drift = (a - b) / (a + b) + p.epsilon;
            let w = p.eta * logits[j].exp() / z * drift;
            for o in 0..c {
                out[(o, i)] += w * v[(o, j)];
            }
        }
    }
    out
}

#[test]
fn linearization_error_is_fourth_order() {
    // α, β and the state shrink together by t; the dropped terms are
    // O(t⁴) while ε stays fixed.
    let inst = theory::random_instance(11, 6, 4, 30, true).unwrap();
    let base = inst.u.map(|x| x / inst.u.amax());
    let err = |t: f64| {
        let p = params(t, t, 0.6, 0.1, 0.1);
        let u = &base * t;
        let exact = exact_expected_update(&u, &inst.catalog, &inst.graph, &p);
        let lin = theory::linearized_expected_update(&u, &inst.catalog, &inst.graph, &p).unwrap();
        theory::infinity_norm(&(exact - lin))
    };
    let (e1, e2) = (err(0.2), err(0.1));
    let ratio = e1 / e2;
    assert!(ratio > 10.0 && ratio < 24.0, "ratio {ratio} ({e1:e} vs {e2:e})");
}

#[test]
fn linearization_is_exact_without_bias_or_temperature() {
    let inst = theory::random_instance(12, 5, 3, 20, false).unwrap();
    let p = params(0.0, 0.0, 0.5, 0.3, 0.2);
    let exact = exact_expected_update(&inst.u, &inst.catalog, &inst.graph, &p);
    let lin = theory::linearized_expected_update(&inst.u, &inst.catalog, &inst.graph, &p).unwrap();
    assert!(theory::infinity_norm(&(exact - lin)) < 1e-14);
}

#[test]
fn gmres_matches_dense_solve() {
    let p = params(1.0, 1.0, 0.5, 0.2, 0.05);
    for seed in 0..5 {
        let inst = theory::random_instance(seed, 30, 5, 80, seed % 2 == 1).unwrap();
        let ops = theory::build_operators(&inst.catalog, &inst.graph, &p)
            .unwrap()
            .without_identity();
        let dense = theory::fixed_point_with(&ops, SolveMethod::Dense).unwrap();
        let iter = theory::fixed_point_with(&ops, SolveMethod::Iterative).unwrap();
        assert!(theory::infinity_norm(&(&dense.u - &iter.u)) < 1e-9);
        assert!(iter.residual < 1e-10);
        assert!(dense.condition_estimate.unwrap() >= 1.0);
    }
}

#[test]
fn contraction_iteration_reaches_fixed_point() {
    let p = params(1.0, 1.0, 0.5, 0.2, 0.05);
    let inst = theory::random_instance(3, 20, 4, 60, false).unwrap();
    let ops = theory::build_operators(&inst.catalog, &inst.graph, &p)
        .unwrap()
        .without_identity();
    assert!(theory::convergence_margin(&ops).satisfied);
    let fp = theory::fixed_point(&ops).unwrap();
    let mut u = inst.u.clone();
    for _ in 0..200 {
        u = theory::matrix_step(&u, &ops).unwrap();
    }
    assert!(theory::infinity_norm(&(u - fp.u)) < 1e-10);
}

#[test]
fn printed_operators_do_not_contract() {
    let p = params(1.0, 1.0, 0.5, 0.2, 0.05);
    let inst = theory::random_instance(4, 10, 4, 40, false).unwrap();
    let ops = theory::build_operators(&inst.catalog, &inst.graph, &p).unwrap();
    assert!(theory::infinity_norm_bound(&ops) >= 1.0);
    let bound = theory::infinity_norm_bound(&ops.without_identity());
    assert!(bound <= theory::analytic_norm_cap(&p).unwrap() + 1e-12);
}

#[test]
fn singular_system_is_reported() {
    // With every knob at zero except ε, the increment operators vanish and
    // the printed form's system matrix is exactly zero.
    let p = params(0.0, 0.0, 1.0, 0.1, 0.1);
    let inst = theory::random_instance(5, 4, 3, 10, false).unwrap();
    let ops = theory::build_operators(&inst.catalog, &inst.graph, &p).unwrap();
    assert!(matches!(
        theory::fixed_point_with(&ops, SolveMethod::Dense),
        Err(echoloop::Error::SingularSystem { .. })
    ));
}

fn small_matrix(r: usize, c: usize) -> impl Strategy<Value = DMatrix<f64>> {
    proptest::collection::vec(-2.0..2.0f64, r * c).prop_map(move |v| DMatrix::from_vec(r, c, v))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn vec_kron_identity(
        (a, x, b) in (1usize..5, 1usize..5, 1usize..5, 1usize..5)
            .prop_flat_map(|(p, q, r, s)| (small_matrix(p, q), small_matrix(q, r), small_matrix(r, s)))
    ) {
        let lhs = theory::vectorize(&(&a * &x * &b));
        let rhs = theory::kron(&b.transpose(), &a) * theory::vectorize(&x);
        prop_assert!((lhs - rhs).amax() < 1e-12);
        let back = theory::unvectorize(&theory::vectorize(&x), x.nrows(), x.ncols());
        prop_assert_eq!(back, x);
    }

    #[test]
    fn matrix_step_equals_linearized_update(
        seed in 0u64..10_000,
        n in 1usize..8,
        c in 1usize..5,
        extra in 0usize..20,
        multi in any::<bool>(),
        alpha in 0.0..5.0f64,
        beta in 0.0..5.0f64,
        gamma in 0.0..=1.0f64,
        epsilon in -0.5..0.5f64,
        eta in 0.01..0.3f64,
    ) {
        let inst = theory::random_instance(seed, n, c, c + extra, multi).unwrap();
        let p = params(alpha, beta, gamma, epsilon, eta);
        let ops = theory::build_operators(&inst.catalog, &inst.graph, &p).unwrap();
        let a = theory::matrix_step(&inst.u, &ops).unwrap();
        let b = theory::linearized_expected_update(&inst.u, &inst.catalog, &inst.graph, &p).unwrap();
        prop_assert!(theory::infinity_norm(&(a - b)) <= 1e-12);
    }

    #[test]
    fn coordinate_scaling_matches_closed_form(
        u in proptest::collection::vec(-1.0..1.0f64, 4),
        mass in proptest::collection::vec(1.0..100.0f64, 4),
        lambda in 0.0..1e-3f64,
        steps in 1usize..50,
    ) {
        let nv = nalgebra::DVector::from_vec(mass.clone());
        let mut x = u.clone();
        for _ in 0..steps {
            theory::coordinate_scaling_step(&mut x, &nv, lambda);
        }
        for o in 0..4 {
            let expect = u[o] * (1.0 + lambda * mass[o]).powi(steps as i32);
            prop_assert!((x[o] - expect).abs() <= 1e-12 * expect.abs().max(1.0));
        }
    }
}
