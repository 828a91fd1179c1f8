use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use echoloop::catalog::{ItemCatalog, SocialGraph, UserStates};
use echoloop::dynamics::{
    feedback_probabilities, raw_feedback_probabilities, sample_without_replacement, update_user,
    NoHooks, RunOptions, Simulation,
};
use echoloop::experiment::generate_synthetic;
use echoloop::metrics::MetricSettings;
use echoloop::ModelParams;

#[test]
fn single_user_mean_update_matches_expectation() {
    // One user, h = 1, γ = 1: the average of many independent steps is the
    // exact expectation Σ_j p_j (p_pos − p_neg) v_j.
    let labels = [0, 1, 2, 0, 1, 2, 0, 3];
    let catalog = ItemCatalog::single_category(&labels, 4).unwrap();
    let graph = SocialGraph::empty(1);
    let u = DMatrix::from_column_slice(4, 1, &[0.5, -0.3, 0.2, 0.1]);
    let states = UserStates::new(u.clone());
    let params = ModelParams {
        alpha: 2.0,
        beta: 2.0,
        gamma: 1.0,
        epsilon: 0.1,
        eta: 1.0,
        h: 1,
    };
    let col: Vec<f64> = u.column(0).iter().copied().collect();
    let logits: Vec<f64> = (0..labels.len()).map(|j| 2.0 * catalog.dot(j, &col)).collect();
    let z: f64 = logits.iter().map(|l| l.exp()).sum();
    let mut expected = [0.0; 4];
    let mut second = [0.0; 4];
    for (j, &o) in labels.iter().enumerate() {
        let d = col[o];
        let p_pos = (1.0 + d).powi(2) / ((1.0 + d).powi(2) + (1.0 - d).powi(2)) + 0.05;
        let pj = logits[j].exp() / z;
        expected[o] += pj * (2.0 * p_pos - 1.0);
        second[o] += pj;
    }

    let runs = 40_000;
    let mut mean = [0.0; 4];
    for seed in 0..runs {
        let sim = Simulation::new(&catalog, &graph, params, seed);
        let (next, _) = sim.step(&states, &NoHooks).unwrap();
        for o in 0..4 {
            mean[o] += (next.matrix()[(o, 0)] - u[(o, 0)]) / runs as f64;
        }
    }
    for o in 0..4 {
        let var = second[o] - expected[o].powi(2);
        let se = (var / runs as f64).sqrt();
        assert!(
            (mean[o] - expected[o]).abs() < 5.0 * se + 1e-12,
            "coordinate {o}: {} vs {} (se {se})",
            mean[o],
            expected[o]
        );
    }
}

#[test]
fn serial_and_parallel_runs_agree() {
    let d = generate_synthetic(40, 300, 6, 200, 4).unwrap();
    let opts = RunOptions::new(15, MetricSettings::with_ts_k(5));
    let mut sim = Simulation::new(&d.catalog, &d.graph, ModelParams::default(), 9);
    let par = sim.run(&d.states, &NoHooks, &opts).unwrap();
    sim.parallel = false;
    let ser = sim.run(&d.states, &NoHooks, &opts).unwrap();
    assert_eq!(par.final_states, ser.final_states);
    assert_eq!(par.records, ser.records);
}

#[test]
fn different_seeds_diverge() {
    let d = generate_synthetic(10, 100, 4, 20, 4).unwrap();
    let opts = RunOptions::new(3, MetricSettings::with_ts_k(3));
    let a = Simulation::new(&d.catalog, &d.graph, ModelParams::default(), 1)
        .run(&d.states, &NoHooks, &opts)
        .unwrap();
    let b = Simulation::new(&d.catalog, &d.graph, ModelParams::default(), 2)
        .run(&d.states, &NoHooks, &opts)
        .unwrap();
    assert_ne!(a.final_states, b.final_states);
}

#[test]
fn sampling_first_pick_follows_p() {
    let p = [0.5, 0.3, 0.2];
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let draws = 60_000;
    let mut first = [0usize; 3];
    for _ in 0..draws {
        first[sample_without_replacement(&p, 2, &mut rng).unwrap().items[0]] += 1;
    }
    for j in 0..3 {
        let f = first[j] as f64 / draws as f64;
        let se = (p[j] * (1.0 - p[j]) / draws as f64).sqrt();
        assert!((f - p[j]).abs() < 5.0 * se, "item {j}: {f}");
    }
}

proptest! {
    #[test]
    fn slates_are_distinct_and_in_range(
        weights in proptest::collection::vec(0.0..1.0f64, 1..60),
        h_frac in 0.0..=1.0f64,
        seed in any::<u64>(),
    ) {
        let total: f64 = weights.iter().sum();
        prop_assume!(total > 0.0);
        let p: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let h = ((p.len() as f64 * h_frac) as usize).max(1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let slate = sample_without_replacement(&p, h, &mut rng).unwrap();
        prop_assert_eq!(slate.items.len(), h);
        let mut sorted = slate.items.clone();
        sorted.sort_unstable();
        sorted.dedup();
        prop_assert_eq!(sorted.len(), h);
        prop_assert!(slate.items.iter().all(|&j| j < p.len()));
        let positive = p.iter().filter(|&&x| x > 0.0).count();
        prop_assert_eq!(slate.padded, positive < h);
        // Zero-probability items only appear as padding after every
        // positive item.
        let zero_at = slate.items.iter().position(|&j| p[j] == 0.0);
        if let Some(k) = zero_at {
            prop_assert_eq!(k, positive);
        }
    }

    #[test]
    fn feedback_probabilities_are_a_distribution(
        d in -1.5..1.5f64,
        beta in 0.0..50.0f64,
        epsilon in -1.0..1.0f64,
    ) {
        let (pos, neg) = feedback_probabilities(d, beta, epsilon);
        prop_assert!((0.0..=1.0).contains(&pos) && (0.0..=1.0).contains(&neg));
        prop_assert!((pos + neg - 1.0).abs() < 1e-12);
        let (rp, rn) = raw_feedback_probabilities(d, beta, epsilon);
        prop_assert!((rp + rn - 1.0).abs() < 1e-12);
    }

    #[test]
    fn leniency_shifts_symmetric_point(beta in 0.0..10.0f64, epsilon in -0.9..0.9f64) {
        let (pos, _) = raw_feedback_probabilities(0.0, beta, epsilon);
        prop_assert!((pos - (0.5 + epsilon / 2.0)).abs() < 1e-15);
    }

    #[test]
    fn update_is_linear_in_weights(
        u in proptest::collection::vec(-1.0..1.0f64, 3),
        w in proptest::collection::vec(-2.0..2.0f64, 4),
        eta in 0.0..1.0f64,
    ) {
        let catalog = ItemCatalog::from_category_sets(vec![vec![0], vec![1, 2], vec![0, 1, 2], vec![2]], 3).unwrap();
        let items = [0, 1, 2, 3];
        let out = update_user(&u, &items, &w, eta, 4, &catalog);
        for o in 0..3 {
            let mut expect = u[o];
            for (k, &j) in items.iter().enumerate() {
                expect += eta / 4.0 * w[k] * catalog.matrix()[(o, j)];
            }
            prop_assert!((out[o] - expect).abs() < 1e-14);
        }
    }
}
