use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use peergame::game::{BeliefProfile, Covariates, GameInstance, Theta};
use peergame::io::{parse_theta_toml, theta_to_toml};
use peergame::logit;
use peergame::montecarlo::{aggregate, ReplicateRecord};
use peergame::network::{katz_bonacich, DirectedNetwork};

fn graph(max_n: usize) -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
    (2..=max_n).prop_flat_map(|n| {
        let edge = (0..n, 0..n).prop_filter("no self-loops", |(a, b)| a != b);
        (Just(n), prop::collection::vec(edge, 0..=n * 2))
    })
}

/// `Σ_{k=1}^{depth} λ^k (L^k)' 1` with dense matrix powers.
fn dense_series(n: usize, edges: &[(usize, usize)], lambda: f64, depth: usize) -> Vec<f64> {
    let mut l = DMatrix::<f64>::zeros(n, n);
    for &(i, j) in edges {
        l[(i, j)] = 1.0;
    }
    let mut power = DMatrix::<f64>::identity(n, n);
    let mut total = DVector::<f64>::zeros(n);
    let ones = DVector::from_element(n, 1.0);
    for k in 1..=depth {
        power = &power * &l;
        total += lambda.powi(k as i32) * power.transpose() * &ones;
    }
    total.iter().copied().collect()
}

fn small_game(n: usize, edges: &[(usize, usize)], seed: u64) -> GameInstance {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let net = DirectedNetwork::from_edges(n, edges).unwrap();
    let cent = katz_bonacich(&net, 0.1, 1e-12, 500).unwrap();
    let x = DMatrix::from_fn(n, 2, |_, k| {
        if k == 0 {
            1.0
        } else {
            rng.random_range(-1.0..1.0)
        }
    });
    GameInstance::new(
        net,
        cent,
        Covariates::new(x, vec!["const".into(), "w".into()]).unwrap(),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn truncated_series_matches_dense_powers((n, edges) in graph(8), depth in 1usize..=12, lambda in 0.01f64..0.3) {
        let net = DirectedNetwork::from_edges(n, &edges).unwrap();
        let s = katz_bonacich(&net, lambda, 1e-300, depth).unwrap();
        let oracle = dense_series(n, &net.edges().collect::<Vec<_>>(), lambda, depth);
        for (a, b) in s.scores.iter().zip(&oracle) {
            prop_assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn adding_an_edge_never_lowers_centrality((n, edges) in graph(8), extra in (0usize..8, 0usize..8)) {
        let (src, dst) = (extra.0 % n, extra.1 % n);
        prop_assume!(src != dst);
        let before = katz_bonacich(&DirectedNetwork::from_edges(n, &edges).unwrap(), 0.1, 1e-14, 500).unwrap();
        let mut more = edges.clone();
        more.push((src, dst));
        let after = katz_bonacich(&DirectedNetwork::from_edges(n, &more).unwrap(), 0.1, 1e-14, 500).unwrap();
        prop_assert!(after.scores[dst] >= before.scores[dst] - 1e-12);
        for (a, b) in after.scores.iter().zip(&before.scores) {
            prop_assert!(*a >= b - 1e-12);
        }
    }

    #[test]
    fn relabeling_permutes_centrality((n, edges) in graph(10), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let net = DirectedNetwork::from_edges(n, &edges).unwrap();
        let s = katz_bonacich(&net, 0.1, 1e-13, 500).unwrap();
        let t = katz_bonacich(&net.permute(&perm).unwrap(), 0.1, 1e-13, 500).unwrap();
        for (i, &p) in perm.iter().enumerate() {
            prop_assert!((s.scores[i] - t.scores[p]).abs() < 1e-12);
        }
    }

    #[test]
    fn nodes_without_incoming_walks_score_zero((n, edges) in graph(10)) {
        let net = DirectedNetwork::from_edges(n, &edges).unwrap();
        let s = katz_bonacich(&net, 0.1, 1e-12, 500).unwrap();
        let mut indegree = vec![0; n];
        for (_, j) in net.edges() {
            indegree[j] += 1;
        }
        for (i, &d) in indegree.iter().enumerate() {
            if d == 0 {
                prop_assert_eq!(s.scores[i], 0.0);
            } else {
                prop_assert!(s.scores[i] >= 0.1);
            }
        }
    }

    #[test]
    fn best_response_stays_inside_the_unit_interval(
        (n, edges) in graph(8),
        coef in prop::collection::vec(-800.0f64..800.0, 5),
        seed in any::<u64>(),
    ) {
        let g = small_game(n, &edges, seed);
        let theta = Theta::from_slice(&coef).unwrap();
        for start in [BeliefProfile::zeros(n), BeliefProfile::constant(n, 1.0).unwrap()] {
            let r = g.best_response(&start, &theta).unwrap();
            prop_assert!(r.as_slice().iter().all(|&p| p > 0.0 && p < 1.0));
        }
    }

    #[test]
    fn contracting_games_have_one_equilibrium(
        (n, edges) in graph(10),
        beta in prop::collection::vec(-2.0f64..2.0, 2),
        peer in (0.0f64..0.5, 0.0f64..2.0, 0.0f64..0.5),
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let g = small_game(n, &edges, seed);
        let theta = Theta::new(beta, peer.0, peer.1, peer.2);
        prop_assume!(g.contraction_margin(&theta).holds());
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 1);
        let random = BeliefProfile::new((0..n).map(|_| rng.random::<f64>()).collect()).unwrap();
        let a = g.solve_equilibrium(&theta, 1e-13, 100_000, &BeliefProfile::zeros(n)).unwrap();
        let b = g.solve_equilibrium(&theta, 1e-13, 100_000, &random).unwrap();
        prop_assert!(a.sigma.distance(&b.sigma) < 1e-8);
        // a fixed point of the best response
        let again = g.best_response(&a.sigma, &theta).unwrap();
        prop_assert!(again.distance(&a.sigma) < 1e-12);
    }

    #[test]
    fn logit_hessian_is_negative_semidefinite(
        rows in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0, any::<bool>()), 3..40),
        coef in prop::collection::vec(-5.0f64..5.0, 3),
    ) {
        let z = DMatrix::from_fn(rows.len(), 3, |i, k| match k { 0 => 1.0, 1 => rows[i].0, _ => rows[i].1 });
        let y: Vec<f64> = rows.iter().map(|r| if r.2 { 1.0 } else { 0.0 }).collect();
        let h = logit::evaluate(&z, &y, &DVector::from_vec(coef)).hessian;
        let eig = h.symmetric_eigen().eigenvalues;
        prop_assert!(eig.iter().all(|&l| l <= 1e-12));
    }

    #[test]
    fn mse_decomposes_into_bias_and_variance(
        errs in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 4), 2..30),
    ) {
        let theta = Theta::new(vec![0.5], -1.0, 2.0, 0.0);
        let truth = theta.to_vector();
        let records: Vec<ReplicateRecord> = errs
            .iter()
            .enumerate()
            .map(|(r, e)| ReplicateRecord {
                replicate: r + 1,
                seed: r as u64,
                estimates: e.iter().zip(truth.iter()).map(|(a, b)| a + b).collect(),
                std_errors: vec![1.0; 4],
                converged: true,
                outer_iterations: 2,
                wald_p_value: None,
                error: None,
                margin: 1.0,
                regenerations: 0,
                margin_violations: 0,
            })
            .collect();
        let r = records.len() as f64;
        for s in aggregate(&theta, &records) {
            let rhs = s.bias * s.bias + s.sd * s.sd * (r - 1.0) / r;
            prop_assert!((s.mse - rhs).abs() < 1e-10 * s.mse.max(1.0));
        }
    }

    #[test]
    fn theta_toml_round_trips(values in prop::collection::vec(-1e6f64..1e6, 4..12)) {
        let theta = Theta::from_slice(&values).unwrap();
        prop_assert_eq!(parse_theta_toml(&theta_to_toml(&theta)).unwrap(), theta);
    }
}
