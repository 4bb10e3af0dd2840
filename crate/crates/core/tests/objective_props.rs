mod common;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rgtn::objective::{soft_threshold, total_loss};
use rgtn::{CouplingConstants, TNGraph};

fn couplings() -> CouplingConstants {
    CouplingConstants { alpha: 0.3, beta: 0.2, gamma: 0.05, delta: 0.1, epsilon: 0.2, ..CouplingConstants::default() }
}

/// The same network with its cores inserted in a shuffled order, so node
/// ids differ while edge ids and core layouts stay put.
fn relabeled(g: &TNGraph, rng: &mut ChaCha8Rng) -> TNGraph {
    let mut order = g.node_ids();
    order.shuffle(rng);
    let mut h = TNGraph::new(g.external_shape().to_vec());
    let mut map = std::collections::BTreeMap::new();
    for n in &order {
        let c = g.core(*n).unwrap();
        map.insert(*n, h.add_core(c.tensor.clone(), c.physical.clone()));
    }
    for e in g.edges() {
        let id = h.add_edge(map[&e.u], map[&e.v], e.bond_dim, e.gate_weight);
        for (old, new) in [(e.u, map[&e.u]), (e.v, map[&e.v])] {
            *h.diagonal_mut(new, id).unwrap() = g.diagonal(old, e.id).unwrap().to_vec();
        }
    }
    h.validate().unwrap();
    h
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn breakdown_reassembles(seed in any::<u64>(), tau in 0.05..1.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = common::random_graph_order(&mut rng, 3, 4, 3, 2);
        common::randomize_soft_parameters(&mut g, &mut rng);
        let p = common::random_problem(&mut rng, g.external_shape());
        let c = couplings();
        let l = total_loss(&g, &p, &c, tau).unwrap();
        let sum = l.data + c.alpha * l.temporal + c.beta * l.spatial + c.gamma * l.diag_sparsity + c.delta * l.edge_entropy + c.epsilon * l.tnn;
        prop_assert!((l.total - sum).abs() <= 1e-12 * l.total.abs().max(1.0));
    }

    #[test]
    fn loss_ignores_node_labels(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = common::random_graph_order(&mut rng, 3, 4, 3, 2);
        common::randomize_soft_parameters(&mut g, &mut rng);
        let p = common::random_problem(&mut rng, g.external_shape());
        let h = relabeled(&g, &mut rng);
        let a = total_loss(&g, &p, &couplings(), 0.4).unwrap();
        let b = total_loss(&h, &p, &couplings(), 0.4).unwrap();
        prop_assert!((a.total - b.total).abs() <= 1e-10 * a.total.abs().max(1.0));
    }

    #[test]
    fn diagonal_penalty_is_homogeneous(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = common::random_graph_order(&mut rng, 2, 4, 3, 3);
        common::randomize_soft_parameters(&mut g, &mut rng);
        let p = rgtn::Problem::full(g.reconstruct(0.5).unwrap());
        let before = total_loss(&g, &p, &couplings(), 0.5).unwrap().diag_sparsity;
        for d in g.diagonals().collect::<Vec<_>>() {
            for v in g.diagonal_mut(d.owner, d.bond).unwrap().iter_mut() {
                *v *= 2.0;
            }
        }
        let after = total_loss(&g, &p, &couplings(), 0.5).unwrap().diag_sparsity;
        prop_assert_eq!(after, 2.0 * before);
    }

    #[test]
    fn soft_threshold_is_the_prox(z in -5.0..5.0f64, theta in 0.0..3.0f64) {
        let f = |x: f64| 0.5 * (x - z) * (x - z) + theta * x.abs();
        let x = soft_threshold(z, theta);
        // no point of a fine grid around the claimed minimizer does better
        for k in -200..=200 {
            let y = x + k as f64 * 1e-3;
            prop_assert!(f(x) <= f(y) + 1e-12);
        }
    }
}

#[test]
fn gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..5 {
        let mut g = common::random_graph_order(&mut rng, 3, 3, 3, 2);
        common::randomize_soft_parameters(&mut g, &mut rng);
        let p = common::random_problem(&mut rng, g.external_shape());
        let out = common::check_gradients(&g, &p, &couplings(), 0.6, 1e-4, 1e-6);
        assert!(out.failures.is_empty(), "{:?}", out.failures);
        assert!(out.checked > 0);
    }
}
