//! Oracles and random instances shared by the integration tests.
#![allow(dead_code)]

use rand::Rng;
use rgtn::graph::gate;
use rgtn::objective::{grad_total_loss, total_loss, GradientBundle};
use rgtn::{CouplingConstants, DenseTensor, EdgeId, NodeId, Problem, TNGraph};

/// Random network over `min_nodes..=max_nodes` nodes, each carrying one physical
/// mode; every node pair is joined with probability one half.
pub fn random_graph_order<R: Rng>(
    rng: &mut R,
    min_nodes: usize,
    max_nodes: usize,
    max_dim: usize,
    max_bond: usize,
) -> TNGraph {
    let n = rng.random_range(min_nodes..=max_nodes);
    let dims: Vec<usize> = (0..n).map(|_| rng.random_range(1..=max_dim)).collect();
    let mut edges = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if rng.random_bool(0.5) {
                edges.push((a, b));
            }
        }
    }
    let bonds: Vec<usize> = edges.iter().map(|_| rng.random_range(1..=max_bond)).collect();
    TNGraph::random(&dims, &edges, &bonds, 1.0, rng).unwrap()
}

/// Random gate weights in [-2, 2] and diagonals of magnitude [0.5, 1.5]
/// with random signs.
pub fn randomize_soft_parameters<R: Rng>(g: &mut TNGraph, rng: &mut R) {
    for e in g.edge_ids() {
        g.edge_mut(e).unwrap().gate_weight = rng.random_range(-2.0..2.0);
        let (u, v) = {
            let x = g.edge(e).unwrap();
            (x.u, x.v)
        };
        for n in [u, v] {
            for d in g.diagonal_mut(n, e).unwrap().iter_mut() {
                let m: f64 = rng.random_range(0.5..1.5);
                *d = if rng.random_bool(0.5) { m } else { -m };
            }
        }
    }
}

/// Dense contraction by explicit summation over every bond index pair,
/// with each bond carrying `g I + (1 - g) J / R` between the two
/// diagonally scaled endpoint cores.
pub fn naive_reconstruct(g: &TNGraph, tau: f64) -> DenseTensor {
    let shape = g.external_shape().to_vec();
    let edges: Vec<(EdgeId, NodeId, NodeId, usize, f64)> = g
        .edges()
        .map(|e| (e.id, e.u, e.v, e.bond_dim, gate(e.gate_weight, tau).unwrap()))
        .collect();
    let eff: Vec<(NodeId, DenseTensor, Vec<EdgeId>, Vec<usize>)> = g
        .cores()
        .map(|c| (c.id, g.effective(c.id).unwrap(), g.incident_edges(c.id), c.physical.clone()))
        .collect();
    DenseTensor::from_fn(&shape, |idx| {
        // odometer over (u-side, v-side) index pairs of every edge
        let mut a = vec![0usize; edges.len()];
        let mut b = vec![0usize; edges.len()];
        let mut total = 0.0;
        loop {
            let mut w = 1.0;
            for (k, &(_, _, _, r, gv)) in edges.iter().enumerate() {
                let id = if a[k] == b[k] { 1.0 } else { 0.0 };
                w *= gv * id + (1.0 - gv) / r as f64;
            }
            if w != 0.0 {
                for (n, t, inc, phys) in &eff {
                    let mut pos: Vec<usize> = inc
                        .iter()
                        .map(|e| {
                            let k = edges.iter().position(|x| x.0 == *e).unwrap();
                            if edges[k].1 == *n {
                                a[k]
                            } else {
                                b[k]
                            }
                        })
                        .collect();
                    pos.extend(phys.iter().map(|&m| idx[m]));
                    w *= t.get(&pos);
                }
                total += w;
            }
            let mut k = 0;
            loop {
                if k == edges.len() {
                    return total;
                }
                let r = edges[k].3;
                b[k] += 1;
                if b[k] < r {
                    break;
                }
                b[k] = 0;
                a[k] += 1;
                if a[k] < r {
                    break;
                }
                a[k] = 0;
                k += 1;
            }
        }
    })
}

/// Central-difference check of every partial; a partial passes when
/// within `abs` or within `rel` relative to the finite difference.
pub struct GradCheck {
    pub checked: usize,
    pub failures: Vec<String>,
}

pub fn check_gradients(g: &TNGraph, p: &Problem, c: &CouplingConstants, tau: f64, rel: f64, abs: f64) -> GradCheck {
    let (_, grad) = grad_total_loss(g, p, c, tau).unwrap();
    let f = |h: &TNGraph| total_loss(h, p, c, tau).unwrap().total;
    let mut out = GradCheck { checked: 0, failures: Vec::new() };
    let mut judge = |fd: f64, an: f64, label: String| {
        out.checked += 1;
        let err = (fd - an).abs();
        if !(err <= abs || err <= rel * fd.abs()) {
            out.failures.push(format!("{label}: fd {fd:.9e} analytic {an:.9e}"));
        }
    };
    let step = |x: f64| 1e-6 * x.abs().max(1.0);
    let GradientBundle { cores, diagonals, gate_weights } = grad;
    for (n, gt) in &cores {
        for i in 0..gt.numel() {
            let x = g.core(*n).unwrap().tensor.data()[i];
            let h = step(x);
            let mut plus = g.clone();
            plus.core_mut(*n).unwrap().tensor.data_mut()[i] = x + h;
            let mut minus = g.clone();
            minus.core_mut(*n).unwrap().tensor.data_mut()[i] = x - h;
            judge((f(&plus) - f(&minus)) / (2.0 * h), gt.data()[i], format!("core {n} [{i}]"));
        }
    }
    for ((n, e), gd) in &diagonals {
        for (i, &an) in gd.iter().enumerate() {
            let x = g.diagonal(*n, *e).unwrap()[i];
            let h = step(x);
            let mut plus = g.clone();
            plus.diagonal_mut(*n, *e).unwrap()[i] = x + h;
            let mut minus = g.clone();
            minus.diagonal_mut(*n, *e).unwrap()[i] = x - h;
            judge((f(&plus) - f(&minus)) / (2.0 * h), an, format!("diagonal {n}/{e} [{i}]"));
        }
    }
    for (e, &an) in &gate_weights {
        let x = g.edge(*e).unwrap().gate_weight;
        let h = step(x);
        let mut plus = g.clone();
        plus.edge_mut(*e).unwrap().gate_weight = x + h;
        let mut minus = g.clone();
        minus.edge_mut(*e).unwrap().gate_weight = x - h;
        judge((f(&plus) - f(&minus)) / (2.0 * h), an, format!("gate {e}"));
    }
    out
}

/// A random problem over `shape` with half the entries observed and both
/// smoothness terms wired to the first three modes.
pub fn random_problem<R: Rng>(rng: &mut R, shape: &[usize]) -> Problem {
    let data = DenseTensor::from_fn(shape, |_| rng.random_range(-1.0..1.0));
    let mut mask = DenseTensor::from_fn(shape, |_| if rng.random_bool(0.5) { 1.0 } else { 0.0 });
    mask.data_mut()[0] = 1.0;
    Problem {
        data,
        mask: Some(mask),
        temporal_mode: (!shape.is_empty()).then_some(0),
        spatial_modes: (shape.len() >= 3).then_some((1, 2)),
    }
}

pub fn max_abs_diff(a: &DenseTensor, b: &DenseTensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
