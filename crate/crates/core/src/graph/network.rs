//! Label-based contraction of a whole network, plus the environment
//! tensors used for gradients and least-squares core updates.

use std::collections::BTreeMap;

use super::{EdgeId, NodeId, TNGraph};
use crate::error::Result;
use crate::tensor::{contract_unchecked, scale_mode, DenseTensor, Matrix};

pub(crate) type Label = u64;

const BOND_BASE: Label = 1 << 40;

pub(crate) fn phys_label(mode: usize) -> Label {
    mode as Label
}

fn shared_label(e: EdgeId) -> Label {
    BOND_BASE + 3 * e.0 as Label
}

fn side_label(e: EdgeId, side: usize) -> Label {
    BOND_BASE + 3 * e.0 as Label + 1 + side as Label
}

#[derive(Debug, Clone)]
pub(crate) struct LTensor {
    pub t: DenseTensor,
    pub labels: Vec<Label>,
}

impl LTensor {
    fn size_of(&self, label: Label) -> usize {
        let pos = self.labels.iter().position(|&l| l == label).expect("label present");
        self.t.shape()[pos]
    }

    /// Reorders modes to follow `labels`, which must be a permutation of
    /// the current labels.
    pub fn permuted_to(&self, labels: &[Label]) -> DenseTensor {
        let perm: Vec<usize> = labels
            .iter()
            .map(|l| self.labels.iter().position(|x| x == l).expect("label present"))
            .collect();
        self.t.permute_unchecked(&perm)
    }
}

fn contract_pair(a: &LTensor, b: &LTensor) -> LTensor {
    let mut ma = Vec::new();
    let mut mb = Vec::new();
    for (i, l) in a.labels.iter().enumerate() {
        if let Some(j) = b.labels.iter().position(|x| x == l) {
            ma.push(i);
            mb.push(j);
        }
    }
    let t = contract_unchecked(&a.t, &ma, &b.t, &mb);
    let mut labels: Vec<Label> =
        a.labels.iter().enumerate().filter(|(i, _)| !ma.contains(i)).map(|(_, &l)| l).collect();
    labels.extend(b.labels.iter().enumerate().filter(|(j, _)| !mb.contains(j)).map(|(_, &l)| l));
    LTensor { t, labels }
}

fn pair_cost(a: &LTensor, b: &LTensor) -> (bool, usize) {
    let mut shared = false;
    let mut size = 1usize;
    for l in &a.labels {
        if b.labels.contains(l) {
            shared = true;
        } else {
            size = size.saturating_mul(a.size_of(*l));
        }
    }
    for l in &b.labels {
        if !a.labels.contains(l) {
            size = size.saturating_mul(b.size_of(*l));
        }
    }
    (shared, size)
}

/// Greedy pairwise contraction: always contract the connected pair with
/// the smallest result, falling back to outer products of the two
/// smallest tensors when nothing is connected.
pub(crate) fn contract_all(mut items: Vec<LTensor>) -> LTensor {
    if items.is_empty() {
        return LTensor { t: DenseTensor::scalar(1.0), labels: Vec::new() };
    }
    while items.len() > 1 {
        let mut best: Option<(usize, usize, usize)> = None;
        for i in 0..items.len() {
            for j in i + 1..items.len() {
                let (shared, size) = pair_cost(&items[i], &items[j]);
                if shared && best.is_none_or(|(_, _, s)| size < s) {
                    best = Some((i, j, size));
                }
            }
        }
        let (i, j) = match best {
            Some((i, j, _)) => (i, j),
            None => {
                let mut idx: Vec<usize> = (0..items.len()).collect();
                idx.sort_by_key(|&k| (items[k].t.numel(), k));
                (idx[0].min(idx[1]), idx[0].max(idx[1]))
            }
        };
        let b = items.remove(j);
        let a = items.remove(i);
        items.insert(i, contract_pair(&a, &b));
    }
    items.pop().expect("one tensor left")
}

/// A snapshot of a graph as labeled effective cores plus explicit bond
/// operators for every edge whose gate is not exactly 1.
pub(crate) struct Network {
    tensors: Vec<LTensor>,
    node_index: BTreeMap<NodeId, usize>,
    gate_index: BTreeMap<EdgeId, usize>,
    gates: BTreeMap<EdgeId, f64>,
    order: usize,
}

/// Gradients of a scalar function of the reconstruction, pulled back to
/// raw cores, diagonals and gate weights.
pub(crate) struct Backprop {
    pub cores: BTreeMap<NodeId, DenseTensor>,
    pub diagonals: BTreeMap<(NodeId, EdgeId), Vec<f64>>,
    pub gate_weights: BTreeMap<EdgeId, f64>,
}

/// `B(g) = g I + (1 - g) J / R`.
pub(crate) fn bond_operator(g: f64, r: usize) -> Matrix {
    let off = (1.0 - g) / r as f64;
    let mut m = Matrix { rows: r, cols: r, data: vec![off; r * r] };
    for i in 0..r {
        m.data[i * r + i] += g;
    }
    m
}

impl Network {
    pub fn build(g: &TNGraph, tau: f64) -> Result<Self> {
        let gates = g.gates(tau)?;
        let gated = |e: EdgeId| -> bool {
            let edge = &g.edges[&e];
            edge.bond_dim > 1 && gates[&e] < 1.0
        };
        let mut tensors = Vec::new();
        let mut node_index = BTreeMap::new();
        for core in g.cores.values() {
            let t = g.effective(core.id)?;
            let mut labels: Vec<Label> = g
                .incident_edges(core.id)
                .into_iter()
                .map(|e| {
                    if gated(e) {
                        side_label(e, usize::from(g.edges[&e].u != core.id))
                    } else {
                        shared_label(e)
                    }
                })
                .collect();
            labels.extend(core.physical.iter().map(|&p| phys_label(p)));
            node_index.insert(core.id, tensors.len());
            tensors.push(LTensor { t, labels });
        }
        let mut gate_index = BTreeMap::new();
        for e in g.edges.values() {
            if gated(e.id) {
                let b = bond_operator(gates[&e.id], e.bond_dim).into_tensor();
                gate_index.insert(e.id, tensors.len());
                tensors.push(LTensor { t: b, labels: vec![side_label(e.id, 0), side_label(e.id, 1)] });
            }
        }
        Ok(Self { tensors, node_index, gate_index, gates, order: g.external_shape.len() })
    }

    fn output_labels(&self) -> Vec<Label> {
        (0..self.order).map(phys_label).collect()
    }

    pub fn reconstruct(&self) -> Result<DenseTensor> {
        let all = contract_all(self.tensors.clone());
        Ok(all.permuted_to(&self.output_labels()))
    }

    /// Contraction of every tensor except `skip`.
    fn environment(&self, skip: usize) -> LTensor {
        let rest: Vec<LTensor> = self
            .tensors
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != skip)
            .map(|(_, t)| t.clone())
            .collect();
        contract_all(rest)
    }

    /// Gradient with respect to tensor `idx` of `<dx, reconstruction>`,
    /// laid out like tensor `idx`.
    fn pullback(&self, idx: usize, dx: &DenseTensor) -> DenseTensor {
        let env = self.environment(idx);
        let lx = LTensor { t: dx.clone(), labels: self.output_labels() };
        let g = contract_pair(&lx, &env);
        g.permuted_to(&self.tensors[idx].labels)
    }

    /// Environment of node `n` as a matrix whose rows run over the core's
    /// bond indices (core bond order) and whose columns run over the
    /// remaining external modes, ascending.
    pub fn node_environment(&self, n: NodeId, bond_count: usize) -> Matrix {
        let idx = self.node_index[&n];
        let env = self.environment(idx);
        let mut labels: Vec<Label> = self.tensors[idx].labels[..bond_count].to_vec();
        let mut phys: Vec<Label> = env.labels.iter().copied().filter(|&l| l < BOND_BASE).collect();
        phys.sort_unstable();
        labels.extend(phys);
        let t = env.permuted_to(&labels);
        let rows: usize = t.shape()[..bond_count].iter().product();
        let cols = t.numel() / rows;
        Matrix { rows, cols, data: t.into_data() }
    }

    /// Pulls `dx = dL/dX` back to raw cores, diagonals and gate weights.
    pub fn backprop(&self, g: &TNGraph, tau: f64, dx: &DenseTensor) -> Result<Backprop> {
        let mut cores = BTreeMap::new();
        let mut diagonals = BTreeMap::new();
        for core in g.cores.values() {
            let idx = self.node_index[&core.id];
            let d_eff = self.pullback(idx, dx);
            let inc = g.incident_edges(core.id);
            let diags: Vec<&[f64]> =
                inc.iter().map(|&e| g.diagonal(core.id, e)).collect::<Result<_>>()?;
            let mut d_raw = d_eff.clone();
            for (k, d) in diags.iter().enumerate() {
                scale_mode(&mut d_raw, k, d);
            }
            let prod = d_eff.zip_map(&core.tensor, |a, b| a * b)?;
            for (k, &e) in inc.iter().enumerate() {
                let mut t = prod.clone();
                for (j, d) in diags.iter().enumerate() {
                    if j != k {
                        scale_mode(&mut t, j, d);
                    }
                }
                diagonals.insert((core.id, e), mode_sums(&t, k));
            }
            cores.insert(core.id, d_raw);
        }
        let mut gate_weights = BTreeMap::new();
        for e in g.edges.values() {
            let grad = match self.gate_index.get(&e.id) {
                Some(&idx) => {
                    let db = self.pullback(idx, dx);
                    let r = e.bond_dim;
                    let data = db.data();
                    let trace: f64 = (0..r).map(|i| data[i * r + i]).sum();
                    let total: f64 = data.iter().sum();
                    let gv = self.gates[&e.id];
                    (trace - total / r as f64) * gv * (1.0 - gv) / tau
                }
                None => 0.0,
            };
            gate_weights.insert(e.id, grad);
        }
        Ok(Backprop { cores, diagonals, gate_weights })
    }
}

/// Sums over every mode except `k`.
pub(crate) fn mode_sums(t: &DenseTensor, k: usize) -> Vec<f64> {
    let shape = t.shape();
    let outer: usize = shape[..k].iter().product();
    let inner: usize = shape[k + 1..].iter().product();
    let r = shape[k];
    let mut out = vec![0.0; r];
    let data = t.data();
    for o in 0..outer {
        for (j, acc) in out.iter_mut().enumerate() {
            let base = (o * r + j) * inner;
            *acc += data[base..base + inner].iter().sum::<f64>();
        }
    }
    out
}
