//! The mutable tensor network: cores, gated edges and per-bond diagonal
//! factors.
//!
//! A core's tensor modes are laid out as its incident bonds sorted by edge
//! id, followed by its physical legs in ascending external-mode order. Each
//! external mode of the target tensor is carried by exactly one physical leg.

mod edit;
mod network;
mod structure_file;

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RgtnError};
use crate::tensor::{scale_mode, DenseTensor};

pub use edit::{default_partition, Partition, SplitOutcome};
pub(crate) use network::Network;
pub use structure_file::{load_structure, save_structure, StructureFile};

/// Gate weight given to bonds created by splits and truncations.
pub const NEW_EDGE_WEIGHT: f64 = 2.0;
/// Gate weight that saturates the logistic to exactly 1.0 for any
/// temperature up to 1.
pub const HARD_EDGE_WEIGHT: f64 = 40.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EdgeId(pub usize);

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "n{}", self.0)
    }
}

impl std::fmt::Display for EdgeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "e{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Core {
    pub id: NodeId,
    pub tensor: DenseTensor,
    /// External modes carried by this core, ascending. Empty for internal
    /// nodes; more than one only after merging two physical cores.
    pub physical: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub id: EdgeId,
    pub u: NodeId,
    pub v: NodeId,
    pub bond_dim: usize,
    pub gate_weight: f64,
}

impl Edge {
    pub fn other(&self, n: NodeId) -> NodeId {
        if self.u == n {
            self.v
        } else {
            self.u
        }
    }

    pub fn touches(&self, n: NodeId) -> bool {
        self.u == n || self.v == n
    }

    fn pair(&self) -> (NodeId, NodeId) {
        (self.u.min(self.v), self.u.max(self.v))
    }
}

/// Diagonal of the per-bond adaptation matrix owned by one endpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalFactor {
    pub owner: NodeId,
    pub bond: EdgeId,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TNGraph {
    cores: BTreeMap<NodeId, Core>,
    edges: BTreeMap<EdgeId, Edge>,
    diagonals: BTreeMap<(NodeId, EdgeId), Vec<f64>>,
    external_shape: Vec<usize>,
    next_node: usize,
    next_edge: usize,
}

/// Discrete topology and ranks extracted from a soft network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructureSignature {
    pub node_count: usize,
    /// Physical modes carried by each node.
    pub physical: BTreeMap<usize, Vec<usize>>,
    /// Surviving edges keyed by ordered node pair, with effective rank.
    #[serde(with = "rank_list")]
    pub ranks: BTreeMap<(usize, usize), usize>,
}

impl StructureSignature {
    pub fn adjacency(&self) -> BTreeSet<(usize, usize)> {
        self.ranks.keys().copied().collect()
    }
}

/// Ranks as `[u, v, rank]` triples, since JSON keys must be strings.
mod rank_list {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &BTreeMap<(usize, usize), usize>, s: S) -> Result<S::Ok, S::Error> {
        m.iter().map(|(&(a, b), &r)| (a, b, r)).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<(usize, usize), usize>, D::Error> {
        Ok(Vec::<(usize, usize, usize)>::deserialize(d)?.into_iter().map(|(a, b, r)| ((a, b), r)).collect())
    }
}

/// Initial topology presets over one node per external mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyPreset {
    Ring,
    Chain,
    FullyConnected,
}

impl TopologyPreset {
    pub fn edges(&self, order: usize) -> Vec<(usize, usize)> {
        match self {
            TopologyPreset::Chain => (0..order.saturating_sub(1)).map(|i| (i, i + 1)).collect(),
            TopologyPreset::Ring => {
                let mut e: Vec<_> = (0..order.saturating_sub(1)).map(|i| (i, i + 1)).collect();
                if order > 2 {
                    e.push((0, order - 1));
                }
                e
            }
            TopologyPreset::FullyConnected => {
                let mut e = Vec::new();
                for i in 0..order {
                    for j in i + 1..order {
                        e.push((i, j));
                    }
                }
                e
            }
        }
    }
}

/// Logistic gate `sigma(w / tau)`.
pub fn gate(w: f64, tau: f64) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(RgtnError::InvalidArgument(format!("temperature must be positive, got {tau}")));
    }
    Ok(logistic(w / tau))
}

pub(crate) fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// The core with each virtual mode slice `j` scaled by the matching
/// diagonal entry. `diags` are given in the core's bond order.
pub fn effective_core(core: &Core, diags: &[&[f64]]) -> Result<DenseTensor> {
    let bonds = core.tensor.order() - core.physical.len();
    if diags.len() != bonds {
        return Err(RgtnError::DimensionMismatch(format!(
            "{} diagonals for {bonds} bonds",
            diags.len()
        )));
    }
    let mut t = core.tensor.clone();
    for (k, d) in diags.iter().enumerate() {
        if d.len() != t.shape()[k] {
            return Err(RgtnError::DimensionMismatch(format!(
                "diagonal of length {} on bond of size {}",
                d.len(),
                t.shape()[k]
            )));
        }
        scale_mode(&mut t, k, d);
    }
    Ok(t)
}

impl TNGraph {
    /// Empty network over `external_shape`; cores are added with
    /// [`TNGraph::add_core`] and [`TNGraph::add_edge`].
    pub fn new(external_shape: Vec<usize>) -> Self {
        Self {
            cores: BTreeMap::new(),
            edges: BTreeMap::new(),
            diagonals: BTreeMap::new(),
            external_shape,
            next_node: 0,
            next_edge: 0,
        }
    }

    /// One core per external mode (node id = mode index) joined by `edges`
    /// with the given bond dimensions. Core entries are standard normal
    /// scaled by `1/sqrt(bond product)`; diagonals start at 1.
    pub fn random<R: Rng>(
        external_shape: &[usize],
        edges: &[(usize, usize)],
        bonds: &[usize],
        gate_weight: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if edges.len() != bonds.len() {
            return Err(RgtnError::InvalidArgument("one bond dimension per edge".into()));
        }
        let n = external_shape.len();
        let mut seen = BTreeSet::new();
        for &(a, b) in edges {
            if a >= n || b >= n || a == b || !seen.insert((a.min(b), a.max(b))) {
                return Err(RgtnError::InvalidArgument(format!("invalid edge ({a}, {b})")));
            }
        }
        if bonds.contains(&0) {
            return Err(RgtnError::InvalidArgument("bond dimensions must be >= 1".into()));
        }
        let mut g = TNGraph::new(external_shape.to_vec());
        g.next_node = n;
        for (i, &(a, b)) in edges.iter().enumerate() {
            let id = EdgeId(i);
            g.edges.insert(
                id,
                Edge { id, u: NodeId(a.min(b)), v: NodeId(a.max(b)), bond_dim: bonds[i], gate_weight },
            );
            g.diagonals.insert((NodeId(a), id), vec![1.0; bonds[i]]);
            g.diagonals.insert((NodeId(b), id), vec![1.0; bonds[i]]);
        }
        g.next_edge = edges.len();
        for k in 0..n {
            let id = NodeId(k);
            let mut shape: Vec<usize> =
                g.incident_edges(id).iter().map(|e| g.edges[e].bond_dim).collect();
            let bond_product: usize = shape.iter().product();
            shape.push(external_shape[k]);
            let scale = 1.0 / (bond_product as f64).sqrt();
            let numel: usize = shape.iter().product();
            let data = (0..numel).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
            g.cores.insert(id, Core { id, tensor: DenseTensor::new(shape, data)?, physical: vec![k] });
        }
        g.validate()?;
        Ok(g)
    }

    pub fn preset<R: Rng>(
        external_shape: &[usize],
        preset: TopologyPreset,
        bond_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let edges = preset.edges(external_shape.len());
        let bonds = vec![bond_dim; edges.len()];
        Self::random(external_shape, &edges, &bonds, NEW_EDGE_WEIGHT, rng)
    }

    pub fn add_core(&mut self, tensor: DenseTensor, physical: Vec<usize>) -> NodeId {
        let id = NodeId(self.next_node);
        self.next_node += 1;
        self.cores.insert(id, Core { id, tensor, physical });
        id
    }

    /// Adds an edge and unit diagonals. Core tensors are not touched; the
    /// caller is responsible for giving them the matching bond mode.
    pub fn add_edge(&mut self, u: NodeId, v: NodeId, bond_dim: usize, gate_weight: f64) -> EdgeId {
        let id = EdgeId(self.next_edge);
        self.next_edge += 1;
        self.edges.insert(id, Edge { id, u, v, bond_dim, gate_weight });
        self.diagonals.insert((u, id), vec![1.0; bond_dim]);
        self.diagonals.insert((v, id), vec![1.0; bond_dim]);
        id
    }

    pub fn external_shape(&self) -> &[usize] {
        &self.external_shape
    }

    pub fn cores(&self) -> impl Iterator<Item = &Core> {
        self.cores.values()
    }

    pub fn edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges.values()
    }

    pub fn node_ids(&self) -> Vec<NodeId> {
        self.cores.keys().copied().collect()
    }

    pub fn edge_ids(&self) -> Vec<EdgeId> {
        self.edges.keys().copied().collect()
    }

    pub fn core(&self, id: NodeId) -> Result<&Core> {
        self.cores.get(&id).ok_or(RgtnError::NoSuchNode(id.0))
    }

    pub fn core_mut(&mut self, id: NodeId) -> Result<&mut Core> {
        self.cores.get_mut(&id).ok_or(RgtnError::NoSuchNode(id.0))
    }

    pub fn edge(&self, id: EdgeId) -> Result<&Edge> {
        self.edges.get(&id).ok_or(RgtnError::NoSuchEdge(id.0))
    }

    pub fn edge_mut(&mut self, id: EdgeId) -> Result<&mut Edge> {
        self.edges.get_mut(&id).ok_or(RgtnError::NoSuchEdge(id.0))
    }

    pub fn node_count(&self) -> usize {
        self.cores.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edge_between(&self, a: NodeId, b: NodeId) -> Option<EdgeId> {
        let key = (a.min(b), a.max(b));
        self.edges.values().find(|e| e.pair() == key).map(|e| e.id)
    }

    /// Incident edges of `n`, sorted by id (the core's bond mode order).
    pub fn incident_edges(&self, n: NodeId) -> Vec<EdgeId> {
        self.edges.values().filter(|e| e.touches(n)).map(|e| e.id).collect()
    }

    pub fn degree(&self, n: NodeId) -> usize {
        self.edges.values().filter(|e| e.touches(n)).count()
    }

    /// Position of bond `e` among the modes of core `n`.
    pub fn bond_mode(&self, n: NodeId, e: EdgeId) -> Result<usize> {
        self.incident_edges(n)
            .iter()
            .position(|&x| x == e)
            .ok_or_else(|| RgtnError::Invariant(format!("{e} is not incident to {n}")))
    }

    pub fn diagonal(&self, n: NodeId, e: EdgeId) -> Result<&[f64]> {
        self.diagonals
            .get(&(n, e))
            .map(|v| v.as_slice())
            .ok_or_else(|| RgtnError::Invariant(format!("missing diagonal ({n}, {e})")))
    }

    pub fn diagonal_mut(&mut self, n: NodeId, e: EdgeId) -> Result<&mut Vec<f64>> {
        self.diagonals
            .get_mut(&(n, e))
            .ok_or_else(|| RgtnError::Invariant(format!("missing diagonal ({n}, {e})")))
    }

    pub fn diagonals(&self) -> impl Iterator<Item = DiagonalFactor> + '_ {
        self.diagonals.iter().map(|(&(owner, bond), values)| DiagonalFactor {
            owner,
            bond,
            values: values.clone(),
        })
    }

    /// Gate value of every edge at temperature `tau`.
    pub fn gates(&self, tau: f64) -> Result<BTreeMap<EdgeId, f64>> {
        self.edges.values().map(|e| Ok((e.id, gate(e.gate_weight, tau)?))).collect()
    }

    /// Effective core of `n`: the raw core scaled by its diagonal factors.
    pub fn effective(&self, n: NodeId) -> Result<DenseTensor> {
        let core = self.core(n)?;
        let inc = self.incident_edges(n);
        let diags: Vec<&[f64]> = inc.iter().map(|&e| self.diagonal(n, e)).collect::<Result<_>>()?;
        effective_core(core, &diags)
    }

    /// Contracts every effective core, inserting the bond operator
    /// `B(g) = g I + (1 - g) J / R` on each edge. Output modes follow the
    /// external mode order.
    pub fn reconstruct(&self, tau: f64) -> Result<DenseTensor> {
        Network::build(self, tau)?.reconstruct()
    }

    /// Sum of core element counts (diagonals and gates excluded).
    pub fn param_count(&self) -> usize {
        self.cores.values().map(|c| c.tensor.numel()).sum()
    }

    /// Parameter count as a percentage of the dense tensor size.
    pub fn compression_ratio(&self) -> f64 {
        compression_ratio(self.param_count(), &self.external_shape)
    }

    /// Checks leg/bond consistency, diagonal lengths, simplicity and
    /// external-mode coverage.
    pub fn validate(&self) -> Result<()> {
        let mut pairs = BTreeSet::new();
        for e in self.edges.values() {
            if e.u == e.v {
                return Err(RgtnError::Invariant(format!("self loop on {}", e.u)));
            }
            if !self.cores.contains_key(&e.u) || !self.cores.contains_key(&e.v) {
                return Err(RgtnError::Invariant(format!("{} has a dangling endpoint", e.id)));
            }
            if !pairs.insert(e.pair()) {
                return Err(RgtnError::Invariant(format!("parallel edges between {} and {}", e.u, e.v)));
            }
            if e.bond_dim == 0 {
                return Err(RgtnError::Invariant(format!("{} has zero bond dimension", e.id)));
            }
            for n in [e.u, e.v] {
                match self.diagonals.get(&(n, e.id)) {
                    Some(d) if d.len() == e.bond_dim => {}
                    _ => {
                        return Err(RgtnError::Invariant(format!(
                            "diagonal ({n}, {}) missing or of wrong length",
                            e.id
                        )))
                    }
                }
            }
        }
        if self.diagonals.len() != 2 * self.edges.len() {
            return Err(RgtnError::Invariant("stray diagonal factors".into()));
        }
        let mut covered = vec![0usize; self.external_shape.len()];
        for core in self.cores.values() {
            let inc = self.incident_edges(core.id);
            let shape = core.tensor.shape();
            if shape.len() != inc.len() + core.physical.len() {
                return Err(RgtnError::Invariant(format!(
                    "{} has order {} but {} bonds and {} legs",
                    core.id,
                    shape.len(),
                    inc.len(),
                    core.physical.len()
                )));
            }
            for (k, e) in inc.iter().enumerate() {
                if shape[k] != self.edges[e].bond_dim {
                    return Err(RgtnError::Invariant(format!(
                        "{} mode {k} has size {} but {e} has bond {}",
                        core.id, shape[k], self.edges[e].bond_dim
                    )));
                }
            }
            if core.physical.windows(2).any(|w| w[0] >= w[1]) {
                return Err(RgtnError::Invariant(format!("{} physical legs unsorted", core.id)));
            }
            for (j, &p) in core.physical.iter().enumerate() {
                if p >= covered.len() {
                    return Err(RgtnError::Invariant(format!("{} carries unknown mode {p}", core.id)));
                }
                covered[p] += 1;
                if shape[inc.len() + j] != self.external_shape[p] {
                    return Err(RgtnError::Invariant(format!(
                        "{} leg for mode {p} has size {} (expected {})",
                        core.id,
                        shape[inc.len() + j],
                        self.external_shape[p]
                    )));
                }
            }
        }
        if let Some(p) = covered.iter().position(|&c| c != 1) {
            return Err(RgtnError::Invariant(format!("mode {p} carried {} times", covered[p])));
        }
        Ok(())
    }

    /// Thresholds gates and diagonals into a discrete signature. An edge
    /// survives iff its gate is at least `delta_gate`; its rank counts the
    /// bond indices where both diagonals have magnitude at least
    /// `eps_diag`, floored at 1.
    pub fn harden(&self, eps_diag: f64, delta_gate: f64, tau: f64) -> Result<StructureSignature> {
        let mut ranks = BTreeMap::new();
        for e in self.edges.values() {
            if gate(e.gate_weight, tau)? < delta_gate {
                continue;
            }
            let du = self.diagonal(e.u, e.id)?;
            let dv = self.diagonal(e.v, e.id)?;
            let r = du.iter().zip(dv).filter(|(a, b)| a.abs().min(b.abs()) >= eps_diag).count();
            let (a, b) = e.pair();
            ranks.insert((a.0, b.0), r.max(1));
        }
        Ok(StructureSignature {
            node_count: self.cores.len(),
            physical: self.cores.values().map(|c| (c.id.0, c.physical.clone())).collect(),
            ranks,
        })
    }

    /// Multiplies every core by `c`.
    pub fn scale_cores(&mut self, c: f64) {
        for core in self.cores.values_mut() {
            for v in core.tensor.data_mut() {
                *v *= c;
            }
        }
    }

    /// Applies `m` (old size x new size) to the physical leg carrying
    /// external mode `mode`, resizing that mode.
    pub(crate) fn transform_leg(&mut self, mode: usize, m: &crate::tensor::Matrix) -> Result<()> {
        if mode >= self.external_shape.len() || m.rows != self.external_shape[mode] {
            return Err(RgtnError::DimensionMismatch(format!(
                "leg transform of {} rows on mode {mode}",
                m.rows
            )));
        }
        let id = self
            .cores
            .values()
            .find(|c| c.physical.contains(&mode))
            .map(|c| c.id)
            .ok_or_else(|| RgtnError::Invariant(format!("mode {mode} not carried")))?;
        let bonds = self.degree(id);
        let core = self.cores.get_mut(&id).expect("core exists");
        let pos = bonds + core.physical.iter().position(|&p| p == mode).expect("leg present");
        core.tensor = crate::tensor::mode_apply(&core.tensor, pos, m);
        self.external_shape[mode] = m.cols;
        Ok(())
    }

    /// Overwrites the gate weight of every edge.
    pub fn set_all_gate_weights(&mut self, w: f64) {
        for e in self.edges.values_mut() {
            e.gate_weight = w;
        }
    }
}

pub fn compression_ratio(params: usize, shape: &[usize]) -> f64 {
    let numel: f64 = shape.iter().map(|&s| s as f64).product();
    100.0 * params as f64 / numel
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::contract;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gate_values() {
        assert_eq!(gate(0.0, 0.3).unwrap(), 0.5);
        assert!((gate(1.0, 0.5).unwrap() - 0.880_797_077_977_882_3).abs() < 1e-15);
        assert!(gate(-3.0, 0.05).unwrap() < 1e-20);
        assert!(gate(1.0, 0.0).is_err());
        assert!(gate(1.0, -1.0).is_err());
    }

    #[test]
    fn gate_monotone_and_sharpening() {
        let mut prev = 0.0;
        for i in -20..=20 {
            let g = gate(i as f64 * 0.25, 0.7).unwrap();
            assert!(g > prev);
            prev = g;
        }
        let mut prev_gap = f64::INFINITY;
        for tau in [1.0, 0.5, 0.25, 0.1, 0.05] {
            let gap = 1.0 - gate(0.3, tau).unwrap();
            assert!(gap < prev_gap);
            prev_gap = gap;
        }
    }

    #[test]
    fn effective_core_identity_and_annihilation() {
        let t = DenseTensor::from_fn(&[2, 3], |i| (i[0] * 3 + i[1]) as f64 + 1.0);
        let core = Core { id: NodeId(0), tensor: t.clone(), physical: vec![0] };
        assert_eq!(effective_core(&core, &[&[1.0, 1.0]]).unwrap(), t);
        let zeroed = effective_core(&core, &[&[0.0, 0.0]]).unwrap();
        assert!(zeroed.data().iter().all(|&x| x == 0.0));
        assert!(effective_core(&core, &[&[1.0]]).is_err());
    }

    #[test]
    fn effective_core_matches_diagonal_contraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = DenseTensor::from_fn(&[3, 2, 4], |_| rng.sample(StandardNormal));
        let core = Core { id: NodeId(0), tensor: t.clone(), physical: vec![0] };
        let d1 = [0.5, -2.0, 3.0];
        let d2 = [1.5, 0.25];
        let eff = effective_core(&core, &[&d1, &d2]).unwrap();
        // Oracle: contract explicit diagonal matrices into the two bond modes.
        let m1 = crate::tensor::Matrix::from_diag(&d1).into_tensor();
        let m2 = crate::tensor::Matrix::from_diag(&d2).into_tensor();
        let a = contract(&m1, &[1], &t, &[0]).unwrap(); // (3, 2, 4)
        let b = contract(&a, &[1], &m2, &[0]).unwrap(); // (3, 4, 2)
        let oracle = b.permute(&[0, 2, 1]).unwrap();
        for (x, y) in eff.data().iter().zip(oracle.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn compression_ratio_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = TNGraph::preset(&[8, 8, 8, 8], TopologyPreset::Ring, 2, &mut rng).unwrap();
        assert_eq!(g.param_count(), 128);
        assert!((g.compression_ratio() - 3.125).abs() < 1e-12);
        let single = TNGraph::random(&[4, 5], &[], &[], NEW_EDGE_WEIGHT, &mut rng).unwrap();
        assert_eq!(single.param_count(), 9);
        let mut full = TNGraph::new(vec![4, 5]);
        full.add_core(DenseTensor::zeros(&[4, 5]), vec![0, 1]);
        full.validate().unwrap();
        assert!((full.compression_ratio() - 100.0).abs() < 1e-12);
    }

    #[test]
    fn harden_rules() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut g = TNGraph::preset(&[3, 3, 3], TopologyPreset::Ring, 4, &mut rng).unwrap();
        let sig = g.harden(1e-2, 0.5, 0.1).unwrap();
        assert_eq!(sig.ranks.len(), 3);
        assert!(sig.ranks.values().all(|&r| r == 4));

        g.edge_mut(EdgeId(0)).unwrap().gate_weight = -5.0;
        let sig = g.harden(1e-2, 0.5, 0.05).unwrap();
        assert!(!sig.ranks.contains_key(&(0, 1)));

        let e = EdgeId(1);
        let (u, v) = (g.edge(e).unwrap().u, g.edge(e).unwrap().v);
        *g.diagonal_mut(u, e).unwrap() = vec![1.0, 0.9, 1e-6, 1e-7];
        *g.diagonal_mut(v, e).unwrap() = vec![1.0, 0.9, 1e-6, 1e-7];
        let sig = g.harden(1e-2, 0.5, 0.05).unwrap();
        assert_eq!(sig.ranks[&(u.0, v.0)], 2);
        // lowering the threshold never removes ranks
        let loose = g.harden(1e-8, 0.5, 0.05).unwrap();
        assert_eq!(loose.ranks[&(u.0, v.0)], 4);
    }

    #[test]
    fn validate_catches_bad_bond() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut g = TNGraph::preset(&[3, 3], TopologyPreset::Chain, 2, &mut rng).unwrap();
        g.edge_mut(EdgeId(0)).unwrap().bond_dim = 3;
        assert!(g.validate().is_err());
    }
}
