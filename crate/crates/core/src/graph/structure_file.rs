//! JSON serialization of a whole network, including gates, diagonals and
//! id counters. Floats round-trip exactly.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Core, Edge, EdgeId, NodeId, TNGraph};
use crate::error::{Result, RgtnError};
use crate::tensor::DenseTensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoreRecord {
    pub id: usize,
    pub physical: Vec<usize>,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub id: usize,
    pub u: usize,
    pub v: usize,
    pub bond_dim: usize,
    pub gate_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagonalRecord {
    pub owner: usize,
    pub bond: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureFile {
    pub format: String,
    pub external_shape: Vec<usize>,
    pub cores: Vec<CoreRecord>,
    pub edges: Vec<EdgeRecord>,
    pub diagonals: Vec<DiagonalRecord>,
    pub next_node: usize,
    pub next_edge: usize,
}

const FORMAT: &str = "rgtn-structure-v1";

impl From<&TNGraph> for StructureFile {
    fn from(g: &TNGraph) -> Self {
        StructureFile {
            format: FORMAT.into(),
            external_shape: g.external_shape.clone(),
            cores: g
                .cores
                .values()
                .map(|c| CoreRecord {
                    id: c.id.0,
                    physical: c.physical.clone(),
                    shape: c.tensor.shape().to_vec(),
                    data: c.tensor.data().to_vec(),
                })
                .collect(),
            edges: g
                .edges
                .values()
                .map(|e| EdgeRecord {
                    id: e.id.0,
                    u: e.u.0,
                    v: e.v.0,
                    bond_dim: e.bond_dim,
                    gate_weight: e.gate_weight,
                })
                .collect(),
            diagonals: g
                .diagonals
                .iter()
                .map(|(&(n, e), v)| DiagonalRecord { owner: n.0, bond: e.0, values: v.clone() })
                .collect(),
            next_node: g.next_node,
            next_edge: g.next_edge,
        }
    }
}

impl StructureFile {
    pub fn into_graph(self) -> Result<TNGraph> {
        if self.format != FORMAT {
            return Err(RgtnError::Format(format!("unknown structure format {:?}", self.format)));
        }
        let mut g = TNGraph::new(self.external_shape);
        for c in self.cores {
            let id = NodeId(c.id);
            let tensor = DenseTensor::new(c.shape, c.data).map_err(|e| RgtnError::Format(e.to_string()))?;
            if g.cores.insert(id, Core { id, tensor, physical: c.physical }).is_some() {
                return Err(RgtnError::Format(format!("duplicate core {id}")));
            }
        }
        for e in self.edges {
            let id = EdgeId(e.id);
            let edge = Edge { id, u: NodeId(e.u), v: NodeId(e.v), bond_dim: e.bond_dim, gate_weight: e.gate_weight };
            if g.edges.insert(id, edge).is_some() {
                return Err(RgtnError::Format(format!("duplicate edge {id}")));
            }
        }
        for d in self.diagonals {
            g.diagonals.insert((NodeId(d.owner), EdgeId(d.bond)), d.values);
        }
        let max_node = g.cores.keys().last().map_or(0, |n| n.0 + 1);
        let max_edge = g.edges.keys().last().map_or(0, |e| e.0 + 1);
        g.next_node = self.next_node.max(max_node);
        g.next_edge = self.next_edge.max(max_edge);
        g.validate().map_err(|e| RgtnError::Format(e.to_string()))?;
        Ok(g)
    }
}

pub fn save_structure(path: impl AsRef<Path>, g: &TNGraph) -> Result<()> {
    let json = serde_json::to_string_pretty(&StructureFile::from(g))
        .map_err(|e| RgtnError::Format(e.to_string()))?;
    fs::write(path, json)?;
    Ok(())
}

pub fn load_structure(path: impl AsRef<Path>) -> Result<TNGraph> {
    let text = fs::read_to_string(path)?;
    let file: StructureFile = serde_json::from_str(&text).map_err(|e| RgtnError::Format(e.to_string()))?;
    file.into_graph()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::TopologyPreset;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut g = TNGraph::preset(&[3, 4, 5], TopologyPreset::Ring, 3, &mut rng).unwrap();
        g.edge_mut(EdgeId(1)).unwrap().gate_weight = -0.123_456_789_012_345_67;
        *g.diagonal_mut(NodeId(0), EdgeId(0)).unwrap() = vec![1e-300, std::f64::consts::PI, -0.0];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.json");
        save_structure(&path, &g).unwrap();
        let back = load_structure(&path).unwrap();
        assert_eq!(back, g);
        for (a, b) in g.cores().zip(back.cores()) {
            for (x, y) in a.tensor.data().iter().zip(b.tensor.data()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn rejects_inconsistent_file() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = TNGraph::preset(&[3, 4], TopologyPreset::Chain, 2, &mut rng).unwrap();
        let mut f = StructureFile::from(&g);
        f.edges[0].bond_dim = 5;
        assert!(matches!(f.into_graph(), Err(RgtnError::Format(_))));
    }
}
