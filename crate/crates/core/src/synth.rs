//! Ground-truth networks, observation masks and noise for experiments.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RgtnError};
use crate::graph::{TNGraph, TopologyPreset};
use crate::search::TAU_FLOOR;
use crate::tensor::{frobenius_norm, DenseTensor};

/// Gate weight of ground-truth edges; saturates to exactly 1 at the
/// temperature floor.
pub const TRUTH_GATE_WEIGHT: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthSpec {
    pub dims: Vec<usize>,
    pub edges: Vec<(usize, usize)>,
    /// Inclusive range the bond dimensions are drawn from.
    pub bond_range: (usize, usize),
    pub seed: u64,
}

impl TruthSpec {
    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.bond_range;
        if lo == 0 || lo > hi {
            return Err(RgtnError::InvalidArgument(format!("bond range ({lo}, {hi})")));
        }
        if self.dims.is_empty() || self.dims.contains(&0) {
            return Err(RgtnError::InvalidShape(format!("{:?}", self.dims)));
        }
        let n = self.order();
        let mut seen = std::collections::BTreeSet::new();
        for &(a, b) in &self.edges {
            if a >= n || b >= n || a == b || !seen.insert((a.min(b), a.max(b))) {
                return Err(RgtnError::InvalidArgument(format!("edge ({a}, {b}) in an order-{n} spec")));
            }
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    /// Ring over `(7, 8, 7, 8, 7, 8)` with bonds in {2, 3}.
    pub fn sixth_order(seed: u64) -> Self {
        Self {
            dims: vec![7, 8, 7, 8, 7, 8],
            edges: TopologyPreset::Ring.edges(6),
            bond_range: (2, 3),
            seed,
        }
    }

    /// Ring over `(7, 8) x 4` with 8 edges and bonds in {2, 3}.
    pub fn eighth_order(seed: u64) -> Self {
        Self {
            dims: vec![7, 8, 7, 8, 7, 8, 7, 8],
            edges: TopologyPreset::Ring.edges(8),
            bond_range: (2, 3),
            seed,
        }
    }
}

/// One core per mode joined by the spec's edges, bonds drawn uniformly
/// from the range, gates hard on.
pub fn gen_structure(spec: &TruthSpec) -> Result<TNGraph> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (lo, hi) = spec.bond_range;
    let bonds: Vec<usize> = spec.edges.iter().map(|_| rng.random_range(lo..=hi)).collect();
    TNGraph::random(&spec.dims, &spec.edges, &bonds, TRUTH_GATE_WEIGHT, &mut rng)
}

/// Dense tensor of a ground-truth network.
pub fn realize(g: &TNGraph) -> Result<DenseTensor> {
    g.reconstruct(TAU_FLOOR)
}

/// Indicator with exactly `round((1 - missing) * numel)` ones.
pub fn gen_mask(shape: &[usize], missing_fraction: f64, seed: u64) -> Result<DenseTensor> {
    if !(0.0..1.0).contains(&missing_fraction) {
        return Err(RgtnError::InvalidArgument(format!("missing fraction {missing_fraction} outside [0, 1)")));
    }
    let numel: usize = shape.iter().product();
    let observed = ((1.0 - missing_fraction) * numel as f64).round() as usize;
    let mut mask = DenseTensor::zeros(shape);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in index::sample(&mut rng, numel, observed.min(numel)) {
        mask.data_mut()[i] = 1.0;
    }
    Ok(mask)
}

/// Adds Gaussian noise rescaled to Frobenius norm exactly `sigma`.
pub fn add_noise(t: &DenseTensor, sigma: f64, seed: u64) -> Result<DenseTensor> {
    if !(sigma >= 0.0) {
        return Err(RgtnError::InvalidArgument(format!("noise level {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(t.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = DenseTensor::from_fn(t.shape(), |_| rng.sample(StandardNormal));
    let scale = sigma / frobenius_norm(&noise);
    t.zip_map(&noise, |a, n| a + scale * n)
}

/// Shape of the synthetic video: frames, height, width, channels.
pub const VIDEO_SHAPE: [usize; 4] = [20, 32, 32, 3];

/// A smooth, positive tensor-ring video with the given rank, rescaled
/// to [0, 255].
pub fn synthetic_video(rank: usize, seed: u64) -> Result<DenseTensor> {
    if rank == 0 {
        return Err(RgtnError::InvalidArgument("video rank must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let edges = TopologyPreset::Ring.edges(VIDEO_SHAPE.len());
    let bonds = vec![rank; edges.len()];
    let mut g = TNGraph::random(&VIDEO_SHAPE, &edges, &bonds, TRUTH_GATE_WEIGHT, &mut rng)?;
    // each core slice along its physical mode is a positive smooth profile
    for n in g.node_ids() {
        let core = g.core_mut(n)?;
        let shape = core.tensor.shape().to_vec();
        let len = *shape.last().expect("core has a physical leg");
        let fibers = core.tensor.numel() / len;
        let params: Vec<(f64, f64, f64)> = (0..fibers)
            .map(|_| (rng.random_range(0.5..1.5), rng.random_range(0.5..2.0), rng.random_range(0.0..std::f64::consts::TAU)))
            .collect();
        let data = core.tensor.data_mut();
        for (f, &(base, freq, phase)) in params.iter().enumerate() {
            for i in 0..len {
                let x = i as f64 / len as f64;
                data[f * len + i] = base + 0.4 * (std::f64::consts::TAU * freq * x + phase).sin();
            }
        }
    }
    let x = realize(&g)?;
    let (lo, hi) = x.data().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    if !(hi > lo) {
        return Err(RgtnError::Invariant("constant synthetic video".into()));
    }
    Ok(x.map(|v| 255.0 * (v - lo) / (hi - lo)))
}
