//! Tensor-ring alternating least squares on a fixed ring topology.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::als;
use crate::error::{Result, RgtnError};
use crate::graph::{TNGraph, TopologyPreset, HARD_EDGE_WEIGHT};
use crate::metrics::EvalReport;
use crate::objective::Problem;
use crate::search::TAU_FLOOR;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RingSpec {
    /// Bond dimension per ring edge, in ring edge order.
    pub ranks: Vec<usize>,
    pub max_iters: usize,
    /// Stop once a sweep improves the relative error by less.
    pub tol: f64,
}

impl RingSpec {
    pub fn uniform(order: usize, rank: usize, max_iters: usize, tol: f64) -> Self {
        Self { ranks: vec![rank; TopologyPreset::Ring.edges(order).len()], max_iters, tol }
    }
}

#[derive(Debug, Clone)]
pub struct TrAlsOutcome {
    pub graph: TNGraph,
    pub report: EvalReport,
    /// Relative error after each sweep.
    pub trace: Vec<f64>,
}

/// Fits a ring of the given ranks by least-squares sweeps. The reported
/// error is the masked relative error on the observed entries.
pub fn tr_als(p: &Problem, spec: &RingSpec, seed: u64) -> Result<TrAlsOutcome> {
    p.validate()?;
    let shape = p.data.shape().to_vec();
    let edges = TopologyPreset::Ring.edges(shape.len());
    if spec.ranks.len() != edges.len() {
        return Err(RgtnError::InvalidArgument(format!(
            "{} ranks for a ring with {} edges",
            spec.ranks.len(),
            edges.len()
        )));
    }
    let clock = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = TNGraph::random(&shape, &edges, &spec.ranks, HARD_EDGE_WEIGHT, &mut rng)?;
    let trace = als::fit(&mut g, p, TAU_FLOOR, spec.max_iters, spec.tol, als::DEFAULT_RIDGE)?;
    let re = match trace.last() {
        Some(&re) => re,
        None => p.masked_relative_error(&g.reconstruct(TAU_FLOOR)?),
    };
    let report = EvalReport {
        re,
        cr_percent: g.compression_ratio(),
        mpsnr_db: None,
        per_frame_psnr: None,
        wall_seconds: clock.elapsed().as_secs_f64(),
    };
    Ok(TrAlsOutcome { graph: g, report, trace })
}

/// Raises a uniform ring rank from 1 until the fit meets `re_bound`;
/// returns the first success and its rank, or `None` past `max_rank`.
pub fn rank_schedule(
    p: &Problem,
    re_bound: f64,
    max_rank: usize,
    max_iters: usize,
    tol: f64,
    seed: u64,
) -> Result<Option<(usize, TrAlsOutcome)>> {
    let clock = Instant::now();
    for r in 1..=max_rank {
        let spec = RingSpec::uniform(p.data.order(), r, max_iters, tol);
        let mut out = tr_als(p, &spec, seed)?;
        if out.report.re <= re_bound {
            // time to reach the bound includes the failed ranks
            out.report.wall_seconds = clock.elapsed().as_secs_f64();
            return Ok(Some((r, out)));
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{gen_structure, realize, TruthSpec};

    fn ring_problem(seed: u64) -> Problem {
        let spec = TruthSpec {
            dims: vec![5, 6, 5, 6],
            edges: TopologyPreset::Ring.edges(4),
            bond_range: (2, 2),
            seed,
        };
        Problem::full(realize(&gen_structure(&spec).unwrap()).unwrap())
    }

    #[test]
    fn matching_ranks_fit_exactly() {
        let p = ring_problem(4);
        let out = tr_als(&p, &RingSpec::uniform(4, 2, 50, 0.0), 11).unwrap();
        assert!(out.report.re <= 1e-6, "{:?}", out.trace);
        for w in out.trace.windows(2) {
            // normalized least-squares objective, with solver slack
            assert!(w[1] * w[1] <= w[0] * w[0] + 1e-10, "{:?}", out.trace);
        }
    }

    #[test]
    fn rank_one_is_worse() {
        let p = ring_problem(6);
        let one = tr_als(&p, &RingSpec::uniform(4, 1, 30, 0.0), 1).unwrap();
        let two = tr_als(&p, &RingSpec::uniform(4, 2, 50, 0.0), 1).unwrap();
        assert!(one.report.re > two.report.re);
    }

    #[test]
    fn wrong_rank_count_is_rejected() {
        let p = ring_problem(1);
        assert!(tr_als(&p, &RingSpec { ranks: vec![2; 3], max_iters: 1, tol: 0.0 }, 0).is_err());
    }
}
