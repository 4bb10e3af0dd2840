//! Comparing discovered structures with ground truth, and the repeated
//! trial harness that scores structure recovery.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::graph::StructureSignature;
use crate::objective::Problem;
use crate::search::{rg_search, Init, RGConfig};
use crate::synth::{add_noise, gen_structure, realize, TruthSpec};
use crate::tensor::frobenius_norm;

/// Edges of rank >= 2 keyed by the physical modes of their endpoints.
/// `None` when some node does not carry exactly one physical mode.
fn mode_edges(sig: &StructureSignature) -> Option<BTreeMap<(usize, usize), usize>> {
    let mut mode_of = BTreeMap::new();
    for (&n, phys) in &sig.physical {
        if phys.len() != 1 {
            return None;
        }
        mode_of.insert(n, phys[0]);
    }
    let mut out = BTreeMap::new();
    for (&(a, b), &r) in &sig.ranks {
        if r < 2 {
            continue;
        }
        let (ma, mb) = (*mode_of.get(&a)?, *mode_of.get(&b)?);
        out.insert((ma.min(mb), ma.max(mb)), r);
    }
    Some(out)
}

/// True iff both signatures have the same adjacency (nodes identified
/// by their physical mode, rank-1 edges treated as absent) and every
/// shared edge's rank is within `rank_tol` of the truth.
pub fn compare(found: &StructureSignature, truth: &StructureSignature, rank_tol: usize) -> bool {
    if found.node_count != truth.node_count {
        return false;
    }
    let (Some(f), Some(t)) = (mode_edges(found), mode_edges(truth)) else {
        return false;
    };
    let fk: BTreeSet<_> = f.keys().collect();
    let tk: BTreeSet<_> = t.keys().collect();
    fk == tk && f.iter().all(|(k, &r)| r.abs_diff(t[k]) <= rank_tol)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedSpec {
    pub id: String,
    pub spec: TruthSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub spec_id: String,
    pub trial: usize,
    pub seed: u64,
    pub found: Option<StructureSignature>,
    pub truth: StructureSignature,
    pub matched: bool,
    pub re_final: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecResult {
    pub spec_id: String,
    pub trials: usize,
    pub matches: usize,
    pub fraction: f64,
    pub outcomes: Vec<TrialOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSetup {
    pub trials: usize,
    pub rank_tol: usize,
    /// Noise norm relative to the clean tensor's norm.
    pub noise_rel: f64,
}

impl Default for TrialSetup {
    fn default() -> Self {
        Self { trials: 20, rank_tol: 1, noise_rel: 0.0 }
    }
}

/// Seed of trial `k` of a spec.
pub fn trial_seed(base: u64, k: usize) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k as u64 + 1)
}

fn run_trial(named: &NamedSpec, k: usize, setup: &TrialSetup, cfg: &RGConfig) -> TrialOutcome {
    let seed = trial_seed(named.spec.seed, k);
    let spec = named.spec.with_seed(seed);
    let mut outcome = TrialOutcome {
        spec_id: named.id.clone(),
        trial: k,
        seed,
        found: None,
        truth: StructureSignature { node_count: 0, physical: BTreeMap::new(), ranks: BTreeMap::new() },
        matched: false,
        re_final: f64::NAN,
        error: None,
    };
    let result = (|| -> crate::Result<()> {
        let truth = gen_structure(&spec)?;
        outcome.truth = truth.harden(1e-12, 0.5, crate::search::TAU_FLOOR)?;
        let clean = realize(&truth)?;
        let data = add_noise(&clean, setup.noise_rel * frobenius_norm(&clean), seed ^ 0x5EED)?;
        let cfg = RGConfig { seed, ..cfg.clone() };
        let out = rg_search(&Problem::full(data), &cfg, Init::Preset)?;
        let tau = out.report.best_tau;
        outcome.re_final = crate::metrics::relative_error(&clean, &out.best.reconstruct(tau)?)?;
        let found = out.best.harden(cfg.eps_diag, cfg.delta_gate, tau)?;
        outcome.matched = compare(&found, &outcome.truth, setup.rank_tol);
        outcome.found = Some(found);
        if let Some(msg) = out.report.aborted {
            outcome.error = Some(msg);
        }
        Ok(())
    })();
    if let Err(e) = result {
        outcome.error = Some(e.to_string());
        outcome.matched = false;
    }
    outcome
}

/// Runs `setup.trials` searches per spec, each on a fresh tensor drawn
/// from the spec's topology, and reports the matched fraction. Trials
/// run on the current rayon pool; failed runs count as unmatched.
pub fn success_rate(specs: &[NamedSpec], setup: &TrialSetup, cfg: &RGConfig) -> Vec<SpecResult> {
    let jobs: Vec<(usize, usize)> = (0..specs.len()).flat_map(|s| (0..setup.trials).map(move |k| (s, k))).collect();
    let outcomes: Vec<TrialOutcome> = jobs.par_iter().map(|&(s, k)| run_trial(&specs[s], k, setup, cfg)).collect();
    specs
        .iter()
        .map(|named| {
            let mine: Vec<TrialOutcome> = outcomes.iter().filter(|o| o.spec_id == named.id).cloned().collect();
            let matches = mine.iter().filter(|o| o.matched).count();
            SpecResult {
                spec_id: named.id.clone(),
                trials: mine.len(),
                matches,
                fraction: if mine.is_empty() { 0.0 } else { matches as f64 / mine.len() as f64 },
                outcomes: mine,
            }
        })
        .collect()
}

/// Five 4th-order topologies standing in for the reference diagrams:
/// ring, chain, star, a triangle with a pendant (4 edges) and a ring
/// with one chord (5 edges).
pub fn fourth_order_specs(dims: [usize; 4], seed: u64) -> Vec<NamedSpec> {
    let topologies: [(&str, Vec<(usize, usize)>); 5] = [
        ("ring", vec![(0, 1), (1, 2), (2, 3), (0, 3)]),
        ("chain", vec![(0, 1), (1, 2), (2, 3)]),
        ("star", vec![(0, 1), (0, 2), (0, 3)]),
        ("triangle-pendant", vec![(0, 1), (1, 2), (0, 2), (2, 3)]),
        ("ring-chord", vec![(0, 1), (1, 2), (2, 3), (0, 3), (0, 2)]),
    ];
    topologies
        .into_iter()
        .enumerate()
        .map(|(i, (id, edges))| NamedSpec {
            id: id.to_string(),
            spec: TruthSpec { dims: dims.to_vec(), edges, bond_range: (2, 3), seed: seed + i as u64 },
        })
        .collect()
}
