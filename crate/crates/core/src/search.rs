//! The multi-scale search: node tension and edge flow scores, percentile
//! proposal rules, scale-dependent Adam, and the coarse-to-fine loop with
//! expansion and compression phases.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{als, lm};
use crate::error::{Result, RgtnError};
use crate::graph::{default_partition, gate, EdgeId, NodeId, TNGraph, TopologyPreset};
use crate::linalg::singular_values;
use crate::objective::{couplings_at_scale, data_gradient, grad_total_loss, total_loss, CouplingConstants, LossBreakdown, Problem};
use crate::scale::{coarse_grain, coarse_grain_observed, coarsen_network, default_spatial_modes, refine_network, ScaleLevel};
use crate::tensor::{contract_unchecked, DenseTensor, Matrix};

/// Lower bound of the annealed temperature.
pub const TAU_FLOOR: f64 = 1e-3;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitConfig {
    pub topology: TopologyPreset,
    pub bond_dim: usize,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self { topology: TopologyPreset::Ring, bond_dim: 2 }
    }
}

/// Least-squares refits run after each proposal's gradient epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefitConfig {
    /// Sweeps after each proposal and after each refinement; 0 disables.
    pub sweeps: usize,
    /// Sweeps for the very first network at the coarsest scale.
    pub initial_sweeps: usize,
    /// Independent starts for a preset initial network; the best fit wins.
    pub restarts: usize,
    /// Gauss-Newton steps each start gets before the best is chosen.
    pub screen_iters: usize,
    /// Damped Gauss-Newton steps after the sweeps; 0 disables.
    pub gn_iters: usize,
    /// Stop when a sweep improves the masked relative error by less.
    pub tol: f64,
    /// Refits stop once the masked relative error is this small.
    pub re_floor: f64,
    pub ridge: f64,
}

impl Default for RefitConfig {
    fn default() -> Self {
        Self { sweeps: 10, initial_sweeps: 50, restarts: 1, screen_iters: 20, gn_iters: 100, tol: 1e-10, re_floor: 1e-6, ridge: als::DEFAULT_RIDGE }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RGConfig {
    /// Coarsest scale index; the search runs `scales`, ..., 0.
    pub scales: u32,
    pub expand_steps: usize,
    pub compress_steps: usize,
    pub epochs_expand: usize,
    pub epochs_compress: usize,
    pub epochs_refine: usize,
    pub eta0_cores: f64,
    pub s0: f64,
    pub eta0_struct: f64,
    pub s1: f64,
    pub tau0: f64,
    pub t0: f64,
    pub svd_threshold: f64,
    pub tension_percentile: f64,
    pub flow_percentile: f64,
    pub eps_diag: f64,
    pub delta_gate: f64,
    pub seed: u64,
    /// Pooled modes; modes of size >= 16 when absent.
    pub spatial_modes: Option<Vec<usize>>,
    /// Observed fraction a pooled cell needs to count as observed.
    pub mask_min_fraction: f64,
    pub init: InitConfig,
    /// Order compressions by a short refit of every candidate instead of
    /// by information flow.
    pub screen_compressions: bool,
    /// How many of the lowest-flow tied screened compressions are ranked
    /// by a one-step lookahead; below 2 disables it.
    pub screen_lookahead: usize,
    pub refit: RefitConfig,
    pub couplings: CouplingConstants,
}

impl Default for RGConfig {
    fn default() -> Self {
        Self {
            scales: 2,
            expand_steps: 20,
            compress_steps: 20,
            epochs_expand: 30,
            epochs_compress: 30,
            epochs_refine: 100,
            eta0_cores: 0.001,
            s0: 2.0,
            eta0_struct: 0.0001,
            s1: 3.0,
            tau0: 0.5,
            t0: 100.0,
            svd_threshold: 1e-3,
            tension_percentile: 80.0,
            flow_percentile: 20.0,
            eps_diag: 1e-2,
            delta_gate: 0.5,
            seed: 0,
            spatial_modes: None,
            mask_min_fraction: crate::scale::DEFAULT_MASK_FRACTION,
            init: InitConfig::default(),
            screen_compressions: false,
            screen_lookahead: 0,
            refit: RefitConfig::default(),
            couplings: CouplingConstants::default(),
        }
    }
}

impl RGConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(RgtnError::InvalidArgument(what.to_string()));
        for (name, p) in [("tension_percentile", self.tension_percentile), ("flow_percentile", self.flow_percentile)] {
            if !(p > 0.0 && p < 100.0) {
                return bad(&format!("{name} must lie in (0, 100)"));
            }
        }
        let positive = [
            ("eta0_cores", self.eta0_cores),
            ("s0", self.s0),
            ("eta0_struct", self.eta0_struct),
            ("s1", self.s1),
            ("tau0", self.tau0),
            ("t0", self.t0),
            ("eps_diag", self.eps_diag),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return bad(&format!("{name} must be positive"));
            }
        }
        if !(self.delta_gate > 0.0 && self.delta_gate < 1.0) {
            return bad("delta_gate must lie in (0, 1)");
        }
        if !(self.svd_threshold >= 0.0) {
            return bad("svd_threshold must be >= 0");
        }
        if !(0.0..=1.0).contains(&self.mask_min_fraction) {
            return bad("mask_min_fraction must lie in [0, 1]");
        }
        if self.init.bond_dim == 0 {
            return bad("init.bond_dim must be >= 1");
        }
        if self.refit.restarts == 0 {
            return bad("refit.restarts must be >= 1");
        }
        if !(self.refit.tol >= 0.0) || !(self.refit.re_floor >= 0.0) || !(self.refit.ridge >= 0.0) {
            return bad("refit tolerances must be >= 0");
        }
        self.couplings.validate()
    }

    fn spatial_set(&self, shape: &[usize]) -> BTreeSet<usize> {
        match &self.spatial_modes {
            Some(m) => m.iter().copied().collect(),
            None => default_spatial_modes(shape).into_iter().collect(),
        }
    }
}

/// `(eta_cores, eta_struct)` at scale `s`.
pub fn learning_rates(s: u32, cfg: &RGConfig) -> (f64, f64) {
    let s = s as f64;
    (cfg.eta0_cores * (-s / cfg.s0).exp(), cfg.eta0_struct * (1.0 + s / cfg.s1))
}

/// Annealed temperature at global step `t`, floored at 1e-3.
pub fn temperature(t: usize, cfg: &RGConfig) -> f64 {
    (cfg.tau0 * (-(t as f64) / cfg.t0).exp()).max(TAU_FLOOR)
}

/// Data-gradient norm of each core times its degree.
pub fn node_tension(g: &TNGraph, data_grads: &crate::objective::GradientBundle) -> BTreeMap<NodeId, f64> {
    g.node_ids()
        .into_iter()
        .map(|n| {
            let norm = data_grads.cores.get(&n).map_or(0.0, |t| t.squared_norm().sqrt());
            (n, norm * g.degree(n) as f64)
        })
        .collect()
}

/// Entropy of the normalized squared singular values of the two
/// effective endpoint cores contracted over `e` (gate excluded).
pub fn schmidt_entropy(g: &TNGraph, e: EdgeId) -> Result<f64> {
    let edge = g.edge(e)?;
    if edge.bond_dim == 1 {
        return Ok(0.0);
    }
    let ku = g.bond_mode(edge.u, e)?;
    let kv = g.bond_mode(edge.v, e)?;
    let a = g.effective(edge.u)?;
    let b = g.effective(edge.v)?;
    let theta = contract_unchecked(&a, &[ku], &b, &[kv]);
    let rows = a.numel() / a.shape()[ku];
    let m = Matrix { rows, cols: theta.numel() / rows, data: theta.into_data() };
    Ok(spectrum_entropy(&singular_values(&m)))
}

pub(crate) fn spectrum_entropy(sigma: &[f64]) -> f64 {
    let total: f64 = sigma.iter().map(|s| s * s).sum();
    if total == 0.0 {
        return 0.0;
    }
    sigma
        .iter()
        .map(|s| s * s / total)
        .filter(|&p| p > 0.0)
        .map(|p| -p * p.ln())
        .sum::<f64>()
        .max(0.0)
}

/// Gate value times Schmidt entropy for every edge.
pub fn edge_flow(g: &TNGraph, tau: f64) -> Result<BTreeMap<EdgeId, f64>> {
    g.edge_ids()
        .into_iter()
        .map(|e| Ok((e, gate(g.edge(e)?.gate_weight, tau)? * schmidt_entropy(g, e)?)))
        .collect()
}

/// Percentile with linear interpolation between order statistics.
pub fn percentile(values: &[f64], p: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let rank = p / 100.0 * (v.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    Some(v[lo] + (rank - lo as f64) * (v[hi] - v[lo]))
}

/// The highest-tension splittable node if its tension strictly exceeds
/// the `pct` percentile of the given tensions. A lone candidate is
/// always returned.
pub fn propose_expansion(g: &TNGraph, tensions: &BTreeMap<NodeId, f64>, pct: f64) -> Option<NodeId> {
    let candidates: Vec<(NodeId, f64)> = tensions
        .iter()
        .filter(|(n, _)| g.core(**n).is_ok_and(|c| c.tensor.order() >= 2) && default_partition(g, **n).is_some())
        .map(|(&n, &t)| (n, t))
        .collect();
    let (best, score) = candidates.iter().fold(None, |acc: Option<(NodeId, f64)>, &(n, t)| match acc {
        Some((_, bt)) if bt >= t => acc,
        _ => Some((n, t)),
    })?;
    if tensions.len() == 1 {
        return Some(best);
    }
    let all: Vec<f64> = tensions.values().copied().collect();
    let cut = percentile(&all, pct)?;
    (score > cut).then_some(best)
}

/// The lowest-flow edge if its flow is strictly below the `pct`
/// percentile of the given flows. A lone candidate is always returned.
pub fn propose_compression(g: &TNGraph, flows: &BTreeMap<EdgeId, f64>, pct: f64) -> Option<EdgeId> {
    let (best, score) = flows
        .iter()
        .filter(|(e, _)| g.edge(**e).is_ok())
        .fold(None, |acc: Option<(EdgeId, f64)>, (&e, &f)| match acc {
            Some((_, bf)) if bf <= f => acc,
            _ => Some((e, f)),
        })?;
    if flows.len() == 1 {
        return Some(best);
    }
    let all: Vec<f64> = flows.values().copied().collect();
    let cut = percentile(&all, pct)?;
    (score < cut).then_some(best)
}

/// Result of a run of gradient steps.
#[derive(Debug, Clone)]
pub struct OptimizeOutcome {
    pub graph: TNGraph,
    /// Loss of the returned graph at the temperature after the last step.
    pub loss: LossBreakdown,
    pub steps: usize,
    /// Total loss before each step.
    pub trace: Vec<f64>,
    /// Set when a non-finite loss or gradient stopped the run early.
    pub diagnostic: Option<String>,
}

fn flatten(g: &TNGraph) -> Vec<f64> {
    let mut out = Vec::new();
    for c in g.cores() {
        out.extend_from_slice(c.tensor.data());
    }
    for d in g.diagonals() {
        out.extend_from_slice(&d.values);
    }
    for e in g.edges() {
        out.push(e.gate_weight);
    }
    out
}

fn flatten_grad(g: &TNGraph, grad: &crate::objective::GradientBundle) -> (Vec<f64>, usize) {
    let mut out = Vec::new();
    for c in g.cores() {
        out.extend_from_slice(grad.cores[&c.id].data());
    }
    let core_len = out.len();
    for d in g.diagonals() {
        out.extend_from_slice(&grad.diagonals[&(d.owner, d.bond)]);
    }
    for e in g.edges() {
        out.push(grad.gate_weights[&e.id]);
    }
    (out, core_len)
}

fn unflatten(g: &mut TNGraph, params: &[f64]) {
    let mut pos = 0;
    for n in g.node_ids() {
        let core = g.core_mut(n).expect("node exists");
        let len = core.tensor.numel();
        core.tensor.data_mut().copy_from_slice(&params[pos..pos + len]);
        pos += len;
    }
    let keys: Vec<(NodeId, EdgeId)> = g.diagonals().map(|d| (d.owner, d.bond)).collect();
    for (n, e) in keys {
        let d = g.diagonal_mut(n, e).expect("diagonal exists");
        let len = d.len();
        d.copy_from_slice(&params[pos..pos + len]);
        pos += len;
    }
    for e in g.edge_ids() {
        g.edge_mut(e).expect("edge exists").gate_weight = params[pos];
        pos += 1;
    }
}

/// Full-gradient Adam with the scale's two learning rates (cores vs.
/// diagonals and gates); the temperature follows the global step
/// counter starting at `t0`. Moments start fresh on every call.
pub fn optimize(
    g: &TNGraph,
    p: &Problem,
    c: &CouplingConstants,
    epochs: usize,
    s: u32,
    cfg: &RGConfig,
    t0: usize,
) -> Result<OptimizeOutcome> {
    let (eta_c, eta_s) = learning_rates(s, cfg);
    let mut graph = g.clone();
    let mut params = flatten(&graph);
    let mut m = vec![0.0; params.len()];
    let mut v = vec![0.0; params.len()];
    let mut trace = Vec::with_capacity(epochs);
    let mut diagnostic = None;
    let mut steps = 0;
    for k in 0..epochs {
        let tau = temperature(t0 + k, cfg);
        let (loss, grad) = grad_total_loss(&graph, p, c, tau)?;
        if !loss.is_finite() || !grad.is_finite() {
            diagnostic = Some(format!("non-finite loss or gradient at step {}", t0 + k));
            break;
        }
        trace.push(loss.total);
        let (gvec, core_len) = flatten_grad(&graph, &grad);
        let step = (k + 1) as i32;
        let bc1 = 1.0 - ADAM_BETA1.powi(step);
        let bc2 = 1.0 - ADAM_BETA2.powi(step);
        let mut next = params.clone();
        for i in 0..next.len() {
            m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * gvec[i];
            v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * gvec[i] * gvec[i];
            let lr = if i < core_len { eta_c } else { eta_s };
            next[i] -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + ADAM_EPS);
        }
        if next.iter().any(|x| !x.is_finite()) {
            diagnostic = Some(format!("non-finite parameters at step {}", t0 + k));
            break;
        }
        params = next;
        unflatten(&mut graph, &params);
        steps += 1;
    }
    let loss = total_loss(&graph, p, c, temperature(t0 + steps, cfg))?;
    if !loss.is_finite() && diagnostic.is_none() {
        diagnostic = Some("non-finite final loss".into());
    }
    Ok(OptimizeOutcome { graph, loss, steps, trace, diagnostic })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProposalKind {
    Expand,
    Compress,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Node(usize),
    Edge(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalRecord {
    pub kind: ProposalKind,
    pub target: Target,
    pub score: f64,
    pub loss_before: f64,
    pub loss_after: f64,
    pub accepted: bool,
    pub scale: u32,
    pub step: usize,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleTrace {
    pub scale: u32,
    pub shape: Vec<usize>,
    /// Loss of the incumbent after each accepted state (including the
    /// state the scale starts from), each at the temperature it was
    /// compared at.
    pub accepted: Vec<LossBreakdown>,
    /// Running minimum of `accepted` totals.
    pub best_loss: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub id: usize,
    pub scale: u32,
    pub step: usize,
    /// Masked relative error at the finest scale.
    pub masked_re: f64,
    pub params: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RGReport {
    pub traces: Vec<ScaleTrace>,
    pub proposals: Vec<ProposalRecord>,
    pub snapshots: Vec<Snapshot>,
    pub best_snapshot: usize,
    /// Temperature at which the best network was recorded.
    pub best_tau: f64,
    pub steps: usize,
    pub phase_seconds: BTreeMap<String, f64>,
    pub aborted: Option<String>,
}

impl RGReport {
    /// Every accepted proposal strictly lowered the loss and every
    /// best-loss trace is non-increasing.
    pub fn check_contract(&self) -> std::result::Result<(), String> {
        for r in &self.proposals {
            if r.accepted && !(r.loss_after < r.loss_before) {
                return Err(format!("accepted proposal did not improve: {r:?}"));
            }
        }
        for t in &self.traces {
            if t.best_loss.windows(2).any(|w| w[1] > w[0]) {
                return Err(format!("best-loss trace rises at scale {}", t.scale));
            }
        }
        Ok(())
    }

    pub fn accepted_count(&self, kind: ProposalKind) -> usize {
        self.proposals.iter().filter(|r| r.accepted && r.kind == kind).count()
    }
}

/// Starting point of a search.
#[derive(Debug, Clone)]
pub enum Init {
    /// Built from `cfg.init` at the coarsest scale.
    Preset,
    /// A network over the finest shape; pooled down to the coarsest scale.
    Graph(TNGraph),
}

pub struct SearchOutcome {
    pub best: TNGraph,
    pub report: RGReport,
}

struct Phases(BTreeMap<String, f64>);

impl Phases {
    fn add(&mut self, name: &str, since: Instant) {
        *self.0.entry(name.to_string()).or_insert(0.0) += since.elapsed().as_secs_f64();
    }
}

/// Gradient epochs followed by least-squares refit sweeps.
#[allow(clippy::too_many_arguments)]
fn train(
    g: &TNGraph,
    p: &Problem,
    c: &CouplingConstants,
    epochs: usize,
    sweeps: usize,
    s: u32,
    cfg: &RGConfig,
    t: usize,
) -> Result<OptimizeOutcome> {
    let mut out = optimize(g, p, c, epochs, s, cfg, t)?;
    if out.diagnostic.is_some() || (sweeps == 0 && cfg.refit.gn_iters == 0) {
        return Ok(out);
    }
    let tau = temperature(t + out.steps, cfg);
    let mut refit = out.graph.clone();
    let fitted = als::fit(&mut refit, p, tau, sweeps, cfg.refit.tol, cfg.refit.ridge)
        .and_then(|_| lm::refine(&mut refit, p, tau, cfg.refit.gn_iters, cfg.refit.tol, cfg.refit.re_floor));
    match fitted {
        Ok(_) => {
            let loss = total_loss(&refit, p, c, tau)?;
            if loss.is_finite() {
                out.graph = refit;
                out.loss = loss;
            }
        }
        Err(RgtnError::NonFinite(msg)) => out.diagnostic = Some(msg),
        Err(e) => return Err(e),
    }
    Ok(out)
}

fn problem_at(fine: &Problem, level: &ScaleLevel, min_fraction: f64) -> Result<Problem> {
    let (data, mask) = match &fine.mask {
        Some(m) => {
            let (d, m) = coarse_grain_observed(&fine.data, m, level, min_fraction)?;
            (d, Some(m))
        }
        None => (coarse_grain(&fine.data, level)?, None),
    };
    Ok(Problem { data, mask, temporal_mode: fine.temporal_mode, spatial_modes: fine.spatial_modes })
}

/// The network moved from scale `s` down to scale 0.
fn lift_to_finest(g: &TNGraph, s: u32, spatial: &BTreeSet<usize>, shapes: &[Vec<usize>]) -> Result<TNGraph> {
    let mut out = g.clone();
    for k in (1..=s).rev() {
        let from = ScaleLevel { s: k, spatial_modes: spatial.clone() };
        let to = ScaleLevel { s: k - 1, spatial_modes: spatial.clone() };
        out = refine_network(&out, &from, &to, &shapes[(k - 1) as usize])?;
    }
    Ok(out)
}

/// Search state shared across phases of one run.
struct Run<'a> {
    cfg: &'a RGConfig,
    fine: &'a Problem,
    spatial: BTreeSet<usize>,
    shapes: Vec<Vec<usize>>,
    t: usize,
    report: RGReport,
    best: Option<(TNGraph, f64)>,
    phases: Phases,
}

impl Run<'_> {
    fn record_best(&mut self, g: &TNGraph, s: u32) -> Result<()> {
        let lifted = lift_to_finest(g, s, &self.spatial, &self.shapes)?;
        let tau = temperature(self.t, self.cfg);
        let re = self.fine.masked_relative_error(&lifted.reconstruct(tau)?);
        let id = self.report.snapshots.len();
        self.report.snapshots.push(Snapshot { id, scale: s, step: self.t, masked_re: re, params: lifted.param_count() });
        let better = match &self.best {
            None => true,
            Some((_, b)) => re < *b,
        };
        if better && re.is_finite() {
            self.best = Some((lifted, re));
            self.report.best_snapshot = id;
            self.report.best_tau = tau;
        }
        Ok(())
    }

    /// Gives the incumbent the least-squares refit a proposal gets at
    /// temperature `tau`, keeping it only when it lowers the total loss.
    fn refit_incumbent(&self, g: &mut TNGraph, p: &Problem, c: &CouplingConstants, tau: f64) -> Result<LossBreakdown> {
        let cfg = self.cfg;
        let current = total_loss(g, p, c, tau)?;
        if cfg.refit.sweeps == 0 && cfg.refit.gn_iters == 0 {
            return Ok(current);
        }
        let mut refit = g.clone();
        let fitted = als::fit(&mut refit, p, tau, cfg.refit.sweeps, cfg.refit.tol, cfg.refit.ridge)
            .and_then(|_| lm::refine(&mut refit, p, tau, cfg.refit.gn_iters, cfg.refit.tol, cfg.refit.re_floor));
        match fitted {
            Ok(_) => {
                let loss = total_loss(&refit, p, c, tau)?;
                if loss.total < current.total {
                    *g = refit;
                    return Ok(loss);
                }
                Ok(current)
            }
            Err(RgtnError::NonFinite(_)) => Ok(current),
            Err(e) => Err(e),
        }
    }

    /// Optimizes a proposal and compares it with the refit incumbent at
    /// the same temperature. Returns the new incumbent loss when accepted.
    #[allow(clippy::too_many_arguments)]
    fn try_proposal(
        &mut self,
        incumbent: &mut TNGraph,
        candidate: TNGraph,
        p: &Problem,
        c: &CouplingConstants,
        epochs: usize,
        s: u32,
        mut record: ProposalRecord,
    ) -> Result<Option<LossBreakdown>> {
        let out = train(&candidate, p, c, epochs, self.cfg.refit.sweeps, s, self.cfg, self.t)?;
        self.t += out.steps;
        let tau = temperature(self.t, self.cfg);
        let before = self.refit_incumbent(incumbent, p, c, tau)?;
        record.loss_before = before.total;
        record.loss_after = out.loss.total;
        record.step = self.t;
        if let Some(msg) = &out.diagnostic {
            record.note = Some(msg.clone());
        }
        let accepted = out.diagnostic.is_none() && out.loss.total < before.total;
        record.accepted = accepted;
        self.report.proposals.push(record);
        if accepted {
            out.graph.validate()?;
            *incumbent = out.graph;
            Ok(Some(out.loss))
        } else {
            Ok(None)
        }
    }
}

fn push_accepted(trace: &mut ScaleTrace, loss: LossBreakdown) {
    let prev = trace.best_loss.last().copied().unwrap_or(f64::INFINITY);
    trace.accepted.push(loss);
    trace.best_loss.push(prev.min(loss.total));
}

/// Multi-scale structure search from scale `cfg.scales` down to 0.
pub fn rg_search(fine: &Problem, cfg: &RGConfig, init: Init) -> Result<SearchOutcome> {
    cfg.validate()?;
    fine.validate()?;
    let shape = fine.data.shape().to_vec();
    let spatial = cfg.spatial_set(&shape);
    if let Some(&k) = spatial.iter().find(|&&k| k >= shape.len()) {
        return Err(RgtnError::ModeOutOfRange { mode: k, order: shape.len() });
    }
    let shapes = crate::scale::ladder(&shape, &spatial, cfg.scales);
    let mut run = Run {
        cfg,
        fine,
        spatial: spatial.clone(),
        shapes,
        t: 0,
        report: RGReport {
            traces: Vec::new(),
            proposals: Vec::new(),
            snapshots: Vec::new(),
            best_snapshot: 0,
            best_tau: cfg.tau0,
            steps: 0,
            phase_seconds: BTreeMap::new(),
            aborted: None,
        },
        best: None,
        phases: Phases(BTreeMap::new()),
    };
    let top = ScaleLevel { s: cfg.scales, spatial_modes: spatial.clone() };
    let preset = matches!(init, Init::Preset);
    let mut g = match init {
        Init::Preset => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            TNGraph::preset(&run.shapes[cfg.scales as usize], cfg.init.topology, cfg.init.bond_dim, &mut rng)?
        }
        Init::Graph(g) => {
            if g.external_shape() != shape.as_slice() {
                return Err(RgtnError::DimensionMismatch(format!(
                    "initial network shape {:?} vs data shape {shape:?}",
                    g.external_shape()
                )));
            }
            coarsen_network(&g, &top)?
        }
    };

    let mut first = true;
    for s in (0..=cfg.scales).rev() {
        let level = ScaleLevel { s, spatial_modes: spatial.clone() };
        let p = problem_at(fine, &level, cfg.mask_min_fraction)?;
        let c = couplings_at_scale(&cfg.couplings, s);
        let mut trace = ScaleTrace { scale: s, shape: p.data.shape().to_vec(), accepted: Vec::new(), best_loss: Vec::new() };

        if first {
            let clock = Instant::now();
            let out = if preset && cfg.refit.restarts > 1 {
                // screen every start on a short budget, then finish the best
                let screen = RGConfig { refit: RefitConfig { gn_iters: cfg.refit.screen_iters, ..cfg.refit.clone() }, ..cfg.clone() };
                let mut best: Option<OptimizeOutcome> = None;
                for k in 0..cfg.refit.restarts {
                    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(k as u64));
                    let start = TNGraph::preset(p.data.shape(), cfg.init.topology, cfg.init.bond_dim, &mut rng)?;
                    let o = train(&start, &p, &c, cfg.epochs_refine, cfg.refit.initial_sweeps, s, &screen, run.t)?;
                    let better = match &best {
                        None => true,
                        Some(b) => o.diagnostic.is_none() && (b.diagnostic.is_some() || o.loss.total < b.loss.total),
                    };
                    if better {
                        best = Some(o);
                    }
                }
                let best = best.expect("at least one start");
                if best.diagnostic.is_some() {
                    best
                } else {
                    let steps = best.steps;
                    let mut o = train(&best.graph, &p, &c, 0, 0, s, cfg, run.t + steps)?;
                    o.steps += steps;
                    o
                }
            } else {
                train(&g, &p, &c, cfg.epochs_refine, cfg.refit.initial_sweeps, s, cfg, run.t)?
            };
            run.t += out.steps;
            run.phases.add("initial", clock);
            g = out.graph;
            if let Some(msg) = out.diagnostic {
                run.report.aborted = Some(msg);
            }
            first = false;
        }
        push_accepted(&mut trace, total_loss(&g, &p, &c, temperature(run.t, cfg))?);

        if run.report.aborted.is_none() {
            let clock = Instant::now();
            expansion_phase(&mut run, &mut g, &p, &c, s, &mut trace)?;
            run.phases.add("expand", clock);
        }
        if run.report.aborted.is_none() {
            let clock = Instant::now();
            compression_phase(&mut run, &mut g, &p, &c, s, &mut trace)?;
            run.phases.add("compress", clock);
        }
        run.report.traces.push(trace);
        run.record_best(&g, s)?;
        if run.report.aborted.is_some() {
            break;
        }
        if s > 0 {
            let clock = Instant::now();
            let from = level;
            let to = ScaleLevel { s: s - 1, spatial_modes: spatial.clone() };
            g = refine_network(&g, &from, &to, &run.shapes[(s - 1) as usize])?;
            let fine_p = problem_at(fine, &to, cfg.mask_min_fraction)?;
            let c_next = couplings_at_scale(&cfg.couplings, s - 1);
            let out = train(&g, &fine_p, &c_next, cfg.epochs_refine, cfg.refit.sweeps, s - 1, cfg, run.t)?;
            run.t += out.steps;
            g = out.graph;
            run.phases.add("refine", clock);
            if let Some(msg) = out.diagnostic {
                run.report.aborted = Some(msg);
                run.record_best(&g, s - 1)?;
                break;
            }
        }
    }
    run.report.steps = run.t;
    run.report.phase_seconds = run.phases.0;
    let best = match run.best {
        Some((b, _)) => b,
        None => lift_to_finest(&g, 0, &spatial, &run.shapes)?,
    };
    Ok(SearchOutcome { best, report: run.report })
}

fn expansion_phase(
    run: &mut Run,
    g: &mut TNGraph,
    p: &Problem,
    c: &CouplingConstants,
    s: u32,
    trace: &mut ScaleTrace,
) -> Result<()> {
    let cfg = run.cfg;
    let mut tabu: BTreeSet<(NodeId, Vec<usize>)> = BTreeSet::new();
    for _ in 0..cfg.expand_steps {
        let tau = temperature(run.t, cfg);
        let grads = data_gradient(g, p, tau)?;
        let tensions: BTreeMap<NodeId, f64> = node_tension(g, &grads)
            .into_iter()
            .filter(|(n, _)| {
                let shape = g.core(*n).map(|c| c.tensor.shape().to_vec()).unwrap_or_default();
                !tabu.contains(&(*n, shape))
            })
            .collect();
        let Some(v) = propose_expansion(g, &tensions, cfg.tension_percentile) else { break };
        let key = (v, g.core(v)?.tensor.shape().to_vec());
        let partition = default_partition(g, v).expect("proposal is splittable");
        let mut candidate = g.clone();
        candidate.split_node(v, &partition, cfg.svd_threshold, None)?;
        candidate.validate()?;
        let record = ProposalRecord {
            kind: ProposalKind::Expand,
            target: Target::Node(v.0),
            score: tensions[&v],
            loss_before: f64::NAN,
            loss_after: f64::NAN,
            accepted: false,
            scale: s,
            step: run.t,
            note: None,
        };
        match run.try_proposal(g, candidate, p, c, cfg.epochs_expand, s, record)? {
            // accepted compressions only shrink the model, so a rejected
            // one stays out of reach and its tabu entry is kept
            Some(loss) => push_accepted(trace, loss),
            None => {
                tabu.insert(key);
            }
        }
        if let Some(note) = run.report.proposals.last().and_then(|r| r.note.clone()) {
            if note.contains("non-finite") {
                run.report.aborted = Some(note);
                break;
            }
        }
    }
    Ok(())
}

fn compression_phase(
    run: &mut Run,
    g: &mut TNGraph,
    p: &Problem,
    c: &CouplingConstants,
    s: u32,
    trace: &mut ScaleTrace,
) -> Result<()> {
    let cfg = run.cfg;
    // (edge, bond dim, target rank) triples already rejected
    let mut tabu: BTreeSet<(EdgeId, usize, usize)> = BTreeSet::new();
    for _ in 0..cfg.compress_steps {
        let tau = temperature(run.t, cfg);
        // removals are tried on every edge before any bond is narrowed
        let wide: Vec<(EdgeId, usize)> = g.edges().filter(|x| x.bond_dim >= 2).map(|x| (x.id, x.bond_dim)).collect();
        let removals: BTreeMap<EdgeId, usize> =
            wide.iter().filter(|&&(e, r)| !tabu.contains(&(e, r, 1))).map(|&(e, _)| (e, 1)).collect();
        let narrowings: BTreeMap<EdgeId, usize> = wide
            .iter()
            .filter(|&&(e, r)| r > 2 && !tabu.contains(&(e, r, r - 1)))
            .map(|&(e, r)| (e, r - 1))
            .collect();
        let targets = if removals.is_empty() { narrowings } else { removals };
        let flows: BTreeMap<EdgeId, f64> =
            edge_flow(g, tau)?.into_iter().filter(|(e, _)| targets.contains_key(e)).collect();
        let pick = if cfg.screen_compressions && flows.len() > 1 {
            let known = tabu.len();
            match screen_compressions(run, g, p, c, s, &targets, &flows, &mut tabu)? {
                Some(e) => Some(e),
                // everything was screened out; the next round moves on
                None if tabu.len() > known => continue,
                None => break,
            }
        } else {
            propose_compression(g, &flows, cfg.flow_percentile)
        };
        let Some(e) = pick else { break };
        let edge = g.edge(e)?.clone();
        let target = targets[&e];
        let key = (e, edge.bond_dim, target);
        let both_physical =
            !g.core(edge.u)?.physical.is_empty() && !g.core(edge.v)?.physical.is_empty();
        let mut candidate = g.clone();
        if both_physical {
            candidate.edge_truncate(e, cfg.svd_threshold, Some(target), tau)?;
        } else {
            candidate.merge_nodes(edge.u, edge.v, cfg.svd_threshold, tau)?;
        }
        candidate.validate()?;
        let mut record = ProposalRecord {
            kind: ProposalKind::Compress,
            target: Target::Edge(e.0),
            score: flows[&e],
            loss_before: f64::NAN,
            loss_after: f64::NAN,
            accepted: false,
            scale: s,
            step: run.t,
            note: Some(match candidate.edge(e) {
                Ok(x) => format!("rank {} -> {}", edge.bond_dim, x.bond_dim),
                Err(_) => "merge".to_string(),
            }),
        };
        if candidate.param_count() > g.param_count() {
            // a compression must not grow the network
            record.loss_before = total_loss(g, p, c, tau)?.total;
            record.loss_after = record.loss_before;
            record.note = Some("rejected: parameter count would grow".into());
            run.report.proposals.push(record);
            tabu.insert(key);
            continue;
        }
        match run.try_proposal(g, candidate, p, c, cfg.epochs_compress, s, record)? {
            // accepted compressions only shrink the model, so a rejected
            // one stays out of reach and its tabu entry is kept
            Some(loss) => push_accepted(trace, loss),
            None => {
                tabu.insert(key);
            }
        }
        if let Some(note) = run.report.proposals.last().and_then(|r| r.note.clone()) {
            if note.contains("non-finite") {
                run.report.aborted = Some(note);
                break;
            }
        }
    }
    Ok(())
}

/// Screened errors within this factor of the best count as ties.
const SCREEN_BAND: f64 = 10.0;
/// Candidates whose screened loss exceeds the incumbent's by this factor
/// are rejected without a full refit.
const SCREEN_REJECT: f64 = 2.0;

/// A compression applied to a copy of `g` and refit on the screening
/// budget. `None` when the refit blew up.
fn screen_one(g: &TNGraph, p: &Problem, e: EdgeId, target: usize, tau: f64, cfg: &RGConfig) -> Result<Option<TNGraph>> {
    let mut candidate = g.clone();
    candidate.edge_truncate(e, cfg.svd_threshold, Some(target), tau)?;
    let fitted = als::fit(&mut candidate, p, tau, cfg.refit.sweeps, cfg.refit.tol, cfg.refit.ridge)
        .and_then(|_| lm::refine(&mut candidate, p, tau, cfg.refit.screen_iters, cfg.refit.tol, cfg.refit.re_floor));
    match fitted {
        Ok(_) => Ok(Some(candidate)),
        Err(RgtnError::NonFinite(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Refits every target compression on a short least-squares budget.
/// Hopeless candidates are logged as rejected and made tabu; of the rest,
/// those refitting about as well as the best are tied. With lookahead on,
/// the lowest-flow tied candidates are ranked by how many of the other
/// tied ones still screen as ties after them; flow breaks what remains.
#[allow(clippy::too_many_arguments)]
fn screen_compressions(
    run: &mut Run,
    g: &TNGraph,
    p: &Problem,
    c: &CouplingConstants,
    s: u32,
    targets: &BTreeMap<EdgeId, usize>,
    flows: &BTreeMap<EdgeId, f64>,
    tabu: &mut BTreeSet<(EdgeId, usize, usize)>,
) -> Result<Option<EdgeId>> {
    let cfg = run.cfg;
    let tau = temperature(run.t, cfg);
    let incumbent = total_loss(g, p, c, tau)?.total;
    let mut screened: Vec<(EdgeId, f64, TNGraph)> = Vec::new();
    for (&e, &target) in targets {
        let edge = g.edge(e)?.clone();
        if g.core(edge.u)?.physical.is_empty() || g.core(edge.v)?.physical.is_empty() {
            continue;
        }
        let candidate = screen_one(g, p, e, target, tau, cfg)?;
        let loss = match &candidate {
            Some(h) => total_loss(h, p, c, tau)?.total,
            None => f64::INFINITY,
        };
        let Some(candidate) = candidate.filter(|_| loss <= SCREEN_REJECT * incumbent) else {
            run.report.proposals.push(ProposalRecord {
                kind: ProposalKind::Compress,
                target: Target::Edge(e.0),
                score: flows[&e],
                loss_before: incumbent,
                loss_after: loss,
                accepted: false,
                scale: s,
                step: run.t,
                note: Some(format!("rank {} -> {target}, rejected on screening", edge.bond_dim)),
            });
            tabu.insert((e, edge.bond_dim, target));
            continue;
        };
        let re = p.masked_relative_error(&candidate.reconstruct(tau)?);
        screened.push((e, re, candidate));
    }
    let Some(best) = screened.iter().map(|x| x.1).min_by(f64::total_cmp) else { return Ok(None) };
    // errors at the refit floor are indistinguishable
    let band = (SCREEN_BAND * best).max(SCREEN_BAND * cfg.refit.re_floor);
    let mut tied: Vec<(EdgeId, TNGraph)> =
        screened.into_iter().filter(|x| x.1 <= band).map(|(e, _, h)| (e, h)).collect();
    tied.sort_by(|a, b| flows[&a.0].total_cmp(&flows[&b.0]).then(a.0.cmp(&b.0)));
    let width = cfg.screen_lookahead.min(tied.len());
    if width < 2 {
        return Ok(tied.first().map(|x| x.0));
    }
    // a compression that spends spare capacity on rerouting leaves fewer
    // compressions open after it; only tied ones can stay open, since a
    // compressed network is a restriction of its parent
    let open_here: Vec<EdgeId> = tied.iter().map(|x| x.0).collect();
    let most = open_here.len() - 1;
    let mut pick: Option<(EdgeId, usize)> = None;
    for (e, h) in &tied[..width] {
        let mut open = 0;
        for (k, &e2) in open_here.iter().filter(|&&e2| e2 != *e).enumerate() {
            // an earlier candidate wins ties, so stop once this one can't win
            if pick.is_some_and(|(_, n)| open + (most - k) <= n) {
                break;
            }
            if let Some(child) = screen_one(h, p, e2, targets[&e2], tau, cfg)? {
                if p.masked_relative_error(&child.reconstruct(tau)?) <= band {
                    open += 1;
                }
            }
        }
        if pick.is_none_or(|(_, n)| open > n) {
            pick = Some((*e, open));
        }
        if open == most {
            break;
        }
    }
    Ok(pick.map(|x| x.0))
}

/// The search's best network, for use as an initializer.
pub fn warm_start(p: &Problem, cfg: &RGConfig) -> Result<TNGraph> {
    Ok(rg_search(p, cfg, Init::Preset)?.best)
}

/// Number of Adam epochs at scale 0 until the masked relative error of
/// `g` reaches `target`, or `None` within `max_epochs`. Zero when the
/// network already meets the target.
pub fn epochs_to_re(
    g: &TNGraph,
    p: &Problem,
    c: &CouplingConstants,
    cfg: &RGConfig,
    target: f64,
    max_epochs: usize,
    chunk: usize,
) -> Result<Option<usize>> {
    let chunk = chunk.max(1);
    let tau_of = |t| temperature(t, cfg);
    let mut graph = g.clone();
    let mut done = 0;
    if p.masked_relative_error(&graph.reconstruct(tau_of(0))?) <= target {
        return Ok(Some(0));
    }
    // Adam moments restart per chunk; the step counter keeps running.
    while done < max_epochs {
        let n = chunk.min(max_epochs - done);
        let out = optimize(&graph, p, c, n, 0, cfg, done)?;
        if out.diagnostic.is_some() {
            return Ok(None);
        }
        // walk the chunk one step at a time only when it crossed the target
        let after = p.masked_relative_error(&out.graph.reconstruct(tau_of(done + n))?);
        if after <= target {
            let mut probe = graph.clone();
            for k in 0..n {
                let o = optimize(&probe, p, c, 1, 0, cfg, done + k)?;
                probe = o.graph;
                if p.masked_relative_error(&probe.reconstruct(tau_of(done + k + 1))?) <= target {
                    return Ok(Some(done + k + 1));
                }
            }
            return Ok(Some(done + n));
        }
        graph = out.graph;
        done += n;
    }
    Ok(None)
}

/// Relative error of a network against dense data.
pub fn reconstruction_error(g: &TNGraph, data: &DenseTensor, tau: f64) -> Result<f64> {
    let x = g.reconstruct(tau)?;
    Ok(crate::tensor::frobenius_norm(&x.sub(data)?) / crate::tensor::frobenius_norm(data))
}
