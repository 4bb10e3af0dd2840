//! The regularized loss: masked data fidelity, temporal and spatial
//! smoothness, diagonal sparsity, gate entropy and a weighted tensor
//! nuclear norm, with exact gradients for cores, diagonals and gates.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, RgtnError};
use crate::graph::{gate, EdgeId, Network, NodeId, TNGraph};
use crate::linalg::thin_svd;
use crate::tensor::{fold, unfold, DenseTensor};

/// Per-term geometric growth of the couplings with scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CouplingRates {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub epsilon: f64,
}

impl Default for CouplingRates {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 1.0, gamma: 1.0, delta: 1.0, epsilon: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CouplingConstants {
    /// Temporal smoothness weight.
    pub alpha: f64,
    /// Spatial smoothness weight.
    pub beta: f64,
    /// L1 weight on diagonal factors.
    pub gamma: f64,
    /// Gate entropy weight.
    pub delta: f64,
    /// Tensor nuclear norm weight.
    pub epsilon: f64,
    /// Per-mode nuclear norm weights; uniform when absent.
    pub tnn_mode_weights: Option<Vec<f64>>,
    pub rho: CouplingRates,
}

impl Default for CouplingConstants {
    fn default() -> Self {
        Self {
            alpha: 0.0,
            beta: 0.0,
            gamma: 0.01,
            delta: 0.001,
            epsilon: 0.1,
            tnn_mode_weights: None,
            rho: CouplingRates::default(),
        }
    }
}

impl CouplingConstants {
    pub fn zero() -> Self {
        Self { alpha: 0.0, beta: 0.0, gamma: 0.0, delta: 0.0, epsilon: 0.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha, self.beta, self.gamma, self.delta, self.epsilon];
        if all.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
            return Err(RgtnError::InvalidArgument("couplings must be finite and >= 0".into()));
        }
        let rates = [self.rho.alpha, self.rho.beta, self.rho.gamma, self.rho.delta, self.rho.epsilon];
        if rates.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
            return Err(RgtnError::InvalidArgument("coupling rates must be finite and >= 0".into()));
        }
        if let Some(w) = &self.tnn_mode_weights {
            let sum: f64 = w.iter().sum();
            if w.iter().any(|x| !(*x >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
                return Err(RgtnError::InvalidArgument("tnn mode weights must be >= 0 and sum to 1".into()));
            }
        }
        Ok(())
    }

    pub fn mode_weights(&self, order: usize) -> Result<Vec<f64>> {
        match &self.tnn_mode_weights {
            Some(w) if w.len() == order => Ok(w.clone()),
            Some(w) => Err(RgtnError::DimensionMismatch(format!("{} tnn weights for order {order}", w.len()))),
            None => Ok(vec![1.0 / order as f64; order]),
        }
    }
}

/// Couplings at scale `s`: each base value times its rate to the power `s`.
pub fn couplings_at_scale(base: &CouplingConstants, s: u32) -> CouplingConstants {
    let p = |x: f64, r: f64| x * r.powi(s as i32);
    CouplingConstants {
        alpha: p(base.alpha, base.rho.alpha),
        beta: p(base.beta, base.rho.beta),
        gamma: p(base.gamma, base.rho.gamma),
        delta: p(base.delta, base.rho.delta),
        epsilon: p(base.epsilon, base.rho.epsilon),
        tnn_mode_weights: base.tnn_mode_weights.clone(),
        rho: base.rho.clone(),
    }
}

/// Target data plus the observation pattern and optional mode semantics.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub data: DenseTensor,
    /// 0/1 indicator; `None` means fully observed.
    pub mask: Option<DenseTensor>,
    pub temporal_mode: Option<usize>,
    pub spatial_modes: Option<(usize, usize)>,
}

impl Problem {
    pub fn full(data: DenseTensor) -> Self {
        Self { data, mask: None, temporal_mode: None, spatial_modes: None }
    }

    pub fn masked(data: DenseTensor, mask: DenseTensor) -> Self {
        Self { data, mask: Some(mask), temporal_mode: None, spatial_modes: None }
    }

    pub fn validate(&self) -> Result<()> {
        let order = self.data.order();
        if let Some(m) = &self.mask {
            if m.shape() != self.data.shape() {
                return Err(RgtnError::DimensionMismatch(format!(
                    "mask shape {:?} vs data shape {:?}",
                    m.shape(),
                    self.data.shape()
                )));
            }
            if m.data().iter().any(|&x| x != 0.0 && x != 1.0) {
                return Err(RgtnError::InvalidArgument("mask entries must be 0 or 1".into()));
            }
        }
        let modes = self.temporal_mode.into_iter().chain(self.spatial_modes.into_iter().flat_map(|(a, b)| [a, b]));
        for k in modes {
            if k >= order {
                return Err(RgtnError::ModeOutOfRange { mode: k, order });
            }
        }
        Ok(())
    }

    fn check_graph(&self, g: &TNGraph) -> Result<()> {
        if g.external_shape() != self.data.shape() {
            return Err(RgtnError::DimensionMismatch(format!(
                "network shape {:?} vs data shape {:?}",
                g.external_shape(),
                self.data.shape()
            )));
        }
        Ok(())
    }

    /// `P_omega(x)`.
    pub fn project(&self, x: &DenseTensor) -> DenseTensor {
        match &self.mask {
            Some(m) => x.zip_map(m, |a, b| a * b).expect("validated shapes"),
            None => x.clone(),
        }
    }

    pub fn observed_count(&self) -> usize {
        match &self.mask {
            Some(m) => m.data().iter().filter(|&&x| x != 0.0).count(),
            None => self.data.numel(),
        }
    }

    /// `||P(x - data)|| / ||P(data)||`.
    pub fn masked_relative_error(&self, x: &DenseTensor) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (i, (&a, &f)) in x.data().iter().zip(self.data.data()).enumerate() {
            let w = self.mask.as_ref().map_or(1.0, |m| m.data()[i]);
            num += w * (a - f) * (a - f);
            den += w * f * f;
        }
        if den == 0.0 {
            return if num == 0.0 { 0.0 } else { f64::INFINITY };
        }
        (num / den).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub data: f64,
    pub temporal: f64,
    pub spatial: f64,
    pub diag_sparsity: f64,
    pub edge_entropy: f64,
    pub tnn: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.data, self.temporal, self.spatial, self.diag_sparsity, self.edge_entropy, self.tnn, self.total]
            .iter()
            .all(|x| x.is_finite())
    }

    fn assemble(mut self, c: &CouplingConstants) -> Self {
        self.total = self.data
            + c.alpha * self.temporal
            + c.beta * self.spatial
            + c.gamma * self.diag_sparsity
            + c.delta * self.edge_entropy
            + c.epsilon * self.tnn;
        self
    }
}

/// Gradients mirroring the graph's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub cores: BTreeMap<NodeId, DenseTensor>,
    pub diagonals: BTreeMap<(NodeId, EdgeId), Vec<f64>>,
    pub gate_weights: BTreeMap<EdgeId, f64>,
}

impl GradientBundle {
    pub fn is_finite(&self) -> bool {
        self.cores.values().all(|t| t.is_finite())
            && self.diagonals.values().all(|d| d.iter().all(|x| x.is_finite()))
            && self.gate_weights.values().all(|x| x.is_finite())
    }
}

/// `-g ln g - (1-g) ln(1-g)`, with `0 ln 0 = 0`.
pub fn binary_entropy(g: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&g) {
        return Err(RgtnError::InvalidArgument(format!("entropy argument {g} outside [0, 1]")));
    }
    let term = |p: f64| if p > 0.0 { -p * p.ln() } else { 0.0 };
    Ok(term(g) + term(1.0 - g))
}

/// `sign(z) max(|z| - theta, 0)`, the proximal map of `theta |x|`.
pub fn soft_threshold(z: f64, theta: f64) -> f64 {
    debug_assert!(theta >= 0.0);
    z.signum() * (z.abs() - theta).max(0.0)
}

/// Weighted sum of the nuclear norms of every mode unfolding.
pub fn tnn(x: &DenseTensor, weights: &[f64]) -> Result<f64> {
    if weights.len() != x.order() {
        return Err(RgtnError::DimensionMismatch(format!("{} weights for order {}", weights.len(), x.order())));
    }
    let mut total = 0.0;
    for (k, &w) in weights.iter().enumerate() {
        if w != 0.0 {
            total += w * crate::linalg::nuclear_norm(&unfold(x, k)?);
        }
    }
    Ok(total)
}

/// `sum_k w_k fold(U V^T)` over each unfolding; directions with singular
/// values at the noise floor are skipped.
fn tnn_gradient(x: &DenseTensor, weights: &[f64]) -> Result<DenseTensor> {
    let mut out = DenseTensor::zeros(x.shape());
    for (k, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let m = unfold(x, k)?;
        let svd = thin_svd(&m);
        let s1 = svd.s.first().copied().unwrap_or(0.0);
        if s1 == 0.0 {
            continue;
        }
        let cutoff = s1 * 1e-12 * m.rows.max(m.cols) as f64;
        let r = svd.s.iter().take_while(|&&s| s > cutoff).count();
        let full_r = svd.s.len();
        let mut uv = crate::tensor::Matrix::zeros(m.rows, m.cols);
        for i in 0..m.rows {
            for q in 0..r {
                let a = w * svd.u.data[i * full_r + q];
                let row = &svd.vt.data[q * m.cols..(q + 1) * m.cols];
                for (o, &b) in uv.data[i * m.cols..(i + 1) * m.cols].iter_mut().zip(row) {
                    *o += a * b;
                }
            }
        }
        let g = fold(&uv, k, x.shape())?;
        for (o, v) in out.data_mut().iter_mut().zip(g.data()) {
            *o += v;
        }
    }
    Ok(out)
}

/// Forward differences along mode `k`: `d[.., i, ..] = x[.., i+1, ..] - x[.., i, ..]`.
fn forward_diff(x: &DenseTensor, k: usize) -> Option<DenseTensor> {
    let shape = x.shape();
    if shape[k] < 2 {
        return None;
    }
    let outer: usize = shape[..k].iter().product();
    let inner: usize = shape[k + 1..].iter().product();
    let n = shape[k];
    let mut dshape = shape.to_vec();
    dshape[k] = n - 1;
    let mut d = vec![0.0; outer * (n - 1) * inner];
    let src = x.data();
    for o in 0..outer {
        for i in 0..n - 1 {
            let a = (o * n + i) * inner;
            let b = (o * n + i + 1) * inner;
            let t = (o * (n - 1) + i) * inner;
            for j in 0..inner {
                d[t + j] = src[b + j] - src[a + j];
            }
        }
    }
    Some(DenseTensor::from_parts_unchecked(dshape, d))
}

/// Adds `scale * D^T d` to `out`, where `D` is the forward difference
/// along mode `k`.
fn add_diff_adjoint(out: &mut DenseTensor, d: &DenseTensor, k: usize, scale: f64) {
    let shape = out.shape().to_vec();
    let outer: usize = shape[..k].iter().product();
    let inner: usize = shape[k + 1..].iter().product();
    let n = shape[k];
    let dd = d.data();
    let o_data = out.data_mut();
    for o in 0..outer {
        for i in 0..n - 1 {
            let a = (o * n + i) * inner;
            let b = (o * n + i + 1) * inner;
            let t = (o * (n - 1) + i) * inner;
            for j in 0..inner {
                o_data[b + j] += scale * dd[t + j];
                o_data[a + j] -= scale * dd[t + j];
            }
        }
    }
}

/// Sum over consecutive slices along `k` of `||x[t+1] - x[t]||_F`, and
/// optionally its gradient.
fn temporal_term(x: &DenseTensor, k: usize, grad: Option<(&mut DenseTensor, f64)>) -> f64 {
    let Some(d) = forward_diff(x, k) else { return 0.0 };
    let shape = d.shape().to_vec();
    let outer: usize = shape[..k].iter().product();
    let inner: usize = shape[k + 1..].iter().product();
    let steps = shape[k];
    let dd = d.data();
    let mut norms = vec![0.0; steps];
    for o in 0..outer {
        for t in 0..steps {
            let base = (o * steps + t) * inner;
            norms[t] += dd[base..base + inner].iter().map(|v| v * v).sum::<f64>();
        }
    }
    for n in &mut norms {
        *n = n.sqrt();
    }
    if let Some((out, scale)) = grad {
        let mut scaled = d.clone();
        let sd = scaled.data_mut();
        for o in 0..outer {
            for t in 0..steps {
                let f = if norms[t] > 0.0 { 1.0 / norms[t] } else { 0.0 };
                let base = (o * steps + t) * inner;
                for v in &mut sd[base..base + inner] {
                    *v *= f;
                }
            }
        }
        add_diff_adjoint(out, &scaled, k, scale);
    }
    norms.iter().sum()
}

/// `||D_a x||_F + ||D_b x||_F` over the spatial pair, and optionally its
/// gradient.
fn spatial_term(x: &DenseTensor, modes: (usize, usize), mut grad: Option<(&mut DenseTensor, f64)>) -> f64 {
    let mut total = 0.0;
    for k in [modes.0, modes.1] {
        let Some(d) = forward_diff(x, k) else { continue };
        let n = d.squared_norm().sqrt();
        total += n;
        if let Some((out, scale)) = grad.as_mut() {
            if n > 0.0 {
                add_diff_adjoint(out, &d, k, *scale / n);
            }
        }
    }
    total
}

fn check(g: &TNGraph, p: &Problem, c: &CouplingConstants, tau: f64) -> Result<()> {
    p.validate()?;
    p.check_graph(g)?;
    c.validate()?;
    if !(tau > 0.0) {
        return Err(RgtnError::InvalidArgument(format!("temperature must be positive, got {tau}")));
    }
    Ok(())
}

fn graph_terms(g: &TNGraph, tau: f64) -> Result<(f64, f64)> {
    let diag: f64 = g.diagonals().map(|d| d.values.iter().map(|v| v.abs()).sum::<f64>()).sum();
    let mut ent = 0.0;
    for e in g.edges() {
        ent += binary_entropy(gate(e.gate_weight, tau)?)?;
    }
    Ok((diag, ent))
}

/// Evaluates every term on the reconstruction `x`; when `dx` is given it
/// accumulates `dL/dX` of the weighted sum into it.
fn tensor_terms(x: &DenseTensor, p: &Problem, c: &CouplingConstants, mut dx: Option<&mut DenseTensor>) -> Result<LossBreakdown> {
    let mut out = LossBreakdown::default();
    let residual = p.project(&x.sub(&p.data)?);
    out.data = 0.5 * residual.squared_norm();
    if let Some(dx) = dx.as_deref_mut() {
        for (o, r) in dx.data_mut().iter_mut().zip(residual.data()) {
            *o += r;
        }
    }
    if let Some(k) = p.temporal_mode {
        out.temporal = temporal_term(x, k, dx.as_deref_mut().filter(|_| c.alpha != 0.0).map(|d| (d, c.alpha)));
    }
    if let Some(pair) = p.spatial_modes {
        out.spatial = spatial_term(x, pair, dx.as_deref_mut().filter(|_| c.beta != 0.0).map(|d| (d, c.beta)));
    }
    let weights = c.mode_weights(x.order())?;
    out.tnn = tnn(x, &weights)?;
    if let Some(dx) = dx {
        if c.epsilon != 0.0 {
            let g = tnn_gradient(x, &weights)?;
            for (o, v) in dx.data_mut().iter_mut().zip(g.data()) {
                *o += c.epsilon * v;
            }
        }
    }
    Ok(out)
}

pub fn total_loss(g: &TNGraph, p: &Problem, c: &CouplingConstants, tau: f64) -> Result<LossBreakdown> {
    check(g, p, c, tau)?;
    let x = g.reconstruct(tau)?;
    loss_of_reconstruction(g, &x, p, c, tau)
}

/// Loss for a graph whose reconstruction `x` is already available.
pub fn loss_of_reconstruction(
    g: &TNGraph,
    x: &DenseTensor,
    p: &Problem,
    c: &CouplingConstants,
    tau: f64,
) -> Result<LossBreakdown> {
    let mut out = tensor_terms(x, p, c, None)?;
    let (diag, ent) = graph_terms(g, tau)?;
    out.diag_sparsity = diag;
    out.edge_entropy = ent;
    Ok(out.assemble(c))
}

/// Loss and exact gradient (subgradient 0 at kinks of the L1 and norm
/// terms).
pub fn grad_total_loss(
    g: &TNGraph,
    p: &Problem,
    c: &CouplingConstants,
    tau: f64,
) -> Result<(LossBreakdown, GradientBundle)> {
    check(g, p, c, tau)?;
    let net = Network::build(g, tau)?;
    let x = net.reconstruct()?;
    let mut dx = DenseTensor::zeros(x.shape());
    let mut loss = tensor_terms(&x, p, c, Some(&mut dx))?;
    let (diag, ent) = graph_terms(g, tau)?;
    loss.diag_sparsity = diag;
    loss.edge_entropy = ent;
    let loss = loss.assemble(c);

    let bp = net.backprop(g, tau, &dx)?;
    let mut diagonals = bp.diagonals;
    if c.gamma != 0.0 {
        for ((n, e), grad) in diagonals.iter_mut() {
            let d = g.diagonal(*n, *e)?;
            for (gi, &di) in grad.iter_mut().zip(d) {
                // sign(0) := 0
                let s = if di > 0.0 {
                    1.0
                } else if di < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                *gi += c.gamma * s;
            }
        }
    }
    let mut gate_weights = bp.gate_weights;
    if c.delta != 0.0 {
        for e in g.edges() {
            let gv = gate(e.gate_weight, tau)?;
            // dH/dw = ln((1-g)/g) g(1-g)/tau and ln((1-g)/g) = -w/tau
            let dh = -(e.gate_weight / tau) * gv * (1.0 - gv) / tau;
            *gate_weights.get_mut(&e.id).expect("every edge has a gradient") += c.delta * dh;
        }
    }
    Ok((loss, GradientBundle { cores: bp.cores, diagonals, gate_weights }))
}

/// Gradient of the data term alone.
pub fn data_gradient(g: &TNGraph, p: &Problem, tau: f64) -> Result<GradientBundle> {
    let c = CouplingConstants::zero();
    let q = Problem { temporal_mode: None, spatial_modes: None, ..p.clone() };
    Ok(grad_total_loss(g, &q, &c, tau)?.1)
}
