//! Damped Gauss-Newton refinement of all cores at once. Each step solves
//! the damped normal equations by conjugate gradients, preconditioned by
//! the per-core least-squares systems; gates and diagonals stay fixed.

use crate::error::{Result, RgtnError};
use crate::graph::{Network, NodeId, TNGraph};
use crate::linalg::{cholesky, cholesky_solve};
use crate::objective::Problem;
use crate::tensor::{matricize, DenseTensor, Matrix};

struct Block {
    n: NodeId,
    /// bonds x other modes
    env: Matrix,
    /// Tensor offset of matricized entry `(i, j)` at `i * cols + j`.
    map: Vec<usize>,
    rows: usize,
    /// Product of the node's diagonals at each effective-core entry.
    scale: Vec<f64>,
}

fn offsets(g: &TNGraph, n: NodeId) -> Result<Vec<usize>> {
    let shape = g.external_shape();
    let numel: usize = shape.iter().product();
    let idx = DenseTensor::new(shape.to_vec(), (0..numel).map(|i| i as f64).collect())?;
    Ok(matricize(&idx, &g.core(n)?.physical)?.data.iter().map(|&x| x as usize).collect())
}

fn diag_scale(g: &TNGraph, n: NodeId) -> Result<Vec<f64>> {
    let core = g.core(n)?;
    let ones = DenseTensor::filled(core.tensor.shape(), 1.0);
    let mut c = core.clone();
    c.tensor = ones;
    let diags: Vec<&[f64]> = g.incident_edges(n).iter().map(|&e| g.diagonal(n, e)).collect::<Result<_>>()?;
    Ok(crate::graph::effective_core(&c, &diags)?.into_data())
}

/// Effective core of `n` as a bonds x rows matrix, row-major.
fn effective(g: &TNGraph, n: NodeId) -> Result<Vec<f64>> {
    Ok(g.effective(n)?.into_data())
}

struct System<'a> {
    blocks: Vec<Block>,
    weights: Option<&'a [f64]>,
    numel: usize,
}

impl System<'_> {
    /// `W J v`, where `v` holds one effective-core update per block.
    fn apply(&self, v: &[Vec<f64>]) -> Vec<f64> {
        let mut out = vec![0.0; self.numel];
        for (b, vb) in self.blocks.iter().zip(v) {
            let cols = b.env.cols;
            let mut acc = vec![0.0; cols];
            for i in 0..b.rows {
                acc.iter_mut().for_each(|x| *x = 0.0);
                for beta in 0..b.env.rows {
                    let c = vb[beta * b.rows + i];
                    if c != 0.0 {
                        for (a, &e) in acc.iter_mut().zip(b.env.row(beta)) {
                            *a += c * e;
                        }
                    }
                }
                for (&o, &a) in b.map[i * cols..(i + 1) * cols].iter().zip(&acc) {
                    out[o] += a;
                }
            }
        }
        if let Some(w) = self.weights {
            for (o, &wi) in out.iter_mut().zip(w) {
                *o *= wi;
            }
        }
        out
    }

    /// `J^T u` for `u` already weighted.
    fn adjoint(&self, u: &[f64]) -> Vec<Vec<f64>> {
        self.blocks
            .iter()
            .map(|b| {
                let cols = b.env.cols;
                let mut out = vec![0.0; b.env.rows * b.rows];
                let mut gathered = vec![0.0; cols];
                for i in 0..b.rows {
                    for (x, &o) in gathered.iter_mut().zip(&b.map[i * cols..(i + 1) * cols]) {
                        *x = u[o];
                    }
                    for beta in 0..b.env.rows {
                        out[beta * b.rows + i] = crate::tensor::dot(&gathered, b.env.row(beta));
                    }
                }
                out
            })
            .collect()
    }

    /// Cholesky factors of the damped per-row block systems.
    fn preconditioner(&self, lambda: f64) -> Vec<Vec<Matrix>> {
        self.blocks
            .iter()
            .map(|b| {
                let k = b.env.rows;
                let cols = b.env.cols;
                let gram_of = |i: Option<usize>| {
                    let mut gram = Matrix::zeros(k, k);
                    for j in 0..cols {
                        if let (Some(i), Some(w)) = (i, self.weights) {
                            if w[b.map[i * cols + j]] == 0.0 {
                                continue;
                            }
                        }
                        for a in 0..k {
                            let ea = b.env.data[a * cols + j];
                            for c in 0..=a {
                                gram.data[a * k + c] += ea * b.env.data[c * cols + j];
                            }
                        }
                    }
                    for a in 0..k {
                        for c in a + 1..k {
                            gram.data[a * k + c] = gram.data[c * k + a];
                        }
                        gram.data[a * k + a] += lambda;
                    }
                    cholesky(&gram).unwrap_or_else(|| Matrix::identity(k))
                };
                match self.weights {
                    None => vec![gram_of(None)],
                    Some(_) => (0..b.rows).map(|i| gram_of(Some(i))).collect(),
                }
            })
            .collect()
    }
}

fn precondition(sys: &System, factors: &[Vec<Matrix>], r: &[Vec<f64>]) -> Vec<Vec<f64>> {
    sys.blocks
        .iter()
        .zip(factors)
        .zip(r)
        .map(|((b, f), rb)| {
            let k = b.env.rows;
            let mut out = rb.clone();
            for i in 0..b.rows {
                let mut col: Vec<f64> = (0..k).map(|beta| rb[beta * b.rows + i]).collect();
                cholesky_solve(if f.len() == 1 { &f[0] } else { &f[i] }, &mut col);
                for beta in 0..k {
                    out[beta * b.rows + i] = col[beta];
                }
            }
            out
        })
        .collect()
}

fn dot(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>()).sum()
}

fn axpy(y: &mut [Vec<f64>], a: f64, x: &[Vec<f64>]) {
    for (yb, xb) in y.iter_mut().zip(x) {
        for (p, q) in yb.iter_mut().zip(xb) {
            *p += a * q;
        }
    }
}

/// Preconditioned conjugate gradients on `(J^T W J + lambda I) d = rhs`.
fn solve(sys: &System, rhs: &[Vec<f64>], lambda: f64, iters: usize) -> Vec<Vec<f64>> {
    let factors = sys.preconditioner(lambda);
    let mut x: Vec<Vec<f64>> = rhs.iter().map(|b| vec![0.0; b.len()]).collect();
    let mut r = rhs.to_vec();
    let mut z = precondition(sys, &factors, &r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let stop = 1e-6 * dot(rhs, rhs).max(f64::MIN_POSITIVE);
    for _ in 0..iters {
        let jp = sys.apply(&p);
        let mut ap = sys.adjoint(&jp);
        axpy(&mut ap, lambda, &p);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            break;
        }
        let alpha = rz / pap;
        axpy(&mut x, alpha, &p);
        axpy(&mut r, -alpha, &ap);
        if dot(&r, &r) < stop {
            break;
        }
        z = precondition(sys, &factors, &r);
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for (pb, zb) in p.iter_mut().zip(&z) {
            for (a, &b) in pb.iter_mut().zip(zb) {
                *a = b + beta * *a;
            }
        }
    }
    x
}

fn objective(g: &TNGraph, p: &Problem, tau: f64) -> Result<f64> {
    let x = g.reconstruct(tau)?;
    Ok(p.masked_relative_error(&x))
}

/// Up to `max_iters` damped Gauss-Newton steps; stops once a step
/// improves the masked relative error by less than `tol` or the error
/// falls to `floor`. Returns the error after each accepted step.
pub fn refine(g: &mut TNGraph, p: &Problem, tau: f64, max_iters: usize, tol: f64, floor: f64) -> Result<Vec<f64>> {
    const CG_ITERS: usize = 40;
    const STALL_WINDOW: usize = 10;
    let nodes = g.node_ids();
    let maps: Vec<Vec<usize>> = nodes.iter().map(|&n| offsets(g, n)).collect::<Result<_>>()?;
    let weights = p.mask.as_ref().map(|m| m.data());
    let numel = p.data.numel();
    let mut re = objective(g, p, tau)?;
    if re <= floor {
        return Ok(Vec::new());
    }
    let mut lambda: Option<f64> = None;
    let mut trace = Vec::new();
    for _ in 0..max_iters {
        let net = Network::build(g, tau)?;
        let x = net.reconstruct()?;
        let blocks: Vec<Block> = nodes
            .iter()
            .zip(&maps)
            .map(|(&n, map)| {
                let bonds = g.degree(n);
                let env = net.node_environment(n, bonds);
                let rows = g.core(n)?.tensor.numel() / env.rows;
                Ok(Block { n, env, map: map.clone(), rows, scale: diag_scale(g, n)? })
            })
            .collect::<Result<_>>()?;
        let sys = System { blocks, weights, numel };
        let mut resid: Vec<f64> = p.data.data().iter().zip(x.data()).map(|(f, a)| f - a).collect();
        if let Some(w) = weights {
            for (r, &wi) in resid.iter_mut().zip(w) {
                *r *= wi;
            }
        }
        let rhs = sys.adjoint(&resid);
        let lam = *lambda.get_or_insert_with(|| {
            let mean: f64 = sys.blocks.iter().map(|b| b.env.data.iter().map(|e| e * e).sum::<f64>()).sum::<f64>()
                / sys.blocks.iter().map(|b| b.env.rows).sum::<usize>().max(1) as f64;
            1e-3 * mean
        });
        let mut lam = lam;
        let mut improved = false;
        for _ in 0..8 {
            let step = solve(&sys, &rhs, lam, CG_ITERS);
            let mut trial = g.clone();
            for (b, d) in sys.blocks.iter().zip(&step) {
                let eff = effective(g, b.n)?;
                let core = trial.core_mut(b.n)?;
                for (k, v) in core.tensor.data_mut().iter_mut().enumerate() {
                    let s = b.scale[k];
                    if s.abs() > 1e-300 {
                        *v = (eff[k] + d[k]) / s;
                    }
                }
            }
            let trial_re = objective(&trial, p, tau)?;
            if !trial_re.is_finite() {
                return Err(RgtnError::NonFinite("damped Gauss-Newton step".into()));
            }
            if trial_re < re {
                *g = trial;
                let gain = re - trial_re;
                re = trial_re;
                lam = (lam / 3.0).max(1e-12);
                improved = true;
                trace.push(re);
                // stalled: ten steps bought less than one percent
                let stalled = trace.len() > STALL_WINDOW && re > 0.99 * trace[trace.len() - 1 - STALL_WINDOW];
                if gain < tol || re <= floor || stalled {
                    return Ok(trace);
                }
                break;
            }
            lam *= 4.0;
        }
        lambda = Some(lam);
        if !improved {
            break;
        }
    }
    Ok(trace)
}
