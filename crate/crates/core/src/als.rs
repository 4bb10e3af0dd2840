//! Alternating least squares over any network: each core in turn is
//! solved in closed form against the contraction of all others, with the
//! gates and the other cores' diagonals held fixed.

use rayon::prelude::*;

use crate::error::{Result, RgtnError};
use crate::graph::{Network, NodeId, TNGraph};
use crate::linalg::{cholesky_solve, regularized_cholesky};
use crate::objective::Problem;
use crate::tensor::{matricize, scale_mode, DenseTensor, Matrix};

/// Relative ridge added to every normal-equation system.
pub const DEFAULT_RIDGE: f64 = 1e-8;

/// Least-squares update of one core. The solution is for the effective
/// core; the node's own diagonals are divided back out.
pub fn update_core(g: &mut TNGraph, p: &Problem, n: NodeId, tau: f64, ridge: f64) -> Result<()> {
    let core = g.core(n)?.clone();
    let inc = g.incident_edges(n);
    let net = Network::build(g, tau)?;
    let env = net.node_environment(n, inc.len());
    let f = matricize(&p.data, &core.physical)?;
    let mask = p.mask.as_ref().map(|m| matricize(m, &core.physical)).transpose()?;
    let (b, cols) = (env.rows, env.cols);
    if f.cols != cols {
        return Err(RgtnError::Invariant(format!("environment has {cols} columns, data {}", f.cols)));
    }
    let et = env.transpose(); // cols x b
    let rows: Vec<Vec<f64>> = match &mask {
        None => {
            let gram = env.matmul_transposed(&env)?;
            let l = regularized_cholesky(&gram, ridge);
            (0..f.rows)
                .into_par_iter()
                .map(|i| {
                    let fi = f.row(i);
                    let mut rhs = vec![0.0; b];
                    for (j, &fv) in fi.iter().enumerate() {
                        if fv != 0.0 {
                            for (r, &e) in rhs.iter_mut().zip(et.row(j)) {
                                *r += fv * e;
                            }
                        }
                    }
                    cholesky_solve(&l, &mut rhs);
                    rhs
                })
                .collect()
        }
        Some(m) => (0..f.rows)
            .into_par_iter()
            .map(|i| {
                let fi = f.row(i);
                let mi = m.row(i);
                let mut gram = Matrix::zeros(b, b);
                let mut rhs = vec![0.0; b];
                for j in 0..cols {
                    if mi[j] == 0.0 {
                        continue;
                    }
                    let e = et.row(j);
                    for a in 0..b {
                        let ea = e[a];
                        rhs[a] += fi[j] * ea;
                        let row = &mut gram.data[a * b..(a + 1) * b];
                        for (gv, &eb) in row[..=a].iter_mut().zip(e) {
                            *gv += ea * eb;
                        }
                    }
                }
                for a in 0..b {
                    for c in a + 1..b {
                        gram.data[a * b + c] = gram.data[c * b + a];
                    }
                }
                let l = regularized_cholesky(&gram, ridge);
                cholesky_solve(&l, &mut rhs);
                rhs
            })
            .collect(),
    };
    // rows[i][beta] is the effective core at (bond index beta, physical index i)
    let p_rows = f.rows;
    let mut data = vec![0.0; b * p_rows];
    for (i, r) in rows.iter().enumerate() {
        for (beta, &v) in r.iter().enumerate() {
            data[beta * p_rows + i] = v;
        }
    }
    let mut eff = DenseTensor::new(core.tensor.shape().to_vec(), data)?;
    for (k, &e) in inc.iter().enumerate() {
        let inv: Vec<f64> = g.diagonal(n, e)?.iter().map(|&d| if d.abs() > 1e-300 { 1.0 / d } else { 0.0 }).collect();
        scale_mode(&mut eff, k, &inv);
    }
    if !eff.is_finite() {
        return Err(RgtnError::NonFinite(format!("least-squares update of {n}")));
    }
    g.core_mut(n)?.tensor = eff;
    Ok(())
}

/// One pass over every core in id order.
pub fn sweep(g: &mut TNGraph, p: &Problem, tau: f64, ridge: f64) -> Result<()> {
    for n in g.node_ids() {
        update_core(g, p, n, tau, ridge)?;
    }
    Ok(())
}

fn core_params(g: &TNGraph) -> Vec<(NodeId, DenseTensor)> {
    g.cores().map(|c| (c.id, c.tensor.clone())).collect()
}

/// Runs up to `max_sweeps` sweeps, stopping once the masked relative
/// error improves by less than `tol` in a sweep. After each sweep the
/// cores are also pushed along the last sweep's direction; the step
/// grows while that helps and shrinks when it does not, and a push is
/// kept only when it lowers the error. Returns the error after each
/// sweep.
pub fn fit(g: &mut TNGraph, p: &Problem, tau: f64, max_sweeps: usize, tol: f64, ridge: f64) -> Result<Vec<f64>> {
    let mut trace = Vec::with_capacity(max_sweeps);
    let mut prev = p.masked_relative_error(&g.reconstruct(tau)?);
    let (mut step, mut step_max) = (0.5, 1.0);
    for _ in 0..max_sweeps {
        let before = core_params(g);
        sweep(g, p, tau, ridge)?;
        let mut re = p.masked_relative_error(&g.reconstruct(tau)?);
        if !re.is_finite() {
            return Err(RgtnError::NonFinite("least-squares sweep".into()));
        }
        let mut trial = g.clone();
        for (n, old) in &before {
            let core = trial.core_mut(*n)?;
            for (x, &o) in core.tensor.data_mut().iter_mut().zip(old.data()) {
                *x += step * (*x - o);
            }
        }
        let trial_re = p.masked_relative_error(&trial.reconstruct(tau)?);
        if trial_re < re {
            *g = trial;
            re = trial_re;
            step = (step * 1.5).min(step_max);
            step_max *= 1.05;
        } else {
            step_max = step;
            step /= 2.0;
        }
        trace.push(re);
        if prev - re < tol {
            break;
        }
        prev = re;
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::TopologyPreset;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_core_is_solved_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let truth = TNGraph::preset(&[3, 4], TopologyPreset::Chain, 2, &mut rng).unwrap();
        let p = Problem::full(truth.reconstruct(0.01).unwrap());
        let mut g = TNGraph::preset(&[3, 4], TopologyPreset::Chain, 2, &mut rng).unwrap();
        g.core_mut(NodeId(1)).unwrap().tensor = truth.core(NodeId(1)).unwrap().tensor.clone();
        update_core(&mut g, &p, NodeId(0), 0.01, 0.0).unwrap();
        // the target's row space is spanned by core 1, so one solve is exact
        assert!(p.masked_relative_error(&g.reconstruct(0.01).unwrap()) < 1e-8);
    }

    #[test]
    fn ring_fit_recovers_exact_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let truth = TNGraph::preset(&[5, 6, 5, 6], TopologyPreset::Ring, 2, &mut rng).unwrap();
        let p = Problem::full(truth.reconstruct(0.01).unwrap());
        let mut g = TNGraph::preset(&[5, 6, 5, 6], TopologyPreset::Ring, 2, &mut rng).unwrap();
        g.set_all_gate_weights(crate::graph::HARD_EDGE_WEIGHT);
        let trace = fit(&mut g, &p, 0.01, 300, 0.0, DEFAULT_RIDGE).unwrap();
        assert!(*trace.last().unwrap() < 1e-5, "{trace:?}");
        for w in trace.windows(2) {
            // the ridge term makes the raw error wobble near its floor
            assert!(w[1] * w[1] <= w[0] * w[0] + 1e-10, "{trace:?}");
        }
    }

    #[test]
    fn masked_fit_reduces_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let truth = TNGraph::preset(&[6, 6, 6], TopologyPreset::Ring, 2, &mut rng).unwrap();
        let data = truth.reconstruct(0.01).unwrap();
        let mask = DenseTensor::from_fn(&[6, 6, 6], |i| if (i[0] + 2 * i[1] + i[2]) % 3 == 0 { 1.0 } else { 0.0 });
        let p = Problem::masked(data, mask);
        let mut g = TNGraph::preset(&[6, 6, 6], TopologyPreset::Ring, 2, &mut rng).unwrap();
        let before = p.masked_relative_error(&g.reconstruct(0.01).unwrap());
        let trace = fit(&mut g, &p, 0.01, 50, 0.0, DEFAULT_RIDGE).unwrap();
        assert!(*trace.last().unwrap() < before);
    }
}
