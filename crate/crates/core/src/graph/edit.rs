//! Structural edits: splitting a core, merging two adjacent cores, and
//! truncating a single bond.

use super::network::bond_operator;
use super::{gate, EdgeId, NodeId, TNGraph, HARD_EDGE_WEIGHT, NEW_EDGE_WEIGHT};
use crate::error::{Result, RgtnError};
use crate::linalg::svd_truncated;
use crate::tensor::{contract_unchecked, matricize, mode_apply, scale_mode, DenseTensor, Matrix};

/// Two-way split of a core's modes, given as mode positions of the core
/// tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub left: Vec<usize>,
    pub right: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Tag {
    Bond(EdgeId),
    Phys(usize),
}

fn tags_of(g: &TNGraph, n: NodeId) -> Vec<Tag> {
    let core = &g.cores[&n];
    let mut tags: Vec<Tag> = g.incident_edges(n).into_iter().map(Tag::Bond).collect();
    tags.extend(core.physical.iter().map(|&p| Tag::Phys(p)));
    tags
}

/// Permutes a tensor with mode tags into canonical core layout.
fn canonical(t: &DenseTensor, tags: &[Tag]) -> (DenseTensor, Vec<usize>) {
    let mut order: Vec<usize> = (0..tags.len()).collect();
    order.sort_by_key(|&i| match tags[i] {
        Tag::Bond(e) => (0, e.0),
        Tag::Phys(p) => (1, p),
    });
    let physical = order
        .iter()
        .filter_map(|&i| match tags[i] {
            Tag::Phys(p) => Some(p),
            Tag::Bond(_) => None,
        })
        .collect();
    (t.permute_unchecked(&order), physical)
}

fn sqrt_scaled(svd: &crate::linalg::TruncatedSvd) -> (Matrix, Matrix) {
    let r = svd.rank;
    let roots: Vec<f64> = svd.singular.iter().map(|s| s.sqrt()).collect();
    let mut left = svd.left.clone();
    for i in 0..left.rows {
        for j in 0..r {
            left.data[i * r + j] *= roots[j];
        }
    }
    let mut right = svd.right.clone();
    for j in 0..r {
        for v in &mut right.data[j * right.cols..(j + 1) * right.cols] {
            *v *= roots[j];
        }
    }
    (left, right)
}

/// Default split of node `n`: the physical legs travel with the half
/// (rounded down) of the bonds that minimizes the larger side of the
/// matricization; ties go to the lowest edge ids. Internal nodes split
/// their bonds the same way. Returns `None` for cores that cannot be split.
pub fn default_partition(g: &TNGraph, n: NodeId) -> Option<Partition> {
    let core = g.cores.get(&n)?;
    let tags = tags_of(g, n);
    let shape = core.tensor.shape();
    let bonds: Vec<usize> = (0..tags.len()).filter(|&i| matches!(tags[i], Tag::Bond(_))).collect();
    let phys: Vec<usize> = (0..tags.len()).filter(|&i| matches!(tags[i], Tag::Phys(_))).collect();
    if bonds.is_empty() {
        if phys.len() < 2 {
            return None;
        }
        let h = phys.len() / 2;
        return Some(Partition { left: phys[..h].to_vec(), right: phys[h..].to_vec() });
    }
    if phys.is_empty() && bonds.len() < 2 {
        return None;
    }
    let h = if phys.is_empty() { (bonds.len() / 2).max(1) } else { bonds.len() / 2 };
    let total: usize = shape.iter().product();
    let mut best: Option<(usize, Vec<usize>)> = None;
    for subset in combinations(bonds.len(), h) {
        let chosen: Vec<usize> = subset.iter().map(|&i| bonds[i]).collect();
        let rows: usize =
            phys.iter().chain(chosen.iter()).map(|&i| shape[i]).product();
        let cost = rows.max(total / rows);
        if best.as_ref().is_none_or(|(c, _)| cost < *c) {
            best = Some((cost, chosen));
        }
    }
    let (_, chosen) = best?;
    let mut left: Vec<usize> = phys.iter().chain(chosen.iter()).copied().collect();
    left.sort_unstable();
    let right: Vec<usize> = bonds.iter().copied().filter(|i| !chosen.contains(i)).collect();
    if right.is_empty() {
        return None;
    }
    Some(Partition { left, right })
}

/// k-subsets of 0..n in lexicographic order.
fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(k);
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    rec(0, n, k, &mut cur, &mut out);
    out
}

/// Outcome of a split: the node keeping the left part, the new node, and
/// the new bond.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitOutcome {
    pub left: NodeId,
    pub right: NodeId,
    pub edge: EdgeId,
}

impl TNGraph {
    /// Replaces `n` by two cores joined by a new bond obtained from a
    /// truncated SVD of the core matricized along `partition`. Singular
    /// values are split as square roots between the two sides; the new
    /// edge gets gate weight +2 and unit diagonals.
    pub fn split_node(
        &mut self,
        n: NodeId,
        partition: &Partition,
        threshold: f64,
        max_rank: Option<usize>,
    ) -> Result<SplitOutcome> {
        let core = self.core(n)?.clone();
        let tags = tags_of(self, n);
        let order = tags.len();
        let mut seen = vec![0usize; order];
        for &m in partition.left.iter().chain(&partition.right) {
            if m >= order {
                return Err(RgtnError::InvalidPartition(format!("mode {m} out of range")));
            }
            seen[m] += 1;
        }
        if partition.left.is_empty() || partition.right.is_empty() || seen.iter().any(|&c| c != 1) {
            return Err(RgtnError::InvalidPartition(format!("{partition:?} for order {order}")));
        }
        let mut right_modes = partition.right.clone();
        right_modes.sort_unstable();
        let m = matricize(&core.tensor, &partition.left)?;
        let svd = svd_truncated(&m, threshold, max_rank)?;
        let r = svd.rank;
        let (a, b) = sqrt_scaled(&svd);

        let new_edge = EdgeId(self.next_edge);
        let new_node = NodeId(self.next_node);
        let shape = core.tensor.shape();

        let mut left_shape: Vec<usize> = partition.left.iter().map(|&i| shape[i]).collect();
        left_shape.push(r);
        let mut left_tags: Vec<Tag> = partition.left.iter().map(|&i| tags[i]).collect();
        left_tags.push(Tag::Bond(new_edge));
        let (left_t, left_phys) =
            canonical(&DenseTensor::from_parts_unchecked(left_shape, a.data), &left_tags);

        let mut right_shape = vec![r];
        right_shape.extend(right_modes.iter().map(|&i| shape[i]));
        let mut right_tags = vec![Tag::Bond(new_edge)];
        right_tags.extend(right_modes.iter().map(|&i| tags[i]));
        let (right_t, right_phys) =
            canonical(&DenseTensor::from_parts_unchecked(right_shape, b.data), &right_tags);

        self.next_edge += 1;
        self.next_node += 1;
        for &i in &right_modes {
            if let Tag::Bond(e) = tags[i] {
                let edge = self.edges.get_mut(&e).expect("incident edge");
                if edge.u == n {
                    edge.u = new_node;
                } else {
                    edge.v = new_node;
                }
                let d = self.diagonals.remove(&(n, e)).expect("diagonal present");
                self.diagonals.insert((new_node, e), d);
            }
        }
        self.cores.insert(n, super::Core { id: n, tensor: left_t, physical: left_phys });
        self.cores.insert(new_node, super::Core { id: new_node, tensor: right_t, physical: right_phys });
        self.edges.insert(
            new_edge,
            super::Edge { id: new_edge, u: n, v: new_node, bond_dim: r, gate_weight: NEW_EDGE_WEIGHT },
        );
        self.diagonals.insert((n, new_edge), vec![1.0; r]);
        self.diagonals.insert((new_node, new_edge), vec![1.0; r]);
        debug_assert!(self.validate().is_ok());
        Ok(SplitOutcome { left: n, right: new_node, edge: new_edge })
    }

    /// Contracts `e`'s endpoints with both diagonals and the bond operator
    /// absorbed. Returns the raw product (modes: `u`'s other modes, then
    /// `v`'s other modes) with its tags.
    fn contract_across(&self, e: EdgeId, tau: f64) -> Result<(DenseTensor, Vec<Tag>, usize)> {
        let edge = self.edge(e)?.clone();
        let (u, v) = (edge.u, edge.v);
        let ku = self.bond_mode(u, e)?;
        let kv = self.bond_mode(v, e)?;
        let mut gu = self.core(u)?.tensor.clone();
        scale_mode(&mut gu, ku, self.diagonal(u, e)?);
        let gv_val = gate(edge.gate_weight, tau)?;
        let gu = mode_apply(&gu, ku, &bond_operator(gv_val, edge.bond_dim));
        let mut gvt = self.core(v)?.tensor.clone();
        scale_mode(&mut gvt, kv, self.diagonal(v, e)?);
        let theta = contract_unchecked(&gu, &[ku], &gvt, &[kv]);
        let tu = tags_of(self, u);
        let tv = tags_of(self, v);
        let mut tags: Vec<Tag> = tu.iter().enumerate().filter(|(i, _)| *i != ku).map(|(_, &t)| t).collect();
        let rows: usize = gu.shape().iter().enumerate().filter(|(i, _)| *i != ku).map(|(_, &s)| s).product();
        tags.extend(tv.iter().enumerate().filter(|(i, _)| *i != kv).map(|(_, &t)| t));
        Ok((theta, tags, rows))
    }

    /// Absorbs the far-side diagonal, the bond operator and `x`'s own
    /// diagonal of edge `e` into `x`'s raw core, leaving a plain bond.
    fn absorb_into(&mut self, x: NodeId, e: EdgeId, tau: f64) -> Result<()> {
        let edge = self.edge(e)?.clone();
        let other = edge.other(x);
        let k = self.bond_mode(x, e)?;
        let dx = self.diagonal(x, e)?.to_vec();
        let dother = self.diagonal(other, e)?.to_vec();
        let gval = gate(edge.gate_weight, tau)?;
        let core = self.core_mut(x)?;
        scale_mode(&mut core.tensor, k, &dx);
        core.tensor = mode_apply(&core.tensor, k, &bond_operator(gval, edge.bond_dim));
        scale_mode(&mut core.tensor, k, &dother);
        let r = edge.bond_dim;
        *self.diagonal_mut(x, e)? = vec![1.0; r];
        *self.diagonal_mut(other, e)? = vec![1.0; r];
        Ok(())
    }

    /// Re-factorizes the two cores of `e` through a truncated SVD of their
    /// contraction, keeping each core's other modes. The gate and both
    /// diagonals are absorbed first; the rebuilt bond gets gate weight +2
    /// and unit diagonals. Topology is unchanged.
    pub fn edge_truncate(
        &mut self,
        e: EdgeId,
        threshold: f64,
        max_rank: Option<usize>,
        tau: f64,
    ) -> Result<usize> {
        self.edge_truncate_with(e, threshold, max_rank, tau, NEW_EDGE_WEIGHT)
    }

    pub(crate) fn edge_truncate_with(
        &mut self,
        e: EdgeId,
        threshold: f64,
        max_rank: Option<usize>,
        tau: f64,
        new_weight: f64,
    ) -> Result<usize> {
        let edge = self.edge(e)?.clone();
        let (theta, tags, rows) = self.contract_across(e, tau)?;
        let cols = theta.numel() / rows;
        let m = Matrix { rows, cols, data: theta.data().to_vec() };
        let svd = svd_truncated(&m, threshold, max_rank)?;
        let r = svd.rank;
        let (a, b) = sqrt_scaled(&svd);
        let u_order = self.core(edge.u)?.tensor.order() - 1;
        let theta_shape = theta.shape();

        let mut ushape: Vec<usize> = theta_shape[..u_order].to_vec();
        ushape.push(r);
        let mut utags: Vec<Tag> = tags[..u_order].to_vec();
        utags.push(Tag::Bond(e));
        let (ut, _) = canonical(&DenseTensor::from_parts_unchecked(ushape, a.data), &utags);

        let mut vshape = vec![r];
        vshape.extend_from_slice(&theta_shape[u_order..]);
        let mut vtags = vec![Tag::Bond(e)];
        vtags.extend_from_slice(&tags[u_order..]);
        let (vt, _) = canonical(&DenseTensor::from_parts_unchecked(vshape, b.data), &vtags);

        self.core_mut(edge.u)?.tensor = ut;
        self.core_mut(edge.v)?.tensor = vt;
        let em = self.edge_mut(e)?;
        em.bond_dim = r;
        em.gate_weight = new_weight;
        self.diagonals.insert((edge.u, e), vec![1.0; r]);
        self.diagonals.insert((edge.v, e), vec![1.0; r]);
        debug_assert!(self.validate().is_ok());
        Ok(r)
    }

    /// Contracts the two endpoints of the edge between `a` and `b` into one
    /// core (keeping the smaller id) that carries both sets of physical
    /// legs and all remaining bonds. Bonds to a common neighbour are fused
    /// into one. Each remaining bond of the merged core is then truncated
    /// with `threshold`, pushing the reduction into the neighbour.
    pub fn merge_nodes(&mut self, a: NodeId, b: NodeId, threshold: f64, tau: f64) -> Result<NodeId> {
        self.core(a)?;
        self.core(b)?;
        let e = self
            .edge_between(a, b)
            .ok_or_else(|| RgtnError::InvalidArgument(format!("no edge between {a} and {b}")))?;
        let keep = a.min(b);
        let gone = a.max(b);
        let (theta, tags, _) = self.contract_across(e, tau)?;

        // Drop the merged edge and re-home the removed node's bonds.
        self.edges.remove(&e);
        self.diagonals.remove(&(a, e));
        self.diagonals.remove(&(b, e));
        let gone_edges: Vec<EdgeId> = self.incident_edges(gone);
        for f in gone_edges {
            let edge = self.edges.get_mut(&f).expect("edge exists");
            if edge.u == gone {
                edge.u = keep;
            } else {
                edge.v = keep;
            }
            let d = self.diagonals.remove(&(gone, f)).expect("diagonal present");
            self.diagonals.insert((keep, f), d);
        }
        let (t, physical) = canonical(&theta, &tags);
        let gone_core = self.cores.remove(&gone).expect("core present");
        let mut phys = physical;
        phys.sort_unstable();
        debug_assert_eq!(phys.len(), self.cores[&keep].physical.len() + gone_core.physical.len());
        self.cores.insert(keep, super::Core { id: keep, tensor: t, physical: phys });

        self.fuse_parallel_bonds(keep, tau)?;

        for f in self.incident_edges(keep) {
            self.truncate_bond_of(keep, f, threshold, tau)?;
        }
        debug_assert!(self.validate().is_ok());
        Ok(keep)
    }

    /// Fuses pairs of bonds from `n` to the same neighbour into a single
    /// bond of product dimension.
    fn fuse_parallel_bonds(&mut self, n: NodeId, tau: f64) -> Result<()> {
        loop {
            let inc = self.incident_edges(n);
            let mut pair = None;
            'outer: for (i, &e1) in inc.iter().enumerate() {
                for &e2 in &inc[i + 1..] {
                    if self.edges[&e1].other(n) == self.edges[&e2].other(n) {
                        pair = Some((e1, e2));
                        break 'outer;
                    }
                }
            }
            let Some((e1, e2)) = pair else { return Ok(()) };
            let x = self.edges[&e1].other(n);
            self.absorb_into(x, e1, tau)?;
            self.absorb_into(x, e2, tau)?;
            let r1 = self.edges[&e1].bond_dim;
            let r2 = self.edges[&e2].bond_dim;
            for node in [n, x] {
                let k1 = self.bond_mode(node, e1)?;
                let k2 = self.bond_mode(node, e2)?;
                let core = self.core(node)?;
                let order = core.tensor.order();
                // bring e1, e2 to the front (e1 major), fuse, then restore canonical order
                let mut perm = vec![k1, k2];
                perm.extend((0..order).filter(|&i| i != k1 && i != k2));
                let p = core.tensor.permute_unchecked(&perm);
                let mut shape = vec![r1 * r2];
                shape.extend_from_slice(&p.shape()[2..]);
                let fused = DenseTensor::from_parts_unchecked(shape, p.into_data());
                let old_tags = tags_of(self, node);
                let mut tags = vec![Tag::Bond(e1)];
                tags.extend(perm[2..].iter().map(|&i| old_tags[i]));
                let physical = self.core(node)?.physical.clone();
                let (t, _) = canonical(&fused, &tags);
                self.cores.insert(node, super::Core { id: node, tensor: t, physical });
            }
            self.edges.remove(&e2);
            self.diagonals.remove(&(n, e2));
            self.diagonals.remove(&(x, e2));
            let em = self.edges.get_mut(&e1).expect("edge exists");
            em.bond_dim = r1 * r2;
            em.gate_weight = NEW_EDGE_WEIGHT;
            self.diagonals.insert((n, e1), vec![1.0; r1 * r2]);
            self.diagonals.insert((x, e1), vec![1.0; r1 * r2]);
        }
    }

    /// Truncates bond `f` of core `n` by an SVD of `n`'s raw core
    /// matricized against `f`; the left factor is pushed into the
    /// neighbour. No-op when the numerical rank equals the bond dimension.
    fn truncate_bond_of(&mut self, n: NodeId, f: EdgeId, threshold: f64, tau: f64) -> Result<()> {
        let k = self.bond_mode(n, f)?;
        let r_old = self.edge(f)?.bond_dim;
        let core = self.core(n)?.tensor.clone();
        let m = matricize(&core, &[k])?;
        let svd = svd_truncated(&m, threshold, None)?;
        let r = svd.rank;
        if r >= r_old {
            return Ok(());
        }
        let x = self.edge(f)?.other(n);
        self.absorb_into(x, f, tau)?;
        // n <- S V^T folded back at mode k
        let mut sv = svd.right.clone();
        for j in 0..r {
            for v in &mut sv.data[j * sv.cols..(j + 1) * sv.cols] {
                *v *= svd.singular[j];
            }
        }
        let mut shape = vec![r];
        shape.extend(core.shape().iter().enumerate().filter(|(i, _)| *i != k).map(|(_, &s)| s));
        let order = core.order();
        // tensor currently has mode k at position 0; move it back
        let inverse: Vec<usize> = (0..order)
            .map(|j| match j.cmp(&k) {
                std::cmp::Ordering::Less => j + 1,
                std::cmp::Ordering::Equal => 0,
                std::cmp::Ordering::Greater => j,
            })
            .collect();
        let new_core = DenseTensor::from_parts_unchecked(shape, sv.data).permute_unchecked(&inverse);
        self.core_mut(n)?.tensor = new_core;
        let kx = self.bond_mode(x, f)?;
        let xt = mode_apply(&self.core(x)?.tensor, kx, &svd.left);
        self.core_mut(x)?.tensor = xt;
        let em = self.edge_mut(f)?;
        em.bond_dim = r;
        em.gate_weight = NEW_EDGE_WEIGHT;
        self.diagonals.insert((n, f), vec![1.0; r]);
        self.diagonals.insert((x, f), vec![1.0; r]);
        Ok(())
    }

    /// Absorbs diagonals and gates into the cores. Edges whose gate is
    /// below `delta_gate` are truncated to rank 1; every other edge keeps
    /// the rank `harden` would report. All bonds end up hard (gate
    /// exactly 1) with unit diagonals.
    pub fn finalize(&self, tau: f64, eps_diag: f64, delta_gate: f64) -> Result<TNGraph> {
        let sig = self.harden(eps_diag, delta_gate, tau)?;
        let mut out = self.clone();
        for e in self.edge_ids() {
            let edge = self.edge(e)?;
            let key = (edge.u.min(edge.v).0, edge.u.max(edge.v).0);
            let cap = sig.ranks.get(&key).copied().unwrap_or(1);
            out.edge_truncate_with(e, 0.0, Some(cap), tau, HARD_EDGE_WEIGHT)?;
        }
        out.validate()?;
        Ok(out)
    }
}
