//! Topology-preserving regulariser from 0-dimensional Vietoris–Rips persistence.
//!
//! The 0-dimensional death edges of a Rips filtration are exactly the edges
//! of a minimum spanning tree, so pairings come from Kruskal's algorithm.

use crate::distance::check_distance_matrix;
use crate::error::{Error, Result};
use crate::tensor::DiffTensor;

/// Spanning-tree edges `(i, j)` with `i < j` selected by persistence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pairing {
    pub edges: Vec<(usize, usize)>,
}

impl Pairing {
    /// Row-major flat indices of the edges in an `n × n` matrix.
    pub fn flat_indices(&self, n: usize) -> Vec<usize> {
        self.edges.iter().map(|&(i, j)| i * n + j).collect()
    }
}

struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
        true
    }
}

/// Minimum-spanning-tree edges of the complete graph weighted by `a` (`n × n`).
/// Equal weights are ordered by `(i, j)`.
pub fn persistence_pairing(a: &[f64], n: usize) -> Result<Pairing> {
    if let Some(msg) = check_distance_matrix(a, n) {
        return Err(Error::contract(format!("persistence pairing: {msg}")));
    }
    let mut candidates: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .collect();
    candidates.sort_by(|&(i, j), &(k, l)| a[i * n + j].total_cmp(&a[k * n + l]).then((i, j).cmp(&(k, l))));
    let mut uf = UnionFind::new(n);
    let mut edges = Vec::with_capacity(n.saturating_sub(1));
    for (i, j) in candidates {
        if uf.union(i, j) {
            edges.push((i, j));
            if edges.len() + 1 == n {
                break;
            }
        }
    }
    Ok(Pairing { edges })
}

/// `½‖A_X[π_X] − A_Z[π_X]‖² + ½‖A_Z[π_Z] − A_X[π_Z]‖²`.
///
/// `a_x` is a constant `n × n` matrix; `a_z` is an `[n, n]` tensor. Pairings
/// are recomputed from the current values and held constant for the backward pass.
pub fn topo_loss<'t>(a_x: &[f64], a_z: DiffTensor<'t>) -> Result<DiffTensor<'t>> {
    let shape = a_z.shape();
    let n = shape.first().copied().unwrap_or(0);
    if shape != [n, n] || a_x.len() != n * n {
        return Err(Error::contract(format!(
            "topology loss needs matching square matrices, got {} entries and {shape:?}",
            a_x.len()
        )));
    }
    let pi_x = persistence_pairing(a_x, n)?;
    let pi_z = persistence_pairing(&a_z.values(), n)?;
    let mut index = pi_x.flat_indices(n);
    index.extend(pi_z.flat_indices(n));
    let target: Vec<f64> = index.iter().map(|&k| a_x[k]).collect();
    let target = a_z.tape().constant(&[index.len()], target)?;
    Ok(a_z
        .reshape(&[n * n])?
        .select(&index)?
        .sub(target)?
        .square()
        .sum()
        .mul_scalar(0.5))
}
