//! Graph-geometry-preserving regulariser over the time (node) axis.
//!
//! Per sample, node geodesics on a kNN graph define a kernel Laplacian `L`.
//! The pullback metric at node `n` is estimated by the carré-du-champ identity
//! `H[a,b] = ½ (L(z_a z_b) − z_a L z_b − z_b L z_a)_n`, and the loss averages
//! `Tr[H² − 2H] = ‖H − I‖²_F − P` over nodes and samples.

use serde::{Deserialize, Serialize};

use crate::distance::euclidean_matrix;
use crate::error::{Error, Result};
use crate::tensor::DiffTensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GGeoConfig {
    /// Kernel width.
    pub h: f64,
    /// Neighbours per node in the geodesic graph.
    pub k_geo: usize,
}

impl Default for GGeoConfig {
    fn default() -> Self {
        Self { h: 1.0, k_geo: 5 }
    }
}

impl GGeoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0) || !self.h.is_finite() {
            return Err(Error::config(format!("kernel width h must be positive, got {}", self.h)));
        }
        if self.k_geo == 0 {
            return Err(Error::config("k_geo must be at least 1"));
        }
        Ok(())
    }
}

/// Geodesic distances between the `t` rows of `x` (`t × d`).
///
/// Builds the symmetric `k_geo`-nearest-neighbour graph, joins disconnected
/// components through their shortest inter-component edge, then runs
/// Dijkstra from every node.
pub fn geodesic_distances(x: &[f64], t: usize, d: usize, k_geo: usize) -> Vec<f64> {
    let e = euclidean_matrix(x, t, d);
    let mut adj = vec![f64::INFINITY; t * t];
    for i in 0..t {
        let mut order: Vec<usize> = (0..t).filter(|&j| j != i).collect();
        order.sort_by(|&a, &b| e[i * t + a].total_cmp(&e[i * t + b]).then(a.cmp(&b)));
        for &j in order.iter().take(k_geo) {
            adj[i * t + j] = e[i * t + j];
            adj[j * t + i] = e[i * t + j];
        }
    }

    loop {
        let comp = components(&adj, t);
        if comp.iter().all(|&c| c == 0) {
            break;
        }
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..t {
            for j in (i + 1)..t {
                if comp[i] != comp[j] && best.is_none_or(|(w, _, _)| e[i * t + j] < w) {
                    best = Some((e[i * t + j], i, j));
                }
            }
        }
        let (w, i, j) = best.expect("at least two components");
        adj[i * t + j] = w;
        adj[j * t + i] = w;
    }

    let mut out = vec![0.0; t * t];
    for src in 0..t {
        let dist = dijkstra(&adj, t, src);
        out[src * t..(src + 1) * t].copy_from_slice(&dist);
    }
    // Symmetrise away round-off differences between the two directions.
    for i in 0..t {
        for j in (i + 1)..t {
            let v = out[i * t + j].min(out[j * t + i]);
            out[i * t + j] = v;
            out[j * t + i] = v;
        }
    }
    out
}

fn components(adj: &[f64], t: usize) -> Vec<usize> {
    let mut comp = vec![usize::MAX; t];
    let mut next = 0;
    for start in 0..t {
        if comp[start] != usize::MAX {
            continue;
        }
        let mut stack = vec![start];
        comp[start] = next;
        while let Some(u) = stack.pop() {
            for v in 0..t {
                if adj[u * t + v].is_finite() && comp[v] == usize::MAX {
                    comp[v] = next;
                    stack.push(v);
                }
            }
        }
        next += 1;
    }
    comp
}

/// Dense O(t²) Dijkstra on an adjacency matrix with `inf` for missing edges.
fn dijkstra(adj: &[f64], t: usize, src: usize) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; t];
    let mut done = vec![false; t];
    dist[src] = 0.0;
    for _ in 0..t {
        let mut u = usize::MAX;
        for v in 0..t {
            if !done[v] && (u == usize::MAX || dist[v] < dist[u]) {
                u = v;
            }
        }
        if u == usize::MAX || dist[u].is_infinite() {
            break;
        }
        done[u] = true;
        for v in 0..t {
            let w = adj[u * t + v];
            if w.is_finite() && dist[u] + w < dist[v] {
                dist[v] = dist[u] + w;
            }
        }
    }
    dist
}

/// `L = (4/h)(D⁻¹K − I)` with `K = exp(−G²/h)` for a `t × t` geodesic matrix.
pub fn kernel_laplacian(g: &[f64], t: usize, h: f64) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(Error::config(format!("kernel width h must be positive, got {h}")));
    }
    let mut l = vec![0.0; t * t];
    for i in 0..t {
        let row = &g[i * t..(i + 1) * t];
        let k: Vec<f64> = row.iter().map(|&d| (-d * d / h).exp()).collect();
        let deg: f64 = k.iter().sum();
        for j in 0..t {
            l[i * t + j] = 4.0 / h * (k[j] / deg - if i == j { 1.0 } else { 0.0 });
        }
    }
    Ok(l)
}

/// Per-node metric estimates `[B, T, P, P]` from Laplacians (`B·T·T` values)
/// and representations `z` of shape `[B, T, P]`.
pub fn metric_estimate<'t>(laplacians: &[f64], z: DiffTensor<'t>) -> Result<DiffTensor<'t>> {
    let s = z.shape();
    if s.len() != 3 || laplacians.len() != s[0] * s[1] * s[1] {
        return Err(Error::shape(
            "metric_estimate",
            format!("z {s:?} with {} Laplacian entries", laplacians.len()),
        ));
    }
    z.laplacian_metric(laplacians)
}

/// Mean over samples and nodes of `Tr[H² − 2H]`, with fixed Laplacians.
pub fn ggeo_loss_with<'t>(laplacians: &[f64], z: DiffTensor<'t>) -> Result<DiffTensor<'t>> {
    let h = metric_estimate(laplacians, z)?;
    let s = h.shape();
    let (b, t, p) = (s[0], s[1], s[2]);
    let eye = z.tape().constant(&[p, p], (0..p * p).map(|k| f64::from(k % (p + 1) == 0)).collect())?;
    let trace = h.mul(eye)?.sum();
    Ok(h.square().sum().sub(trace.mul_scalar(2.0))?.mul_scalar(1.0 / (b * t) as f64))
}

/// Per-sample Laplacians for raw `x` of shape `B × T × D`.
pub fn batch_laplacians(x: &[f64], (b, t, d): (usize, usize, usize), cfg: &GGeoConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(b * t * t);
    for i in 0..b {
        let g = geodesic_distances(&x[i * t * d..(i + 1) * t * d], t, d, cfg.k_geo);
        out.extend(kernel_laplacian(&g, t, cfg.h)?);
    }
    Ok(out)
}

/// Graph-geometry loss for raw batch `x` (`B × T × D`) and representations `z` (`[B, T, P]`).
pub fn ggeo_loss<'t>(x: &[f64], dims: (usize, usize, usize), z: DiffTensor<'t>, cfg: &GGeoConfig) -> Result<DiffTensor<'t>> {
    ggeo_loss_with(&batch_laplacians(x, dims, cfg)?, z)
}
