//! Structure-preservation metrics between an original and a latent distance matrix.
//!
//! Ranks are 1-based among the `n − 1` other points, ordered by distance
//! with ties broken by index.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{Dataset, ReprSet};
use crate::distance::euclidean_matrix;
use crate::error::{Error, Result};

/// Maximum number of samples that enter a local report.
pub const LOCAL_SAMPLE_CAP: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Local,
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureReport {
    pub scale: Scale,
    pub k: usize,
    pub knn: f64,
    pub trust: f64,
    pub cont: f64,
    pub mrre: f64,
    pub drmse: f64,
    pub n_samples: usize,
}

/// The five metric values for one pair of distance matrices.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Metrics {
    pub knn: f64,
    pub trust: f64,
    pub cont: f64,
    pub mrre: f64,
    pub drmse: f64,
}

/// Neighbour order and rank table of one distance matrix.
struct Ranking {
    n: usize,
    /// `order[i]` lists the other points by increasing distance from `i`.
    order: Vec<Vec<usize>>,
    /// `rank[i * n + j]`, 1-based; 0 on the diagonal.
    rank: Vec<usize>,
}

impl Ranking {
    fn new(d: &[f64], n: usize) -> Self {
        let mut order = Vec::with_capacity(n);
        let mut rank = vec![0; n * n];
        for i in 0..n {
            let mut o: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            o.sort_by(|&a, &b| d[i * n + a].total_cmp(&d[i * n + b]).then(a.cmp(&b)));
            for (r, &j) in o.iter().enumerate() {
                rank[i * n + j] = r + 1;
            }
            order.push(o);
        }
        Self { n, order, rank }
    }

    fn neighbours(&self, i: usize, k: usize) -> &[usize] {
        &self.order[i][..k]
    }

    fn rank(&self, i: usize, j: usize) -> usize {
        self.rank[i * self.n + j]
    }
}

fn check_k(n: usize, k: usize) -> Result<()> {
    if k == 0 || k >= n {
        return Err(Error::config(format!("neighbourhood size k={k} needs 1 <= k < n={n}")));
    }
    Ok(())
}

fn check_trust_k(n: usize, k: usize) -> Result<()> {
    check_k(n, k)?;
    if 3 * k + 1 >= 2 * n {
        return Err(Error::config(format!(
            "k={k} too large for trustworthiness with n={n} (need 3k < 2n - 1)"
        )));
    }
    Ok(())
}

fn check_square(a: &[f64], b: &[f64], n: usize) -> Result<()> {
    if a.len() != n * n || b.len() != n * n {
        return Err(Error::config(format!(
            "distance matrices must be {n}x{n}, got {} and {} entries",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

fn knn_from(rx: &Ranking, rz: &Ranking, k: usize) -> f64 {
    let n = rx.n;
    let shared: usize = (0..n)
        .map(|i| {
            let nx = rx.neighbours(i, k);
            rz.neighbours(i, k).iter().filter(|j| nx.contains(j)).count()
        })
        .sum();
    shared as f64 / (n * k) as f64
}

/// Penalises points that are latent neighbours but not original neighbours.
fn trust_from(rx: &Ranking, rz: &Ranking, k: usize) -> f64 {
    let n = rx.n;
    let mut sum = 0.0;
    for i in 0..n {
        let nx = rx.neighbours(i, k);
        for &j in rz.neighbours(i, k) {
            if !nx.contains(&j) {
                sum += (rx.rank(i, j) - k) as f64;
            }
        }
    }
    let (nf, kf) = (n as f64, k as f64);
    1.0 - 2.0 / (nf * kf * (2.0 * nf - 3.0 * kf - 1.0)) * sum
}

/// One direction of MRRE: neighbourhoods from `reference`, compared to `other`.
fn mrre_dir(reference: &Ranking, other: &Ranking, k: usize) -> f64 {
    let n = reference.n;
    let mut sum = 0.0;
    for i in 0..n {
        for &j in reference.neighbours(i, k) {
            let r = reference.rank(i, j) as f64;
            sum += (other.rank(i, j) as f64 - r).abs() / r;
        }
    }
    // Largest possible value: each reference rank j can be displaced to 1 or n-1.
    let c: f64 = (1..=k)
        .map(|j| ((j - 1).max(n - 1 - j)) as f64 / j as f64)
        .sum::<f64>()
        * n as f64;
    if c == 0.0 {
        0.0
    } else {
        sum / c
    }
}

fn mrre_from(rx: &Ranking, rz: &Ranking, k: usize) -> f64 {
    0.5 * (mrre_dir(rz, rx, k) + mrre_dir(rx, rz, k))
}

pub fn knn_overlap(dx: &[f64], dz: &[f64], n: usize, k: usize) -> Result<f64> {
    check_square(dx, dz, n)?;
    check_k(n, k)?;
    Ok(knn_from(&Ranking::new(dx, n), &Ranking::new(dz, n), k))
}

pub fn trustworthiness(dx: &[f64], dz: &[f64], n: usize, k: usize) -> Result<f64> {
    check_square(dx, dz, n)?;
    check_trust_k(n, k)?;
    Ok(trust_from(&Ranking::new(dx, n), &Ranking::new(dz, n), k))
}

pub fn continuity(dx: &[f64], dz: &[f64], n: usize, k: usize) -> Result<f64> {
    trustworthiness(dz, dx, n, k)
}

pub fn mrre(dx: &[f64], dz: &[f64], n: usize, k: usize) -> Result<f64> {
    check_square(dx, dz, n)?;
    check_k(n, k)?;
    Ok(mrre_from(&Ranking::new(dx, n), &Ranking::new(dz, n), k))
}

/// RMSE over the strict upper triangle after scaling each matrix by its
/// largest off-diagonal entry. An all-zero matrix is left unscaled.
pub fn drmse(dx: &[f64], dz: &[f64], n: usize) -> Result<f64> {
    check_square(dx, dz, n)?;
    if n < 2 {
        return Ok(0.0);
    }
    let max_off = |d: &[f64]| {
        (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .map(|(i, j)| d[i * n + j])
            .fold(0.0f64, f64::max)
    };
    let (mx, mz) = (max_off(dx), max_off(dz));
    let (sx, sz) = (if mx > 0.0 { mx } else { 1.0 }, if mz > 0.0 { mz } else { 1.0 });
    let mut sum = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let diff = dx[i * n + j] / sx - dz[i * n + j] / sz;
            sum += diff * diff;
        }
    }
    Ok((sum / (n * (n - 1) / 2) as f64).sqrt())
}

/// All five metrics, sharing the rank tables.
pub fn all_metrics(dx: &[f64], dz: &[f64], n: usize, k: usize) -> Result<Metrics> {
    check_square(dx, dz, n)?;
    check_trust_k(n, k)?;
    let (rx, rz) = (Ranking::new(dx, n), Ranking::new(dz, n));
    Ok(Metrics {
        knn: knn_from(&rx, &rz, k),
        trust: trust_from(&rx, &rz, k),
        cont: trust_from(&rz, &rx, k),
        mrre: mrre_from(&rx, &rz, k),
        drmse: drmse(dx, dz, n)?,
    })
}

fn report(scale: Scale, k: usize, m: Metrics, n_samples: usize) -> StructureReport {
    StructureReport {
        scale,
        k,
        knn: m.knn,
        trust: m.trust,
        cont: m.cont,
        mrre: m.mrre,
        drmse: m.drmse,
        n_samples,
    }
}

/// Global metrics between instances and local metrics between timestamps.
///
/// Returns `(local, global)`. The local report averages over the first
/// `min(N, 500)` samples.
pub fn evaluate(ds: &Dataset, rs: &ReprSet, k: usize) -> Result<(StructureReport, StructureReport)> {
    if ds.n != rs.n || ds.t != rs.t {
        return Err(Error::config(format!(
            "dataset is {}x{} but representations are {}x{}",
            ds.n, ds.t, rs.n, rs.t
        )));
    }
    let dx = euclidean_matrix(&ds.data, ds.n, ds.t * ds.d);
    let dz = euclidean_matrix(&rs.instance_reps, rs.n, rs.p);
    let global = report(Scale::Global, k, all_metrics(&dx, &dz, ds.n, k)?, ds.n);

    let samples = ds.n.min(LOCAL_SAMPLE_CAP);
    let per_sample = (0..samples)
        .into_par_iter()
        .map(|i| {
            let dx = euclidean_matrix(ds.instance(i), ds.t, ds.d);
            let dz = euclidean_matrix(rs.instance(i), rs.t, rs.p);
            all_metrics(&dx, &dz, ds.t, k)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut acc = Metrics::default();
    for m in &per_sample {
        acc.knn += m.knn;
        acc.trust += m.trust;
        acc.cont += m.cont;
        acc.mrre += m.mrre;
        acc.drmse += m.drmse;
    }
    let s = samples as f64;
    let mean = Metrics {
        knn: acc.knn / s,
        trust: acc.trust / s,
        cont: acc.cont / s,
        mrre: acc.mrre / s,
        drmse: acc.drmse / s,
    };
    Ok((report(Scale::Local, k, mean, samples), global))
}
