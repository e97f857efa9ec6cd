//! Hierarchical contrastive losses: TS2Vec and its soft-assignment variant SoftCLT.
//!
//! Both losses compare two views `z'`, `z''` of shape `[B, T, P]` with raw dot
//! products. Instance-wise contrast compares batch members at the same
//! timestamp; temporal contrast compares timestamps of one instance. The pair
//! is repeated on max-pooled representations (window 2) until one timestamp
//! is left, and depth losses are averaged.

use serde::{Deserialize, Serialize};

use crate::distance::check_distance_matrix;
use crate::error::{Error, Result};
use crate::tensor::DiffTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CltKind {
    #[default]
    Ts2vec,
    Softclt,
}

/// Sharpness schedule `m(k)` of the temporal soft weights over pooling depth `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MMode {
    #[default]
    Constant,
    Linear,
    Exponential,
}

impl MMode {
    pub fn factor(self, k: usize) -> f64 {
        match self {
            MMode::Constant => 1.0,
            MMode::Linear => (k + 1) as f64,
            MMode::Exponential => 2f64.powi(k as i32),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CltConfig {
    pub kind: CltKind,
    pub tau_inst: f64,
    pub tau_temp: f64,
    pub alpha: f64,
    pub lambda: f64,
    pub m_mode: MMode,
}

impl Default for CltConfig {
    fn default() -> Self {
        Self {
            kind: CltKind::Ts2vec,
            tau_inst: 0.0,
            tau_temp: 0.0,
            alpha: 0.5,
            lambda: 0.5,
            m_mode: MMode::Constant,
        }
    }
}

impl CltConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_inst >= 0.0 && self.tau_temp >= 0.0) {
            return Err(Error::config("temperatures must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.alpha) || !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::config("alpha and lambda must lie in [0, 1]"));
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Instance-wise and temporal similarity sums for anchor `(i, t)`.
///
/// `z1`, `z2` are `[B, T, P]` row-major.
pub fn similarity_sums(
    z1: &[f64],
    z2: &[f64],
    (b, t, p): (usize, usize, usize),
    i: usize,
    tt: usize,
) -> (f64, f64) {
    let at = |z: &[f64], n: usize, s: usize| -> Vec<f64> { z[(n * t + s) * p..(n * t + s + 1) * p].to_vec() };
    let (u1, u2) = (at(z1, i, tt), at(z2, i, tt));
    let mut inst = 0.0;
    for j in 0..b {
        inst += dot(&u1, &at(z2, j, tt)).exp() + dot(&u2, &at(z1, j, tt)).exp();
        if j != i {
            inst += dot(&u1, &at(z1, j, tt)).exp() + dot(&u2, &at(z2, j, tt)).exp();
        }
    }
    let mut temp = 0.0;
    for s in 0..t {
        temp += dot(&u1, &at(z2, i, s)).exp() + dot(&u2, &at(z1, i, s)).exp();
        if s != tt {
            temp += dot(&u1, &at(z1, i, s)).exp() + dot(&u2, &at(z2, i, s)).exp();
        }
    }
    (inst, temp)
}

/// Instance soft assignments from a `B × B` raw-space distance matrix.
pub fn soft_weight_inst(dist: &[f64], b: usize, tau: f64, alpha: f64) -> Result<Vec<f64>> {
    if let Some(msg) = check_distance_matrix(dist, b) {
        return Err(Error::contract(format!("instance distances: {msg}")));
    }
    let mut w: Vec<f64> = dist.iter().map(|&d| 2.0 * alpha / (1.0 + (tau * d).exp())).collect();
    for i in 0..b {
        w[i * b + i] += 1.0 - alpha;
    }
    Ok(w)
}

/// Temporal soft assignment between timestamps `t` and `s` at pooling depth `k`.
pub fn soft_weight_temp(t: usize, s: usize, tau: f64, m_mode: MMode, k: usize) -> f64 {
    let gap = t.abs_diff(s) as f64;
    2.0 / (1.0 + (tau * m_mode.factor(k) * gap).exp())
}

fn temporal_weights(len: usize, tau: f64, m_mode: MMode, k: usize) -> Vec<f64> {
    let mut w = vec![0.0; len * len];
    for t in 0..len {
        for s in 0..len {
            w[t * len + s] = soft_weight_temp(t, s, tau, m_mode, k);
        }
    }
    w
}

fn identity(n: usize) -> Vec<f64> {
    let mut w = vec![0.0; n * n];
    for i in 0..n {
        w[i * n + i] = 1.0;
    }
    w
}

/// `log(exp(a) + exp(b))` with a detached elementwise shift.
fn logaddexp<'t>(a: DiffTensor<'t>, b: DiffTensor<'t>) -> Result<DiffTensor<'t>> {
    let (va, vb) = (a.values(), b.values());
    let mx: Vec<f64> = va.iter().zip(vb.iter()).map(|(x, y)| x.max(*y)).collect();
    let mx = a.tape().constant(&a.shape(), mx)?;
    a.sub(mx)?.exp().add(b.sub(mx)?.exp())?.log()?.add(mx)
}

/// Weighted contrast over groups `g` of `m` tokens.
///
/// `z1`, `z2` are `[G, M, P]`; `w` is `M × M`. For each anchor `(g, i)` the
/// denominator pools both views; cross-view pairs take weight `w[i][j]` and
/// same-view pairs `w[i][j]` for `j != i`. Returns the mean over anchors.
fn weighted_contrast<'t>(z1: DiffTensor<'t>, z2: DiffTensor<'t>, w: &[f64]) -> Result<DiffTensor<'t>> {
    let s = z1.shape();
    if s.len() != 3 || z2.shape() != s {
        return Err(Error::shape("contrast", format!("views {s:?} and {:?}", z2.shape())));
    }
    let (g, m) = (s[0], s[1]);
    let n2 = 2 * m;
    let tape = z1.tape();
    let zc = DiffTensor::concat(&[z1, z2], 1)?;
    let gram = zc.matmul(zc.transpose(1, 2)?)?;
    let gv = gram.values();

    let mut shift = vec![f64::NEG_INFINITY; g * m];
    for gi in 0..g {
        for i in 0..m {
            for r in [i, m + i] {
                let row = &gv[(gi * n2 + r) * n2..(gi * n2 + r + 1) * n2];
                for (c, &v) in row.iter().enumerate() {
                    if c != r && v > shift[gi * m + i] {
                        shift[gi * m + i] = v;
                    }
                }
            }
        }
    }
    let mut shift_rows = Vec::with_capacity(g * n2);
    for gi in 0..g {
        let part = &shift[gi * m..(gi + 1) * m];
        shift_rows.extend_from_slice(part);
        shift_rows.extend_from_slice(part);
    }
    let shift_rows = tape.constant(&[g, n2, 1], shift_rows)?;
    let offdiag = tape.constant(&[n2, n2], (0..n2 * n2).map(|k| f64::from(k % (n2 + 1) != 0)).collect())?;
    let e = gram.sub(shift_rows)?.mul(offdiag)?.exp().mul(offdiag)?;
    let rows = e.sum_axis(2)?;
    let denom = rows.slice(1, 0, m)?.add(rows.slice(1, m, n2)?)?;
    let log_s = denom
        .log()?
        .add(tape.constant(&[g, m], shift)?)?
        .reshape(&[g, m, 1])?;

    let block = |r0: usize, c0: usize| gram.slice(1, r0, r0 + m)?.slice(2, c0, c0 + m);
    let log_cross = logaddexp(block(0, m)?, block(m, 0)?)?;
    let log_self = logaddexp(block(0, 0)?, block(m, m)?)?;

    let mut w_self = w.to_vec();
    for i in 0..m {
        w_self[i * m + i] = 0.0;
    }
    let w_cross = tape.constant(&[m, m], w.to_vec())?;
    let w_self = tape.constant(&[m, m], w_self)?;
    let terms = log_s
        .sub(log_cross)?
        .mul(w_cross)?
        .add(log_s.sub(log_self)?.mul(w_self)?)?;
    Ok(terms.sum().mul_scalar(1.0 / (g * m) as f64))
}

/// Per-depth instance and temporal losses; the temporal entry is `None` at depths with `T = 1`.
fn hierarchy<'t>(
    z1: DiffTensor<'t>,
    z2: DiffTensor<'t>,
    mut inst_w: impl FnMut(usize) -> Vec<f64>,
    mut temp_w: impl FnMut(usize, usize) -> Vec<f64>,
) -> Result<Vec<(DiffTensor<'t>, Option<DiffTensor<'t>>)>> {
    let s = z1.shape();
    if s.len() != 3 || z2.shape() != s {
        return Err(Error::shape("contrastive loss", format!("views {s:?} and {:?}", z2.shape())));
    }
    if s[1] == 0 {
        return Err(Error::shape("contrastive loss", "empty time axis"));
    }
    let b = s[0];
    let (mut a, mut c) = (z1, z2);
    let mut out = Vec::new();
    let mut depth = 0;
    loop {
        let t = a.shape()[1];
        let inst = weighted_contrast(a.transpose(0, 1)?, c.transpose(0, 1)?, &inst_w(b))?;
        let temp = if t > 1 {
            Some(weighted_contrast(a, c, &temp_w(t, depth))?)
        } else {
            None
        };
        out.push((inst, temp));
        if t == 1 {
            break;
        }
        a = a.max_pool2(1)?;
        c = c.max_pool2(1)?;
        depth += 1;
    }
    Ok(out)
}

fn depth_mean<'t>(terms: Vec<DiffTensor<'t>>) -> Result<DiffTensor<'t>> {
    let n = terms.len() as f64;
    let mut acc = terms[0];
    for t in &terms[1..] {
        acc = acc.add(*t)?;
    }
    Ok(acc.mul_scalar(1.0 / n))
}

/// Hierarchical TS2Vec loss on overlap-aligned views `[B, T, P]`.
pub fn ts2vec_loss<'t>(z1: DiffTensor<'t>, z2: DiffTensor<'t>) -> Result<DiffTensor<'t>> {
    let levels = hierarchy(z1, z2, identity, |t, _| identity(t))?;
    let per_depth = levels
        .into_iter()
        .map(|(inst, temp)| match temp {
            Some(temp) => inst.add(temp),
            None => Ok(inst),
        })
        .collect::<Result<Vec<_>>>()?;
    depth_mean(per_depth)
}

/// Hierarchical SoftCLT loss. `raw_dist` is the `B × B` distance matrix of
/// the batch's raw series, reused at every depth.
pub fn softclt_loss<'t>(
    z1: DiffTensor<'t>,
    z2: DiffTensor<'t>,
    raw_dist: &[f64],
    cfg: &CltConfig,
) -> Result<DiffTensor<'t>> {
    cfg.validate()?;
    let b = z1.shape().first().copied().unwrap_or(0);
    let w_inst = soft_weight_inst(raw_dist, b, cfg.tau_inst, cfg.alpha)?;
    let levels = hierarchy(
        z1,
        z2,
        |_| w_inst.clone(),
        |t, k| temporal_weights(t, cfg.tau_temp, cfg.m_mode, k),
    )?;
    let per_depth = levels
        .into_iter()
        .map(|(inst, temp)| {
            let inst = inst.mul_scalar(cfg.lambda);
            match temp {
                Some(temp) => inst.add(temp.mul_scalar(1.0 - cfg.lambda)),
                None => Ok(inst),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    depth_mean(per_depth)
}

/// Dispatches on `cfg.kind`; `raw_dist` is only read by SoftCLT.
pub fn clt_loss<'t>(
    z1: DiffTensor<'t>,
    z2: DiffTensor<'t>,
    raw_dist: &[f64],
    cfg: &CltConfig,
) -> Result<DiffTensor<'t>> {
    match cfg.kind {
        CltKind::Ts2vec => ts2vec_loss(z1, z2),
        CltKind::Softclt => softclt_loss(z1, z2, raw_dist, cfg),
    }
}
