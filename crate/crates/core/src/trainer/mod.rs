//! Self-supervised training loop, internal validation split and grid search.

mod search;

pub use search::{
    expand_stage, grid_search, plan_runs, Param, RunResult, SearchOutcome, SearchPlan, SearchSpace, Setting, Stage,
    StageResult,
};

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::sample_crop_pair;
use crate::clt::{clt_loss, CltConfig, CltKind};
use crate::dataio::Dataset;
use crate::distance::euclidean_matrix;
use crate::encoder::{Adam, Encoder, EncoderConfig, Mode};
use crate::error::{Error, Result};
use crate::ggeo::{geodesic_distances, ggeo_loss_with, kernel_laplacian, GGeoConfig};
use crate::tensor::{DiffTensor, Tape};
use crate::topo::topo_loss;
use crate::weighting::{spclt_total, DynamicWeights, WeightUpdate};

const TRAIN_STREAM: u64 = 1;
const VAL_STREAM: u64 = 2;
const SPLIT_STREAM: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SpKind {
    #[default]
    None,
    Topo,
    Ggeo,
}

/// The six compared losses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "TS2Vec")]
    Ts2vec,
    #[serde(rename = "SoftCLT")]
    Softclt,
    #[serde(rename = "Topo-TS2Vec")]
    TopoTs2vec,
    #[serde(rename = "GGeo-TS2Vec")]
    GgeoTs2vec,
    #[serde(rename = "Topo-SoftCLT")]
    TopoSoftclt,
    #[serde(rename = "GGeo-SoftCLT")]
    GgeoSoftclt,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Ts2vec,
        Method::Softclt,
        Method::TopoTs2vec,
        Method::GgeoTs2vec,
        Method::TopoSoftclt,
        Method::GgeoSoftclt,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Method::Ts2vec => "TS2Vec",
            Method::Softclt => "SoftCLT",
            Method::TopoTs2vec => "Topo-TS2Vec",
            Method::GgeoTs2vec => "GGeo-TS2Vec",
            Method::TopoSoftclt => "Topo-SoftCLT",
            Method::GgeoSoftclt => "GGeo-SoftCLT",
        }
    }

    pub fn clt_kind(self) -> CltKind {
        match self {
            Method::Ts2vec | Method::TopoTs2vec | Method::GgeoTs2vec => CltKind::Ts2vec,
            _ => CltKind::Softclt,
        }
    }

    pub fn sp_kind(self) -> SpKind {
        match self {
            Method::Ts2vec | Method::Softclt => SpKind::None,
            Method::TopoTs2vec | Method::TopoSoftclt => SpKind::Topo,
            Method::GgeoTs2vec | Method::GgeoSoftclt => SpKind::Ggeo,
        }
    }

    pub fn from_parts(kind: CltKind, sp: SpKind) -> Self {
        match (kind, sp) {
            (CltKind::Ts2vec, SpKind::None) => Method::Ts2vec,
            (CltKind::Ts2vec, SpKind::Topo) => Method::TopoTs2vec,
            (CltKind::Ts2vec, SpKind::Ggeo) => Method::GgeoTs2vec,
            (CltKind::Softclt, SpKind::None) => Method::Softclt,
            (CltKind::Softclt, SpKind::Topo) => Method::TopoSoftclt,
            (CltKind::Softclt, SpKind::Ggeo) => Method::GgeoSoftclt,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.id().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                let ids: Vec<_> = Method::ALL.iter().map(|m| m.id()).collect();
                Error::config(format!("unknown method `{s}`, expected one of {}", ids.join(", ")))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub clt: CltConfig,
    pub sp_kind: SpKind,
    pub ggeo: GGeoConfig,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_eta: f64,
    pub weight_update: WeightUpdate,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Smallest validation improvement that resets the patience counter.
    pub min_delta: f64,
    /// Epochs without improvement before the learning rate is halved.
    pub plateau_epochs: usize,
    pub lr_floor: f64,
    /// Keep the learning rate constant and skip early stopping.
    pub constant_lr: bool,
    /// Hard cap on optimisation steps.
    pub max_steps: Option<usize>,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            clt: CltConfig::default(),
            sp_kind: SpKind::None,
            ggeo: GGeoConfig::default(),
            batch_size: 8,
            lr: 0.001,
            lr_eta: 0.05,
            weight_update: WeightUpdate::Adam,
            max_epochs: 600,
            patience: 10,
            seed: 0,
            min_delta: 1e-4,
            plateau_epochs: 5,
            lr_floor: 1e-5,
            constant_lr: false,
            max_steps: None,
        }
    }
}

impl LossConfig {
    pub fn for_method(method: Method) -> Self {
        let mut cfg = Self::default();
        cfg.clt.kind = method.clt_kind();
        cfg.sp_kind = method.sp_kind();
        cfg
    }

    pub fn method(&self) -> Method {
        Method::from_parts(self.clt.kind, self.sp_kind)
    }

    pub fn validate(&self) -> Result<()> {
        self.clt.validate()?;
        self.ggeo.validate()?;
        if self.batch_size < 2 {
            return Err(Error::config(format!(
                "batch size must be at least 2 for instance-wise contrast, got {}",
                self.batch_size
            )));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) || !(self.lr_eta >= 0.0 && self.lr_eta.is_finite()) {
            return Err(Error::config("learning rates must be finite and non-negative"));
        }
        if self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::config("max_epochs and patience must be positive"));
        }
        Ok(())
    }

    /// Short hex digest of the canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("loss config serialises");
        let hash = Sha256::digest(&json);
        hash[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Stratified (or uniform) 25% validation split.
pub fn split_validation(ds: &Dataset, seed: u64) -> Result<(Dataset, Dataset)> {
    if ds.n < 4 {
        return Err(Error::config(format!("validation split needs N >= 4, got {}", ds.n)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SPLIT_STREAM);
    let n_val = ((ds.n as f64) * 0.25).round() as usize;
    let groups: Vec<Vec<usize>> = match &ds.labels {
        Some(labels) => {
            let classes = labels.iter().max().map_or(0, |m| m + 1);
            let mut g = vec![Vec::new(); classes];
            for (i, &c) in labels.iter().enumerate() {
                g[c].push(i);
            }
            g.retain(|v| !v.is_empty());
            g
        }
        None => vec![(0..ds.n).collect()],
    };
    // Largest-remainder allocation keeps the total at exactly n_val.
    let exact: Vec<f64> = groups.iter().map(|g| g.len() as f64 * n_val as f64 / ds.n as f64).collect();
    let mut quota: Vec<usize> = exact.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..groups.len()).collect();
    order.sort_by(|&a, &b| {
        let (fa, fb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let missing = n_val - quota.iter().sum::<usize>();
    for &g in order.iter().take(missing) {
        quota[g] += 1;
    }
    let mut val = Vec::with_capacity(n_val);
    for (g, q) in groups.into_iter().zip(quota) {
        let mut g = g;
        g.shuffle(&mut rng);
        val.extend_from_slice(&g[..q]);
    }
    val.sort_unstable();
    let train: Vec<usize> = (0..ds.n).filter(|i| val.binary_search(i).is_err()).collect();
    Ok((ds.subset(&train), ds.subset(&val)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub l_clt: f64,
    pub l_sp: f64,
    pub sigma_clt: f64,
    pub sigma_sp: f64,
    pub total: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 0 is the evaluation before any update.
    pub epoch: usize,
    pub val_clt: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub steps: Vec<StepRecord>,
    pub validation: Vec<EpochRecord>,
}

impl TrainHistory {
    /// One row per step; `val_clt` is filled on the last step of each epoch.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(["epoch", "step", "l_clt", "l_sp", "sigma_clt", "sigma_sp", "total", "lr", "val_clt"])
            .map_err(csv_err)?;
        for (k, s) in self.steps.iter().enumerate() {
            let epoch_end = self.steps.get(k + 1).is_none_or(|next| next.epoch != s.epoch);
            let val = if epoch_end {
                self.validation
                    .iter()
                    .find(|v| v.epoch == s.epoch)
                    .map(|v| v.val_clt.to_string())
                    .unwrap_or_default()
            } else {
                String::new()
            };
            w.write_record([
                s.epoch.to_string(),
                s.step.to_string(),
                s.l_clt.to_string(),
                s.l_sp.to_string(),
                s.sigma_clt.to_string(),
                s.sigma_sp.to_string(),
                s.total.to_string(),
                s.lr.to_string(),
                val,
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("history csv: {e}"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    EarlyStop,
    MaxEpochs,
    MaxSteps,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Encoder at the best validation epoch.
    pub encoder: Encoder,
    /// Encoder after the last step.
    pub final_encoder: Encoder,
    pub weights: DynamicWeights,
    pub history: TrainHistory,
    pub best_epoch: usize,
    pub best_val: f64,
    /// Validation loss after the last epoch.
    pub final_val: f64,
    pub stop: StopReason,
}

impl TrainOutcome {
    pub fn initial_val(&self) -> f64 {
        self.history.validation[0].val_clt
    }
}

/// Splits off a validation set with `cfg.seed` and trains on the rest.
pub fn train(ds: &Dataset, enc_cfg: &EncoderConfig, cfg: &LossConfig) -> Result<TrainOutcome> {
    let (tr, val) = split_validation(ds, cfg.seed)?;
    train_split(&tr, &val, enc_cfg, cfg)
}

/// Raw-space quantities that stay fixed during training.
struct Precomputed {
    dist: Vec<f64>,
    geodesics: Option<Vec<Vec<f64>>>,
}

impl Precomputed {
    fn new(ds: &Dataset, cfg: &LossConfig, need_geodesics: bool) -> Self {
        let dist = euclidean_matrix(&ds.data, ds.n, ds.t * ds.d);
        let geodesics = need_geodesics.then(|| {
            (0..ds.n)
                .map(|i| geodesic_distances(ds.instance(i), ds.t, ds.d, cfg.ggeo.k_geo))
                .collect()
        });
        Self { dist, geodesics }
    }

    fn batch_dist(&self, n: usize, idx: &[usize]) -> Vec<f64> {
        idx.iter()
            .flat_map(|&i| idx.iter().map(move |&j| self.dist[i * n + j]))
            .collect()
    }

    /// Laplacians of the geodesic submatrices on timestamps `[start, end)`.
    fn laplacians(&self, t: usize, idx: &[usize], start: usize, end: usize, h: f64) -> Result<Vec<f64>> {
        let geo = self.geodesics.as_ref().expect("geodesics precomputed");
        let len = end - start;
        let mut out = Vec::with_capacity(idx.len() * len * len);
        for &i in idx {
            let g = &geo[i];
            let sub: Vec<f64> = (start..end)
                .flat_map(|r| (start..end).map(move |c| g[r * t + c]))
                .collect();
            out.extend(kernel_laplacian(&sub, len, h)?);
        }
        Ok(out)
    }
}

fn gather(ds: &Dataset, idx: &[usize]) -> Vec<f64> {
    idx.iter().flat_map(|&i| ds.instance(i).iter().copied()).collect()
}

fn check_finite(term: &'static str, step: usize, value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite { term, step, value })
    }
}

/// Encodes both crops and returns the overlap-aligned views and the overlap range.
#[allow(clippy::type_complexity)]
fn two_views<'t, R: rand::Rng>(
    bound: &crate::encoder::Bound<'t>,
    x: DiffTensor<'t>,
    t: usize,
    mode: Mode,
    rng: &mut R,
) -> Result<(DiffTensor<'t>, DiffTensor<'t>, (usize, usize))> {
    let crop = sample_crop_pair(t, rng)?;
    let o1 = bound.forward(x.slice(1, crop.a1, crop.b1)?, mode, rng)?;
    let o2 = bound.forward(x.slice(1, crop.a2, crop.b2)?, mode, rng)?;
    let (s1, e1) = crop.overlap_in_first();
    let (s2, e2) = crop.overlap_in_second();
    Ok((o1.slice(1, s1, e1)?, o2.slice(1, s2, e2)?, (crop.a2, crop.b1)))
}

/// Structure-preservation term averaged over the two views.
fn sp_term<'t>(
    cfg: &LossConfig,
    pre: &Precomputed,
    t: usize,
    idx: &[usize],
    raw_dist: &[f64],
    views: (DiffTensor<'t>, DiffTensor<'t>),
    overlap: (usize, usize),
) -> Result<Option<DiffTensor<'t>>> {
    let (z1, z2) = views;
    let pair = match cfg.sp_kind {
        SpKind::None => return Ok(None),
        SpKind::Topo => {
            let one = |z: DiffTensor<'t>| topo_loss(raw_dist, z.max_axis(1)?.pairwise_distances()?);
            (one(z1)?, one(z2)?)
        }
        SpKind::Ggeo => {
            let laps = pre.laplacians(t, idx, overlap.0, overlap.1, cfg.ggeo.h)?;
            (ggeo_loss_with(&laps, z1)?, ggeo_loss_with(&laps, z2)?)
        }
    };
    Ok(Some(pair.0.add(pair.1)?.mul_scalar(0.5)))
}

/// Validation contrastive loss in eval mode with crops from a fixed stream.
fn validation_loss(encoder: &Encoder, val: &Dataset, pre: &Precomputed, cfg: &LossConfig) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(VAL_STREAM);
    let b = cfg.batch_size.min(val.n);
    let mut chunks: Vec<Vec<usize>> = (0..val.n).collect::<Vec<_>>().chunks(b).map(<[usize]>::to_vec).collect();
    // A trailing singleton batch has no instance-wise negatives.
    if chunks.len() > 1 && chunks.last().is_some_and(|c| c.len() == 1) {
        let last = chunks.pop().unwrap();
        chunks.last_mut().unwrap().extend(last);
    }
    let mut total = 0.0;
    for idx in &chunks {
        let tape = Tape::new();
        let bound = encoder.bind(&tape)?;
        let x = tape.constant(&[idx.len(), val.t, val.d], gather(val, idx))?;
        let (z1, z2, _) = two_views(&bound, x, val.t, Mode::Eval, &mut rng)?;
        let raw = pre.batch_dist(val.n, idx);
        total += clt_loss(z1, z2, &raw, &cfg.clt)?.item() * idx.len() as f64;
    }
    Ok(total / val.n as f64)
}

/// Trains a freshly initialised encoder on `tr`, selecting the best epoch by
/// validation loss on `val`.
pub fn train_split(tr: &Dataset, val: &Dataset, enc_cfg: &EncoderConfig, cfg: &LossConfig) -> Result<TrainOutcome> {
    train_from(Encoder::new(enc_cfg.clone(), cfg.seed)?, tr, val, cfg)
}

/// [`train_split`] starting from the given encoder.
pub fn train_from(mut encoder: Encoder, tr: &Dataset, val: &Dataset, cfg: &LossConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let enc_cfg = encoder.config().clone();
    if cfg.batch_size > tr.n {
        return Err(Error::config(format!(
            "batch size {} exceeds the {} training instances",
            cfg.batch_size, tr.n
        )));
    }
    if tr.d != enc_cfg.input_dim || val.d != tr.d || val.t != tr.t {
        return Err(Error::config(format!(
            "train {}x{}, validation {}x{} and encoder input {} disagree",
            tr.t, tr.d, val.t, val.d, enc_cfg.input_dim
        )));
    }
    let ggeo = cfg.sp_kind == SpKind::Ggeo;
    let pre_tr = Precomputed::new(tr, cfg, ggeo);
    let pre_val = Precomputed::new(val, cfg, false);

    let mut adam = Adam::new(encoder.params().len(), cfg.lr);
    let mut weights = DynamicWeights::with_update(cfg.lr_eta, cfg.weight_update);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(TRAIN_STREAM);

    let mut history = TrainHistory::default();
    let v0 = check_finite("val_clt", 0, validation_loss(&encoder, val, &pre_val, cfg)?)?;
    history.validation.push(EpochRecord {
        epoch: 0,
        val_clt: v0,
        lr: adam.lr,
    });
    let (mut best_val, mut best_epoch, mut best_params) = (v0, 0, encoder.params().to_vec());
    let mut final_val = v0;
    let (mut bad_epochs, mut plateau) = (0usize, 0usize);
    let mut step = 0usize;
    let mut stop = StopReason::MaxEpochs;
    let b = cfg.batch_size;
    let mut order: Vec<usize> = (0..tr.n).collect();

    'epochs: for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        for idx in order.chunks_exact(b) {
            if cfg.max_steps.is_some_and(|m| step >= m) {
                stop = StopReason::MaxSteps;
                break 'epochs;
            }
            step += 1;
            let tape = Tape::new();
            let bound = encoder.bind(&tape)?;
            let x = tape.constant(&[b, tr.t, tr.d], gather(tr, idx))?;
            let (z1, z2, overlap) = two_views(&bound, x, tr.t, Mode::Train, &mut rng)?;
            let raw = pre_tr.batch_dist(tr.n, idx);
            let l_clt = clt_loss(z1, z2, &raw, &cfg.clt)?;
            check_finite("l_clt", step, l_clt.item())?;
            let l_sp = sp_term(cfg, &pre_tr, tr.t, idx, &raw, (z1, z2), overlap)?;

            let (total, s_leaves) = match l_sp {
                None => (l_clt, None),
                Some(l_sp) => {
                    check_finite("l_sp", step, l_sp.item())?;
                    let s_clt = tape.leaf(&[], vec![weights.s_clt])?;
                    let s_sp = tape.leaf(&[], vec![weights.s_sp])?;
                    (spclt_total(l_clt, l_sp, s_clt, s_sp)?, Some((s_clt, s_sp)))
                }
            };
            check_finite("total", step, total.item())?;
            total.backward()?;
            let grads = bound.gradients();
            if let Some(bad) = grads.iter().find(|g| !g.is_finite()) {
                return Err(Error::NonFinite {
                    term: "gradient",
                    step,
                    value: *bad,
                });
            }
            adam.step(encoder.params_mut(), &grads);
            if let Some((s_clt, s_sp)) = s_leaves {
                let g = |s: DiffTensor<'_>| s.grad().map_or(0.0, |g| g[0]);
                weights.step(g(s_clt), g(s_sp));
                check_finite("s_clt", step, weights.s_clt)?;
                check_finite("s_sp", step, weights.s_sp)?;
            }
            history.steps.push(StepRecord {
                epoch,
                step,
                l_clt: l_clt.item(),
                l_sp: l_sp.map_or(0.0, |l| l.item()),
                sigma_clt: weights.sigma_clt(),
                sigma_sp: weights.sigma_sp(),
                total: total.item(),
                lr: adam.lr,
            });
        }

        let v = check_finite("val_clt", step, validation_loss(&encoder, val, &pre_val, cfg)?)?;
        final_val = v;
        history.validation.push(EpochRecord {
            epoch,
            val_clt: v,
            lr: adam.lr,
        });
        if v < best_val - cfg.min_delta {
            (best_val, best_epoch) = (v, epoch);
            best_params.copy_from_slice(encoder.params());
            bad_epochs = 0;
            plateau = 0;
        } else {
            if v < best_val {
                // Small gains still refresh the stored best.
                best_val = v;
                best_epoch = epoch;
                best_params.copy_from_slice(encoder.params());
            }
            bad_epochs += 1;
            plateau += 1;
        }
        if cfg.constant_lr {
            continue;
        }
        if plateau >= cfg.plateau_epochs {
            if adam.lr > cfg.lr_floor {
                adam.lr = (adam.lr * 0.5).max(cfg.lr_floor);
            }
            plateau = 0;
        }
        if bad_epochs >= cfg.patience {
            stop = StopReason::EarlyStop;
            break;
        }
    }

    let best = Encoder::from_params(enc_cfg, best_params)?;
    Ok(TrainOutcome {
        encoder: best,
        final_encoder: encoder,
        weights,
        history,
        best_epoch,
        best_val,
        final_val,
        stop,
    })
}
