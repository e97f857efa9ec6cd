//! Staged hyperparameter grid search.
//!
//! Each stage sweeps the Cartesian product of its tuned parameters, copies
//! inherited parameters from the winner of a named earlier stage, and leaves
//! the rest at their defaults. Runs are scored by validation contrastive loss
//! after a fixed iteration budget at a constant learning rate.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{split_validation, train_split, LossConfig, Method};
use crate::clt::MMode;
use crate::dataio::Dataset;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Param {
    Bs,
    LrEta,
    H,
    TauTemp,
    M,
    TauInst,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSpace {
    pub bs: Vec<usize>,
    pub lr_eta: Vec<f64>,
    pub h: Vec<f64>,
    pub tau_temp: Vec<f64>,
    pub m: Vec<MMode>,
    pub tau_inst: Vec<f64>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            bs: vec![8, 16, 32],
            lr_eta: vec![0.01, 0.05],
            h: vec![0.25, 1.0, 9.0, 25.0, 49.0],
            tau_temp: vec![0.5, 1.0, 1.5, 2.0, 2.5],
            m: vec![MMode::Constant, MMode::Linear, MMode::Exponential],
            tau_inst: vec![1.0, 3.0, 5.0, 10.0, 20.0],
        }
    }
}

/// One point of the search space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Setting {
    pub bs: usize,
    pub lr_eta: f64,
    pub h: f64,
    pub tau_temp: f64,
    pub m: MMode,
    pub tau_inst: f64,
}

impl Default for Setting {
    fn default() -> Self {
        Self {
            bs: 8,
            lr_eta: 0.05,
            h: 1.0,
            tau_temp: 0.0,
            m: MMode::Constant,
            tau_inst: 0.0,
        }
    }
}

impl Setting {
    fn copy_from(&mut self, other: &Setting, p: Param) {
        match p {
            Param::Bs => self.bs = other.bs,
            Param::LrEta => self.lr_eta = other.lr_eta,
            Param::H => self.h = other.h,
            Param::TauTemp => self.tau_temp = other.tau_temp,
            Param::M => self.m = other.m,
            Param::TauInst => self.tau_inst = other.tau_inst,
        }
    }

    /// `base` with this setting and `method` applied.
    pub fn apply(&self, method: Method, base: &LossConfig) -> LossConfig {
        let mut cfg = base.clone();
        cfg.clt.kind = method.clt_kind();
        cfg.sp_kind = method.sp_kind();
        cfg.batch_size = self.bs;
        cfg.lr_eta = self.lr_eta;
        cfg.ggeo.h = self.h;
        cfg.clt.tau_temp = self.tau_temp;
        cfg.clt.m_mode = self.m;
        cfg.clt.tau_inst = self.tau_inst;
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub name: String,
    pub method: Method,
    pub tuned: Vec<Param>,
    /// Parameter → name of the earlier stage whose winner supplies it.
    #[serde(default)]
    pub inherit: BTreeMap<Param, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchPlan {
    pub stages: Vec<Stage>,
    pub space: SearchSpace,
    /// Budget is `max(min_iterations, iterations_per_sample × N_train)` steps.
    pub min_iterations: usize,
    pub iterations_per_sample: usize,
    pub max_runs: usize,
}

fn stage(name: &str, method: Method, tuned: &[Param], inherit: &[(Param, &str)]) -> Stage {
    Stage {
        name: name.to_string(),
        method,
        tuned: tuned.to_vec(),
        inherit: inherit.iter().map(|&(p, s)| (p, s.to_string())).collect(),
    }
}

impl Default for SearchPlan {
    fn default() -> Self {
        use Param::*;
        let p2 = "SoftCLT Phase 2";
        let stages = vec![
            stage("TS2Vec", Method::Ts2vec, &[Bs], &[]),
            stage("Topo-TS2Vec", Method::TopoTs2vec, &[LrEta], &[(Bs, "TS2Vec")]),
            stage("GGeo-TS2Vec", Method::GgeoTs2vec, &[LrEta, H], &[(Bs, "TS2Vec")]),
            stage("SoftCLT Phase 1", Method::Softclt, &[TauTemp, M], &[]),
            stage(
                p2,
                Method::Softclt,
                &[Bs, TauInst],
                &[(TauTemp, "SoftCLT Phase 1"), (M, "SoftCLT Phase 1")],
            ),
            stage(
                "Topo-SoftCLT",
                Method::TopoSoftclt,
                &[LrEta],
                &[(Bs, p2), (TauTemp, p2), (M, p2), (TauInst, p2)],
            ),
            stage(
                "GGeo-SoftCLT",
                Method::GgeoSoftclt,
                &[LrEta, H],
                &[(Bs, p2), (TauTemp, p2), (M, p2), (TauInst, p2)],
            ),
        ];
        Self {
            stages,
            space: SearchSpace::default(),
            min_iterations: 200,
            iterations_per_sample: 2,
            max_runs: 63,
        }
    }
}

impl SearchPlan {
    pub fn budget(&self, train_size: usize) -> usize {
        self.min_iterations.max(self.iterations_per_sample * train_size)
    }

    fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::config("search plan has no stages"));
        }
        for (k, s) in self.stages.iter().enumerate() {
            if self.stages[..k].iter().any(|o| o.name == s.name) {
                return Err(Error::config(format!("duplicate stage name `{}`", s.name)));
            }
            for (p, from) in &s.inherit {
                if s.tuned.contains(p) {
                    return Err(Error::config(format!("stage `{}` both tunes and inherits {p:?}", s.name)));
                }
                if !self.stages[..k].iter().any(|o| &o.name == from) {
                    return Err(Error::config(format!(
                        "stage `{}` inherits from `{from}`, which is not an earlier stage",
                        s.name
                    )));
                }
            }
        }
        if self.budget(1) == 0 {
            return Err(Error::config("iteration budget is zero"));
        }
        Ok(())
    }
}

/// Candidate settings of one stage, tuned parameters varying fastest last.
///
/// Batch sizes are capped at `train_size` and deduplicated.
pub fn expand_stage(stage: &Stage, base: &Setting, space: &SearchSpace, train_size: usize) -> Result<Vec<Setting>> {
    let mut base = *base;
    base.bs = base.bs.min(train_size);
    let mut out = vec![base];
    for &p in &stage.tuned {
        let mut next = Vec::new();
        for s in &out {
            let mut variants: Vec<Setting> = Vec::new();
            let mut push = |f: &dyn Fn(&mut Setting)| {
                let mut v = *s;
                f(&mut v);
                if !variants.contains(&v) {
                    variants.push(v);
                }
            };
            match p {
                Param::Bs => space.bs.iter().for_each(|&x| push(&|v| v.bs = x.min(train_size))),
                Param::LrEta => space.lr_eta.iter().for_each(|&x| push(&|v| v.lr_eta = x)),
                Param::H => space.h.iter().for_each(|&x| push(&|v| v.h = x)),
                Param::TauTemp => space.tau_temp.iter().for_each(|&x| push(&|v| v.tau_temp = x)),
                Param::M => space.m.iter().for_each(|&x| push(&|v| v.m = x)),
                Param::TauInst => space.tau_inst.iter().for_each(|&x| push(&|v| v.tau_inst = x)),
            }
            if variants.is_empty() {
                return Err(Error::config(format!(
                    "stage `{}` tunes {p:?} over an empty search space",
                    stage.name
                )));
            }
            next.extend(variants);
        }
        out = next;
    }
    Ok(out)
}

/// Number of runs per stage, in plan order.
pub fn plan_runs(plan: &SearchPlan, train_size: usize) -> Result<Vec<(String, usize)>> {
    plan.validate()?;
    let counts = plan
        .stages
        .iter()
        .map(|s| Ok((s.name.clone(), expand_stage(s, &Setting::default(), &plan.space, train_size)?.len())))
        .collect::<Result<Vec<_>>>()?;
    let total: usize = counts.iter().map(|c| c.1).sum();
    if total > plan.max_runs {
        return Err(Error::config(format!(
            "plan expands to {total} runs, more than the limit of {}",
            plan.max_runs
        )));
    }
    Ok(counts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub setting: Setting,
    /// Validation contrastive loss after the budget; infinite if the run failed numerically.
    pub val_clt: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageResult {
    pub name: String,
    pub method: Method,
    pub runs: Vec<RunResult>,
    pub best: Setting,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub budget: usize,
    pub train_size: usize,
    pub stages: Vec<StageResult>,
    /// Final configuration per method, from the last stage that searched it.
    pub best: BTreeMap<Method, LossConfig>,
}

/// Runs `plan` on `ds`; `base` supplies everything the plan does not set.
/// Runs inside a stage execute on up to `jobs` threads.
pub fn grid_search(
    ds: &Dataset,
    plan: &SearchPlan,
    enc_cfg: &EncoderConfig,
    base: &LossConfig,
    jobs: usize,
) -> Result<SearchOutcome> {
    let (tr, val) = split_validation(ds, base.seed)?;
    plan_runs(plan, tr.n)?;
    let budget = plan.budget(tr.n);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::config(format!("thread pool: {e}")))?;

    let mut winners: HashMap<&str, Setting> = HashMap::new();
    let mut stages = Vec::with_capacity(plan.stages.len());
    let mut best = BTreeMap::new();
    for stage in &plan.stages {
        let mut start = Setting::default();
        for (p, from) in &stage.inherit {
            start.copy_from(&winners[from.as_str()], *p);
        }
        let candidates = expand_stage(stage, &start, &plan.space, tr.n)?;
        let runs = pool.install(|| {
            candidates
                .par_iter()
                .map(|s| {
                    let mut cfg = s.apply(stage.method, base);
                    cfg.max_steps = Some(budget);
                    cfg.max_epochs = usize::MAX;
                    cfg.constant_lr = true;
                    match train_split(&tr, &val, enc_cfg, &cfg) {
                        Ok(o) => Ok(RunResult {
                            setting: *s,
                            val_clt: o.final_val,
                            error: None,
                        }),
                        Err(e) if e.is_numeric_error() => Ok(RunResult {
                            setting: *s,
                            val_clt: f64::INFINITY,
                            error: Some(e.to_string()),
                        }),
                        Err(e) => Err(e),
                    }
                })
                .collect::<Result<Vec<_>>>()
        })?;
        let winner = runs
            .iter()
            .enumerate()
            .min_by(|(i, a), (j, b)| a.val_clt.total_cmp(&b.val_clt).then(i.cmp(j)))
            .map(|(_, r)| r.setting)
            .expect("stage has at least one run");
        winners.insert(&stage.name, winner);
        best.insert(stage.method, winner.apply(stage.method, base));
        stages.push(StageResult {
            name: stage.name.clone(),
            method: stage.method,
            runs,
            best: winner,
        });
    }
    Ok(SearchOutcome {
        budget,
        train_size: tr.n,
        stages,
        best,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_plan_counts() {
        let counts = plan_runs(&SearchPlan::default(), 1000).unwrap();
        let n: Vec<usize> = counts.iter().map(|c| c.1).collect();
        assert_eq!(n, vec![3, 2, 10, 15, 15, 2, 10]);
        assert_eq!(n.iter().sum::<usize>(), 57);
    }

    #[test]
    fn batch_sizes_are_capped_by_train_size() {
        let plan = SearchPlan::default();
        let runs = expand_stage(&plan.stages[0], &Setting::default(), &plan.space, 12).unwrap();
        let bs: Vec<usize> = runs.iter().map(|s| s.bs).collect();
        assert_eq!(bs, vec![8, 12]);
        let runs = expand_stage(&plan.stages[1], &Setting::default(), &plan.space, 5).unwrap();
        assert!(runs.iter().all(|s| s.bs == 5));
    }

    #[test]
    fn empty_space_is_rejected() {
        let mut plan = SearchPlan::default();
        plan.space.h.clear();
        assert!(matches!(plan_runs(&plan, 100), Err(Error::Config(_))));
    }

    #[test]
    fn bad_inheritance_is_rejected() {
        let mut plan = SearchPlan::default();
        plan.stages.swap(0, 1);
        assert!(plan_runs(&plan, 100).is_err());
    }

    #[test]
    fn run_limit() {
        let mut plan = SearchPlan::default();
        plan.space.h.push(100.0);
        plan.space.h.push(200.0);
        plan.space.h.push(400.0);
        assert!(plan_runs(&plan, 100).is_err());
    }

    #[test]
    fn plan_json_round_trip() {
        let plan = SearchPlan::default();
        let json = serde_json::to_string(&plan).unwrap();
        assert!(json.contains("\"tau_temp\":\"SoftCLT Phase 1\""));
        let back: SearchPlan = serde_json::from_str(&json).unwrap();
        assert_eq!(back, plan);
        let partial: SearchPlan = serde_json::from_str(r#"{"min_iterations": 5}"#).unwrap();
        assert_eq!(partial.stages.len(), 7);
    }

    #[test]
    fn apply_sets_every_field() {
        let s = Setting {
            bs: 16,
            lr_eta: 0.01,
            h: 9.0,
            tau_temp: 2.0,
            m: MMode::Linear,
            tau_inst: 3.0,
        };
        let cfg = s.apply(Method::GgeoSoftclt, &LossConfig::default());
        assert_eq!(cfg.method(), Method::GgeoSoftclt);
        assert_eq!((cfg.batch_size, cfg.lr_eta, cfg.ggeo.h), (16, 0.01, 9.0));
        assert_eq!((cfg.clt.tau_temp, cfg.clt.m_mode, cfg.clt.tau_inst), (2.0, MMode::Linear, 3.0));
    }
}
