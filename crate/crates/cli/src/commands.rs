use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;
use spclt_core::checkpoint::{write_run, Checkpoint};
use spclt_core::classify::{knn_classify, ClassificationReport};
use spclt_core::dataio::{
    load_dataset, read_repr, render_ts, write_csv_dataset, write_instance_csv, write_repr, znormalize, Dataset,
};
use spclt_core::encoder::EncoderConfig;
use spclt_core::metrics::evaluate as structure;
use spclt_core::synth::{generate, SynthKind, SynthSpec};
use spclt_core::trainer::{grid_search as search, train as fit, LossConfig, Method, SearchPlan};
use spclt_core::Error;

use crate::labels::{load_names, encode_pair};
use crate::{
    resolve_seed, ClassifyArgs, CliError, CliResult, DataArgs, EncodeArgs, EvaluateArgs, GridArgs, SynthArgs,
    TrainArgs,
};

/// File name `report` looks for when `evaluate --out` targets a run directory.
pub const STRUCTURE_FILE: &str = "structure.json";
pub const CLASSIFICATION_FILE: &str = "classification.json";
pub const SEARCH_FILE: &str = "search.json";

fn load(args: &DataArgs) -> CliResult<Dataset> {
    let parsed = load_dataset(&args.data)?;
    for w in &parsed.warnings {
        eprintln!("warning: {w}");
    }
    Ok(match args.normalize.mode() {
        Some(mode) => znormalize(&parsed.dataset, mode),
        None => parsed.dataset,
    })
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value)?;
    if let Some(path) = out {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, &text)?;
    }
    println!("{text}");
    Ok(())
}

fn parse_method(s: &str) -> CliResult<Method> {
    s.parse()
        .map_err(|_| CliError::Usage(format!("unknown method `{s}`; expected one of {}", method_list())))
}

fn method_list() -> String {
    Method::ALL.iter().map(|m| m.id()).collect::<Vec<_>>().join(", ")
}

#[derive(Debug, Deserialize)]
struct TrainFile {
    #[serde(default)]
    method: Option<Method>,
    #[serde(default)]
    encoder: Option<EncoderConfig>,
    #[serde(flatten)]
    loss: LossConfig,
}

pub fn train(a: TrainArgs) -> CliResult<()> {
    let ds = load(&a.data)?;
    let file: TrainFile = match &a.config {
        Some(p) => read_json(p)?,
        None => serde_json::from_str("{}")?,
    };
    let mut cfg = file.loss;
    let method = match &a.method {
        Some(m) => Some(parse_method(m)?),
        None => file.method,
    };
    if let Some(m) = method {
        cfg.clt.kind = m.clt_kind();
        cfg.sp_kind = m.sp_kind();
    }
    cfg.seed = resolve_seed(a.seed, cfg.seed)?;
    let enc_cfg = file.encoder.unwrap_or_else(|| EncoderConfig::desk(ds.d));
    let start = Instant::now();
    let out = fit(&ds, &enc_cfg, &cfg)?;
    let metrics = write_run(&a.out, &ds.name, &cfg, &out, start.elapsed().as_secs_f64())?;
    emit(&metrics.summary, None)
}

pub fn encode(a: EncodeArgs) -> CliResult<()> {
    let ck = Checkpoint::read(&Checkpoint::locate(&a.checkpoint))?;
    let ds = load(&a.data)?;
    let rs = ck.encoder.encode_dataset(&ds, &ck.loss.digest())?;
    write_repr(&rs, &a.out)?;
    if let Some(csv) = &a.csv {
        write_instance_csv(&rs, csv)?;
    }
    emit(&json!({"n": rs.n, "t": rs.t, "p": rs.p, "provenance": rs.provenance}), None)
}

pub fn evaluate(a: EvaluateArgs) -> CliResult<()> {
    let ds = load(&a.data)?;
    let rs = read_repr(&a.repr)?;
    if (ds.n, ds.t) != (rs.n, rs.t) {
        return Err(Error::Format(format!(
            "dataset is {}x{} but representations are {}x{}",
            ds.n, ds.t, rs.n, rs.t
        ))
        .into());
    }
    let (local, global) = structure(&ds, &rs, a.k)?;
    emit(&json!({"local": local, "global": global}), a.out.as_deref())
}

#[derive(Debug, Default, Deserialize)]
struct GridFile {
    #[serde(default)]
    encoder: Option<EncoderConfig>,
    #[serde(default)]
    base: Option<LossConfig>,
    #[serde(flatten)]
    plan: SearchPlan,
}

pub fn grid_search(a: GridArgs) -> CliResult<()> {
    if a.jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    let ds = load(&a.data)?;
    let file: GridFile = match &a.plan {
        Some(p) => read_json(p)?,
        None => serde_json::from_str("{}")?,
    };
    let mut base = file.base.unwrap_or_default();
    base.seed = resolve_seed(a.seed, base.seed)?;
    let enc_cfg = file.encoder.unwrap_or_else(|| EncoderConfig::desk(ds.d));
    let outcome = search(&ds, &file.plan, &enc_cfg, &base, a.jobs)?;
    let best_dir = a.out.join("best");
    std::fs::create_dir_all(&best_dir)?;
    std::fs::write(a.out.join(SEARCH_FILE), serde_json::to_string_pretty(&outcome)?)?;
    for (m, cfg) in &outcome.best {
        std::fs::write(best_dir.join(format!("{}.json", m.id())), serde_json::to_string_pretty(cfg)?)?;
    }
    let summary: Vec<_> = outcome
        .stages
        .iter()
        .map(|s| {
            let best = s.runs.iter().find(|r| r.setting == s.best).map(|r| r.val_clt);
            json!({"stage": s.name, "method": s.method, "runs": s.runs.len(), "best_val_clt": best})
        })
        .collect();
    emit(&json!({"budget": outcome.budget, "train_size": outcome.train_size, "stages": summary}), None)
}

#[derive(Debug, Serialize)]
struct NamedReport {
    classes: Vec<String>,
    #[serde(flatten)]
    report: ClassificationReport,
}

pub fn classify(a: ClassifyArgs) -> CliResult<()> {
    let train = read_repr(&a.train_repr)?;
    let test = read_repr(&a.test_repr)?;
    if train.p != test.p {
        return Err(Error::Format(format!(
            "train representations have P={} but test have P={}",
            train.p, test.p
        ))
        .into());
    }
    let (train_labels, test_labels, classes) = encode_pair(&load_names(&a.train_labels)?, &load_names(&a.test_labels)?);
    for (what, labels, n) in [("train", &train_labels, train.n), ("test", &test_labels, test.n)] {
        if labels.len() != n {
            return Err(Error::Format(format!("{} {what} labels for {n} representations", labels.len())).into());
        }
    }
    let report = knn_classify(
        &train.instance_reps,
        &train_labels,
        &test.instance_reps,
        &test_labels,
        train.p,
        a.k,
    )?;
    emit(&NamedReport { classes, report }, a.out.as_deref())
}

pub fn synth(a: SynthArgs) -> CliResult<()> {
    let kind: SynthKind = a.kind.parse().map_err(|e: Error| CliError::Usage(e.to_string()))?;
    let spec = SynthSpec {
        kind,
        n: a.n,
        t: a.t,
        d: a.d,
        classes: a.classes,
        seed: resolve_seed(a.seed, 0)?,
    };
    let ds = generate(&spec)?;
    let Some(path) = &a.out else {
        print!("{}", render_ts(&ds));
        return Ok(());
    };
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("ts") => std::fs::write(path, render_ts(&ds))?,
        Some("csv") => write_csv_dataset(&ds, path)?,
        _ => return Err(CliError::Usage(format!("--out must end in .ts or .csv: {}", path.display()))),
    }
    Ok(())
}
