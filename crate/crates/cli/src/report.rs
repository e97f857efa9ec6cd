use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;
use spclt_core::checkpoint::read_run_metrics;
use spclt_core::trainer::Method;

use crate::commands::{CLASSIFICATION_FILE, STRUCTURE_FILE};
use crate::{CliResult, ReportArgs};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub dataset: String,
    pub method: Method,
    pub digest: String,
    pub run: String,
    pub initial_val: f64,
    pub best_val: f64,
    pub val_ratio: f64,
    pub global_drmse: Option<f64>,
    pub local_cont: Option<f64>,
    pub accuracy: Option<f64>,
}

fn optional_json(path: &Path) -> CliResult<Option<Value>> {
    if !path.is_file() {
        return Ok(None);
    }
    Ok(Some(serde_json::from_str(&std::fs::read_to_string(path)?)?))
}

pub fn collect(dirs: &[impl AsRef<Path>]) -> CliResult<Vec<Row>> {
    let mut rows = Vec::with_capacity(dirs.len());
    for dir in dirs {
        let dir = dir.as_ref();
        let m = read_run_metrics(dir)?;
        let structure = optional_json(&dir.join(STRUCTURE_FILE))?;
        let classification = optional_json(&dir.join(CLASSIFICATION_FILE))?;
        let pick = |v: &Option<Value>, ptr: &str| v.as_ref().and_then(|v| v.pointer(ptr)).and_then(Value::as_f64);
        rows.push(Row {
            dataset: m.summary.dataset,
            method: m.summary.method,
            digest: m.summary.digest,
            run: dir.display().to_string(),
            initial_val: m.summary.initial_val,
            best_val: m.summary.best_val,
            val_ratio: m.summary.best_val / m.summary.initial_val,
            global_drmse: pick(&structure, "/global/drmse"),
            local_cont: pick(&structure, "/local/cont"),
            accuracy: pick(&classification, "/accuracy"),
        });
    }
    rows.sort_by(|a, b| {
        (&a.dataset, a.method, &a.digest, &a.run).cmp(&(&b.dataset, b.method, &b.digest, &b.run))
    });
    Ok(rows)
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

/// Datasets as rows, methods as columns. When several runs share a cell the
/// one with the lowest best validation loss is shown.
pub fn pivot(rows: &[Row], title: &str, value: impl Fn(&Row) -> Option<f64>) -> String {
    let mut best: BTreeMap<(&str, Method), &Row> = BTreeMap::new();
    for r in rows {
        best.entry((r.dataset.as_str(), r.method))
            .and_modify(|cur| {
                if r.best_val < cur.best_val {
                    *cur = r;
                }
            })
            .or_insert(r);
    }
    let methods: Vec<Method> = Method::ALL.into_iter().filter(|m| rows.iter().any(|r| r.method == *m)).collect();
    let mut datasets: Vec<&str> = rows.iter().map(|r| r.dataset.as_str()).collect();
    datasets.dedup();
    let mut out = String::new();
    let _ = write!(out, "| {title} |");
    for m in &methods {
        let _ = write!(out, " {} |", m.id());
    }
    out.push('\n');
    out.push_str(&"|---".repeat(methods.len() + 1));
    out.push_str("|\n");
    for d in datasets {
        let _ = write!(out, "| {d} |");
        for m in &methods {
            let v = best.get(&(d, *m)).and_then(|r| value(r));
            let _ = write!(out, " {} |", cell(v));
        }
        out.push('\n');
    }
    out
}

pub fn report(a: ReportArgs) -> CliResult<()> {
    let rows = collect(&a.runs)?;
    print!("{}", pivot(&rows, "best/initial val L_CLT", |r| Some(r.val_ratio)));
    if rows.iter().any(|r| r.global_drmse.is_some()) {
        println!();
        print!("{}", pivot(&rows, "global dRMSE", |r| r.global_drmse));
        println!();
        print!("{}", pivot(&rows, "local continuity", |r| r.local_cont));
    }
    if rows.iter().any(|r| r.accuracy.is_some()) {
        println!();
        print!("{}", pivot(&rows, "accuracy", |r| r.accuracy));
    }
    if let Some(path) = &a.csv {
        let mut w = std::fs::File::create(path)?;
        use std::io::Write as _;
        writeln!(w, "dataset,method,digest,run,initial_val,best_val,val_ratio,global_drmse,local_cont,accuracy")?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{}",
                r.dataset,
                r.method.id(),
                r.digest,
                r.run,
                r.initial_val,
                r.best_val,
                r.val_ratio,
                opt(r.global_drmse),
                opt(r.local_cont),
                opt(r.accuracy)
            )?;
        }
    }
    Ok(())
}
