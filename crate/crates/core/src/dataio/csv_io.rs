//! CSV import of datasets and export of instance representations.
//!
//! Dataset CSVs are long format with a header row:
//! `instance,timestamp,<feature columns...>[,label]`. Rows may appear in any
//! order; every instance must cover timestamps `0..T` exactly once.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use super::{Dataset, ReprSet};
use crate::error::{Error, Result};

pub fn read_csv_dataset(path: &Path) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Format(e.to_string()))?;
    let headers = rdr.headers().map_err(|e| Error::Format(e.to_string()))?.clone();
    let cols: Vec<&str> = headers.iter().collect();
    if cols.len() < 3 || cols[0] != "instance" || cols[1] != "timestamp" {
        return Err(Error::Parse {
            line: 1,
            msg: "header must start with instance,timestamp and name at least one feature".into(),
        });
    }
    let has_label = cols.last() == Some(&"label");
    let d = cols.len() - 2 - usize::from(has_label);
    if d == 0 {
        return Err(Error::Parse {
            line: 1,
            msg: "no feature columns".into(),
        });
    }

    let mut rows: BTreeMap<usize, BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
    let mut raw_labels: BTreeMap<usize, String> = BTreeMap::new();
    for (ri, rec) in rdr.records().enumerate() {
        let line = ri + 2;
        let rec = rec.map_err(|e| Error::Parse {
            line,
            msg: e.to_string(),
        })?;
        let field = |j: usize| rec.get(j).unwrap_or("");
        let int = |j: usize| {
            field(j).parse::<usize>().map_err(|_| Error::Parse {
                line,
                msg: format!("column {} is not a non-negative integer: {:?}", cols[j], field(j)),
            })
        };
        let (inst, ts) = (int(0)?, int(1)?);
        let vals = (0..d)
            .map(|k| {
                field(k + 2).parse::<f64>().map_err(|_| Error::Parse {
                    line,
                    msg: format!("non-numeric token {:?}", field(k + 2)),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if rows.entry(inst).or_default().insert(ts, vals).is_some() {
            return Err(Error::Parse {
                line,
                msg: format!("duplicate row for instance {inst} timestamp {ts}"),
            });
        }
        if has_label {
            let l = field(d + 2).to_string();
            match raw_labels.get(&inst) {
                Some(prev) if *prev != l => {
                    return Err(Error::Parse {
                        line,
                        msg: format!("instance {inst} has conflicting labels"),
                    })
                }
                _ => {
                    raw_labels.insert(inst, l);
                }
            }
        }
    }

    let n = rows.len();
    let t = rows.values().next().map_or(0, BTreeMap::len);
    let mut data = Vec::with_capacity(n * t * d);
    for (idx, (inst, series)) in rows.iter().enumerate() {
        if *inst != idx {
            return Err(Error::Format(format!("instance ids must be 0..N, missing {idx}")));
        }
        if series.len() != t || series.keys().enumerate().any(|(i, &k)| i != k) {
            return Err(Error::Format(format!(
                "instance {inst} does not cover timestamps 0..{t}"
            )));
        }
        for vals in series.values() {
            data.extend_from_slice(vals);
        }
    }

    let (labels, names) = if has_label {
        let mut names: Vec<String> = raw_labels.values().cloned().collect();
        // Integer labels keep numeric order; others sort lexically.
        if names.iter().all(|s| s.parse::<i64>().is_ok()) {
            names.sort_by_key(|s| s.parse::<i64>().unwrap_or(0));
        } else {
            names.sort();
        }
        names.dedup();
        let index: HashMap<&str, usize> =
            names.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let labels = raw_labels.values().map(|l| index[l.as_str()]).collect();
        (Some(labels), Some(names))
    } else {
        (None, None)
    };
    let name = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("dataset")
        .to_string();
    Dataset::new(name, (n, t, d), data, labels, names).map_err(|e| Error::Format(e.to_string()))
}

/// Writes the dataset in the long CSV format read by [`read_csv_dataset`].
pub fn write_csv_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
    let mut header = vec!["instance".to_string(), "timestamp".to_string()];
    header.extend((0..ds.d).map(|k| format!("f{k}")));
    if ds.labels.is_some() {
        header.push("label".into());
    }
    w.write_record(&header).map_err(|e| Error::Format(e.to_string()))?;
    for i in 0..ds.n {
        let inst = ds.instance(i);
        for s in 0..ds.t {
            let mut row = vec![i.to_string(), s.to_string()];
            row.extend(inst[s * ds.d..(s + 1) * ds.d].iter().map(|v| v.to_string()));
            if let Some(labels) = &ds.labels {
                let l = labels[i];
                row.push(
                    ds.label_names
                        .as_ref()
                        .map_or_else(|| l.to_string(), |n| n[l].clone()),
                );
            }
            w.write_record(&row).map_err(|e| Error::Format(e.to_string()))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes `instance,z0..z{P-1}` rows of the per-instance representations.
pub fn write_instance_csv(rs: &ReprSet, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
    let mut header = vec!["instance".to_string()];
    header.extend((0..rs.p).map(|q| format!("z{q}")));
    w.write_record(&header).map_err(|e| Error::Format(e.to_string()))?;
    for i in 0..rs.n {
        let mut row = vec![i.to_string()];
        row.extend(rs.instance_rep(i).iter().map(|v| v.to_string()));
        w.write_record(&row).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
