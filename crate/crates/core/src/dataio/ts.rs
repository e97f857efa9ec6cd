//! Reader and writer for the UEA/UCR `.ts` archive text format.
//!
//! Supported header directives: `@problemName`, `@timeStamps`, `@missing`,
//! `@univariate`, `@dimensions`, `@equalLength`, `@seriesLength`,
//! `@classLabel`, then `@data`. Records list dimensions separated by `:`,
//! values by `,`, with the class label last. Time-stamped records are not
//! supported.

use std::collections::HashMap;
use std::fmt::Write as _;

use super::Dataset;
use crate::error::{Error, Result};

/// A parsed dataset with any load-time repairs that were applied.
#[derive(Debug, Clone)]
pub struct ParsedTs {
    pub dataset: Dataset,
    /// Padding and imputation notices, one per affected series.
    pub warnings: Vec<String>,
}

#[derive(Default)]
struct Header {
    name: Option<String>,
    univariate: Option<bool>,
    dimensions: Option<usize>,
    series_length: Option<usize>,
    class_label: bool,
    class_names: Vec<String>,
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

fn parse_bool(line: usize, v: Option<&str>) -> Result<bool> {
    match v.map(str::to_ascii_lowercase).as_deref() {
        Some("true") => Ok(true),
        Some("false") => Ok(false),
        other => Err(parse_err(line, format!("expected true/false, got {other:?}"))),
    }
}

fn parse_usize(line: usize, v: Option<&str>) -> Result<usize> {
    v.and_then(|s| s.parse().ok())
        .ok_or_else(|| parse_err(line, format!("expected an integer, got {v:?}")))
}

pub fn parse_ts(text: &str) -> Result<ParsedTs> {
    let mut header = Header::default();
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let mut saw_data = false;

    for (lineno, line) in lines.by_ref() {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !line.starts_with('@') {
            return Err(parse_err(lineno, "data record before @data"));
        }
        let mut parts = line.split_whitespace();
        let key = parts.next().unwrap_or("").to_ascii_lowercase();
        match key.as_str() {
            "@problemname" => header.name = parts.next().map(str::to_string),
            "@univariate" => header.univariate = Some(parse_bool(lineno, parts.next())?),
            "@dimensions" => header.dimensions = Some(parse_usize(lineno, parts.next())?),
            "@serieslength" => header.series_length = Some(parse_usize(lineno, parts.next())?),
            "@classlabel" => {
                header.class_label = parse_bool(lineno, parts.next())?;
                header.class_names = parts.map(str::to_string).collect();
            }
            "@timestamps" => {
                if parse_bool(lineno, parts.next())? {
                    return Err(parse_err(lineno, "time-stamped records are not supported"));
                }
            }
            "@missing" | "@equallength" | "@targetlabel" => {}
            "@data" => {
                saw_data = true;
                break;
            }
            other => return Err(parse_err(lineno, format!("unknown directive {other}"))),
        }
    }
    if !saw_data {
        let last = text.lines().count();
        return Err(parse_err(last + 1, "missing @data section"));
    }

    let declared_dims = match (header.dimensions, header.univariate) {
        (Some(d), _) => Some(d),
        (None, Some(true)) => Some(1),
        _ => None,
    };

    // Raw records: per instance, per dimension, values with None for '?'.
    let mut records: Vec<Vec<Vec<Option<f64>>>> = Vec::new();
    let mut raw_labels: Vec<String> = Vec::new();
    let mut dims = declared_dims;

    for (lineno, line) in lines {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let record_idx = records.len();
        let mut parts: Vec<&str> = line.split(':').collect();
        if header.class_label {
            if parts.len() < 2 {
                return Err(parse_err(lineno, format!("record {record_idx} has no class label")));
            }
            raw_labels.push(parts.pop().unwrap_or_default().trim().to_string());
        }
        let d = *dims.get_or_insert(parts.len());
        if parts.len() != d {
            return Err(parse_err(
                lineno,
                format!(
                    "record {record_idx} has {} dimensions, expected {d}",
                    parts.len()
                ),
            ));
        }
        let mut series = Vec::with_capacity(d);
        for part in parts {
            let mut values = Vec::new();
            for tok in part.split(',') {
                let tok = tok.trim();
                if tok == "?" || tok.eq_ignore_ascii_case("nan") {
                    values.push(None);
                } else {
                    let v: f64 = tok.parse().map_err(|_| {
                        parse_err(
                            lineno,
                            format!("record {record_idx}: non-numeric token {tok:?}"),
                        )
                    })?;
                    values.push(Some(v));
                }
            }
            series.push(values);
        }
        records.push(series);
    }

    if records.is_empty() {
        return Err(parse_err(text.lines().count(), "no records after @data"));
    }
    let d = dims.unwrap_or(1);
    let observed_max = records
        .iter()
        .flat_map(|r| r.iter().map(Vec::len))
        .max()
        .unwrap_or(0);
    let t = header.series_length.unwrap_or(0).max(observed_max);
    let n = records.len();

    let mut warnings = Vec::new();
    let mut data = vec![0.0; n * t * d];
    for (i, rec) in records.iter().enumerate() {
        for (k, series) in rec.iter().enumerate() {
            let mut filled = impute(series);
            if filled.is_empty() {
                warnings.push(format!("record {i} dimension {k}: empty series, filled with 0"));
                filled.push(0.0);
            } else if series.iter().all(Option::is_none) {
                warnings.push(format!("record {i} dimension {k}: all values missing, filled with 0"));
            } else if series.iter().any(Option::is_none) {
                warnings.push(format!("record {i} dimension {k}: imputed missing values"));
            }
            if filled.len() < t {
                warnings.push(format!(
                    "record {i} dimension {k}: padded from length {} to {t}",
                    series.len()
                ));
                let last = *filled.last().unwrap_or(&0.0);
                filled.resize(t, last);
            }
            for (s, v) in filled.iter().enumerate() {
                data[(i * t + s) * d + k] = *v;
            }
        }
    }

    let (labels, label_names) = if header.class_label {
        let mut names = header.class_names.clone();
        let mut index: HashMap<String, usize> = names
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        let mut labels = Vec::with_capacity(n);
        for (i, raw) in raw_labels.iter().enumerate() {
            let idx = match index.get(raw) {
                Some(&idx) => idx,
                None if header.class_names.is_empty() => {
                    names.push(raw.clone());
                    index.insert(raw.clone(), names.len() - 1);
                    names.len() - 1
                }
                None => {
                    return Err(parse_err(0, format!("record {i}: undeclared class label {raw:?}")))
                }
            };
            labels.push(idx);
        }
        (Some(labels), Some(names))
    } else {
        (None, None)
    };

    let dataset = Dataset::new(
        header.name.unwrap_or_default(),
        (n, t, d),
        data,
        labels,
        label_names,
    )?;
    Ok(ParsedTs { dataset, warnings })
}

/// Linear interpolation of missing values; leading and trailing gaps take the
/// nearest observed value. An all-missing series becomes zeros.
fn impute(series: &[Option<f64>]) -> Vec<f64> {
    let known: Vec<(usize, f64)> = series
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|v| (i, v)))
        .collect();
    if known.is_empty() {
        return vec![0.0; series.len()];
    }
    let mut out = Vec::with_capacity(series.len());
    let mut next = 0; // index into `known` of the first known point at or after i
    for i in 0..series.len() {
        while next < known.len() && known[next].0 < i {
            next += 1;
        }
        let v = match (next.checked_sub(1).map(|p| known[p]), known.get(next)) {
            (_, Some(&(j, v))) if j == i => v,
            (Some((i0, v0)), Some(&(i1, v1))) => {
                v0 + (v1 - v0) * (i - i0) as f64 / (i1 - i0) as f64
            }
            (Some((_, v0)), None) => v0,
            (None, Some(&(_, v1))) => v1,
            (None, None) => unreachable!(),
        };
        out.push(v);
    }
    out
}

/// Writes a dataset in `.ts` format; values use shortest round-trip formatting.
pub fn render_ts(ds: &Dataset) -> String {
    let mut s = String::new();
    let name = if ds.name.is_empty() { "dataset" } else { &ds.name };
    let _ = writeln!(s, "@problemName {name}");
    let _ = writeln!(s, "@timeStamps false");
    let _ = writeln!(s, "@missing false");
    let _ = writeln!(s, "@univariate {}", ds.d == 1);
    let _ = writeln!(s, "@dimensions {}", ds.d);
    let _ = writeln!(s, "@equalLength true");
    let _ = writeln!(s, "@seriesLength {}", ds.t);
    let names: Option<Vec<String>> = ds.labels.as_ref().map(|_| {
        ds.label_names
            .clone()
            .unwrap_or_else(|| (0..ds.num_classes()).map(|c| c.to_string()).collect())
    });
    match &names {
        Some(names) => {
            let _ = writeln!(s, "@classLabel true {}", names.join(" "));
        }
        None => {
            let _ = writeln!(s, "@classLabel false");
        }
    }
    let _ = writeln!(s, "@data");
    for i in 0..ds.n {
        let inst = ds.instance(i);
        let dims: Vec<String> = (0..ds.d)
            .map(|k| {
                (0..ds.t)
                    .map(|t| format!("{}", inst[t * ds.d + k]))
                    .collect::<Vec<_>>()
                    .join(",")
            })
            .collect();
        s.push_str(&dims.join(":"));
        if let (Some(labels), Some(names)) = (&ds.labels, &names) {
            s.push(':');
            s.push_str(&names[labels[i]]);
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const FIXTURE: &str = "\
# comment
@problemName Toy
@timeStamps false
@univariate false
@dimensions 2
@equalLength true
@seriesLength 3
@classLabel true A B
@data
1,2,3:4,5,6:A
0,0,0:1,1,1:B
";

    #[test]
    fn parses_two_record_fixture() {
        let ds = parse_ts(FIXTURE).unwrap().dataset;
        assert_eq!((ds.n, ds.t, ds.d), (2, 3, 2));
        assert_eq!(ds.labels, Some(vec![0, 1]));
        assert_eq!(ds.name, "Toy");
        // N×T×D layout: instance 0, t=1 → (2, 5)
        assert_eq!(&ds.data[2..4], &[2.0, 5.0]);
    }

    #[test]
    fn imputes_missing_value_linearly() {
        let text = FIXTURE.replace("1,2,3:4,5,6:A", "1,?,3:4,5,6:A");
        let parsed = parse_ts(&text).unwrap();
        assert_eq!(parsed.dataset.data[2], 2.0);
        assert_eq!(parsed.warnings.len(), 1);
    }

    #[test]
    fn imputation_edges() {
        assert_eq!(impute(&[None, Some(2.0), None, None, Some(8.0), None]), vec![
            2.0, 2.0, 4.0, 6.0, 8.0, 8.0
        ]);
        assert_eq!(impute(&[None, None]), vec![0.0, 0.0]);
    }

    #[test]
    fn dimension_mismatch_names_record() {
        let text = FIXTURE.replace("0,0,0:1,1,1:B", "0,0,0:B");
        match parse_ts(&text).unwrap_err() {
            Error::Parse { line, msg } => {
                assert_eq!(line, 11);
                assert!(msg.contains("record 1"), "{msg}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_data_section_is_error() {
        let text = FIXTURE.split("@data").next().unwrap();
        assert!(matches!(parse_ts(text), Err(Error::Parse { .. })));
    }

    #[test]
    fn non_numeric_token_is_error() {
        let text = FIXTURE.replace("4,5,6", "4,x,6");
        match parse_ts(&text).unwrap_err() {
            Error::Parse { line, msg } => {
                assert_eq!(line, 10);
                assert!(msg.contains("\"x\""));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unequal_lengths_are_padded_and_flagged() {
        let text = FIXTURE
            .replace("@equalLength true", "@equalLength false")
            .replace("@seriesLength 3\n", "")
            .replace("0,0,0:1,1,1:B", "0,7:1,1,1:B");
        let parsed = parse_ts(&text).unwrap();
        let ds = parsed.dataset;
        assert_eq!(ds.t, 3);
        // instance 1, dim 0 padded with its last value
        assert_eq!(ds.data[(3 + 2) * 2], 7.0);
        assert!(parsed.warnings.iter().any(|w| w.contains("padded")));
    }

    #[test]
    fn undeclared_label_rejected_and_labels_inferred() {
        let text = FIXTURE.replace(":B\n", ":C\n");
        assert!(parse_ts(&text).is_err());
        let text = FIXTURE.replace("@classLabel true A B", "@classLabel true");
        let ds = parse_ts(&text).unwrap().dataset;
        assert_eq!(ds.label_names, Some(vec!["A".into(), "B".into()]));
    }

    fn arb_dataset() -> impl Strategy<Value = Dataset> {
        (1usize..5, 2usize..6, 1usize..4, proptest::bool::ANY).prop_flat_map(|(n, t, d, labelled)| {
            (
                proptest::collection::vec(-1e6f64..1e6, n * t * d),
                proptest::collection::vec(0usize..3, n),
            )
                .prop_map(move |(data, labels)| {
                    let (labels, names) = if labelled {
                        (
                            Some(labels),
                            Some(vec!["a".to_string(), "b".to_string(), "c".to_string()]),
                        )
                    } else {
                        (None, None)
                    };
                    Dataset::new("gen", (n, t, d), data, labels, names).unwrap()
                })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn render_then_parse_is_identity(ds in arb_dataset()) {
            let parsed = parse_ts(&render_ts(&ds)).unwrap();
            prop_assert!(parsed.warnings.is_empty());
            prop_assert_eq!(parsed.dataset, ds);
        }
    }
}
