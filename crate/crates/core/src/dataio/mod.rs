//! Datasets, normalisation and on-disk formats.

mod csv_io;
mod normalize;
mod repr;
mod ts;

pub use csv_io::{read_csv_dataset, write_csv_dataset, write_instance_csv};
pub use normalize::{znormalize, NormMode};
pub use repr::{read_repr, repr_from_bytes, repr_to_bytes, write_repr, SPCL_MAGIC, SPCL_VERSION};
pub use ts::{parse_ts, render_ts, ParsedTs};

use std::path::Path;

use crate::error::{Error, Result};

/// `N × T × D` multivariate time series, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub n: usize,
    pub t: usize,
    pub d: usize,
    pub data: Vec<f64>,
    pub labels: Option<Vec<usize>>,
    pub label_names: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        (n, t, d): (usize, usize, usize),
        data: Vec<f64>,
        labels: Option<Vec<usize>>,
        label_names: Option<Vec<String>>,
    ) -> Result<Self> {
        if n < 1 || t < 2 || d < 1 {
            return Err(Error::config(format!(
                "dataset needs N >= 1, T >= 2, D >= 1 (got {n}x{t}x{d})"
            )));
        }
        if data.len() != n * t * d {
            return Err(Error::config(format!(
                "dataset {n}x{t}x{d} needs {} values, got {}",
                n * t * d,
                data.len()
            )));
        }
        if data.iter().any(|v| v.is_nan()) {
            return Err(Error::config("dataset contains NaN"));
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::config(format!("{} labels for {n} instances", l.len())));
            }
            if let Some(names) = &label_names {
                if let Some(bad) = l.iter().find(|&&c| c >= names.len()) {
                    return Err(Error::config(format!(
                        "label {bad} outside {} declared classes",
                        names.len()
                    )));
                }
            }
        }
        Ok(Self {
            name: name.into(),
            n,
            t,
            d,
            data,
            labels,
            label_names,
        })
    }

    /// The `T × D` block of instance `i`.
    pub fn instance(&self, i: usize) -> &[f64] {
        let len = self.t * self.d;
        &self.data[i * len..(i + 1) * len]
    }

    pub fn num_classes(&self) -> usize {
        match (&self.label_names, &self.labels) {
            (Some(names), _) => names.len(),
            (None, Some(l)) => l.iter().max().map_or(0, |m| m + 1),
            _ => 0,
        }
    }

    /// Instances at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.t * self.d);
        for &i in indices {
            data.extend_from_slice(self.instance(i));
        }
        Self {
            name: self.name.clone(),
            n: indices.len(),
            t: self.t,
            d: self.d,
            data,
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
            label_names: self.label_names.clone(),
        }
    }
}

/// Encoded representations of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct ReprSet {
    pub n: usize,
    pub t: usize,
    pub p: usize,
    /// `N × T × P`, row-major.
    pub reps: Vec<f64>,
    /// `N × P`, maximum of `reps` over time.
    pub instance_reps: Vec<f64>,
    /// Digest of the loss configuration that produced the encoder.
    pub provenance: String,
}

impl ReprSet {
    pub fn new(n: usize, t: usize, p: usize, reps: Vec<f64>, provenance: String) -> Result<Self> {
        if p < 1 || t < 1 || reps.len() != n * t * p {
            return Err(Error::config(format!(
                "representation set {n}x{t}x{p} with {} values",
                reps.len()
            )));
        }
        let mut instance_reps = vec![f64::NEG_INFINITY; n * p];
        for i in 0..n {
            for s in 0..t {
                for q in 0..p {
                    let v = reps[(i * t + s) * p + q];
                    let slot = &mut instance_reps[i * p + q];
                    if v > *slot {
                        *slot = v;
                    }
                }
            }
        }
        Ok(Self {
            n,
            t,
            p,
            reps,
            instance_reps,
            provenance,
        })
    }

    /// The `T × P` block of instance `i`.
    pub fn instance(&self, i: usize) -> &[f64] {
        let len = self.t * self.p;
        &self.reps[i * len..(i + 1) * len]
    }

    pub fn instance_rep(&self, i: usize) -> &[f64] {
        &self.instance_reps[i * self.p..(i + 1) * self.p]
    }
}

/// Loads a dataset from a `.ts` archive file or a long-format CSV, chosen by extension.
pub fn load_dataset(path: &Path) -> Result<ParsedTs> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase();
    match ext.as_str() {
        "ts" => parse_ts(&std::fs::read_to_string(path)?),
        "csv" => Ok(ParsedTs {
            dataset: read_csv_dataset(path)?,
            warnings: Vec::new(),
        }),
        _ => Err(Error::Format(format!(
            "unsupported dataset extension for {}",
            path.display()
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_invariants() {
        assert!(Dataset::new("x", (1, 1, 1), vec![0.0], None, None).is_err());
        assert!(Dataset::new("x", (1, 2, 1), vec![0.0], None, None).is_err());
        assert!(Dataset::new("x", (1, 2, 1), vec![0.0, f64::NAN], None, None).is_err());
        let names = Some(vec!["a".to_string()]);
        assert!(Dataset::new("x", (1, 2, 1), vec![0.0, 1.0], Some(vec![1]), names).is_err());
        assert!(Dataset::new("x", (1, 2, 1), vec![0.0, 1.0], Some(vec![0, 0]), None).is_err());
    }

    #[test]
    fn instance_reps_are_time_maxima() {
        let reps = vec![1.0, -1.0, 3.0, -2.0, 0.5, 0.0];
        let rs = ReprSet::new(1, 3, 2, reps, String::new()).unwrap();
        assert_eq!(rs.instance_reps, vec![3.0, 0.0]);
    }

    #[test]
    fn subset_keeps_labels_aligned() {
        let ds = Dataset::new(
            "x",
            (3, 2, 1),
            vec![0.0, 0.0, 1.0, 1.0, 2.0, 2.0],
            Some(vec![0, 1, 2]),
            None,
        )
        .unwrap();
        let sub = ds.subset(&[2, 0]);
        assert_eq!(sub.data, vec![2.0, 2.0, 0.0, 0.0]);
        assert_eq!(sub.labels, Some(vec![2, 0]));
    }
}
