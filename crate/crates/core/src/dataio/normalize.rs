use serde::{Deserialize, Serialize};

use super::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NormMode {
    /// Each (instance, dimension) series separately.
    #[default]
    PerInstance,
    /// Statistics pooled over all instances and timestamps, per dimension.
    PerDataset,
}

/// Zero-mean, unit-variance scaling (population std, `1/T`). Zero-variance
/// series map to zeros.
pub fn znormalize(ds: &Dataset, mode: NormMode) -> Dataset {
    let (n, t, d) = (ds.n, ds.t, ds.d);
    let mut out = ds.clone();
    let scale = |vals: &mut dyn Iterator<Item = usize>, data: &mut [f64]| {
        let idx: Vec<usize> = vals.collect();
        let len = idx.len() as f64;
        let mean = idx.iter().map(|&i| data[i]).sum::<f64>() / len;
        let var = idx.iter().map(|&i| (data[i] - mean).powi(2)).sum::<f64>() / len;
        let std = var.sqrt();
        for &i in &idx {
            data[i] = if std > 0.0 { (data[i] - mean) / std } else { 0.0 };
        }
    };
    match mode {
        NormMode::PerInstance => {
            for i in 0..n {
                for k in 0..d {
                    scale(&mut (0..t).map(|s| (i * t + s) * d + k), &mut out.data);
                }
            }
        }
        NormMode::PerDataset => {
            for k in 0..d {
                scale(&mut (0..n * t).map(|r| r * d + k), &mut out.data);
            }
        }
    }
    out
}
