//! Deterministic synthetic datasets for tests and smoke experiments.

use std::f64::consts::TAU;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataio::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthKind {
    /// Noisy sinusoids whose frequency depends on the class.
    Sinusoid,
    /// Gaussian blobs around a random per-class series.
    Blobs,
}

impl FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sinusoid" => Ok(SynthKind::Sinusoid),
            "blobs" => Ok(SynthKind::Blobs),
            _ => Err(Error::config(format!("unknown synthetic kind `{s}` (sinusoid|blobs)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub kind: SynthKind,
    pub n: usize,
    pub t: usize,
    pub d: usize,
    pub classes: usize,
    pub seed: u64,
}

/// Instance `i` gets label `i % classes`.
pub fn generate(spec: &SynthSpec) -> Result<Dataset> {
    let SynthSpec { kind, n, t, d, classes, seed } = *spec;
    if classes == 0 || classes > n {
        return Err(Error::config(format!("need 1 <= classes <= n, got {classes} classes for {n} instances")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    let mut data = Vec::with_capacity(n * t * d);
    match kind {
        SynthKind::Sinusoid => {
            for &c in &labels {
                let freq = 1.0 + c as f64;
                let amp = rng.random_range(0.8..1.2);
                let phases: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..TAU)).collect();
                for s in 0..t {
                    let u = s as f64 / t as f64;
                    for phase in &phases {
                        data.push(amp * (TAU * freq * u + phase).sin() + 0.1 * std.sample(&mut rng));
                    }
                }
            }
        }
        SynthKind::Blobs => {
            let centres: Vec<Vec<f64>> = (0..classes)
                .map(|_| (0..t * d).map(|_| 3.0 * std.sample(&mut rng)).collect())
                .collect();
            for &c in &labels {
                data.extend(centres[c].iter().map(|m| m + std.sample(&mut rng)));
            }
        }
    }
    let name = match kind {
        SynthKind::Sinusoid => "sinusoid",
        SynthKind::Blobs => "blobs",
    };
    let names = (0..classes).map(|c| format!("class{c}")).collect();
    Dataset::new(name, (n, t, d), data, Some(labels), Some(names))
}
