//! The `SPCK` encoder checkpoint format and training run directories.
//!
//! Layout, all integers little-endian:
//!
//! | bytes     | content                                   |
//! |-----------|-------------------------------------------|
//! | 4         | magic `SPCK`                              |
//! | 4         | version, u32 = 1                          |
//! | 4 + len   | encoder config, u32 length + JSON         |
//! | 4 + len   | loss config, u32 length + JSON            |
//! | 8         | parameter count, u64                      |
//! | 8·count   | parameters, f64                           |

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::encoder::{Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::trainer::{LossConfig, Method, StopReason, TrainHistory, TrainOutcome};
use crate::weighting::DynamicWeights;

pub const SPCK_MAGIC: &[u8; 4] = b"SPCK";
pub const SPCK_VERSION: u32 = 1;

pub const CONFIG_FILE: &str = "config.json";
pub const HISTORY_FILE: &str = "history.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.spck";
pub const METRICS_FILE: &str = "metrics.json";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub encoder: Encoder,
    pub loss: LossConfig,
}

fn put_block(out: &mut Vec<u8>, bytes: &[u8]) -> Result<()> {
    let len = u32::try_from(bytes.len()).map_err(|_| Error::Format("config record exceeds u32".into()))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(bytes);
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Format(format!(
                "truncated {what}: expected {} bytes, file has {}",
                self.pos.saturating_add(len),
                self.bytes.len()
            ))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn json<T: for<'de> Deserialize<'de>>(&mut self, what: &str) -> Result<T> {
        let len = self.u32(what)? as usize;
        let raw = self.take(len, what)?;
        serde_json::from_slice(raw).map_err(|e| Error::Format(format!("bad {what}: {e}")))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let params = self.encoder.params();
        let mut out = Vec::with_capacity(64 + 8 * params.len());
        out.extend_from_slice(SPCK_MAGIC);
        out.extend_from_slice(&SPCK_VERSION.to_le_bytes());
        put_block(&mut out, &serde_json::to_vec(self.encoder.config())?)?;
        put_block(&mut out, &serde_json::to_vec(&self.loss)?)?;
        out.extend_from_slice(&(params.len() as u64).to_le_bytes());
        for &v in params {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != SPCK_MAGIC {
            return Err(Error::Format("bad magic, expected SPCK".into()));
        }
        let version = r.u32("version")?;
        if version != SPCK_VERSION {
            return Err(Error::Format(format!("unsupported SPCK version {version}")));
        }
        let enc_cfg: EncoderConfig = r.json("encoder config")?;
        let loss: LossConfig = r.json("loss config")?;
        let count = usize::try_from(r.u64("parameter count")?)
            .map_err(|_| Error::Format("parameter count overflows".into()))?;
        let blob = r.take(count.saturating_mul(8), "parameters")?;
        let params = blob
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if r.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes after parameters", bytes.len() - r.pos)));
        }
        let encoder = Encoder::from_params(enc_cfg, params).map_err(|e| Error::Format(e.to_string()))?;
        Ok(Self { encoder, loss })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Accepts either a checkpoint file or a run directory containing one.
    pub fn locate(path: &Path) -> PathBuf {
        if path.is_dir() {
            path.join(CHECKPOINT_FILE)
        } else {
            path.to_path_buf()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub method: Method,
    pub dataset: String,
    pub digest: String,
    pub best_epoch: usize,
    pub initial_val: f64,
    pub best_val: f64,
    pub final_val: f64,
    pub stop: StopReason,
    pub steps: usize,
    pub seconds: f64,
}

/// Contents of `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub summary: RunSummary,
    pub weights: DynamicWeights,
    pub history: TrainHistory,
}

/// Writes config, history, best-encoder checkpoint and metrics into `dir`.
pub fn write_run(dir: &Path, dataset: &str, cfg: &LossConfig, out: &TrainOutcome, seconds: f64) -> Result<RunMetrics> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(CONFIG_FILE), serde_json::to_string_pretty(cfg)?)?;
    out.history.write_csv(&dir.join(HISTORY_FILE))?;
    Checkpoint {
        encoder: out.encoder.clone(),
        loss: cfg.clone(),
    }
    .write(&dir.join(CHECKPOINT_FILE))?;
    let metrics = RunMetrics {
        summary: RunSummary {
            method: cfg.method(),
            dataset: dataset.to_string(),
            digest: cfg.digest(),
            best_epoch: out.best_epoch,
            initial_val: out.initial_val(),
            best_val: out.best_val,
            final_val: out.final_val,
            stop: out.stop,
            steps: out.history.steps.len(),
            seconds,
        },
        weights: out.weights.clone(),
        history: out.history.clone(),
    };
    std::fs::write(dir.join(METRICS_FILE), serde_json::to_string_pretty(&metrics)?)?;
    Ok(metrics)
}

pub fn read_run_metrics(dir: &Path) -> Result<RunMetrics> {
    Ok(serde_json::from_str(&std::fs::read_to_string(dir.join(METRICS_FILE))?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SynthKind, SynthSpec};
    use crate::trainer::train;

    fn sample() -> Checkpoint {
        let mut encoder = Encoder::new(EncoderConfig::desk(3), 11).unwrap();
        encoder.params_mut()[0] = f64::MIN_POSITIVE / 3.0;
        encoder.params_mut()[1] = -0.0;
        Checkpoint {
            encoder,
            loss: LossConfig::for_method(Method::GgeoSoftclt),
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = sample();
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        let bits = |c: &Checkpoint| c.encoder.params().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&ck));
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = sample().to_bytes().unwrap();
        let mut bad = bytes.clone();
        bad[..4].copy_from_slice(b"XXXX");
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Format(_))));
        let err = Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(err.to_string().contains("truncated parameters"), "{err}");
        let mut long = bytes.clone();
        long.push(0);
        assert!(Checkpoint::from_bytes(&long).is_err());
    }

    #[test]
    fn run_directory_layout() {
        let ds = generate(&SynthSpec {
            kind: SynthKind::Blobs,
            n: 12,
            t: 8,
            d: 2,
            classes: 2,
            seed: 1,
        })
        .unwrap();
        let cfg = LossConfig {
            batch_size: 4,
            max_epochs: 2,
            ..LossConfig::for_method(Method::TopoTs2vec)
        };
        let out = train(&ds, &EncoderConfig::desk(2), &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let written = write_run(dir.path(), &ds.name, &cfg, &out, 0.5).unwrap();
        for f in [CONFIG_FILE, HISTORY_FILE, CHECKPOINT_FILE, METRICS_FILE] {
            assert!(dir.path().join(f).is_file(), "{f}");
        }
        let back = read_run_metrics(dir.path()).unwrap();
        assert_eq!((back.summary, back.history), (written.summary, written.history));
        assert_eq!((back.weights.s_clt, back.weights.s_sp), (out.weights.s_clt, out.weights.s_sp));
        let ck = Checkpoint::read(&Checkpoint::locate(dir.path())).unwrap();
        assert_eq!(ck.encoder, out.encoder);
        let cfg_back: LossConfig =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join(CONFIG_FILE)).unwrap()).unwrap();
        assert_eq!(cfg_back, cfg);
    }
}
