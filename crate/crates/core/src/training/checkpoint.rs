//! Binary checkpoint container.
//!
//! Layout, little-endian:
//!
//! ```text
//! magic "COEVOCKP", u32 version
//! string  config (JSON echo of the training configuration)
//! u64     attribute count r
//! u64     seed
//! u64     optimizer steps
//! u64     tensor count, then per tensor:
//!         string name, u64 rows, u64 cols, rows*cols f64 values
//! ```
//!
//! Strings are a u32 byte length followed by UTF-8.

use std::path::Path;

use super::TrainConfig;
use crate::autodiff::Tensor;
use crate::bytes::{ByteReader, ByteWriter};
use crate::error::{CoevoError, Result};
use crate::model::ModelParams;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"COEVOCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub params: ModelParams,
    pub steps: u64,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = ByteWriter::header(CHECKPOINT_MAGIC, CHECKPOINT_VERSION);
        let config = serde_json::to_string(&self.config).map_err(|e| CoevoError::Format(e.to_string()))?;
        w.string(&config);
        w.u64(self.params.spec.attrs as u64);
        w.u64(self.config.seed);
        w.u64(self.steps);
        let named = self.params.named();
        w.u64(named.len() as u64);
        for (name, t) in named {
            w.string(&name);
            w.u64(t.rows() as u64);
            w.u64(t.cols() as u64);
            for &v in t.values() {
                w.f64(v);
            }
        }
        Ok(w.bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.header(CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
        let config: TrainConfig =
            serde_json::from_str(&r.string()?).map_err(|e| CoevoError::Format(format!("config echo: {e}")))?;
        let attrs = r.u64()? as usize;
        let seed = r.u64()?;
        if seed != config.seed {
            return Err(CoevoError::Format(format!(
                "seed {seed} disagrees with the config echo ({})",
                config.seed
            )));
        }
        let steps = r.u64()?;
        let spec = config.model_spec(attrs);
        let expected = ModelParams::init(spec.clone(), 0)?.names();
        let count = r.count(8)?;
        if count != expected.len() {
            return Err(CoevoError::Format(format!("{count} tensors, expected {}", expected.len())));
        }
        let mut tensors = Vec::with_capacity(count);
        for want in &expected {
            let name = r.string()?;
            if &name != want {
                return Err(CoevoError::Format(format!("tensor {name:?} where {want:?} was expected")));
            }
            let rows = r.u64()? as usize;
            let cols = r.u64()? as usize;
            let len = rows
                .checked_mul(cols)
                .ok_or_else(|| CoevoError::Format(format!("{name}: {rows}x{cols} overflows")))?;
            if len.saturating_mul(8) > bytes.len() {
                return Err(CoevoError::Format(format!("{name}: {rows}x{cols} exceeds the file")));
            }
            let values = (0..len).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            tensors.push(Tensor::new(rows, cols, values)?);
        }
        r.finish()?;
        let params = ModelParams::from_tensors(spec, tensors).map_err(|e| CoevoError::Format(e.to_string()))?;
        Ok(Checkpoint { config, params, steps })
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<()> {
    std::fs::write(path, checkpoint.to_bytes()?).map_err(|e| CoevoError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| CoevoError::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate_synthetic, SyntheticSpec};
    use crate::training::{train, INFERENCE_KEY};

    fn trained() -> (Checkpoint, crate::graph::DynamicGraphSequence) {
        let seq = generate_synthetic(&SyntheticSpec {
            n: 15,
            horizon: 3,
            r: 4,
            seed: 2,
            ..Default::default()
        })
        .unwrap();
        let config = TrainConfig {
            span: 2,
            dim: 6,
            epochs: 1,
            batch_size: 8,
            learning_rate: 0.0123,
            ..Default::default()
        };
        let out = train(&seq, &config).unwrap();
        (
            Checkpoint {
                config,
                params: out.params,
                steps: out.steps,
            },
            seq,
        )
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (ckp, seq) = trained();
        let bytes = ckp.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes().unwrap(), bytes);
        assert_eq!(back.config, ckp.config);
        assert_eq!(back.steps, 2);
        assert_eq!(back.params.tensors(), ckp.params.tensors());
        let key = [ckp.config.seed, INFERENCE_KEY];
        assert_eq!(
            back.params.infer_future(&seq, &key, false).unwrap().0,
            ckp.params.infer_future(&seq, &key, false).unwrap().0
        );

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&ckp, &path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), bytes);
        assert_eq!(load_checkpoint(&path).unwrap().to_bytes().unwrap(), bytes);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let (ckp, _) = trained();
        let bytes = ckp.to_bytes().unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(CoevoError::Format(_))));
        let mut version = bytes.clone();
        version[8] = 9;
        let err = Checkpoint::from_bytes(&version).unwrap_err().to_string();
        assert!(err.contains("version 9"), "{err}");
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut trailing = bytes;
        trailing.push(0);
        assert!(Checkpoint::from_bytes(&trailing).is_err());
        assert!(matches!(
            load_checkpoint(Path::new("/nonexistent/model.ckpt")),
            Err(CoevoError::Io { .. })
        ));
    }
}
