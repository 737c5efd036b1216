use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{ModelConfig, StModel};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Self-describing parameter snapshot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub scalar: String,
    pub epoch: usize,
    pub config: ModelConfig,
    pub params: Vec<Vec<f64>>,
}

impl Checkpoint {
    pub fn from_model<T: Scalar>(model: &StModel<T>, epoch: usize) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            scalar: T::type_name().to_string(),
            epoch,
            config: model.config().clone(),
            params: model
                .params()
                .iter()
                .map(|p| p.iter().map(|v| v.f64()).collect())
                .collect(),
        }
    }

    pub fn to_model<T: Scalar>(&self) -> Result<StModel<T>> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::InvalidInput(format!(
                "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        let mut m = StModel::new(self.config.clone())?;
        m.set_params(&self.params)?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, self)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let v: serde_json::Value = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        if v.get("version").and_then(serde_json::Value::as_u64).is_none() {
            return Err(Error::format(path, "version", "missing checkpoint version"));
        }
        Ok(serde_json::from_value(v)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f32_round_trip_is_exact() {
        let m = StModel::<f32>::new(ModelConfig {
            seed: 11,
            ..Default::default()
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ckpt.json");
        Checkpoint::from_model(&m, 3).save(&p).unwrap();
        let c = Checkpoint::load(&p).unwrap();
        assert_eq!(c.epoch, 3);
        assert_eq!(c.scalar, "f32");
        assert_eq!(c.to_model::<f32>().unwrap(), m);
    }

    #[test]
    fn missing_version_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.json");
        std::fs::write(&p, "{\"params\": []}").unwrap();
        assert!(matches!(Checkpoint::load(&p), Err(Error::Format { .. })));
    }
}
