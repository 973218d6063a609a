//! JSON checkpoints: shape headers plus row-major parameter payloads.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mlp::{LayerShape, Mlp};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &str = "ADASIM-CKPT-1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkRecord {
    pub name: String,
    pub layers: Vec<LayerShape>,
    /// Per layer: weight block (row-major, `out × in`) then bias.
    pub params: Vec<f64>,
}

impl NetworkRecord {
    pub fn from_mlp(name: impl Into<String>, mlp: &Mlp) -> Self {
        Self {
            name: name.into(),
            layers: mlp.shapes().to_vec(),
            params: mlp.params().to_vec(),
        }
    }

    pub fn to_mlp(&self) -> Result<Mlp> {
        let mut mlp = Mlp::zeros(self.layers.clone())?;
        if mlp.param_count() != self.params.len() {
            return Err(Error::shape("checkpoint payload", mlp.param_count(), self.params.len()));
        }
        mlp.params_mut().copy_from_slice(&self.params);
        Ok(mlp)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub magic: String,
    pub epoch: usize,
    pub networks: Vec<NetworkRecord>,
}

impl Checkpoint {
    pub fn new(epoch: usize, networks: Vec<NetworkRecord>) -> Self {
        Self {
            magic: CHECKPOINT_MAGIC.to_string(),
            epoch,
            networks,
        }
    }

    pub fn network(&self, name: &str) -> Option<&NetworkRecord> {
        self.networks.iter().find(|n| n.name == name)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_slice(&fs::read(path)?)?;
        if ckpt.magic != CHECKPOINT_MAGIC {
            return Err(Error::Format {
                path: path.to_path_buf(),
                message: format!("expected magic {CHECKPOINT_MAGIC:?}, found {:?}", ckpt.magic),
            });
        }
        Ok(ckpt)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn save_load_is_lossless() {
        let mlp = Mlp::new(&[3, 5, 2], &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        Checkpoint::new(3, vec![NetworkRecord::from_mlp("student", &mlp)])
            .save(&path)
            .unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.epoch, 3);
        assert_eq!(back.network("student").unwrap().to_mlp().unwrap(), mlp);
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.ckpt");
        let mut ckpt = Checkpoint::new(0, vec![]);
        ckpt.magic = "NOPE".into();
        ckpt.save(&path).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Format { .. })));
    }
}
