use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mlp::MlpModel;
use super::EnsemblePosterior;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "vimpc-ensemble";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Self-describing JSON checkpoint of a trained ensemble. Each member
/// carries its architecture, normalization statistics and parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleCheckpoint {
    pub format: String,
    pub version: u32,
    pub members: Vec<MlpModel>,
}

impl EnsembleCheckpoint {
    pub fn new(posterior: &EnsemblePosterior<MlpModel>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            members: posterior.particles().to_vec(),
        }
    }

    pub fn into_posterior(self) -> Result<EnsemblePosterior<MlpModel>> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unexpected format `{}`", self.format)));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", self.version)));
        }
        for m in &self.members {
            if m.params().len() != m.param_count() {
                return Err(Error::Checkpoint("parameter count does not match architecture".into()));
            }
        }
        EnsemblePosterior::new(self.members)
    }
}

pub fn save_ensemble(posterior: &EnsemblePosterior<MlpModel>, path: &Path) -> Result<()> {
    let text = serde_json::to_string(&EnsembleCheckpoint::new(posterior))?;
    fs::write(path, text)?;
    Ok(())
}

pub fn load_ensemble(path: &Path) -> Result<EnsemblePosterior<MlpModel>> {
    let ckpt: EnsembleCheckpoint = serde_json::from_str(&fs::read_to_string(path)?)?;
    ckpt.into_posterior()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{Activation, DynamicsModel};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_preserves_predictions() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let members = (0..2)
            .map(|_| MlpModel::random(3, 1, &[6], Activation::Swish, &mut rng))
            .collect();
        let post = EnsemblePosterior::new(members).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ens.json");
        save_ensemble(&post, &path).unwrap();
        let back = load_ensemble(&path).unwrap();
        for (a, b) in post.particles().iter().zip(back.particles()) {
            assert_eq!(a.predict(&[0.1, 0.2, 0.3], &[0.4]), b.predict(&[0.1, 0.2, 0.3], &[0.4]));
        }
    }

    #[test]
    fn version_mismatch_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let post = EnsemblePosterior::single(MlpModel::random(1, 1, &[2], Activation::Swish, &mut rng));
        let mut ckpt = EnsembleCheckpoint::new(&post);
        ckpt.version = 99;
        assert!(matches!(ckpt.into_posterior(), Err(Error::Checkpoint(_))));
    }
}
