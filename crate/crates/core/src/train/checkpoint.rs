use std::path::Path;

use mcfnet_tensor::{ParamKind, ParamStore, Tensor};
use ndarray::IxDyn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::mfa::MfaState;
use crate::model::McfNet;
use crate::train::config::Config;
use crate::train::optim::AdamState;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredTensor {
    pub name: String,
    pub trainable: bool,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Everything needed to resume training or run inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: Config,
    /// Fingerprint of `config` at save time.
    pub fingerprint: String,
    pub class_names: Vec<String>,
    /// Last completed epoch.
    pub epoch: usize,
    pub iterations: usize,
    pub params: Vec<StoredTensor>,
    pub mfa: MfaState,
    pub optimizer: AdamState,
}

impl Checkpoint {
    pub fn capture(
        config: &Config,
        class_names: &[String],
        epoch: usize,
        iterations: usize,
        store: &ParamStore,
        mfa: &MfaState,
        optimizer: AdamState,
    ) -> Self {
        let params = store
            .ids()
            .map(|id| {
                let t = store.get(id);
                StoredTensor {
                    name: store.name(id).to_string(),
                    trainable: store.kind(id) == ParamKind::Trainable,
                    shape: t.shape().to_vec(),
                    data: t.iter().copied().collect(),
                }
            })
            .collect();
        Self {
            config: config.clone(),
            fingerprint: config.fingerprint(),
            class_names: class_names.to_vec(),
            epoch,
            iterations,
            params,
            mfa: mfa.clone(),
            optimizer,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = bincode::serialize(self).map_err(|e| Error::Checkpoint(e.to_string()))?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let ck: Self = bincode::deserialize(&bytes).map_err(|e| Error::format(path, e))?;
        if ck.fingerprint != ck.config.fingerprint() {
            return Err(Error::format(path, "config fingerprint does not match the stored config"));
        }
        Ok(ck)
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Rebuilds the network and loads the stored tensors into a fresh store.
    pub fn restore(&self) -> Result<(McfNet, ParamStore)> {
        let cfg = self.config.model_config(self.num_classes())?;
        let mut store = ParamStore::new();
        let net = McfNet::new(&mut store, &mut ChaCha8Rng::seed_from_u64(0), &cfg)?;
        if store.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} tensors, the model has {}",
                self.params.len(),
                store.len()
            )));
        }
        for p in &self.params {
            let id = store.find(&p.name).ok_or_else(|| Error::Checkpoint(format!("unknown tensor {}", p.name)))?;
            if store.get(id).shape() != p.shape.as_slice() {
                return Err(Error::Checkpoint(format!("tensor {} has shape {:?}", p.name, p.shape)));
            }
            let t = Tensor::from_shape_vec(IxDyn(&p.shape), p.data.clone()).map_err(|e| Error::Checkpoint(e.to_string()))?;
            store.set(id, t);
        }
        Ok((net, store))
    }
}
