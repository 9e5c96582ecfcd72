//! Named trainable parameters with deterministic initialization.
//!
//! Every weight in this crate lives in a [`ParamStore`] under a dotted path
//! name (`"mfat.stage0.conv.weight"`, `"tfs.block2.adain.mlp0.bias"`, ...).
//! Initial values are drawn from a per-name ChaCha stream seeded by
//! `sha256(global_seed, name)`, so a parameter's initial value depends only
//! on the store seed and its own name — never on creation order. That makes
//! model construction reproducible across runs and refactors.
//!
//! The store is also the unit of checkpointing and of the freeze-contract
//! bookkeeping: [`ParamStore::hash_prefix`] digests a named subtree of the
//! current weights so tests can assert that a training sub-step left a
//! component untouched.

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Initial value distribution for a freshly created parameter.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    /// All zeros (used for biases and zero-convolutions).
    Zeros,
    /// A single repeated value.
    Constant(f64),
    /// Zero-mean Gaussian with the given standard deviation.
    Normal { std: f64 },
}

impl Init {
    /// He/Kaiming initialization for ReLU layers: `std = sqrt(2 / fan_in)`.
    pub fn kaiming(fan_in: usize) -> Init {
        Init::Normal {
            std: (2.0 / fan_in.max(1) as f64).sqrt(),
        }
    }
}

/// Ordered map of named trainable variables (f32, CPU).
#[derive(Debug)]
pub struct ParamStore {
    seed: u64,
    device: Device,
    vars: BTreeMap<String, Var>,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        ParamStore {
            seed,
            device: Device::Cpu,
            vars: BTreeMap::new(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    /// Number of stored parameters (tensors, not scalars).
    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    /// Fetch `name`, creating it from `init` if absent. An existing entry
    /// (possibly loaded from a checkpoint) is returned as-is after a shape
    /// check, so module constructors can be re-run over a loaded store.
    pub fn get_or_init(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Var> {
        if let Some(var) = self.vars.get(name) {
            if var.shape().dims() != shape {
                return Err(Error::Config(format!(
                    "parameter {name} has shape {:?}, expected {shape:?}",
                    var.shape().dims()
                )));
            }
            return Ok(var.clone());
        }
        let n: usize = shape.iter().product();
        let values = match init {
            Init::Zeros => vec![0.0f32; n],
            Init::Constant(c) => vec![c as f32; n],
            Init::Normal { std } => {
                let mut rng = self.name_rng(name);
                (0..n)
                    .map(|_| (std * hyface_core::head::rig::gaussian(&mut rng)) as f32)
                    .collect()
            }
        };
        let var = Var::from_vec(values, shape, &self.device)?;
        self.vars.insert(name.to_string(), var.clone());
        Ok(var)
    }

    /// Insert an externally provided tensor (checkpoint load path). Rejects
    /// duplicates: a checkpoint must not name the same parameter twice.
    pub fn insert(&mut self, name: &str, tensor: &Tensor) -> Result<()> {
        if self.vars.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        let tensor = tensor.to_dtype(DType::F32)?.to_device(&self.device)?;
        self.vars.insert(name.to_string(), Var::from_tensor(&tensor)?);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    /// All parameter names in sorted order.
    pub fn names(&self) -> Vec<String> {
        self.vars.keys().cloned().collect()
    }

    /// All variables whose name starts with `prefix`, in sorted name order.
    /// This is the unit handed to one optimizer (one trainable group).
    pub fn vars_with_prefix(&self, prefix: &str) -> Vec<Var> {
        self.vars
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, v)| v.clone())
            .collect()
    }

    /// Iterate `(name, var)` pairs in sorted order (checkpoint save path).
    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    /// SHA-256 hex digest of the current values of every parameter whose
    /// name starts with `prefix` (names and raw little-endian f32 bytes, in
    /// sorted name order). Two stores agree on a prefix hash iff the named
    /// subtrees are bit-identical.
    pub fn hash_prefix(&self, prefix: &str) -> Result<String> {
        let mut hasher = Sha256::new();
        for (name, var) in self.vars.iter().filter(|(k, _)| k.starts_with(prefix)) {
            hasher.update(name.as_bytes());
            hasher.update([0u8]);
            let flat = var.as_tensor().flatten_all()?.to_vec1::<f32>()?;
            hasher.update((flat.len() as u64).to_le_bytes());
            for x in flat {
                hasher.update(x.to_le_bytes());
            }
        }
        Ok(hex(&hasher.finalize()))
    }

    /// Per-name deterministic RNG: seeded from the store seed and the
    /// parameter name, independent of any other draw.
    fn name_rng(&self, name: &str) -> ChaCha12Rng {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(name.as_bytes());
        let digest = hasher.finalize();
        let mut key = [0u8; 32];
        key.copy_from_slice(&digest);
        ChaCha12Rng::from_seed(key)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
