//! `.cpk` checkpoint files.
//!
//! Layout, little-endian: magic `CPRO`, version `u32`, config blob (`u32`
//! byte length then UTF-8 `key=value` lines), RNG state as 4 `u64`, tensor
//! count `u32`, then per tensor a `u16`-length UTF-8 name, `u8` rank, `u32`
//! dims and row-major `f32` data. Parameters are stored under their own
//! names and momentum buffers under `velocity:<name>`.

use std::fs;
use std::path::Path;

use super::{TrainConfig, TrainError};
use crate::kv;
use crate::model::Network;
use crate::numcore::{OptimState, ParamStore, Tensor};
use crate::rng::Rng;

pub const CPK_MAGIC: [u8; 4] = *b"CPRO";
pub const CPK_VERSION: u32 = 1;
const VELOCITY_PREFIX: &str = "velocity:";

/// Full training state: enough to resume bit-exactly.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub network: Network,
    pub optim: OptimState,
    pub rng: Rng,
    pub con_epochs_done: usize,
    pub pro_epochs_done: usize,
}

impl Checkpoint {
    /// Bitwise equality of everything except the config snapshot.
    pub fn state_bits_eq(&self, other: &Self) -> bool {
        let vel = |c: &Self| -> ParamStore {
            c.optim.velocity().iter().map(|(k, v)| (k.clone(), v.clone())).collect()
        };
        self.network.params.bits_eq(&other.network.params)
            && vel(self).bits_eq(&vel(other))
            && self.rng == other.rng
            && self.con_epochs_done == other.con_epochs_done
            && self.pro_epochs_done == other.pro_epochs_done
    }

    fn config_blob(&self) -> String {
        let mut pairs = self.config.to_kv();
        pairs.push(("con_epochs_done", self.con_epochs_done.to_string()));
        pairs.push(("pro_epochs_done", self.pro_epochs_done.to_string()));
        kv::render_kv(pairs)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, TrainError> {
        let mut out = Vec::new();
        out.extend_from_slice(&CPK_MAGIC);
        out.extend_from_slice(&CPK_VERSION.to_le_bytes());
        let blob = self.config_blob();
        out.extend_from_slice(&(blob.len() as u32).to_le_bytes());
        out.extend_from_slice(blob.as_bytes());
        for w in self.rng.state() {
            out.extend_from_slice(&w.to_le_bytes());
        }
        let mut tensors: Vec<(String, &Tensor)> = self
            .network
            .params
            .iter()
            .map(|(k, t)| (k.clone(), t))
            .collect();
        tensors.extend(
            self.optim
                .velocity()
                .iter()
                .map(|(k, t)| (format!("{VELOCITY_PREFIX}{k}"), t)),
        );
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, t) in tensors {
            let len = u16::try_from(name.len())
                .map_err(|_| TrainError::Format(format!("tensor name too long: {name}")))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            let rank = u8::try_from(t.ndim())
                .map_err(|_| TrainError::Format(format!("rank too large for {name}")))?;
            out.push(rank);
            for &d in t.shape() {
                let d = u32::try_from(d)
                    .map_err(|_| TrainError::Format(format!("dimension too large for {name}")))?;
                out.extend_from_slice(&d.to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TrainError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != CPK_MAGIC {
            return Err(TrainError::BadMagic {
                found: String::from_utf8_lossy(magic).into_owned(),
            });
        }
        let version = r.u32("version")?;
        if version != CPK_VERSION {
            return Err(TrainError::UnsupportedVersion(version));
        }
        let blob_len = r.u32("config length")? as usize;
        let blob = std::str::from_utf8(r.take(blob_len, "config blob")?)
            .map_err(|e| TrainError::Format(format!("config blob is not UTF-8: {e}")))?;
        let map = kv::parse_kv(blob)?;
        let config = TrainConfig::from_kv(&map)?;
        let con_epochs_done: usize = kv::require(&map, "con_epochs_done")?;
        let pro_epochs_done: usize = kv::require(&map, "pro_epochs_done")?;
        let mut state = [0u64; 4];
        for w in &mut state {
            *w = r.u64("rng state")?;
        }

        let count = r.u32("tensor count")?;
        let mut params = ParamStore::new();
        let mut velocities = Vec::new();
        for _ in 0..count {
            let len = r.u16("name length")? as usize;
            let name = std::str::from_utf8(r.take(len, "tensor name")?)
                .map_err(|e| TrainError::Format(format!("tensor name is not UTF-8: {e}")))?
                .to_string();
            let rank = r.take(1, "rank")?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32("dimension")? as usize);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| TrainError::Format(format!("{name}: shape overflow")))?;
            let data = r
                .take(n, &name)?
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect();
            let t = Tensor::new(shape, data)
                .map_err(|e| TrainError::Format(format!("{name}: {e}")))?;
            match name.strip_prefix(VELOCITY_PREFIX) {
                Some(p) => velocities.push((p.to_string(), t)),
                None => params.insert(name, t),
            }
        }
        if r.pos != bytes.len() {
            return Err(TrainError::Format(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }

        let network = Network {
            config: config.model.clone(),
            params,
        };
        network
            .validate_params()
            .map_err(|e| TrainError::Format(format!("inconsistent parameters: {e}")))?;
        let mut optim = super::new_optimizer(&config)?;
        for (name, v) in velocities {
            let p = network
                .params
                .get(&name)
                .ok_or_else(|| TrainError::Format(format!("velocity for unknown parameter {name}")))?;
            if !p.same_shape(&v) {
                return Err(TrainError::Format(format!("velocity shape mismatch for {name}")));
            }
            optim.set_velocity(name, v);
        }
        Ok(Self {
            config,
            network,
            optim,
            rng: Rng::from_state(state),
            con_epochs_done,
            pro_epochs_done,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TrainError> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|source| TrainError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TrainError> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|source| TrainError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<(), TrainError> {
    ckpt.save(path)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, TrainError> {
    Checkpoint::load(path)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], TrainError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                TrainError::Truncated(format!("{what} at byte {} needs {n} bytes", self.pos))
            })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u16(&mut self, what: &str) -> Result<u16, TrainError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32, TrainError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64, TrainError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}
