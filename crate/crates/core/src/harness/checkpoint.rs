//! Deterministic binary checkpoints: parameters, optimizer momentum, stage
//! tag, epoch and the embedded canonical config.
//!
//! The writer emits no timestamps and iterates parameters in store order, so
//! identical training runs produce byte-identical files.

use super::config::RunConfig;
use crate::error::{Error, Result};
use crate::nn::{ParamStore, Sgd};
use crate::tensor::Tensor;
use sha2::{Digest, Sha256};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"FSLABCK1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    SpatialPretrain,
    TemporalPretrain,
    Joint,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::SpatialPretrain, Stage::TemporalPretrain, Stage::Joint];

    pub fn tag(&self) -> &'static str {
        match self {
            Stage::SpatialPretrain => "spatial-pretrain",
            Stage::TemporalPretrain => "temporal-pretrain",
            Stage::Joint => "joint",
        }
    }

    fn code(&self) -> u8 {
        match self {
            Stage::SpatialPretrain => 0,
            Stage::TemporalPretrain => 1,
            Stage::Joint => 2,
        }
    }

    fn from_code(c: u8) -> Result<Stage> {
        Ok(match c {
            0 => Stage::SpatialPretrain,
            1 => Stage::TemporalPretrain,
            2 => Stage::Joint,
            _ => return Err(Error::format(format!("unknown stage code {c}"))),
        })
    }
}

pub struct Checkpoint {
    pub stage: Stage,
    /// Completed epochs within `stage`.
    pub epoch: usize,
    pub config: RunConfig,
    pub params: Vec<(String, Tensor)>,
    pub momentum: Vec<Option<Tensor>>,
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    put_u64(out, b.len() as u64);
    out.extend_from_slice(b);
}

fn put_tensor(out: &mut Vec<u8>, t: &Tensor) {
    put_u64(out, t.shape().len() as u64);
    for &d in t.shape() {
        put_u64(out, d as u64);
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::format("checkpoint truncated"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.u64()? as usize;
        self.take(n)
    }

    fn tensor(&mut self) -> Result<Tensor> {
        let ndim = self.u64()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(self.u64()? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = self.take(n * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Tensor::from_vec(&shape, data))
    }
}

impl Checkpoint {
    pub fn capture(
        config: &RunConfig,
        store: &ParamStore,
        optimizer: &Sgd,
        stage: Stage,
        epoch: usize,
    ) -> Checkpoint {
        Checkpoint {
            stage,
            epoch,
            config: config.clone(),
            params: store.iter().map(|(n, t)| (n.to_string(), t.clone())).collect(),
            momentum: optimizer.velocity().to_vec(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(self.stage.code());
        out.extend_from_slice(&(self.epoch as u32).to_le_bytes());
        let config_json = self.config.canonical_json();
        put_bytes(&mut out, config_json.as_bytes());
        out.extend_from_slice(&self.config.trajectory_hash());
        put_u64(&mut out, self.params.len() as u64);
        for (name, t) in &self.params {
            put_bytes(&mut out, name.as_bytes());
            put_tensor(&mut out, t);
        }
        for m in &self.momentum {
            match m {
                Some(t) => {
                    out.push(1);
                    put_tensor(&mut out, t);
                }
                None => out.push(0),
            }
        }
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let mut f = std::fs::File::create(path)?;
        f.write_all(&out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        let mut r = Reader { buf: &buf, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::format(format!("{}: not a checkpoint", path.display())));
        }
        let stage = Stage::from_code(r.take(1)?[0])?;
        let epoch = u32::from_le_bytes(r.take(4)?.try_into().unwrap()) as usize;
        let config_json = String::from_utf8(r.bytes()?.to_vec())
            .map_err(|_| Error::format("config is not utf-8"))?;
        let config: RunConfig = serde_json::from_str(&config_json)
            .map_err(|e| Error::format(format!("embedded config: {e}")))?;
        let stored_hash: [u8; 32] = r.take(32)?.try_into().unwrap();
        if stored_hash != config.trajectory_hash() {
            return Err(Error::format("checkpoint hash does not match its embedded config"));
        }
        let n = r.u64()? as usize;
        let mut params = Vec::with_capacity(n);
        for _ in 0..n {
            let name = String::from_utf8(r.bytes()?.to_vec())
                .map_err(|_| Error::format("param name is not utf-8"))?;
            params.push((name, r.tensor()?));
        }
        let mut momentum = Vec::with_capacity(n);
        for _ in 0..n {
            momentum.push(match r.take(1)?[0] {
                1 => Some(r.tensor()?),
                _ => None,
            });
        }
        Ok(Checkpoint { stage, epoch, config, params, momentum })
    }

    /// Copy parameter values into a freshly built store; names and shapes
    /// must line up exactly.
    pub fn restore(&self, store: &mut ParamStore) -> Result<()> {
        if store.len() != self.params.len() {
            return Err(Error::config(format!(
                "checkpoint has {} parameters, model has {}",
                self.params.len(),
                store.len()
            )));
        }
        for (name, value) in &self.params {
            let id = store
                .id_by_name(name)
                .ok_or_else(|| Error::config(format!("model has no parameter {name}")))?;
            if store.get(id).shape() != value.shape() {
                return Err(Error::config(format!("parameter {name} changed shape")));
            }
            *store.get_mut(id) = value.clone();
        }
        Ok(())
    }

    pub fn restore_momentum(&self, optimizer: &mut Sgd) {
        *optimizer.velocity_mut() = self.momentum.clone();
    }
}

/// SHA-256 of a file, for checkpoint-identity assertions.
pub fn file_sha256(path: &Path) -> Result<String> {
    let mut f = std::fs::File::open(path)?;
    let mut h = Sha256::new();
    let mut buf = [0u8; 65536];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(format!("{:x}", h.finalize()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Network;
    use crate::nn::SgdConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use tempfile::tempdir;

    #[test]
    fn save_load_round_trip() {
        let cfg = RunConfig::desk("corpus", "out");
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        Network::build(&mut store, &mut rng, &cfg.model_config()).unwrap();
        let sgd = Sgd::new(SgdConfig::default(), store.len());

        let ckpt = Checkpoint::capture(&cfg, &store, &sgd, Stage::Joint, 3);
        let dir = tempdir().unwrap();
        let p = dir.path().join("ckpt.bin");
        ckpt.save(&p).unwrap();

        let loaded = Checkpoint::load(&p).unwrap();
        assert_eq!(loaded.stage, Stage::Joint);
        assert_eq!(loaded.epoch, 3);
        assert_eq!(loaded.params.len(), store.len());
        for ((name, t), (n2, t2)) in ckpt.params.iter().zip(&loaded.params) {
            assert_eq!(name, n2);
            assert_eq!(t, t2);
        }

        // restoring into a differently initialised model reproduces values
        let mut store2 = ParamStore::new();
        let mut rng2 = ChaCha8Rng::seed_from_u64(999);
        Network::build(&mut store2, &mut rng2, &cfg.model_config()).unwrap();
        loaded.restore(&mut store2).unwrap();
        for (a, b) in store.iter().zip(store2.iter()) {
            assert_eq!(a.1, b.1);
        }
    }

    #[test]
    fn identical_captures_are_byte_identical() {
        let cfg = RunConfig::desk("corpus", "out");
        let build = || {
            let mut store = ParamStore::new();
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            Network::build(&mut store, &mut rng, &cfg.model_config()).unwrap();
            store
        };
        let dir = tempdir().unwrap();
        let (pa, pb) = (dir.path().join("a.bin"), dir.path().join("b.bin"));
        let sgd = Sgd::new(SgdConfig::default(), 0);
        Checkpoint::capture(&cfg, &build(), &sgd, Stage::Joint, 1).save(&pa).unwrap();
        Checkpoint::capture(&cfg, &build(), &sgd, Stage::Joint, 1).save(&pb).unwrap();
        assert_eq!(file_sha256(&pa).unwrap(), file_sha256(&pb).unwrap());
    }

    #[test]
    fn rejects_garbage() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("bad.bin");
        std::fs::write(&p, b"definitely not a checkpoint").unwrap();
        assert!(matches!(Checkpoint::load(&p), Err(Error::Format(_))));
    }
}
