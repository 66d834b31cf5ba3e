//! Self-describing binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic           8 bytes   b"SGANCKPT"
//! version         u32
//! meta_len        u64
//! meta            meta_len bytes of UTF-8 JSON (specs, counters, RNG state,
//!                 config snapshot)
//! array_count     u64
//! array_count records of:
//!   name_len      u64
//!   name          name_len bytes UTF-8
//!   dtype         u8 (1 = f64)
//!   ndim          u8
//!   dims          ndim x u64
//!   data          8 * prod(dims) bytes of little-endian f64
//! ```
//!
//! Serialization is canonical (fixed field and array order), so
//! save -> load -> save reproduces the file byte for byte.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::NetworkSpec;
use crate::nn::Network;
use crate::train::TrainConfig;

const MAGIC: &[u8; 8] = b"SGANCKPT";
pub const FORMAT_VERSION: u32 = 1;
const DTYPE_F64: u8 = 1;

/// A `u128` stored as two `u64` halves (JSON numbers cap at 64 bits).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordPos {
    pub hi: u64,
    pub lo: u64,
}

impl From<u128> for WordPos {
    fn from(v: u128) -> Self {
        WordPos {
            hi: (v >> 64) as u64,
            lo: v as u64,
        }
    }
}

impl From<WordPos> for u128 {
    fn from(v: WordPos) -> u128 {
        ((v.hi as u128) << 64) | v.lo as u128
    }
}

/// Positions of every RNG stream the trainer owns, for exact resume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngSnapshot {
    pub seed: u64,
    pub noise_word_pos: WordPos,
    pub patch_word_pos: WordPos,
}

/// Adam accumulator tensors plus the shared step counter.
#[derive(Debug, Clone)]
pub struct AdamSnapshot {
    pub t: u64,
    /// `(param_name.m, tensor)` and `(param_name.v, tensor)` pairs, in
    /// parameter order.
    pub tensors: Vec<(String, ArrayD<f64>)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Meta {
    format: String,
    generator_spec: NetworkSpec,
    discriminator_spec: NetworkSpec,
    step: u64,
    epoch: u64,
    adam_g_t: Option<u64>,
    adam_d_t: Option<u64>,
    rng: Option<RngSnapshot>,
    train_config: Option<TrainConfig>,
    config_text: String,
}

/// Everything needed to regenerate images or resume training.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub generator_spec: NetworkSpec,
    pub discriminator_spec: NetworkSpec,
    pub generator_tensors: Vec<(String, ArrayD<f64>)>,
    pub discriminator_tensors: Vec<(String, ArrayD<f64>)>,
    pub opt_generator: Option<AdamSnapshot>,
    pub opt_discriminator: Option<AdamSnapshot>,
    /// Completed training iterations.
    pub step: u64,
    pub epoch: u64,
    pub rng: Option<RngSnapshot>,
    pub train_config: Option<TrainConfig>,
    /// Free-form resolved-configuration text stored next to the weights.
    pub config_text: String,
}

impl Checkpoint {
    /// Rebuilds the generator with these weights.
    pub fn build_generator(&self) -> Result<Network> {
        Network::from_named_tensors(&self.generator_spec, &self.generator_tensors)
    }

    /// Rebuilds the discriminator with these weights.
    pub fn build_discriminator(&self) -> Result<Network> {
        Network::from_named_tensors(&self.discriminator_spec, &self.discriminator_tensors)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))
    }

    fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;

        let meta = Meta {
            format: "dilated-sgan checkpoint".to_string(),
            generator_spec: self.generator_spec.clone(),
            discriminator_spec: self.discriminator_spec.clone(),
            step: self.step,
            epoch: self.epoch,
            adam_g_t: self.opt_generator.as_ref().map(|a| a.t),
            adam_d_t: self.opt_discriminator.as_ref().map(|a| a.t),
            rng: self.rng,
            train_config: self.train_config.clone(),
            config_text: self.config_text.clone(),
        };
        let meta_bytes = serde_json::to_vec(&meta).expect("meta serializes");
        w.write_all(&(meta_bytes.len() as u64).to_le_bytes())?;
        w.write_all(&meta_bytes)?;

        let arrays = self.ordered_arrays();
        w.write_all(&(arrays.len() as u64).to_le_bytes())?;
        for (name, tensor) in arrays {
            w.write_all(&(name.len() as u64).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&[DTYPE_F64, tensor.ndim() as u8])?;
            for &d in tensor.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            // tensors are standard layout by construction
            for &v in tensor.as_slice().expect("standard layout") {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()
    }

    fn ordered_arrays(&self) -> Vec<(String, &ArrayD<f64>)> {
        let mut out = Vec::new();
        for (n, t) in &self.generator_tensors {
            out.push((format!("generator.{n}"), t));
        }
        for (n, t) in &self.discriminator_tensors {
            out.push((format!("discriminator.{n}"), t));
        }
        if let Some(a) = &self.opt_generator {
            for (n, t) in &a.tensors {
                out.push((format!("opt.generator.{n}"), t));
            }
        }
        if let Some(a) = &self.opt_discriminator {
            for (n, t) in &a.tensors {
                out.push((format!("opt.discriminator.{n}"), t));
            }
        }
        out
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        Self::read_from(&mut r)
    }

    fn read_from(r: &mut impl Read) -> Result<Checkpoint> {
        let corrupt = |msg: &str| Error::CheckpointCorrupt(msg.to_string());

        let mut magic = [0u8; 8];
        read_exact(r, &mut magic)?;
        if &magic != MAGIC {
            return Err(corrupt("bad magic bytes"));
        }
        let version = read_u32(r)?;
        if version != FORMAT_VERSION {
            return Err(Error::CheckpointVersion {
                found: version,
                expected: FORMAT_VERSION,
            });
        }

        let meta_len = read_u64(r)? as usize;
        if meta_len > 1 << 30 {
            return Err(corrupt("implausible meta length"));
        }
        let mut meta_bytes = vec![0u8; meta_len];
        read_exact(r, &mut meta_bytes)?;
        let meta: Meta = serde_json::from_slice(&meta_bytes)
            .map_err(|e| Error::CheckpointCorrupt(format!("meta json: {e}")))?;

        let count = read_u64(r)? as usize;
        if count > 1 << 20 {
            return Err(corrupt("implausible array count"));
        }
        let mut generator_tensors = Vec::new();
        let mut discriminator_tensors = Vec::new();
        let mut opt_g_tensors = Vec::new();
        let mut opt_d_tensors = Vec::new();
        for _ in 0..count {
            let name_len = read_u64(r)? as usize;
            if name_len > 4096 {
                return Err(corrupt("implausible tensor name length"));
            }
            let mut name_bytes = vec![0u8; name_len];
            read_exact(r, &mut name_bytes)?;
            let name =
                String::from_utf8(name_bytes).map_err(|_| corrupt("tensor name not UTF-8"))?;

            let mut head = [0u8; 2];
            read_exact(r, &mut head)?;
            if head[0] != DTYPE_F64 {
                return Err(Error::CheckpointCorrupt(format!(
                    "tensor {name}: unsupported dtype tag {}",
                    head[0]
                )));
            }
            let ndim = head[1] as usize;
            let mut dims = Vec::with_capacity(ndim);
            let mut len = 1usize;
            for _ in 0..ndim {
                let d = read_u64(r)? as usize;
                len = len
                    .checked_mul(d)
                    .ok_or_else(|| corrupt("tensor size overflow"))?;
                dims.push(d);
            }
            if len > 1 << 28 {
                return Err(corrupt("implausible tensor size"));
            }
            let mut data = vec![0.0f64; len];
            let mut buf = [0u8; 8];
            for v in data.iter_mut() {
                read_exact(r, &mut buf)?;
                *v = f64::from_le_bytes(buf);
            }
            let tensor = ArrayD::from_shape_vec(IxDyn(&dims), data)
                .map_err(|e| Error::CheckpointCorrupt(format!("tensor {name}: {e}")))?;

            if let Some(n) = name.strip_prefix("opt.generator.") {
                opt_g_tensors.push((n.to_string(), tensor));
            } else if let Some(n) = name.strip_prefix("opt.discriminator.") {
                opt_d_tensors.push((n.to_string(), tensor));
            } else if let Some(n) = name.strip_prefix("generator.") {
                generator_tensors.push((n.to_string(), tensor));
            } else if let Some(n) = name.strip_prefix("discriminator.") {
                discriminator_tensors.push((n.to_string(), tensor));
            } else {
                return Err(Error::CheckpointCorrupt(format!(
                    "tensor {name}: unknown section"
                )));
            }
        }

        let opt_generator = meta.adam_g_t.map(|t| AdamSnapshot {
            t,
            tensors: opt_g_tensors,
        });
        let opt_discriminator = meta.adam_d_t.map(|t| AdamSnapshot {
            t,
            tensors: opt_d_tensors,
        });

        Ok(Checkpoint {
            generator_spec: meta.generator_spec,
            discriminator_spec: meta.discriminator_spec,
            generator_tensors,
            discriminator_tensors,
            opt_generator,
            opt_discriminator,
            step: meta.step,
            epoch: meta.epoch,
            rng: meta.rng,
            train_config: meta.train_config,
            config_text: meta.config_text,
        })
    }
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| Error::CheckpointCorrupt(format!("unexpected end of file: {e}")))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact(r, &mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    read_exact(r, &mut buf)?;
    Ok(u64::from_le_bytes(buf))
}
