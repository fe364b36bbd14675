//! Checkpoint archive: `MSCK` magic, `u32` version, `u64` header length, a
//! JSON header, then `u32` array count followed by named little-endian `f32`
//! arrays (`u16` name length, UTF-8 name, `u8` rank, `u32` dims, data).

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, Array3, ArrayD, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::bank::MemoryBank;
use super::{PretrainConfig, PretrainError, Result};
use crate::conventions::ConventionRegistry;
use crate::graph::AdjacencySet;
use crate::network::Encoder;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MSCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Serializable position of a ChaCha generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: hex::encode(rng.get_seed()),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let bad = |r: &str| PretrainError::InvalidConfig(format!("rng state: {r}"));
        let bytes = hex::decode(&self.seed).map_err(|e| bad(&e.to_string()))?;
        let seed: [u8; 32] = bytes.try_into().map_err(|_| bad("seed must be 32 bytes"))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().map_err(|_| bad("word position"))?);
        Ok(rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub config: PretrainConfig,
    pub formats: Vec<String>,
    pub epochs_completed: usize,
    pub step: usize,
    pub in_channels: usize,
    pub v_max: usize,
    pub rng: RngState,
    pub augment_rng: RngState,
    pub loss_history: Vec<f64>,
    pub bank_pointer: usize,
    pub bank_len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub query: Encoder,
    pub key: Encoder,
    pub bank: MemoryBank,
    /// Normalized partition stacks used in training, by convention.
    pub adjacency: BTreeMap<String, Array3<f64>>,
}

fn corrupt(path: &Path, reason: impl Into<String>) -> PretrainError {
    PretrainError::Checkpoint {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

fn push_array(buf: &mut Vec<u8>, name: &str, shape: &[usize], data: impl Iterator<Item = f64>) {
    buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
    buf.extend_from_slice(name.as_bytes());
    buf.push(shape.len() as u8);
    for &d in shape {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in data {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(corrupt(self.path, format!("truncated at byte {}", self.bytes.len())));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

impl Checkpoint {
    fn encoder_arrays(prefix: &str, enc: &Encoder, buf: &mut Vec<u8>) -> u32 {
        let mut n = 0;
        for (name, t) in enc.params.tensors() {
            push_array(buf, &format!("{prefix}/{name}"), t.shape(), t.iter().copied());
            n += 1;
        }
        for (name, t) in enc.buffers.tensors() {
            push_array(buf, &format!("{prefix}_buffers/{name}"), t.shape(), t.iter().copied());
            n += 1;
        }
        n
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        let mut arrays = Vec::new();
        let mut count = Self::encoder_arrays("query", &self.query, &mut arrays);
        count += Self::encoder_arrays("key", &self.key, &mut arrays);
        let q = self.bank.queue();
        push_array(&mut arrays, "bank/queue", q.shape(), q.iter().copied());
        count += 1;
        for (name, a) in &self.adjacency {
            push_array(&mut arrays, &format!("adjacency/{name}"), a.shape(), a.iter().copied());
            count += 1;
        }
        let mut buf = Vec::with_capacity(header.len() + arrays.len() + 24);
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
        buf.extend_from_slice(&header);
        buf.extend_from_slice(&count.to_le_bytes());
        buf.extend_from_slice(&arrays);
        buf
    }

    /// Writes to a temporary sibling and renames it into place.
    pub fn write(&self, path: &Path) -> Result<()> {
        let io = |e: std::io::Error| PretrainError::Io {
            path: path.display().to_string(),
            source: e,
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(io)?;
        }
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        let tmp = std::path::PathBuf::from(tmp);
        {
            let mut f = fs::File::create(&tmp).map_err(io)?;
            f.write_all(&self.to_bytes()).map_err(io)?;
            f.sync_all().map_err(io)?;
        }
        fs::rename(&tmp, path).map_err(io)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| PretrainError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::from_bytes(&bytes, path)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(corrupt(path, "bad magic"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(corrupt(path, format!("unsupported version {version}")));
        }
        let hlen = r.u64()? as usize;
        let header: CheckpointHeader =
            serde_json::from_slice(r.take(hlen)?).map_err(|e| corrupt(path, format!("header: {e}")))?;
        let count = r.u32()?;
        let mut arrays: BTreeMap<String, ArrayD<f64>> = BTreeMap::new();
        for _ in 0..count {
            let nlen = r.u16()? as usize;
            let name = String::from_utf8(r.take(nlen)?.to_vec()).map_err(|_| corrupt(path, "array name is not UTF-8"))?;
            let rank = r.u8()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let len: usize = shape.iter().product();
            let raw = r.take(len * 4)?;
            let data: Vec<f64> = raw
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
                .collect();
            let arr = ArrayD::from_shape_vec(IxDyn(&shape), data).map_err(|e| corrupt(path, e.to_string()))?;
            arrays.insert(name, arr);
        }
        if r.pos != bytes.len() {
            return Err(corrupt(path, "trailing bytes"));
        }

        let mut load = |prefix: &str| -> Result<Encoder> {
            // initial values are overwritten below
            let mut enc = Encoder::new(
                header.config.network.clone(),
                header.in_channels,
                header.v_max,
                &mut ChaCha8Rng::seed_from_u64(0),
            )?;
            let mut fill = |name: String, mut t: ndarray::ArrayViewMutD<'_, f64>| -> Result<()> {
                let a = arrays.remove(&name).ok_or_else(|| corrupt(path, format!("missing array {name}")))?;
                if a.shape() != t.shape() {
                    return Err(corrupt(path, format!("array {name} has shape {:?}, expected {:?}", a.shape(), t.shape())));
                }
                t.assign(&a);
                Ok(())
            };
            for (name, t) in enc.params.tensors_mut() {
                fill(format!("{prefix}/{name}"), t)?;
            }
            for (name, t) in enc.buffers.tensors_mut() {
                fill(format!("{prefix}_buffers/{name}"), t)?;
            }
            Ok(enc)
        };
        let query = load("query")?;
        let key = load("key")?;
        let queue = arrays
            .remove("bank/queue")
            .ok_or_else(|| corrupt(path, "missing bank/queue"))?
            .into_dimensionality::<ndarray::Ix2>()
            .map_err(|_| corrupt(path, "bank/queue must be 2-D"))?;
        let queue: Array2<f64> = queue;
        let bank = MemoryBank::from_parts(queue, header.bank_pointer, header.bank_len)?;
        let mut adjacency = BTreeMap::new();
        for (name, a) in arrays {
            let conv = name
                .strip_prefix("adjacency/")
                .ok_or_else(|| corrupt(path, format!("unexpected array {name}")))?;
            let a = a
                .into_dimensionality::<ndarray::Ix3>()
                .map_err(|_| corrupt(path, format!("{name} must be 3-D")))?;
            adjacency.insert(conv.to_string(), a);
        }
        Ok(Self {
            header,
            query,
            key,
            bank,
            adjacency,
        })
    }

    /// Confirms the stored adjacency stacks agree with the registry's
    /// topology for every trained format.
    pub fn verify_adjacency(&self, registry: &ConventionRegistry) -> Result<()> {
        for f in &self.header.formats {
            let stored = self
                .adjacency
                .get(f)
                .ok_or_else(|| PretrainError::InvalidConfig(format!("checkpoint lacks adjacency for `{f}`")))?;
            let fresh = AdjacencySet::for_convention(registry.require(f)?, self.header.v_max)?;
            let dev = (&fresh.partitions - stored).iter().fold(0.0f64, |m, d| m.max(d.abs()));
            if dev > 1e-6 {
                return Err(PretrainError::InvalidConfig(format!(
                    "topology of `{f}` differs from the one used in training"
                )));
            }
        }
        Ok(())
    }
}

/// Short content digest of a checkpoint file, used as its id in reports.
pub fn checkpoint_id(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| PretrainError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    Ok(hex::encode(Sha256::digest(&bytes))[..16].to_string())
}
