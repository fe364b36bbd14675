//! Dataset records, preprocessing, augmentation and the on-disk container.

mod augment;
mod center;
mod format;
mod interp;
mod streams;
mod synthetic;

use std::collections::BTreeMap;

use ndarray::Array4;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use augment::{augment, flip, AugmentationConfig};
pub use center::center_on_root;
pub use format::{check_dataset, read_dataset, read_sequence_file, write_dataset, write_sequence_file, Finding, Manifest, ManifestEntry, MAGIC};
pub use interp::interpolate_frames;
pub use streams::{apply_stream, derive_bone_stream, derive_motion_stream, Stream};
pub use synthetic::{generate_synthetic_dataset, SyntheticSpec};

use crate::conventions::ConventionError;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("empty sequence: at least one frame is required")]
    EmptySequence,
    #[error("convention mismatch: sequence is `{found}`, expected `{expected}`")]
    ConventionMismatch { expected: String, found: String },
    #[error("invalid augmentation config: {0}")]
    InvalidConfig(String),
    #[error("malformed header in {path}: {reason}")]
    MalformedHeader { path: String, reason: String },
    #[error("dimension mismatch in {path}: {reason}")]
    DimensionMismatch { path: String, reason: String },
    #[error("unknown convention `{name}` in {path}")]
    UnknownConvention { path: String, name: String },
    #[error("truncated file {path}: expected {expected} bytes, found {found}")]
    Truncated { path: String, expected: usize, found: usize },
    #[error("missing file {0}")]
    MissingFile(String),
    #[error("record `{record}` lacks format `{format}`")]
    MissingFormat { record: String, format: String },
    #[error("invalid record `{record}`: {reason}")]
    InvalidRecord { record: String, reason: String },
    #[error("malformed manifest {path}: {reason}")]
    Manifest { path: String, reason: String },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Convention(#[from] ConventionError),
}

pub type Result<T> = std::result::Result<T, DataError>;

/// One clip rendered in one or more skeleton conventions. Arrays are native
/// `C x V_s x T x P` at 32-bit precision, exactly as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceRecord {
    pub sample_id: String,
    pub formats: BTreeMap<String, Array4<f32>>,
    pub label: usize,
    pub split: String,
}

impl SequenceRecord {
    /// Checks that at least one format is present and all formats share the
    /// same channel, frame and person counts.
    pub fn validate(&self) -> Result<()> {
        let mut dims = self.formats.values().map(|a| {
            let (c, _, t, p) = a.dim();
            (c, t, p)
        });
        let first = dims.next().ok_or_else(|| DataError::InvalidRecord {
            record: self.sample_id.clone(),
            reason: "no formats".into(),
        })?;
        if dims.any(|d| d != first) {
            return Err(DataError::InvalidRecord {
                record: self.sample_id.clone(),
                reason: "formats disagree on channels, frames or persons".into(),
            });
        }
        Ok(())
    }

    pub fn format(&self, name: &str) -> Result<&Array4<f32>> {
        self.formats.get(name).ok_or_else(|| DataError::MissingFormat {
            record: self.sample_id.clone(),
            format: name.to_string(),
        })
    }

    pub fn format_f64(&self, name: &str) -> Result<Array4<f64>> {
        Ok(self.format(name)?.mapv(f64::from))
    }
}

/// Deterministic per-item generator derived from a run seed, a string key
/// (typically a sample id) and a stream discriminator.
pub fn derive_rng(seed: u64, key: &str, stream: u64) -> ChaCha8Rng {
    // FNV-1a over the key, then a splitmix-style finalizer.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in key.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = seed ^ h.rotate_left(17) ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^= z >> 31;
    ChaCha8Rng::seed_from_u64(z)
}
