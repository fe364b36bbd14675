//! On-disk dataset container.
//!
//! A dataset is a directory with a `manifest.json` listing every record and
//! one binary sequence file per (record, format). Sequence files are
//! little-endian:
//!
//! ```text
//! magic  "MSKL"            4 bytes
//! version u32 = 1
//! C, V, T, P u32 each
//! name_len u16, name UTF-8
//! C*V*T*P f32, row-major over (C, V, T, P)
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array4;
use serde::{Deserialize, Serialize};

use super::{DataError, Result, SequenceRecord};
use crate::conventions::ConventionRegistry;

pub const MAGIC: &[u8; 4] = b"MSKL";
pub const VERSION: u32 = 1;
pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub sample_id: String,
    pub label: usize,
    pub split: String,
    /// Convention name to path relative to the manifest directory.
    pub formats: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub records: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| io_or_missing(path, e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| DataError::Manifest {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        if manifest.version != VERSION {
            return Err(DataError::Manifest {
                path: path.display().to_string(),
                reason: format!("unsupported version {}", manifest.version),
            });
        }
        Ok(manifest)
    }
}

fn io_or_missing(path: &Path, e: std::io::Error) -> DataError {
    if e.kind() == std::io::ErrorKind::NotFound {
        DataError::MissingFile(path.display().to_string())
    } else {
        DataError::Io {
            path: path.display().to_string(),
            source: e,
        }
    }
}

pub fn encode_sequence(name: &str, data: &Array4<f32>) -> Vec<u8> {
    let (c, v, t, p) = data.dim();
    let mut buf = Vec::with_capacity(26 + name.len() + data.len() * 4);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    for d in [c, v, t, p] {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
    buf.extend_from_slice(name.as_bytes());
    for &x in data.iter() {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    buf
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a str,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(DataError::Truncated {
                path: self.path.to_string(),
                expected: self.pos + n,
                found: self.bytes.len(),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
}

/// Parses a sequence file body, returning the embedded convention name and
/// the native array.
pub fn decode_sequence(bytes: &[u8], path: &str) -> Result<(String, Array4<f32>)> {
    let malformed = |reason: &str| DataError::MalformedHeader {
        path: path.to_string(),
        reason: reason.to_string(),
    };
    let mut cur = Cursor { bytes, pos: 0, path };
    if cur.take(4)? != MAGIC {
        return Err(malformed("bad magic bytes"));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(malformed(&format!("unsupported version {version}")));
    }
    let dims = [cur.u32()?, cur.u32()?, cur.u32()?, cur.u32()?].map(|d| d as usize);
    let name_len = cur.u16()? as usize;
    let name = std::str::from_utf8(cur.take(name_len)?)
        .map_err(|_| malformed("convention name is not UTF-8"))?
        .to_string();
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| malformed("dimension product overflows"))?;
    let body = cur.take(count.checked_mul(4).ok_or_else(|| malformed("dimension product overflows"))?)?;
    if cur.pos != bytes.len() {
        return Err(DataError::DimensionMismatch {
            path: path.to_string(),
            reason: format!("{} trailing bytes after {count} floats", bytes.len() - cur.pos),
        });
    }
    let values: Vec<f32> = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let arr = Array4::from_shape_vec((dims[0], dims[1], dims[2], dims[3]), values)
        .expect("length checked against dims");
    Ok((name, arr))
}

pub fn write_sequence_file(path: &Path, name: &str, data: &Array4<f32>) -> Result<()> {
    fs::write(path, encode_sequence(name, data)).map_err(|e| DataError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

/// Reads one sequence file and checks its name and joint count against the
/// registry.
pub fn read_sequence_file(path: &Path, registry: &ConventionRegistry) -> Result<(String, Array4<f32>)> {
    let bytes = fs::read(path).map_err(|e| io_or_missing(path, e))?;
    let shown = path.display().to_string();
    let (name, arr) = decode_sequence(&bytes, &shown)?;
    let conv = registry.get(&name).ok_or_else(|| DataError::UnknownConvention {
        path: shown.clone(),
        name: name.clone(),
    })?;
    if arr.dim().1 != conv.joint_count {
        return Err(DataError::DimensionMismatch {
            path: shown,
            reason: format!("{} joints, `{}` has {}", arr.dim().1, name, conv.joint_count),
        });
    }
    Ok((name, arr))
}

/// Writes records into `dir` (created if needed) and returns the manifest path.
pub fn write_dataset(records: &[SequenceRecord], dir: &Path) -> Result<PathBuf> {
    let io = |p: &Path, e| DataError::Io {
        path: p.display().to_string(),
        source: e,
    };
    let data_dir = dir.join("data");
    fs::create_dir_all(&data_dir).map_err(|e| io(&data_dir, e))?;
    let mut entries = Vec::with_capacity(records.len());
    for rec in records {
        rec.validate()?;
        let mut formats = BTreeMap::new();
        for (name, arr) in &rec.formats {
            let rel = format!("data/{}.{}.mskl", rec.sample_id, name);
            write_sequence_file(&dir.join(&rel), name, arr)?;
            formats.insert(name.clone(), rel);
        }
        entries.push(ManifestEntry {
            sample_id: rec.sample_id.clone(),
            label: rec.label,
            split: rec.split.clone(),
            formats,
        });
    }
    let manifest = Manifest {
        version: VERSION,
        records: entries,
    };
    let path = dir.join(MANIFEST_NAME);
    let mut file = fs::File::create(&path).map_err(|e| io(&path, e))?;
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    file.write_all(text.as_bytes())
        .and_then(|_| file.write_all(b"\n"))
        .map_err(|e| io(&path, e))?;
    Ok(path)
}

/// Reads every record listed in the manifest. `path` may be the manifest
/// itself or its directory.
pub fn read_dataset(path: &Path, registry: &ConventionRegistry) -> Result<Vec<SequenceRecord>> {
    let manifest_path = if path.is_dir() { path.join(MANIFEST_NAME) } else { path.to_path_buf() };
    let root = manifest_path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let manifest = Manifest::load(&manifest_path)?;
    let mut records = Vec::with_capacity(manifest.records.len());
    for entry in manifest.records {
        let mut formats = BTreeMap::new();
        for (name, rel) in &entry.formats {
            let file = root.join(rel);
            let (stored, arr) = read_sequence_file(&file, registry)?;
            if &stored != name {
                return Err(DataError::MalformedHeader {
                    path: file.display().to_string(),
                    reason: format!("file holds `{stored}` but manifest lists `{name}`"),
                });
            }
            formats.insert(name.clone(), arr);
        }
        let rec = SequenceRecord {
            sample_id: entry.sample_id,
            formats,
            label: entry.label,
            split: entry.split,
        };
        rec.validate()?;
        records.push(rec);
    }
    Ok(records)
}

/// One consistency problem found by [`check_dataset`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub record: Option<String>,
    pub file: Option<String>,
    pub message: String,
}

impl std::fmt::Display for Finding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if let Some(r) = &self.record {
            write!(f, "record {r}: ")?;
        }
        if let Some(p) = &self.file {
            write!(f, "{p}: ")?;
        }
        f.write_str(&self.message)
    }
}

/// Reads every file of a dataset and reports all problems instead of
/// stopping at the first. Each record must hold every format in `required`.
/// Only an unreadable manifest is an error.
pub fn check_dataset(path: &Path, registry: &ConventionRegistry, required: &[String]) -> Result<Vec<Finding>> {
    let manifest_path = if path.is_dir() { path.join(MANIFEST_NAME) } else { path.to_path_buf() };
    let root = manifest_path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let manifest = Manifest::load(&manifest_path)?;
    let mut findings = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for entry in &manifest.records {
        let record = Some(entry.sample_id.clone());
        if !seen.insert(entry.sample_id.clone()) {
            findings.push(Finding {
                record: record.clone(),
                file: None,
                message: "duplicate sample id".into(),
            });
        }
        for f in required {
            if !entry.formats.contains_key(f) {
                findings.push(Finding {
                    record: record.clone(),
                    file: None,
                    message: format!("missing format `{f}`"),
                });
            }
        }
        let mut formats = BTreeMap::new();
        for (name, rel) in &entry.formats {
            let file = root.join(rel);
            match read_sequence_file(&file, registry) {
                Ok((stored, arr)) if &stored == name => {
                    formats.insert(name.clone(), arr);
                }
                Ok((stored, _)) => findings.push(Finding {
                    record: record.clone(),
                    file: Some(file.display().to_string()),
                    message: format!("file holds `{stored}` but manifest lists `{name}`"),
                }),
                Err(e) => findings.push(Finding {
                    record: record.clone(),
                    file: Some(file.display().to_string()),
                    message: e.to_string(),
                }),
            }
        }
        if formats.len() == entry.formats.len() {
            let rec = SequenceRecord {
                sample_id: entry.sample_id.clone(),
                formats,
                label: entry.label,
                split: entry.split.clone(),
            };
            if let Err(e) = rec.validate() {
                findings.push(Finding {
                    record: record.clone(),
                    file: None,
                    message: e.to_string(),
                });
            }
        }
    }
    Ok(findings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{generate_synthetic_dataset, SyntheticSpec};
    use proptest::prelude::*;

    #[test]
    fn dataset_round_trip() {
        let reg = ConventionRegistry::builtin();
        let recs = generate_synthetic_dataset(&SyntheticSpec::new(2, 3), &reg, 4);
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_dataset(&recs, dir.path()).unwrap();
        let back = read_dataset(&manifest, &reg).unwrap();
        assert_eq!(back, recs);
        let n_files = fs::read_dir(dir.path().join("data")).unwrap().count();
        assert_eq!(n_files, recs.len() * 4);
        assert_eq!(read_dataset(dir.path(), &reg).unwrap().len(), recs.len());
    }

    #[test]
    fn check_collects_every_problem() {
        let reg = ConventionRegistry::builtin();
        let recs = generate_synthetic_dataset(&SyntheticSpec::new(2, 2), &reg, 4);
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&recs, dir.path()).unwrap();
        let all: Vec<String> = reg.names().iter().map(|s| s.to_string()).collect();
        assert!(check_dataset(dir.path(), &reg, &all).unwrap().is_empty());
        let bad = dir.path().join(format!("data/{}.smpl.mskl", recs[1].sample_id));
        let mut bytes = fs::read(&bad).unwrap();
        bytes[0] = b'Z';
        fs::write(&bad, bytes).unwrap();
        fs::remove_file(dir.path().join(format!("data/{}.smplx.mskl", recs[2].sample_id))).unwrap();
        let found = check_dataset(dir.path(), &reg, &all).unwrap();
        assert_eq!(found.len(), 2);
        assert_eq!(found[0].record.as_deref(), Some(recs[1].sample_id.as_str()));
        assert!(found[0].file.as_ref().unwrap().ends_with(".smpl.mskl"));
    }

    #[test]
    fn missing_file_reported() {
        let reg = ConventionRegistry::builtin();
        let recs = generate_synthetic_dataset(&SyntheticSpec::new(2, 1), &reg, 4);
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_dataset(&recs, dir.path()).unwrap();
        fs::remove_file(dir.path().join(format!("data/{}.smpl.mskl", recs[0].sample_id))).unwrap();
        assert!(matches!(read_dataset(&manifest, &reg), Err(DataError::MissingFile(_))));
    }

    #[test]
    fn truncated_file_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("short.mskl");
        fs::write(&path, b"MSKL\x01\x00\x00\x00").unwrap();
        let err = read_sequence_file(&path, &ConventionRegistry::builtin()).unwrap_err();
        assert!(matches!(err, DataError::Truncated { .. }), "{err}");
    }

    #[test]
    fn header_errors() {
        let reg = ConventionRegistry::builtin();
        let arr = Array4::<f32>::zeros((3, 25, 2, 1));
        let mut bytes = encode_sequence("kinectv2", &arr);
        bytes[0] = b'X';
        assert!(matches!(decode_sequence(&bytes, "x"), Err(DataError::MalformedHeader { .. })));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.mskl");
        write_sequence_file(&path, "nosuch", &arr).unwrap();
        assert!(matches!(read_sequence_file(&path, &reg), Err(DataError::UnknownConvention { .. })));

        write_sequence_file(&path, "smpl", &arr).unwrap();
        assert!(matches!(read_sequence_file(&path, &reg), Err(DataError::DimensionMismatch { .. })));

        let mut long = encode_sequence("kinectv2", &arr);
        long.extend_from_slice(&[0, 0, 0, 0]);
        assert!(matches!(decode_sequence(&long, "x"), Err(DataError::DimensionMismatch { .. })));
    }

    #[test]
    fn header_layout_is_exact() {
        let arr = Array4::from_shape_vec((1, 2, 1, 1), vec![1.5f32, -2.0]).unwrap();
        let bytes = encode_sequence("ab", &arr);
        let mut expected = b"MSKL".to_vec();
        for x in [1u32, 1, 2, 1, 1] {
            expected.extend_from_slice(&x.to_le_bytes());
        }
        expected.extend_from_slice(&2u16.to_le_bytes());
        expected.extend_from_slice(b"ab");
        expected.extend_from_slice(&1.5f32.to_le_bytes());
        expected.extend_from_slice(&(-2.0f32).to_le_bytes());
        assert_eq!(bytes, expected);
    }

    proptest! {
        #[test]
        fn sequence_bytes_round_trip(vals in proptest::collection::vec(proptest::num::f32::ANY, 3 * 2 * 4)) {
            let arr = Array4::from_shape_vec((3, 2, 4, 1), vals).unwrap();
            let (name, back) = decode_sequence(&encode_sequence("pair", &arr), "mem").unwrap();
            prop_assert_eq!(name, "pair");
            let same = arr.iter().zip(back.iter()).all(|(a, b)| a.to_bits() == b.to_bits());
            prop_assert!(same);
        }
    }
}
