use rand::seq::SliceRandom;
use rand::Rng;

use super::{PretrainError, Result};
use crate::conventions::{pad_to_unified, ConventionRegistry, PoseSequence};
use crate::dataio::{apply_stream, augment, center_on_root, interpolate_frames, AugmentationConfig, SequenceRecord, Stream};

/// Ordered `(query, key)` format pairs. With two or more formats every
/// ordered pair of distinct formats; with one format the self pair.
pub fn format_pairs(formats: &[String]) -> Vec<(String, String)> {
    if formats.len() == 1 {
        return vec![(formats[0].clone(), formats[0].clone())];
    }
    let mut out = Vec::new();
    for a in formats {
        for b in formats {
            if a != b {
                out.push((a.clone(), b.clone()));
            }
        }
    }
    out
}

/// `ceil(records * pairs / batch)`
pub fn iterations_per_epoch(records: usize, pairs: usize, batch: usize) -> usize {
    (records * pairs).div_ceil(batch.max(1))
}

/// How a record becomes a network input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewSpec {
    pub frames: usize,
    pub stream: Stream,
    pub center: bool,
}

/// Builds one network input from a record: pad to the unified layout,
/// optionally center on the root joint, resample to `frames`, optionally
/// augment, then derive the stream.
pub fn prepare_view<R: Rng + ?Sized>(
    record: &SequenceRecord,
    format: &str,
    registry: &ConventionRegistry,
    spec: ViewSpec,
    augmentation: Option<&AugmentationConfig>,
    rng: &mut R,
) -> Result<PoseSequence> {
    let ViewSpec { frames, stream, center } = spec;
    let convention = registry.require(format)?;
    let raw = record.format_f64(format)?;
    let mut seq = pad_to_unified(&raw, format, registry)?;
    if center {
        seq = center_on_root(&seq, convention)?;
    }
    seq.data = interpolate_frames(&seq.data, frames)?;
    seq.label = Some(record.label);
    if let Some(cfg) = augmentation {
        seq = augment(&seq, convention, cfg, rng)?;
    }
    Ok(apply_stream(&seq, stream, convention)?)
}

/// Query view from format `a`, key view from format `b`, augmented
/// independently and transformed to the same stream.
pub fn make_positive_pair<R: Rng + ?Sized>(
    record: &SequenceRecord,
    formats: (&str, &str),
    registry: &ConventionRegistry,
    spec: ViewSpec,
    augmentation: &AugmentationConfig,
    rng: &mut R,
) -> Result<(PoseSequence, PoseSequence)> {
    for f in [formats.0, formats.1] {
        if !record.formats.contains_key(f) {
            return Err(PretrainError::MissingFormat {
                record: record.sample_id.clone(),
                format: f.to_string(),
            });
        }
    }
    let q = prepare_view(record, formats.0, registry, spec, Some(augmentation), rng)?;
    let k = prepare_view(record, formats.1, registry, spec, Some(augmentation), rng)?;
    Ok((q, k))
}

/// Endless per-pair record sampler: a fresh shuffle every pass.
#[derive(Debug, Clone)]
pub(crate) struct CyclicSampler {
    order: Vec<usize>,
    cursor: usize,
}

impl CyclicSampler {
    pub(crate) fn new(n: usize) -> Self {
        Self {
            order: (0..n).collect(),
            cursor: n,
        }
    }

    pub(crate) fn take<R: Rng + ?Sized>(&mut self, count: usize, rng: &mut R) -> Vec<usize> {
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            if self.cursor == self.order.len() {
                self.order.shuffle(rng);
                self.cursor = 0;
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{generate_synthetic_dataset, SyntheticSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn view(stream: Stream) -> ViewSpec {
        ViewSpec {
            frames: 50,
            stream,
            center: true,
        }
    }

    #[test]
    fn pair_counts() {
        let one = vec!["kinectv2".to_string()];
        let two = vec!["kinectv2".to_string(), "smplx".to_string()];
        let four: Vec<String> = ["smpl", "smplx", "berkeley_mhad", "kinectv2"].iter().map(|s| s.to_string()).collect();
        assert_eq!(format_pairs(&one).len(), 1);
        assert_eq!(format_pairs(&two).len(), 2);
        assert_eq!(format_pairs(&four).len(), 12);
        assert_eq!(iterations_per_epoch(60, 2, 16), 8);
        assert_eq!(iterations_per_epoch(61, 1, 16), 4);
        assert_eq!(iterations_per_epoch(60, 1, 16), 4);
    }

    #[test]
    fn cross_format_views_have_native_masks() {
        let reg = ConventionRegistry::builtin();
        let data = generate_synthetic_dataset(&SyntheticSpec::new(2, 2), &reg, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (q, k) = make_positive_pair(&data[0], ("kinectv2", "smplx"), &reg, view(Stream::Joint), &AugmentationConfig::default(), &mut rng).unwrap();
        assert_eq!(q.valid_count(), 25);
        assert_eq!(k.valid_count(), 42);
        assert_eq!(q.frames(), 50);
        assert!(q.check_invariants() && k.check_invariants());
    }

    #[test]
    fn same_format_without_augmentation_is_identical() {
        let reg = ConventionRegistry::builtin();
        let data = generate_synthetic_dataset(&SyntheticSpec::new(2, 1), &reg, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for stream in Stream::ALL {
            let (q, k) = make_positive_pair(&data[0], ("smpl", "smpl"), &reg, view(stream), &AugmentationConfig::disabled(), &mut rng).unwrap();
            assert_eq!(q, k);
        }
    }

    #[test]
    fn missing_format_reported() {
        let reg = ConventionRegistry::builtin();
        let mut data = generate_synthetic_dataset(&SyntheticSpec::new(2, 1), &reg, 2);
        data[0].formats.remove("smplx");
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = make_positive_pair(&data[0], ("kinectv2", "smplx"), &reg, view(Stream::Joint), &AugmentationConfig::default(), &mut rng);
        assert!(matches!(err, Err(PretrainError::MissingFormat { .. })));
    }

    #[test]
    fn sampler_covers_every_record_each_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = CyclicSampler::new(7);
        let mut first: Vec<usize> = s.take(7, &mut rng);
        first.sort();
        assert_eq!(first, (0..7).collect::<Vec<_>>());
        assert_eq!(s.take(10, &mut rng).len(), 10);
    }
}
