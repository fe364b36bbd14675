use ndarray::{s, Array1, Axis};

use msclr::conventions::{pad_to_unified, ConventionRegistry};
use msclr::dataio::{center_on_root, generate_synthetic_dataset, interpolate_frames, SequenceRecord, SyntheticSpec};

/// Per-joint temporal mean and spread of the first person after root
/// centering; insensitive to the phase of each clip.
fn descriptor(record: &SequenceRecord, format: &str, registry: &ConventionRegistry) -> Array1<f64> {
    let raw = record.format_f64(format).unwrap();
    let conv = registry.require(format).unwrap();
    let seq = center_on_root(&pad_to_unified(&raw, format, registry).unwrap(), conv).unwrap();
    let x = interpolate_frames(&seq.data, 50).unwrap();
    let person = x.slice(s![.., ..conv.joint_count, .., 0]);
    let mean = person.mean_axis(Axis(2)).unwrap();
    let spread = person.std_axis(Axis(2), 0.0);
    mean.iter().chain(spread.iter()).copied().collect()
}

fn nearest_centroid_accuracy(format: &str) -> f64 {
    let registry = ConventionRegistry::builtin();
    let data = generate_synthetic_dataset(&SyntheticSpec::new(3, 30), &registry, 7);
    let (train, test): (Vec<_>, Vec<_>) = data.iter().partition(|r| r.split == "train");
    let centroids: Vec<Array1<f64>> = (0..3)
        .map(|c| {
            let members: Vec<_> = train.iter().filter(|r| r.label == c).map(|r| descriptor(r, format, &registry)).collect();
            members.iter().fold(Array1::zeros(members[0].len()), |acc, d| acc + d) / members.len() as f64
        })
        .collect();
    let correct = test
        .iter()
        .filter(|r| {
            let d = descriptor(r, format, &registry);
            let dist = |c: &Array1<f64>| (&d - c).mapv(|v| v * v).sum();
            let best = (0..3).min_by(|&a, &b| dist(&centroids[a]).total_cmp(&dist(&centroids[b]))).unwrap();
            best == r.label
        })
        .count();
    correct as f64 / test.len() as f64
}

#[test]
fn records_carry_every_builtin_format_with_shared_timing() {
    let registry = ConventionRegistry::builtin();
    let data = generate_synthetic_dataset(&SyntheticSpec::new(3, 6), &registry, 1);
    assert_eq!(data.len(), 18);
    for r in &data {
        r.validate().unwrap();
        assert_eq!(r.formats.len(), registry.len());
        let frames: Vec<_> = r.formats.values().map(|a| a.dim().2).collect();
        assert!(frames.windows(2).all(|w| w[0] == w[1]), "{}", r.sample_id);
        for (name, arr) in &r.formats {
            assert_eq!(arr.dim().1, registry.require(name).unwrap().joint_count);
        }
    }
}

#[test]
fn classes_are_separable_from_raw_poses() {
    for format in ["kinectv2", "smplx"] {
        let acc = nearest_centroid_accuracy(format);
        assert!(acc >= 0.9, "{format}: nearest-centroid accuracy {acc}");
    }
}
