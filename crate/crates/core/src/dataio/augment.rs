use ndarray::{s, Array4, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{interpolate_frames, DataError, Result};
use crate::conventions::{PoseSequence, SkeletonConvention};

/// Parameters of the skeleton augmentation pipeline (shear, temporal crop,
/// flip, Gaussian noise, temporal blur). Lengths are in meters, blur in frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationConfig {
    pub shear_amplitude: f64,
    pub crop_ratio_min: f64,
    pub crop_ratio_max: f64,
    pub flip_probability: f64,
    pub noise_sigma: f64,
    pub blur_sigma: f64,
    pub shear: bool,
    pub crop: bool,
    pub flip: bool,
    pub noise: bool,
    pub blur: bool,
    pub seed: u64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            shear_amplitude: 0.5,
            crop_ratio_min: 0.5,
            crop_ratio_max: 1.0,
            flip_probability: 0.5,
            noise_sigma: 0.05,
            blur_sigma: 1.0,
            shear: true,
            crop: true,
            flip: true,
            noise: true,
            blur: true,
            seed: 0,
        }
    }
}

impl AugmentationConfig {
    pub fn disabled() -> Self {
        Self {
            shear: false,
            crop: false,
            flip: false,
            noise: false,
            blur: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(DataError::InvalidConfig(msg.to_string()));
        let all = [
            self.shear_amplitude,
            self.crop_ratio_min,
            self.crop_ratio_max,
            self.flip_probability,
            self.noise_sigma,
            self.blur_sigma,
        ];
        if all.iter().any(|x| !x.is_finite()) {
            return bad("non-finite parameter");
        }
        if self.shear_amplitude < 0.0 {
            return bad("shear_amplitude must be >= 0");
        }
        if !(self.crop_ratio_min > 0.0 && self.crop_ratio_min <= self.crop_ratio_max && self.crop_ratio_max <= 1.0) {
            return bad("crop ratio range must satisfy 0 < min <= max <= 1");
        }
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return bad("flip_probability must lie in [0, 1]");
        }
        if self.noise_sigma < 0.0 {
            return bad("noise_sigma must be >= 0");
        }
        if self.blur_sigma < 0.0 {
            return bad("blur_sigma must be >= 0");
        }
        Ok(())
    }
}

/// Negates the lateral (first) coordinate and exchanges left/right joints.
pub fn flip(seq: &PoseSequence, convention: &SkeletonConvention) -> PoseSequence {
    let mut out = seq.clone();
    for (v, &src) in convention.swap_map.iter().enumerate() {
        out.data
            .slice_mut(s![.., v, .., ..])
            .assign(&seq.data.slice(s![.., src, .., ..]));
    }
    out.data.index_axis_mut(Axis(0), 0).mapv_inplace(|x| -x);
    out
}

fn active_persons(data: &Array4<f64>) -> Vec<bool> {
    (0..data.dim().3)
        .map(|p| data.index_axis(Axis(3), p).iter().any(|&x| x != 0.0))
        .collect()
}

fn gaussian_blur_frames(data: &Array4<f64>, sigma: f64) -> Array4<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    if radius == 0 {
        return data.clone();
    }
    let weights: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = weights.iter().sum();
    let (_, _, t, _) = data.dim();
    let mut out = Array4::zeros(data.dim());
    for ti in 0..t {
        let mut dst = out.index_axis_mut(Axis(2), ti);
        for (w, k) in weights.iter().zip(-radius..=radius) {
            // replicate edges
            let src = (ti as isize + k).clamp(0, t as isize - 1) as usize;
            dst.scaled_add(w / norm, &data.index_axis(Axis(2), src));
        }
    }
    out
}

/// Applies shear, temporal crop, flip, Gaussian noise and blur, in that order,
/// each gated by its enable flag. Padded joints stay exactly zero and the
/// valid mask is untouched. Noise is added only to persons with data.
pub fn augment<R: Rng + ?Sized>(
    seq: &PoseSequence,
    convention: &SkeletonConvention,
    config: &AugmentationConfig,
    rng: &mut R,
) -> Result<PoseSequence> {
    config.validate()?;
    if seq.convention != convention.name {
        return Err(DataError::ConventionMismatch {
            expected: convention.name.clone(),
            found: seq.convention.clone(),
        });
    }
    let mut out = seq.clone();
    let (c, v_max, t, _) = out.data.dim();
    let valid: Vec<usize> = (0..v_max).filter(|&v| seq.valid_mask[v]).collect();

    if config.shear {
        let a = config.shear_amplitude;
        let mut m = [[0.0f64; 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, x) in row.iter_mut().enumerate() {
                *x = if i == j { 1.0 } else if a > 0.0 { rng.random_range(-a..=a) } else { 0.0 };
            }
        }
        if c == 3 {
            let src = out.data.clone();
            for i in 0..3 {
                let mut dst = out.data.index_axis_mut(Axis(0), i);
                dst.fill(0.0);
                for (j, &w) in m[i].iter().enumerate() {
                    dst.scaled_add(w, &src.index_axis(Axis(0), j));
                }
            }
        }
    }

    if config.crop && t > 1 {
        let ratio = if config.crop_ratio_min < config.crop_ratio_max {
            rng.random_range(config.crop_ratio_min..=config.crop_ratio_max)
        } else {
            config.crop_ratio_min
        };
        let len = ((ratio * t as f64).round() as usize).clamp(1, t);
        let start = if len < t { rng.random_range(0..=t - len) } else { 0 };
        let window = out.data.slice(s![.., .., start..start + len, ..]).to_owned();
        out.data = interpolate_frames(&window, t)?;
    }

    if config.flip && rng.random_bool(config.flip_probability) {
        out = flip(&out, convention);
    }

    if config.noise && config.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, config.noise_sigma).expect("sigma validated");
        let persons = active_persons(&out.data);
        for ci in 0..c {
            for &v in &valid {
                for ti in 0..t {
                    for (p, _) in persons.iter().enumerate().filter(|(_, &a)| a) {
                        out.data[[ci, v, ti, p]] += normal.sample(rng);
                    }
                }
            }
        }
    }

    if config.blur && config.blur_sigma > 0.0 {
        out.data = gaussian_blur_frames(&out.data, config.blur_sigma);
    }

    // every step is linear in the padded slots or skips them; enforce anyway
    for v in 0..v_max {
        if !seq.valid_mask[v] {
            out.data.slice_mut(s![.., v, .., ..]).fill(0.0);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conventions::{pad_to_unified, ConventionRegistry};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn kinect_seq() -> (ConventionRegistry, PoseSequence) {
        let reg = ConventionRegistry::builtin();
        let raw = Array4::from_shape_fn((3, 25, 40, 2), |(c, v, t, p)| {
            if p == 1 {
                0.0
            } else {
                ((c * 13 + v * 5) as f64 * 0.1 + t as f64 * 0.05).sin()
            }
        });
        let seq = pad_to_unified(&raw, "kinectv2", &reg).unwrap();
        (reg, seq)
    }

    #[test]
    fn disabled_is_identity() {
        let (reg, seq) = kinect_seq();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = augment(&seq, reg.require("kinectv2").unwrap(), &AugmentationConfig::disabled(), &mut rng).unwrap();
        assert_eq!(out, seq);
    }

    #[test]
    fn double_flip_is_identity() {
        let (reg, seq) = kinect_seq();
        let conv = reg.require("kinectv2").unwrap();
        let cfg = AugmentationConfig {
            flip: true,
            flip_probability: 1.0,
            ..AugmentationConfig::disabled()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let once = augment(&seq, conv, &cfg, &mut rng).unwrap();
        assert_ne!(once, seq);
        let twice = augment(&once, conv, &cfg, &mut rng).unwrap();
        assert_eq!(twice, seq);
    }

    #[test]
    fn noise_statistics() {
        let (reg, seq) = kinect_seq();
        let cfg = AugmentationConfig {
            noise: true,
            noise_sigma: 0.05,
            ..AugmentationConfig::disabled()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let out = augment(&seq, reg.require("kinectv2").unwrap(), &cfg, &mut rng).unwrap();
        let diff = &out.data - &seq.data;
        let valid: Vec<f64> = diff.slice(s![.., ..25, .., 0]).iter().copied().collect();
        let n = valid.len() as f64;
        let mean = valid.iter().sum::<f64>() / n;
        let sd = (valid.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((sd - 0.05).abs() < 0.002, "sd = {sd}");
        assert!(diff.slice(s![.., 25.., .., ..]).iter().all(|&x| x == 0.0));
        // absent second person is left untouched
        assert!(out.data.slice(s![.., .., .., 1]).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn full_pipeline_keeps_padding_and_mask() {
        let (reg, seq) = kinect_seq();
        let conv = reg.require("kinectv2").unwrap();
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let out = augment(&seq, conv, &AugmentationConfig::default(), &mut rng).unwrap();
            assert_eq!(out.valid_mask, seq.valid_mask);
            assert!(out.check_invariants());
            assert_eq!(out.data.dim(), seq.data.dim());
        }
    }

    #[test]
    fn deterministic_given_rng_state() {
        let (reg, seq) = kinect_seq();
        let conv = reg.require("kinectv2").unwrap();
        let cfg = AugmentationConfig::default();
        let a = augment(&seq, conv, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = augment(&seq, conv, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_config_rejected() {
        let (reg, seq) = kinect_seq();
        let conv = reg.require("kinectv2").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for cfg in [
            AugmentationConfig { flip_probability: 1.5, ..Default::default() },
            AugmentationConfig { noise_sigma: -1.0, ..Default::default() },
            AugmentationConfig { crop_ratio_min: 0.0, ..Default::default() },
            AugmentationConfig { crop_ratio_min: 0.9, crop_ratio_max: 0.5, ..Default::default() },
            AugmentationConfig { shear_amplitude: f64::NAN, ..Default::default() },
        ] {
            assert!(matches!(augment(&seq, conv, &cfg, &mut rng), Err(DataError::InvalidConfig(_))));
        }
    }

    #[test]
    fn blur_preserves_constant_signal() {
        let x = Array4::from_elem((1, 2, 10, 1), 2.5);
        let y = gaussian_blur_frames(&x, 1.0);
        assert!(y.iter().all(|&v| (v - 2.5).abs() < 1e-12));
    }
}
