use ndarray::{Array4, Axis};

use super::{DataError, Result};

/// Linear resampling along the frame axis (axis 2 of `C x V x T x P`) onto
/// `t_out` uniformly spaced points spanning `[0, T_in - 1]`.
pub fn interpolate_frames(seq: &Array4<f64>, t_out: usize) -> Result<Array4<f64>> {
    let (c, v, t_in, p) = seq.dim();
    if t_in == 0 || t_out == 0 {
        return Err(DataError::EmptySequence);
    }
    if t_in == t_out {
        return Ok(seq.clone());
    }
    let mut out = Array4::zeros((c, v, t_out, p));
    for k in 0..t_out {
        let pos = if t_out == 1 || t_in == 1 {
            0.0
        } else {
            k as f64 * (t_in - 1) as f64 / (t_out - 1) as f64
        };
        let lo = (pos.floor() as usize).min(t_in - 1);
        let frac = pos - lo as f64;
        let a = seq.index_axis(Axis(2), lo);
        let mut dst = out.index_axis_mut(Axis(2), k);
        if frac == 0.0 || lo + 1 >= t_in {
            dst.assign(&a);
        } else {
            let b = seq.index_axis(Axis(2), lo + 1);
            ndarray::Zip::from(&mut dst).and(&a).and(&b).for_each(|d, &x0, &x1| {
                let y = x0 + frac * (x1 - x0);
                *d = y.clamp(x0.min(x1), x0.max(x1));
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_when_aligned() {
        let x = Array4::from_shape_fn((3, 4, 50, 2), |(c, v, t, p)| ((c * 7 + v * 3 + t + p) as f64).sin());
        assert_eq!(interpolate_frames(&x, 50).unwrap(), x);
    }

    #[test]
    fn two_frame_midpoint() {
        let x = Array4::from_shape_vec((1, 1, 2, 1), vec![0.0, 1.0]).unwrap();
        let y = interpolate_frames(&x, 3).unwrap();
        assert_eq!(y.iter().copied().collect::<Vec<_>>(), vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn ramp_closed_form() {
        let x = Array4::from_shape_fn((1, 1, 7, 1), |(_, _, t, _)| t as f64);
        let y = interpolate_frames(&x, 50).unwrap();
        for k in 0..50 {
            let expected = 6.0 * k as f64 / 49.0;
            assert!((y[[0, 0, k, 0]] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn single_frame_broadcasts() {
        let x = Array4::from_shape_vec((1, 2, 1, 1), vec![3.0, -1.0]).unwrap();
        let y = interpolate_frames(&x, 5).unwrap();
        for k in 0..5 {
            assert_eq!(y[[0, 0, k, 0]], 3.0);
            assert_eq!(y[[0, 1, k, 0]], -1.0);
        }
    }

    #[test]
    fn empty_is_error() {
        let x = Array4::<f64>::zeros((3, 2, 0, 1));
        assert!(matches!(interpolate_frames(&x, 50), Err(DataError::EmptySequence)));
    }

    proptest! {
        #[test]
        fn stays_within_per_joint_range(
            vals in proptest::collection::vec(-10.0f64..10.0, 2..30),
            t_out in 1usize..80,
        ) {
            let t = vals.len();
            let x = Array4::from_shape_vec((1, 1, t, 1), vals.clone()).unwrap();
            let y = interpolate_frames(&x, t_out).unwrap();
            let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(y.iter().all(|&v| v >= lo && v <= hi));
        }

        #[test]
        fn constant_sequences_preserved(value in -5.0f64..5.0, t in 1usize..20, t_out in 1usize..60) {
            let x = Array4::from_elem((2, 3, t, 1), value);
            let y = interpolate_frames(&x, t_out).unwrap();
            prop_assert!(y.iter().all(|&v| v == value));
        }
    }
}
