use ndarray::{s, Axis};

use super::{DataError, Result};
use crate::conventions::{PoseSequence, SkeletonConvention};

/// Translates every present person so that the first person's root joint
/// sits at the origin in the first frame. Padded joints and absent
/// (all-zero) persons stay zero.
pub fn center_on_root(seq: &PoseSequence, convention: &SkeletonConvention) -> Result<PoseSequence> {
    if seq.convention != convention.name {
        return Err(DataError::ConventionMismatch {
            expected: convention.name.clone(),
            found: seq.convention.clone(),
        });
    }
    if seq.frames() == 0 {
        return Err(DataError::EmptySequence);
    }
    let mut out = seq.clone();
    let (_, _, _, p) = seq.data.dim();
    let present: Vec<bool> = (0..p).map(|q| seq.data.index_axis(Axis(3), q).iter().any(|&x| x != 0.0)).collect();
    let Some(anchor) = present.iter().position(|&a| a) else {
        return Ok(out);
    };
    let origin = seq.data.slice(s![.., convention.center_joint, 0, anchor]).to_owned();
    let v = convention.joint_count;
    for q in (0..p).filter(|&q| present[q]) {
        for (c, &o) in origin.iter().enumerate() {
            out.data.slice_mut(s![c, ..v, .., q]).mapv_inplace(|x| x - o);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conventions::{pad_to_unified, ConventionRegistry};
    use ndarray::Array4;

    #[test]
    fn root_moves_to_origin_and_padding_stays_zero() {
        let reg = ConventionRegistry::builtin();
        let conv = reg.require("kinectv2").unwrap();
        let mut raw = Array4::<f64>::zeros((3, 25, 4, 2));
        raw.slice_mut(s![.., .., .., 0]).mapv_inplace(|_| 2.0);
        raw[[1, 3, 2, 0]] = 5.0;
        let seq = pad_to_unified(&raw, "kinectv2", &reg).unwrap();
        let c = center_on_root(&seq, conv).unwrap();
        assert!(c.data.slice(s![.., conv.center_joint, 0, 0]).iter().all(|&x| x == 0.0));
        assert_eq!(c.data[[1, 3, 2, 0]], 3.0);
        assert!(c.data.slice(s![.., .., .., 1]).iter().all(|&x| x == 0.0));
        assert!(c.check_invariants());
        // translation of the input does not change the result
        let shifted = pad_to_unified(&raw.mapv(|x| if x != 0.0 { x + 0.7 } else { x }), "kinectv2", &reg).unwrap();
        assert_eq!(center_on_root(&shifted, conv).unwrap().data.mapv(|x| (x * 1e9).round()), c.data.mapv(|x| (x * 1e9).round()));
    }
}
