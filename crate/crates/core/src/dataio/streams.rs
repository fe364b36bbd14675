use std::fmt;
use std::str::FromStr;

use ndarray::{s, Axis};
use serde::{Deserialize, Serialize};

use super::{DataError, Result};
use crate::conventions::{PoseSequence, SkeletonConvention};

/// Input stream variant derived from joint coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stream {
    Joint,
    Motion,
    Bone,
}

impl Stream {
    pub const ALL: [Stream; 3] = [Stream::Joint, Stream::Motion, Stream::Bone];

    pub fn as_str(self) -> &'static str {
        match self {
            Stream::Joint => "joint",
            Stream::Motion => "motion",
            Stream::Bone => "bone",
        }
    }
}

impl fmt::Display for Stream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stream {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "joint" | "j" => Ok(Stream::Joint),
            "motion" | "m" => Ok(Stream::Motion),
            "bone" | "b" => Ok(Stream::Bone),
            other => Err(format!("unknown stream `{other}`")),
        }
    }
}

fn check_convention(seq: &PoseSequence, convention: &SkeletonConvention) -> Result<()> {
    if seq.convention != convention.name || seq.valid_count() != convention.joint_count {
        return Err(DataError::ConventionMismatch {
            expected: convention.name.clone(),
            found: seq.convention.clone(),
        });
    }
    Ok(())
}

/// Bone vectors along the spanning tree rooted at the center joint:
/// `bone[child] = joint[child] - joint[parent]`, zero at the root.
pub fn derive_bone_stream(seq: &PoseSequence, convention: &SkeletonConvention) -> Result<PoseSequence> {
    check_convention(seq, convention)?;
    let mut out = seq.clone();
    out.data.fill(0.0);
    for (child, parent) in convention.parents().into_iter().enumerate() {
        if let Some(parent) = parent {
            let diff = &seq.data.slice(s![.., child, .., ..]) - &seq.data.slice(s![.., parent, .., ..]);
            out.data.slice_mut(s![.., child, .., ..]).assign(&diff);
        }
    }
    Ok(out)
}

/// Forward frame differences, with the last frame set to zero.
pub fn derive_motion_stream(seq: &PoseSequence) -> PoseSequence {
    let mut out = seq.clone();
    let t = seq.frames();
    out.data.fill(0.0);
    if t > 1 {
        let next = seq.data.slice(s![.., .., 1.., ..]);
        let prev = seq.data.slice(s![.., .., ..t - 1, ..]);
        out.data.slice_mut(s![.., .., ..t - 1, ..]).assign(&(&next - &prev));
    }
    // padded joints are zero in both operands, so they stay zero
    debug_assert!(out.data.index_axis(Axis(2), t - 1).iter().all(|&x| x == 0.0));
    out
}

pub fn apply_stream(seq: &PoseSequence, stream: Stream, convention: &SkeletonConvention) -> Result<PoseSequence> {
    match stream {
        Stream::Joint => Ok(seq.clone()),
        Stream::Motion => Ok(derive_motion_stream(seq)),
        Stream::Bone => derive_bone_stream(seq, convention),
    }
}
