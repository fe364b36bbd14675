//! Skeleton graph construction: binary adjacency, hop distances, the
//! root/centripetal/centrifugal partition and the padded, row-normalized
//! adjacency stack consumed by the encoder.

use std::collections::{BTreeSet, VecDeque};

use ndarray::{s, Array2, Array3};
use thiserror::Error;

use crate::conventions::SkeletonConvention;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("graph is disconnected: joint {joint} cannot reach center {center}")]
    Disconnected { joint: usize, center: usize },
    #[error("joint index {index} out of range for {joints} joints")]
    IndexOutOfRange { index: usize, joints: usize },
    #[error("frame {frame} out of range for {frames} frames")]
    FrameOutOfRange { frame: usize, frames: usize },
    #[error("temporal kernel must be odd and >= 1, got {0}")]
    BadTemporalKernel(usize),
    #[error("adjacency must be square, got {0}x{1}")]
    NotSquare(usize, usize),
    #[error("partition size {size} exceeds padded size {v_max}")]
    TooLarge { size: usize, v_max: usize },
}

/// Unreachable marker in hop matrices.
pub const UNREACHABLE: i64 = -1;

/// Number of spatial partitions (root, centripetal, centrifugal).
pub const NUM_PARTITIONS: usize = 3;

pub const ROOT: usize = 0;
pub const CENTRIPETAL: usize = 1;
pub const CENTRIFUGAL: usize = 2;

/// Symmetric 0/1 matrix with a zero diagonal.
pub fn build_adjacency(convention: &SkeletonConvention) -> Array2<u8> {
    let v = convention.joint_count;
    let mut a = Array2::zeros((v, v));
    for &[i, j] in &convention.edges {
        a[[i, j]] = 1;
        a[[j, i]] = 1;
    }
    a
}

/// All-pairs shortest hop counts by breadth-first search from every vertex.
pub fn hop_distance(adjacency: &Array2<u8>) -> Array2<i64> {
    let v = adjacency.nrows();
    let mut hops = Array2::from_elem((v, v), UNREACHABLE);
    for src in 0..v {
        hops[[src, src]] = 0;
        let mut queue = VecDeque::from([src]);
        while let Some(u) = queue.pop_front() {
            let du = hops[[src, u]];
            for w in 0..v {
                if adjacency[[u, w]] != 0 && hops[[src, w]] == UNREACHABLE {
                    hops[[src, w]] = du + 1;
                    queue.push_back(w);
                }
            }
        }
    }
    hops
}

/// Spatio-temporal neighbor set of joint `joint` at frame `frame`: every
/// `(q, j)` with hop distance `d(j, joint) <= k` and `|q - frame| <= gamma/2`,
/// clipped to `[0, frames)`.
pub fn neighbor_set(
    hops: &Array2<i64>,
    joint: usize,
    frame: usize,
    k: usize,
    gamma: usize,
    frames: usize,
) -> Result<BTreeSet<(usize, usize)>, GraphError> {
    let v = hops.nrows();
    if joint >= v {
        return Err(GraphError::IndexOutOfRange { index: joint, joints: v });
    }
    if frame >= frames {
        return Err(GraphError::FrameOutOfRange { frame, frames });
    }
    if gamma == 0 || gamma.is_multiple_of(2) {
        return Err(GraphError::BadTemporalKernel(gamma));
    }
    let half = gamma / 2;
    let lo = frame.saturating_sub(half);
    let hi = (frame + half).min(frames - 1);
    let mut out = BTreeSet::new();
    for q in lo..=hi {
        for j in 0..v {
            let d = hops[[j, joint]];
            if d != UNREACHABLE && d as usize <= k {
                out.insert((q, j));
            }
        }
    }
    Ok(out)
}

/// Splits the one-hop neighborhood (including self) of every joint into the
/// root, centripetal and centrifugal subsets, by hop distance to `center`.
pub fn partition_spatial(
    adjacency: &Array2<u8>,
    hops: &Array2<i64>,
    center: usize,
) -> Result<[Array2<u8>; NUM_PARTITIONS], GraphError> {
    let (rows, cols) = adjacency.dim();
    if rows != cols {
        return Err(GraphError::NotSquare(rows, cols));
    }
    let v = rows;
    if center >= v {
        return Err(GraphError::IndexOutOfRange { index: center, joints: v });
    }
    for j in 0..v {
        if hops[[j, center]] == UNREACHABLE {
            return Err(GraphError::Disconnected { joint: j, center });
        }
    }
    let mut parts = [
        Array2::zeros((v, v)),
        Array2::zeros((v, v)),
        Array2::zeros((v, v)),
    ];
    for i in 0..v {
        for j in 0..v {
            if i != j && adjacency[[i, j]] == 0 {
                continue;
            }
            let subset = if i == j {
                ROOT
            } else if hops[[j, center]] < hops[[i, center]] {
                CENTRIPETAL
            } else {
                CENTRIFUGAL
            };
            parts[subset][[i, j]] = 1;
        }
    }
    Ok(parts)
}

/// Row-normalizes each partition (empty rows stay zero) and embeds it in the
/// top-left block of a `v_max x v_max` zero matrix.
pub fn normalize_and_pad(
    partitions: &[Array2<u8>; NUM_PARTITIONS],
    v_max: usize,
) -> Result<Array3<f64>, GraphError> {
    let v = partitions[0].nrows();
    if v > v_max {
        return Err(GraphError::TooLarge { size: v, v_max });
    }
    let mut out = Array3::zeros((NUM_PARTITIONS, v_max, v_max));
    for (p, part) in partitions.iter().enumerate() {
        for i in 0..v {
            let row_sum: u32 = part.row(i).iter().map(|&x| x as u32).sum();
            if row_sum == 0 {
                continue;
            }
            for j in 0..v {
                if part[[i, j]] != 0 {
                    out[[p, i, j]] = 1.0 / row_sum as f64;
                }
            }
        }
    }
    Ok(out)
}

/// Per-convention padded adjacency stack.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencySet {
    pub convention: String,
    /// `3 x v_max x v_max`, zero outside the top-left `v_s x v_s` block.
    pub partitions: Array3<f64>,
    /// `v_s x v_s` hop distances, `-1` when unreachable.
    pub hop_matrix: Array2<i64>,
}

impl AdjacencySet {
    pub fn for_convention(convention: &SkeletonConvention, v_max: usize) -> Result<Self, GraphError> {
        let adjacency = build_adjacency(convention);
        let hops = hop_distance(&adjacency);
        let parts = partition_spatial(&adjacency, &hops, convention.center_joint)?;
        let partitions = normalize_and_pad(&parts, v_max)?;
        Ok(Self {
            convention: convention.name.clone(),
            partitions,
            hop_matrix: hops,
        })
    }

    pub fn v_max(&self) -> usize {
        self.partitions.dim().1
    }

    pub fn joint_count(&self) -> usize {
        self.hop_matrix.nrows()
    }

    /// Binary support (`entry > 0`) of partition `p` over the native block.
    pub fn binarized(&self, p: usize) -> Array2<u8> {
        let v = self.joint_count();
        self.partitions
            .slice(s![p, ..v, ..v])
            .mapv(|x| u8::from(x > 0.0))
    }
}
