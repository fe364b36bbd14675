use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use super::{EvalError, Result};
use crate::dataio::Stream;

/// Late-fusion weights for joint, motion and bone scores.
pub const FUSION_WEIGHTS: [f64; 3] = [0.6, 0.6, 0.4];

/// Row sums of softmax scores must be within this of 1.
pub const STOCHASTIC_TOLERANCE: f64 = 1e-6;

pub fn fusion_weight(weights: &[f64; 3], stream: Stream) -> f64 {
    match stream {
        Stream::Joint => weights[0],
        Stream::Motion => weights[1],
        Stream::Bone => weights[2],
    }
}

/// Order in which the format ensemble and the stream fusion are composed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleOrder {
    #[default]
    FormatsThenStreams,
    StreamsThenFormats,
}

fn check_same_shape(sets: &[&Array2<f64>]) -> Result<()> {
    let first = sets.first().ok_or_else(|| EvalError::Shape("no score sets".into()))?;
    for s in sets {
        if s.dim() != first.dim() {
            return Err(EvalError::Shape(format!("score sets {:?} and {:?}", first.dim(), s.dim())));
        }
    }
    Ok(())
}

/// Weighted sum `sum_i w_i * scores_i`.
pub fn fuse_streams(scores: &[&Array2<f64>], weights: &[f64]) -> Result<Array2<f64>> {
    check_same_shape(scores)?;
    if weights.len() != scores.len() {
        return Err(EvalError::Shape(format!("{} weights for {} streams", weights.len(), scores.len())));
    }
    let mut out = Array2::zeros(scores[0].dim());
    for (s, &w) in scores.iter().zip(weights) {
        out.scaled_add(w, *s);
    }
    Ok(out)
}

/// Mean of per-format softmax scores. Rows that are not probability
/// vectors are rejected.
pub fn ensemble_formats(scores: &[&Array2<f64>]) -> Result<Array2<f64>> {
    check_same_shape(scores)?;
    for s in scores {
        for (row, r) in s.axis_iter(Axis(0)).enumerate() {
            let sum = r.sum();
            if (sum - 1.0).abs() > STOCHASTIC_TOLERANCE || r.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return Err(EvalError::NonStochastic { row, sum });
            }
        }
    }
    if scores.len() == 1 {
        return Ok(scores[0].clone());
    }
    let mut out = Array2::zeros(scores[0].dim());
    for s in scores {
        out += *s;
    }
    out /= scores.len() as f64;
    Ok(out)
}

/// Index of the largest score; ties go to the lowest index.
pub(crate) fn argmax(row: ndarray::ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
