use ndarray::{concatenate, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EvalError, Result};
use crate::conventions::ConventionRegistry;
use crate::dataio::{SequenceRecord, Stream};
use crate::graph::AdjacencySet;
use crate::network::{cross_entropy, Encoder, Linear, Mode};
use crate::pretrain::{prepare_view, Checkpoint, LrSchedule, ViewSpec};

const FEATURE_CHUNK: usize = 32;

/// Optimizer settings for the linear probe. The default is the full
/// protocol: 100 epochs, batch 128, lr 3.0 decayed by 0.1 at epoch 80.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearSchedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: LrSchedule,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for LinearSchedule {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 128,
            lr: LrSchedule {
                base: 3.0,
                milestones: vec![80],
                decay: 0.1,
            },
            momentum: 0.9,
            weight_decay: 0.0,
            seed: 0,
        }
    }
}

impl LinearSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(EvalError::InvalidConfig("linear epochs and batch_size must be positive".into()));
        }
        if !(self.lr.base > 0.0 && self.lr.base.is_finite()) || self.momentum < 0.0 || self.weight_decay < 0.0 {
            return Err(EvalError::InvalidConfig("linear lr must be positive; momentum and weight decay non-negative".into()));
        }
        Ok(())
    }
}

/// Pretrained query encoder held read-only for evaluation.
#[derive(Debug, Clone)]
pub struct FrozenEncoder {
    encoder: Encoder,
    pub stream: Stream,
    pub view: ViewSpec,
    pub formats: Vec<String>,
    pub checkpoint_id: String,
}

impl FrozenEncoder {
    pub fn from_checkpoint(checkpoint: &Checkpoint, checkpoint_id: impl Into<String>) -> Self {
        Self {
            encoder: checkpoint.query.clone(),
            stream: checkpoint.header.config.stream,
            view: checkpoint.header.config.view(),
            formats: checkpoint.header.formats.clone(),
            checkpoint_id: checkpoint_id.into(),
        }
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn require_format(&self, format: &str) -> Result<()> {
        if self.formats.iter().any(|f| f == format) {
            Ok(())
        } else {
            Err(EvalError::UnknownFormat {
                format: format.to_string(),
                available: self.formats.clone(),
            })
        }
    }

    /// Eval-mode embeddings of `records` rendered in `format`, one row per record.
    pub fn features(&self, records: &[SequenceRecord], format: &str, registry: &ConventionRegistry) -> Result<Array2<f64>> {
        self.require_format(format)?;
        let adjacency = AdjacencySet::for_convention(registry.require(format)?, registry.v_max())?;
        // views are not augmented, so this generator is never drawn from
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut parts = Vec::new();
        for chunk in records.chunks(FEATURE_CHUNK) {
            let views = chunk
                .iter()
                .map(|r| prepare_view(r, format, registry, self.view, None, &mut rng))
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| match e {
                    crate::pretrain::PretrainError::Data(d) => EvalError::Data(d),
                    crate::pretrain::PretrainError::Convention(c) => EvalError::Convention(c),
                    other => EvalError::InvalidConfig(other.to_string()),
                })?;
            parts.push(self.encoder.encode(&views, &adjacency, Mode::Eval)?.embedding);
        }
        let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
        concatenate(Axis(0), &views).map_err(|e| EvalError::Shape(e.to_string()))
    }
}

/// Affine classifier trained on one `(stream, format)` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    pub stream: Stream,
    pub format: String,
    pub classes: usize,
    pub head: Linear,
    pub final_loss: f64,
}

/// Trains a linear head on frozen embeddings with minibatch SGD. The
/// encoder is only read.
pub fn train_linear(
    frozen: &FrozenEncoder,
    records: &[SequenceRecord],
    format: &str,
    registry: &ConventionRegistry,
    schedule: &LinearSchedule,
) -> Result<LinearHead> {
    schedule.validate()?;
    frozen.require_format(format)?;
    if records.is_empty() {
        return Err(EvalError::EmptySplit("train".into()));
    }
    let features = frozen.features(records, format, registry)?;
    let labels: Vec<usize> = records.iter().map(|r| r.label).collect();
    let classes = labels.iter().max().map_or(0, |&m| m + 1).max(2);
    let (head, final_loss) = fit_head(&features, &labels, classes, schedule)?;
    Ok(LinearHead {
        stream: frozen.stream,
        format: format.to_string(),
        classes,
        head,
        final_loss,
    })
}

/// Fits on features standardized with the training mean and deviation, then
/// folds the standardization into the returned head so it applies to raw
/// embeddings.
pub(crate) fn fit_head(raw: &Array2<f64>, labels: &[usize], classes: usize, schedule: &LinearSchedule) -> Result<(Linear, f64)> {
    let n = raw.nrows();
    let mean = raw.mean_axis(Axis(0)).ok_or_else(|| EvalError::EmptySplit("train".into()))?;
    let scale = raw.std_axis(Axis(0), 0.0).mapv(|s| if s > 1e-8 { 1.0 / s } else { 1.0 });
    let features = &(raw - &mean) * &scale;
    let mut head = Linear::zeros(features.ncols(), classes);
    let mut velocity = Linear::zeros(features.ncols(), classes);
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut last = f64::NAN;
    for epoch in 0..schedule.epochs {
        let lr = schedule.lr.lr_at(epoch);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for idx in order.chunks(schedule.batch_size) {
            let x = features.select(Axis(0), idx);
            let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let g = cross_entropy(&x, &y, &head)?;
            total += g.loss * idx.len() as f64;
            let (mu, wd) = (schedule.momentum, schedule.weight_decay);
            velocity.weight.zip_mut_with(&g.grads.weight, |v, &d| *v = mu * *v + d);
            velocity.weight.scaled_add(wd, &head.weight);
            velocity.bias.zip_mut_with(&g.grads.bias, |v, &d| *v = mu * *v + d);
            head.weight.scaled_add(-lr, &velocity.weight);
            head.bias.scaled_add(-lr, &velocity.bias);
        }
        last = total / n as f64;
    }
    if !last.is_finite() {
        return Err(EvalError::InvalidConfig(format!("linear probe diverged (loss {last})")));
    }
    // W (x - mu) / s + b  ==  (W / s) x + (b - (W / s) mu)
    let weight = &head.weight * &scale;
    let bias = &head.bias - &weight.dot(&mean);
    Ok((Linear { weight, bias }, last))
}
