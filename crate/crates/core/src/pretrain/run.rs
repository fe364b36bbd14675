use std::collections::BTreeMap;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::bank::MemoryBank;
use super::checkpoint::{Checkpoint, CheckpointHeader, RngState, CHECKPOINT_VERSION};
use super::loss::info_nce_batch;
use super::optim::{momentum_update, Sgd};
use super::pairs::{format_pairs, iterations_per_epoch, make_positive_pair, CyclicSampler};
use super::{PretrainConfig, PretrainError, Result};
use crate::conventions::{ConventionRegistry, PoseSequence};
use crate::dataio::{derive_rng, SequenceRecord};
use crate::graph::AdjacencySet;
use crate::network::{Batch, Encoder, Mode};

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub epoch: usize,
    pub step: usize,
    pub query_format: String,
    pub key_format: String,
    pub loss: f64,
    pub lr: f64,
    pub pos_sim: f64,
    pub top_neg_sim: f64,
}

/// Query encoder, EMA key encoder and the shared negative bank.
#[derive(Debug, Clone)]
pub struct MoCoState {
    pub query: Encoder,
    pub key: Encoder,
    pub bank: MemoryBank,
    pub temperature: f64,
    pub ema_momentum: f64,
    pub step: usize,
}

pub struct StepStats {
    pub loss: f64,
    pub pos_sim: f64,
    pub top_neg_sim: f64,
}

impl MoCoState {
    /// The key encoder starts as an exact copy of the query encoder.
    pub fn new(config: &PretrainConfig, in_channels: usize, v_max: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let query = Encoder::new(config.network.clone(), in_channels, v_max, rng)?;
        let mut bank = MemoryBank::new(config.bank_size, config.network.projection_dim)?;
        bank.strict = config.strict_bank;
        Ok(Self {
            key: query.clone(),
            query,
            bank,
            temperature: config.temperature,
            ema_momentum: config.ema_momentum,
            step: 0,
        })
    }

    pub fn momentum_update(&mut self) -> Result<()> {
        momentum_update(&mut self.key.params, &self.query.params, self.ema_momentum)
    }

    /// Loss and gradient step on the query encoder only. Returns the keys
    /// (not yet enqueued) together with the step statistics.
    pub fn query_update(
        &mut self,
        optimizer: &mut Sgd,
        queries: &[PoseSequence],
        keys: &[PoseSequence],
        adjacency: (&AdjacencySet, &AdjacencySet),
        lr: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Array2<f64>, StepStats)> {
        let qb = Batch::from_sequences(queries)?;
        let kb = Batch::from_sequences(keys)?;
        let (qout, qcache) = self.query.forward(&qb, adjacency.0, Mode::Train, Some(rng))?;
        let (kout, kcache) = self.key.forward(&kb, adjacency.1, Mode::Train, None)?;
        self.key.update_running_stats(&kcache);
        let loss = info_nce_batch(&qout.projection, &kout.projection, self.bank.keys(), self.temperature)?;
        if !loss.loss.is_finite() {
            return Err(PretrainError::NonFiniteLoss {
                step: self.step,
                loss: loss.loss,
            });
        }
        let grads = self.query.backward(&qcache, &loss.dq, None);
        optimizer.step(&mut self.query.params, &grads, lr)?;
        self.query.update_running_stats(&qcache);
        if !self.query.params.all_finite() {
            return Err(PretrainError::NonFiniteLoss {
                step: self.step,
                loss: f64::NAN,
            });
        }
        let stats = StepStats {
            loss: loss.loss,
            pos_sim: loss.mean_positive,
            top_neg_sim: loss.mean_top_negative,
        };
        Ok((kout.projection, stats))
    }

    /// Full iteration: query update, EMA of the key encoder, enqueue keys.
    pub fn train_step(
        &mut self,
        optimizer: &mut Sgd,
        queries: &[PoseSequence],
        keys: &[PoseSequence],
        adjacency: (&AdjacencySet, &AdjacencySet),
        lr: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<StepStats> {
        let (k, stats) = self.query_update(optimizer, queries, keys, adjacency, lr, rng)?;
        self.momentum_update()?;
        self.bank.enqueue(&k)?;
        self.step += 1;
        Ok(stats)
    }
}

/// Contrastive pretraining over every ordered format pair. Each iteration
/// draws a batch homogeneous in its `(query, key)` pair; pairs rotate
/// round-robin and each pair samples records from its own reshuffled pass.
pub fn pretrain_run(
    dataset: &[SequenceRecord],
    registry: &ConventionRegistry,
    formats: &[String],
    config: &PretrainConfig,
    on_step: &mut dyn FnMut(&LogEntry),
) -> Result<Checkpoint> {
    config.validate()?;
    if formats.is_empty() {
        return Err(PretrainError::InvalidConfig("no formats requested".into()));
    }
    let first = dataset.first().ok_or(PretrainError::EmptyDataset)?;
    for rec in dataset {
        for f in formats {
            if !rec.formats.contains_key(f) {
                return Err(PretrainError::MissingFormat {
                    record: rec.sample_id.clone(),
                    format: f.clone(),
                });
            }
        }
    }
    let in_channels = first.format(&formats[0])?.dim().0;
    let v_max = registry.v_max();
    let mut adjacency = BTreeMap::new();
    for f in formats {
        adjacency.insert(f.clone(), AdjacencySet::for_convention(registry.require(f)?, v_max)?);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut aug_rng = derive_rng(config.seed, "augment", config.augmentation.seed);
    let mut state = MoCoState::new(config, in_channels, v_max, &mut rng)?;
    let mut optimizer = Sgd::new(config.sgd_momentum, config.weight_decay);

    let pairs = format_pairs(formats);
    let batch = config.batch_size.min(dataset.len());
    let iters = iterations_per_epoch(dataset.len(), pairs.len(), batch);
    let mut samplers = vec![CyclicSampler::new(dataset.len()); pairs.len()];
    let mut loss_history = Vec::with_capacity(config.epochs * iters);
    log::info!(
        "pretraining {} records, {} format pair(s), {iters} iterations/epoch, {} epochs",
        dataset.len(),
        pairs.len(),
        config.epochs
    );

    for epoch in 0..config.epochs {
        let lr = config.lr.lr_at(epoch);
        for it in 0..iters {
            let p = it % pairs.len();
            let (fa, fb) = (&pairs[p].0, &pairs[p].1);
            let picks = samplers[p].take(batch, &mut rng);
            let mut queries = Vec::with_capacity(batch);
            let mut keys = Vec::with_capacity(batch);
            for &i in &picks {
                let (q, k) = make_positive_pair(
                    &dataset[i],
                    (fa, fb),
                    registry,
                    config.view(),
                    &config.augmentation,
                    &mut aug_rng,
                )?;
                queries.push(q);
                keys.push(k);
            }
            let stats = state.train_step(&mut optimizer, &queries, &keys, (&adjacency[fa], &adjacency[fb]), lr, &mut rng)?;
            loss_history.push(stats.loss);
            on_step(&LogEntry {
                epoch,
                step: state.step,
                query_format: fa.clone(),
                key_format: fb.clone(),
                loss: stats.loss,
                lr,
                pos_sim: stats.pos_sim,
                top_neg_sim: stats.top_neg_sim,
            });
        }
    }

    let header = CheckpointHeader {
        version: CHECKPOINT_VERSION,
        config: config.clone(),
        formats: formats.to_vec(),
        epochs_completed: config.epochs,
        step: state.step,
        in_channels,
        v_max,
        rng: RngState::capture(&rng),
        augment_rng: RngState::capture(&aug_rng),
        loss_history,
        bank_pointer: state.bank.write_pointer(),
        bank_len: state.bank.len(),
    };
    Ok(Checkpoint {
        header,
        query: state.query,
        key: state.key,
        bank: state.bank,
        adjacency: adjacency.into_iter().map(|(k, a)| (k, a.partitions)).collect(),
    })
}
