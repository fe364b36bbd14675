use ndarray::{s, Array2, Array3, Array4, Axis};
use rand::{Rng, RngCore};

use super::block::{block_backward, block_forward, BlockCache};
use super::params::{BlockParams, EncoderBuffers, EncoderParams};
use super::{NetworkError, Result, StgcnConfig};
use crate::conventions::PoseSequence;
use crate::graph::AdjacencySet;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, dropout active.
    Train,
    /// Running statistics, deterministic.
    Eval,
}

/// Homogeneous mini-batch flattened into per-person instances.
#[derive(Debug, Clone)]
pub struct Batch {
    /// `(instances, C, T, V_max)`
    pub features: Array4<f64>,
    pub sample_of: Vec<usize>,
    pub persons: Vec<usize>,
    pub mask: Vec<bool>,
    pub convention: String,
}

impl Batch {
    /// Persons whose coordinates are all zero are dropped; a sample with no
    /// active person keeps its first slot so it still yields an embedding.
    pub fn from_sequences(seqs: &[PoseSequence]) -> Result<Self> {
        let first = seqs.first().ok_or(NetworkError::EmptyBatch)?;
        let (c, v, t, p) = first.data.dim();
        let mut sample_of = Vec::new();
        let mut persons = Vec::with_capacity(seqs.len());
        let mut slices = Vec::new();
        for (i, seq) in seqs.iter().enumerate() {
            if seq.convention != first.convention {
                return Err(NetworkError::MixedConventions(first.convention.clone(), seq.convention.clone()));
            }
            if seq.data.dim() != (c, v, t, p) || seq.valid_mask != first.valid_mask {
                return Err(NetworkError::Shape(format!(
                    "sample {i} has shape {:?}, expected {:?}",
                    seq.data.dim(),
                    (c, v, t, p)
                )));
            }
            let mut active: Vec<usize> = (0..p)
                .filter(|&q| seq.data.index_axis(Axis(3), q).iter().any(|&x| x != 0.0))
                .collect();
            if active.is_empty() {
                active.push(0);
            }
            persons.push(active.len());
            for q in active {
                sample_of.push(i);
                slices.push((i, q));
            }
        }
        let mut features = Array4::zeros((slices.len(), c, t, v));
        for (n, &(i, q)) in slices.iter().enumerate() {
            // (C, V, T) -> (C, T, V)
            let src = seqs[i].data.index_axis(Axis(3), q);
            features
                .index_axis_mut(Axis(0), n)
                .assign(&src.permuted_axes([0, 2, 1]));
        }
        Ok(Self {
            features,
            sample_of,
            persons,
            mask: first.valid_mask.to_vec(),
            convention: first.convention.clone(),
        })
    }

    pub fn batch_size(&self) -> usize {
        self.persons.len()
    }

    pub fn valid_joints(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    /// `(batch, embedding_dim)`
    pub embedding: Array2<f64>,
    /// `(batch, projection_dim)`, rows of unit norm.
    pub projection: Array2<f64>,
}

/// Everything needed to backpropagate through one forward pass.
pub struct ForwardCache {
    pub blocks: Vec<BlockCache>,
    partitions: Array3<f64>,
    mask: Vec<bool>,
    sample_of: Vec<usize>,
    /// Pooling denominator per sample.
    pool_count: Vec<f64>,
    trunk_dim: (usize, usize, usize, usize),
    pooled: Array2<f64>,
    embedding: Array2<f64>,
    hidden: Array2<f64>,
    z_norm: Vec<f64>,
    projection: Array2<f64>,
}

impl ForwardCache {
    /// Output of each block, `(instances, C, T', V)` where `V` is `V_max`
    /// unless the encoder skips padded joints.
    pub fn block_outputs(&self) -> impl Iterator<Item = &Array4<f64>> {
        self.blocks.iter().map(|b| &b.output)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub config: StgcnConfig,
    pub in_channels: usize,
    pub v_max: usize,
    pub params: EncoderParams,
    pub buffers: EncoderBuffers,
    /// Run the trunk on the native joint prefix only. Padded joints are
    /// exactly zero either way; `false` evaluates them explicitly.
    pub skip_padded: bool,
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(config: StgcnConfig, in_channels: usize, v_max: usize, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let params = EncoderParams::init(&config, in_channels, v_max, rng);
        let buffers = EncoderBuffers::for_params(&params);
        Ok(Self {
            config,
            in_channels,
            v_max,
            params,
            buffers,
            skip_padded: true,
        })
    }

    fn check(&self, batch: &Batch, adjacency: &AdjacencySet) -> Result<()> {
        if adjacency.convention != batch.convention {
            return Err(NetworkError::ConventionMismatch(format!(
                "adjacency for `{}` applied to `{}` batch",
                adjacency.convention, batch.convention
            )));
        }
        let (_, c, _, v) = batch.features.dim();
        if c != self.in_channels || v != self.v_max || adjacency.v_max() != self.v_max {
            return Err(NetworkError::Shape(format!(
                "encoder expects {} channels and {} joints, batch has {c} and {v}, adjacency {}",
                self.in_channels,
                self.v_max,
                adjacency.v_max()
            )));
        }
        if batch.valid_joints() != adjacency.joint_count() {
            return Err(NetworkError::ConventionMismatch(format!(
                "mask has {} valid joints, `{}` has {}",
                batch.valid_joints(),
                adjacency.convention,
                adjacency.joint_count()
            )));
        }
        Ok(())
    }

    pub fn forward(
        &self,
        batch: &Batch,
        adjacency: &AdjacencySet,
        mode: Mode,
        mut rng: Option<&mut dyn RngCore>,
    ) -> Result<(EncoderOutput, ForwardCache)> {
        self.check(batch, adjacency)?;
        let width = if self.skip_padded { batch.valid_joints() } else { self.v_max };
        let mask = batch.mask[..width].to_vec();
        let partitions = adjacency.partitions.slice(s![.., ..width, ..width]).to_owned();
        let blocks = self.trunk_params(width);
        let mut x = batch.features.slice(s![.., .., .., ..width]).to_owned();
        let mut caches = Vec::with_capacity(blocks.len());
        for (b, block) in blocks.iter().enumerate() {
            let stats = match mode {
                Mode::Train => None,
                Mode::Eval => Some(&self.buffers.blocks[b]),
            };
            let (y, cache) = block_forward(
                &x,
                &partitions,
                &mask,
                block,
                stats,
                self.config.dropout,
                rng.as_mut().map(|r| &mut **r as &mut dyn RngCore),
            )?;
            caches.push(cache);
            x = y;
        }

        let (n, c, t, _) = x.dim();
        let bsz = batch.batch_size();
        let vs = batch.valid_joints();
        let pool_count: Vec<f64> = batch.persons.iter().map(|&p| (vs * t * p) as f64).collect();
        let mut pooled = Array2::zeros((bsz, c));
        for i in 0..n {
            let s = batch.sample_of[i];
            // padded joints are exactly zero, so summing all joints is the masked sum
            let inst = x.index_axis(Axis(0), i);
            for ch in 0..c {
                pooled[[s, ch]] += inst.index_axis(Axis(0), ch).sum();
            }
        }
        for s in 0..bsz {
            let d = pool_count[s];
            pooled.row_mut(s).mapv_inplace(|v| v / d);
        }

        let embedding = match &self.params.embed {
            Some(e) => e.forward(&pooled),
            None => pooled.clone(),
        };
        let mut hidden = self.params.head_hidden.forward(&embedding);
        hidden.mapv_inplace(|v| v.max(0.0));
        let z = self.params.head_out.forward(&hidden);
        let z_norm: Vec<f64> = z.outer_iter().map(|r| r.dot(&r).sqrt().max(1e-12)).collect();
        let mut projection = z;
        for (mut row, &nrm) in projection.outer_iter_mut().zip(&z_norm) {
            row /= nrm;
        }
        let out = EncoderOutput {
            embedding: embedding.clone(),
            projection: projection.clone(),
        };
        let cache = ForwardCache {
            blocks: caches,
            partitions,
            mask: mask.clone(),
            sample_of: batch.sample_of.clone(),
            pool_count,
            trunk_dim: x.dim(),
            pooled,
            embedding,
            hidden,
            z_norm,
            projection,
        };
        Ok((out, cache))
    }

    /// Parameter gradients given upstream gradients on the projection (and
    /// optionally on the embedding).
    pub fn backward(&self, cache: &ForwardCache, d_projection: &Array2<f64>, d_embedding: Option<&Array2<f64>>) -> EncoderParams {
        let mut grads = self.params.zeros_like();
        let q = &cache.projection;
        let mut dz = d_projection.clone();
        for ((mut row, qrow), &nrm) in dz.outer_iter_mut().zip(q.outer_iter()).zip(&cache.z_norm) {
            let along = qrow.dot(&row);
            row.scaled_add(-along, &qrow);
            row /= nrm;
        }
        let (mut dh, g_out) = self.params.head_out.backward(&cache.hidden, &dz);
        grads.head_out = g_out;
        ndarray::Zip::from(&mut dh).and(&cache.hidden).for_each(|d, &h| {
            if h <= 0.0 {
                *d = 0.0;
            }
        });
        let (mut de, g_hidden) = self.params.head_hidden.backward(&cache.embedding, &dh);
        grads.head_hidden = g_hidden;
        if let Some(extra) = d_embedding {
            de += extra;
        }
        let dpooled = match &self.params.embed {
            Some(e) => {
                let (dp, g) = e.backward(&cache.pooled, &de);
                grads.embed = Some(g);
                dp
            }
            None => de,
        };

        let (n, c, t, v) = cache.trunk_dim;
        let mut d = Array4::zeros((n, c, t, v));
        for i in 0..n {
            let s = cache.sample_of[i];
            let cnt = cache.pool_count[s];
            for ch in 0..c {
                let g = dpooled[[s, ch]] / cnt;
                for (j, &m) in cache.mask.iter().enumerate() {
                    if m {
                        d.slice_mut(s![i, ch, .., j]).fill(g);
                    }
                }
            }
        }
        let width = cache.mask.len();
        let blocks = self.trunk_params(width);
        for b in (0..blocks.len()).rev() {
            let (dx, mut g) = block_backward(&d, &cache.partitions, &blocks[b], &cache.blocks[b], &cache.mask);
            if let Some(m) = g.importance.take() {
                let mut full = Array3::zeros((m.dim().0, self.v_max, self.v_max));
                full.slice_mut(s![.., ..width, ..width]).assign(&m);
                g.importance = Some(full);
            }
            grads.blocks[b] = g;
            d = dx;
        }
        grads
    }

    fn trunk_params(&self, width: usize) -> std::borrow::Cow<'_, [BlockParams]> {
        if width == self.v_max {
            return std::borrow::Cow::Borrowed(&self.params.blocks);
        }
        let mut blocks = self.params.blocks.clone();
        for b in blocks.iter_mut() {
            if let Some(m) = b.importance.as_mut() {
                *m = m.slice(s![.., ..width, ..width]).to_owned();
            }
        }
        std::borrow::Cow::Owned(blocks)
    }

    /// Folds batch statistics from a training-mode pass into the running
    /// normalization statistics.
    pub fn update_running_stats(&mut self, cache: &ForwardCache) {
        for (b, bc) in cache.blocks.iter().enumerate() {
            bc.update_running_stats(&mut self.buffers.blocks[b]);
        }
    }

    /// Embeds a homogeneous batch of sequences without dropout.
    pub fn encode(&self, seqs: &[PoseSequence], adjacency: &AdjacencySet, mode: Mode) -> Result<EncoderOutput> {
        let batch = Batch::from_sequences(seqs)?;
        self.forward(&batch, adjacency, mode, None).map(|(o, _)| o)
    }
}
