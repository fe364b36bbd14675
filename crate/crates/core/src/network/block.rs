use ndarray::{Array1, Array3, Array4};
use rand::{Rng, RngCore};

use super::layers::{
    batchnorm_backward, batchnorm_forward, effective_adjacency, relu_backward_inplace, relu_inplace, spatial_backward,
    spatial_forward, temporal_backward, temporal_forward, zero_masked, BnCache, SpatialCache,
};
use super::params::{BatchNormParams, BatchNormStats, BlockParams, BlockStats, Residual};
use super::{NetworkError, Result};
use crate::graph::AdjacencySet;

pub const BN_MOMENTUM: f64 = 0.1;

enum ResidualCache {
    None,
    Identity,
    Projection { bn: BnCache },
}

/// Intermediate activations of one block, kept for the backward pass.
pub struct BlockCache {
    input: Array4<f64>,
    adjacency: Array3<f64>,
    spatial: SpatialCache,
    bn1: BnCache,
    /// Input of the temporal convolution (after activation and dropout).
    tcn_input: Array4<f64>,
    relu1: Array4<f64>,
    dropout_mask: Option<Array4<f64>>,
    bn2: BnCache,
    residual: ResidualCache,
    pub output: Array4<f64>,
}

fn update_stats(stats: &mut BatchNormStats, cache: &BnCache) {
    let n = cache.count as f64;
    let unbiased = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
    stats.mean = &stats.mean * (1.0 - BN_MOMENTUM) + &cache.mean * BN_MOMENTUM;
    stats.var = &stats.var * (1.0 - BN_MOMENTUM) + &(&cache.var * (unbiased * BN_MOMENTUM));
}

impl BlockCache {
    /// Folds the batch statistics of this pass into running statistics.
    pub fn update_running_stats(&self, stats: &mut BlockStats) {
        update_stats(&mut stats.bn1, &self.bn1);
        update_stats(&mut stats.bn2, &self.bn2);
        if let (ResidualCache::Projection { bn, .. }, Some(r)) = (&self.residual, stats.residual.as_mut()) {
            update_stats(r, bn);
        }
    }
}

fn bn_running(stats: Option<&BatchNormStats>) -> Option<(&Array1<f64>, &Array1<f64>)> {
    stats.map(|s| (&s.mean, &s.var))
}

/// Forward pass of one graph-convolution block on `(N, C_in, T, V_max)`
/// instance features. `stats` selects evaluation-mode normalization; `None`
/// uses batch statistics over valid joints. Dropout applies only in training
/// mode and only when an rng is supplied.
pub fn block_forward(
    x: &Array4<f64>,
    partitions: &Array3<f64>,
    mask: &[bool],
    params: &BlockParams,
    stats: Option<&BlockStats>,
    dropout: f64,
    rng: Option<&mut dyn RngCore>,
) -> Result<(Array4<f64>, BlockCache)> {
    let (_, cin, _, v) = x.dim();
    if cin != params.in_channels() {
        return Err(NetworkError::Shape(format!("block expects {} input channels, got {cin}", params.in_channels())));
    }
    if mask.len() != v || partitions.dim().1 != v {
        return Err(NetworkError::Shape(format!(
            "joint axis {v}, mask {}, adjacency {}",
            mask.len(),
            partitions.dim().1
        )));
    }
    let adjacency = effective_adjacency(partitions, params.importance.as_ref());
    let (g, spatial) = spatial_forward(x, &adjacency, &params.gcn_weight);
    let (mut h1, bn1) = batchnorm_forward(&g, &params.bn1.gamma, &params.bn1.beta, mask, bn_running(stats.map(|s| &s.bn1)));
    relu_inplace(&mut h1);
    let relu1 = h1;
    let (tcn_input, dropout_mask) = match rng {
        Some(rng) if stats.is_none() && dropout > 0.0 => {
            let keep = 1.0 - dropout;
            let m = Array4::from_shape_fn(relu1.dim(), |_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 });
            (&relu1 * &m, Some(m))
        }
        _ => (relu1.clone(), None),
    };
    let tc = temporal_forward(&tcn_input, &params.tcn_weight, params.stride);
    let (h2, bn2) = batchnorm_forward(&tc, &params.bn2.gamma, &params.bn2.beta, mask, bn_running(stats.map(|s| &s.bn2)));
    let mut out = h2;
    let residual = match &params.residual {
        Residual::None => ResidualCache::None,
        Residual::Identity => {
            out += x;
            ResidualCache::Identity
        }
        Residual::Projection { weight, bn } => {
            let pre_bn = temporal_forward(x, weight, params.stride);
            let running = bn_running(stats.and_then(|s| s.residual.as_ref()));
            let (r, cache) = batchnorm_forward(&pre_bn, &bn.gamma, &bn.beta, mask, running);
            out += &r;
            ResidualCache::Projection { bn: cache }
        }
    };
    relu_inplace(&mut out);
    zero_masked(&mut out, mask);
    let cache = BlockCache {
        input: x.clone(),
        adjacency,
        spatial,
        bn1,
        tcn_input,
        relu1,
        dropout_mask,
        bn2,
        residual,
        output: out.clone(),
    };
    Ok((out, cache))
}

/// Gradients of the block parameters (same structure as [`BlockParams`]) and
/// of the block input.
pub fn block_backward(
    dout: &Array4<f64>,
    partitions: &Array3<f64>,
    params: &BlockParams,
    cache: &BlockCache,
    mask: &[bool],
) -> (Array4<f64>, BlockParams) {
    let mut d = dout.clone();
    relu_backward_inplace(&mut d, &cache.output);
    zero_masked(&mut d, mask);

    let mut grads = params.clone();
    let mut dx = match (&params.residual, &cache.residual) {
        (Residual::Projection { weight, bn }, ResidualCache::Projection { bn: bn_cache }) => {
            let (dpre, dgamma, dbeta) = batchnorm_backward(&d, &bn.gamma, bn_cache, mask);
            let (dxr, dw) = temporal_backward(&dpre, &cache.input, weight, params.stride);
            grads.residual = Residual::Projection {
                weight: dw,
                bn: BatchNormParams { gamma: dgamma, beta: dbeta },
            };
            dxr
        }
        (Residual::Identity, _) => d.clone(),
        _ => Array4::zeros(cache.input.dim()),
    };

    let (dtc, dg2, db2) = batchnorm_backward(&d, &params.bn2.gamma, &cache.bn2, mask);
    grads.bn2 = BatchNormParams { gamma: dg2, beta: db2 };
    let (mut dact, dtw) = temporal_backward(&dtc, &cache.tcn_input, &params.tcn_weight, params.stride);
    grads.tcn_weight = dtw;
    if let Some(m) = &cache.dropout_mask {
        dact *= m;
    }
    relu_backward_inplace(&mut dact, &cache.relu1);
    let (dg, dg1, db1) = batchnorm_backward(&dact, &params.bn1.gamma, &cache.bn1, mask);
    grads.bn1 = BatchNormParams { gamma: dg1, beta: db1 };
    let sg = spatial_backward(&dg, &cache.input, &cache.adjacency, &params.gcn_weight, &cache.spatial);
    grads.gcn_weight = sg.dweight;
    if params.importance.is_some() {
        grads.importance = Some(sg.dadjacency * partitions);
    }
    dx += &sg.dx;
    zero_masked(&mut dx, mask);
    (dx, grads)
}

/// One block applied to `(N, C_in, T, V_max)` features for a single
/// convention. Training-mode normalization when `stats` is `None`.
pub fn stgcn_block(
    x: &Array4<f64>,
    adjacency: &AdjacencySet,
    mask: &Array1<bool>,
    params: &BlockParams,
    stats: Option<&BlockStats>,
) -> Result<Array4<f64>> {
    let valid = mask.iter().filter(|&&m| m).count();
    if valid != adjacency.joint_count() || mask.len() != adjacency.v_max() {
        return Err(NetworkError::ConventionMismatch(format!(
            "mask has {valid} of {} joints valid, adjacency `{}` has {} of {}",
            mask.len(),
            adjacency.convention,
            adjacency.joint_count(),
            adjacency.v_max()
        )));
    }
    let mask: Vec<bool> = mask.to_vec();
    block_forward(x, &adjacency.partitions, &mask, params, stats, 0.0, None).map(|(y, _)| y)
}
