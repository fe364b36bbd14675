use ndarray::{Array1, Array2, Array3, ArrayViewD, ArrayViewMutD};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::StgcnConfig;
use crate::graph::NUM_PARTITIONS;

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `(out, in)`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Array2::zeros((output, input)),
            bias: Array1::zeros(output),
        }
    }

    /// Uniform in `±1/sqrt(in)` for both weight and bias.
    pub fn init<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (input.max(1) as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        Self {
            weight: Array2::from_shape_fn((output, input), |_| dist.sample(rng)),
            bias: Array1::from_shape_fn(output, |_| dist.sample(rng)),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }

    /// Rows of `x` are samples.
    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weight.t()) + &self.bias
    }

    /// Returns `(dx, grads)` for upstream gradient `dy`.
    pub fn backward(&self, x: &Array2<f64>, dy: &Array2<f64>) -> (Array2<f64>, Linear) {
        let dx = dy.dot(&self.weight);
        let grads = Linear {
            weight: dy.t().dot(x),
            bias: dy.sum_axis(ndarray::Axis(0)),
        };
        (dx, grads)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormParams {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

impl BatchNormParams {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Array1::ones(channels),
            beta: Array1::zeros(channels),
        }
    }
}

/// Running statistics of one normalization layer (not trained by gradient).
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormStats {
    pub mean: Array1<f64>,
    pub var: Array1<f64>,
}

impl BatchNormStats {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: Array1::zeros(channels),
            var: Array1::ones(channels),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Residual {
    None,
    Identity,
    /// 1×1 convolution (with the block stride) followed by normalization.
    Projection { weight: Array3<f64>, bn: BatchNormParams },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    /// `(partitions, C_out, C_in)`
    pub gcn_weight: Array3<f64>,
    /// `(partitions, V_max, V_max)`, multiplies the normalized adjacency.
    pub importance: Option<Array3<f64>>,
    pub bn1: BatchNormParams,
    /// `(C_out, C_out, Γ)`
    pub tcn_weight: Array3<f64>,
    pub bn2: BatchNormParams,
    pub residual: Residual,
    pub stride: usize,
}

impl BlockParams {
    pub fn in_channels(&self) -> usize {
        self.gcn_weight.dim().2
    }

    pub fn out_channels(&self) -> usize {
        self.gcn_weight.dim().1
    }

    pub fn temporal_kernel(&self) -> usize {
        self.tcn_weight.dim().2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockStats {
    pub bn1: BatchNormStats,
    pub bn2: BatchNormStats,
    pub residual: Option<BatchNormStats>,
}

/// All trainable tensors of the encoder and projection head.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub blocks: Vec<BlockParams>,
    /// Affine map from the last block width to `embedding_dim`, present only
    /// when the two differ.
    pub embed: Option<Linear>,
    pub head_hidden: Linear,
    pub head_out: Linear,
}

fn kaiming<R: Rng + ?Sized>(shape: (usize, usize, usize), fan_in: usize, rng: &mut R) -> Array3<f64> {
    let normal = Normal::new(0.0, (2.0 / fan_in.max(1) as f64).sqrt()).expect("positive sd");
    Array3::from_shape_fn(shape, |_| normal.sample(rng))
}

impl EncoderParams {
    pub fn init<R: Rng + ?Sized>(config: &StgcnConfig, in_channels: usize, v_max: usize, rng: &mut R) -> Self {
        let gamma = config.temporal_kernel;
        let mut blocks = Vec::with_capacity(config.block_channel_widths.len());
        let mut cin = in_channels;
        for (b, &cout) in config.block_channel_widths.iter().enumerate() {
            let stride = config.strides.get(b).copied().unwrap_or(1);
            let residual = if b == 0 {
                Residual::None
            } else if cin == cout && stride == 1 {
                Residual::Identity
            } else {
                Residual::Projection {
                    weight: kaiming((cout, cin, 1), cin, rng),
                    bn: BatchNormParams::new(cout),
                }
            };
            blocks.push(BlockParams {
                gcn_weight: kaiming((NUM_PARTITIONS, cout, cin), cin, rng),
                importance: config
                    .edge_importance
                    .then(|| Array3::ones((NUM_PARTITIONS, v_max, v_max))),
                bn1: BatchNormParams::new(cout),
                tcn_weight: kaiming((cout, cout, gamma), cout * gamma, rng),
                bn2: BatchNormParams::new(cout),
                residual,
                stride,
            });
            cin = cout;
        }
        let embed = (cin != config.embedding_dim).then(|| Linear::init(cin, config.embedding_dim, rng));
        Self {
            blocks,
            embed,
            head_hidden: Linear::init(config.embedding_dim, config.embedding_dim, rng),
            head_out: Linear::init(config.embedding_dim, config.projection_dim, rng),
        }
    }

    /// Same structure with every tensor zeroed (gradient / velocity buffers).
    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for (_, mut t) in out.tensors_mut() {
            t.fill(0.0);
        }
        out
    }

    /// Named views in a fixed order; names are stable checkpoint keys.
    pub fn tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        let mut out = Vec::new();
        for (b, block) in self.blocks.iter().enumerate() {
            let p = format!("block{b}");
            out.push((format!("{p}.gcn_weight"), block.gcn_weight.view().into_dyn()));
            if let Some(m) = &block.importance {
                out.push((format!("{p}.importance"), m.view().into_dyn()));
            }
            out.push((format!("{p}.bn1.gamma"), block.bn1.gamma.view().into_dyn()));
            out.push((format!("{p}.bn1.beta"), block.bn1.beta.view().into_dyn()));
            out.push((format!("{p}.tcn_weight"), block.tcn_weight.view().into_dyn()));
            out.push((format!("{p}.bn2.gamma"), block.bn2.gamma.view().into_dyn()));
            out.push((format!("{p}.bn2.beta"), block.bn2.beta.view().into_dyn()));
            if let Residual::Projection { weight, bn } = &block.residual {
                out.push((format!("{p}.res_weight"), weight.view().into_dyn()));
                out.push((format!("{p}.res_bn.gamma"), bn.gamma.view().into_dyn()));
                out.push((format!("{p}.res_bn.beta"), bn.beta.view().into_dyn()));
            }
        }
        let linears = [("embed", self.embed.as_ref()), ("head_hidden", Some(&self.head_hidden)), ("head_out", Some(&self.head_out))];
        for (name, l) in linears {
            if let Some(l) = l {
                out.push((format!("{name}.weight"), l.weight.view().into_dyn()));
                out.push((format!("{name}.bias"), l.bias.view().into_dyn()));
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        let mut out = Vec::new();
        for (b, block) in self.blocks.iter_mut().enumerate() {
            let p = format!("block{b}");
            out.push((format!("{p}.gcn_weight"), block.gcn_weight.view_mut().into_dyn()));
            if let Some(m) = &mut block.importance {
                out.push((format!("{p}.importance"), m.view_mut().into_dyn()));
            }
            out.push((format!("{p}.bn1.gamma"), block.bn1.gamma.view_mut().into_dyn()));
            out.push((format!("{p}.bn1.beta"), block.bn1.beta.view_mut().into_dyn()));
            out.push((format!("{p}.tcn_weight"), block.tcn_weight.view_mut().into_dyn()));
            out.push((format!("{p}.bn2.gamma"), block.bn2.gamma.view_mut().into_dyn()));
            out.push((format!("{p}.bn2.beta"), block.bn2.beta.view_mut().into_dyn()));
            if let Residual::Projection { weight, bn } = &mut block.residual {
                out.push((format!("{p}.res_weight"), weight.view_mut().into_dyn()));
                out.push((format!("{p}.res_bn.gamma"), bn.gamma.view_mut().into_dyn()));
                out.push((format!("{p}.res_bn.beta"), bn.beta.view_mut().into_dyn()));
            }
        }
        if let Some(e) = &mut self.embed {
            out.push(("embed.weight".into(), e.weight.view_mut().into_dyn()));
            out.push(("embed.bias".into(), e.bias.view_mut().into_dyn()));
        }
        out.push(("head_hidden.weight".into(), self.head_hidden.weight.view_mut().into_dyn()));
        out.push(("head_hidden.bias".into(), self.head_hidden.bias.view_mut().into_dyn()));
        out.push(("head_out.weight".into(), self.head_out.weight.view_mut().into_dyn()));
        out.push(("head_out.bias".into(), self.head_out.bias.view_mut().into_dyn()));
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|x| x.is_finite()))
    }
}

/// Running statistics of every normalization layer.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderBuffers {
    pub blocks: Vec<BlockStats>,
}

impl EncoderBuffers {
    pub fn for_params(params: &EncoderParams) -> Self {
        Self {
            blocks: params
                .blocks
                .iter()
                .map(|b| BlockStats {
                    bn1: BatchNormStats::new(b.out_channels()),
                    bn2: BatchNormStats::new(b.out_channels()),
                    residual: matches!(b.residual, Residual::Projection { .. }).then(|| BatchNormStats::new(b.out_channels())),
                })
                .collect(),
        }
    }

    pub fn tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        let mut out = Vec::new();
        for (b, s) in self.blocks.iter().enumerate() {
            let layers = [("bn1", Some(&s.bn1)), ("bn2", Some(&s.bn2)), ("res_bn", s.residual.as_ref())];
            for (n, st) in layers {
                if let Some(st) = st {
                    out.push((format!("block{b}.{n}.running_mean"), st.mean.view().into_dyn()));
                    out.push((format!("block{b}.{n}.running_var"), st.var.view().into_dyn()));
                }
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        let mut out = Vec::new();
        for (b, s) in self.blocks.iter_mut().enumerate() {
            out.push((format!("block{b}.bn1.running_mean"), s.bn1.mean.view_mut().into_dyn()));
            out.push((format!("block{b}.bn1.running_var"), s.bn1.var.view_mut().into_dyn()));
            out.push((format!("block{b}.bn2.running_mean"), s.bn2.mean.view_mut().into_dyn()));
            out.push((format!("block{b}.bn2.running_var"), s.bn2.var.view_mut().into_dyn()));
            if let Some(r) = &mut s.residual {
                out.push((format!("block{b}.res_bn.running_mean"), r.mean.view_mut().into_dyn()));
                out.push((format!("block{b}.res_bn.running_var"), r.var.view_mut().into_dyn()));
            }
        }
        out
    }
}
