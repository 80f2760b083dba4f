//! Model building blocks: convolution stages, the contiguous channel
//! partition, and the grouped-head model that trains one global classifier
//! plus one classifier per channel group. Only the global head participates
//! in prediction; the group heads exist to shape the features during
//! training.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Graph, NodeId, Tensor};

/// Assignment of `C` channels to `G` ordered, disjoint, contiguous blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupPartition {
    channels: usize,
    bounds: Vec<usize>,
}

impl GroupPartition {
    /// Near-equal contiguous blocks; when `channels % groups != 0` the
    /// remainder goes to the last group.
    pub fn equal(channels: usize, groups: usize) -> Result<Self> {
        if groups == 0 || channels == 0 || groups > channels {
            return Err(Error::Config(format!(
                "cannot split {channels} channels into {groups} groups"
            )));
        }
        let base = channels / groups;
        let mut bounds = Vec::with_capacity(groups + 1);
        for g in 0..groups {
            bounds.push(g * base);
        }
        bounds.push(channels);
        Ok(GroupPartition { channels, bounds })
    }

    /// Explicit block sizes; all must be ≥ 1.
    pub fn from_sizes(sizes: &[usize]) -> Result<Self> {
        if sizes.is_empty() || sizes.iter().any(|&s| s == 0) {
            return Err(Error::Config(format!("invalid group sizes {sizes:?}")));
        }
        let mut bounds = vec![0];
        for &s in sizes {
            bounds.push(bounds.last().unwrap() + s);
        }
        Ok(GroupPartition {
            channels: *bounds.last().unwrap(),
            bounds,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn group_count(&self) -> usize {
        self.bounds.len() - 1
    }

    pub fn group_range(&self, g: usize) -> std::ops::Range<usize> {
        self.bounds[g]..self.bounds[g + 1]
    }

    pub fn group_size(&self, g: usize) -> usize {
        self.bounds[g + 1] - self.bounds[g]
    }

    /// Boundary offsets `[0, ..., channels]`, one per block edge.
    pub fn bounds(&self) -> &[usize] {
        &self.bounds
    }
}

/// Parameters added by the group heads on top of the backbone + global head:
/// each head maps its block of pooled channels to all `classes` scores with
/// no bias, so the sum telescopes to `channels · classes`.
pub fn count_extra_params(channels: usize, classes: usize, partition: &GroupPartition) -> usize {
    debug_assert_eq!(partition.channels(), channels);
    (0..partition.group_count())
        .map(|g| partition.group_size(g) * classes)
        .sum()
}

/// 2-D convolution layer (cross-correlation) with odd square-ish kernels.
#[derive(Debug, Clone)]
pub struct Conv2dLayer {
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2dLayer {
    pub fn new(weight: Tensor, bias: Tensor, stride: usize, padding: usize) -> Result<Self> {
        let ws = weight.shape();
        if ws.len() != 4 {
            return Err(Error::Config(format!(
                "conv weight must be [out,in,kh,kw], got {ws:?}"
            )));
        }
        if ws[2] % 2 == 0 || ws[3] % 2 == 0 {
            return Err(Error::Config(format!(
                "conv kernel dims must be odd, got {}x{}",
                ws[2], ws[3]
            )));
        }
        if bias.shape() != [ws[0]] {
            return Err(Error::Config(format!(
                "conv bias shape {:?} does not match {} output channels",
                bias.shape(),
                ws[0]
            )));
        }
        Ok(Conv2dLayer {
            weight,
            bias,
            stride,
            padding,
        })
    }

    fn xavier(
        out_c: usize,
        in_c: usize,
        k: usize,
        stride: usize,
        padding: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = in_c * k * k;
        let fan_out = out_c * k * k;
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data: Vec<f64> = (0..out_c * in_c * k * k)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        Conv2dLayer {
            weight: Tensor::new(vec![out_c, in_c, k, k], data).unwrap(),
            bias: Tensor::zeros(vec![out_c]),
            stride,
            padding,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }
}

/// Fully connected map stored as `[in, out]` so the forward pass is a plain
/// matrix product on row-major activations.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl Linear {
    fn xavier(in_dim: usize, out_dim: usize, with_bias: bool, rng: &mut ChaCha8Rng) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let data: Vec<f64> = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        Linear {
            weight: Tensor::new(vec![in_dim, out_dim], data).unwrap(),
            bias: with_bias.then(|| Tensor::zeros(vec![out_dim])),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[0]
    }
}

/// One backbone stage: conv → relu, optionally followed by 2×2 max pooling.
#[derive(Debug, Clone)]
pub struct ConvStage {
    pub conv: Conv2dLayer,
    pub pool: bool,
}

/// Convolutional backbone with a global classification head and one
/// bias-free head per channel group.
#[derive(Debug, Clone)]
pub struct SefModel {
    pub stages: Vec<ConvStage>,
    pub partition: GroupPartition,
    pub global_head: Linear,
    pub group_heads: Vec<Linear>,
    classes: usize,
}

/// Node handles produced by one forward pass.
pub struct SefForward {
    /// Last conv stage output (post-relu, pre-pooling); the tensor the
    /// grouping regularizer reads.
    pub features: NodeId,
    /// Spatially averaged features, `[N, C]`.
    pub pooled: NodeId,
    pub logits_global: NodeId,
    pub logits_groups: Vec<NodeId>,
    /// Trainable leaves in canonical parameter order.
    pub params: Vec<(String, NodeId)>,
}

impl SefModel {
    /// Backbone used by the experiments: three 3×3 conv stages of widths
    /// 16 → 24 → `channels`, pooling after the first two. On 32×32 inputs the
    /// final grid is 8×8.
    pub fn with_default_backbone(
        channels: usize,
        groups: usize,
        classes: usize,
        seed: u64,
    ) -> Result<Self> {
        let partition = GroupPartition::equal(channels, groups)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stages = vec![
            ConvStage {
                conv: Conv2dLayer::xavier(16, 3, 3, 1, 1, &mut rng),
                pool: true,
            },
            ConvStage {
                conv: Conv2dLayer::xavier(24, 16, 3, 1, 1, &mut rng),
                pool: true,
            },
            ConvStage {
                conv: Conv2dLayer::xavier(channels, 24, 3, 1, 1, &mut rng),
                pool: false,
            },
        ];
        let global_head = Linear::xavier(channels, classes, true, &mut rng);
        let group_heads = (0..groups)
            .map(|g| Linear::xavier(partition.group_size(g), classes, false, &mut rng))
            .collect();
        Ok(SefModel {
            stages,
            partition,
            global_head,
            group_heads,
            classes,
        })
    }

    /// Assembles a model from explicit pieces, checking the wiring.
    pub fn from_parts(
        stages: Vec<ConvStage>,
        partition: GroupPartition,
        global_head: Linear,
        group_heads: Vec<Linear>,
        classes: usize,
    ) -> Result<Self> {
        let last = stages
            .last()
            .ok_or_else(|| Error::Config("backbone needs at least one stage".into()))?;
        if last.conv.out_channels() != partition.channels() {
            return Err(Error::Config(format!(
                "partition covers {} channels but backbone ends with {}",
                partition.channels(),
                last.conv.out_channels()
            )));
        }
        if global_head.in_dim() != partition.channels() {
            return Err(Error::Config(format!(
                "global head input {} ≠ {} channels",
                global_head.in_dim(),
                partition.channels()
            )));
        }
        if group_heads.len() != partition.group_count() {
            return Err(Error::Config(format!(
                "{} group heads for {} groups",
                group_heads.len(),
                partition.group_count()
            )));
        }
        for (g, head) in group_heads.iter().enumerate() {
            if head.in_dim() != partition.group_size(g) {
                return Err(Error::Config(format!(
                    "group head {g} input {} ≠ group size {}",
                    head.in_dim(),
                    partition.group_size(g)
                )));
            }
            if head.bias.is_some() {
                return Err(Error::Config(format!("group head {g} must be bias-free")));
            }
        }
        Ok(SefModel {
            stages,
            partition,
            global_head,
            group_heads,
            classes,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn channels(&self) -> usize {
        self.partition.channels()
    }

    pub fn partition(&self) -> &GroupPartition {
        &self.partition
    }

    /// Canonical (name, tensor) listing; the order defines checkpoint and
    /// optimizer layout.
    pub fn named_parameters(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, stage) in self.stages.iter().enumerate() {
            out.push((format!("backbone.conv{i}.weight"), &stage.conv.weight));
            out.push((format!("backbone.conv{i}.bias"), &stage.conv.bias));
        }
        out.push(("global_head.weight".to_string(), &self.global_head.weight));
        if let Some(b) = &self.global_head.bias {
            out.push(("global_head.bias".to_string(), b));
        }
        for (g, head) in self.group_heads.iter().enumerate() {
            out.push((format!("group_heads.{g}.weight"), &head.weight));
        }
        out
    }

    pub fn named_parameters_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (i, stage) in self.stages.iter_mut().enumerate() {
            out.push((format!("backbone.conv{i}.weight"), &mut stage.conv.weight));
            out.push((format!("backbone.conv{i}.bias"), &mut stage.conv.bias));
        }
        out.push((
            "global_head.weight".to_string(),
            &mut self.global_head.weight,
        ));
        if let Some(b) = &mut self.global_head.bias {
            out.push(("global_head.bias".to_string(), b));
        }
        for (g, head) in self.group_heads.iter_mut().enumerate() {
            out.push((format!("group_heads.{g}.weight"), &mut head.weight));
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_parameters()
            .iter()
            .map(|(_, t)| t.numel())
            .sum()
    }

    /// Full forward pass; registers every parameter as a trainable leaf.
    pub fn forward(&self, g: &mut Graph, images: &Tensor) -> Result<SefForward> {
        let ids: Vec<NodeId> = self
            .named_parameters()
            .into_iter()
            .map(|(_, t)| g.param(t.clone()))
            .collect();
        self.forward_from_ids(g, images, &ids)
    }

    /// Forward pass reading parameter values from existing graph leaves (in
    /// [`SefModel::named_parameters`] order) instead of the model's own
    /// tensors; the model supplies only the architecture. This is what lets
    /// a finite-difference harness perturb parameters externally.
    pub fn forward_from_ids(
        &self,
        g: &mut Graph,
        images: &Tensor,
        ids: &[NodeId],
    ) -> Result<SefForward> {
        let s = images.shape();
        if s.len() != 4 || s[1] != self.stages[0].conv.in_channels() {
            return Err(Error::Config(format!(
                "input shape {s:?} does not match backbone expecting {} channels",
                self.stages[0].conv.in_channels()
            )));
        }
        if self.stages.last().unwrap().conv.out_channels() != self.partition.channels() {
            return Err(Error::Config(format!(
                "partition covers {} channels but backbone ends with {}",
                self.partition.channels(),
                self.stages.last().unwrap().conv.out_channels()
            )));
        }
        let expected = self.named_parameters();
        if ids.len() != expected.len() {
            return Err(Error::Config(format!(
                "expected {} parameter leaves, got {}",
                expected.len(),
                ids.len()
            )));
        }
        for ((name, tensor), &id) in expected.iter().zip(ids) {
            if g.value(id).shape() != tensor.shape() {
                return Err(Error::Config(format!(
                    "parameter leaf for '{name}' has shape {:?}, expected {:?}",
                    g.value(id).shape(),
                    tensor.shape()
                )));
            }
        }
        let mut params: Vec<(String, NodeId)> = expected
            .iter()
            .zip(ids)
            .map(|((name, _), &id)| (name.clone(), id))
            .collect();
        params.reverse(); // consumed front-to-back below
        let mut next = || params.pop().expect("parameter count checked above");

        let mut registered = Vec::new();
        let mut x = g.leaf(images.clone());
        for stage in &self.stages {
            let (wname, w) = next();
            let (bname, b) = next();
            registered.push((wname, w));
            registered.push((bname, b));
            let y = g.conv2d(x, w, b, stage.conv.stride, stage.conv.padding)?;
            x = g.relu(y)?;
            if stage.pool {
                x = g.max_pool2d(x, 2)?;
            }
        }
        let features = x;
        let pooled = g.global_avg_pool(features)?;

        let (gwname, gw) = next();
        registered.push((gwname, gw));
        let mut logits_global = g.matmul(pooled, gw)?;
        if self.global_head.bias.is_some() {
            let (gbname, gb) = next();
            registered.push((gbname, gb));
            logits_global = g.add_row_broadcast(logits_global, gb)?;
        }

        let mut logits_groups = Vec::with_capacity(self.group_heads.len());
        for gi in 0..self.group_heads.len() {
            let range = self.partition.group_range(gi);
            let sub = g.slice_cols(pooled, range.start, range.end)?;
            let (hname, hw) = next();
            registered.push((hname, hw));
            logits_groups.push(g.matmul(sub, hw)?);
        }

        Ok(SefForward {
            features,
            pooled,
            logits_global,
            logits_groups,
            params: registered,
        })
    }

    /// Class decisions from the global head only; group heads never touch
    /// prediction. Ties resolve to the lowest class index.
    pub fn predict(&self, images: &Tensor) -> Result<Vec<usize>> {
        let mut g = Graph::new();
        let fwd = self.forward(&mut g, images)?;
        Ok(argmax_rows(g.value(fwd.logits_global)))
    }

    /// Reinitializes every group head from the given seed, leaving the
    /// backbone and global head untouched.
    pub fn scramble_group_heads(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (g, head) in self.group_heads.iter_mut().enumerate() {
            let fresh = Linear::xavier(
                self.partition.group_size(g),
                self.classes,
                false,
                &mut rng,
            );
            head.weight = fresh.weight;
        }
    }
}

/// Row-wise argmax with first-index tie breaking.
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let cols = *logits.shape().last().unwrap();
    logits
        .data()
        .chunks_exact(cols)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
