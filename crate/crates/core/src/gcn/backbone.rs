use super::block::{BlockCache, BlockShape, GcnBlock};
use super::temporal::output_frames;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::numerics::{DenseArray, Parameter, Rng};
use crate::skeleton::PartitionedGraph;

pub const DEFAULT_CHANNELS: [usize; 9] = [64, 64, 64, 128, 128, 128, 256, 256, 256];
pub const DEFAULT_STRIDES: [usize; 9] = [1, 1, 1, 2, 1, 1, 2, 1, 1];
pub const DEFAULT_KT: usize = 9;
/// x and y.
pub const INPUT_CHANNELS: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct BackboneConfig {
    pub channels: Vec<usize>,
    pub strides: Vec<usize>,
    pub kt: usize,
    pub residual: bool,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            channels: DEFAULT_CHANNELS.to_vec(),
            strides: DEFAULT_STRIDES.to_vec(),
            kt: DEFAULT_KT,
            residual: true,
        }
    }
}

impl BackboneConfig {
    /// Keeps the first `blocks` entries of the plan.
    pub fn truncated(&self, blocks: usize) -> Self {
        Self {
            channels: self.channels.iter().copied().take(blocks).collect(),
            strides: self.strides.iter().copied().take(blocks).collect(),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() {
            return Err(Error::Config("backbone needs at least one block".into()));
        }
        if self.channels.len() != self.strides.len() {
            return Err(Error::Config(format!(
                "{} channel entries but {} strides",
                self.channels.len(),
                self.strides.len()
            )));
        }
        if self.channels.contains(&0) {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        if self.strides.contains(&0) {
            return Err(Error::Config("temporal strides must be >= 1".into()));
        }
        if self.kt % 2 == 0 {
            return Err(Error::Config(format!("temporal kernel width must be odd, got {}", self.kt)));
        }
        Ok(())
    }

    pub fn out_channels(&self) -> usize {
        *self.channels.last().unwrap_or(&INPUT_CHANNELS)
    }

    pub fn out_frames(&self, frames: usize) -> usize {
        self.strides.iter().fold(frames, |t, &s| output_frames(t, s))
    }
}

/// Stack of [`GcnBlock`]s producing `F_ST`.
#[derive(Clone, Debug)]
pub struct Backbone {
    pub blocks: Vec<GcnBlock>,
}

/// Per-block activations of a training pass.
#[derive(Clone, Debug)]
pub struct BackboneCache {
    input: Vec<f64>,
    shapes: Vec<BlockShape>,
    blocks: Vec<BlockCache>,
}

impl BackboneCache {
    pub fn output(&self) -> &[f64] {
        self.blocks.last().map_or(&self.input, |c| &c.out)
    }
}

impl Backbone {
    pub fn new(config: &BackboneConfig, joints: usize, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let mut blocks = Vec::with_capacity(config.channels.len());
        let mut c_in = INPUT_CHANNELS;
        for (i, (&c_out, &stride)) in config.channels.iter().zip(&config.strides).enumerate() {
            blocks.push(GcnBlock::new(
                &format!("backbone.{i}"),
                c_in,
                c_out,
                joints,
                config.kt,
                stride,
                config.residual,
                rng,
            )?);
            c_in = c_out;
        }
        Ok(Self { blocks })
    }

    pub fn out_channels(&self) -> usize {
        self.blocks.last().map_or(INPUT_CHANNELS, GcnBlock::c_out)
    }

    pub fn out_frames(&self, frames: usize) -> usize {
        self.blocks.iter().fold(frames, |t, b| output_frames(t, b.stride()))
    }

    pub fn parameters(&self) -> Vec<&Parameter> {
        self.blocks.iter().flat_map(GcnBlock::parameters).collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        self.blocks.iter_mut().flat_map(GcnBlock::parameters_mut).collect()
    }

    /// Batch-norm running statistics as named arrays.
    pub fn buffers(&self) -> Vec<(String, DenseArray)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            for (tag, bn) in [("bn_spatial", &b.bn_spatial), ("bn_temporal", &b.bn_temporal)] {
                out.push((format!("backbone.{i}.{tag}.running_mean"), bn.running_mean.clone()));
                out.push((format!("backbone.{i}.{tag}.running_var"), bn.running_var.clone()));
            }
        }
        out
    }

    pub fn buffers_mut(&mut self) -> Vec<(String, &mut DenseArray)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter_mut().enumerate() {
            for (tag, bn) in [("bn_spatial", &mut b.bn_spatial), ("bn_temporal", &mut b.bn_temporal)] {
                out.push((format!("backbone.{i}.{tag}.running_mean"), &mut bn.running_mean));
                out.push((format!("backbone.{i}.{tag}.running_var"), &mut bn.running_var));
            }
        }
        out
    }

    fn check_input(&self, x: &DenseArray, graph: &PartitionedGraph) -> Result<(usize, usize, usize)> {
        let &[n, c, t, v] = x.shape() else {
            return Err(Error::Dimension(format!("expected [N, C, T, V], got {:?}", x.shape())));
        };
        if c != INPUT_CHANNELS {
            return Err(Error::Dimension(format!("expected {INPUT_CHANNELS} input channels, got {c}")));
        }
        if v != graph.joint_count() {
            return Err(Error::Dimension(format!(
                "input has {v} joints, graph has {}",
                graph.joint_count()
            )));
        }
        if t == 0 {
            return Err(Error::Dimension("clip has no frames".into()));
        }
        if let Some(b) = self.blocks.first() {
            if b.spatial.joints() != v {
                return Err(Error::Dimension(format!(
                    "input has {v} joints, backbone was built for {}",
                    b.spatial.joints()
                )));
            }
        }
        Ok((n, t, v))
    }

    fn run(
        &self,
        x: &DenseArray,
        graph: &PartitionedGraph,
        training: bool,
        exec: Execution,
    ) -> Result<BackboneCache> {
        let (n, mut frames, joints) = self.check_input(x, graph)?;
        let mut shapes = Vec::with_capacity(self.blocks.len());
        let mut caches: Vec<BlockCache> = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let s = BlockShape { n, frames, joints };
            let input = caches.last().map_or(x.data(), |c| &c.out);
            let cache = block.forward(graph, input, s, training, exec);
            shapes.push(s);
            caches.push(cache);
            frames = output_frames(frames, block.stride());
        }
        Ok(BackboneCache {
            input: x.data().to_vec(),
            shapes,
            blocks: caches,
        })
    }

    /// Training-mode forward: batch statistics, activations kept for [`Backbone::backward`].
    pub fn forward_train(&self, x: &DenseArray, graph: &PartitionedGraph, exec: Execution) -> Result<BackboneCache> {
        self.run(x, graph, true, exec)
    }

    /// Inference forward with running statistics; `[N, C_out, T'', V]`.
    pub fn forward_eval(&self, x: &DenseArray, graph: &PartitionedGraph, exec: Execution) -> Result<DenseArray> {
        let n = x.shape().first().copied().unwrap_or(0);
        let cache = self.run(x, graph, false, exec)?;
        let t = self.out_frames(x.shape()[2]);
        self.output_array(n, t, graph.joint_count(), cache)
    }

    pub fn output_of(&self, cache: BackboneCache) -> Result<DenseArray> {
        let s = cache.shapes.first().copied();
        let (n, t, v) = s.map_or((0, 0, 0), |s| (s.n, s.frames, s.joints));
        self.output_array(n, self.out_frames(t), v, cache)
    }

    fn output_array(&self, n: usize, t: usize, v: usize, mut cache: BackboneCache) -> Result<DenseArray> {
        let data = match cache.blocks.pop() {
            Some(c) => c.out,
            None => cache.input,
        };
        let out = DenseArray::new([n, self.out_channels(), t, v], data)?;
        out.debug_assert_finite("backbone_forward");
        Ok(out)
    }

    /// Accumulates parameter gradients given `dL/dF_ST`; returns `dL/dx`.
    pub fn backward(
        &mut self,
        graph: &PartitionedGraph,
        cache: &BackboneCache,
        d_out: Vec<f64>,
        exec: Execution,
    ) -> Vec<f64> {
        let mut grad = d_out;
        for i in (0..self.blocks.len()).rev() {
            let input = if i == 0 { &cache.input } else { &cache.blocks[i - 1].out };
            grad = self.blocks[i].backward(graph, input, cache.shapes[i], &cache.blocks[i], grad, exec);
        }
        grad
    }

    pub fn update_running_stats(&mut self, cache: &BackboneCache) {
        for (b, c) in self.blocks.iter_mut().zip(&cache.blocks) {
            b.update_running_stats(c);
        }
    }
}

/// Inference-mode forward of a `[N, 2, T, V]` batch to `F_ST`.
pub fn backbone_forward(seq_batch: &DenseArray, graph: &PartitionedGraph, backbone: &Backbone) -> Result<DenseArray> {
    backbone.forward_eval(seq_batch, graph, Execution::Sequential)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::JointLayout;

    fn graph() -> PartitionedGraph {
        PartitionedGraph::build(&JointLayout::openpose18(), 0.001).unwrap()
    }

    #[test]
    fn default_plan_output_shape() {
        let mut rng = Rng::new(0);
        let backbone = Backbone::new(&BackboneConfig::default(), 18, &mut rng).unwrap();
        assert_eq!(backbone.blocks.len(), 9);
        let x = DenseArray::from_fn([2, 2, 120, 18], |_| rng.normal(0.0, 1.0));
        let y = backbone_forward(&x, &graph(), &backbone).unwrap();
        assert_eq!(y.shape(), [2, 256, 30, 18]);
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let mut rng = Rng::new(1);
        let backbone = Backbone::new(&BackboneConfig::default().truncated(4), 18, &mut rng).unwrap();
        let y = backbone_forward(&DenseArray::zeros([1, 2, 12, 18]), &graph(), &backbone).unwrap();
        assert!(y.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn batch_permutation_permutes_output() {
        let mut rng = Rng::new(2);
        let cfg = BackboneConfig {
            channels: vec![4, 8],
            strides: vec![1, 2],
            kt: 3,
            residual: true,
        };
        let backbone = Backbone::new(&cfg, 18, &mut rng).unwrap();
        let x = DenseArray::from_fn([3, 2, 6, 18], |_| rng.normal(0.0, 1.0));
        let per = x.len() / 3;
        let order = [2, 0, 1];
        let permuted: Vec<f64> = order.iter().flat_map(|&i| x.data()[i * per..(i + 1) * per].to_vec()).collect();
        let xp = DenseArray::new([3, 2, 6, 18], permuted).unwrap();
        let g = graph();
        let y = backbone_forward(&x, &g, &backbone).unwrap();
        let yp = backbone_forward(&xp, &g, &backbone).unwrap();
        let per_out = y.len() / 3;
        for (k, &i) in order.iter().enumerate() {
            assert_eq!(&yp.data()[k * per_out..(k + 1) * per_out], &y.data()[i * per_out..(i + 1) * per_out]);
        }
    }

    #[test]
    fn rejects_wrong_channel_count() {
        let mut rng = Rng::new(3);
        let backbone = Backbone::new(&BackboneConfig::default().truncated(1), 18, &mut rng).unwrap();
        let err = backbone_forward(&DenseArray::zeros([1, 3, 4, 18]), &graph(), &backbone).unwrap_err();
        assert_eq!(err.category(), "dimension");
    }

    #[test]
    fn config_validation() {
        let mut cfg = BackboneConfig::default();
        cfg.kt = 4;
        assert!(cfg.validate().is_err());
        let cfg = BackboneConfig {
            strides: vec![1],
            ..BackboneConfig::default()
        };
        assert!(cfg.validate().is_err());
        assert_eq!(BackboneConfig::default().out_frames(120), 30);
    }
}
