use std::path::Path;

use super::config::TrainConfig;
use crate::datapipe::sample_frames;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::gcn::{Backbone, INPUT_CHANNELS};
use crate::jrpm::{default_groups, Jrpm, PyramidSpec};
use crate::losses::{fusion_loss_grad, ArcfaceHead, FusionLossConfig};
use crate::numerics::{load_checkpoint, save_checkpoint, DenseArray, Parameter, Rng};
use crate::skeleton::{build_layout, PartitionedGraph, SkeletonSequence};

/// Loss components of one optimisation step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub iteration: usize,
    pub total: f64,
    pub triplet: f64,
    pub arcface: f64,
}

/// Graph, backbone, pyramid mapping and the arcface class head.
#[derive(Clone, Debug)]
pub struct JointsGait {
    graph: PartitionedGraph,
    pub backbone: Backbone,
    pub jrpm: Jrpm,
    pub arcface: ArcfaceHead,
    t_target: usize,
}

pub fn pyramid_spec(cfg: &TrainConfig) -> Result<PyramidSpec> {
    let joints = build_layout(cfg.layout).joint_count();
    let groups = cfg
        .scales
        .iter()
        .map(|s| match cfg.groups.get(s) {
            Some(g) => Ok(g.clone()),
            None => default_groups(cfg.layout, *s),
        })
        .collect::<Result<Vec<_>>>()?;
    PyramidSpec::new(joints, cfg.scales.clone(), groups, cfg.pool_mode)
}

/// Normalise, sample `t_target` frames and lay out as `2 x T x V`.
pub fn prepare_clip(raw: &SkeletonSequence, t_target: usize, rng: &mut Rng) -> Result<Vec<f64>> {
    Ok(sample_frames(&raw.normalized()?, t_target, rng).to_channels())
}

/// Stacks prepared clips into `[N, 2, T, V]`.
pub fn stack_clips(clips: Vec<Vec<f64>>, frames: usize, joints: usize) -> Result<DenseArray> {
    let n = clips.len();
    DenseArray::new([n, INPUT_CHANNELS, frames, joints], clips.concat())
}

impl JointsGait {
    pub fn new(cfg: &TrainConfig, num_classes: usize, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        if num_classes == 0 {
            return Err(Error::Config("the arcface head needs at least one class".into()));
        }
        let layout = build_layout(cfg.layout);
        let graph = PartitionedGraph::build(&layout, cfg.alpha)?;
        let backbone = Backbone::new(&cfg.backbone, layout.joint_count(), rng)?;
        let frames = backbone.out_frames(cfg.t_target);
        let jrpm = Jrpm::new(pyramid_spec(cfg)?, backbone.out_channels(), frames, cfg.d_out, rng);
        let arcface = ArcfaceHead::new(num_classes, jrpm.embedding_dim(), rng);
        Ok(Self {
            graph,
            backbone,
            jrpm,
            arcface,
            t_target: cfg.t_target,
        })
    }

    pub fn graph(&self) -> &PartitionedGraph {
        &self.graph
    }

    pub fn t_target(&self) -> usize {
        self.t_target
    }

    pub fn joint_count(&self) -> usize {
        self.graph.joint_count()
    }

    pub fn embedding_dim(&self) -> usize {
        self.jrpm.embedding_dim()
    }

    pub fn parameters(&self) -> Vec<&Parameter> {
        let mut p = self.backbone.parameters();
        p.extend(self.jrpm.parameters());
        p.push(&self.arcface.weight);
        p
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut p = self.backbone.parameters_mut();
        p.extend(self.jrpm.parameters_mut());
        p.push(&mut self.arcface.weight);
        p
    }

    /// Parameters followed by batch-norm running statistics.
    pub fn state(&self) -> Vec<(String, DenseArray)> {
        let mut s: Vec<(String, DenseArray)> = self
            .parameters()
            .into_iter()
            .map(|p| (p.name.clone(), p.value.clone()))
            .collect();
        s.extend(self.backbone.buffers());
        s
    }

    /// Requires exactly the names and shapes of [`JointsGait::state`], in any order.
    pub fn load_state(&mut self, records: Vec<(String, DenseArray)>) -> Result<()> {
        let mut by_name: std::collections::HashMap<String, DenseArray> = records.into_iter().collect();
        let mut fill = |name: &str, slot: &mut DenseArray| -> Result<()> {
            let v = by_name
                .remove(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing record `{name}`")))?;
            if v.shape() != slot.shape() {
                return Err(Error::Checkpoint(format!(
                    "record `{name}` has shape {:?}, model expects {:?}",
                    v.shape(),
                    slot.shape()
                )));
            }
            *slot = v;
            Ok(())
        };
        for p in self.parameters_mut() {
            fill(&p.name, &mut p.value)?;
        }
        for (name, slot) in self.backbone.buffers_mut() {
            fill(&name, slot)?;
        }
        if let Some(extra) = by_name.keys().min() {
            return Err(Error::Checkpoint(format!("unexpected record `{extra}`")));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(path, &self.state())
    }

    /// Rebuilds the model described by `cfg` and fills it from a checkpoint.
    pub fn load(cfg: &TrainConfig, path: &Path) -> Result<Self> {
        let records = load_checkpoint(path)?;
        let classes = records
            .iter()
            .find(|(n, _)| n == "arcface.weight")
            .map(|(_, a)| a.shape()[0])
            .ok_or_else(|| Error::Checkpoint(format!("{}: no arcface.weight record", path.display())))?;
        let mut model = Self::new(cfg, classes, &mut Rng::new(0))?;
        model
            .load_state(records)
            .map_err(|e| Error::Checkpoint(format!("{}: {}", path.display(), e.to_string().trim_start_matches("checkpoint: "))))?;
        Ok(model)
    }

    /// Inference embeddings `[N, D_out * B]` with unit rows.
    pub fn embed(&self, x: &DenseArray, exec: Execution) -> Result<DenseArray> {
        let f_st = self.backbone.forward_eval(x, &self.graph, exec)?;
        Ok(self.jrpm.forward(&f_st, exec)?.embedding)
    }

    /// Fusion loss in training mode, without touching gradients or statistics.
    pub fn loss(&self, x: &DenseArray, labels: &[usize], cfg: &FusionLossConfig, exec: Execution) -> Result<f64> {
        let cache = self.backbone.forward_train(x, &self.graph, exec)?;
        let f_st = self.backbone.output_of(cache)?;
        let out = self.jrpm.forward(&f_st, exec)?;
        Ok(fusion_loss_grad(&out.embedding, labels, &self.arcface, cfg)?.total)
    }

    /// Zeroes gradients, then runs forward and backward in training mode and
    /// folds the batch statistics into the running averages.
    pub fn forward_backward(
        &mut self,
        x: &DenseArray,
        labels: &[usize],
        cfg: &FusionLossConfig,
        exec: Execution,
    ) -> Result<LossRecord> {
        for p in self.parameters_mut() {
            p.zero_grad();
        }
        let cache = self.backbone.forward_train(x, &self.graph, exec)?;
        let n = x.shape()[0];
        let f_st = DenseArray::new(
            [n, self.backbone.out_channels(), self.jrpm.frames(), self.joint_count()],
            cache.output().to_vec(),
        )?;
        let out = self.jrpm.forward(&f_st, exec)?;
        let loss = fusion_loss_grad(&out.embedding, labels, &self.arcface, cfg)?;
        self.arcface.weight.accumulate(loss.d_weight.data());
        let d_fst = self.jrpm.backward(&f_st, &out, &loss.d_embedding, exec)?;
        self.backbone.backward(&self.graph, &cache, d_fst.into_data(), exec);
        self.backbone.update_running_stats(&cache);
        Ok(LossRecord {
            iteration: 0,
            total: loss.total,
            triplet: loss.triplet,
            arcface: loss.arcface,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> TrainConfig {
        let mut c = TrainConfig::default();
        c.backbone = c.backbone.truncated(2);
        c.backbone.channels = vec![4, 6];
        c.backbone.kt = 3;
        c.t_target = 8;
        c.d_out = 5;
        c
    }

    #[test]
    fn state_round_trip() {
        let cfg = tiny();
        let a = JointsGait::new(&cfg, 3, &mut Rng::new(1)).unwrap();
        let mut b = JointsGait::new(&cfg, 3, &mut Rng::new(2)).unwrap();
        b.load_state(a.state()).unwrap();
        assert_eq!(a.state(), b.state());
    }

    #[test]
    fn state_shape_mismatch() {
        let a = JointsGait::new(&tiny(), 3, &mut Rng::new(1)).unwrap();
        let mut cfg = tiny();
        cfg.d_out = 6;
        let mut b = JointsGait::new(&cfg, 3, &mut Rng::new(1)).unwrap();
        assert_eq!(b.load_state(a.state()).unwrap_err().category(), "checkpoint");
        let mut state = a.state();
        state.pop();
        let mut c = JointsGait::new(&tiny(), 3, &mut Rng::new(1)).unwrap();
        assert!(c.load_state(state).is_err());
    }

    #[test]
    fn parameter_names_are_unique() {
        let m = JointsGait::new(&tiny(), 3, &mut Rng::new(0)).unwrap();
        let mut names: Vec<String> = m.state().into_iter().map(|(n, _)| n).collect();
        let count = names.len();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), count);
    }

    #[test]
    fn embeddings_have_unit_rows() {
        let cfg = tiny();
        let m = JointsGait::new(&cfg, 3, &mut Rng::new(0)).unwrap();
        let mut rng = Rng::new(5);
        let x = DenseArray::from_fn([3, 2, 8, 18], |_| rng.normal(0.0, 1.0));
        let e = m.embed(&x, Execution::Sequential).unwrap();
        assert_eq!(e.shape(), [3, 5 * 6]);
        for r in e.data().chunks(30) {
            assert!((r.iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0).abs() < 1e-12);
        }
    }
}
