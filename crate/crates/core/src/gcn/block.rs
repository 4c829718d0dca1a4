use super::norm::{self, BatchNorm, NormStats};
use super::spatial::{self, SpatialConv, SpatialDims};
use super::temporal::{self, output_frames, TemporalConv, TemporalDims};
use crate::error::Result;
use crate::exec::{self, Execution};
use crate::numerics::gemm::{gemm, MatMut, MatRef};
use crate::numerics::{fan_in_uniform, Parameter, Rng};
use crate::skeleton::PartitionedGraph;

/// Shortcut path added before the block's final rectifier.
#[derive(Clone, Debug)]
pub enum Residual {
    None,
    Identity,
    /// 1x1 channel projection `[C_out, C_in]` sampled at the block's temporal stride.
    Projection(Parameter),
}

/// spatial conv -> BN -> ReLU -> temporal conv -> BN -> (+ residual) -> ReLU
#[derive(Clone, Debug)]
pub struct GcnBlock {
    pub spatial: SpatialConv,
    pub bn_spatial: BatchNorm,
    pub temporal: TemporalConv,
    pub bn_temporal: BatchNorm,
    pub residual: Residual,
}

/// Activations kept from a training forward pass.
#[derive(Clone, Debug)]
pub(crate) struct BlockCache {
    /// normalised spatial output, `[N, C_out, T_in, V]`
    zhat: Vec<f64>,
    stats_spatial: NormStats,
    /// normalised temporal output, `[N, C_out, T_out, V]`
    uhat: Vec<f64>,
    stats_temporal: NormStats,
    /// block output, `[N, C_out, T_out, V]`
    pub out: Vec<f64>,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct BlockShape {
    pub n: usize,
    pub frames: usize,
    pub joints: usize,
}

impl GcnBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        prefix: &str,
        c_in: usize,
        c_out: usize,
        joints: usize,
        kt: usize,
        stride: usize,
        residual: bool,
        rng: &mut Rng,
    ) -> Result<Self> {
        let spatial = SpatialConv::new(&format!("{prefix}.spatial"), c_in, c_out, joints, rng);
        let temporal = TemporalConv::new(&format!("{prefix}.temporal"), c_out, c_out, kt, stride, rng)?;
        let residual = match residual {
            false => Residual::None,
            true if c_in == c_out && stride == 1 => Residual::Identity,
            true => Residual::Projection(Parameter::new(
                format!("{prefix}.residual.weight"),
                fan_in_uniform([c_out, c_in], c_in, rng),
            )),
        };
        Ok(Self {
            spatial,
            bn_spatial: BatchNorm::new(&format!("{prefix}.bn_spatial"), c_out),
            temporal,
            bn_temporal: BatchNorm::new(&format!("{prefix}.bn_temporal"), c_out),
            residual,
        })
    }

    pub fn c_in(&self) -> usize {
        self.spatial.c_in()
    }

    pub fn c_out(&self) -> usize {
        self.spatial.c_out()
    }

    pub fn stride(&self) -> usize {
        self.temporal.stride
    }

    pub fn parameters(&self) -> Vec<&Parameter> {
        let mut p = vec![
            &self.spatial.weight,
            &self.spatial.attention,
            &self.bn_spatial.gamma,
            &self.bn_spatial.beta,
            &self.temporal.kernel,
            &self.bn_temporal.gamma,
            &self.bn_temporal.beta,
        ];
        if let Residual::Projection(w) = &self.residual {
            p.push(w);
        }
        p
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut p = vec![
            &mut self.spatial.weight,
            &mut self.spatial.attention,
            &mut self.bn_spatial.gamma,
            &mut self.bn_spatial.beta,
            &mut self.temporal.kernel,
            &mut self.bn_temporal.gamma,
            &mut self.bn_temporal.beta,
        ];
        if let Residual::Projection(w) = &mut self.residual {
            p.push(w);
        }
        p
    }

    fn spatial_dims(&self, s: BlockShape) -> SpatialDims {
        SpatialDims {
            c_in: self.c_in(),
            c_out: self.c_out(),
            frames: s.frames,
            joints: s.joints,
        }
    }

    fn temporal_dims(&self, s: BlockShape) -> TemporalDims {
        TemporalDims {
            c_in: self.c_out(),
            c_out: self.c_out(),
            frames: s.frames,
            joints: s.joints,
            width: self.temporal.width(),
            stride: self.stride(),
        }
    }

    /// Forward over a whole batch. `training` selects batch statistics and
    /// returns the activations needed by [`GcnBlock::backward`].
    pub(crate) fn forward(
        &self,
        graph: &PartitionedGraph,
        x: &[f64],
        s: BlockShape,
        training: bool,
        exec: Execution,
    ) -> BlockCache {
        let (c_in, c_out, v) = (self.c_in(), self.c_out(), s.joints);
        let t_out = output_frames(s.frames, self.stride());
        let (l_in, l_out) = (s.frames * v, t_out * v);
        let sd = self.spatial_dims(s);
        let td = self.temporal_dims(s);
        let eff = self.spatial.effective_adjacency(graph);
        let weight = self.spatial.weight.value.data();

        let mut zhat = vec![0.0; s.n * c_out * l_in];
        exec::for_each_chunk_mut(exec, &mut zhat, c_out * l_in, |i, z| {
            spatial::forward_sample(&x[i * c_in * l_in..(i + 1) * c_in * l_in], &eff, weight, sd, z)
        });
        let stats_spatial = if training {
            norm::batch_stats(exec, &zhat, s.n, c_out, l_in)
        } else {
            self.bn_spatial.running_stats()
        };
        norm::normalize_in_place(exec, &mut zhat, c_out, l_in, &stats_spatial);

        let (g1, b1) = (self.bn_spatial.gamma.value.data(), self.bn_spatial.beta.value.data());
        let kernel = self.temporal.kernel.value.data();
        let mut uhat = vec![0.0; s.n * c_out * l_out];
        exec::for_each_chunk_mut(exec, &mut uhat, c_out * l_out, |i, u| {
            let h = norm::affine_relu(&zhat[i * c_out * l_in..(i + 1) * c_out * l_in], g1, b1, l_in);
            temporal::forward_sample(&h, kernel, td, u)
        });
        let stats_temporal = if training {
            norm::batch_stats(exec, &uhat, s.n, c_out, l_out)
        } else {
            self.bn_temporal.running_stats()
        };
        norm::normalize_in_place(exec, &mut uhat, c_out, l_out, &stats_temporal);

        let (g2, b2) = (self.bn_temporal.gamma.value.data(), self.bn_temporal.beta.value.data());
        let mut out = vec![0.0; s.n * c_out * l_out];
        exec::for_each_chunk_mut(exec, &mut out, c_out * l_out, |i, o| {
            self.residual_forward(&x[i * c_in * l_in..(i + 1) * c_in * l_in], s, o);
            let u = &uhat[i * c_out * l_out..(i + 1) * c_out * l_out];
            for ch in 0..c_out {
                let range = ch * l_out..(ch + 1) * l_out;
                for (o, u) in o[range.clone()].iter_mut().zip(&u[range]) {
                    *o = (g2[ch] * u + b2[ch] + *o).max(0.0);
                }
            }
        });

        BlockCache {
            zhat,
            stats_spatial,
            uhat,
            stats_temporal,
            out,
        }
    }

    /// Writes the shortcut for one sample into `out`.
    fn residual_forward(&self, x: &[f64], s: BlockShape, out: &mut [f64]) {
        match &self.residual {
            Residual::None => out.fill(0.0),
            Residual::Identity => out.copy_from_slice(x),
            Residual::Projection(w) => {
                let strided = stride_frames(x, self.c_in(), s.frames, s.joints, self.stride());
                let n = strided.len() / self.c_in();
                gemm(
                    1.0,
                    MatRef::row_major(w.value.data(), self.c_out(), self.c_in()),
                    MatRef::row_major(&strided, self.c_in(), n),
                    0.0,
                    MatMut::row_major(out, self.c_out(), n),
                );
            }
        }
    }

    /// Backward over a whole batch. Accumulates parameter gradients and returns `dL/dx`.
    pub(crate) fn backward(
        &mut self,
        graph: &PartitionedGraph,
        x: &[f64],
        s: BlockShape,
        cache: &BlockCache,
        mut dout: Vec<f64>,
        exec: Execution,
    ) -> Vec<f64> {
        let (c_in, c_out, v) = (self.c_in(), self.c_out(), s.joints);
        let t_out = output_frames(s.frames, self.stride());
        let (l_in, l_out) = (s.frames * v, t_out * v);
        let stride = self.stride();

        // through the final rectifier
        exec::for_each_chunk_mut(exec, &mut dout, c_out * l_out, |i, d| {
            for (d, o) in d.iter_mut().zip(&cache.out[i * c_out * l_out..]) {
                if *o <= 0.0 {
                    *d = 0.0;
                }
            }
        });
        let dpre = dout;

        // shortcut
        let residual_parts: Vec<(Vec<f64>, Option<Vec<f64>>)> = exec::map(exec, s.n, |i| {
            let d = &dpre[i * c_out * l_out..(i + 1) * c_out * l_out];
            match &self.residual {
                Residual::None => (vec![0.0; c_in * l_in], None),
                Residual::Identity => (d.to_vec(), None),
                Residual::Projection(w) => {
                    let xi = &x[i * c_in * l_in..(i + 1) * c_in * l_in];
                    let strided = stride_frames(xi, c_in, s.frames, v, stride);
                    let mut dw = vec![0.0; c_out * c_in];
                    gemm(
                        1.0,
                        MatRef::row_major(d, c_out, l_out),
                        MatRef::row_major(&strided, c_in, l_out).t(),
                        0.0,
                        MatMut::row_major(&mut dw, c_out, c_in),
                    );
                    let mut dstrided = vec![0.0; c_in * l_out];
                    gemm(
                        1.0,
                        MatRef::row_major(w.value.data(), c_out, c_in).t(),
                        MatRef::row_major(d, c_out, l_out),
                        0.0,
                        MatMut::row_major(&mut dstrided, c_in, l_out),
                    );
                    let mut dx = vec![0.0; c_in * l_in];
                    unstride_frames_add(&dstrided, c_in, s.frames, v, stride, &mut dx);
                    (dx, Some(dw))
                }
            }
        });

        // temporal batch norm
        let (sum_dy2, sum_dyx2) = norm::backward_sums(exec, &dpre, &cache.uhat, s.n, c_out, l_out);

        // temporal conv and the spatial rectifier
        let td = self.temporal_dims(s);
        let (g1, b1) = (self.bn_spatial.gamma.value.data(), self.bn_spatial.beta.value.data());
        let g2 = self.bn_temporal.gamma.value.data();
        let kernel = self.temporal.kernel.value.data();
        let mut dy1 = vec![0.0; s.n * c_out * l_in];
        let kernel_parts: Vec<Vec<f64>> = exec::map_chunks_mut(exec, &mut dy1, c_out * l_in, |i, dy1| {
            let range_out = i * c_out * l_out..(i + 1) * c_out * l_out;
            let mut du = vec![0.0; c_out * l_out];
            norm::backward_input_sample(
                &dpre[range_out.clone()],
                &cache.uhat[range_out],
                g2,
                &cache.stats_temporal,
                &sum_dy2,
                &sum_dyx2,
                l_out,
                &mut du,
            );
            let h = norm::affine_relu(&cache.zhat[i * c_out * l_in..(i + 1) * c_out * l_in], g1, b1, l_in);
            let dk = temporal::backward_sample(&h, kernel, td, &du, dy1);
            for (d, h) in dy1.iter_mut().zip(&h) {
                if *h <= 0.0 {
                    *d = 0.0;
                }
            }
            dk
        });

        // spatial batch norm
        let (sum_dy1, sum_dyx1) = norm::backward_sums(exec, &dy1, &cache.zhat, s.n, c_out, l_in);

        // spatial graph conv
        let sd = self.spatial_dims(s);
        let eff = self.spatial.effective_adjacency(graph);
        let weight = self.spatial.weight.value.data();
        let mut dx = vec![0.0; s.n * c_in * l_in];
        let spatial_parts: Vec<(Vec<f64>, Vec<f64>)> = exec::map_chunks_mut(exec, &mut dx, c_in * l_in, |i, dx| {
            let range = i * c_out * l_in..(i + 1) * c_out * l_in;
            let mut dz = vec![0.0; c_out * l_in];
            norm::backward_input_sample(
                &dy1[range.clone()],
                &cache.zhat[range],
                g1,
                &cache.stats_spatial,
                &sum_dy1,
                &sum_dyx1,
                l_in,
                &mut dz,
            );
            let grads = spatial::backward_sample(&x[i * c_in * l_in..(i + 1) * c_in * l_in], &eff, weight, sd, &dz, dx);
            for (a, b) in dx.iter_mut().zip(&residual_parts[i].0) {
                *a += b;
            }
            grads
        });

        // parameter gradients, summed in sample order
        let dw = exec::sum_in_order(spatial_parts.iter().map(|p| p.0.as_slice()), self.spatial.weight.value.len());
        let d_eff = exec::sum_in_order(spatial_parts.iter().map(|p| p.1.as_slice()), self.spatial.attention.value.len());
        self.spatial.weight.accumulate(&dw);
        self.spatial.accumulate_attention(graph, d_eff);
        self.bn_spatial.gamma.accumulate(&sum_dyx1);
        self.bn_spatial.beta.accumulate(&sum_dy1);
        let dk = exec::sum_in_order(kernel_parts.iter().map(Vec::as_slice), self.temporal.kernel.value.len());
        self.temporal.kernel.accumulate(&dk);
        self.bn_temporal.gamma.accumulate(&sum_dyx2);
        self.bn_temporal.beta.accumulate(&sum_dy2);
        if let Residual::Projection(w) = &mut self.residual {
            let dw = exec::sum_in_order(
                residual_parts.iter().filter_map(|p| p.1.as_deref()),
                w.value.len(),
            );
            w.accumulate(&dw);
        }
        dx
    }

    pub(crate) fn update_running_stats(&mut self, cache: &BlockCache) {
        self.bn_spatial.update_running(&cache.stats_spatial);
        self.bn_temporal.update_running(&cache.stats_temporal);
    }
}

/// Frames `0, stride, 2 * stride, ...` of a `[C, T, V]` sample.
fn stride_frames(x: &[f64], c: usize, frames: usize, joints: usize, stride: usize) -> Vec<f64> {
    if stride == 1 {
        return x.to_vec();
    }
    let t_out = output_frames(frames, stride);
    let mut out = Vec::with_capacity(c * t_out * joints);
    for ch in 0..c {
        for to in 0..t_out {
            let src = (ch * frames + to * stride) * joints;
            out.extend_from_slice(&x[src..src + joints]);
        }
    }
    out
}

fn unstride_frames_add(d: &[f64], c: usize, frames: usize, joints: usize, stride: usize, dx: &mut [f64]) {
    let t_out = output_frames(frames, stride);
    for ch in 0..c {
        for to in 0..t_out {
            let dst = (ch * frames + to * stride) * joints;
            let src = (ch * t_out + to) * joints;
            for (a, b) in dx[dst..dst + joints].iter_mut().zip(&d[src..src + joints]) {
                *a += b;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{grad_check_detailed, DenseArray, FnObjective};
    use crate::skeleton::JointLayout;

    fn layout() -> JointLayout {
        let names = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
        JointLayout::new("toy", names, vec![(0, 1), (1, 2), (1, 3)], 1, vec![2]).unwrap()
    }

    fn check_block(c_in: usize, c_out: usize, stride: usize, residual: bool, seed: u64) {
        let graph = PartitionedGraph::build(&layout(), 0.001).unwrap();
        let mut rng = Rng::new(seed);
        let mut block = GcnBlock::new("b", c_in, c_out, 4, 3, stride, residual, &mut rng).unwrap();
        for p in block.parameters_mut() {
            if p.name.ends_with("attention") || p.name.ends_with("gamma") || p.name.ends_with("beta") {
                let base = if p.name.ends_with("beta") { 0.0 } else { 1.0 };
                p.value = DenseArray::from_fn(p.shape().to_vec(), |_| base + rng.uniform(-0.3, 0.3));
            }
        }
        let s = BlockShape { n: 3, frames: 5, joints: 4 };
        let x = DenseArray::from_fn([3, c_in, 5, 4], |_| rng.normal(0.0, 1.0));
        let t_out = output_frames(5, stride);
        let r = DenseArray::from_fn([3 * c_out * t_out * 4], |_| rng.normal(0.0, 1.0));

        let with = |inputs: &[DenseArray]| {
            let mut b = block.clone();
            for (p, v) in b.parameters_mut().into_iter().zip(&inputs[1..]) {
                p.value = v.clone();
                p.zero_grad();
            }
            b
        };
        let obj = FnObjective {
            value: |inputs: &[DenseArray]| {
                let b = with(inputs);
                let cache = b.forward(&graph, inputs[0].data(), s, true, Execution::Sequential);
                Ok(DenseArray::scalar(cache.out.iter().zip(r.data()).map(|(a, b)| a * b).sum()))
            },
            grad: |inputs: &[DenseArray]| {
                let mut b = with(inputs);
                let cache = b.forward(&graph, inputs[0].data(), s, true, Execution::Sequential);
                let dx = b.backward(&graph, inputs[0].data(), s, &cache, r.data().to_vec(), Execution::Sequential);
                let mut grads = vec![DenseArray::new(inputs[0].shape(), dx)?];
                grads.extend(b.parameters().into_iter().map(|p| p.grad.clone()));
                Ok(grads)
            },
        };
        let mut inputs = vec![x];
        inputs.extend(block.parameters().into_iter().map(|p| p.value.clone()));
        let report = grad_check_detailed(&obj, &inputs, 1e-5).unwrap();
        assert!(report.max_relative_error < 1e-4, "{report:?}");
    }

    #[test]
    fn gradient_identity_residual() {
        for seed in 0..3 {
            check_block(3, 3, 1, true, seed);
        }
    }

    #[test]
    fn gradient_projection_residual() {
        for seed in 0..3 {
            check_block(2, 3, 2, true, 10 + seed);
        }
    }

    #[test]
    fn gradient_without_residual() {
        check_block(2, 2, 1, false, 20);
    }

    #[test]
    fn sequential_and_parallel_agree_bitwise() {
        let graph = PartitionedGraph::build(&JointLayout::openpose18(), 0.001).unwrap();
        let mut rng = Rng::new(3);
        let block = GcnBlock::new("b", 2, 4, 18, 3, 2, true, &mut rng).unwrap();
        let s = BlockShape { n: 4, frames: 6, joints: 18 };
        let x: Vec<f64> = (0..4 * 2 * 6 * 18).map(|_| rng.normal(0.0, 1.0)).collect();
        let run = |exec| {
            let mut b = block.clone();
            let cache = b.forward(&graph, &x, s, true, exec);
            let dx = b.backward(&graph, &x, s, &cache, cache.out.clone(), exec);
            let grads: Vec<Vec<f64>> = b.parameters().iter().map(|p| p.grad.data().to_vec()).collect();
            (cache.out, dx, grads)
        };
        assert_eq!(run(Execution::Sequential), run(Execution::Parallel));
    }
}
