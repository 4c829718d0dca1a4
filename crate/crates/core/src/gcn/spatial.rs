use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::numerics::gemm::{gemm, transpose, MatMut, MatRef};
use crate::numerics::{fan_in_uniform, DenseArray, Parameter, Rng};
use crate::skeleton::{PartitionedGraph, PARTITION_SUBSETS};

const K: usize = PARTITION_SUBSETS;

/// `sum_k W_k^T (f_in x (A_k ⊙ M_k))`.
///
/// Vertex `w` receives `f_in[v] * (A_k ⊙ M_k)[v][w]`; `W_k` mixes channels.
#[derive(Clone, Debug)]
pub struct SpatialConv {
    /// `[3, C_in, C_out]`
    pub weight: Parameter,
    /// `[3, V, V]`, all ones at initialisation.
    pub attention: Parameter,
}

impl SpatialConv {
    pub fn new(prefix: &str, c_in: usize, c_out: usize, joints: usize, rng: &mut Rng) -> Self {
        Self {
            weight: Parameter::new(
                format!("{prefix}.weight"),
                fan_in_uniform([K, c_in, c_out], c_in, rng),
            ),
            attention: Parameter::new(
                format!("{prefix}.attention"),
                DenseArray::filled([K, joints, joints], 1.0),
            ),
        }
    }

    pub fn c_in(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn c_out(&self) -> usize {
        self.weight.shape()[2]
    }

    pub fn joints(&self) -> usize {
        self.attention.shape()[1]
    }

    /// `A_norm_k ⊙ M_k` on the edges of the normalised graph.
    pub(crate) fn effective_adjacency(&self, graph: &PartitionedGraph) -> EffectiveAdjacency {
        let v = self.joints();
        let m = self.attention.value.data();
        let subsets = (0..K)
            .map(|k| {
                let a = graph.normalized(k).data();
                let mut edges = Vec::new();
                for u in 0..v {
                    for w in 0..v {
                        let i = u * v + w;
                        if a[i] != 0.0 {
                            edges.push(Edge { u, w, weight: a[i] * m[k * v * v + i] });
                        }
                    }
                }
                edges
            })
            .collect();
        EffectiveAdjacency { joints: v, subsets }
    }

    /// Folds the effective-adjacency gradient into the attention gradient.
    pub(crate) fn accumulate_attention(&mut self, graph: &PartitionedGraph, mut d_eff: Vec<f64>) {
        let v = self.joints();
        for k in 0..K {
            for (d, a) in d_eff[k * v * v..(k + 1) * v * v].iter_mut().zip(graph.normalized(k).data()) {
                *d *= a;
            }
        }
        self.attention.accumulate(&d_eff);
    }
}

/// Per-sample geometry of a spatial convolution.
#[derive(Clone, Copy, Debug)]
pub(crate) struct SpatialDims {
    pub c_in: usize,
    pub c_out: usize,
    pub frames: usize,
    pub joints: usize,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Edge {
    u: usize,
    w: usize,
    weight: f64,
}

/// Nonzero pattern of each normalised subset with the attention folded in.
/// Edges whose attention is zero are kept so their gradient is still produced.
#[derive(Clone, Debug)]
pub(crate) struct EffectiveAdjacency {
    joints: usize,
    subsets: Vec<Vec<Edge>>,
}

/// Neighbour aggregation for every subset, stacked: `[3 * C_in, T * V]`.
fn aggregate(x: &[f64], eff: &EffectiveAdjacency, d: SpatialDims) -> Vec<f64> {
    let v = d.joints;
    let len = d.c_in * d.frames * v;
    let mut s = vec![0.0; K * len];
    for (edges, block) in eff.subsets.iter().zip(s.chunks_mut(len)) {
        for (src, dst) in x.chunks_exact(v).zip(block.chunks_exact_mut(v)) {
            for e in edges {
                dst[e.w] += src[e.u] * e.weight;
            }
        }
    }
    s
}

pub(crate) fn forward_sample(x: &[f64], eff: &EffectiveAdjacency, weight: &[f64], d: SpatialDims, out: &mut [f64]) {
    let s = aggregate(x, eff, d);
    let tv = d.frames * d.joints;
    gemm(
        1.0,
        MatRef::row_major(weight, K * d.c_in, d.c_out).t(),
        MatRef::row_major(&s, K * d.c_in, tv),
        0.0,
        MatMut::row_major(out, d.c_out, tv),
    );
}

/// Writes `dL/dx` into `dx` and returns `(dL/dW, dL/d(A ⊙ M))` for this sample,
/// the latter dense `[3, V, V]` and zero off the graph.
pub(crate) fn backward_sample(
    x: &[f64],
    eff: &EffectiveAdjacency,
    weight: &[f64],
    d: SpatialDims,
    dz: &[f64],
    dx: &mut [f64],
) -> (Vec<f64>, Vec<f64>) {
    let s = aggregate(x, eff, d);
    let (v, tv) = (d.joints, d.frames * d.joints);
    debug_assert_eq!(v, eff.joints);

    let mut dw = vec![0.0; K * d.c_in * d.c_out];
    let (st, dzt) = (transpose(&s, K * d.c_in, tv), transpose(dz, d.c_out, tv));
    gemm(
        1.0,
        MatRef::row_major(&st, tv, K * d.c_in).t(),
        MatRef::row_major(&dzt, tv, d.c_out),
        0.0,
        MatMut::row_major(&mut dw, K * d.c_in, d.c_out),
    );

    let mut ds = vec![0.0; K * d.c_in * tv];
    gemm(
        1.0,
        MatRef::row_major(weight, K * d.c_in, d.c_out),
        MatRef::row_major(dz, d.c_out, tv),
        0.0,
        MatMut::row_major(&mut ds, K * d.c_in, tv),
    );

    dx.fill(0.0);
    let mut d_eff = vec![0.0; K * v * v];
    let len = d.c_in * tv;
    for (k, edges) in eff.subsets.iter().enumerate() {
        let ds_k = &ds[k * len..(k + 1) * len];
        let mut acc = vec![0.0; edges.len()];
        for ((src, g), dst) in x.chunks_exact(v).zip(ds_k.chunks_exact(v)).zip(dx.chunks_exact_mut(v)) {
            for (e, a) in edges.iter().zip(acc.iter_mut()) {
                dst[e.u] += g[e.w] * e.weight;
                *a += src[e.u] * g[e.w];
            }
        }
        for (e, a) in edges.iter().zip(acc) {
            d_eff[k * v * v + e.u * v + e.w] = a;
        }
    }
    (dw, d_eff)
}

/// Batched spatial graph convolution, `[N, C_in, T, V] -> [N, C_out, T, V]`.
pub fn spatial_graph_conv(
    f_in: &DenseArray,
    graph: &PartitionedGraph,
    conv: &SpatialConv,
) -> Result<DenseArray> {
    spatial_graph_conv_with(f_in, graph, conv, Execution::Sequential)
}

pub fn spatial_graph_conv_with(
    f_in: &DenseArray,
    graph: &PartitionedGraph,
    conv: &SpatialConv,
    exec: Execution,
) -> Result<DenseArray> {
    let &[n, c, t, v] = f_in.shape() else {
        return Err(Error::Dimension(format!("expected [N, C, T, V], got {:?}", f_in.shape())));
    };
    if v != graph.joint_count() || v != conv.joints() {
        return Err(Error::Dimension(format!(
            "input has {v} joints, graph {} and attention {}",
            graph.joint_count(),
            conv.joints()
        )));
    }
    if c != conv.c_in() {
        return Err(Error::Dimension(format!(
            "input has {c} channels, weights expect {}",
            conv.c_in()
        )));
    }
    let d = SpatialDims {
        c_in: c,
        c_out: conv.c_out(),
        frames: t,
        joints: v,
    };
    let eff = conv.effective_adjacency(graph);
    let mut out = vec![0.0; n * d.c_out * t * v];
    let x = f_in.data();
    exec::for_each_chunk_mut(exec, &mut out, d.c_out * t * v, |i, o| {
        forward_sample(&x[i * c * t * v..(i + 1) * c * t * v], &eff, conv.weight.value.data(), d, o)
    });
    let out = DenseArray::new([n, d.c_out, t, v], out)?;
    out.debug_assert_finite("spatial_graph_conv");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::JointLayout;

    fn chain() -> JointLayout {
        let names = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        JointLayout::new("chain", names, vec![(0, 1), (1, 2)], 1, vec![0]).unwrap()
    }

    /// Six nested loops over n, c_out, t, w, k, c_in (v summed innermost).
    fn oracle(x: &DenseArray, graph: &PartitionedGraph, conv: &SpatialConv) -> DenseArray {
        let [n, c_in, t, v] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
        let c_out = conv.c_out();
        let mut out = DenseArray::zeros([n, c_out, t, v]);
        for i in 0..n {
            for co in 0..c_out {
                for tt in 0..t {
                    for w in 0..v {
                        let mut acc = 0.0;
                        for k in 0..K {
                            for ci in 0..c_in {
                                let mut agg = 0.0;
                                for u in 0..v {
                                    let a = graph.normalized(k).at(&[u, w]) * conv.attention.value.at(&[k, u, w]);
                                    agg += x.at(&[i, ci, tt, u]) * a;
                                }
                                acc += conv.weight.value.at(&[k, ci, co]) * agg;
                            }
                        }
                        out.set(&[i, co, tt, w], acc);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn matches_nested_loop_oracle() {
        let graph = PartitionedGraph::build(&chain(), 0.001).unwrap();
        let mut rng = Rng::new(5);
        for _ in 0..5 {
            let mut conv = SpatialConv::new("s", 2, 3, 3, &mut rng);
            conv.attention.value = DenseArray::from_fn([K, 3, 3], |_| rng.uniform(0.5, 1.5));
            let x = DenseArray::from_fn([1, 2, 3, 3], |_| rng.normal(0.0, 1.0));
            let got = spatial_graph_conv(&x, &graph, &conv).unwrap();
            assert!(got.max_abs_diff(&oracle(&x, &graph, &conv)).unwrap() < 1e-12);
        }
    }

    #[test]
    fn identity_path() {
        let layout = chain();
        let graph = PartitionedGraph::build(&layout, 0.0).unwrap();
        let mut rng = Rng::new(1);
        let mut conv = SpatialConv::new("s", 2, 2, 3, &mut rng);
        let mut w = DenseArray::zeros([K, 2, 2]);
        w.set(&[0, 0, 0], 1.0);
        w.set(&[0, 1, 1], 1.0);
        conv.weight.value = w;
        let x = DenseArray::from_fn([2, 2, 4, 3], |_| rng.normal(0.0, 1.0));
        let y = spatial_graph_conv(&x, &graph, &conv).unwrap();
        assert!(y.max_abs_diff(&x).unwrap() < 1e-15);
    }

    #[test]
    fn zero_weights_give_zero() {
        let graph = PartitionedGraph::build(&chain(), 0.001).unwrap();
        let mut rng = Rng::new(2);
        let mut conv = SpatialConv::new("s", 2, 4, 3, &mut rng);
        conv.weight.value.fill(0.0);
        let x = DenseArray::from_fn([1, 2, 5, 3], |_| rng.normal(0.0, 1.0));
        assert!(spatial_graph_conv(&x, &graph, &conv).unwrap().data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn joint_mismatch() {
        let graph = PartitionedGraph::build(&chain(), 0.001).unwrap();
        let mut rng = Rng::new(2);
        let conv = SpatialConv::new("s", 2, 4, 3, &mut rng);
        let x = DenseArray::zeros([1, 2, 5, 4]);
        assert_eq!(spatial_graph_conv(&x, &graph, &conv).unwrap_err().category(), "dimension");
    }

    #[test]
    fn parallel_matches_sequential() {
        let graph = PartitionedGraph::build(&JointLayout::openpose18(), 0.001).unwrap();
        let mut rng = Rng::new(9);
        let conv = SpatialConv::new("s", 3, 5, 18, &mut rng);
        let x = DenseArray::from_fn([4, 3, 6, 18], |_| rng.normal(0.0, 1.0));
        let a = spatial_graph_conv_with(&x, &graph, &conv, Execution::Sequential).unwrap();
        let b = spatial_graph_conv_with(&x, &graph, &conv, Execution::Parallel).unwrap();
        assert_eq!(a.data(), b.data());
    }
}
