use super::pyramid::{PoolMode, PyramidSpec};
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::numerics::{fan_in_uniform, DenseArray, Parameter, Rng};

/// Pooling kernel and fully connected map of one strip.
#[derive(Clone, Debug)]
pub struct StripHead {
    /// `[J, T'']`; absent in `mean_plus_max` mode.
    pub kernel: Option<Parameter>,
    /// `[C_pool, D_out]`
    pub fc: Parameter,
}

impl StripHead {
    pub fn d_out(&self) -> usize {
        self.fc.shape()[1]
    }

    pub fn c_pool(&self) -> usize {
        self.fc.shape()[0]
    }
}

/// Pyramid pooling followed by per-strip mapping and L2 normalisation.
#[derive(Clone, Debug)]
pub struct Jrpm {
    pub spec: PyramidSpec,
    pub heads: Vec<StripHead>,
    frames: usize,
}

/// Intermediate values of one forward pass.
#[derive(Clone, Debug)]
pub struct JrpmOutput {
    /// `[N, C, B]`
    pub pooled: DenseArray,
    /// `[N, D_out, B]` before normalisation
    pub mapped: DenseArray,
    /// `[N, D_out * B]`, unit rows
    pub embedding: DenseArray,
}

impl Jrpm {
    /// `frames` is the temporal length of `F_ST` the kernels are sized for.
    pub fn new(spec: PyramidSpec, channels: usize, frames: usize, d_out: usize, rng: &mut Rng) -> Self {
        let heads = spec
            .strips()
            .enumerate()
            .map(|(b, joints)| StripHead {
                kernel: (spec.pool_mode() == PoolMode::LearnedKernel).then(|| {
                    let j = joints.len();
                    Parameter::new(
                        format!("jrpm.{b}.kernel"),
                        DenseArray::filled([j, frames], 1.0 / (j * frames) as f64),
                    )
                }),
                fc: Parameter::new(format!("jrpm.{b}.fc"), fan_in_uniform([channels, d_out], channels, rng)),
            })
            .collect();
        Self { spec, heads, frames }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn d_out(&self) -> usize {
        self.heads.first().map_or(0, StripHead::d_out)
    }

    pub fn embedding_dim(&self) -> usize {
        self.d_out() * self.heads.len()
    }

    pub fn parameters(&self) -> Vec<&Parameter> {
        self.heads
            .iter()
            .flat_map(|h| h.kernel.iter().chain(std::iter::once(&h.fc)))
            .collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        self.heads
            .iter_mut()
            .flat_map(|h| h.kernel.iter_mut().chain(std::iter::once(&mut h.fc)))
            .collect()
    }

    pub fn forward(&self, f_st: &DenseArray, exec: Execution) -> Result<JrpmOutput> {
        let pooled = jrpp_pool_with(f_st, &self.spec, &self.heads, exec)?;
        let mapped = map_strips(&pooled, &self.heads)?;
        let embedding = flatten_normalize(&mapped)?;
        Ok(JrpmOutput {
            pooled,
            mapped,
            embedding,
        })
    }

    /// Accumulates head gradients given `dL/d embedding`; returns `dL/dF_ST`.
    pub fn backward(
        &mut self,
        f_st: &DenseArray,
        out: &JrpmOutput,
        d_embedding: &DenseArray,
        exec: Execution,
    ) -> Result<DenseArray> {
        let shape = f_st.shape().to_vec();
        let (n, c, t, v) = (shape[0], shape[1], shape[2], shape[3]);
        let b_count = self.heads.len();
        let d_out = self.d_out();
        let e_dim = d_out * b_count;
        if d_embedding.shape() != [n, e_dim] {
            return Err(Error::Dimension(format!(
                "embedding gradient has shape {:?}, expected [{n}, {e_dim}]",
                d_embedding.shape()
            )));
        }
        let strips: Vec<&[usize]> = self.spec.strips().collect();
        let heads = &self.heads;
        let x = f_st.data();

        let mut dx = vec![0.0; n * c * t * v];
        let parts: Vec<Vec<Vec<f64>>> = exec::map_chunks_mut(exec, &mut dx, c * t * v, |i, dxi| {
            let y = &out.mapped.data()[i * e_dim..(i + 1) * e_dim];
            let e = &out.embedding.data()[i * e_dim..(i + 1) * e_dim];
            let de = &d_embedding.data()[i * e_dim..(i + 1) * e_dim];
            let dy = normalize_backward(y, e, de);
            let pooled = &out.pooled.data()[i * c * b_count..(i + 1) * c * b_count];
            let xi = &x[i * c * t * v..(i + 1) * c * t * v];

            let mut grads = Vec::with_capacity(2 * b_count);
            for (b, head) in heads.iter().enumerate() {
                // fc: mapped[d][b] = sum_c pooled[c][b] * fc[c][d]
                let fc = head.fc.value.data();
                let mut dfc = vec![0.0; c * d_out];
                let mut dp = vec![0.0; c];
                for ch in 0..c {
                    let p = pooled[ch * b_count + b];
                    let row = &fc[ch * d_out..(ch + 1) * d_out];
                    let drow = &mut dfc[ch * d_out..(ch + 1) * d_out];
                    let mut acc = 0.0;
                    for d in 0..d_out {
                        let g = dy[d * b_count + b];
                        drow[d] = p * g;
                        acc += row[d] * g;
                    }
                    dp[ch] = acc;
                }
                let dk = pool_backward(xi, strips[b], head, &dp, t, v, dxi);
                grads.push(dk);
                grads.push(dfc);
            }
            grads
        });

        for (b, head) in self.heads.iter_mut().enumerate() {
            if let Some(k) = &mut head.kernel {
                let dk = exec::sum_in_order(parts.iter().map(|p| p[2 * b].as_slice()), k.value.len());
                k.accumulate(&dk);
            }
            let dfc = exec::sum_in_order(parts.iter().map(|p| p[2 * b + 1].as_slice()), head.fc.value.len());
            head.fc.accumulate(&dfc);
        }
        DenseArray::new(shape, dx)
    }
}

fn check_pool_input(f_st: &DenseArray, spec: &PyramidSpec, heads: &[StripHead]) -> Result<[usize; 4]> {
    let &[n, c, t, v] = f_st.shape() else {
        return Err(Error::Dimension(format!("expected [N, C, T, V], got {:?}", f_st.shape())));
    };
    if v != spec.joint_count() {
        return Err(Error::Dimension(format!(
            "input has {v} joints, pyramid was built for {}",
            spec.joint_count()
        )));
    }
    if heads.len() != spec.strip_count() {
        return Err(Error::Spec(format!(
            "{} strip heads for {} strips",
            heads.len(),
            spec.strip_count()
        )));
    }
    for (b, (head, joints)) in heads.iter().zip(spec.strips()).enumerate() {
        if let Some(&j) = joints.iter().find(|&&j| j >= v) {
            return Err(Error::Spec(format!("strip {b} references joint {j}, input has {v}")));
        }
        match (&head.kernel, spec.pool_mode()) {
            (Some(k), PoolMode::LearnedKernel) => {
                if k.shape() != [joints.len(), t] {
                    return Err(Error::Dimension(format!(
                        "strip {b} kernel has shape {:?}, input needs [{}, {t}]",
                        k.shape(),
                        joints.len()
                    )));
                }
            }
            (None, PoolMode::MeanPlusMax) => {}
            _ => return Err(Error::Spec(format!("strip {b} head does not match the pool mode"))),
        }
    }
    Ok([n, c, t, v])
}

fn pool_strip(xi: &[f64], joints: &[usize], head: &StripHead, t: usize, v: usize, out: &mut [f64]) {
    for (ch, o) in out.iter_mut().enumerate() {
        let plane = &xi[ch * t * v..(ch + 1) * t * v];
        *o = match &head.kernel {
            Some(k) => {
                let k = k.value.data();
                let mut acc = 0.0;
                for (jj, &j) in joints.iter().enumerate() {
                    for tt in 0..t {
                        acc += plane[tt * v + j] * k[jj * t + tt];
                    }
                }
                acc
            }
            None => {
                let mut sum = 0.0;
                let mut max = f64::NEG_INFINITY;
                for tt in 0..t {
                    for &j in joints {
                        let val = plane[tt * v + j];
                        sum += val;
                        max = max.max(val);
                    }
                }
                sum / (t * joints.len()) as f64 + max
            }
        };
    }
}

/// Adds the strip's share of `dL/dF_ST` into `dxi`; returns the kernel gradient (empty without a kernel).
fn pool_backward(
    xi: &[f64],
    joints: &[usize],
    head: &StripHead,
    dp: &[f64],
    t: usize,
    v: usize,
    dxi: &mut [f64],
) -> Vec<f64> {
    match &head.kernel {
        Some(k) => {
            let k = k.value.data();
            let mut dk = vec![0.0; joints.len() * t];
            for (ch, &g) in dp.iter().enumerate() {
                let plane = &xi[ch * t * v..(ch + 1) * t * v];
                let dplane = &mut dxi[ch * t * v..(ch + 1) * t * v];
                for (jj, &j) in joints.iter().enumerate() {
                    for tt in 0..t {
                        dplane[tt * v + j] += g * k[jj * t + tt];
                        dk[jj * t + tt] += g * plane[tt * v + j];
                    }
                }
            }
            dk
        }
        None => {
            let share = 1.0 / (t * joints.len()) as f64;
            for (ch, &g) in dp.iter().enumerate() {
                let plane = &xi[ch * t * v..(ch + 1) * t * v];
                let dplane = &mut dxi[ch * t * v..(ch + 1) * t * v];
                let mut arg = (0, joints[0]);
                let mut max = f64::NEG_INFINITY;
                for tt in 0..t {
                    for &j in joints {
                        dplane[tt * v + j] += g * share;
                        if plane[tt * v + j] > max {
                            max = plane[tt * v + j];
                            arg = (tt, j);
                        }
                    }
                }
                dplane[arg.0 * v + arg.1] += g;
            }
            Vec::new()
        }
    }
}

/// `F_ST [N, C, T'', V] -> F_PP [N, C, B]`.
pub fn jrpp_pool(f_st: &DenseArray, spec: &PyramidSpec, heads: &[StripHead]) -> Result<DenseArray> {
    jrpp_pool_with(f_st, spec, heads, Execution::Sequential)
}

pub fn jrpp_pool_with(
    f_st: &DenseArray,
    spec: &PyramidSpec,
    heads: &[StripHead],
    exec: Execution,
) -> Result<DenseArray> {
    let [n, c, t, v] = check_pool_input(f_st, spec, heads)?;
    let b_count = heads.len();
    let strips: Vec<&[usize]> = spec.strips().collect();
    let x = f_st.data();
    let mut out = vec![0.0; n * c * b_count];
    exec::for_each_chunk_mut(exec, &mut out, c * b_count, |i, o| {
        let xi = &x[i * c * t * v..(i + 1) * c * t * v];
        let mut col = vec![0.0; c];
        for (b, head) in heads.iter().enumerate() {
            pool_strip(xi, strips[b], head, t, v, &mut col);
            for (ch, val) in col.iter().enumerate() {
                o[ch * b_count + b] = *val;
            }
        }
    });
    DenseArray::new([n, c, b_count], out)
}

/// `F_PP [N, C_pool, B] -> [N, D_out, B]`, strip `b` through its own FC.
pub fn map_strips(f_pp: &DenseArray, heads: &[StripHead]) -> Result<DenseArray> {
    let &[n, c, b_count] = f_pp.shape() else {
        return Err(Error::Dimension(format!("expected [N, C, B], got {:?}", f_pp.shape())));
    };
    if b_count != heads.len() {
        return Err(Error::Dimension(format!("{b_count} strips but {} heads", heads.len())));
    }
    let d_out = heads.first().map_or(0, StripHead::d_out);
    for (b, h) in heads.iter().enumerate() {
        if h.fc.shape() != [c, d_out] {
            return Err(Error::Dimension(format!(
                "strip {b} fc has shape {:?}, expected [{c}, {d_out}]",
                h.fc.shape()
            )));
        }
    }
    let x = f_pp.data();
    let mut out = vec![0.0; n * d_out * b_count];
    for i in 0..n {
        for (b, h) in heads.iter().enumerate() {
            let fc = h.fc.value.data();
            for d in 0..d_out {
                let mut acc = 0.0;
                for ch in 0..c {
                    acc += x[(i * c + ch) * b_count + b] * fc[ch * d_out + d];
                }
                out[(i * d_out + d) * b_count + b] = acc;
            }
        }
    }
    DenseArray::new([n, d_out, b_count], out)
}

/// `[N, D, B] -> [N, D * B]` with unit rows. Feature index is `d * B + b`.
pub fn flatten_normalize(mapped: &DenseArray) -> Result<DenseArray> {
    let n = *mapped
        .shape()
        .first()
        .ok_or_else(|| Error::Dimension("cannot flatten a scalar".into()))?;
    let dim = if n == 0 { 0 } else { mapped.len() / n };
    let mut data = mapped.data().to_vec();
    if dim > 0 {
        for row in data.chunks_mut(dim) {
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt().max(NORM_FLOOR);
            row.iter_mut().for_each(|x| *x /= norm);
        }
    }
    DenseArray::new([n, dim], data)
}

const NORM_FLOOR: f64 = 1e-12;

fn normalize_backward(y: &[f64], e: &[f64], de: &[f64]) -> Vec<f64> {
    let norm = y.iter().map(|x| x * x).sum::<f64>().sqrt().max(NORM_FLOOR);
    let dot: f64 = e.iter().zip(de).map(|(a, b)| a * b).sum();
    e.iter().zip(de).map(|(e, d)| (d - e * dot) / norm).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jrpm::build_pyramid;
    use crate::numerics::{grad_check_detailed, FnObjective};
    use crate::skeleton::JointLayout;

    fn spec(scales: &[usize], mode: PoolMode) -> PyramidSpec {
        build_pyramid(&JointLayout::openpose18(), scales).unwrap().with_pool_mode(mode)
    }

    #[test]
    fn constant_input_mean_plus_max() {
        let spec = spec(&[1, 2, 3], PoolMode::MeanPlusMax);
        let jrpm = Jrpm::new(spec.clone(), 3, 4, 5, &mut Rng::new(0));
        let x = DenseArray::filled([2, 3, 4, 18], 1.5);
        let p = jrpp_pool(&x, &spec, &jrpm.heads).unwrap();
        assert_eq!(p.shape(), [2, 3, 6]);
        assert!(p.data().iter().all(|v| *v == 3.0));
    }

    #[test]
    fn uniform_kernel_is_strip_mean() {
        let spec = spec(&[1, 2, 3], PoolMode::LearnedKernel);
        let mut rng = Rng::new(1);
        let jrpm = Jrpm::new(spec.clone(), 2, 3, 4, &mut rng);
        let x = DenseArray::from_fn([1, 2, 3, 18], |_| rng.normal(0.0, 1.0));
        let p = jrpp_pool(&x, &spec, &jrpm.heads).unwrap();
        for (b, joints) in spec.strips().enumerate() {
            for c in 0..2 {
                let mut sum = 0.0;
                for t in 0..3 {
                    for &j in joints {
                        sum += x.at(&[0, c, t, j]);
                    }
                }
                let mean = sum / (3 * joints.len()) as f64;
                assert!((p.at(&[0, c, b]) - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mean_plus_max_matches_loop_oracle() {
        let spec = spec(&[1, 2, 3, 4, 5, 6], PoolMode::MeanPlusMax);
        let mut rng = Rng::new(2);
        let jrpm = Jrpm::new(spec.clone(), 3, 5, 2, &mut rng);
        let x = DenseArray::from_fn([2, 3, 5, 18], |_| rng.normal(0.0, 1.0));
        let p = jrpp_pool(&x, &spec, &jrpm.heads).unwrap();
        assert_eq!(p.shape(), [2, 3, 41]);
        for (b, joints) in spec.strips().enumerate() {
            for i in 0..2 {
                for c in 0..3 {
                    let vals: Vec<f64> = (0..5)
                        .flat_map(|t| joints.iter().map(move |&j| (t, j)))
                        .map(|(t, j)| x.at(&[i, c, t, j]))
                        .collect();
                    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                    let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    assert_eq!(p.at(&[i, c, b]), mean + max);
                }
            }
        }
    }

    #[test]
    fn identity_and_zero_maps() {
        let spec = spec(&[1, 2], PoolMode::MeanPlusMax);
        let mut rng = Rng::new(3);
        let mut jrpm = Jrpm::new(spec, 4, 2, 4, &mut rng);
        let p = DenseArray::from_fn([2, 4, 3], |_| rng.normal(0.0, 1.0));
        for h in &mut jrpm.heads {
            h.fc.value = DenseArray::identity(4);
        }
        assert_eq!(map_strips(&p, &jrpm.heads).unwrap().data(), p.data());
        for h in &mut jrpm.heads {
            h.fc.value.fill(0.0);
        }
        assert!(map_strips(&p, &jrpm.heads).unwrap().data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn permuting_strips_and_maps_together() {
        let spec = spec(&[2], PoolMode::MeanPlusMax);
        let mut rng = Rng::new(4);
        let jrpm = Jrpm::new(spec, 3, 2, 5, &mut rng);
        let p = DenseArray::from_fn([2, 3, 2], |_| rng.normal(0.0, 1.0));
        let y = map_strips(&p, &jrpm.heads).unwrap();
        let swapped_heads = vec![jrpm.heads[1].clone(), jrpm.heads[0].clone()];
        let mut swapped = p.clone();
        for i in 0..2 {
            for c in 0..3 {
                swapped.set(&[i, c, 0], p.at(&[i, c, 1]));
                swapped.set(&[i, c, 1], p.at(&[i, c, 0]));
            }
        }
        let ys = map_strips(&swapped, &swapped_heads).unwrap();
        for i in 0..2 {
            for d in 0..5 {
                assert_eq!(ys.at(&[i, d, 0]), y.at(&[i, d, 1]));
                assert_eq!(ys.at(&[i, d, 1]), y.at(&[i, d, 0]));
            }
        }
    }

    #[test]
    fn embedding_rows_are_unit() {
        let spec = spec(&[1, 2, 3], PoolMode::LearnedKernel);
        let mut rng = Rng::new(5);
        let jrpm = Jrpm::new(spec, 3, 4, 6, &mut rng);
        let x = DenseArray::from_fn([3, 3, 4, 18], |_| rng.normal(0.0, 1.0));
        let out = jrpm.forward(&x, Execution::Sequential).unwrap();
        assert_eq!(out.embedding.shape(), [3, 36]);
        for row in out.embedding.data().chunks(36) {
            assert!((row.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    fn check_gradients(mode: PoolMode, seed: u64) {
        let spec = spec(&[1, 2, 3], mode);
        let mut rng = Rng::new(seed);
        let jrpm = Jrpm::new(spec, 3, 4, 3, &mut rng);
        let mut jrpm = jrpm;
        for h in &mut jrpm.heads {
            if let Some(k) = &mut h.kernel {
                k.value = DenseArray::from_fn(k.shape().to_vec(), |_| rng.normal(0.0, 0.5));
            }
        }
        let x = DenseArray::from_fn([2, 3, 4, 18], |_| rng.normal(0.0, 1.0));
        let r = DenseArray::from_fn([2, 18], |_| rng.normal(0.0, 1.0));
        let with = |inputs: &[DenseArray]| {
            let mut j = jrpm.clone();
            for (p, v) in j.parameters_mut().into_iter().zip(&inputs[1..]) {
                p.value = v.clone();
                p.zero_grad();
            }
            j
        };
        let obj = FnObjective {
            value: |inputs: &[DenseArray]| {
                let out = with(inputs).forward(&inputs[0], Execution::Sequential)?;
                Ok(DenseArray::scalar(out.embedding.hadamard(&r)?.sum()))
            },
            grad: |inputs: &[DenseArray]| {
                let mut j = with(inputs);
                let out = j.forward(&inputs[0], Execution::Sequential)?;
                let dx = j.backward(&inputs[0], &out, &r, Execution::Sequential)?;
                let mut g = vec![dx];
                g.extend(j.parameters().into_iter().map(|p| p.grad.clone()));
                Ok(g)
            },
        };
        let mut inputs = vec![x];
        inputs.extend(jrpm.parameters().into_iter().map(|p| p.value.clone()));
        let report = grad_check_detailed(&obj, &inputs, 1e-5).unwrap();
        assert!(report.max_relative_error < 1e-4, "{report:?}");
    }

    #[test]
    fn gradient_learned_kernel() {
        for seed in 0..3 {
            check_gradients(PoolMode::LearnedKernel, seed);
        }
    }

    #[test]
    fn gradient_mean_plus_max() {
        for seed in 0..3 {
            check_gradients(PoolMode::MeanPlusMax, 10 + seed);
        }
    }

    #[test]
    fn kernel_frame_mismatch() {
        let spec = spec(&[1], PoolMode::LearnedKernel);
        let jrpm = Jrpm::new(spec.clone(), 2, 4, 3, &mut Rng::new(0));
        let x = DenseArray::zeros([1, 2, 5, 18]);
        assert_eq!(jrpp_pool(&x, &spec, &jrpm.heads).unwrap_err().category(), "dimension");
    }
}
