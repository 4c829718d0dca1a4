use crate::exec::{self, Execution};
use crate::numerics::{DenseArray, Parameter};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel batch normalisation over `[N, C, L]` activations.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: Parameter,
    pub beta: Parameter,
    pub running_mean: DenseArray,
    pub running_var: DenseArray,
}

/// Statistics used to normalise one batch.
#[derive(Clone, Debug)]
pub(crate) struct NormStats {
    pub mean: Vec<f64>,
    /// biased batch variance
    pub var: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub count: usize,
}

impl BatchNorm {
    pub fn new(prefix: &str, channels: usize) -> Self {
        Self {
            gamma: Parameter::new(format!("{prefix}.gamma"), DenseArray::filled([channels], 1.0)),
            beta: Parameter::new(format!("{prefix}.beta"), DenseArray::zeros([channels])),
            running_mean: DenseArray::zeros([channels]),
            running_var: DenseArray::filled([channels], 1.0),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.value.len()
    }

    pub(crate) fn running_stats(&self) -> NormStats {
        NormStats {
            mean: self.running_mean.data().to_vec(),
            var: self.running_var.data().to_vec(),
            inv_std: self
                .running_var
                .data()
                .iter()
                .map(|v| 1.0 / (v + BN_EPS).sqrt())
                .collect(),
            count: 0,
        }
    }

    pub(crate) fn update_running(&mut self, stats: &NormStats) {
        let unbias = if stats.count > 1 {
            stats.count as f64 / (stats.count - 1) as f64
        } else {
            1.0
        };
        for (r, m) in self.running_mean.data_mut().iter_mut().zip(&stats.mean) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
        }
        for (r, v) in self.running_var.data_mut().iter_mut().zip(&stats.var) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v * unbias;
        }
    }
}

/// Two-pass per-channel mean and variance, reduced in sample order.
pub(crate) fn batch_stats(exec: Execution, x: &[f64], n: usize, c: usize, l: usize) -> NormStats {
    let sums = exec::map(exec, n, |i| {
        let xi = &x[i * c * l..(i + 1) * c * l];
        xi.chunks(l).map(|ch| ch.iter().sum::<f64>()).collect::<Vec<f64>>()
    });
    let count = n * l;
    let mean: Vec<f64> = exec::sum_in_order(sums.iter().map(Vec::as_slice), c)
        .into_iter()
        .map(|s| s / count as f64)
        .collect();
    let sq = exec::map(exec, n, |i| {
        let xi = &x[i * c * l..(i + 1) * c * l];
        xi.chunks(l)
            .zip(&mean)
            .map(|(ch, m)| ch.iter().map(|v| (v - m) * (v - m)).sum::<f64>())
            .collect::<Vec<f64>>()
    });
    let var: Vec<f64> = exec::sum_in_order(sq.iter().map(Vec::as_slice), c)
        .into_iter()
        .map(|s| s / count as f64)
        .collect();
    let inv_std = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    NormStats {
        mean,
        var,
        inv_std,
        count,
    }
}

/// `x <- (x - mean) * inv_std` per channel.
pub(crate) fn normalize_in_place(exec: Execution, x: &mut [f64], c: usize, l: usize, stats: &NormStats) {
    exec::for_each_chunk_mut(exec, x, c * l, |_, xi| {
        for (ch, (m, s)) in xi.chunks_mut(l).zip(stats.mean.iter().zip(&stats.inv_std)) {
            ch.iter_mut().for_each(|v| *v = (*v - m) * s);
        }
    });
}

/// `(sum dy, sum dy * xhat)` per channel; these are the beta and gamma gradients.
pub(crate) fn backward_sums(
    exec: Execution,
    dy: &[f64],
    xhat: &[f64],
    n: usize,
    c: usize,
    l: usize,
) -> (Vec<f64>, Vec<f64>) {
    let parts = exec::map(exec, n, |i| {
        let dyi = &dy[i * c * l..(i + 1) * c * l];
        let xi = &xhat[i * c * l..(i + 1) * c * l];
        let mut out = vec![0.0; 2 * c];
        for ch in 0..c {
            let (d, x) = (&dyi[ch * l..(ch + 1) * l], &xi[ch * l..(ch + 1) * l]);
            out[ch] = d.iter().sum();
            out[c + ch] = d.iter().zip(x).map(|(a, b)| a * b).sum();
        }
        out
    });
    let total = exec::sum_in_order(parts.iter().map(Vec::as_slice), 2 * c);
    (total[..c].to_vec(), total[c..].to_vec())
}

/// Input gradient of one sample given the batch-level sums.
#[allow(clippy::too_many_arguments)]
pub(crate) fn backward_input_sample(
    dy: &[f64],
    xhat: &[f64],
    gamma: &[f64],
    stats: &NormStats,
    sum_dy: &[f64],
    sum_dy_xhat: &[f64],
    l: usize,
    dx: &mut [f64],
) {
    let m = stats.count as f64;
    for ch in 0..gamma.len() {
        let k = gamma[ch] * stats.inv_std[ch];
        let (mean_dy, mean_dyx) = (sum_dy[ch] / m, sum_dy_xhat[ch] / m);
        let range = ch * l..(ch + 1) * l;
        for ((o, d), x) in dx[range.clone()].iter_mut().zip(&dy[range.clone()]).zip(&xhat[range]) {
            *o = k * (d - mean_dy - x * mean_dyx);
        }
    }
}

/// `relu(gamma * xhat + beta)` for one sample.
pub(crate) fn affine_relu(xhat: &[f64], gamma: &[f64], beta: &[f64], l: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(xhat.len());
    for (ch, chunk) in xhat.chunks(l).enumerate() {
        let (g, b) = (gamma[ch], beta[ch]);
        out.extend(chunk.iter().map(|x| (g * x + b).max(0.0)));
    }
    out
}
