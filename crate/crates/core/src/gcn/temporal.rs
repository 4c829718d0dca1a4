use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::numerics::gemm::{gemm, transpose, MatMut, MatRef};
use crate::numerics::{fan_in_uniform, DenseArray, Parameter, Rng};

/// 1-D convolution along time, independently per joint, with symmetric zero
/// padding `(kt - 1) / 2` and output length `ceil(T / stride)`.
#[derive(Clone, Debug)]
pub struct TemporalConv {
    /// `[C_out, C_in, kt]`
    pub kernel: Parameter,
    pub stride: usize,
}

impl TemporalConv {
    pub fn new(prefix: &str, c_in: usize, c_out: usize, kt: usize, stride: usize, rng: &mut Rng) -> Result<Self> {
        if kt % 2 == 0 {
            return Err(Error::Config(format!("temporal kernel width must be odd, got {kt}")));
        }
        if stride == 0 {
            return Err(Error::Config("temporal stride must be >= 1".into()));
        }
        Ok(Self {
            kernel: Parameter::new(
                format!("{prefix}.kernel"),
                fan_in_uniform([c_out, c_in, kt], c_in * kt, rng),
            ),
            stride,
        })
    }

    pub fn c_out(&self) -> usize {
        self.kernel.shape()[0]
    }

    pub fn c_in(&self) -> usize {
        self.kernel.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.kernel.shape()[2]
    }
}

pub fn output_frames(frames: usize, stride: usize) -> usize {
    frames.div_ceil(stride)
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct TemporalDims {
    pub c_in: usize,
    pub c_out: usize,
    pub frames: usize,
    pub joints: usize,
    pub width: usize,
    pub stride: usize,
}

impl TemporalDims {
    pub fn frames_out(&self) -> usize {
        output_frames(self.frames, self.stride)
    }
}

/// `[C_in * kt, T_out * V]` patch matrix.
fn im2col(x: &[f64], d: TemporalDims) -> Vec<f64> {
    let (v, t_out) = (d.joints, d.frames_out());
    let pad = (d.width - 1) / 2;
    let row_len = t_out * v;
    let mut col = vec![0.0; d.c_in * d.width * row_len];
    for ci in 0..d.c_in {
        for tap in 0..d.width {
            let row = &mut col[(ci * d.width + tap) * row_len..][..row_len];
            for to in 0..t_out {
                let ti = (to * d.stride + tap) as isize - pad as isize;
                if ti >= 0 && (ti as usize) < d.frames {
                    let src = (ci * d.frames + ti as usize) * v;
                    row[to * v..(to + 1) * v].copy_from_slice(&x[src..src + v]);
                }
            }
        }
    }
    col
}

fn col2im_add(col: &[f64], d: TemporalDims, dx: &mut [f64]) {
    let (v, t_out) = (d.joints, d.frames_out());
    let pad = (d.width - 1) / 2;
    let row_len = t_out * v;
    for ci in 0..d.c_in {
        for tap in 0..d.width {
            let row = &col[(ci * d.width + tap) * row_len..][..row_len];
            for to in 0..t_out {
                let ti = (to * d.stride + tap) as isize - pad as isize;
                if ti >= 0 && (ti as usize) < d.frames {
                    let dst = (ci * d.frames + ti as usize) * v;
                    for (a, b) in dx[dst..dst + v].iter_mut().zip(&row[to * v..(to + 1) * v]) {
                        *a += b;
                    }
                }
            }
        }
    }
}

/// Output frames `[lo, hi)` whose input frame `to + shift` is in range.
fn tap_range(frames: usize, shift: isize) -> (usize, usize) {
    let lo = (-shift).max(0) as usize;
    let hi = (frames as isize - shift).clamp(0, frames as isize) as usize;
    (lo, hi.max(lo))
}

/// One shifted product per tap; no patch matrix. Stride 1 only.
fn forward_taps(x: &[f64], kernel: &[f64], d: TemporalDims, out: &mut [f64]) {
    let (tv, v) = (d.frames * d.joints, d.joints);
    let pad = (d.width - 1) / 2;
    out.fill(0.0);
    for tap in 0..d.width {
        let shift = tap as isize - pad as isize;
        let (lo, hi) = tap_range(d.frames, shift);
        if lo == hi {
            continue;
        }
        let cols = (hi - lo) * v;
        let src = (lo as isize + shift) as usize * v;
        gemm(
            1.0,
            MatRef::new(&kernel[tap..], d.c_out, d.c_in, d.c_in * d.width, d.width),
            MatRef::new(&x[src..], d.c_in, cols, tv, 1),
            1.0,
            MatMut::new(&mut out[lo * v..], d.c_out, cols, tv, 1),
        );
    }
}

fn backward_taps(x: &[f64], kernel: &[f64], d: TemporalDims, dout: &[f64], dx: &mut [f64]) -> Vec<f64> {
    let (tv, v) = (d.frames * d.joints, d.joints);
    let pad = (d.width - 1) / 2;
    let mut dk = vec![0.0; d.c_out * d.c_in * d.width];
    // `[T * V, C]` copies; every tap contracts over frames and joints
    let xt = transpose(x, d.c_in, tv);
    let dt = transpose(dout, d.c_out, tv);
    for tap in 0..d.width {
        let shift = tap as isize - pad as isize;
        let (lo, hi) = tap_range(d.frames, shift);
        if lo == hi {
            continue;
        }
        let cols = (hi - lo) * v;
        let src = (lo as isize + shift) as usize * v;
        gemm(
            1.0,
            MatRef::new(&dt[lo * v * d.c_out..], d.c_out, cols, 1, d.c_out),
            MatRef::new(&xt[src * d.c_in..], cols, d.c_in, d.c_in, 1),
            0.0,
            MatMut::new(&mut dk[tap..], d.c_out, d.c_in, d.c_in * d.width, d.width),
        );
        gemm(
            1.0,
            MatRef::new(&kernel[tap..], d.c_out, d.c_in, d.c_in * d.width, d.width).t(),
            MatRef::new(&dout[lo * v..], d.c_out, cols, tv, 1),
            1.0,
            MatMut::new(&mut dx[src..], d.c_in, cols, tv, 1),
        );
    }
    dk
}

pub(crate) fn forward_sample(x: &[f64], kernel: &[f64], d: TemporalDims, out: &mut [f64]) {
    if d.stride == 1 {
        return forward_taps(x, kernel, d, out);
    }
    let col = im2col(x, d);
    let n = d.frames_out() * d.joints;
    gemm(
        1.0,
        MatRef::row_major(kernel, d.c_out, d.c_in * d.width),
        MatRef::row_major(&col, d.c_in * d.width, n),
        0.0,
        MatMut::row_major(out, d.c_out, n),
    );
}

/// Adds `dL/dx` into `dx`; returns `dL/dkernel` for this sample.
pub(crate) fn backward_sample(x: &[f64], kernel: &[f64], d: TemporalDims, dout: &[f64], dx: &mut [f64]) -> Vec<f64> {
    if d.stride == 1 {
        return backward_taps(x, kernel, d, dout, dx);
    }
    let col = im2col(x, d);
    let n = d.frames_out() * d.joints;
    let rows = d.c_in * d.width;
    let mut dk = vec![0.0; d.c_out * rows];
    gemm(
        1.0,
        MatRef::row_major(dout, d.c_out, n),
        MatRef::row_major(&col, rows, n).t(),
        0.0,
        MatMut::row_major(&mut dk, d.c_out, rows),
    );
    let mut dcol = col;
    gemm(
        1.0,
        MatRef::row_major(kernel, d.c_out, rows).t(),
        MatRef::row_major(dout, d.c_out, n),
        0.0,
        MatMut::row_major(&mut dcol, rows, n),
    );
    col2im_add(&dcol, d, dx);
    dk
}

/// Batched temporal convolution, `[N, C_in, T, V] -> [N, C_out, ceil(T / stride), V]`.
pub fn temporal_conv(f: &DenseArray, conv: &TemporalConv) -> Result<DenseArray> {
    temporal_conv_with(f, conv, Execution::Sequential)
}

pub fn temporal_conv_with(f: &DenseArray, conv: &TemporalConv, exec: Execution) -> Result<DenseArray> {
    let &[n, c, t, v] = f.shape() else {
        return Err(Error::Dimension(format!("expected [N, C, T, V], got {:?}", f.shape())));
    };
    if c != conv.c_in() {
        return Err(Error::Dimension(format!(
            "input has {c} channels, kernel expects {}",
            conv.c_in()
        )));
    }
    if t == 0 {
        return Err(Error::Dimension("temporal convolution needs at least one frame".into()));
    }
    let d = TemporalDims {
        c_in: c,
        c_out: conv.c_out(),
        frames: t,
        joints: v,
        width: conv.width(),
        stride: conv.stride,
    };
    let t_out = d.frames_out();
    let mut out = vec![0.0; n * d.c_out * t_out * v];
    let x = f.data();
    exec::for_each_chunk_mut(exec, &mut out, d.c_out * t_out * v, |i, o| {
        forward_sample(&x[i * c * t * v..(i + 1) * c * t * v], conv.kernel.value.data(), d, o)
    });
    DenseArray::new([n, d.c_out, t_out, v], out)
}
