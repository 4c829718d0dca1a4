//! Bounds-checked strided views over `matrixmultiply::dgemm`.

#[derive(Clone, Copy, Debug)]
pub struct MatRef<'a> {
    data: &'a [f64],
    rows: usize,
    cols: usize,
    rs: usize,
    cs: usize,
}

impl<'a> MatRef<'a> {
    pub fn new(data: &'a [f64], rows: usize, cols: usize, rs: usize, cs: usize) -> Self {
        assert!(
            fits(data.len(), rows, cols, rs, cs),
            "matrix view {rows}x{cols} (strides {rs},{cs}) exceeds buffer of {}",
            data.len()
        );
        Self {
            data,
            rows,
            cols,
            rs,
            cs,
        }
    }

    pub fn row_major(data: &'a [f64], rows: usize, cols: usize) -> Self {
        Self::new(data, rows, cols, cols, 1)
    }

    pub fn t(self) -> Self {
        Self {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.rs + c * self.cs]
    }
}

#[derive(Debug)]
pub struct MatMut<'a> {
    data: &'a mut [f64],
    rows: usize,
    cols: usize,
    rs: usize,
    cs: usize,
}

impl<'a> MatMut<'a> {
    pub fn new(data: &'a mut [f64], rows: usize, cols: usize, rs: usize, cs: usize) -> Self {
        assert!(
            fits(data.len(), rows, cols, rs, cs),
            "matrix view {rows}x{cols} (strides {rs},{cs}) exceeds buffer of {}",
            data.len()
        );
        // Overlapping writes would race inside the kernel.
        assert!(
            rows <= 1 || cols <= 1 || rs >= cols * cs || cs >= rows * rs,
            "output view aliases itself"
        );
        Self {
            data,
            rows,
            cols,
            rs,
            cs,
        }
    }

    pub fn row_major(data: &'a mut [f64], rows: usize, cols: usize) -> Self {
        Self::new(data, rows, cols, cols, 1)
    }
}

fn fits(len: usize, rows: usize, cols: usize, rs: usize, cs: usize) -> bool {
    rows == 0 || cols == 0 || (rows - 1) * rs + (cols - 1) * cs < len
}

/// `c = alpha * a * b + beta * c`.
pub fn gemm(alpha: f64, a: MatRef<'_>, b: MatRef<'_>, beta: f64, c: MatMut<'_>) {
    assert_eq!(a.cols, b.rows, "inner dimensions {} vs {}", a.cols, b.rows);
    assert_eq!(a.rows, c.rows, "output rows");
    assert_eq!(b.cols, c.cols, "output cols");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for r in 0..m {
            for col in 0..n {
                let v = &mut c.data[r * c.rs + col * c.cs];
                *v = if beta == 0.0 { 0.0 } else { *v * beta };
            }
        }
        return;
    }
    // SAFETY: every view was bounds-checked against its slice at construction,
    // the output view is non-self-overlapping, and `c` is exclusively borrowed
    // so it cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.data.as_mut_ptr(),
            c.rs as isize,
            c.cs as isize,
        );
    }
}

/// Row-major `rows x cols` into row-major `cols x rows`, in cache-sized tiles.
pub fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    const TILE: usize = 32;
    assert_eq!(a.len(), rows * cols, "transpose of a {rows}x{cols} matrix");
    let mut out = vec![0.0; a.len()];
    for r0 in (0..rows).step_by(TILE) {
        for c0 in (0..cols).step_by(TILE) {
            for r in r0..(r0 + TILE).min(rows) {
                for c in c0..(c0 + TILE).min(cols) {
                    out[c * rows + r] = a[r * cols + c];
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: MatRef<'_>, b: MatRef<'_>) -> Vec<f64> {
        let mut out = vec![0.0; a.rows() * b.cols()];
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for p in 0..a.cols() {
                    s += a.at(i, p) * b.at(p, j);
                }
                out[i * b.cols() + j] = s;
            }
        }
        out
    }

    #[test]
    fn transposed_and_strided_views() {
        let a: Vec<f64> = (0..12).map(|x| x as f64 * 0.5 - 2.0).collect();
        let b: Vec<f64> = (0..20).map(|x| (x as f64).sin()).collect();
        // a viewed as 4x3 transposed (3x4), b as a 4x5 matrix
        let av = MatRef::row_major(&a, 4, 3).t();
        let bv = MatRef::row_major(&b, 4, 5);
        let mut c = vec![1.0; 15];
        gemm(1.0, av, bv, 0.0, MatMut::row_major(&mut c, 3, 5));
        let expect = naive(av, bv);
        for (x, y) in c.iter().zip(&expect) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn transpose_round_trip() {
        let a: Vec<f64> = (0..35 * 70).map(|x| x as f64).collect();
        let t = transpose(&a, 35, 70);
        assert_eq!(t[3 * 35 + 2], a[2 * 70 + 3]);
        assert_eq!(transpose(&t, 70, 35), a);
    }

    #[test]
    fn empty_inner_dimension_scales_output() {
        let mut c = vec![2.0; 4];
        gemm(1.0, MatRef::row_major(&[], 2, 0), MatRef::row_major(&[], 0, 2), 0.5, MatMut::row_major(&mut c, 2, 2));
        assert_eq!(c, vec![1.0; 4]);
    }

    #[test]
    #[should_panic(expected = "exceeds buffer")]
    fn oversized_view_is_rejected() {
        let a = [0.0; 5];
        let _ = MatRef::row_major(&a, 2, 3);
    }
}
