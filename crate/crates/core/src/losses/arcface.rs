use crate::error::{Error, Result};
use crate::numerics::{DenseArray, Parameter, Rng};

/// Cosines are kept inside `[-1 + COS_CLAMP, 1 - COS_CLAMP]` before `acos`.
pub const COS_CLAMP: f64 = 1e-7;

/// Class weight matrix `[num_classes, D]`; rows are normalised on use.
#[derive(Clone, Debug)]
pub struct ArcfaceHead {
    pub weight: Parameter,
}

impl ArcfaceHead {
    /// Entries drawn from `N(0, 1 / dim)`.
    pub fn new(num_classes: usize, dim: usize, rng: &mut Rng) -> Self {
        let sd = 1.0 / (dim.max(1) as f64).sqrt();
        Self {
            weight: Parameter::new(
                "arcface.weight",
                DenseArray::from_fn([num_classes, dim], |_| rng.normal(0.0, sd)),
            ),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.weight.shape()[1]
    }
}

fn unit(v: &[f64]) -> (Vec<f64>, f64) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    (v.iter().map(|x| x / norm).collect(), norm)
}

/// `(g - u (u . g)) / norm`: gradient through `v -> v / |v|`.
fn unit_backward(u: &[f64], norm: f64, g: &[f64]) -> Vec<f64> {
    let dot: f64 = u.iter().zip(g).map(|(a, b)| a * b).sum();
    u.iter().zip(g).map(|(u, g)| (g - u * dot) / norm).collect()
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn check(e: &DenseArray, labels: &[usize], head: &ArcfaceHead) -> Result<(usize, usize)> {
    let &[n, d] = e.shape() else {
        return Err(Error::Dimension(format!("expected [N, D] embeddings, got {:?}", e.shape())));
    };
    if d != head.dim() {
        return Err(Error::Dimension(format!(
            "embedding dim {d} but arcface head expects {}",
            head.dim()
        )));
    }
    if labels.len() != n {
        return Err(Error::Dimension(format!("{n} embeddings but {} labels", labels.len())));
    }
    if head.num_classes() < 2 {
        return Err(Error::Contract("arcface needs at least two classes".into()));
    }
    if let Some(l) = labels.iter().find(|&&l| l >= head.num_classes()) {
        return Err(Error::Contract(format!(
            "label {l} out of range for {} classes",
            head.num_classes()
        )));
    }
    Ok((n, d))
}

/// Mean cross-entropy over `c * cos(theta_y + m)` for the true class and `c * cos(theta_j)` otherwise.
pub fn arcface(e: &DenseArray, labels: &[usize], head: &ArcfaceHead, m: f64, c: f64) -> Result<f64> {
    arcface_grad(e, labels, head, m, c).map(|(l, _, _)| l)
}

/// Loss, `dL/dE` and `dL/dW`.
pub fn arcface_grad(
    e: &DenseArray,
    labels: &[usize],
    head: &ArcfaceHead,
    m: f64,
    c: f64,
) -> Result<(f64, DenseArray, DenseArray)> {
    let (n, d) = check(e, labels, head)?;
    let classes = head.num_classes();
    let w: Vec<(Vec<f64>, f64)> = head.weight.value.data().chunks(d).map(unit).collect();
    let lo = -1.0 + COS_CLAMP;
    let hi = 1.0 - COS_CLAMP;

    let mut loss = 0.0;
    let mut de = vec![0.0; n * d];
    let mut dw_unit = vec![0.0; classes * d];
    for (i, &y) in labels.iter().enumerate() {
        let (u, norm) = unit(&e.data()[i * d..(i + 1) * d]);
        let mut logits = Vec::with_capacity(classes);
        // d logit_j / d cos_j
        let mut slope = Vec::with_capacity(classes);
        for (j, (wj, _)) in w.iter().enumerate() {
            let raw: f64 = u.iter().zip(wj).map(|(a, b)| a * b).sum();
            let cos = raw.clamp(lo, hi);
            let inside = if raw == cos { 1.0 } else { 0.0 };
            if j == y {
                let theta = cos.acos();
                logits.push(c * (theta + m).cos());
                slope.push(inside * c * (theta + m).sin() / theta.sin());
            } else {
                logits.push(c * cos);
                slope.push(inside * c);
            }
        }
        let lse = log_sum_exp(&logits);
        loss += lse - logits[y];

        let mut du = vec![0.0; d];
        for (j, (wj, _)) in w.iter().enumerate() {
            let p = (logits[j] - lse).exp();
            let g = (p - if j == y { 1.0 } else { 0.0 }) * slope[j] / n as f64;
            if g == 0.0 {
                continue;
            }
            for k in 0..d {
                du[k] += g * wj[k];
                dw_unit[j * d + k] += g * u[k];
            }
        }
        de[i * d..(i + 1) * d].copy_from_slice(&unit_backward(&u, norm, &du));
    }
    let mut dw = Vec::with_capacity(classes * d);
    for (j, (wj, norm)) in w.iter().enumerate() {
        dw.extend(unit_backward(wj, *norm, &dw_unit[j * d..(j + 1) * d]));
    }
    Ok((
        loss / n as f64,
        DenseArray::new([n, d], de)?,
        DenseArray::new([classes, d], dw)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{grad_check, FnObjective};

    fn head_from(rows: Vec<f64>, classes: usize) -> ArcfaceHead {
        let d = rows.len() / classes;
        ArcfaceHead {
            weight: Parameter::new("w", DenseArray::new([classes, d], rows).unwrap()),
        }
    }

    #[test]
    fn aligned_two_class_closed_form() {
        let head = head_from(vec![1.0, 0.0, 0.0, 1.0], 2);
        let e = DenseArray::new([1, 2], vec![2.0, 0.0]).unwrap();
        let loss = arcface(&e, &[0], &head, 0.0, 1.0).unwrap();
        let expected = (1.0 + (-1.0f64).exp()).ln();
        assert!((loss - expected).abs() < 1e-6, "{loss}");
        assert!((expected - 0.31326).abs() < 1e-5);
    }

    #[test]
    fn zero_margin_is_scaled_cosine_softmax() {
        let mut rng = Rng::new(11);
        let head = ArcfaceHead::new(5, 4, &mut rng);
        let e = DenseArray::from_fn([6, 4], |_| rng.normal(0.0, 1.0));
        let labels = [0, 1, 2, 3, 4, 0];
        let loss = arcface(&e, &labels, &head, 0.0, 30.0).unwrap();
        let mut direct = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let (u, _) = unit(&e.data()[i * 4..(i + 1) * 4]);
            let z: Vec<f64> = head
                .weight
                .value
                .data()
                .chunks(4)
                .map(|w| {
                    let (w, _) = unit(w);
                    30.0 * u.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()
                })
                .collect();
            let denom: f64 = z.iter().map(|x| x.exp()).sum();
            direct -= (z[y].exp() / denom).ln();
        }
        assert!((loss - direct / 6.0).abs() < 1e-10);
    }

    #[test]
    fn margin_never_helps_an_aligned_sample() {
        let head = head_from(vec![1.0, 0.1, -0.2, 1.0, 0.3, -1.0], 3);
        let e = DenseArray::new([1, 2], vec![0.9, 0.15]).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for step in 0..=20 {
            let m = step as f64 * 0.05;
            let l = arcface(&e, &[0], &head, m, 30.0).unwrap();
            assert!(l >= prev, "m = {m}");
            prev = l;
        }
    }

    #[test]
    fn invariant_to_row_scale() {
        let mut rng = Rng::new(2);
        let head = ArcfaceHead::new(3, 5, &mut rng);
        let e = DenseArray::from_fn([3, 5], |_| rng.normal(0.0, 1.0));
        let mut scaled = e.clone();
        for k in 0..5 {
            scaled.set(&[1, k], e.at(&[1, k]) * 7.5);
        }
        let a = arcface(&e, &[0, 1, 2], &head, 0.35, 30.0).unwrap();
        let b = arcface(&scaled, &[0, 1, 2], &head, 0.35, 30.0).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..3 {
            let mut rng = Rng::new(100 + seed);
            let head = ArcfaceHead::new(4, 6, &mut rng);
            let e = DenseArray::from_fn([5, 6], |_| rng.normal(0.0, 1.0));
            let labels = [0, 1, 2, 3, 1];
            let obj = FnObjective {
                value: |x: &[DenseArray]| {
                    let h = ArcfaceHead {
                        weight: Parameter::new("w", x[1].clone()),
                    };
                    Ok(DenseArray::scalar(arcface(&x[0], &labels, &h, 0.35, 30.0)?))
                },
                grad: |x: &[DenseArray]| {
                    let h = ArcfaceHead {
                        weight: Parameter::new("w", x[1].clone()),
                    };
                    let (_, de, dw) = arcface_grad(&x[0], &labels, &h, 0.35, 30.0)?;
                    Ok(vec![de, dw])
                },
            };
            let err = grad_check(&obj, &[e, head.weight.value.clone()], 1e-5).unwrap();
            assert!(err < 1e-5, "seed {seed}: {err}");
        }
    }

    #[test]
    fn label_out_of_range() {
        let mut rng = Rng::new(0);
        let head = ArcfaceHead::new(2, 3, &mut rng);
        let e = DenseArray::zeros([1, 3]);
        assert!(arcface(&e, &[2], &head, 0.35, 30.0).is_err());
    }
}
