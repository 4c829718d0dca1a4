//! Batch-hard triplet loss, additive angular margin loss and their weighted fusion.

mod arcface;
mod triplet;

pub use arcface::{arcface, arcface_grad, ArcfaceHead, COS_CLAMP};
pub use triplet::{batch_hard_triplet, batch_hard_triplet_grad, pairwise_distances};

use crate::error::{Error, Result};
use crate::numerics::DenseArray;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FusionLossConfig {
    pub lambda: f64,
    pub m_tri: f64,
    /// radians
    pub m_arc: f64,
    pub scale: f64,
}

impl Default for FusionLossConfig {
    fn default() -> Self {
        Self {
            lambda: 0.9,
            m_tri: 0.2,
            m_arc: 0.35,
            scale: 30.0,
        }
    }
}

impl FusionLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda must lie in [0, 1], got {}", self.lambda)));
        }
        for (name, v) in [("m_tri", self.m_tri), ("m_arc", self.m_arc), ("scale", self.scale)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Value and gradients of the fused loss.
#[derive(Clone, Debug)]
pub struct FusionLoss {
    pub total: f64,
    pub triplet: f64,
    pub arcface: f64,
    pub d_embedding: DenseArray,
    pub d_weight: DenseArray,
}

/// `lambda * triplet + (1 - lambda) * arcface`.
pub fn fusion_loss(e: &DenseArray, labels: &[usize], head: &ArcfaceHead, cfg: &FusionLossConfig) -> Result<f64> {
    fusion_loss_grad(e, labels, head, cfg).map(|l| l.total)
}

pub fn fusion_loss_grad(
    e: &DenseArray,
    labels: &[usize],
    head: &ArcfaceHead,
    cfg: &FusionLossConfig,
) -> Result<FusionLoss> {
    cfg.validate()?;
    let (tri, d_tri) = batch_hard_triplet_grad(e, labels, cfg.m_tri)?;
    let (arc, d_arc, d_w) = arcface_grad(e, labels, head, cfg.m_arc, cfg.scale)?;
    let l = cfg.lambda;
    Ok(FusionLoss {
        total: l * tri + (1.0 - l) * arc,
        triplet: tri,
        arcface: arc,
        d_embedding: d_tri.zip_map(&d_arc, |a, b| l * a + (1.0 - l) * b)?,
        d_weight: d_w.scale(1.0 - l),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{grad_check, FnObjective, Parameter, Rng};

    fn fixture(seed: u64) -> (DenseArray, Vec<usize>, ArcfaceHead) {
        let mut rng = Rng::new(seed);
        let head = ArcfaceHead::new(3, 4, &mut rng);
        let e = DenseArray::from_fn([6, 4], |_| rng.normal(0.0, 1.0));
        (e, vec![0, 0, 1, 1, 2, 2], head)
    }

    #[test]
    fn endpoints_reduce_to_single_losses() {
        let (e, labels, head) = fixture(1);
        let tri = batch_hard_triplet(&e, &labels, 0.2).unwrap();
        let arc = arcface(&e, &labels, &head, 0.35, 30.0).unwrap();
        let at = |lambda| {
            let cfg = FusionLossConfig { lambda, ..Default::default() };
            fusion_loss(&e, &labels, &head, &cfg).unwrap()
        };
        assert_eq!(at(1.0), tri);
        assert_eq!(at(0.0), arc);
        assert!((at(0.9) - (0.9 * tri + 0.1 * arc)).abs() < 1e-12);
    }

    #[test]
    fn affine_in_lambda() {
        let (e, labels, head) = fixture(2);
        let at = |lambda| {
            let cfg = FusionLossConfig { lambda, ..Default::default() };
            fusion_loss(&e, &labels, &head, &cfg).unwrap()
        };
        let (a, b, mid) = (at(0.2), at(0.8), at(0.5));
        assert!((mid - 0.5 * (a + b)).abs() < 1e-12);
    }

    #[test]
    fn rejects_lambda_outside_unit_interval() {
        let (e, labels, head) = fixture(3);
        let cfg = FusionLossConfig { lambda: 1.5, ..Default::default() };
        assert_eq!(fusion_loss(&e, &labels, &head, &cfg).unwrap_err().category(), "config");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (e, labels, head) = fixture(4);
        let cfg = FusionLossConfig::default();
        let obj = FnObjective {
            value: |x: &[DenseArray]| {
                let h = ArcfaceHead {
                    weight: Parameter::new("w", x[1].clone()),
                };
                Ok(DenseArray::scalar(fusion_loss(&x[0], &labels, &h, &cfg)?))
            },
            grad: |x: &[DenseArray]| {
                let h = ArcfaceHead {
                    weight: Parameter::new("w", x[1].clone()),
                };
                let l = fusion_loss_grad(&x[0], &labels, &h, &cfg)?;
                Ok(vec![l.d_embedding, l.d_weight])
            },
        };
        assert!(grad_check(&obj, &[e, head.weight.value.clone()], 1e-5).unwrap() < 1e-5);
    }
}
