use super::array::DenseArray;
use crate::error::{Error, Result};

/// A scalar-valued function of several arrays together with its analytic gradient.
pub trait Objective {
    /// Must return a single-element array.
    fn evaluate(&self, inputs: &[DenseArray]) -> Result<DenseArray>;

    /// One gradient array per input, shaped like that input.
    fn gradient(&self, inputs: &[DenseArray]) -> Result<Vec<DenseArray>>;
}

/// Adapts a pair of closures into an [`Objective`].
pub struct FnObjective<F, G> {
    pub value: F,
    pub grad: G,
}

impl<F, G> Objective for FnObjective<F, G>
where
    F: Fn(&[DenseArray]) -> Result<DenseArray>,
    G: Fn(&[DenseArray]) -> Result<Vec<DenseArray>>,
{
    fn evaluate(&self, inputs: &[DenseArray]) -> Result<DenseArray> {
        (self.value)(inputs)
    }

    fn gradient(&self, inputs: &[DenseArray]) -> Result<Vec<DenseArray>> {
        (self.grad)(inputs)
    }
}

/// Location and size of the worst disagreement found by [`grad_check_detailed`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Max over all input entries of `|analytic - central difference| / max(1, |analytic|)`.
pub fn grad_check(op: &impl Objective, inputs: &[DenseArray], epsilon: f64) -> Result<f64> {
    grad_check_detailed(op, inputs, epsilon).map(|r| r.max_relative_error)
}

pub fn grad_check_detailed(
    op: &impl Objective,
    inputs: &[DenseArray],
    epsilon: f64,
) -> Result<GradCheckReport> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::Contract(format!("epsilon must be positive, got {epsilon}")));
    }
    if let Some(i) = inputs.iter().position(|x| !x.is_finite()) {
        return Err(Error::Contract(format!("input {i} has non-finite entries")));
    }
    let scalar = |x: DenseArray| -> Result<f64> {
        if x.len() != 1 {
            return Err(Error::Contract(format!(
                "objective must be scalar, got shape {:?}",
                x.shape()
            )));
        }
        Ok(x.data()[0])
    };
    scalar(op.evaluate(inputs)?)?;
    let analytic = op.gradient(inputs)?;
    if analytic.len() != inputs.len() {
        return Err(Error::Contract(format!(
            "{} gradients for {} inputs",
            analytic.len(),
            inputs.len()
        )));
    }

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        input: 0,
        index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    let mut probe = inputs.to_vec();
    for (i, grad) in analytic.iter().enumerate() {
        if grad.shape() != inputs[i].shape() {
            return Err(Error::Contract(format!(
                "gradient {i} has shape {:?}, input has {:?}",
                grad.shape(),
                inputs[i].shape()
            )));
        }
        for j in 0..inputs[i].len() {
            let base = inputs[i].data()[j];
            probe[i].data_mut()[j] = base + epsilon;
            let plus = scalar(op.evaluate(&probe)?)?;
            probe[i].data_mut()[j] = base - epsilon;
            let minus = scalar(op.evaluate(&probe)?)?;
            probe[i].data_mut()[j] = base;

            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = grad.data()[j];
            let err = (a - numeric).abs() / a.abs().max(1.0);
            if err > report.max_relative_error || err.is_nan() {
                report = GradCheckReport {
                    max_relative_error: err,
                    input: i,
                    index: j,
                    analytic: a,
                    numeric,
                };
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sum_of_squares() -> impl Objective {
        FnObjective {
            value: |x: &[DenseArray]| Ok(DenseArray::scalar(x[0].data().iter().map(|v| v * v).sum())),
            grad: |x: &[DenseArray]| Ok(vec![x[0].scale(2.0)]),
        }
    }

    #[test]
    fn sum_of_squares_passes() {
        let x = DenseArray::new([3], vec![1.0, 2.0, 3.0]).unwrap();
        let err = grad_check(&sum_of_squares(), &[x], 1e-5).unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let op = FnObjective {
            value: |x: &[DenseArray]| Ok(DenseArray::scalar(x[0].data().iter().map(|v| v * v).sum())),
            grad: |x: &[DenseArray]| Ok(vec![x[0].scale(2.2)]),
        };
        let x = DenseArray::new([2], vec![1.0, -4.0]).unwrap();
        let r = grad_check_detailed(&op, &[x], 1e-5).unwrap();
        assert!(r.max_relative_error > 0.05);
        assert_eq!(r.index, 1);
    }

    #[test]
    fn non_scalar_output_is_a_contract_error() {
        let op = FnObjective {
            value: |x: &[DenseArray]| Ok(x[0].clone()),
            grad: |x: &[DenseArray]| Ok(vec![x[0].clone()]),
        };
        let err = grad_check(&op, &[DenseArray::zeros([2])], 1e-5).unwrap_err();
        assert_eq!(err.category(), "contract");
    }
}
