//! Dense arrays, parameters, randomness, optimisation and gradient verification.
//!
//! Operators in this crate carry hand-written backward passes; [`grad_check`]
//! is the contract each of them is tested against.

mod adam;
mod array;
mod checkpoint;
pub mod gemm;
mod gradcheck;
mod rng;

pub use adam::{Adam, AdamConfig};
pub use array::{DenseArray, Parameter};
pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use gradcheck::{grad_check, grad_check_detailed, FnObjective, GradCheckReport, Objective};
pub use rng::Rng;

/// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in))` initialisation.
pub fn fan_in_uniform(shape: impl Into<Vec<usize>>, fan_in: usize, rng: &mut Rng) -> DenseArray {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    DenseArray::from_fn(shape, |_| rng.uniform(-bound, bound))
}
