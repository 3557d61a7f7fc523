//! Dense tensors, a recording tape with reverse-mode gradients, and optimizers.

pub mod gradcheck;
pub mod optim;
pub mod tape;
pub mod tensor;


use rand::Rng;

pub use optim::{OptimizerKind, OptimizerState};
pub use tape::{Elementwise, Gradients, OpKind, Remap, Tape, EPSILON};
pub use tensor::{NodeId, SparseMatrix, Tensor};

/// Uniform initialization on `[-bound, bound]`.
pub fn uniform<R: Rng + ?Sized>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| rng.random_range(-bound..=bound))
}

/// Glorot-uniform initialization with fan-in `rows` and fan-out `cols`.
pub fn glorot<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    uniform(rows, cols, bound, rng)
}
