//! Dense linear algebra, layer primitives, optimizers and random streams.

mod gradcheck;
mod matrix;
mod ops;
mod optim;
mod rng;

pub use gradcheck::{finite_difference_gradient, relative_error};
pub use matrix::{Matrix, Real};
pub use ops::{
    affine, affine_backward, log_sum_exp, relu, relu_backward, softmax_cross_entropy,
    softmax_rows,
};
#[allow(unused_imports)]
pub(crate) use ops::{check_labels, softmax_in_place};
pub use optim::{
    OptimizerConfig, OptimizerKind, OptimizerState, DEFAULT_PATIENCE, DEFAULT_PLATEAU_FACTOR,
};
pub use rng::{stream_seed, Rng};
