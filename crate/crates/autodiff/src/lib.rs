//! Dense reverse-mode automatic differentiation, Adam and finite-difference
//! gradient checking, generic over `f32` and `f64` scalars.

pub mod adam;
pub mod checkpoint;
pub mod ddouble;
pub mod error;
pub mod gradcheck;
pub mod scalar;
pub mod store;
pub mod tape;
pub mod tensor;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{read_checkpoint, write_checkpoint, CheckpointError, CheckpointHeader};
pub use error::TensorError;
pub use ddouble::DoubleDouble;
pub use gradcheck::{
    finite_diff_check, finite_diff_check_with_reference, relative_error, GradCheckReport, LossProgram,
};
pub use scalar::Scalar;
pub use store::{ParamId, ParamStore, Parameter};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;
pub type Tape64 = Tape<f64>;
pub type ParamStore64 = ParamStore<f64>;
