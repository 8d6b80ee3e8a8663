pub mod autograd;
pub mod error;
pub mod io;
pub mod kernel;
pub mod linalg;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod scalar;
pub mod shift;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use rng::Rng;
pub use scalar::Real;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
