pub mod autodiff;
pub mod data;
pub mod error;
pub mod layers;
pub mod lrp;
pub mod model;
pub mod pif;
pub mod presets;
pub mod rng;
pub mod tensor;
pub mod training;

pub use autodiff::{Graph, Var};
pub use error::{Error, ErrorKind, Result};
pub use rng::Rng;
pub use tensor::{elementwise, ElementwiseOp, Tensor};
