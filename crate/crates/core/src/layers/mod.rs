//! Building blocks of the baseline networks.

pub mod activation;
pub mod conv;
pub mod init;
pub mod linear;
pub mod loss;
pub mod optim;
pub mod pool;

pub use activation::{dropout, elu, sigmoid};
pub use conv::{conv3d, Conv3dSpec};
pub use init::he_init;
pub use linear::linear;
pub use loss::bce_loss;
pub use optim::{adam_step, OptimState};
pub use pool::{maxpool3d, PoolSpec};
