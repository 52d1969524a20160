//! CNN surrogate steppers for buoyancy-driven cavity flow.
//!
//! * [`autodiff`]: dense `f64` tensors with a reverse-mode tape.
//! * [`convlstm`]: convolutional LSTM cell and sequence rollout.
//! * [`nets`]: Autoencoder, UNet, UNet-Small and ConvLSTM-UNet builders.
//! * [`cfd`]: Boussinesq projection solver, dataset files and equation residuals.
//! * [`harness`]: splits, training, rollouts, error metrics, threshold horizons
//!   and residual-based switch decisions.

pub mod autodiff;
pub mod cfd;
pub mod convlstm;
pub mod error;
pub mod harness;
pub mod nets;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
