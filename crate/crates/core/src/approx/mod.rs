//! Function approximation: Fourier features, differentiable parametric maps,
//! optimizers and gradient checking.

pub mod fourier;
pub mod gradcheck;
pub mod map;
pub mod optim;

pub use fourier::{Featurizer, FourierFeatures};
pub use gradcheck::{finite_difference, gradient_check, max_relative_error, relative_error};
pub use map::{Activation, Layer, ParamMap, Tape};
pub use optim::{Optimizer, OptimizerKind};
