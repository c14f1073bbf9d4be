//! Minimal CPU neural-network substrate: a named parameter store, im2col
//! convolution with hand-written backward passes, activations and Adam.

pub mod act;
pub mod adam;
pub mod conv;
pub mod params;

pub use adam::{Adam, AdamConfig};
pub use conv::Conv2d;
pub use params::{Grads, ParamId, ParamStore};
