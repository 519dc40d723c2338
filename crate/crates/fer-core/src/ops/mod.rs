//! Layer primitives: forward and backward for everything the model uses.
//!
//! Each op is a plain function pair. The forward of a stateful op returns a
//! cache holding exactly the intermediates its backward consumes (argmax
//! indices for pooling, normalized activations for batch norm, pre- or
//! post-activations for the nonlinearities). Reductions accumulate in f64
//! before storing at the element width.

mod activation;
mod conv;
mod linear;
mod loss;
mod norm;
mod pool;

pub use activation::{add, relu_backward, relu_forward, sigmoid_backward, sigmoid_forward};
pub use conv::{conv2d_backward, conv2d_forward, conv2d_output_dim};
pub use linear::{
    channel_scale_backward, channel_scale_forward, linear_backward, linear_forward,
};
pub use loss::{softmax_cross_entropy, softmax_cross_entropy_backward};
pub use norm::{batch_norm2d_backward, batch_norm2d_eval, batch_norm2d_train, BnCache};
pub use pool::{
    adaptive_average_pool_forward, global_average_pool_backward, global_average_pool_forward,
    max_pool2d_backward, max_pool2d_forward, MaxPoolCache,
};
